#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "facetouch/errors.hpp"
#include "facetouch/image.hpp"
#include "facetouch/rng.hpp"

using namespace facetouch;

namespace {

Image random_image(int w, int h, int c, uint64_t seed) {
    Image img(w, h, c);
    RngState rng(seed);
    for (float& v : img.px) v = float(rng.uniform());
    return img;
}

std::string enc(const Image& img) {
    const std::vector<std::uint8_t> v = encode_netpbm(img);
    return std::string(v.begin(), v.end());
}

Image dec(const std::string& s) {
    return decode_netpbm(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

double max_abs_diff(const Image& a, const Image& b) {
    REQUIRE(a.same_shape(b));
    double m = 0;
    for (size_t i = 0; i < a.px.size(); ++i) m = std::max(m, double(std::fabs(a.px[i] - b.px[i])));
    return m;
}

}  // namespace

TEST_CASE("all-zero 4x4 images round-trip exactly") {
    for (int c : {1, 3}) {
        Image img(4, 4, c, 0.0f);
        const std::string bytes = enc(img);
        const size_t header = bytes.find("255\n") + 4;
        CHECK(bytes.size() - header == size_t(16 * c));
        for (size_t i = header; i < bytes.size(); ++i) CHECK(bytes[i] == '\0');
        const Image back = dec(bytes);
        CHECK(back.w == 4);
        CHECK(back.h == 4);
        CHECK(back.c == c);
        CHECK(max_abs_diff(img, back) == 0.0);
    }
}

TEST_CASE("random image round-trip within quantization bound") {
    for (int c : {1, 3}) {
        const Image img = random_image(17, 9, c, 42 + uint64_t(c));
        const std::string bytes = enc(img);
        const Image back = dec(bytes);
        CHECK(max_abs_diff(img, back) <= 1.0 / 255.0 + 1e-7);
        // re-encoding quantized values is exact
        const std::string bytes2 = enc(back);
        CHECK(bytes == bytes2);
    }
}

TEST_CASE("header comments and whitespace are tolerated") {
    const std::string data = "P5 # magic\n# a comment line\n  3\t2 # dims\n # more\n 255\n" +
                             std::string("\x00\x40\x80\xc0\xff\x10", 6);
    const Image img = dec(data);
    CHECK(img.w == 3);
    CHECK(img.h == 2);
    CHECK(img.c == 1);
    CHECK(img.at(1, 0, 0) == doctest::Approx(64.0 / 255.0));
}

TEST_CASE("malformed headers are rejected with byte offsets") {
    const std::string pixels(12, '\x7f');

    SUBCASE("bad magic") {
        const std::string data = "P4\n2 2\n255\n" + pixels;
        CHECK_THROWS_AS(dec(data), ParseError);
        try {
            dec(data);
        } catch (const ParseError& e) {
            CHECK(e.position == 0);
        }
    }
    SUBCASE("non-numeric width") {
        const std::string data = "P5\nxx 2\n255\n" + pixels;
        CHECK_THROWS_AS(dec(data), ParseError);
    }
    SUBCASE("maxval not 255") {
        const std::string data = "P5\n2 2\n65535\n" + pixels;
        try {
            dec(data);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.position == 7);
        }
    }
    SUBCASE("truncated payload") {
        const std::string data = std::string("P6\n4 4\n255\n") + "abc";
        try {
            dec(data);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("truncated") != std::string::npos);
            CHECK(e.position == data.size());
        }
    }
    SUBCASE("trailing bytes") {
        std::string data = "P5\n2 2\n255\n";
        data += std::string(4, '\x01');
        data += "extra";
        try {
            dec(data);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("trailing") != std::string::npos);
            CHECK(e.position == 11 + 4);
        }
    }
    SUBCASE("empty input") {
        CHECK_THROWS_AS(dec(std::string()), ParseError);
    }
    SUBCASE("zero dimension") {
        const std::string data = "P5\n0 2\n255\n";
        CHECK_THROWS_AS(dec(data), ParseError);
    }
}

TEST_CASE("fuzzed malformed files never crash and always carry a position") {
    const Image img = random_image(6, 5, 1, 99);
    const std::string good = enc(img);
    RngState rng(1234);
    int rejected = 0, attempts = 0;

    auto expect_reject = [&](const std::string& data) {
        ++attempts;
        try {
            (void)dec(data);
        } catch (const ParseError& e) {
            CHECK(e.position <= data.size());
            CHECK(std::string(e.what()).find("(at ") != std::string::npos);
            ++rejected;
        }
    };

    // truncations at every prefix length
    for (size_t len = 0; len < good.size(); ++len) expect_reject(good.substr(0, len));
    // appended garbage
    for (int k = 1; k <= 8; ++k) expect_reject(good + std::string(size_t(k), 'Z'));
    // corrupted header bytes
    for (int k = 0; k < 60; ++k) {
        std::string bad = good;
        const size_t pos = rng.uniform_int(10);
        bad[pos] = char('A' + int(rng.uniform_int(26)));
        if (bad == good) continue;
        ++attempts;
        try {
            (void)dec(bad);
            // a corrupted digit can still parse as a different size only if
            // payload length matches; with fixed length it must throw
            FAIL_CHECK("corrupted header accepted");
        } catch (const ParseError& e) {
            CHECK(e.position <= bad.size());
            ++rejected;
        }
    }
    CHECK(attempts >= 100);
    CHECK(rejected == attempts);
}

TEST_CASE("file round-trip through disk") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "ft_image_test";
    fs::create_directories(dir);

    const Image gray = random_image(12, 7, 1, 7);
    const Image rgb = random_image(5, 8, 3, 8);
    write_image((dir / "a.pgm").string(), gray);
    write_image((dir / "b.ppm").string(), rgb);
    CHECK(max_abs_diff(gray, read_image((dir / "a.pgm").string())) <= 1.0 / 255.0 + 1e-7);
    CHECK(max_abs_diff(rgb, read_image((dir / "b.ppm").string())) <= 1.0 / 255.0 + 1e-7);

    CHECK_THROWS_AS(read_image((dir / "missing.pgm").string()), IoError);
    fs::remove_all(dir);
}

TEST_CASE("gray/rgb conversions") {
    Image rgb(2, 1, 3);
    rgb.at(0, 0, 0) = 0.9f;
    rgb.at(0, 0, 1) = 0.3f;
    rgb.at(0, 0, 2) = 0.3f;
    rgb.at(1, 0, 0) = 0.0f;
    rgb.at(1, 0, 1) = 0.6f;
    rgb.at(1, 0, 2) = 0.0f;
    const Image g = to_gray(rgb);
    CHECK(g.c == 1);
    CHECK(g.at(0, 0, 0) == doctest::Approx(0.5));
    CHECK(g.at(1, 0, 0) == doctest::Approx(0.2));

    const Image back = to_rgb(g);
    CHECK(back.c == 3);
    CHECK(back.at(0, 0, 0) == doctest::Approx(0.5));
    CHECK(back.at(0, 0, 2) == doctest::Approx(0.5));

    const Image g2 = to_gray(g);  // identity on grayscale
    CHECK(max_abs_diff(g, g2) == 0.0);
}

TEST_CASE("resize identity and averaging behavior") {
    const Image img = random_image(10, 6, 1, 5);
    const Image same = resize(img, 10, 6);
    CHECK(max_abs_diff(img, same) == 0.0);

    Image flat(8, 8, 3, 0.42f);
    const Image small = resize(flat, 3, 5);
    CHECK(small.w == 3);
    CHECK(small.h == 5);
    for (float v : small.px) CHECK(v == doctest::Approx(0.42f));
}

TEST_CASE("crop_resize extracts the requested region") {
    // left half dark, right half bright
    Image img(16, 16, 1, 0.0f);
    for (int y = 0; y < 16; ++y)
        for (int x = 8; x < 16; ++x) img.at(x, y, 0) = 1.0f;

    NormBox left{0.25f, 0.5f, 0.5f, 1.0f};
    NormBox right{0.75f, 0.5f, 0.5f, 1.0f};
    const Image lc = crop_resize(img, left, 4, 4);
    const Image rc = crop_resize(img, right, 4, 4);
    double lmean = 0, rmean = 0;
    for (float v : lc.px) lmean += v;
    for (float v : rc.px) rmean += v;
    lmean /= double(lc.px.size());
    rmean /= double(rc.px.size());
    CHECK(lmean < 0.1);
    CHECK(rmean > 0.9);

    // out-of-frame boxes are clamped, never crash
    NormBox wild{1.5f, -0.2f, 3.0f, 0.4f};
    const Image clamped = crop_resize(img, wild, 8, 8);
    CHECK(clamped.w == 8);
    CHECK(clamped.h == 8);

    CHECK_THROWS_AS(crop_resize(img, NormBox{0.5f, 0.5f, 0.0f, 0.5f}, 4, 4), ContractViolation);
}
