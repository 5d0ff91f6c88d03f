#include "facetouch/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "facetouch/kernels.hpp"

namespace facetouch {

Image::Image(int width, int height, int channels, float fill) : w(width), h(height), c(channels) {
    if (width <= 0 || height <= 0 || (channels != 1 && channels != 3))
        throw ContractViolation("image dimensions must be positive with 1 or 3 channels");
    px.assign(static_cast<std::size_t>(w) * h * c, fill);
}

namespace {

struct Cursor {
    const std::uint8_t* data;
    std::size_t len;
    std::size_t pos = 0;

    bool done() const { return pos >= len; }
    std::uint8_t peek() const { return data[pos]; }

    void skip_space_and_comments() {
        while (!done()) {
            const std::uint8_t b = peek();
            if (b == '#') {
                while (!done() && peek() != '\n') ++pos;
            } else if (b == ' ' || b == '\t' || b == '\r' || b == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }

    long parse_int(const char* what) {
        skip_space_and_comments();
        if (done()) throw ParseError(std::string("missing ") + what, pos);
        if (peek() < '0' || peek() > '9')
            throw ParseError(std::string("expected digit in ") + what, pos);
        long v = 0;
        while (!done() && peek() >= '0' && peek() <= '9') {
            v = v * 10 + (peek() - '0');
            if (v > 1000000) throw ParseError(std::string(what) + " out of range", pos);
            ++pos;
        }
        return v;
    }
};

}  // namespace

Image decode_netpbm(const std::uint8_t* data, std::size_t len) {
    Cursor cur{data, len};
    if (len < 2) throw ParseError("file too short for a netpbm magic", 0);
    int channels = 0;
    if (data[0] == 'P' && data[1] == '5')
        channels = 1;
    else if (data[0] == 'P' && data[1] == '6')
        channels = 3;
    else
        throw ParseError("expected P5 or P6 magic", 0);
    cur.pos = 2;
    if (!cur.done() && !(cur.peek() == ' ' || cur.peek() == '\t' || cur.peek() == '\r' ||
                         cur.peek() == '\n' || cur.peek() == '#'))
        throw ParseError("expected whitespace after magic", cur.pos);

    const long w = cur.parse_int("width");
    const long h = cur.parse_int("height");
    if (w <= 0 || h <= 0) throw ParseError("image extents must be positive", cur.pos);
    cur.skip_space_and_comments();
    const std::size_t maxval_at = cur.pos;
    const long maxval = cur.parse_int("maxval");
    if (maxval != 255) throw ParseError("only maxval 255 is supported", maxval_at);

    if (cur.done()) throw ParseError("missing whitespace before pixel payload", cur.pos);
    const std::uint8_t sep = cur.peek();
    if (!(sep == ' ' || sep == '\t' || sep == '\r' || sep == '\n'))
        throw ParseError("expected single whitespace before pixel payload", cur.pos);
    ++cur.pos;

    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (len - cur.pos < need) throw ParseError("truncated pixel payload", len);
    if (len - cur.pos > need) throw ParseError("trailing bytes after pixel payload", cur.pos + need);

    Image img(static_cast<int>(w), static_cast<int>(h), channels);
    for (std::size_t i = 0; i < need; ++i)
        img.px[i] = static_cast<float>(data[cur.pos + i]) / 255.0f;
    return img;
}

std::vector<std::uint8_t> encode_netpbm(const Image& img) {
    if (img.w <= 0 || img.h <= 0 || (img.c != 1 && img.c != 3))
        throw ContractViolation("cannot encode an empty or oddly shaped image");
    std::string header = (img.c == 1 ? "P5\n" : "P6\n") + std::to_string(img.w) + " " +
                         std::to_string(img.h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + img.px.size());
    for (float v : img.px) {
        const float clamped = std::min(1.0f, std::max(0.0f, v));
        out.push_back(static_cast<std::uint8_t>(std::lround(clamped * 255.0f)));
    }
    return out;
}

Image read_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode_netpbm(bytes.data(), bytes.size());
}

void write_image(const std::string& path, const Image& img) {
    const std::vector<std::uint8_t> bytes = encode_netpbm(img);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path);
}

Image to_gray(const Image& img) {
    if (img.c == 1) return img;
    Image out(img.w, img.h, 1);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            out.at(x, y) = (img.at(x, y, 0) + img.at(x, y, 1) + img.at(x, y, 2)) / 3.0f;
    return out;
}

Image to_rgb(const Image& img) {
    if (img.c == 3) return img;
    Image out(img.w, img.h, 3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < 3; ++ch) out.at(x, y, ch) = img.at(x, y);
    return out;
}

Image resize(const Image& img, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0) throw ContractViolation("resize extents must be positive");
    if (out_w == img.w && out_h == img.h) return img;
    // planar per channel through the shared bilinear kernel
    Image out(out_w, out_h, img.c);
    std::vector<float> src(static_cast<std::size_t>(img.w) * img.h);
    std::vector<float> dst(static_cast<std::size_t>(out_w) * out_h);
    for (int ch = 0; ch < img.c; ++ch) {
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) src[static_cast<std::size_t>(y) * img.w + x] = img.at(x, y, ch);
        kernels::bilinear_resize(src.data(), 1, img.h, img.w, dst.data(), out_h, out_w);
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) out.at(x, y, ch) = dst[static_cast<std::size_t>(y) * out_w + x];
    }
    return out;
}

Image crop_resize(const Image& img, const NormBox& box, int out_w, int out_h) {
    if (box.w <= 0 || box.h <= 0) throw ContractViolation("crop box extents must be positive");
    const double x0d = (box.cx - box.w / 2) * img.w;
    const double y0d = (box.cy - box.h / 2) * img.h;
    const double x1d = (box.cx + box.w / 2) * img.w;
    const double y1d = (box.cy + box.h / 2) * img.h;
    int x0 = std::clamp(static_cast<int>(std::floor(x0d)), 0, img.w - 1);
    int y0 = std::clamp(static_cast<int>(std::floor(y0d)), 0, img.h - 1);
    int x1 = std::clamp(static_cast<int>(std::ceil(x1d)), x0 + 1, img.w);
    int y1 = std::clamp(static_cast<int>(std::ceil(y1d)), y0 + 1, img.h);

    Image sub(x1 - x0, y1 - y0, img.c);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            for (int ch = 0; ch < img.c; ++ch) sub.at(x - x0, y - y0, ch) = img.at(x, y, ch);
    return resize(sub, out_w, out_h);
}

}  // namespace facetouch
