#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "facetouch/losses.hpp"
#include "support.hpp"

using namespace facetouch;

namespace {

// Direct transcription of Eq. 3 with no log-sum-exp rearrangement.
double supcon_brute(const Tensord& z, const std::vector<int>& labels, double tau,
                    SupConVariant variant) {
    const int n = z.dim(0), d = z.dim(1);
    auto dot = [&](int i, int j) {
        double s = 0.0;
        for (int k = 0; k < d; ++k)
            s += z.data[std::size_t(i) * d + k] * z.data[std::size_t(j) * d + k];
        return s;
    };
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double denom = 0.0;
        int npos = 0;
        for (int a = 0; a < n; ++a)
            if (a != i) denom += std::exp(dot(i, a) / tau);
        for (int p = 0; p < n; ++p)
            if (p != i && labels[p] == labels[i]) ++npos;
        if (npos == 0) continue;
        if (variant == SupConVariant::mean_in_log) {
            double num = 0.0;
            for (int p = 0; p < n; ++p)
                if (p != i && labels[p] == labels[i]) num += std::exp(dot(i, p) / tau);
            total += -std::log(num / (npos * denom));
        } else {
            double acc = 0.0;
            for (int p = 0; p < n; ++p)
                if (p != i && labels[p] == labels[i])
                    acc += -std::log(std::exp(dot(i, p) / tau) / denom);
            total += acc / npos;
        }
    }
    return total;
}

Tensord unit_rows(const std::vector<int>& shape, RngState& rng) {
    Tensord z = ftest::random_tensor(shape, rng);
    const int n = shape[0], d = shape[1];
    for (int i = 0; i < n; ++i) {
        double ss = 0.0;
        for (int k = 0; k < d; ++k) ss += z.data[std::size_t(i) * d + k] * z.data[std::size_t(i) * d + k];
        const double inv = 1.0 / std::sqrt(ss);
        for (int k = 0; k < d; ++k) z.data[std::size_t(i) * d + k] *= inv;
    }
    return z;
}

}  // namespace

TEST_CASE("supcon identical pair of two is exactly zero") {
    Tensord z({2, 2}, {1.0, 0.0, 1.0, 0.0});
    EmbeddingBatch<double> b{z, {3, 3}, 0.7};
    auto lg = supcon_loss(b);
    CHECK(lg.value == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("supcon matches the scripted hand evaluation") {
    Tensord z({4, 2}, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0});
    EmbeddingBatch<double> b{z, {0, 0, 1, 1}, 0.05};
    auto lg = supcon_loss(b, SupConVariant::mean_in_log);
    CHECK(std::abs(lg.value - 1.6489228945521628675e-8) < 1e-12);
}

TEST_CASE("supcon matches the frozen six-row batch in both variants") {
    Tensord z({6, 3}, {-0.30257081478237496, 0.17480797577410667, 0.9369594834610988,
                       -0.7526364751406683, -0.44591825948199454, 0.4844535500420848,
                       -0.5650925766843014, -0.24879904135449074, 0.7866189781573945,
                       0.7711273248479514, -0.5888597314632306, -0.24208854895243206,
                       -0.8610217612375297, -0.2991587707628519, 0.41127309242288373,
                       -0.10989406459166269, 0.9850052704008461, -0.13299590914791196});
    EmbeddingBatch<double> b{z, {0, 0, 0, 1, 1, 1}, 0.2};
    CHECK(supcon_loss(b, SupConVariant::mean_in_log).value ==
          doctest::Approx(15.32160615706835605).epsilon(1e-13));
    CHECK(supcon_loss(b, SupConVariant::log_mean_out).value ==
          doctest::Approx(16.520182404005319891).epsilon(1e-13));
}

TEST_CASE("supcon agrees with a brute-force evaluation for batches up to 16") {
    RngState rng(41);
    for (int n : {2, 3, 5, 8, 12, 16}) {
        for (int rep = 0; rep < 4; ++rep) {
            Tensord z = unit_rows({n, 4}, rng);
            std::vector<int> labels = ftest::random_labels(n, 2, rng);
            bool has_pair = false;
            for (int i = 0; i < n && !has_pair; ++i)
                for (int j = i + 1; j < n; ++j)
                    if (labels[i] == labels[j]) {
                        has_pair = true;
                        break;
                    }
            if (!has_pair) labels[0] = labels[1];
            EmbeddingBatch<double> b{z, labels, 0.05};
            for (auto v : {SupConVariant::mean_in_log, SupConVariant::log_mean_out}) {
                CAPTURE(n);
                const double got = supcon_loss(b, v).value;
                const double want = supcon_brute(z, labels, 0.05, v);
                CHECK(std::abs(got - want) <= 1e-9 * std::max(1.0, std::abs(want)));
            }
        }
    }
}

TEST_CASE("supcon is invariant under joint permutation of rows and labels") {
    RngState rng(42);
    Tensord z = unit_rows({6, 3}, rng);
    std::vector<int> labels = {0, 1, 0, 1, 0, 1};
    EmbeddingBatch<double> b{z, labels, 0.1};
    const double base = supcon_loss(b).value;

    const std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    Tensord zp({6, 3});
    std::vector<int> lp(6);
    for (int i = 0; i < 6; ++i) {
        lp[i] = labels[perm[i]];
        for (int k = 0; k < 3; ++k) zp.data[std::size_t(i) * 3 + k] = z.data[std::size_t(perm[i]) * 3 + k];
    }
    EmbeddingBatch<double> bp{zp, lp, 0.1};
    CHECK(supcon_loss(bp).value == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("supcon decreases as a positive pair rotates together") {
    // two-anchor positive pair on the unit circle plus fixed negatives
    auto batch_at = [](double theta) {
        Tensord z({4, 2}, {std::cos(theta), std::sin(theta), std::cos(-theta), std::sin(-theta),
                           -1.0, 0.0, 0.0, -1.0});
        return EmbeddingBatch<double>{z, {0, 0, 1, 2}, 0.1};
    };
    double prev = supcon_loss(batch_at(1.2)).value;
    for (double theta : {0.9, 0.6, 0.3, 0.1}) {
        const double cur = supcon_loss(batch_at(theta)).value;
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("supcon excludes anchors without positives and rejects hopeless batches") {
    RngState rng(43);
    Tensord z = unit_rows({3, 3}, rng);
    // anchor 2 has no partner; the total must equal the two-anchor restriction
    EmbeddingBatch<double> b{z, {0, 0, 1}, 0.2};
    const double with_orphan = supcon_loss(b).value;

    const double direct = supcon_brute(z, {0, 0, 1}, 0.2, SupConVariant::mean_in_log);
    CHECK(with_orphan == doctest::Approx(direct).epsilon(1e-12));

    EmbeddingBatch<double> hopeless{z, {0, 1, 2}, 0.2};
    CHECK_THROWS_WITH_AS(supcon_loss(hopeless), "no positive pairs in batch", ContractViolation);
}

TEST_CASE("supcon rejects bad temperatures, tiny batches and non-unit rows") {
    Tensord z({2, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK_THROWS_AS(supcon_loss(EmbeddingBatch<double>{z, {0, 0}, 0.0}), ContractViolation);
    CHECK_THROWS_AS(supcon_loss(EmbeddingBatch<double>{z, {0, 0}, -0.5}), ContractViolation);
    Tensord one({1, 2}, {1.0, 0.0});
    CHECK_THROWS_AS(supcon_loss(EmbeddingBatch<double>{one, {0}, 0.1}), ContractViolation);
    Tensord big({2, 2}, {2.0, 0.0, 0.0, 1.0});
    CHECK_THROWS_AS(supcon_loss(EmbeddingBatch<double>{big, {0, 0}, 0.1}), ContractViolation);
}

TEST_CASE("focal loss matches the hand-evaluated examples") {
    Tensord p({1}, {0.5});
    CHECK(focal_loss(p, {1}, 0.0, 1.0).value ==
          doctest::Approx(0.69314718055994530942).epsilon(1e-12));

    Tensord p8({1}, {0.8});
    CHECK(focal_loss(p8, {1}, 2.0, 1.0).value ==
          doctest::Approx(0.0089257420525683902307).epsilon(1e-12));

    Tensord hi({1}, {1.0 - 1e-12});
    CHECK(focal_loss(hi, {1}, 2.0, 1.0).value < 1e-13);
}

TEST_CASE("focal with gamma 0 and alpha 1 is binary cross-entropy on a random grid") {
    RngState rng(44);
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 1 + static_cast<int>(rng.uniform_int(8));
        Tensord p({n});
        for (auto& v : p.data) v = rng.uniform(0.01, 0.99);
        auto y = ftest::random_labels(n, 2, rng);
        double bce = 0.0;
        for (int i = 0; i < n; ++i)
            bce += y[i] ? -std::log(p.data[i]) : -std::log(1.0 - p.data[i]);
        bce /= n;
        CHECK(std::abs(focal_loss(p, y, 0.0, 1.0).value - bce) <= 1e-9);
    }
}

TEST_CASE("focal clamps boundary probabilities to finite losses with zero gradient") {
    Tensord p({2}, {0.0, 1.0});
    auto lg = focal_loss(p, {1, 0}, 2.0, 1.0);
    CHECK(std::isfinite(lg.value));
    CHECK(lg.value > 0.0);
    CHECK(lg.grad.data[0] == 0.0);
    CHECK(lg.grad.data[1] == 0.0);
}

TEST_CASE("focal rejects bad arguments") {
    Tensord p({2}, {0.5, 0.5});
    CHECK_THROWS_AS(focal_loss(p, {1, 0}, -0.1, 1.0), ContractViolation);
    CHECK_THROWS_AS(focal_loss(p, {1, 0}, 2.0, 0.0), ContractViolation);
    CHECK_THROWS_AS(focal_loss(p, {1, 2}, 2.0, 1.0), ContractViolation);
    CHECK_THROWS_AS(focal_loss(p, {1}, 2.0, 1.0), ContractViolation);
}

TEST_CASE("cross entropy handles the uniform case, the confident limit and an oracle") {
    Tensord u({1, 2}, {0.3, 0.3});
    CHECK(cross_entropy_logits(u, {0}).value ==
          doctest::Approx(0.69314718055994530942).epsilon(1e-12));

    Tensord conf({1, 2}, {40.0, -40.0});
    CHECK(cross_entropy_logits(conf, {0}).value < 1e-9);

    RngState rng(45);
    Tensord logits = ftest::random_tensor({8, 2}, rng, -3.0, 3.0);
    auto labels = ftest::random_labels(8, 2, rng);
    double want = 0.0;
    for (int i = 0; i < 8; ++i) {
        const double a = logits.data[i * 2], b = logits.data[i * 2 + 1];
        const double l = labels[i] == 0 ? a : b;
        want += std::log(std::exp(a) + std::exp(b)) - l;
    }
    want /= 8;
    CHECK(cross_entropy_logits(logits, labels).value == doctest::Approx(want).epsilon(1e-12));

    CHECK_THROWS_AS(cross_entropy_logits(logits, {0, 1, 2, 0, 0, 0, 0, 0}), ContractViolation);
}

TEST_CASE("loss gradients match central differences") {
    for (uint64_t seed : {7u, 8u}) {
        for (const auto& r : ftest::loss_grad_battery(seed, 1e-6)) {
            CAPTURE(r.name);
            CHECK(r.report.deterministic);
            CHECK(r.report.max_rel_err < 1e-6);
        }
        CHECK(ftest::detection_grad_fd(seed) < 1e-6);
    }
}

TEST_CASE("smooth l1 values and smoothness at the knee") {
    CHECK(smooth_l1(0.0) == 0.0);
    CHECK(smooth_l1(0.5) == doctest::Approx(0.125).epsilon(1e-15));
    CHECK(smooth_l1(2.0) == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(smooth_l1(-2.0) == doctest::Approx(1.5).epsilon(1e-15));

    const double h = 1e-7;
    for (double knee : {1.0, -1.0}) {
        const double left = (smooth_l1(knee) - smooth_l1(knee - h)) / h;
        const double right = (smooth_l1(knee + h) - smooth_l1(knee)) / h;
        CHECK(std::abs(left - right) < 1e-6);
        CHECK(smooth_l1_deriv(knee) == doctest::Approx(knee).epsilon(1e-15));
    }
}

TEST_CASE("box encoding round-trips and is zero for a perfect match") {
    BoxParam def{0.4, 0.5, 0.2, 0.3};
    BoxParam enc = encode_box(def, def);
    CHECK(enc.cx == 0.0);
    CHECK(enc.cy == 0.0);
    CHECK(enc.w == 0.0);
    CHECK(enc.h == 0.0);

    BoxParam gt{0.35, 0.62, 0.25, 0.18};
    BoxParam back = decode_box(encode_box(gt, def), def);
    CHECK(back.cx == doctest::Approx(gt.cx).epsilon(1e-12));
    CHECK(back.cy == doctest::Approx(gt.cy).epsilon(1e-12));
    CHECK(back.w == doctest::Approx(gt.w).epsilon(1e-12));
    CHECK(back.h == doctest::Approx(gt.h).epsilon(1e-12));

    CHECK_THROWS_AS(encode_box(BoxParam{0.1, 0.1, 0.0, 0.1}, def), ContractViolation);
}

namespace {

DetectionBatch simple_batch(int matched) {
    DetectionBatch b;
    b.num_classes = 2;
    b.logits = Tensord({2, 2}, {0.4, -0.6, 1.2, 0.1});
    b.loc = Tensord({2, 4}, {0.0, 0.0, 0.0, 0.0, 0.1, -0.2, 0.05, 0.0});
    b.conf_labels = {1, 0};
    b.defaults = {BoxParam{0.3, 0.3, 0.2, 0.2}, BoxParam{0.7, 0.7, 0.2, 0.2}};
    b.ground_truth = {BoxParam{0.32, 0.28, 0.22, 0.19}};
    if (matched) b.matches = {{0, 0}};
    return b;
}

}  // namespace

TEST_CASE("localization loss perfect match and the half-offset example") {
    DetectionBatch b = simple_batch(1);
    BoxParam enc = encode_box(b.ground_truth[0], b.defaults[0]);
    b.loc.data[0] = enc.cx;
    b.loc.data[1] = enc.cy;
    b.loc.data[2] = enc.w;
    b.loc.data[3] = enc.h;
    CHECK(localization_loss(b) == 0.0);

    for (int k = 0; k < 4; ++k) b.loc.data[k] += 0.5;
    CHECK(localization_loss(b) == doctest::Approx(0.5).epsilon(1e-12));

    b.matches.clear();
    CHECK(localization_loss(b) == 0.0);
}

TEST_CASE("detection loss is exactly zero with no matches") {
    DetectionBatch b = simple_batch(0);
    b.logits = Tensord({2, 2}, {5.0, -3.0, 2.0, 7.0});
    auto lg = detection_loss(b);
    CHECK(lg.value == 0.0);
    for (double v : lg.d_logits.data) CHECK(v == 0.0);
    for (double v : lg.d_loc.data) CHECK(v == 0.0);
}

TEST_CASE("detection loss is the documented weighted sum") {
    DetectionBatch b = simple_batch(1);
    auto conf = cross_entropy_logits(b.logits, b.conf_labels);
    const double conf_sum = conf.value * b.logits.dim(0);
    const double loc = localization_loss(b);
    auto lg = detection_loss(b);
    CHECK(lg.value == doctest::Approx((conf_sum + loc) / 1.0).epsilon(1e-12));

    b.alpha = 0.0;
    auto noloc = detection_loss(b);
    CHECK(noloc.value == doctest::Approx(conf_sum).epsilon(1e-12));
    Tensord moved = b.loc;
    for (auto& v : b.loc.data) v += 0.3;
    CHECK(detection_loss(b).value == doctest::Approx(noloc.value).epsilon(1e-12));
}

TEST_CASE("detection batch validation rejects inconsistent inputs") {
    DetectionBatch b = simple_batch(1);
    b.alpha = -0.1;
    CHECK_THROWS_AS(detection_loss(b), ContractViolation);

    b = simple_batch(1);
    b.matches.push_back({0, 0});
    CHECK_THROWS_AS(detection_loss(b), ContractViolation);

    b = simple_batch(1);
    b.matches[0].gt = 5;
    CHECK_THROWS_AS(detection_loss(b), ContractViolation);

    b = simple_batch(1);
    b.conf_labels[0] = 2;
    CHECK_THROWS_AS(detection_loss(b), ContractViolation);
}
