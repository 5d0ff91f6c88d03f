#pragma once

// Canned finite-difference batteries: one gradient check per layer kind and
// per loss. The gradcheck subcommand and the test suite both run these.

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "facetouch/gradcheck.hpp"
#include "facetouch/losses.hpp"
#include "facetouch/ops.hpp"
#include "facetouch/rng.hpp"

namespace facetouch {

inline Tensord random_tensor(const std::vector<int>& shape, RngState& rng, double lo = -1.0,
                             double hi = 1.0) {
    Tensord t(shape);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Scalar head shared by the layer battery: flattens the layer output, feeds
// it through a fixed (non-parameter) dense leaf so every element gets a
// distinct cotangent, then averages.
inline Var scalar_head(Tape<double>& t, Var y, uint64_t seed) {
    Var flat = ops::flatten2(t, y);
    const int I = t.value(flat).dim(1);
    RngState hr(seed ^ 0xABCDEF);
    Var hw = t.leaf(random_tensor({1, I}, hr));
    Var hb = t.leaf(random_tensor({1}, hr));
    Var z = ops::dense(t, flat, hw, hb);
    return ops::mean_all(t, z);
}

struct BatteryResult {
    std::string name;
    GradCheckReport report;
};

// Central-difference checks for every layer kind, treating the layer input
// as a parameter alongside any weights. Returns one report per layer.
inline std::vector<BatteryResult> layer_grad_battery(uint64_t seed, double tol) {
    std::vector<BatteryResult> out;
    RngState rng(seed);

    {
        ParamSet<double> ps;
        ps.add("x", random_tensor({2, 3, 6, 6}, rng));
        ps.add("w", random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5));
        ps.add("b", random_tensor({4}, rng, -0.2, 0.2));
        auto build = [seed](Tape<double>& t, const BoundParams<double>& p) {
            Var y = ops::conv2d(t, p.at("x"), p.at("w"), p.at("b"));
            return scalar_head(t, y, seed);
        };
        out.push_back({"conv2d", grad_check<double>(build, ps, tol)});
    }
    {
        ParamSet<double> ps;
        ps.add("x", random_tensor({3, 5}, rng));
        ps.add("w", random_tensor({4, 5}, rng, -0.5, 0.5));
        ps.add("b", random_tensor({4}, rng, -0.2, 0.2));
        auto build = [seed](Tape<double>& t, const BoundParams<double>& p) {
            Var y = ops::dense(t, p.at("x"), p.at("w"), p.at("b"));
            return scalar_head(t, y, seed);
        };
        out.push_back({"dense", grad_check<double>(build, ps, tol)});
    }
    {
        // keep inputs away from the kink at zero so the central difference
        // stays on one side
        Tensord x({3, 7});
        for (auto& v : x.data) {
            const double m = rng.uniform(0.2, 1.0);
            v = rng.bernoulli(0.5) ? m : -m;
        }
        ParamSet<double> ps;
        ps.add("x", x);
        auto build = [seed](Tape<double>& t, const BoundParams<double>& p) {
            return scalar_head(t, ops::relu(t, p.at("x")), seed);
        };
        out.push_back({"relu", grad_check<double>(build, ps, tol)});
    }
    {
        Tensord x = random_tensor({2, 2, 4, 4}, rng, -10.0, 10.0);
        ParamSet<double> ps;
        ps.add("x", x);
        auto build = [seed](Tape<double>& t, const BoundParams<double>& p) {
            return scalar_head(t, ops::maxpool2(t, p.at("x")), seed);
        };
        out.push_back({"maxpool2", grad_check<double>(build, ps, tol)});
    }
    {
        ParamSet<double> ps;
        ps.add("x", random_tensor({2, 3, 4, 4}, rng));
        auto build = [seed](Tape<double>& t, const BoundParams<double>& p) {
            return scalar_head(t, ops::global_avg_pool(t, p.at("x")), seed);
        };
        out.push_back({"global_avg_pool", grad_check<double>(build, ps, tol)});
    }
    {
        ParamSet<double> ps;
        ps.add("x", random_tensor({3, 8}, rng));
        auto build = [seed](Tape<double>& t, const BoundParams<double>& p) {
            RngState mask_rng(seed ^ 0x5EEDD);  // rebuilt per forward: same mask every call
            Var y = ops::dropout(t, p.at("x"), 0.3, Mode::train, &mask_rng);
            return scalar_head(t, y, seed);
        };
        out.push_back({"dropout", grad_check<double>(build, ps, tol)});
    }
    {
        ParamSet<double> ps;
        ps.add("x", random_tensor({3, 4}, rng, -2.0, 2.0));
        auto build = [seed](Tape<double>& t, const BoundParams<double>& p) {
            return scalar_head(t, ops::softmax(t, p.at("x")), seed);
        };
        out.push_back({"softmax", grad_check<double>(build, ps, tol)});
    }
    {
        Tensord x = random_tensor({3, 5}, rng);
        x.data[0] += 2.0;  // keep rows clear of zero norm
        ParamSet<double> ps;
        ps.add("x", x);
        auto build = [seed](Tape<double>& t, const BoundParams<double>& p) {
            return scalar_head(t, ops::l2_normalize(t, p.at("x")), seed);
        };
        out.push_back({"l2_normalize", grad_check<double>(build, ps, tol)});
    }
    return out;
}

inline std::vector<int> random_labels(int n, int classes, RngState& rng) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(classes)));
    return y;
}

// Finite-difference checks for the tape-facing losses (Eq. 3, Eq. 4 and
// cross-entropy). The contrastive input goes through l2_normalize so the
// checked parameter is the raw pre-normalization embedding.
inline std::vector<BatteryResult> loss_grad_battery(uint64_t seed, double tol) {
    std::vector<BatteryResult> out;
    RngState rng(seed ^ 0x10557);

    {
        ParamSet<double> ps;
        ps.add("logits", random_tensor({5, 3}, rng, -2.0, 2.0));
        auto labels = random_labels(5, 3, rng);
        auto build = [labels](Tape<double>& t, const BoundParams<double>& p) {
            return op_cross_entropy(t, p.at("logits"), labels);
        };
        out.push_back({"cross_entropy", grad_check<double>(build, ps, tol)});
    }
    for (auto [gamma, alpha, name] :
         {std::tuple{2.0, 0.75, "focal_g2"}, {0.0, 1.0, "focal_bce"}, {1.5, 1.0, "focal_g15"}}) {
        ParamSet<double> ps;
        ps.add("p", random_tensor({6}, rng, 0.15, 0.85));
        auto y = random_labels(6, 2, rng);
        const double g = gamma, a = alpha;
        auto build = [y, g, a](Tape<double>& t, const BoundParams<double>& p) {
            return op_focal(t, p.at("p"), y, g, a);
        };
        out.push_back({name, grad_check<double>(build, ps, tol)});
    }
    for (auto [variant, name] : {std::pair{SupConVariant::mean_in_log, "supcon_printed"},
                                 {SupConVariant::log_mean_out, "supcon_logout"}}) {
        ParamSet<double> ps;
        ps.add("z", random_tensor({6, 3}, rng, -1.0, 1.0));
        std::vector<int> labels = {0, 0, 0, 1, 1, 1};
        const SupConVariant v = variant;
        auto build = [labels, v](Tape<double>& t, const BoundParams<double>& p) {
            Var z = ops::l2_normalize(t, p.at("z"));
            return op_supcon(t, z, labels, 0.2, v);
        };
        out.push_back({name, grad_check<double>(build, ps, tol)});
    }
    return out;
}

// Central-difference probe of the standalone detection loss gradients
// (logits and box offsets). Returns the worst relative error.
inline double detection_grad_fd(uint64_t seed) {
    RngState rng(seed ^ 0xDE7EC7);
    DetectionBatch b;
    b.num_classes = 3;
    const int nb = 5;
    b.logits = random_tensor({nb, 3}, rng, -1.5, 1.5);
    b.loc = random_tensor({nb, 4}, rng, -0.6, 0.6);
    b.conf_labels = {1, 0, 2, 0, 1};
    for (int i = 0; i < nb; ++i)
        b.defaults.push_back(BoxParam{0.2 + 0.1 * i, 0.3 + 0.1 * i, 0.2, 0.25});
    b.ground_truth = {BoxParam{0.25, 0.35, 0.18, 0.3}, BoxParam{0.45, 0.55, 0.22, 0.2}};
    b.matches = {{0, 0}, {2, 1}};

    DetectionLossGrad an = detection_loss(b);
    const double h = 1e-6;
    double worst = 0.0;
    auto probe = [&](Tensor<double>& field, const Tensor<double>& grad) {
        for (std::size_t i = 0; i < field.numel(); ++i) {
            const double saved = field.data[i];
            field.data[i] = saved + h;
            const double fp = detection_loss(b).value;
            field.data[i] = saved - h;
            const double fm = detection_loss(b).value;
            field.data[i] = saved;
            const double num = (fp - fm) / (2.0 * h);
            const double den = std::max({std::abs(num), std::abs(grad.data[i]), 1e-3});
            worst = std::max(worst, std::abs(num - grad.data[i]) / den);
        }
    };
    probe(b.logits, an.d_logits);
    probe(b.loc, an.d_loc);
    return worst;
}

}  // namespace facetouch
