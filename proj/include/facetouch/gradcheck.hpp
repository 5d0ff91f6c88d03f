#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "facetouch/params.hpp"
#include "facetouch/rng.hpp"
#include "facetouch/tape.hpp"

namespace facetouch {

struct GradCheckReport {
    struct ParamStat {
        std::string name;
        double max_rel_err = 0.0;
        std::size_t checked = 0;
    };
    std::vector<ParamStat> params;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool deterministic = true;
    bool pass = true;
};

// Builds a scalar loss from parameters already mounted on the tape. The
// callback must be a pure function of the parameter values: any randomness
// has to be seeded internally, or the determinism probe below will flag it.
template <class T>
using LossBuilder = std::function<Var(Tape<T>&, const BoundParams<T>&)>;

// Central-difference check of the tape gradients. Evaluates the loss twice
// to confirm bitwise-reproducible forwards, runs one backward for analytic
// gradients, then perturbs parameter elements by +/-h one at a time.
// Relative error uses a 1e-3 floor so near-zero derivative pairs are
// compared absolutely. max_per_param = 0 checks every element; otherwise a
// deterministic subsample of that size is drawn per parameter.
template <class T>
GradCheckReport grad_check(const LossBuilder<T>& build, ParamSet<T>& params, double tol,
                           double h = 1e-5, std::size_t max_per_param = 0,
                           uint64_t sample_seed = 7) {
    GradCheckReport rep;
    rep.tolerance = tol;

    auto eval = [&](bool with_grad) {
        Tape<T> tape(with_grad);
        BoundParams<T> bound = bind_params(tape, params);
        Var loss = build(tape, bound);
        if (!tape.value(loss).is_scalar())
            throw ContractViolation("grad_check loss must be scalar, got shape " +
                                    tape.value(loss).shape_str());
        return std::make_tuple(std::move(tape), bound, loss);
    };

    auto [tape, bound, loss] = eval(true);
    const T loss0 = tape.value(loss).scalar();
    {
        auto [tape2, bound2, loss2] = eval(false);
        (void)bound2;
        rep.deterministic = (tape2.value(loss2).scalar() == loss0);
    }
    tape.backward(loss);
    GradMap<T> analytic = collect_grads(tape, bound, params);

    RngState sampler(sample_seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& e = params.entry(pi);
        const std::size_t n = e.value.numel();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::size_t take = n;
        if (max_per_param > 0 && max_per_param < n) {
            for (std::size_t i = 0; i < max_per_param; ++i)
                std::swap(idx[i], idx[i + sampler.uniform_int(n - i)]);
            take = max_per_param;
        }

        GradCheckReport::ParamStat stat;
        stat.name = e.name;
        stat.checked = take;
        const Tensor<T>& ga = analytic.at(e.name);
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = idx[i];
            const T saved = e.value.data[j];
            e.value.data[j] = saved + static_cast<T>(h);
            auto [tp, bp, lp] = eval(false);
            (void)bp;
            const double fplus = static_cast<double>(tp.value(lp).scalar());
            e.value.data[j] = saved - static_cast<T>(h);
            auto [tm, bm, lm] = eval(false);
            (void)bm;
            const double fminus = static_cast<double>(tm.value(lm).scalar());
            e.value.data[j] = saved;

            const double numeric = (fplus - fminus) / (2.0 * h);
            const double an = static_cast<double>(ga.data[j]);
            const double denom = std::max({std::abs(an), std::abs(numeric), 1e-3});
            stat.max_rel_err = std::max(stat.max_rel_err, std::abs(an - numeric) / denom);
        }
        rep.max_rel_err = std::max(rep.max_rel_err, stat.max_rel_err);
        rep.params.push_back(std::move(stat));
    }

    rep.pass = rep.deterministic && rep.max_rel_err <= tol;
    return rep;
}

}  // namespace facetouch
