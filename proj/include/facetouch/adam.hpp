#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "facetouch/params.hpp"

namespace facetouch {

// Adam with bias correction. Moment buffers are keyed by parameter name and
// created lazily at zero on the first step that touches a parameter.
template <class T>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;

    struct Moments {
        Tensor<T> m;
        Tensor<T> v;
    };
    std::map<std::string, Moments> moments;
};

// One update over every trainable parameter, in ParamSet insertion order.
// Frozen parameters are skipped entirely: no value change, no moment decay.
// A trainable parameter missing from `grads` is a caller bug.
template <class T>
void adam_step(AdamState<T>& st, ParamSet<T>& params, const GradMap<T>& grads) {
    st.step += 1;
    const T c1 = static_cast<T>(1.0 - std::pow(st.beta1, static_cast<double>(st.step)));
    const T c2 = static_cast<T>(1.0 - std::pow(st.beta2, static_cast<double>(st.step)));
    const T b1 = static_cast<T>(st.beta1), b2 = static_cast<T>(st.beta2);
    const T lr = static_cast<T>(st.lr), eps = static_cast<T>(st.eps);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& e = params.entry(i);
        if (!e.trainable) continue;
        auto git = grads.find(e.name);
        if (git == grads.end())
            throw ContractViolation("adam_step: missing gradient for trainable parameter " + e.name);
        const Tensor<T>& g = git->second;
        if (!g.same_shape(e.value))
            throw ContractViolation("adam_step: gradient shape " + g.shape_str() +
                                    " does not match parameter " + e.name);

        auto& mom = st.moments[e.name];
        if (mom.m.data.empty()) {
            mom.m = Tensor<T>(e.value.shape);
            mom.v = Tensor<T>(e.value.shape);
        }
        for (std::size_t j = 0; j < e.value.data.size(); ++j) {
            const T gj = g.data[j];
            mom.m.data[j] = b1 * mom.m.data[j] + (T(1) - b1) * gj;
            mom.v.data[j] = b2 * mom.v.data[j] + (T(1) - b2) * gj * gj;
            const T mhat = mom.m.data[j] / c1;
            const T vhat = mom.v.data[j] / c2;
            e.value.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace facetouch
