#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "facetouch/kernels.hpp"
#include "facetouch/params.hpp"
#include "facetouch/rng.hpp"
#include "facetouch/tape.hpp"

namespace facetouch {

enum class Mode { train, eval };

namespace ops {

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

}  // namespace detail

// x [B,C,H,W], w [CO,CI,KH,KW] (odd KH/KW), b [CO]. Same padding, stride 1,
// zero fill. Runs as im2col + GEMM per image; backward rebuilds the column
// buffer instead of keeping it alive on the tape.
template <class T>
Var conv2d(Tape<T>& t, Var xv, Var wv, Var bv) {
    const Tensor<T>& x = t.value(xv);
    const Tensor<T>& w = t.value(wv);
    const Tensor<T>& b = t.value(bv);
    detail::require(x.rank() == 4, "conv2d input must be [B,C,H,W], got " + x.shape_str());
    detail::require(w.rank() == 4, "conv2d weight must be [CO,CI,KH,KW], got " + w.shape_str());
    detail::require(b.rank() == 1 && b.dim(0) == w.dim(0),
                    "conv2d bias must be [CO], got " + b.shape_str());
    detail::require(w.dim(1) == x.dim(1), "conv2d channel mismatch: input " + x.shape_str() +
                                              " vs weight " + w.shape_str());
    detail::require(w.dim(2) % 2 == 1 && w.dim(3) % 2 == 1,
                    "conv2d kernel extents must be odd for same padding");

    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int CO = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const int K2 = C * KH * KW, HW = H * W;

    Tensor<T> y({B, CO, H, W});
    std::vector<T> col(static_cast<std::size_t>(K2) * HW);
    for (int i = 0; i < B; ++i) {
        const T* xi = x.data.data() + static_cast<std::size_t>(i) * C * HW;
        T* yi = y.data.data() + static_cast<std::size_t>(i) * CO * HW;
        kernels::im2col(xi, C, H, W, KH, KW, col.data());
        kernels::gemm_nn(w.data.data(), col.data(), yi, CO, K2, HW);
        kernels::add_bias_plane(yi, b.data.data(), 1, CO, HW);
    }

    return t.emit(std::move(y), [=](Tape<T>& tp, Var out) {
        const Tensor<T>& dy = tp.grad(out);
        const Tensor<T>& xc = tp.value(xv);
        const Tensor<T>& wc = tp.value(wv);
        Tensor<T>& gx = tp.grad(xv);
        Tensor<T>& gw = tp.grad(wv);
        Tensor<T>& gb = tp.grad(bv);

        std::vector<T> colb(static_cast<std::size_t>(K2) * HW);
        std::vector<T> dw_scratch(static_cast<std::size_t>(CO) * K2);
        std::vector<T> dcol(static_cast<std::size_t>(K2) * HW);
        for (int i = 0; i < B; ++i) {
            const T* xi = xc.data.data() + static_cast<std::size_t>(i) * C * HW;
            const T* dyi = dy.data.data() + static_cast<std::size_t>(i) * CO * HW;
            T* gxi = gx.data.data() + static_cast<std::size_t>(i) * C * HW;

            kernels::im2col(xi, C, H, W, KH, KW, colb.data());
            kernels::gemm_nt(dyi, colb.data(), dw_scratch.data(), CO, HW, K2);
            kernels::axpy(T(1), dw_scratch.data(), gw.data.data(), gw.numel());

            for (int o = 0; o < CO; ++o) {
                T s = 0;
                const T* p = dyi + static_cast<std::size_t>(o) * HW;
                for (int j = 0; j < HW; ++j) s += p[j];
                gb.data[o] += s;
            }

            kernels::gemm_tn(wc.data.data(), dyi, dcol.data(), K2, CO, HW);
            kernels::col2im_add(dcol.data(), C, H, W, KH, KW, gxi);
        }
    });
}

// x [B,I], w [O,I], b [O] -> y [B,O].
template <class T>
Var dense(Tape<T>& t, Var xv, Var wv, Var bv) {
    const Tensor<T>& x = t.value(xv);
    const Tensor<T>& w = t.value(wv);
    const Tensor<T>& b = t.value(bv);
    detail::require(x.rank() == 2, "dense input must be [B,I], got " + x.shape_str());
    detail::require(w.rank() == 2, "dense weight must be [O,I], got " + w.shape_str());
    detail::require(w.dim(1) == x.dim(1), "dense dimension mismatch: input " + x.shape_str() +
                                              " vs weight " + w.shape_str());
    detail::require(b.rank() == 1 && b.dim(0) == w.dim(0),
                    "dense bias must be [O], got " + b.shape_str());

    const int B = x.dim(0), I = x.dim(1), O = w.dim(0);
    Tensor<T> y({B, O});
    kernels::gemm_nt(x.data.data(), w.data.data(), y.data.data(), B, I, O);
    for (int i = 0; i < B; ++i)
        for (int o = 0; o < O; ++o) y.data[static_cast<std::size_t>(i) * O + o] += b.data[o];

    return t.emit(std::move(y), [=](Tape<T>& tp, Var out) {
        const Tensor<T>& dy = tp.grad(out);
        const Tensor<T>& xc = tp.value(xv);
        const Tensor<T>& wc = tp.value(wv);
        Tensor<T>& gx = tp.grad(xv);
        Tensor<T>& gw = tp.grad(wv);
        Tensor<T>& gb = tp.grad(bv);

        std::vector<T> scratch(static_cast<std::size_t>(B) * I);
        kernels::gemm_nn(dy.data.data(), wc.data.data(), scratch.data(), B, O, I);
        kernels::axpy(T(1), scratch.data(), gx.data.data(), gx.numel());

        scratch.assign(static_cast<std::size_t>(O) * I, T(0));
        kernels::gemm_tn(dy.data.data(), xc.data.data(), scratch.data(), O, B, I);
        kernels::axpy(T(1), scratch.data(), gw.data.data(), gw.numel());

        for (int i = 0; i < B; ++i)
            for (int o = 0; o < O; ++o) gb.data[o] += dy.data[static_cast<std::size_t>(i) * O + o];
    });
}

template <class T>
Var relu(Tape<T>& t, Var xv) {
    const Tensor<T>& x = t.value(xv);
    Tensor<T> y(x.shape);
    kernels::relu_fwd(x.data.data(), y.data.data(), x.numel());
    return t.emit(std::move(y), [=](Tape<T>& tp, Var out) {
        const Tensor<T>& dy = tp.grad(out);
        const Tensor<T>& xc = tp.value(xv);
        Tensor<T>& gx = tp.grad(xv);
        kernels::relu_bwd(xc.data.data(), dy.data.data(), gx.data.data(), xc.numel());
    });
}

// 2x2 max pooling, stride 2; spatial extents must be even. Ties go to the
// first element in row-major window order.
template <class T>
Var maxpool2(Tape<T>& t, Var xv) {
    const Tensor<T>& x = t.value(xv);
    detail::require(x.rank() == 4, "maxpool2 input must be [B,C,H,W], got " + x.shape_str());
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    detail::require(H % 2 == 0 && W % 2 == 0,
                    "maxpool2 needs even spatial extents, got " + x.shape_str());

    Tensor<T> y({B, C, H / 2, W / 2});
    std::vector<int32_t> argmax(y.numel());
    kernels::maxpool2_fwd(x.data.data(), B * C, H, W, y.data.data(), argmax.data());

    return t.emit(std::move(y), [=, am = std::move(argmax)](Tape<T>& tp, Var out) {
        const Tensor<T>& dy = tp.grad(out);
        Tensor<T>& gx = tp.grad(xv);
        kernels::maxpool2_bwd(dy.data.data(), am.data(), static_cast<std::int64_t>(am.size()),
                              gx.data.data());
    });
}

// [B,C,H,W] -> [B,C], mean over each spatial plane.
template <class T>
Var global_avg_pool(Tape<T>& t, Var xv) {
    const Tensor<T>& x = t.value(xv);
    detail::require(x.rank() == 4, "global_avg_pool input must be [B,C,H,W], got " + x.shape_str());
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);

    Tensor<T> y({B, C});
    for (int i = 0; i < B * C; ++i) {
        const T* p = x.data.data() + static_cast<std::size_t>(i) * HW;
        T s = 0;
        for (int j = 0; j < HW; ++j) s += p[j];
        y.data[i] = s / static_cast<T>(HW);
    }
    return t.emit(std::move(y), [=](Tape<T>& tp, Var out) {
        const Tensor<T>& dy = tp.grad(out);
        Tensor<T>& gx = tp.grad(xv);
        const T inv = T(1) / static_cast<T>(HW);
        for (int i = 0; i < B * C; ++i) {
            T* p = gx.data.data() + static_cast<std::size_t>(i) * HW;
            const T g = dy.data[i] * inv;
            for (int j = 0; j < HW; ++j) p[j] += g;
        }
    });
}

// Inverted dropout. Train mode zeroes elements with probability `rate` and
// scales survivors by 1/(1-rate); eval mode is the identity and records
// nothing. The mask is drawn in row-major element order from `rng`.
template <class T>
Var dropout(Tape<T>& t, Var xv, double rate, Mode mode, RngState* rng) {
    detail::require(rate >= 0.0 && rate < 1.0,
                    "dropout rate must lie in [0,1), got " + std::to_string(rate));
    if (mode == Mode::eval || rate == 0.0) return xv;
    detail::require(rng != nullptr, "dropout in train mode needs an RNG");

    const Tensor<T>& x = t.value(xv);
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> mask(x.shape);
    for (std::size_t i = 0; i < mask.numel(); ++i)
        mask.data[i] = rng->uniform() < rate ? T(0) : scale;

    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] = x.data[i] * mask.data[i];

    return t.emit(std::move(y), [=, m = std::move(mask)](Tape<T>& tp, Var out) {
        const Tensor<T>& dy = tp.grad(out);
        Tensor<T>& gx = tp.grad(xv);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] += dy.data[i] * m.data[i];
    });
}

// Row-wise softmax over [B,C].
template <class T>
Var softmax(Tape<T>& t, Var xv) {
    const Tensor<T>& x = t.value(xv);
    detail::require(x.rank() == 2, "softmax input must be [B,C], got " + x.shape_str());
    const int B = x.dim(0), C = x.dim(1);

    Tensor<T> y(x.shape);
    kernels::softmax_rows(x.data.data(), y.data.data(), B, C);

    return t.emit(std::move(y), [=](Tape<T>& tp, Var out) {
        const Tensor<T>& dy = tp.grad(out);
        const Tensor<T>& yc = tp.value(out);
        Tensor<T>& gx = tp.grad(xv);
        for (int i = 0; i < B; ++i) {
            const T* yi = yc.data.data() + static_cast<std::size_t>(i) * C;
            const T* di = dy.data.data() + static_cast<std::size_t>(i) * C;
            T* gi = gx.data.data() + static_cast<std::size_t>(i) * C;
            T dot = 0;
            for (int j = 0; j < C; ++j) dot += di[j] * yi[j];
            for (int j = 0; j < C; ++j) gi[j] += yi[j] * (di[j] - dot);
        }
    });
}

// Row-wise L2 normalization of [B,D] with norm = sqrt(sum(x^2) + eps), so a
// zero row maps to zero instead of dividing by zero.
template <class T>
Var l2_normalize(Tape<T>& t, Var xv, double eps = 1e-12) {
    const Tensor<T>& x = t.value(xv);
    detail::require(x.rank() == 2, "l2_normalize input must be [B,D], got " + x.shape_str());
    const int B = x.dim(0), D = x.dim(1);

    Tensor<T> y(x.shape);
    std::vector<T> norms(B);
    kernels::l2norm_rows(x.data.data(), y.data.data(), norms.data(), B, D, static_cast<T>(eps));

    return t.emit(std::move(y), [=, ns = std::move(norms)](Tape<T>& tp, Var out) {
        const Tensor<T>& dy = tp.grad(out);
        const Tensor<T>& yc = tp.value(out);
        Tensor<T>& gx = tp.grad(xv);
        for (int i = 0; i < B; ++i) {
            const T* yi = yc.data.data() + static_cast<std::size_t>(i) * D;
            const T* di = dy.data.data() + static_cast<std::size_t>(i) * D;
            T* gi = gx.data.data() + static_cast<std::size_t>(i) * D;
            T dot = 0;
            for (int j = 0; j < D; ++j) dot += di[j] * yi[j];
            const T inv = T(1) / ns[i];
            for (int j = 0; j < D; ++j) gi[j] += (di[j] - yi[j] * dot) * inv;
        }
    });
}

// Scalar mean over all elements.
template <class T>
Var mean_all(Tape<T>& t, Var xv) {
    const Tensor<T>& x = t.value(xv);
    detail::require(x.numel() > 0, "mean_all over empty tensor");
    T s = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x.data[i];
    const std::size_t n = x.numel();
    Tensor<T> y({1}, {s / static_cast<T>(n)});
    return t.emit(std::move(y), [=](Tape<T>& tp, Var out) {
        const T g = tp.grad(out).data[0] / static_cast<T>(n);
        Tensor<T>& gx = tp.grad(xv);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] += g;
    });
}

// Picks column j of [B,C] -> [B].
template <class T>
Var column(Tape<T>& t, Var xv, int j) {
    const Tensor<T>& x = t.value(xv);
    detail::require(x.rank() == 2, "column input must be [B,C], got " + x.shape_str());
    detail::require(j >= 0 && j < x.dim(1), "column index out of range");
    const int B = x.dim(0), C = x.dim(1);
    Tensor<T> y({B});
    for (int i = 0; i < B; ++i) y.data[i] = x.data[static_cast<std::size_t>(i) * C + j];
    return t.emit(std::move(y), [=](Tape<T>& tp, Var out) {
        const Tensor<T>& dy = tp.grad(out);
        Tensor<T>& gx = tp.grad(xv);
        for (int i = 0; i < B; ++i) gx.data[static_cast<std::size_t>(i) * C + j] += dy.data[i];
    });
}

// Flattens [B,...] to [B,rest] without moving data.
template <class T>
Var flatten2(Tape<T>& t, Var xv) {
    const Tensor<T>& x = t.value(xv);
    detail::require(x.rank() >= 2, "flatten2 needs rank >= 2, got " + x.shape_str());
    const int B = x.dim(0);
    const int rest = static_cast<int>(x.numel()) / B;
    Tensor<T> y = t.value(xv).reshaped({B, rest});
    return t.emit(std::move(y), [=](Tape<T>& tp, Var out) {
        const Tensor<T>& dy = tp.grad(out);
        Tensor<T>& gx = tp.grad(xv);
        kernels::axpy(T(1), dy.data.data(), gx.data.data(), gx.numel());
    });
}

enum class LayerKind { conv2d, dense, relu, maxpool2, global_avg_pool, dropout, softmax, l2_normalize };

template <class T>
struct LayerArgs {
    Var weight{};
    Var bias{};
    double rate = 0.5;
    double eps = 1e-12;
    RngState* rng = nullptr;
};

// Uniform entry point used by the gradient-check battery.
template <class T>
Var forward_layer(Tape<T>& t, LayerKind kind, Var x, const LayerArgs<T>& a, Mode mode) {
    switch (kind) {
        case LayerKind::conv2d: return conv2d(t, x, a.weight, a.bias);
        case LayerKind::dense: return dense(t, x, a.weight, a.bias);
        case LayerKind::relu: return relu(t, x);
        case LayerKind::maxpool2: return maxpool2(t, x);
        case LayerKind::global_avg_pool: return global_avg_pool(t, x);
        case LayerKind::dropout: return dropout(t, x, a.rate, mode, a.rng);
        case LayerKind::softmax: return softmax(t, x);
        case LayerKind::l2_normalize: return l2_normalize(t, x, a.eps);
    }
    throw ContractViolation("unknown layer kind");
}

}  // namespace ops
}  // namespace facetouch
