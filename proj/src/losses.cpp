#include "facetouch/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace facetouch {

namespace {

// log(sum(exp(v))) over a subset of similarities, max-subtracted.
double lse(const std::vector<double>& s, const std::vector<int>& idx) {
    double m = -std::numeric_limits<double>::infinity();
    for (int j : idx) m = std::max(m, s[j]);
    double acc = 0.0;
    for (int j : idx) acc += std::exp(s[j] - m);
    return m + std::log(acc);
}

}  // namespace

template <class T>
void EmbeddingBatch<T>::validate(double norm_tol) const {
    if (tau <= 0.0) throw ContractViolation("supcon temperature must be positive");
    if (z.rank() != 2) throw ContractViolation("embedding batch must be [N,D], got " + z.shape_str());
    const int n = z.dim(0);
    if (n < 2) throw ContractViolation("supcon needs at least 2 embeddings");
    if (static_cast<int>(labels.size()) != n)
        throw ContractViolation("supcon labels size does not match embedding rows");
    if (!z.all_finite()) throw ContractViolation("supcon embeddings must be finite");
    const int d = z.dim(1);
    for (int i = 0; i < n; ++i) {
        double ss = 0.0;
        for (int j = 0; j < d; ++j) {
            const double v = static_cast<double>(z.data[static_cast<std::size_t>(i) * d + j]);
            ss += v * v;
        }
        if (std::abs(std::sqrt(ss) - 1.0) > norm_tol)
            throw ContractViolation("supcon embedding row " + std::to_string(i) +
                                    " is not unit-norm");
    }
}

template <class T>
LossGrad<T> supcon_loss(const EmbeddingBatch<T>& batch, SupConVariant variant) {
    batch.validate();
    const int n = batch.z.dim(0), d = batch.z.dim(1);
    const double inv_tau = 1.0 / batch.tau;

    // all similarities in double regardless of T
    std::vector<double> zrow(static_cast<std::size_t>(n) * d);
    for (std::size_t i = 0; i < zrow.size(); ++i) zrow[i] = static_cast<double>(batch.z.data[i]);
    std::vector<double> s(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double dot = 0.0;
            for (int k = 0; k < d; ++k)
                dot += zrow[static_cast<std::size_t>(i) * d + k] *
                       zrow[static_cast<std::size_t>(j) * d + k];
            s[static_cast<std::size_t>(i) * n + j] = dot * inv_tau;
        }

    double total = 0.0;
    int used_anchors = 0;
    std::vector<double> ds(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<int> pos, all;
    for (int i = 0; i < n; ++i) {
        pos.clear();
        all.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            all.push_back(i * n + j);
            if (batch.labels[j] == batch.labels[i]) pos.push_back(i * n + j);
        }
        if (pos.empty()) continue;
        ++used_anchors;

        const double lse_all = lse(s, all);
        if (variant == SupConVariant::mean_in_log) {
            const double lse_pos = lse(s, pos);
            total += lse_all - lse_pos + std::log(static_cast<double>(pos.size()));
            // d/ds_ij = softmax_all(j) - [j in P] softmax_pos(j)
            for (int idx : all) ds[idx] += std::exp(s[idx] - lse_all);
            for (int idx : pos) ds[idx] -= std::exp(s[idx] - lse_pos);
        } else {
            const double invp = 1.0 / static_cast<double>(pos.size());
            for (int idx : pos) total -= (s[idx] - lse_all) * invp;
            for (int idx : all) ds[idx] += std::exp(s[idx] - lse_all);
            for (int idx : pos) ds[idx] -= invp;
        }
    }
    if (used_anchors == 0) throw ContractViolation("no positive pairs in batch");

    LossGrad<T> out;
    out.value = total;
    out.grad = Tensor<T>(batch.z.shape);
    // s_ij = z_i . z_j / tau appears once per ordered pair
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double g = ds[static_cast<std::size_t>(i) * n + j] * inv_tau;
            if (g == 0.0) continue;
            for (int k = 0; k < d; ++k) {
                out.grad.data[static_cast<std::size_t>(i) * d + k] +=
                    static_cast<T>(g * zrow[static_cast<std::size_t>(j) * d + k]);
                out.grad.data[static_cast<std::size_t>(j) * d + k] +=
                    static_cast<T>(g * zrow[static_cast<std::size_t>(i) * d + k]);
            }
        }
    return out;
}

template <class T>
Var op_supcon(Tape<T>& t, Var z, const std::vector<int>& labels, double tau,
              SupConVariant variant) {
    EmbeddingBatch<T> batch{t.value(z), labels, tau};
    LossGrad<T> lg = supcon_loss(batch, variant);
    Tensor<T> v({1}, {static_cast<T>(lg.value)});
    return t.emit(std::move(v), [z, g = std::move(lg.grad)](Tape<T>& tp, Var out) {
        const T up = tp.grad(out).data[0];
        Tensor<T>& gz = tp.grad(z);
        for (std::size_t i = 0; i < gz.numel(); ++i) gz.data[i] += up * g.data[i];
    });
}

template <class T>
LossGrad<T> focal_loss(const Tensor<T>& p, const std::vector<int>& y, double gamma, double alpha) {
    if (gamma < 0.0) throw ContractViolation("focal gamma must be >= 0");
    if (alpha <= 0.0) throw ContractViolation("focal alpha must be > 0");
    if (p.rank() != 1) throw ContractViolation("focal probabilities must be [N], got " + p.shape_str());
    const int n = p.dim(0);
    if (n == 0) throw ContractViolation("focal loss over empty batch");
    if (static_cast<int>(y.size()) != n)
        throw ContractViolation("focal labels size does not match probabilities");
    if (!p.all_finite()) throw ContractViolation("focal probabilities must be finite");

    constexpr double kEps = 1e-7;
    double total = 0.0;
    LossGrad<T> out;
    out.grad = Tensor<T>(p.shape);
    for (int i = 0; i < n; ++i) {
        if (y[i] != 0 && y[i] != 1) throw ContractViolation("focal labels must be binary");
        const double raw = static_cast<double>(p.data[i]);
        const double pc = std::clamp(raw, kEps, 1.0 - kEps);
        double dldp = 0.0;
        if (y[i] == 1) {
            const double q = 1.0 - pc;
            total += -alpha * std::pow(q, gamma) * std::log(pc);
            dldp = -alpha * (std::pow(q, gamma) / pc -
                             (gamma > 0.0 ? gamma * std::pow(q, gamma - 1.0) * std::log(pc) : 0.0));
        } else {
            const double q = 1.0 - pc;
            total += -std::pow(pc, gamma) * std::log(q);
            dldp = (gamma > 0.0 ? -gamma * std::pow(pc, gamma - 1.0) * std::log(q) : 0.0) +
                   std::pow(pc, gamma) / q;
        }
        // clamped samples sit on a constant piece of the loss
        out.grad.data[i] = (raw > kEps && raw < 1.0 - kEps)
                               ? static_cast<T>(dldp / static_cast<double>(n))
                               : T(0);
    }
    out.value = total / static_cast<double>(n);
    return out;
}

template <class T>
Var op_focal(Tape<T>& t, Var p, const std::vector<int>& y, double gamma, double alpha) {
    LossGrad<T> lg = focal_loss(t.value(p), y, gamma, alpha);
    Tensor<T> v({1}, {static_cast<T>(lg.value)});
    return t.emit(std::move(v), [p, g = std::move(lg.grad)](Tape<T>& tp, Var out) {
        const T up = tp.grad(out).data[0];
        Tensor<T>& gp = tp.grad(p);
        for (std::size_t i = 0; i < gp.numel(); ++i) gp.data[i] += up * g.data[i];
    });
}

template <class T>
LossGrad<T> cross_entropy_logits(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ContractViolation("cross_entropy logits must be [N,C], got " +
                                                    logits.shape_str());
    const int n = logits.dim(0), c = logits.dim(1);
    if (c < 2) throw ContractViolation("cross_entropy needs at least 2 classes");
    if (n == 0) throw ContractViolation("cross_entropy over empty batch");
    if (static_cast<int>(labels.size()) != n)
        throw ContractViolation("cross_entropy labels size does not match logits");
    if (!logits.all_finite()) throw ContractViolation("cross_entropy logits must be finite");

    LossGrad<T> out;
    out.grad = Tensor<T>(logits.shape);
    double total = 0.0;
    const double invn = 1.0 / static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= c)
            throw ContractViolation("cross_entropy label out of range: " + std::to_string(labels[i]));
        const T* row = logits.data.data() + static_cast<std::size_t>(i) * c;
        double m = static_cast<double>(row[0]);
        for (int j = 1; j < c; ++j) m = std::max(m, static_cast<double>(row[j]));
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += std::exp(static_cast<double>(row[j]) - m);
        const double lsev = m + std::log(acc);
        total += lsev - static_cast<double>(row[labels[i]]);
        for (int j = 0; j < c; ++j) {
            const double soft = std::exp(static_cast<double>(row[j]) - lsev);
            out.grad.data[static_cast<std::size_t>(i) * c + j] =
                static_cast<T>((soft - (j == labels[i] ? 1.0 : 0.0)) * invn);
        }
    }
    out.value = total * invn;
    return out;
}

template <class T>
Var op_cross_entropy(Tape<T>& t, Var logits, const std::vector<int>& labels) {
    LossGrad<T> lg = cross_entropy_logits(t.value(logits), labels);
    Tensor<T> v({1}, {static_cast<T>(lg.value)});
    return t.emit(std::move(v), [logits, g = std::move(lg.grad)](Tape<T>& tp, Var out) {
        const T up = tp.grad(out).data[0];
        Tensor<T>& gl = tp.grad(logits);
        for (std::size_t i = 0; i < gl.numel(); ++i) gl.data[i] += up * g.data[i];
    });
}

double smooth_l1(double d) {
    const double a = std::abs(d);
    return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_deriv(double d) {
    if (d > 1.0) return 1.0;
    if (d < -1.0) return -1.0;
    return d;
}

BoxParam encode_box(const BoxParam& gt, const BoxParam& def) {
    if (gt.w <= 0 || gt.h <= 0 || def.w <= 0 || def.h <= 0)
        throw ContractViolation("box width/height must be positive");
    return BoxParam{(gt.cx - def.cx) / def.w, (gt.cy - def.cy) / def.h, std::log(gt.w / def.w),
                    std::log(gt.h / def.h)};
}

BoxParam decode_box(const BoxParam& offsets, const BoxParam& def) {
    if (def.w <= 0 || def.h <= 0) throw ContractViolation("box width/height must be positive");
    return BoxParam{def.cx + offsets.cx * def.w, def.cy + offsets.cy * def.h,
                    def.w * std::exp(offsets.w), def.h * std::exp(offsets.h)};
}

void DetectionBatch::validate() const {
    if (num_classes < 2) throw ContractViolation("detection batch needs at least 2 classes");
    if (alpha < 0.0) throw ContractViolation("detection alpha must be >= 0");
    const int nb = logits.rank() == 2 ? logits.dim(0) : -1;
    if (nb < 0 || logits.dim(1) != num_classes)
        throw ContractViolation("detection logits must be [num_boxes,num_classes], got " +
                                logits.shape_str());
    if (!(loc.rank() == 2 && loc.dim(0) == nb && loc.dim(1) == 4))
        throw ContractViolation("detection loc must be [num_boxes,4], got " + loc.shape_str());
    if (static_cast<int>(conf_labels.size()) != nb)
        throw ContractViolation("detection conf_labels size mismatch");
    if (static_cast<int>(defaults.size()) != nb)
        throw ContractViolation("detection defaults size mismatch");
    for (int l : conf_labels)
        if (l < 0 || l >= num_classes)
            throw ContractViolation("detection class label out of range: " + std::to_string(l));
    std::vector<int> seen(nb, 0);
    for (const auto& m : matches) {
        if (m.box < 0 || m.box >= nb)
            throw ContractViolation("matched default box index out of range");
        if (m.gt < 0 || m.gt >= static_cast<int>(ground_truth.size()))
            throw ContractViolation("positive box has no ground-truth partner");
        if (seen[m.box]++)
            throw ContractViolation("default box matched to more than one ground truth");
    }
    for (const auto& d : defaults)
        if (d.w <= 0 || d.h <= 0) throw ContractViolation("default box extents must be positive");
    for (const auto& g : ground_truth)
        if (g.w <= 0 || g.h <= 0) throw ContractViolation("ground-truth extents must be positive");
}

double localization_loss(const DetectionBatch& b, Tensor<double>* d_loc) {
    b.validate();
    double total = 0.0;
    for (const auto& m : b.matches) {
        const BoxParam enc = encode_box(b.ground_truth[m.gt], b.defaults[m.box]);
        const double target[4] = {enc.cx, enc.cy, enc.w, enc.h};
        for (int k = 0; k < 4; ++k) {
            const double diff = b.loc.data[static_cast<std::size_t>(m.box) * 4 + k] - target[k];
            total += smooth_l1(diff);
            if (d_loc)
                d_loc->data[static_cast<std::size_t>(m.box) * 4 + k] += smooth_l1_deriv(diff);
        }
    }
    return total;
}

DetectionLossGrad detection_loss(const DetectionBatch& b) {
    b.validate();
    DetectionLossGrad out;
    out.d_logits = Tensor<double>(b.logits.shape);
    out.d_loc = Tensor<double>(b.loc.shape);
    const int n_matched = static_cast<int>(b.matches.size());
    if (n_matched == 0) {
        out.value = 0.0;
        return out;
    }

    const double loc = localization_loss(b, &out.d_loc);
    LossGrad<double> conf = cross_entropy_logits(b.logits, b.conf_labels);
    // cross_entropy_logits averages; Eq. 1 wants the plain sum over boxes
    const int nb = b.logits.dim(0);
    const double conf_sum = conf.value * nb;

    const double invn = 1.0 / static_cast<double>(n_matched);
    out.value = (conf_sum + b.alpha * loc) * invn;
    for (std::size_t i = 0; i < out.d_logits.numel(); ++i)
        out.d_logits.data[i] = conf.grad.data[i] * nb * invn;
    for (std::size_t i = 0; i < out.d_loc.numel(); ++i) out.d_loc.data[i] *= b.alpha * invn;
    return out;
}

#define FACETOUCH_INSTANTIATE_LOSSES(T)                                                        \
    template struct EmbeddingBatch<T>;                                                         \
    template LossGrad<T> supcon_loss<T>(const EmbeddingBatch<T>&, SupConVariant);              \
    template Var op_supcon<T>(Tape<T>&, Var, const std::vector<int>&, double, SupConVariant);  \
    template LossGrad<T> focal_loss<T>(const Tensor<T>&, const std::vector<int>&, double,      \
                                       double);                                               \
    template Var op_focal<T>(Tape<T>&, Var, const std::vector<int>&, double, double);          \
    template LossGrad<T> cross_entropy_logits<T>(const Tensor<T>&, const std::vector<int>&);   \
    template Var op_cross_entropy<T>(Tape<T>&, Var, const std::vector<int>&);

FACETOUCH_INSTANTIATE_LOSSES(float)
FACETOUCH_INSTANTIATE_LOSSES(double)
#undef FACETOUCH_INSTANTIATE_LOSSES

}  // namespace facetouch
