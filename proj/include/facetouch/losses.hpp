#pragma once

#include <vector>

#include "facetouch/tape.hpp"
#include "facetouch/tensor.hpp"

namespace facetouch {

// Eq. 3 as printed puts the 1/|P(i)| average inside the log (mean_in_log).
// log_mean_out is the reference SupCon formulation with the log inside the
// average, kept as a documented switch.
enum class SupConVariant { mean_in_log, log_mean_out };

template <class T>
struct LossGrad {
    double value = 0.0;
    Tensor<T> grad;
};

// Batch of L2-normalized projections for the contrastive loss.
template <class T>
struct EmbeddingBatch {
    Tensor<T> z;              // [N, D], rows unit norm
    std::vector<int> labels;  // N entries
    double tau = 0.05;

    // Norm tolerance is looser than the construction-side guarantee
    // (l2_normalize yields 1 +/- 1e-6) so that finite-difference probes of
    // the loss, which nudge single coordinates by ~1e-5, stay valid inputs.
    void validate(double norm_tol = 1e-3) const;
};

// Sum over anchors of -log((1/|P(i)|) sum_p exp(z_i.z_p/tau) / sum_a exp(z_i.z_a/tau)).
// Anchors with empty P(i) are skipped; gradient is w.r.t. every entry of z.
template <class T>
LossGrad<T> supcon_loss(const EmbeddingBatch<T>& batch,
                        SupConVariant variant = SupConVariant::mean_in_log);

template <class T>
Var op_supcon(Tape<T>& t, Var z, const std::vector<int>& labels, double tau,
              SupConVariant variant = SupConVariant::mean_in_log);

// Eq. 4 in the standard focal form, mean over the batch. p holds the
// predicted probability of the positive class per sample and is clamped to
// [1e-7, 1-1e-7] before the logs; outside the clamp range the gradient is 0.
template <class T>
LossGrad<T> focal_loss(const Tensor<T>& p, const std::vector<int>& y, double gamma, double alpha);

template <class T>
Var op_focal(Tape<T>& t, Var p, const std::vector<int>& y, double gamma, double alpha);

// Mean negative log-softmax of the true class; gradient w.r.t. logits.
template <class T>
LossGrad<T> cross_entropy_logits(const Tensor<T>& logits, const std::vector<int>& labels);

template <class T>
Var op_cross_entropy(Tape<T>& t, Var logits, const std::vector<int>& labels);

// Eq. 2 building block.
double smooth_l1(double d);
double smooth_l1_deriv(double d);

struct BoxParam {
    double cx = 0, cy = 0, w = 0, h = 0;
};

// SSD offset encoding of a ground-truth box against its default box:
// center deltas scaled by the default extent, log ratios for width/height.
BoxParam encode_box(const BoxParam& gt, const BoxParam& def);
BoxParam decode_box(const BoxParam& offsets, const BoxParam& def);

struct DetectionBatch {
    int num_classes = 2;          // class 0 is background
    Tensor<double> logits;        // [num_boxes, num_classes]
    std::vector<int> conf_labels; // per default box, 0 for background
    Tensor<double> loc;           // [num_boxes, 4] predicted offsets (cx,cy,w,h order)
    std::vector<BoxParam> defaults;
    struct Match {
        int box = -1;  // default box index
        int gt = -1;   // ground-truth index
    };
    std::vector<Match> matches;  // the x_ij^k = 1 entries; one gt per box
    std::vector<BoxParam> ground_truth;
    double alpha = 1.0;

    void validate() const;
};

struct DetectionLossGrad {
    double value = 0.0;
    Tensor<double> d_logits;
    Tensor<double> d_loc;
};

// Eq. 2: sum of smooth-L1 over the four offsets of every match. If d_loc is
// given it must be zero-filled [num_boxes,4] and receives the gradient.
double localization_loss(const DetectionBatch& b, Tensor<double>* d_loc = nullptr);

// Eq. 1: (L_conf + alpha * L_loc) / N with N = matches.size(); exactly 0.0
// with zero gradients when N == 0. L_conf sums softmax cross-entropy over
// every provided default box (no hard-negative mining).
DetectionLossGrad detection_loss(const DetectionBatch& b);

}  // namespace facetouch
