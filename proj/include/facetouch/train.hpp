#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facetouch/augment.hpp"
#include "facetouch/dataset.hpp"
#include "facetouch/losses.hpp"
#include "facetouch/metrics.hpp"
#include "facetouch/model.hpp"

namespace facetouch {

enum class Regime { sl, scl };
enum class SlLoss { ce, focal };

struct TrainConfig {
    Regime regime = Regime::scl;
    int epochs = 50;
    int batch = 256;
    double lr = 0.001;
    double tau = 0.05;
    SlLoss sl_loss = SlLoss::ce;
    double focal_gamma = 2.0;
    double focal_alpha = 1.0;  // 1 = no class weighting
    SupConVariant supcon_variant = SupConVariant::mean_in_log;
    uint64_t seed = 7;
    double train_frac = 0.8, test_frac = 0.2;
    AugmentSpec augment;
    EncoderConfig encoder;

    void validate() const;
    std::string loss_variant_name() const;
};

struct LossPoint {
    int epoch = 0;
    int step = 0;
    double loss = 0.0;
};

struct EvalResult {
    MetricReport report;
    std::vector<int> labels;
    std::vector<double> scores;  // p(touch)
};

template <class T>
struct TrainResult {
    FaceTouchModel<T> model;
    std::vector<LossPoint> curve;         // SL curve, or SCL stage-2 curve
    std::vector<LossPoint> stage1_curve;  // SCL only
    int skipped_batches = 0;
    int total_batches = 0;
    EvalResult train_eval, test_eval;
};

// Resized [B,1,S,S] batch from dataset images at the given sample ids.
template <class T>
Tensor<T> make_batch(const CropDataset& ds, const std::vector<int>& ids, int input_size);

template <class T>
EvalResult evaluate(const FaceTouchModel<T>& model, const CropDataset& ds, int split);

// Stage 1: encoder + projection head under Eq. 3 on [originals ‖ views].
template <class T>
std::vector<LossPoint> train_scl_stage1(FaceTouchModel<T>& model, const CropDataset& ds,
                                        const TrainConfig& cfg, int* skipped = nullptr,
                                        int* total = nullptr);

// Stage 2: encoder + projection frozen, fresh classifier head, cross-entropy.
template <class T>
std::vector<LossPoint> train_scl_stage2(FaceTouchModel<T>& model, const CropDataset& ds,
                                        const TrainConfig& cfg);

// Single-stage supervised training with cross-entropy or focal loss.
template <class T>
std::vector<LossPoint> train_sl(FaceTouchModel<T>& model, const CropDataset& ds,
                                const TrainConfig& cfg);

// Full regime per cfg.regime: builds the model, trains, evaluates both splits.
template <class T>
TrainResult<T> run_training(const CropDataset& ds, const TrainConfig& cfg);

std::string loss_curve_to_csv(const std::vector<LossPoint>& curve);

}  // namespace facetouch
