#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "facetouch/image.hpp"
#include "facetouch/ops.hpp"
#include "facetouch/params.hpp"
#include "facetouch/rng.hpp"
#include "facetouch/tape.hpp"
#include "facetouch/tensor.hpp"

namespace facetouch {

struct EncoderConfig {
    int input_size = 64;  // square inputs only
    std::vector<int> widths = {16, 32, 64};
    int embed_dim = 64;  // D_E; equals widths.back() (global average pool output)
    double proj_dropout = 0.5;  // train-time dropout on the projection head
    uint64_t seed = 1;

    void validate() const;
    int stages() const { return int(widths.size()); }
};

struct TrainProvenance {
    std::string regime = "none";        // none | sl | scl
    std::string loss_variant = "none";  // ce | focal | supcon-printed | supcon-logout
    uint64_t seed = 0;
    int epochs = 0;
};

// Encoder (conv stages + global average pool), projection head (128-d,
// L2-normalized) and classifier head (512 hidden, binary softmax) over one
// shared ParamSet.
template <class T>
class FaceTouchModel {
public:
    explicit FaceTouchModel(EncoderConfig cfg);

    const EncoderConfig& config() const { return cfg_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }

    std::string last_conv_stage() const;

    // ---- tape forwards (training and Grad-CAM) ----
    struct EncodeVars {
        Var r;         // [B, D_E]
        Var stage_act; // requested stage's post-ReLU activation [B, C, h, w]
    };
    // x: [B, 1, S, S]. capture_stage: index of the conv stage whose
    // activation to report (-1 = last).
    EncodeVars encode_t(Tape<T>& t, const BoundParams<T>& bound, Var x,
                        int capture_stage = -1) const;
    Var project_t(Tape<T>& t, const BoundParams<T>& bound, Var r, Mode mode,
                  RngState* rng) const;
    Var classify_logits_t(Tape<T>& t, const BoundParams<T>& bound, Var r) const;

    // ---- eval-mode forwards ----
    Tensor<T> encode_batch(const Tensor<T>& x) const;    // [B,1,S,S] -> [B,D_E]
    std::vector<T> encode(const Image& img) const;       // one embedding row
    Tensor<T> classify_batch(const Tensor<T>& r) const;  // [B,D_E] -> probs [B,2]
    std::array<T, 2> classify(const std::vector<T>& r) const;
    std::vector<T> project(const std::vector<T>& r) const;  // unit-norm z

    // Post-ReLU activation of one conv stage in eval mode, [C, h, w].
    Tensor<T> stage_activation(const Image& img, int stage) const;

    // Grad-CAM over the named conv stage (default: last). Returns a
    // grayscale input-sized map in [0, 1].
    Image gradcam(const Image& img, int target_class, const std::string& layer = "") const;

    std::uint64_t proj_invocations() const { return proj_invocations_; }
    void reset_proj_invocations() { proj_invocations_ = 0; }

    Tensor<T> image_to_tensor(const Image& img) const;  // [1,1,S,S], size-checked

private:
    void init_params();
    void check_input(const Tensor<T>& x) const;

    EncoderConfig cfg_;
    ParamSet<T> params_;
    mutable std::uint64_t proj_invocations_ = 0;
};

template <class T>
void save_checkpoint(const std::string& path, const FaceTouchModel<T>& model,
                     const TrainProvenance& prov);

template <class T>
FaceTouchModel<T> load_checkpoint(const std::string& path, TrainProvenance* prov = nullptr);

}  // namespace facetouch
