#pragma once

#include <cstdint>
#include <vector>

#include "facetouch/image.hpp"
#include "facetouch/rng.hpp"

namespace facetouch {

// Stick-figure geometry in fixed-point 1/16-pixel units of the target
// image. Rasterization and the touch oracle run on these integers only, so
// generated datasets are byte-identical across platforms.
struct FigureSpec {
    int32_t head_cx = 0, head_cy = 0, head_r = 0;
    struct Arm {
        int32_t sx = 0, sy = 0;  // shoulder
        int32_t ex = 0, ey = 0;  // elbow
        int32_t hx = 0, hy = 0;  // hand endpoint
    };
    Arm arm_l, arm_r;
    int32_t body_x0 = 0, body_y0 = 0, body_x1 = 0, body_y1 = 0;  // neck -> pelvis
    struct Leg {
        int32_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    };
    Leg leg_l, leg_r;
    int32_t limb_halfwidth = 0;
    int32_t pose_angle_cdeg = 0;  // reach direction, centidegrees
    bool touching = false;
    bool face_visible = true;
    float fig_intensity = 0.85f;
    float bg_intensity = 0.25f;
    float noise_amp = 0.02f;
};

// Ground truth by definition: does either hand endpoint lie within the head
// disk (distance <= head_r, integer arithmetic)?
bool oracle_touching(const FigureSpec& f);

struct FigureBoxes {
    NormBox human, face, hand_l, hand_r;
};
// Normalized, clamped boxes derived from the integer geometry.
FigureBoxes figure_boxes(const FigureSpec& f, int img_w, int img_h);

void draw_figure(Image& img, const FigureSpec& f);

// Single-figure grayscale crop with the requested label. Hard negatives
// place the hand just outside the touch threshold.
struct CropSample {
    Image image;
    FigureSpec fig;
    int label = 0;
};
CropSample gen_crop(int size, int label, bool hard_negative, RngState rng);

struct SceneFigure {
    FigureSpec spec;
    NormBox human_box;
    NormBox face_box;  // meaningful only when face_visible
    NormBox hand_box;  // reaching hand
    bool face_visible = true;
    int touch = 0;
};
struct SceneSample {
    Image image;
    std::vector<SceneFigure> figures;
};

// Multi-figure scene; each figure's face is occluded independently with
// probability occlusion_rate (occluded: face box omitted, a blocker drawn
// over the face, human box still present).
SceneSample gen_scene(int min_figures, int max_figures, double occlusion_rate, uint64_t seed,
                      int width = 256, int height = 256);

}  // namespace facetouch
