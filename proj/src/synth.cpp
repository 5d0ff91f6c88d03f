#include "facetouch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "facetouch/errors.hpp"

namespace facetouch {
namespace {

constexpr int32_t kFp = 16;  // fixed-point units per pixel
constexpr double kPi = 3.14159265358979323846;

// Polynomial sin/cos so geometry generation does not depend on the libm
// build. Range-reduced Taylor series, |err| < 1e-9 over a full turn.
void det_sincos(double a, double& s, double& c) {
    a = std::fmod(a, 2.0 * kPi);
    if (a > kPi) a -= 2.0 * kPi;
    if (a < -kPi) a += 2.0 * kPi;
    int qs = 1, qc = 1;
    if (a > kPi / 2) {
        a = kPi - a;
        qc = -1;
    } else if (a < -kPi / 2) {
        a = -kPi - a;
        qc = -1;
    }
    const double x2 = a * a;
    double sv = a, term = a;
    for (int k = 1; k <= 7; ++k) {
        term *= -x2 / double((2 * k) * (2 * k + 1));
        sv += term;
    }
    double cv = 1.0, ct = 1.0;
    for (int k = 1; k <= 7; ++k) {
        ct *= -x2 / double((2 * k - 1) * (2 * k));
        cv += ct;
    }
    s = qs * sv;
    c = qc * cv;
}

int32_t to_fp(double px) { return static_cast<int32_t>(std::lround(px * kFp)); }

int64_t sq(int64_t v) { return v * v; }

int64_t dist2(int64_t ax, int64_t ay, int64_t bx, int64_t by) {
    return sq(ax - bx) + sq(ay - by);
}

// Squared distance from point P to segment AB, exact rational comparison
// against a squared radius: returns true when dist(P, AB) <= r.
bool capsule_hit(int64_t px, int64_t py, int64_t ax, int64_t ay, int64_t bx, int64_t by,
                 int64_t r) {
    const int64_t abx = bx - ax, aby = by - ay;
    const int64_t apx = px - ax, apy = py - ay;
    const int64_t len2 = abx * abx + aby * aby;
    const int64_t dot = apx * abx + apy * aby;
    if (len2 == 0 || dot <= 0) return dist2(px, py, ax, ay) <= r * r;
    if (dot >= len2) return dist2(px, py, bx, by) <= r * r;
    // squared perpendicular distance = cross^2 / len2
    const int64_t cross = apx * aby - apy * abx;
    return cross * cross <= r * r * len2;
}

struct Painter {
    Image& img;

    void set(int x, int y, float v) {
        if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
        for (int ch = 0; ch < img.c; ++ch) img.at(x, y, ch) = v;
    }

    // pixel center of (x, y) in fixed-point units
    static int64_t cfp(int x) { return int64_t(x) * kFp + kFp / 2; }

    void disk(int32_t cx, int32_t cy, int32_t r, float v) {
        const int x0 = std::max(0, (cx - r) / kFp - 1), x1 = std::min(img.w - 1, (cx + r) / kFp + 1);
        const int y0 = std::max(0, (cy - r) / kFp - 1), y1 = std::min(img.h - 1, (cy + r) / kFp + 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (dist2(cfp(x), cfp(y), cx, cy) <= sq(r)) set(x, y, v);
    }

    void capsule(int32_t ax, int32_t ay, int32_t bx, int32_t by, int32_t r, float v) {
        const int x0 = std::max(0, (std::min(ax, bx) - r) / kFp - 1);
        const int x1 = std::min(img.w - 1, (std::max(ax, bx) + r) / kFp + 1);
        const int y0 = std::max(0, (std::min(ay, by) - r) / kFp - 1);
        const int y1 = std::min(img.h - 1, (std::max(ay, by) + r) / kFp + 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (capsule_hit(cfp(x), cfp(y), ax, ay, bx, by, r)) set(x, y, v);
    }

    void rect(int32_t fx0, int32_t fy0, int32_t fx1, int32_t fy1, float v) {
        const int x0 = std::max(0, fx0 / kFp), x1 = std::min(img.w - 1, fx1 / kFp);
        const int y0 = std::max(0, fy0 / kFp), y1 = std::min(img.h - 1, fy1 / kFp);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (cfp(x) >= fx0 && cfp(x) <= fx1 && cfp(y) >= fy0 && cfp(y) <= fy1) set(x, y, v);
    }
};

NormBox clamped_box(double x0, double y0, double x1, double y1, int img_w, int img_h) {
    const double W = img_w * double(kFp), H = img_h * double(kFp);
    x0 = std::clamp(x0, 0.0, W);
    x1 = std::clamp(x1, 0.0, W);
    y0 = std::clamp(y0, 0.0, H);
    y1 = std::clamp(y1, 0.0, H);
    if (x1 <= x0) x1 = std::min(W, x0 + kFp);
    if (y1 <= y0) y1 = std::min(H, y0 + kFp);
    NormBox b;
    b.cx = float((x0 + x1) / 2 / W);
    b.cy = float((y0 + y1) / 2 / H);
    b.w = float((x1 - x0) / W);
    b.h = float((y1 - y0) / H);
    return b;
}

// Build one figure around a head placed at (hx, hy) px with radius r px.
// reach_d/reach_phi position the reaching hand relative to the head center.
FigureSpec make_figure(double hx, double hy, double r, double reach_d, double reach_phi,
                       bool reach_left, RngState& rng) {
    FigureSpec f;
    f.head_cx = to_fp(hx);
    f.head_cy = to_fp(hy);
    f.head_r = to_fp(r);
    f.limb_halfwidth = std::max<int32_t>(to_fp(0.22 * r), kFp / 2);

    const double beta = rng.uniform(-0.15, 0.15);  // body tilt
    double sb, cb;
    det_sincos(beta, sb, cb);
    const double neck_y = hy + r;
    const double body_len = rng.uniform(2.2, 2.8) * r;
    const double px = hx + body_len * sb, py = neck_y + body_len * cb;
    f.body_x0 = to_fp(hx);
    f.body_y0 = to_fp(neck_y);
    f.body_x1 = to_fp(px);
    f.body_y1 = to_fp(py);

    const double shoulder_y = neck_y + 0.3 * r;
    const double span = 0.9 * r;
    const double slx = hx - span, srx = hx + span;

    for (int side = 0; side < 2; ++side) {
        const bool left = side == 0;
        FigureSpec::Arm arm;
        const double sx = left ? slx : srx;
        arm.sx = to_fp(sx);
        arm.sy = to_fp(shoulder_y);
        double hx2, hy2;
        if (left == reach_left) {
            double sp, cp;
            det_sincos(reach_phi, sp, cp);
            hx2 = hx + reach_d * cp;
            hy2 = hy + reach_d * sp;
        } else {
            // hanging arm, always well below the head
            hx2 = sx + (left ? -1 : 1) * rng.uniform(0.1, 0.5) * r;
            hy2 = shoulder_y + rng.uniform(1.7, 2.1) * r;
        }
        arm.hx = to_fp(hx2);
        arm.hy = to_fp(hy2);
        const double mx = (sx + hx2) / 2, my = (shoulder_y + hy2) / 2;
        double dx = hx2 - sx, dy = hy2 - shoulder_y;
        const double len = std::sqrt(dx * dx + dy * dy);
        double ex = mx, ey = my;
        if (len > 1e-9) {
            const double bend = rng.uniform(-0.3, 0.3);
            ex = mx - dy / len * bend * len * 0.5;
            ey = my + dx / len * bend * len * 0.5;
        }
        arm.ex = to_fp(ex);
        arm.ey = to_fp(ey);
        if (left)
            f.arm_l = arm;
        else
            f.arm_r = arm;
    }

    for (int side = 0; side < 2; ++side) {
        const double ang = (side == 0 ? -1 : 1) * rng.uniform(0.15, 0.45);
        double sa, ca;
        det_sincos(ang, sa, ca);
        const double len = rng.uniform(1.6, 2.0) * r;
        FigureSpec::Leg leg;
        leg.x0 = to_fp(px);
        leg.y0 = to_fp(py);
        leg.x1 = to_fp(px + len * sa);
        leg.y1 = to_fp(py + len * ca);
        if (side == 0)
            f.leg_l = leg;
        else
            f.leg_r = leg;
    }

    f.pose_angle_cdeg = static_cast<int32_t>(std::lround(reach_phi * 18000.0 / kPi));
    f.fig_intensity = float(rng.uniform(0.75, 0.95));
    f.bg_intensity = float(rng.uniform(0.15, 0.35));
    f.noise_amp = float(rng.uniform(0.01, 0.04));
    f.touching = oracle_touching(f);
    return f;
}

}  // namespace

bool oracle_touching(const FigureSpec& f) {
    const int64_t r2 = sq(f.head_r);
    return dist2(f.arm_l.hx, f.arm_l.hy, f.head_cx, f.head_cy) <= r2 ||
           dist2(f.arm_r.hx, f.arm_r.hy, f.head_cx, f.head_cy) <= r2;
}

FigureBoxes figure_boxes(const FigureSpec& f, int img_w, int img_h) {
    const double pad = 2.0 * kFp;
    const double hw = f.limb_halfwidth;
    double x0 = f.head_cx - f.head_r, x1 = f.head_cx + f.head_r;
    double y0 = f.head_cy - f.head_r, y1 = f.head_cy + f.head_r;
    auto grow = [&](double x, double y) {
        x0 = std::min(x0, x - hw);
        x1 = std::max(x1, x + hw);
        y0 = std::min(y0, y - hw);
        y1 = std::max(y1, y + hw);
    };
    for (const auto& a : {f.arm_l, f.arm_r}) {
        grow(a.sx, a.sy);
        grow(a.ex, a.ey);
        grow(a.hx, a.hy);
    }
    for (const auto& l : {f.leg_l, f.leg_r}) {
        grow(l.x0, l.y0);
        grow(l.x1, l.y1);
    }
    grow(f.body_x0, f.body_y0);
    grow(f.body_x1, f.body_y1);

    FigureBoxes out;
    out.human = clamped_box(x0 - pad, y0 - pad, x1 + pad, y1 + pad, img_w, img_h);
    out.face = clamped_box(f.head_cx - f.head_r - pad, f.head_cy - f.head_r - pad,
                           f.head_cx + f.head_r + pad, f.head_cy + f.head_r + pad, img_w, img_h);
    const double hr = hw + pad;
    out.hand_l = clamped_box(f.arm_l.hx - hr, f.arm_l.hy - hr, f.arm_l.hx + hr, f.arm_l.hy + hr,
                             img_w, img_h);
    out.hand_r = clamped_box(f.arm_r.hx - hr, f.arm_r.hy - hr, f.arm_r.hx + hr, f.arm_r.hy + hr,
                             img_w, img_h);
    return out;
}

void draw_figure(Image& img, const FigureSpec& f) {
    Painter p{img};
    const float v = f.fig_intensity;
    const int32_t hw = f.limb_halfwidth;
    p.capsule(f.body_x0, f.body_y0, f.body_x1, f.body_y1, hw, v);
    p.capsule(f.leg_l.x0, f.leg_l.y0, f.leg_l.x1, f.leg_l.y1, hw, v);
    p.capsule(f.leg_r.x0, f.leg_r.y0, f.leg_r.x1, f.leg_r.y1, hw, v);
    for (const auto& a : {f.arm_l, f.arm_r}) {
        p.capsule(a.sx, a.sy, a.ex, a.ey, hw, v);
        p.capsule(a.ex, a.ey, a.hx, a.hy, hw, v);
        p.disk(a.hx, a.hy, hw + kFp / 2, v);
    }
    p.disk(f.head_cx, f.head_cy, f.head_r, v);
    if (f.face_visible) {
        const int32_t er = std::max<int32_t>(f.head_r * 3 / 16, kFp / 2);
        const int32_t ex = f.head_r * 6 / 16, ey = f.head_r * 3 / 16;
        const float dark = 0.12f;
        p.disk(f.head_cx - ex, f.head_cy - ey, er, dark);
        p.disk(f.head_cx + ex, f.head_cy - ey, er, dark);
        p.capsule(f.head_cx - f.head_r * 6 / 16, f.head_cy + f.head_r * 7 / 16,
                  f.head_cx + f.head_r * 6 / 16, f.head_cy + f.head_r * 7 / 16,
                  std::max<int32_t>(f.head_r * 2 / 16, kFp / 4), dark);
    } else {
        // occluder board over the face
        p.rect(f.head_cx - f.head_r * 5 / 4, f.head_cy - f.head_r * 5 / 4,
               f.head_cx + f.head_r * 5 / 4, f.head_cy + f.head_r * 3 / 4, 0.55f);
    }
}

CropSample gen_crop(int size, int label, bool hard_negative, RngState rng) {
    if (size < 32) throw ContractViolation("gen_crop: size must be >= 32");
    if (label != 0 && label != 1) throw ContractViolation("gen_crop: label must be 0 or 1");

    const double s = size / 64.0;
    const double r = rng.uniform(7.0, 10.0) * s;
    const double hx = size / 2.0 + rng.uniform(-6.0, 6.0) * s;
    const double hy = rng.uniform(14.0, 20.0) * s;

    double d;
    if (label == 1)
        d = rng.uniform(0.0, 0.8) * r;
    else if (hard_negative)
        d = rng.uniform(1.15, 1.6) * r;
    else
        d = rng.uniform(1.7, 2.6) * r;

    // place the reaching hand inside the frame; deterministic fallback points
    // straight down from the head
    const double margin = 3.0 * s;
    double phi = 0.0;
    bool placed = false;
    for (int attempt = 0; attempt < 32 && !placed; ++attempt) {
        phi = rng.uniform(-kPi, kPi);
        double sp, cp;
        det_sincos(phi, sp, cp);
        const double x = hx + d * cp, y = hy + d * sp;
        placed = x >= margin && x <= size - margin && y >= margin && y <= size - margin;
    }
    if (!placed) phi = kPi / 2;

    const bool reach_left = rng.bernoulli(0.5);
    FigureSpec f = make_figure(hx, hy, r, d, phi, reach_left, rng);
    if (f.touching != (label == 1))
        throw ContractViolation("gen_crop: constructed pose does not match requested label");

    CropSample out;
    out.fig = f;
    out.label = label;
    out.image = Image(size, size, 1, f.bg_intensity);
    for (float& v : out.image.px)
        v = std::clamp(v + float(rng.uniform(-f.noise_amp, f.noise_amp)), 0.0f, 1.0f);
    draw_figure(out.image, f);
    return out;
}

SceneSample gen_scene(int min_figures, int max_figures, double occlusion_rate, uint64_t seed,
                      int width, int height) {
    if (min_figures < 0 || max_figures < min_figures)
        throw ContractViolation("gen_scene: invalid figure count range");
    if (occlusion_rate < 0.0 || occlusion_rate > 1.0)
        throw ContractViolation("gen_scene: occlusion_rate must be in [0, 1]");
    if (width < 128 || height < 128) throw ContractViolation("gen_scene: scene must be >= 128x128");

    RngState rng(seed);
    RngState layout = rng.substream(0x5CE4E, 0, 0);
    const int count =
        min_figures + int(layout.uniform_int(uint64_t(max_figures - min_figures) + 1));

    SceneSample out;
    const float bg = float(layout.uniform(0.15, 0.3));
    out.image = Image(width, height, 1, bg);
    RngState noise = rng.substream(0x7015E, 0, 0);
    const float amp = float(noise.uniform(0.01, 0.03));
    for (float& v : out.image.px)
        v = std::clamp(v + float(noise.uniform(-amp, amp)), 0.0f, 1.0f);

    // shuffled grid cells keep figures apart
    const int cols = 2, rows = 2;
    std::vector<int> cells(cols * rows);
    for (size_t i = 0; i < cells.size(); ++i) cells[i] = int(i);
    for (size_t i = cells.size(); i > 1; --i)
        std::swap(cells[i - 1], cells[layout.uniform_int(i)]);
    if (count > int(cells.size()))
        throw ContractViolation("gen_scene: more figures than placement cells");

    for (int k = 0; k < count; ++k) {
        RngState fr = rng.substream(1, uint64_t(k), 0);
        const int cell = cells[size_t(k)];
        const double cw = double(width) / cols, ch = double(height) / rows;
        const double cx = (cell % cols + 0.5) * cw, cy = (cell / cols + 0.5) * ch;

        const double r = fr.uniform(9.0, 13.0) * (std::min(cw, ch) / 128.0);
        const double hx = cx + fr.uniform(-0.1, 0.1) * cw;
        const double hy = cy - ch * 0.32 + fr.uniform(0.0, 6.0);

        const int label = fr.bernoulli(0.5) ? 1 : 0;
        double d;
        if (label == 1)
            d = fr.uniform(0.0, 0.8) * r;
        else
            d = fr.uniform(1.2, 2.2) * r;
        const double phi = fr.uniform(-kPi, kPi);
        const bool reach_left = fr.bernoulli(0.5);

        FigureSpec f = make_figure(hx, hy, r, d, phi, reach_left, fr);
        if (f.touching != (label == 1))
            throw ContractViolation("gen_scene: constructed pose does not match requested label");
        f.face_visible = !fr.bernoulli(occlusion_rate);
        draw_figure(out.image, f);

        SceneFigure sf;
        sf.spec = f;
        const FigureBoxes boxes = figure_boxes(f, width, height);
        sf.human_box = boxes.human;
        sf.face_box = boxes.face;
        sf.hand_box = reach_left ? boxes.hand_l : boxes.hand_r;
        sf.face_visible = f.face_visible;
        sf.touch = label;
        out.figures.push_back(sf);
    }
    return out;
}

}  // namespace facetouch
