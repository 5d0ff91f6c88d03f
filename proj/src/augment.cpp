#include "facetouch/augment.hpp"

#include <algorithm>
#include <cmath>

#include "facetouch/errors.hpp"

namespace facetouch {

void AugmentSpec::validate() const {
    if (flip_prob < 0.0 || flip_prob > 1.0)
        throw ContractViolation("AugmentSpec: flip_prob must be in [0, 1]");
    if (translate_frac < 0.0 || translate_frac > 0.5)
        throw ContractViolation("AugmentSpec: translate_frac must be in [0, 0.5]");
    if (!(scale_min > 0.25) || scale_max < scale_min || scale_max > 4.0)
        throw ContractViolation("AugmentSpec: scale range must satisfy 0.25 < min <= max <= 4");
    if (brightness < 0.0 || brightness > 1.0)
        throw ContractViolation("AugmentSpec: brightness must be in [0, 1]");
}

Image hflip(const Image& x) {
    Image out(x.w, x.h, x.c);
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx)
            for (int ch = 0; ch < x.c; ++ch) out.at(xx, y, ch) = x.at(x.w - 1 - xx, y, ch);
    return out;
}

namespace {

float sample_zero_pad(const Image& img, double sx, double sy, int ch) {
    const double fx = std::floor(sx), fy = std::floor(sy);
    const int x0 = int(fx), y0 = int(fy);
    const double wx = sx - fx, wy = sy - fy;
    auto tap = [&](int x, int y) -> double {
        if (x < 0 || y < 0 || x >= img.w || y >= img.h) return 0.0;
        return img.at(x, y, ch);
    };
    const double top = tap(x0, y0) * (1 - wx) + tap(x0 + 1, y0) * wx;
    const double bot = tap(x0, y0 + 1) * (1 - wx) + tap(x0 + 1, y0 + 1) * wx;
    return float(top * (1 - wy) + bot * wy);
}

}  // namespace

Image augment_view(const Image& x, const AugmentSpec& spec, RngState& rng) {
    spec.validate();

    // fixed draw order so rng consumption never depends on outcomes
    const bool flip = rng.uniform() < spec.flip_prob;
    const double scale = rng.uniform(spec.scale_min, spec.scale_max);
    const double tx = rng.uniform(-spec.translate_frac, spec.translate_frac) * x.w;
    const double ty = rng.uniform(-spec.translate_frac, spec.translate_frac) * x.h;
    const double db = rng.uniform(-spec.brightness, spec.brightness);

    Image cur = flip ? hflip(x) : x;

    if (scale != 1.0 || tx != 0.0 || ty != 0.0) {
        Image warped(x.w, x.h, x.c);
        const double cx = x.w / 2.0, cy = x.h / 2.0;
        for (int y = 0; y < x.h; ++y)
            for (int xx = 0; xx < x.w; ++xx) {
                const double sx = (xx + 0.5 - cx - tx) / scale + cx - 0.5;
                const double sy = (y + 0.5 - cy - ty) / scale + cy - 0.5;
                for (int ch = 0; ch < x.c; ++ch)
                    warped.at(xx, y, ch) = sample_zero_pad(cur, sx, sy, ch);
            }
        cur = std::move(warped);
    }

    if (db != 0.0)
        for (float& v : cur.px) v = std::clamp(v + float(db), 0.0f, 1.0f);
    return cur;
}

}  // namespace facetouch
