#pragma once

#include <cstdint>

#include "facetouch/image.hpp"
#include "facetouch/rng.hpp"

namespace facetouch {

struct AugmentSpec {
    double flip_prob = 0.5;
    double translate_frac = 0.1;  // max |shift| as a fraction of width/height
    double scale_min = 0.9;
    double scale_max = 1.1;
    double brightness = 0.2;  // max |additive jitter|
    uint64_t seed = 0;

    void validate() const;
};

// Exact horizontal mirror; an involution.
Image hflip(const Image& x);

// Random view: flip, scale+translate (zero padding, bilinear), brightness.
// Consumes a fixed number of draws from rng regardless of outcomes.
Image augment_view(const Image& x, const AugmentSpec& spec, RngState& rng);

}  // namespace facetouch
