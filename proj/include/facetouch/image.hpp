#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facetouch/errors.hpp"

namespace facetouch {

// Interleaved float image with values in [0,1]; 1 channel (gray) or 3 (RGB).
struct Image {
    int w = 0, h = 0, c = 1;
    std::vector<float> px;

    Image() = default;
    Image(int width, int height, int channels, float fill = 0.0f);

    float& at(int x, int y, int ch = 0) { return px[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    float at(int x, int y, int ch = 0) const {
        return px[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    std::size_t numel() const { return px.size(); }
    bool same_shape(const Image& o) const { return w == o.w && h == o.h && c == o.c; }
};

// Strict 8-bit netpbm: P5 for grayscale, P6 for RGB, maxval 255 only,
// single whitespace byte before the payload, no trailing bytes. Parse
// failures throw ParseError carrying the byte offset.
Image decode_netpbm(const std::uint8_t* data, std::size_t len);
std::vector<std::uint8_t> encode_netpbm(const Image& img);

Image read_image(const std::string& path);
void write_image(const std::string& path, const Image& img);

// Grayscale copy (RGB collapses by channel mean); used before encoding.
Image to_gray(const Image& img);
Image to_rgb(const Image& img);

// Nearest axis-aligned subimage of the normalized box [cx,cy,w,h], clamped
// to the frame, then bilinearly resized to out_w x out_h.
struct NormBox {
    double cx = 0, cy = 0, w = 0, h = 0;
};
Image crop_resize(const Image& img, const NormBox& box, int out_w, int out_h);

Image resize(const Image& img, int out_w, int out_h);

}  // namespace facetouch
