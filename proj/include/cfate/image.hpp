#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cfate/errors.hpp"

namespace cfate {

// Interleaved u8 image (RGB for c=3, grey for c=1).
struct ImageU8 {
    int w = 0, h = 0, c = 0;
    std::vector<uint8_t> data;

    ImageU8() = default;
    ImageU8(int w_, int h_, int c_, uint8_t fill = 0)
        : w(w_), h(h_), c(c_), data(static_cast<size_t>(w_) * h_ * c_, fill) {}
    uint8_t& at(int x, int y, int ch) { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
    uint8_t at(int x, int y, int ch) const { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
};

// Interleaved float image; used for flow fields (c=2) and [0,1] images.
struct ImageF {
    int w = 0, h = 0, c = 0;
    std::vector<float> data;

    ImageF() = default;
    ImageF(int w_, int h_, int c_, float fill = 0.f)
        : w(w_), h(h_), c(c_), data(static_cast<size_t>(w_) * h_ * c_, fill) {}
    float& at(int x, int y, int ch) { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
    float at(int x, int y, int ch) const { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
};

// Binary mask, one byte per pixel in {0,1}.
struct Mask {
    int w = 0, h = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(int w_, int h_, uint8_t fill = 0) : w(w_), h(h_), data(static_cast<size_t>(w_) * h_, fill) {}
    uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * w + x]; }
    int64_t area() const {
        int64_t n = 0;
        for (uint8_t v : data) n += v ? 1 : 0;
        return n;
    }
};

// Per-pixel u16 labels, 0 = background.
struct LabelMap {
    int w = 0, h = 0;
    std::vector<uint16_t> data;

    LabelMap() = default;
    LabelMap(int w_, int h_, uint16_t fill = 0)
        : w(w_), h(h_), data(static_cast<size_t>(w_) * h_, fill) {}
    uint16_t& at(int x, int y) { return data[static_cast<size_t>(y) * w + x]; }
    uint16_t at(int x, int y) const { return data[static_cast<size_t>(y) * w + x]; }
};

ImageF to_float(const ImageU8& img);          // u8 -> [0,1]
ImageU8 to_u8(const ImageF& img);             // [0,1] -> u8, rounded and clamped

// netpbm binary formats
void write_ppm(const std::string& path, const ImageU8& img);       // P6, c=3
ImageU8 read_ppm(const std::string& path);
void write_pgm(const std::string& path, const ImageU8& img);       // P5, c=1
ImageU8 read_pgm(const std::string& path);
void write_pgm16(const std::string& path, const LabelMap& labels); // P5 maxval 65535
LabelMap read_pgm16(const std::string& path);

// flow container: magic "CFFL", u32 W, u32 H, u32 field count, then per field
// row-major (y,x) pairs of f32 (dx,dy)
void write_flow(const std::string& path, const std::vector<ImageF>& fields);
std::vector<ImageF> read_flow(const std::string& path);

// bilinear sample with edge clamping; x,y in pixel coordinates
float sample_bilinear(const ImageF& img, float x, float y, int ch);

// bilinear resize with half-pixel centers (align_corners = false)
ImageF resize_bilinear(const ImageF& img, int out_w, int out_h);
Mask resize_nearest(const Mask& mask, int out_w, int out_h);

// Sobel gradient magnitude of the luma; used as watershed flooding priority
ImageF sobel_magnitude(const ImageU8& img);

// YIQ color rotation: Y preserved, (I,Q) rotated by angle_deg, clamped to u8
std::array<uint8_t, 3> color_shift(const std::array<uint8_t, 3>& rgb, double angle_deg);

}  // namespace cfate
