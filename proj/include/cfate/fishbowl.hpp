#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cfate/image.hpp"
#include "cfate/rng.hpp"

namespace cfate::fishbowl {

// Parametric fish sprite: body ellipse, tail triangle, dorsal fin. Sprites
// translate rigidly (no rotation), so the rasterized stamp is constant over
// the whole video.
struct SpriteSpec {
    double body_rx = 0, body_ry = 0;  // ellipse semi-axes, px
    double tail_size = 0;             // tail triangle size, px
    double fin_offset = 0;            // dorsal fin height above the body, px
    std::array<uint8_t, 3> base_color{};
    int color_shift_index = 0;        // angle = index * 45 degrees
    double scale = 1.0;
    int depth_rank = 0;               // larger = nearer
    bool faces_left = false;
};

struct MotionPath {
    enum class Kind { piecewise_linear, sinusoidal };
    Kind kind = Kind::piecewise_linear;
    double x0 = 0, y0 = 0;            // initial center position
    double vx0 = 0, vy0 = 0;          // velocity at t=0
    double vx1 = 0, vy1 = 0;          // piecewise_linear: velocity at t=T
    double amp = 0, period = 16, phase = 0;  // sinusoidal vertical bobbing
};

struct FlowNoise {
    double sigma = 0.0;       // additive per-pixel Gaussian, px
    double drop_prob = 0.0;   // per sprite/frame chance of losing its motion
};

struct GeneratorConfig {
    int width = 120, height = 80, frames = 32;
    int min_sprites = 1, max_sprites = 6;
    double min_size = 30, max_size = 60;   // overall sprite length, px
    double min_speed = 0.8, max_speed = 2.5;
    FlowNoise flow_noise;
};

// Rasterized sprite: pixel offsets relative to the center plus their colors.
struct SpriteStamp {
    std::vector<int> dx, dy;
    std::vector<std::array<uint8_t, 3>> color;
    int min_dx = 0, max_dx = 0, min_dy = 0, max_dy = 0;
};

struct SpriteState {
    SpriteSpec spec;
    MotionPath path;
    SpriteStamp stamp;
    std::vector<std::array<double, 2>> center;   // per frame, real px
    std::vector<std::array<int, 2>> center_px;   // per frame, rounded

    Mask unoccluded_mask(int frame, int w, int h) const;
    ImageU8 unoccluded_appearance(int frame, int w, int h) const;  // on black
};

struct VideoSample {
    GeneratorConfig config;
    uint64_t seed = 0;
    std::vector<ImageU8> frames;   // T
    std::vector<ImageF> flow;      // T-1, channels (dx,dy) px/frame
    std::vector<LabelMap> labels;  // occluded labels, sprite i -> label i+1
    ImageU8 background;            // clean background
    std::vector<SpriteState> sprites;
};

// Deterministic for fixed (config, seed); throws config_error on degenerate
// configs (zero-size canvas, frames < 2).
VideoSample generate(const GeneratorConfig& config, uint64_t seed);

SpriteStamp rasterize_sprite(const SpriteSpec& spec);

// Dataset directory layout, one directory per video:
//   frame_%04d.ppm, labels_%04d.pgm (16-bit), flow.cffl, background.ppm,
//   meta.json (sprites, paths, per-frame positions, stamp masks as RLE),
//   unocc/obj_%02d.ppm (stamp appearance crop)
void write_video(const std::string& dir, const VideoSample& video);
VideoSample read_video(const std::string& dir);

}  // namespace cfate::fishbowl
