#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cfate/background_model.hpp"
#include "cfate/image.hpp"
#include "cfate/object_model.hpp"
#include "cfate/vae.hpp"

namespace cfate::scene {

// One object in the dead-leaves stack; later list positions are nearer.
struct ObjectPlacement {
    Tensor z_app;
    double x = 0, y = 0;           // object center, canvas px
    double width = 0, height = 0;  // target size, px (2:1 under the prior)
};

struct SceneSpec {
    Tensor z_bg;
    std::vector<ObjectPlacement> placements;
};

struct SamplerConfig {
    double tau = 0.1;                 // mask temperature
    double entropy_threshold = 100.0; // bits
    bool normalized_entropy = false;  // divide by W*H instead of total bits
    int max_attempts = 200;
    int k_min = 1, k_max = 6;
    double min_width = 16, max_width = 48;  // 2:1 aspect, height = width/2
    int canvas_w = 120, canvas_h = 80;
};

struct Models {
    const VaeSpec* object_spec = nullptr;
    const VaeParams* object_params = nullptr;
    const VaeSpec* background_spec = nullptr;
    const VaeParams* background_params = nullptr;
};

// sigmoid(logits / tau), elementwise
Tensor sharpen_mask(const Tensor& logits, double tau);

// Total binary entropy in bits (0*log0 := 0); normalized = mean per pixel.
double mask_entropy(const Tensor& mask_prob, bool normalized = false);

// Rejection-sample an appearance latent whose sharpened mask entropy is
// within the threshold. Throws sampling_error when the budget is exhausted.
Tensor sample_object_latent(const Models& models, const SamplerConfig& cfg, Rng& rng);

struct ComposeResult {
    ImageF image;          // canvas RGB in [0,1]
    LabelMap provenance;   // 0 = background, k = placements[k-1]
};

// Dead-leaves composition: sharpened masks binarized at 0.5, appearance
// rescaled bilinearly, masks nearest; later placements occlude earlier ones.
// Placements fully outside the canvas contribute nothing.
ComposeResult compose(const Models& models, const Tensor& z_bg,
                      const std::vector<ObjectPlacement>& placements, const SamplerConfig& cfg);

struct SampledScene {
    SceneSpec spec;
    ComposeResult composed;
};

SampledScene sample_scene(const Models& models, const SamplerConfig& cfg, uint64_t seed);

struct Intervention {
    enum class Kind {
        set_count,
        resample_appearance,
        set_scale,
        swap_background,
        resample_positions
    };
    Kind kind = Kind::set_count;
    int index = -1;     // resample_appearance / set_scale
    int count = 0;      // set_count
    double width = 0, height = 0;  // set_scale
    Tensor z_bg;        // swap_background
    uint64_t seed = 0;  // randomized interventions
};

// Returns a new SceneSpec differing only in the intervened variables.
SceneSpec intervene(const SceneSpec& spec, const Intervention& intervention, const Models& models,
                    const SamplerConfig& cfg);

struct LatentBankEntry {
    Tensor z_bg;
    std::vector<Tensor> z_objects;
};

// kNN conditional sampling: pick ceil(fraction*N) nearest bank entries by L2
// on z_bg, pool their object latents, draw K of them with entropy rejection.
SceneSpec conditional_sample(const Models& models, const std::vector<LatentBankEntry>& bank,
                             const Tensor& z_bg, double fraction, const SamplerConfig& cfg,
                             uint64_t seed);

// JSON serialization (latents as f32 arrays, positions/scales in px).
std::string scene_to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const std::string& text);
void write_latent_bank(const std::string& path, const std::vector<LatentBankEntry>& bank);
std::vector<LatentBankEntry> read_latent_bank(const std::string& path);

}  // namespace cfate::scene
