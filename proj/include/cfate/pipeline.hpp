#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfate/background_model.hpp"
#include "cfate/fishbowl.hpp"
#include "cfate/motion_seg.hpp"
#include "cfate/object_model.hpp"
#include "cfate/scene_model.hpp"

namespace cfate::pipeline {

struct PathsConfig {
    std::string dataset_dir = "data";
    std::string model_dir = "models";
    std::string report_dir = "report";
};

struct DataConfig {
    int width = 120, height = 80, frames = 32;
    int num_videos = 10;
    int min_sprites = 1, max_sprites = 6;
    double min_size = 30, max_size = 60;
    double min_speed = 0.8, max_speed = 2.5;
    double flow_noise_sigma = 0.0, flow_drop_prob = 0.0;

    fishbowl::GeneratorConfig generator() const;
};

struct SegmentConfig {
    int grid_spacing = 4;
    double fb_threshold = 1.5;
    double sigma_floor = 0.3;
    double theta0 = 0.5, theta1 = 1.0;
    double interaction_radius = 20.0;
    int min_cluster_size = 5;
    int64_t min_component_pixels = 0;

    moseg::SegmentParams params() const;
};

struct ExtractConfigSection {
    int crop_width = 32, crop_height = 16;
    int64_t min_area = 64;
    int min_border_distance = 8;
    bool use_ground_truth = false;

    objmodel::ExtractConfig params() const;
};

struct ObjectModelConfig {
    int latent_dim = 16;
    std::vector<int> channels = {8, 16, 32, 64, 64};
    std::vector<int> strides = {2, 1, 2, 1, 2};
    int epochs = 60, lr_drop_epoch = 40, batch_size = 16, crops_per_object = 2;
    double lr = 1e-4;
    double gamma = 0.1, beta = 1e-4;
    std::string augmentation = "other-object";  // none | cutout | other-object
    int cutout_min_rects = 1, cutout_max_rects = 3;
    double cutout_min_area = 0.10, cutout_max_area = 0.40;
    double cutout_fill = 0.5;
    double other_shift_frac = 0.25;

    objmodel::TrainConfig train_config() const;
    VaeSpec vae_spec(int crop_h, int crop_w) const;
};

struct BackgroundModelConfig {
    int width = 24, height = 16;
    int latent_dim = 8;
    std::vector<int> channels = {8, 16, 32};
    std::vector<int> strides = {2, 1, 2};
    int epochs = 40, lr_drop_epoch = 30, batch_size = 16;
    double lr = 1e-4, beta = 1e-3;
    int frame_stride = 8;  // one background sample per K-th frame
    int sd_amplification = 4;
    int frame_diff_threshold = 25;

    bgmodel::BgTrainConfig train_config() const;
    VaeSpec vae_spec() const;
    moseg::SigmaDeltaConfig ensemble_config() const;
};

struct SceneConfig {
    double tau = 0.1;
    double entropy_threshold = 100.0;
    bool normalized_entropy = false;
    int max_attempts = 200;
    int k_min = 1, k_max = 6;
    double min_width = 16, max_width = 48;
    int num_scenes = 8;
    double conditional_threshold = 150.0;
    double conditional_fraction = 0.02;

    scene::SamplerConfig sampler(int canvas_w, int canvas_h) const;
};

struct PipelineConfig {
    int version = 1;
    uint64_t seed = 1;
    int jobs = 1;
    PathsConfig paths;
    DataConfig data;
    SegmentConfig segment;
    ExtractConfigSection extract;
    ObjectModelConfig object_model;
    BackgroundModelConfig background_model;
    SceneConfig scene;
};

// JSON round trip; unknown keys are rejected with config_error.
nlohmann::json config_to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config_file(const std::string& path);

// Dotted-path override, e.g. "segment.fb_threshold=0.75"; the value is
// parsed as JSON when possible, as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& key_eq_value);

// FNV-1a 64 content hash, hex encoded; used by the artifact manifests.
std::string file_hash_hex(const std::string& path);

// Runs one subcommand; artifacts land under the configured directories and
// a manifest (artifact paths + hashes + the effective config) is written to
// <report_dir>/manifest_<name>.json. Throws on failure.
void run_subcommand(const std::string& name, const PipelineConfig& cfg);

const std::vector<std::string>& subcommand_names();

}  // namespace cfate::pipeline
