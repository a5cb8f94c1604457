#include "cfate/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include "cfate/errors.hpp"
#include "cfate/evaluation.hpp"
#include "cfate/gradcheck.hpp"
#include "cfate/rle.hpp"
#include "cfate/weights_io.hpp"

namespace cfate::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// config plumbing

fishbowl::GeneratorConfig DataConfig::generator() const {
    fishbowl::GeneratorConfig g;
    g.width = width;
    g.height = height;
    g.frames = frames;
    g.min_sprites = min_sprites;
    g.max_sprites = max_sprites;
    g.min_size = min_size;
    g.max_size = max_size;
    g.min_speed = min_speed;
    g.max_speed = max_speed;
    g.flow_noise.sigma = flow_noise_sigma;
    g.flow_noise.drop_prob = flow_drop_prob;
    return g;
}

moseg::SegmentParams SegmentConfig::params() const {
    moseg::SegmentParams p;
    p.track.grid_spacing = grid_spacing;
    p.track.fb_threshold = fb_threshold;
    p.track.sigma_floor = sigma_floor;
    p.graph.theta0 = theta0;
    p.graph.theta1 = theta1;
    p.graph.interaction_radius = interaction_radius;
    p.min_cluster_size = min_cluster_size;
    p.min_component_pixels = min_component_pixels;
    return p;
}

objmodel::ExtractConfig ExtractConfigSection::params() const {
    objmodel::ExtractConfig c;
    c.crop_w = crop_width;
    c.crop_h = crop_height;
    c.min_area = min_area;
    c.min_border_distance = min_border_distance;
    return c;
}

objmodel::TrainConfig ObjectModelConfig::train_config() const {
    objmodel::TrainConfig t;
    t.epochs = epochs;
    t.lr_drop_epoch = lr_drop_epoch;
    t.lr = lr;
    t.batch_size = batch_size;
    t.crops_per_object = crops_per_object;
    t.loss.gamma = gamma;
    t.loss.beta = beta;
    if (augmentation == "none") t.augmentation.mode = objmodel::AugmentationSpec::Mode::none;
    else if (augmentation == "cutout") t.augmentation.mode = objmodel::AugmentationSpec::Mode::cutout;
    else if (augmentation == "other-object")
        t.augmentation.mode = objmodel::AugmentationSpec::Mode::other_object;
    else throw config_error("object_model.augmentation must be none|cutout|other-object");
    t.augmentation.cutout_min_rects = cutout_min_rects;
    t.augmentation.cutout_max_rects = cutout_max_rects;
    t.augmentation.cutout_min_area = cutout_min_area;
    t.augmentation.cutout_max_area = cutout_max_area;
    t.augmentation.cutout_fill = static_cast<float>(cutout_fill);
    t.augmentation.other_shift_frac = other_shift_frac;
    return t;
}

VaeSpec ObjectModelConfig::vae_spec(int crop_h, int crop_w) const {
    return make_vae_spec(crop_h, crop_w, channels, strides, latent_dim, true);
}

bgmodel::BgTrainConfig BackgroundModelConfig::train_config() const {
    bgmodel::BgTrainConfig t;
    t.epochs = epochs;
    t.lr_drop_epoch = lr_drop_epoch;
    t.lr = lr;
    t.beta = beta;
    t.batch_size = batch_size;
    return t;
}

VaeSpec BackgroundModelConfig::vae_spec() const {
    return make_vae_spec(height, width, channels, strides, latent_dim, false);
}

moseg::SigmaDeltaConfig BackgroundModelConfig::ensemble_config() const {
    moseg::SigmaDeltaConfig c;
    c.amplification = sd_amplification;
    c.frame_diff_threshold = frame_diff_threshold;
    return c;
}

scene::SamplerConfig SceneConfig::sampler(int canvas_w, int canvas_h) const {
    scene::SamplerConfig s;
    s.tau = tau;
    s.entropy_threshold = entropy_threshold;
    s.normalized_entropy = normalized_entropy;
    s.max_attempts = max_attempts;
    s.k_min = k_min;
    s.k_max = k_max;
    s.min_width = min_width;
    s.max_width = max_width;
    s.canvas_w = canvas_w;
    s.canvas_h = canvas_h;
    return s;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& context) {
    if (!j.is_object()) throw config_error("config: " + context + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw config_error("config: unknown key \"" + it.key() + "\" in " + context);
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json config_to_json(const PipelineConfig& cfg) {
    json j;
    j["version"] = cfg.version;
    j["seed"] = cfg.seed;
    j["jobs"] = cfg.jobs;
    j["paths"] = {{"dataset_dir", cfg.paths.dataset_dir},
                  {"model_dir", cfg.paths.model_dir},
                  {"report_dir", cfg.paths.report_dir}};
    j["data"] = {{"width", cfg.data.width},
                 {"height", cfg.data.height},
                 {"frames", cfg.data.frames},
                 {"num_videos", cfg.data.num_videos},
                 {"min_sprites", cfg.data.min_sprites},
                 {"max_sprites", cfg.data.max_sprites},
                 {"min_size", cfg.data.min_size},
                 {"max_size", cfg.data.max_size},
                 {"min_speed", cfg.data.min_speed},
                 {"max_speed", cfg.data.max_speed},
                 {"flow_noise_sigma", cfg.data.flow_noise_sigma},
                 {"flow_drop_prob", cfg.data.flow_drop_prob}};
    j["segment"] = {{"grid_spacing", cfg.segment.grid_spacing},
                    {"fb_threshold", cfg.segment.fb_threshold},
                    {"sigma_floor", cfg.segment.sigma_floor},
                    {"theta0", cfg.segment.theta0},
                    {"theta1", cfg.segment.theta1},
                    {"interaction_radius", cfg.segment.interaction_radius},
                    {"min_cluster_size", cfg.segment.min_cluster_size},
                    {"min_component_pixels", cfg.segment.min_component_pixels}};
    j["extract"] = {{"crop_width", cfg.extract.crop_width},
                    {"crop_height", cfg.extract.crop_height},
                    {"min_area", cfg.extract.min_area},
                    {"min_border_distance", cfg.extract.min_border_distance},
                    {"use_ground_truth", cfg.extract.use_ground_truth}};
    j["object_model"] = {{"latent_dim", cfg.object_model.latent_dim},
                         {"channels", cfg.object_model.channels},
                         {"strides", cfg.object_model.strides},
                         {"epochs", cfg.object_model.epochs},
                         {"lr_drop_epoch", cfg.object_model.lr_drop_epoch},
                         {"batch_size", cfg.object_model.batch_size},
                         {"crops_per_object", cfg.object_model.crops_per_object},
                         {"lr", cfg.object_model.lr},
                         {"gamma", cfg.object_model.gamma},
                         {"beta", cfg.object_model.beta},
                         {"augmentation", cfg.object_model.augmentation},
                         {"cutout_min_rects", cfg.object_model.cutout_min_rects},
                         {"cutout_max_rects", cfg.object_model.cutout_max_rects},
                         {"cutout_min_area", cfg.object_model.cutout_min_area},
                         {"cutout_max_area", cfg.object_model.cutout_max_area},
                         {"cutout_fill", cfg.object_model.cutout_fill},
                         {"other_shift_frac", cfg.object_model.other_shift_frac}};
    j["background_model"] = {{"width", cfg.background_model.width},
                             {"height", cfg.background_model.height},
                             {"latent_dim", cfg.background_model.latent_dim},
                             {"channels", cfg.background_model.channels},
                             {"strides", cfg.background_model.strides},
                             {"epochs", cfg.background_model.epochs},
                             {"lr_drop_epoch", cfg.background_model.lr_drop_epoch},
                             {"batch_size", cfg.background_model.batch_size},
                             {"lr", cfg.background_model.lr},
                             {"beta", cfg.background_model.beta},
                             {"frame_stride", cfg.background_model.frame_stride},
                             {"sd_amplification", cfg.background_model.sd_amplification},
                             {"frame_diff_threshold", cfg.background_model.frame_diff_threshold}};
    j["scene"] = {{"tau", cfg.scene.tau},
                  {"entropy_threshold", cfg.scene.entropy_threshold},
                  {"normalized_entropy", cfg.scene.normalized_entropy},
                  {"max_attempts", cfg.scene.max_attempts},
                  {"k_min", cfg.scene.k_min},
                  {"k_max", cfg.scene.k_max},
                  {"min_width", cfg.scene.min_width},
                  {"max_width", cfg.scene.max_width},
                  {"num_scenes", cfg.scene.num_scenes},
                  {"conditional_threshold", cfg.scene.conditional_threshold},
                  {"conditional_fraction", cfg.scene.conditional_fraction}};
    return j;
}

PipelineConfig config_from_json(const json& j) {
    PipelineConfig cfg;
    check_keys(j, {"version", "seed", "jobs", "paths", "data", "segment", "extract", "object_model",
                   "background_model", "scene"},
               "top level");
    read_field(j, "version", cfg.version);
    if (cfg.version != 1) throw config_error("config: unsupported version");
    read_field(j, "seed", cfg.seed);
    read_field(j, "jobs", cfg.jobs);
    if (j.contains("paths")) {
        const json& p = j.at("paths");
        check_keys(p, {"dataset_dir", "model_dir", "report_dir"}, "paths");
        read_field(p, "dataset_dir", cfg.paths.dataset_dir);
        read_field(p, "model_dir", cfg.paths.model_dir);
        read_field(p, "report_dir", cfg.paths.report_dir);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d,
                   {"width", "height", "frames", "num_videos", "min_sprites", "max_sprites",
                    "min_size", "max_size", "min_speed", "max_speed", "flow_noise_sigma",
                    "flow_drop_prob"},
                   "data");
        read_field(d, "width", cfg.data.width);
        read_field(d, "height", cfg.data.height);
        read_field(d, "frames", cfg.data.frames);
        read_field(d, "num_videos", cfg.data.num_videos);
        read_field(d, "min_sprites", cfg.data.min_sprites);
        read_field(d, "max_sprites", cfg.data.max_sprites);
        read_field(d, "min_size", cfg.data.min_size);
        read_field(d, "max_size", cfg.data.max_size);
        read_field(d, "min_speed", cfg.data.min_speed);
        read_field(d, "max_speed", cfg.data.max_speed);
        read_field(d, "flow_noise_sigma", cfg.data.flow_noise_sigma);
        read_field(d, "flow_drop_prob", cfg.data.flow_drop_prob);
    }
    if (j.contains("segment")) {
        const json& s = j.at("segment");
        check_keys(s,
                   {"grid_spacing", "fb_threshold", "sigma_floor", "theta0", "theta1",
                    "interaction_radius", "min_cluster_size", "min_component_pixels"},
                   "segment");
        read_field(s, "grid_spacing", cfg.segment.grid_spacing);
        read_field(s, "fb_threshold", cfg.segment.fb_threshold);
        read_field(s, "sigma_floor", cfg.segment.sigma_floor);
        read_field(s, "theta0", cfg.segment.theta0);
        read_field(s, "theta1", cfg.segment.theta1);
        read_field(s, "interaction_radius", cfg.segment.interaction_radius);
        read_field(s, "min_cluster_size", cfg.segment.min_cluster_size);
        read_field(s, "min_component_pixels", cfg.segment.min_component_pixels);
    }
    if (j.contains("extract")) {
        const json& e = j.at("extract");
        check_keys(e, {"crop_width", "crop_height", "min_area", "min_border_distance",
                       "use_ground_truth"},
                   "extract");
        read_field(e, "crop_width", cfg.extract.crop_width);
        read_field(e, "crop_height", cfg.extract.crop_height);
        read_field(e, "min_area", cfg.extract.min_area);
        read_field(e, "min_border_distance", cfg.extract.min_border_distance);
        read_field(e, "use_ground_truth", cfg.extract.use_ground_truth);
    }
    if (j.contains("object_model")) {
        const json& o = j.at("object_model");
        check_keys(o,
                   {"latent_dim", "channels", "strides", "epochs", "lr_drop_epoch", "batch_size",
                    "crops_per_object", "lr", "gamma", "beta", "augmentation", "cutout_min_rects",
                    "cutout_max_rects", "cutout_min_area", "cutout_max_area", "cutout_fill",
                    "other_shift_frac"},
                   "object_model");
        read_field(o, "latent_dim", cfg.object_model.latent_dim);
        read_field(o, "channels", cfg.object_model.channels);
        read_field(o, "strides", cfg.object_model.strides);
        read_field(o, "epochs", cfg.object_model.epochs);
        read_field(o, "lr_drop_epoch", cfg.object_model.lr_drop_epoch);
        read_field(o, "batch_size", cfg.object_model.batch_size);
        read_field(o, "crops_per_object", cfg.object_model.crops_per_object);
        read_field(o, "lr", cfg.object_model.lr);
        read_field(o, "gamma", cfg.object_model.gamma);
        read_field(o, "beta", cfg.object_model.beta);
        read_field(o, "augmentation", cfg.object_model.augmentation);
        read_field(o, "cutout_min_rects", cfg.object_model.cutout_min_rects);
        read_field(o, "cutout_max_rects", cfg.object_model.cutout_max_rects);
        read_field(o, "cutout_min_area", cfg.object_model.cutout_min_area);
        read_field(o, "cutout_max_area", cfg.object_model.cutout_max_area);
        read_field(o, "cutout_fill", cfg.object_model.cutout_fill);
        read_field(o, "other_shift_frac", cfg.object_model.other_shift_frac);
    }
    if (j.contains("background_model")) {
        const json& b = j.at("background_model");
        check_keys(b,
                   {"width", "height", "latent_dim", "channels", "strides", "epochs",
                    "lr_drop_epoch", "batch_size", "lr", "beta", "frame_stride",
                    "sd_amplification", "frame_diff_threshold"},
                   "background_model");
        read_field(b, "width", cfg.background_model.width);
        read_field(b, "height", cfg.background_model.height);
        read_field(b, "latent_dim", cfg.background_model.latent_dim);
        read_field(b, "channels", cfg.background_model.channels);
        read_field(b, "strides", cfg.background_model.strides);
        read_field(b, "epochs", cfg.background_model.epochs);
        read_field(b, "lr_drop_epoch", cfg.background_model.lr_drop_epoch);
        read_field(b, "batch_size", cfg.background_model.batch_size);
        read_field(b, "lr", cfg.background_model.lr);
        read_field(b, "beta", cfg.background_model.beta);
        read_field(b, "frame_stride", cfg.background_model.frame_stride);
        read_field(b, "sd_amplification", cfg.background_model.sd_amplification);
        read_field(b, "frame_diff_threshold", cfg.background_model.frame_diff_threshold);
    }
    if (j.contains("scene")) {
        const json& s = j.at("scene");
        check_keys(s,
                   {"tau", "entropy_threshold", "normalized_entropy", "max_attempts", "k_min",
                    "k_max", "min_width", "max_width", "num_scenes", "conditional_threshold",
                    "conditional_fraction"},
                   "scene");
        read_field(s, "tau", cfg.scene.tau);
        read_field(s, "entropy_threshold", cfg.scene.entropy_threshold);
        read_field(s, "normalized_entropy", cfg.scene.normalized_entropy);
        read_field(s, "max_attempts", cfg.scene.max_attempts);
        read_field(s, "k_min", cfg.scene.k_min);
        read_field(s, "k_max", cfg.scene.k_max);
        read_field(s, "min_width", cfg.scene.min_width);
        read_field(s, "max_width", cfg.scene.max_width);
        read_field(s, "num_scenes", cfg.scene.num_scenes);
        read_field(s, "conditional_threshold", cfg.scene.conditional_threshold);
        read_field(s, "conditional_fraction", cfg.scene.conditional_fraction);
    }
    return cfg;
}

PipelineConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw input_error("cannot open config: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw config_error(std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

void apply_override(json& config, const std::string& key_eq_value) {
    const auto eq = key_eq_value.find('=');
    if (eq == std::string::npos) throw config_error("--set expects KEY=VALUE, got " + key_eq_value);
    const std::string key = key_eq_value.substr(0, eq);
    const std::string value = key_eq_value.substr(eq + 1);

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::parse_error&) {
        parsed = value;  // plain string
    }

    json* node = &config;
    size_t start = 0;
    for (;;) {
        const size_t dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
        if (part.empty()) throw config_error("--set: empty path segment in " + key);
        if (dot == std::string::npos) {
            (*node)[part] = parsed;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

// ---------------------------------------------------------------------------
// manifests

std::string file_hash_hex(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw input_error("cannot hash missing file: " + path);
    uint64_t h = 0xCBF29CE484222325ull;
    char buf[65536];
    while (is) {
        is.read(buf, sizeof(buf));
        const std::streamsize got = is.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001B3ull;
        }
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

namespace {

void write_manifest(const PipelineConfig& cfg, const std::string& subcommand,
                    std::vector<std::string> artifacts) {
    fs::create_directories(cfg.paths.report_dir);
    std::sort(artifacts.begin(), artifacts.end());
    json manifest;
    manifest["version"] = 1;
    manifest["subcommand"] = subcommand;
    manifest["seed"] = cfg.seed;
    manifest["config"] = config_to_json(cfg);
    json arts = json::array();
    for (const auto& path : artifacts) {
        json a;
        a["path"] = path;
        a["hash"] = file_hash_hex(path);
        arts.push_back(std::move(a));
    }
    manifest["artifacts"] = std::move(arts);
    const std::string out = (fs::path(cfg.paths.report_dir) / ("manifest_" + subcommand + ".json")).string();
    std::ofstream os(out);
    os << manifest.dump(2) << "\n";
    if (!os) throw input_error("write failed: " + out);
}

std::vector<std::string> files_under(const std::string& dir) {
    std::vector<std::string> out;
    if (!fs::exists(dir)) return out;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) out.push_back(entry.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

std::string video_dir(const PipelineConfig& cfg, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "video_%04d", i);
    return (fs::path(cfg.paths.dataset_dir) / buf).string();
}

std::vector<int> dataset_video_ids(const PipelineConfig& cfg) {
    std::vector<int> ids;
    for (int i = 0;; ++i) {
        if (!fs::exists(video_dir(cfg, i))) break;
        ids.push_back(i);
    }
    if (ids.empty()) throw input_error("no videos found under " + cfg.paths.dataset_dir);
    return ids;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    jobs = std::max(1, jobs);
    if (jobs == 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
    for (int t = 0; t < jobs; ++t) {
        workers.emplace_back([&, t]() {
            try {
                for (;;) {
                    const int i = next.fetch_add(1);
                    if (i >= n) break;
                    fn(i);
                }
            } catch (...) {
                errors[static_cast<size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::string label_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "labels_%04d.pgm", t);
    return buf;
}

// predicted segmentation layout inside a video directory
std::vector<LabelMap> read_predicted_labels(const std::string& vdir, int frames) {
    std::vector<LabelMap> out;
    const fs::path pred = fs::path(vdir) / "pred";
    if (!fs::exists(pred)) throw input_error("missing predictions under " + vdir + " (run segment)");
    for (int t = 0; t < frames; ++t) out.push_back(read_pgm16((pred / label_name(t)).string()));
    return out;
}

// ---------------------------------------------------------------------------
// subcommands

void run_gen_data(const PipelineConfig& cfg) {
    const auto gen = cfg.data.generator();
    parallel_for(cfg.data.num_videos, cfg.jobs, [&](int i) {
        const auto video = fishbowl::generate(gen, derive_seed(cfg.seed, "gen-data", static_cast<uint64_t>(i)));
        fishbowl::write_video(video_dir(cfg, i), video);
    });
    std::vector<std::string> artifacts;
    for (int i = 0; i < cfg.data.num_videos; ++i)
        for (auto& f : files_under(video_dir(cfg, i))) artifacts.push_back(std::move(f));
    write_manifest(cfg, "gen-data", std::move(artifacts));
}

void run_segment(const PipelineConfig& cfg) {
    const auto ids = dataset_video_ids(cfg);
    const auto params = cfg.segment.params();
    const auto sd = cfg.background_model.ensemble_config();
    parallel_for(static_cast<int>(ids.size()), cfg.jobs, [&](int idx) {
        const std::string vdir = video_dir(cfg, ids[static_cast<size_t>(idx)]);
        const auto video = fishbowl::read_video(vdir);
        const auto seg = moseg::segment_video(video.frames, video.flow, params);

        const fs::path pred = fs::path(vdir) / "pred";
        fs::create_directories(pred);
        for (int t = 0; t < static_cast<int>(seg.frames.size()); ++t)
            write_pgm16((pred / label_name(t)).string(), seg.frames[static_cast<size_t>(t)]);

        json table = json::array();
        for (const auto& obj : seg.table) {
            json o;
            o["label"] = obj.label;
            o["first_frame"] = obj.first_frame;
            o["last_frame"] = obj.last_frame;
            o["pixels"] = obj.pixels;
            table.push_back(std::move(o));
        }
        json objects;
        objects["objects"] = std::move(table);
        std::ofstream os(pred / "objects.json");
        os << objects.dump(2) << "\n";

        const auto fg = moseg::background_mask(video.frames, sd);
        json bgmask;
        json frames_json = json::array();
        for (const auto& m : fg) frames_json.push_back(json::parse(rle_to_json(rle_encode(m))));
        bgmask["foreground"] = std::move(frames_json);
        std::ofstream osb(pred / "bgmask.json");
        osb << bgmask.dump() << "\n";
    });
    std::vector<std::string> artifacts;
    for (int id : ids)
        for (auto& f : files_under((fs::path(video_dir(cfg, id)) / "pred").string()))
            artifacts.push_back(std::move(f));
    write_manifest(cfg, "segment", std::move(artifacts));
}

void run_extract(const PipelineConfig& cfg) {
    const auto ids = dataset_video_ids(cfg);
    const auto ecfg = cfg.extract.params();
    std::vector<std::vector<objmodel::ObjectCrop>> per_video(ids.size());
    parallel_for(static_cast<int>(ids.size()), cfg.jobs, [&](int idx) {
        const int id = ids[static_cast<size_t>(idx)];
        const auto video = fishbowl::read_video(video_dir(cfg, id));
        std::vector<LabelMap> labels;
        if (cfg.extract.use_ground_truth)
            labels = video.labels;
        else
            labels = read_predicted_labels(video_dir(cfg, id), static_cast<int>(video.frames.size()));
        per_video[static_cast<size_t>(idx)] = objmodel::extract_crops(video.frames, labels, ecfg, id);
    });
    std::vector<objmodel::ObjectCrop> crops;
    for (auto& v : per_video)
        for (auto& c : v) crops.push_back(std::move(c));
    const std::string crops_dir = (fs::path(cfg.paths.dataset_dir) / "crops").string();
    objmodel::write_crops(crops_dir, crops);
    write_manifest(cfg, "extract", files_under(crops_dir));
}

void run_train_object(const PipelineConfig& cfg) {
    const std::string crops_dir = (fs::path(cfg.paths.dataset_dir) / "crops").string();
    const auto crops = objmodel::read_crops(crops_dir);
    const VaeSpec spec = cfg.object_model.vae_spec(cfg.extract.crop_height, cfg.extract.crop_width);
    const auto result = objmodel::train_object_model(crops, spec, cfg.object_model.train_config(),
                                                     derive_seed(cfg.seed, "train-object", 0));
    fs::create_directories(cfg.paths.model_dir);
    const std::string weights = (fs::path(cfg.paths.model_dir) / "object_model.cfw").string();
    const std::string log = (fs::path(cfg.paths.model_dir) / "object_train_log.jsonl").string();
    save_weights(weights, vae_to_named(spec, result.params));
    objmodel::write_train_log(log, result.log);
    write_manifest(cfg, "train-object", {weights, log});
}

void run_train_bg(const PipelineConfig& cfg) {
    const auto ids = dataset_video_ids(cfg);
    const auto sd = cfg.background_model.ensemble_config();
    std::vector<bgmodel::BackgroundSample> samples;
    for (int id : ids) {
        const auto video = fishbowl::read_video(video_dir(cfg, id));
        const auto fg = moseg::background_mask(video.frames, sd);
        for (int t = 0; t < static_cast<int>(video.frames.size());
             t += cfg.background_model.frame_stride) {
            try {
                auto sample = bgmodel::prepare_background(video.frames[static_cast<size_t>(t)],
                                                          fg[static_cast<size_t>(t)],
                                                          cfg.background_model.width,
                                                          cfg.background_model.height);
                sample.video_id = id;
                sample.frame = t;
                samples.push_back(std::move(sample));
            } catch (const numeric_error&) {
                // all-foreground frame, skipped
            }
        }
    }
    const VaeSpec spec = cfg.background_model.vae_spec();
    const auto result = bgmodel::train_background_model(samples, spec,
                                                        cfg.background_model.train_config(),
                                                        derive_seed(cfg.seed, "train-bg", 0));
    fs::create_directories(cfg.paths.model_dir);
    const std::string weights = (fs::path(cfg.paths.model_dir) / "background_model.cfw").string();
    const std::string log = (fs::path(cfg.paths.model_dir) / "background_train_log.jsonl").string();
    save_weights(weights, vae_to_named(spec, result.params));
    objmodel::write_train_log(log, result.log);
    write_manifest(cfg, "train-bg", {weights, log});
}

struct LoadedModels {
    VaeSpec object_spec, background_spec;
    VaeParams object_params, background_params;
    scene::Models models() const {
        scene::Models m;
        m.object_spec = &object_spec;
        m.object_params = &object_params;
        m.background_spec = &background_spec;
        m.background_params = &background_params;
        return m;
    }
};

LoadedModels load_models(const PipelineConfig& cfg) {
    LoadedModels lm;
    lm.object_spec = cfg.object_model.vae_spec(cfg.extract.crop_height, cfg.extract.crop_width);
    lm.background_spec = cfg.background_model.vae_spec();
    lm.object_params = vae_from_named(
        lm.object_spec,
        load_weights((fs::path(cfg.paths.model_dir) / "object_model.cfw").string()));
    lm.background_params = vae_from_named(
        lm.background_spec,
        load_weights((fs::path(cfg.paths.model_dir) / "background_model.cfw").string()));
    return lm;
}

void run_build_latent_bank(const PipelineConfig& cfg) {
    const auto lm = load_models(cfg);
    const auto ids = dataset_video_ids(cfg);
    const std::string crops_dir = (fs::path(cfg.paths.dataset_dir) / "crops").string();
    const auto crops = objmodel::read_crops(crops_dir);
    const auto sd = cfg.background_model.ensemble_config();

    std::vector<scene::LatentBankEntry> bank;
    for (int id : ids) {
        const auto video = fishbowl::read_video(video_dir(cfg, id));
        const auto fg = moseg::background_mask(video.frames, sd);
        scene::LatentBankEntry entry;
        const auto bg_sample = bgmodel::prepare_background(video.frames[0], fg[0],
                                                           cfg.background_model.width,
                                                           cfg.background_model.height);
        const auto bg_fwd = vae_forward_mean(lm.background_spec, lm.background_params, bg_sample.image);
        entry.z_bg = bg_fwd.mu;
        for (const auto& crop : crops) {
            if (crop.video_id != id) continue;
            const auto recon = objmodel::reconstruct(lm.object_spec, lm.object_params, crop.image);
            entry.z_objects.push_back(recon.mu);
        }
        bank.push_back(std::move(entry));
    }
    fs::create_directories(cfg.paths.model_dir);
    const std::string path = (fs::path(cfg.paths.model_dir) / "latent_bank.json").string();
    scene::write_latent_bank(path, bank);
    write_manifest(cfg, "build-latent-bank", {path});
}

void run_sample_scene(const PipelineConfig& cfg) {
    const auto lm = load_models(cfg);
    const auto scfg = cfg.scene.sampler(cfg.data.width, cfg.data.height);
    const fs::path out_dir = fs::path(cfg.paths.report_dir) / "scenes";
    fs::create_directories(out_dir);
    std::vector<std::string> artifacts;
    for (int i = 0; i < cfg.scene.num_scenes; ++i) {
        const auto sampled = scene::sample_scene(lm.models(), scfg,
                                                 derive_seed(cfg.seed, "sample-scene", static_cast<uint64_t>(i)));
        char buf[32];
        std::snprintf(buf, sizeof(buf), "scene_%03d", i);
        const std::string img_path = (out_dir / (std::string(buf) + ".ppm")).string();
        const std::string spec_path = (out_dir / (std::string(buf) + ".json")).string();
        write_ppm(img_path, to_u8(sampled.composed.image));
        std::ofstream os(spec_path);
        os << scene::scene_to_json(sampled.spec) << "\n";
        artifacts.push_back(img_path);
        artifacts.push_back(spec_path);
    }
    write_manifest(cfg, "sample-scene", std::move(artifacts));
}

void run_intervene(const PipelineConfig& cfg) {
    const auto lm = load_models(cfg);
    const auto scfg = cfg.scene.sampler(cfg.data.width, cfg.data.height);
    const auto models = lm.models();
    const fs::path out_dir = fs::path(cfg.paths.report_dir) / "interventions";
    fs::create_directories(out_dir);

    const auto base = scene::sample_scene(models, scfg, derive_seed(cfg.seed, "intervene-base", 0));
    std::vector<std::string> artifacts;
    auto emit = [&](const std::string& name, int idx, const scene::SceneSpec& spec) {
        const auto composed = scene::compose(models, spec.z_bg, spec.placements, scfg);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s_%02d.ppm", name.c_str(), idx);
        const std::string path = (out_dir / buf).string();
        write_ppm(path, to_u8(composed.image));
        artifacts.push_back(path);
    };
    emit("base", 0, base.spec);

    // (i) object count sweep
    for (int k = 0; k <= std::min(cfg.scene.k_max + 2, 8); k += 2) {
        scene::Intervention iv;
        iv.kind = scene::Intervention::Kind::set_count;
        iv.count = k;
        iv.seed = derive_seed(cfg.seed, "intervene-count", static_cast<uint64_t>(k));
        emit("count", k, scene::intervene(base.spec, iv, models, scfg));
    }
    // (ii) resample identities
    if (!base.spec.placements.empty()) {
        for (int r = 0; r < 3; ++r) {
            scene::Intervention iv;
            iv.kind = scene::Intervention::Kind::resample_appearance;
            iv.index = r % static_cast<int>(base.spec.placements.size());
            iv.seed = derive_seed(cfg.seed, "intervene-appearance", static_cast<uint64_t>(r));
            emit("identity", r, scene::intervene(base.spec, iv, models, scfg));
        }
        // (iii) scale sweep of object 0
        int idx = 0;
        for (double width : {scfg.min_width, (scfg.min_width + scfg.max_width) / 2, scfg.max_width}) {
            scene::Intervention iv;
            iv.kind = scene::Intervention::Kind::set_scale;
            iv.index = 0;
            iv.width = width;
            iv.height = width / 2;
            emit("scale", idx++, scene::intervene(base.spec, iv, models, scfg));
        }
    }
    // (iv) background swaps
    for (int r = 0; r < 3; ++r) {
        Rng rng(derive_seed(cfg.seed, "intervene-bg", static_cast<uint64_t>(r)));
        Tensor z({lm.background_spec.latent_dim});
        for (int64_t i = 0; i < z.numel(); ++i) z[i] = static_cast<float>(rng.normal());
        scene::Intervention iv;
        iv.kind = scene::Intervention::Kind::swap_background;
        iv.z_bg = z;
        emit("background", r, scene::intervene(base.spec, iv, models, scfg));
    }
    // (v) location resampling
    for (int r = 0; r < 3; ++r) {
        scene::Intervention iv;
        iv.kind = scene::Intervention::Kind::resample_positions;
        iv.seed = derive_seed(cfg.seed, "intervene-positions", static_cast<uint64_t>(r));
        emit("positions", r, scene::intervene(base.spec, iv, models, scfg));
    }
    write_manifest(cfg, "intervene", std::move(artifacts));
}

void run_evaluate(const PipelineConfig& cfg) {
    const auto ids = dataset_video_ids(cfg);

    std::vector<eval::SegScores> seg_scores(ids.size());
    std::vector<char> have_seg(ids.size(), 0);
    parallel_for(static_cast<int>(ids.size()), cfg.jobs, [&](int idx) {
        const int id = ids[static_cast<size_t>(idx)];
        const auto video = fishbowl::read_video(video_dir(cfg, id));
        const fs::path pred = fs::path(video_dir(cfg, id)) / "pred";
        if (!fs::exists(pred)) return;
        const auto predicted =
            read_predicted_labels(video_dir(cfg, id), static_cast<int>(video.frames.size()));
        seg_scores[static_cast<size_t>(idx)] = eval::score_segmentation(predicted, video.labels);
        have_seg[static_cast<size_t>(idx)] = 1;
    });

    json report;
    report["version"] = 1;
    report["seed"] = cfg.seed;
    report["config"] = config_to_json(cfg);

    std::vector<eval::SegScores> collected;
    json per_video = json::array();
    for (size_t i = 0; i < ids.size(); ++i) {
        if (!have_seg[i]) continue;
        collected.push_back(seg_scores[i]);
        json v;
        v["video"] = ids[i];
        v["background_iou"] = seg_scores[i].background_iou;
        v["object_iou"] = seg_scores[i].object_iou;
        v["recall_at_0"] = seg_scores[i].recall_at_0;
        v["recall_at_05"] = seg_scores[i].recall_at_05;
        v["num_gt_objects"] = seg_scores[i].num_gt_objects;
        per_video.push_back(std::move(v));
    }
    std::ostringstream table;
    if (!collected.empty()) {
        const auto avg = eval::average_scores(collected);
        report["segmentation"] = {{"per_video", per_video},
                                  {"background_iou", avg.background_iou},
                                  {"object_iou", avg.object_iou},
                                  {"recall_at_0", avg.recall_at_0},
                                  {"recall_at_05", avg.recall_at_05},
                                  {"num_gt_objects", avg.num_gt_objects}};
        table << "Motion segmentation (" << collected.size() << " videos)\n";
        table << "                         IoU                  Recall\n";
        table << "Flow          Background    Objects    @0.0      @0.5\n";
        char line[128];
        std::snprintf(line, sizeof(line), "%-12s  %-12.3f  %-9.3f  %-8.3f  %-8.3f\n",
                      cfg.data.flow_noise_sigma > 0 ? "noisy-gt" : "ground-truth",
                      avg.background_iou, avg.object_iou, avg.recall_at_0, avg.recall_at_05);
        table << line << "\n";
    }

    // object model reconstruction scores when a trained model is available
    const std::string obj_weights = (fs::path(cfg.paths.model_dir) / "object_model.cfw").string();
    if (fs::exists(obj_weights)) {
        const VaeSpec spec = cfg.object_model.vae_spec(cfg.extract.crop_height, cfg.extract.crop_width);
        const VaeParams params = vae_from_named(spec, load_weights(obj_weights));
        std::vector<eval::ReconEvalSample> samples;
        for (int id : ids) {
            const auto video = fishbowl::read_video(video_dir(cfg, id));
            auto s = eval::make_recon_eval_set(video, cfg.extract.crop_width,
                                               cfg.extract.crop_height);
            for (auto& x : s) samples.push_back(std::move(x));
        }
        const auto model_scores = eval::score_reconstructions(spec, params, samples);
        const auto baseline = eval::score_baseline(samples);
        report["object_model"] = {{"iou", model_scores.iou},
                                  {"mae", model_scores.mae},
                                  {"iou_at_05", model_scores.iou_at_05},
                                  {"mae_at_05", model_scores.mae_at_05},
                                  {"n", model_scores.n},
                                  {"n_at_05", model_scores.n_at_05},
                                  {"mae_excluded", model_scores.mae_excluded}};
        report["baseline"] = {{"iou", baseline.iou}, {"iou_at_05", baseline.iou_at_05}};
        table << "Object model reconstruction (" << model_scores.n << " crops, " << model_scores.n_at_05
              << " with visibility <= 0.5)\n";
        table << "Variant        IoU      MAE      IoU@0.5  MAE@0.5\n";
        char line[128];
        std::snprintf(line, sizeof(line), "%-12s  %-7.3f  %-7.1f  %-7.3f  %-7.1f\n",
                      cfg.object_model.augmentation.c_str(), model_scores.iou, model_scores.mae,
                      model_scores.iou_at_05, model_scores.mae_at_05);
        table << line;
        std::snprintf(line, sizeof(line), "%-12s  %-7.3f  %-7s  %-7.3f  %-7s\n", "baseline",
                      baseline.iou, "-", baseline.iou_at_05, "-");
        table << line;
    }

    fs::create_directories(cfg.paths.report_dir);
    const std::string report_path = (fs::path(cfg.paths.report_dir) / "report.json").string();
    const std::string table_path = (fs::path(cfg.paths.report_dir) / "tables.txt").string();
    std::ofstream os(report_path);
    os << report.dump(2) << "\n";
    std::ofstream ts(table_path);
    ts << table.str();
    write_manifest(cfg, "evaluate", {report_path, table_path});
}

void run_grad_check_cmd(const PipelineConfig& cfg) {
    const auto report = run_grad_checks(cfg.seed);
    fs::create_directories(cfg.paths.report_dir);
    const std::string path = (fs::path(cfg.paths.report_dir) / "grad_check.json").string();
    json j;
    j["tolerance"] = report.tolerance;
    j["pass"] = report.all_pass();
    json cases = json::array();
    for (const auto& c : report.cases) {
        json cj;
        cj["name"] = c.name;
        cj["max_rel_err"] = c.max_rel_err;
        cj["pass"] = c.pass;
        cases.push_back(std::move(cj));
    }
    j["cases"] = std::move(cases);
    std::ofstream os(path);
    os << j.dump(2) << "\n";
    write_manifest(cfg, "grad-check", {path});
    if (!report.all_pass()) throw numeric_error("gradient check failed; see " + path);
}

}  // namespace

const std::vector<std::string>& subcommand_names() {
    static const std::vector<std::string> names = {
        "gen-data",  "segment",   "extract",           "train-object", "train-bg",
        "build-latent-bank", "sample-scene", "intervene", "evaluate",     "grad-check"};
    return names;
}

void run_subcommand(const std::string& name, const PipelineConfig& cfg) {
    if (name == "gen-data") run_gen_data(cfg);
    else if (name == "segment") run_segment(cfg);
    else if (name == "extract") run_extract(cfg);
    else if (name == "train-object") run_train_object(cfg);
    else if (name == "train-bg") run_train_bg(cfg);
    else if (name == "build-latent-bank") run_build_latent_bank(cfg);
    else if (name == "sample-scene") run_sample_scene(cfg);
    else if (name == "intervene") run_intervene(cfg);
    else if (name == "evaluate") run_evaluate(cfg);
    else if (name == "grad-check") run_grad_check_cmd(cfg);
    else throw config_error("unknown subcommand: " + name);
}

}  // namespace cfate::pipeline
