#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cfate/pipeline.hpp"
#include "cfate/rng.hpp"

using namespace cfate;
using namespace cfate::pipeline;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_config(const std::string& root) {
    PipelineConfig cfg;
    cfg.seed = 7;
    cfg.paths.dataset_dir = root + "/data";
    cfg.paths.model_dir = root + "/models";
    cfg.paths.report_dir = root + "/report";
    cfg.data.num_videos = 2;
    cfg.data.width = 64;
    cfg.data.height = 48;
    cfg.data.frames = 8;
    cfg.data.min_sprites = 1;
    cfg.data.max_sprites = 2;
    cfg.data.min_size = 18;
    cfg.data.max_size = 24;
    cfg.extract.crop_width = 16;
    cfg.extract.crop_height = 8;
    cfg.extract.min_area = 32;
    cfg.extract.min_border_distance = 2;
    cfg.extract.use_ground_truth = true;
    cfg.object_model.latent_dim = 4;
    cfg.object_model.channels = {4, 8};
    cfg.object_model.strides = {2, 2};
    cfg.object_model.epochs = 2;
    cfg.object_model.lr_drop_epoch = 2;
    cfg.background_model.width = 12;
    cfg.background_model.height = 8;
    cfg.background_model.latent_dim = 3;
    cfg.background_model.channels = {4, 8};
    cfg.background_model.strides = {2, 2};
    cfg.background_model.epochs = 2;
    cfg.background_model.lr_drop_epoch = 2;
    cfg.background_model.frame_stride = 4;
    cfg.scene.num_scenes = 2;
    cfg.scene.k_min = 1;
    cfg.scene.k_max = 2;
    cfg.scene.min_width = 8;
    cfg.scene.max_width = 20;
    cfg.scene.entropy_threshold = 1e18;  // untrained nets: skip rejection
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config JSON round-trips and rejects unknown keys") {
    const PipelineConfig cfg;
    const auto j = config_to_json(cfg);
    const PipelineConfig back = config_from_json(j);
    CHECK(config_to_json(back) == j);

    auto bad = j;
    bad["segment"]["no_such_knob"] = 1;
    CHECK_THROWS_AS(config_from_json(bad), config_error);
    auto bad2 = j;
    bad2["typo_section"] = nlohmann::json::object();
    CHECK_THROWS_AS(config_from_json(bad2), config_error);
}

TEST_CASE("dotted overrides parse numbers, bools and strings") {
    auto j = config_to_json(PipelineConfig{});
    apply_override(j, "segment.fb_threshold=0.75");
    apply_override(j, "extract.use_ground_truth=true");
    apply_override(j, "object_model.augmentation=cutout");
    apply_override(j, "object_model.channels=[2,4]");
    const PipelineConfig cfg = config_from_json(j);
    CHECK(cfg.segment.fb_threshold == doctest::Approx(0.75));
    CHECK(cfg.extract.use_ground_truth == true);
    CHECK(cfg.object_model.augmentation == "cutout");
    CHECK(cfg.object_model.channels == std::vector<int>{2, 4});
    CHECK_THROWS_AS(apply_override(j, "nonsense"), config_error);
}

TEST_CASE("gen-data twice with one seed produces byte-identical datasets") {
    const std::string root = (fs::temp_directory_path() / "cfate_test_gen").string();
    fs::remove_all(root);
    auto cfg_a = tiny_config(root + "/a");
    auto cfg_b = tiny_config(root + "/b");
    run_subcommand("gen-data", cfg_a);
    run_subcommand("gen-data", cfg_b);

    for (int v = 0; v < cfg_a.data.num_videos; ++v) {
        char name[32];
        std::snprintf(name, sizeof(name), "video_%04d", v);
        const fs::path da = fs::path(cfg_a.paths.dataset_dir) / name;
        const fs::path db = fs::path(cfg_b.paths.dataset_dir) / name;
        for (const auto& entry : fs::recursive_directory_iterator(da)) {
            if (!entry.is_regular_file()) continue;
            const auto rel = fs::relative(entry.path(), da);
            REQUIRE(slurp(entry.path().string()) == slurp((db / rel).string()));
        }
    }
    fs::remove_all(root);
}

TEST_CASE("pipeline smoke: gen-data through evaluate emits reports and manifests") {
    const std::string root = (fs::temp_directory_path() / "cfate_test_pipeline").string();
    fs::remove_all(root);
    const auto cfg = tiny_config(root);

    run_subcommand("gen-data", cfg);
    run_subcommand("segment", cfg);
    run_subcommand("extract", cfg);
    run_subcommand("train-object", cfg);
    run_subcommand("train-bg", cfg);
    run_subcommand("build-latent-bank", cfg);
    run_subcommand("sample-scene", cfg);
    run_subcommand("evaluate", cfg);

    CHECK(fs::exists(fs::path(cfg.paths.report_dir) / "report.json"));
    CHECK(fs::exists(fs::path(cfg.paths.report_dir) / "tables.txt"));
    CHECK(fs::exists(fs::path(cfg.paths.model_dir) / "object_model.cfw"));
    CHECK(fs::exists(fs::path(cfg.paths.model_dir) / "background_model.cfw"));
    CHECK(fs::exists(fs::path(cfg.paths.model_dir) / "latent_bank.json"));
    for (const char* name : {"gen-data", "segment", "extract", "train-object", "train-bg",
                             "build-latent-bank", "sample-scene", "evaluate"}) {
        CHECK(fs::exists(fs::path(cfg.paths.report_dir) / (std::string("manifest_") + name + ".json")));
    }

    // evaluate on predictions == ground truth gives all IoU 1
    {
        auto gt_cfg = cfg;
        gt_cfg.paths.report_dir = root + "/report_gt";
        // overwrite predictions with the ground truth labels
        for (int v = 0; v < cfg.data.num_videos; ++v) {
            char name[32];
            std::snprintf(name, sizeof(name), "video_%04d", v);
            const fs::path vdir = fs::path(cfg.paths.dataset_dir) / name;
            const auto video = fishbowl::read_video(vdir.string());
            for (int t = 0; t < static_cast<int>(video.labels.size()); ++t) {
                char lname[32];
                std::snprintf(lname, sizeof(lname), "labels_%04d.pgm", t);
                write_pgm16((vdir / "pred" / lname).string(), video.labels[static_cast<size_t>(t)]);
            }
        }
        run_subcommand("evaluate", gt_cfg);
        const auto report = nlohmann::json::parse(slurp(root + "/report_gt/report.json"));
        CHECK(report.at("segmentation").at("background_iou").get<double>() == doctest::Approx(1.0));
        CHECK(report.at("segmentation").at("object_iou").get<double>() == doctest::Approx(1.0));
        CHECK(report.at("segmentation").at("recall_at_05").get<double>() == doctest::Approx(1.0));
    }
    fs::remove_all(root);
}

TEST_CASE("missing inputs raise input errors") {
    const std::string root = (fs::temp_directory_path() / "cfate_test_missing").string();
    fs::remove_all(root);
    const auto cfg = tiny_config(root);
    CHECK_THROWS_AS(run_subcommand("segment", cfg), input_error);
    CHECK_THROWS_AS(run_subcommand("train-object", cfg), input_error);
    CHECK_THROWS_AS(run_subcommand("evaluate", cfg), input_error);
    fs::remove_all(root);
}

TEST_CASE("unknown subcommands are config errors") {
    CHECK_THROWS_AS(run_subcommand("frobnicate", PipelineConfig{}), config_error);
}
