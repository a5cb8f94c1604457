#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cfate/rng.hpp"
#include "cfate/scene_model.hpp"

using namespace cfate;
using namespace cfate::scene;

namespace {

struct Fixture {
    VaeSpec object_spec;
    VaeSpec background_spec;
    VaeParams object_params;
    VaeParams background_params;

    Fixture() {
        Rng rng(99);
        object_spec = make_vae_spec(8, 16, {4, 8}, {2, 2}, 6, true);
        background_spec = make_vae_spec(8, 12, {4, 8}, {2, 2}, 4, false);
        object_params = init_vae<float>(object_spec, rng);
        background_params = init_vae<float>(background_spec, rng);
    }
    Models models() const {
        Models m;
        m.object_spec = &object_spec;
        m.object_params = &object_params;
        m.background_spec = &background_spec;
        m.background_params = &background_params;
        return m;
    }
    SamplerConfig sampler() const {
        SamplerConfig cfg;
        cfg.canvas_w = 64;
        cfg.canvas_h = 48;
        cfg.min_width = 10;
        cfg.max_width = 28;
        cfg.k_min = 1;
        cfg.k_max = 4;
        cfg.entropy_threshold = 1e18;  // effectively no rejection for a random net
        return cfg;
    }
};

}  // namespace

TEST_CASE("sharpen_mask: fixed point at zero, direct evaluation, monotone in 1/tau") {
    const Tensor logits({3}, {0.0f, 0.2303f, -1.0f});
    for (double tau : {0.05, 0.1, 1.0}) {
        const Tensor m = sharpen_mask(logits, tau);
        CHECK(m[0] == doctest::Approx(0.5));
    }
    const Tensor m01 = sharpen_mask(logits, 0.1);
    CHECK(m01[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.303))).epsilon(1e-4));
    // sigma(2.303) ~ 0.909
    CHECK(m01[1] == doctest::Approx(0.909).epsilon(1e-3));

    // positive logits approach 1 monotonically as tau shrinks
    double prev = 0;
    for (double tau : {1.0, 0.5, 0.2, 0.1, 0.05}) {
        const double v = sharpen_mask(logits, tau)[1];
        CHECK(v >= prev);
        prev = v;
    }
    CHECK_THROWS_AS(sharpen_mask(logits, 0.0), config_error);
}

TEST_CASE("mask_entropy: binary masks are 0 bits, all-0.5 masks are 1 bit/px") {
    Tensor binary({4, 4});
    for (int i = 0; i < 16; ++i) binary[i] = i % 2 ? 1.0f : 0.0f;
    CHECK(mask_entropy(binary) == doctest::Approx(0.0));

    Tensor half({128, 64});
    for (auto& v : half.values) v = 0.5f;
    CHECK(mask_entropy(half) == doctest::Approx(8192.0));  // total-bits convention
    CHECK(mask_entropy(half, true) == doctest::Approx(1.0));

    // additivity: half the pixels at 0.5, rest binary -> half the bits
    Tensor mixed({128, 64});
    for (int64_t i = 0; i < mixed.numel(); ++i) mixed[i] = i < mixed.numel() / 2 ? 0.5f : 1.0f;
    CHECK(mask_entropy(mixed) == doctest::Approx(4096.0));
}

TEST_CASE("compose: empty placement list returns the background unchanged") {
    const Fixture fx;
    const auto cfg = fx.sampler();
    Rng rng(3);
    Tensor z_bg({4});
    for (int64_t i = 0; i < 4; ++i) z_bg[i] = static_cast<float>(rng.normal());
    const ComposeResult result = compose(fx.models(), z_bg, {}, cfg);
    const Tensor bg = bgmodel::upsample_to(
        bgmodel::sample_background(fx.background_spec, fx.background_params, z_bg), cfg.canvas_w,
        cfg.canvas_h);
    for (int y = 0; y < cfg.canvas_h; ++y)
        for (int x = 0; x < cfg.canvas_w; ++x) {
            CHECK(result.provenance.at(x, y) == 0);
            for (int c = 0; c < 3; ++c)
                CHECK(result.image.at(x, y, c) ==
                      bg[(static_cast<int64_t>(c) * cfg.canvas_h + y) * cfg.canvas_w + x]);
        }
}

TEST_CASE("compose: overlap is owned by the later-placed object") {
    const Fixture fx;
    const auto cfg = fx.sampler();
    Rng rng(4);
    Tensor z_bg({4});
    ObjectPlacement a, b;
    a.z_app = Tensor({6});
    b.z_app = Tensor({6});
    for (int64_t i = 0; i < 6; ++i) {
        a.z_app[i] = static_cast<float>(rng.normal());
        b.z_app[i] = static_cast<float>(rng.normal());
    }
    a.x = b.x = 32;
    a.y = b.y = 24;
    a.width = b.width = 20;
    a.height = b.height = 10;
    const ComposeResult ab = compose(fx.models(), z_bg, {a, b}, cfg);
    const ComposeResult only_b = compose(fx.models(), z_bg, {b}, cfg);
    // pixels covered by b look identical whether or not a sits underneath
    for (int y = 0; y < cfg.canvas_h; ++y)
        for (int x = 0; x < cfg.canvas_w; ++x)
            if (only_b.provenance.at(x, y) == 1) {
                REQUIRE(ab.provenance.at(x, y) == 2);
                for (int c = 0; c < 3; ++c)
                    REQUIRE(ab.image.at(x, y, c) == only_b.image.at(x, y, c));
            }
}

TEST_CASE("compose: fully off-canvas placements contribute nothing") {
    const Fixture fx;
    const auto cfg = fx.sampler();
    Tensor z_bg({4});
    ObjectPlacement far;
    far.z_app = Tensor({6});
    far.x = -500;
    far.y = -500;
    far.width = 20;
    far.height = 10;
    const ComposeResult result = compose(fx.models(), z_bg, {far}, cfg);
    for (uint16_t v : result.provenance.data) CHECK(v == 0);
}

TEST_CASE("sample_scene: deterministic per seed; K=0 equals the background") {
    const Fixture fx;
    auto cfg = fx.sampler();
    const SampledScene a = sample_scene(fx.models(), cfg, 123);
    const SampledScene b = sample_scene(fx.models(), cfg, 123);
    CHECK(a.composed.image.data == b.composed.image.data);
    CHECK(a.spec.placements.size() == b.spec.placements.size());

    cfg.k_min = cfg.k_max = 0;
    const SampledScene empty = sample_scene(fx.models(), cfg, 9);
    CHECK(empty.spec.placements.empty());
    for (uint16_t v : empty.composed.provenance.data) CHECK(v == 0);
}

TEST_CASE("sample_scene: scale prior bounds are respected at a 2:1 ratio") {
    const Fixture fx;
    auto cfg = fx.sampler();
    cfg.k_min = cfg.k_max = 4;
    for (uint64_t seed = 0; seed < 25; ++seed) {
        const SampledScene s = sample_scene(fx.models(), cfg, seed);
        for (const auto& pl : s.spec.placements) {
            CHECK(pl.width >= cfg.min_width);
            CHECK(pl.width <= cfg.max_width);
            CHECK(pl.height == doctest::Approx(pl.width / 2.0));
            CHECK(pl.x >= 0);
            CHECK(pl.x <= cfg.canvas_w);
            CHECK(pl.y >= 0);
            CHECK(pl.y <= cfg.canvas_h);
        }
    }
}

TEST_CASE("entropy rejection: threshold infinity accepts the first draw") {
    const Fixture fx;
    auto cfg = fx.sampler();
    cfg.entropy_threshold = 1e18;
    Rng rng_a(7), rng_b(7);
    const Tensor accepted = sample_object_latent(fx.models(), cfg, rng_a);
    // an identical stream's first latent_dim normals must match
    Tensor first({fx.object_spec.latent_dim});
    for (int64_t i = 0; i < first.numel(); ++i) first[i] = static_cast<float>(rng_b.normal());
    CHECK(accepted.values == first.values);
}

TEST_CASE("entropy rejection: acceptance is monotone in the threshold") {
    const Fixture fx;
    auto cfg = fx.sampler();
    // fixed latent stream: acceptance sets grow with the threshold
    const int n = 1000;
    std::vector<double> entropies;
    Rng rng(2020);
    for (int i = 0; i < n; ++i) {
        Tensor z({fx.object_spec.latent_dim});
        for (int64_t k = 0; k < z.numel(); ++k) z[k] = static_cast<float>(rng.normal());
        const Tensor logits =
            forward(fx.object_spec.decoder_mask, fx.object_params.dec_mask, z);
        entropies.push_back(mask_entropy(sharpen_mask(logits, cfg.tau)));
    }
    int prev_accepted = -1;
    for (double threshold : {10.0, 30.0, 60.0, 100.0, 150.0, 1e6}) {
        int accepted = 0;
        for (double e : entropies)
            if (e <= threshold) ++accepted;
        CHECK(accepted >= prev_accepted);
        prev_accepted = accepted;
    }
}

TEST_CASE("rejection budget exhaustion raises a sampling error naming the threshold") {
    const Fixture fx;
    auto cfg = fx.sampler();
    cfg.entropy_threshold = -1.0;  // nothing can pass
    cfg.max_attempts = 5;
    Rng rng(1);
    CHECK_THROWS_AS(sample_object_latent(fx.models(), cfg, rng), sampling_error);
}

TEST_CASE("intervene: swap-background changes only non-object pixels") {
    const Fixture fx;
    auto cfg = fx.sampler();
    cfg.k_min = cfg.k_max = 2;
    const SampledScene base = sample_scene(fx.models(), cfg, 5);
    Rng rng(6);
    Intervention iv;
    iv.kind = Intervention::Kind::swap_background;
    iv.z_bg = Tensor({4});
    for (int64_t i = 0; i < 4; ++i) iv.z_bg[i] = static_cast<float>(rng.normal());
    const SceneSpec swapped = intervene(base.spec, iv, fx.models(), cfg);
    const ComposeResult recomposed = compose(fx.models(), swapped.z_bg, swapped.placements, cfg);

    for (int y = 0; y < cfg.canvas_h; ++y)
        for (int x = 0; x < cfg.canvas_w; ++x) {
            if (base.composed.provenance.at(x, y) != 0) {
                // pixels under object masks stay bit-identical
                REQUIRE(recomposed.provenance.at(x, y) == base.composed.provenance.at(x, y));
                for (int c = 0; c < 3; ++c)
                    REQUIRE(recomposed.image.at(x, y, c) == base.composed.image.at(x, y, c));
            }
        }
}

TEST_CASE("intervene: set-count appends while keeping existing placements bit-identical") {
    const Fixture fx;
    auto cfg = fx.sampler();
    cfg.k_min = cfg.k_max = 2;
    const SampledScene base = sample_scene(fx.models(), cfg, 8);
    Intervention iv;
    iv.kind = Intervention::Kind::set_count;
    iv.count = 3;
    iv.seed = 77;
    const SceneSpec more = intervene(base.spec, iv, fx.models(), cfg);
    REQUIRE(more.placements.size() == 3);
    for (size_t k = 0; k < 2; ++k) {
        CHECK(more.placements[k].z_app.values == base.spec.placements[k].z_app.values);
        CHECK(more.placements[k].x == base.spec.placements[k].x);
        CHECK(more.placements[k].width == base.spec.placements[k].width);
    }
    CHECK(more.z_bg.values == base.spec.z_bg.values);

    Intervention fewer;
    fewer.kind = Intervention::Kind::set_count;
    fewer.count = 1;
    const SceneSpec less = intervene(base.spec, fewer, fx.models(), cfg);
    CHECK(less.placements.size() == 1);
}

TEST_CASE("intervene: resample-positions is deterministic in its seed") {
    const Fixture fx;
    auto cfg = fx.sampler();
    cfg.k_min = cfg.k_max = 3;
    const SampledScene base = sample_scene(fx.models(), cfg, 2);
    Intervention iv;
    iv.kind = Intervention::Kind::resample_positions;
    iv.seed = 31;
    const SceneSpec a = intervene(base.spec, iv, fx.models(), cfg);
    const SceneSpec b = intervene(base.spec, iv, fx.models(), cfg);
    for (size_t k = 0; k < a.placements.size(); ++k) {
        CHECK(a.placements[k].x == b.placements[k].x);
        CHECK(a.placements[k].y == b.placements[k].y);
        // appearance untouched
        CHECK(a.placements[k].z_app.values == base.spec.placements[k].z_app.values);
    }
}

TEST_CASE("intervene: out-of-range index is an error") {
    const Fixture fx;
    const auto cfg = fx.sampler();
    const SampledScene base = sample_scene(fx.models(), cfg, 4);
    Intervention iv;
    iv.kind = Intervention::Kind::set_scale;
    iv.index = 99;
    iv.width = 10;
    iv.height = 5;
    CHECK_THROWS_AS(intervene(base.spec, iv, fx.models(), cfg), input_error);
}

TEST_CASE("conditional_sample: fraction 1 pools the whole bank; single entry dominates") {
    const Fixture fx;
    auto cfg = fx.sampler();
    cfg.k_min = cfg.k_max = 3;
    Rng rng(10);

    std::vector<LatentBankEntry> bank;
    for (int i = 0; i < 4; ++i) {
        LatentBankEntry e;
        e.z_bg = Tensor({4});
        for (int64_t k = 0; k < 4; ++k) e.z_bg[k] = static_cast<float>(i);
        Tensor z({6});
        for (int64_t k = 0; k < 6; ++k) z[k] = static_cast<float>(i + 1);
        e.z_objects = {z};
        bank.push_back(std::move(e));
    }
    CHECK_THROWS_AS(conditional_sample(fx.models(), {}, Tensor({4}), 0.5, cfg, 1), input_error);

    // query exactly at bank entry 2 with a tiny fraction -> latents only from it
    Tensor query({4});
    for (int64_t k = 0; k < 4; ++k) query[k] = 2.0f;
    const SceneSpec picked = conditional_sample(fx.models(), bank, query, 0.01, cfg, 5);
    for (const auto& pl : picked.placements)
        for (int64_t k = 0; k < 6; ++k) CHECK(pl.z_app[k] == 3.0f);
}

TEST_CASE("conditional_sample: planted near cluster is selected at fraction 0.5") {
    const Fixture fx;
    auto cfg = fx.sampler();
    cfg.k_min = cfg.k_max = 4;
    std::vector<LatentBankEntry> bank;
    // near cluster: z_bg ~ 0, object latents tagged 1; far cluster tagged 2
    for (int i = 0; i < 3; ++i) {
        LatentBankEntry e;
        e.z_bg = Tensor({4});
        for (int64_t k = 0; k < 4; ++k) e.z_bg[k] = 0.01f * static_cast<float>(i);
        Tensor z({6});
        for (int64_t k = 0; k < 6; ++k) z[k] = 1.0f;
        e.z_objects = {z};
        bank.push_back(std::move(e));
    }
    for (int i = 0; i < 3; ++i) {
        LatentBankEntry e;
        e.z_bg = Tensor({4});
        for (int64_t k = 0; k < 4; ++k) e.z_bg[k] = 50.0f + static_cast<float>(i);
        Tensor z({6});
        for (int64_t k = 0; k < 6; ++k) z[k] = 2.0f;
        e.z_objects = {z};
        bank.push_back(std::move(e));
    }
    const SceneSpec out = conditional_sample(fx.models(), bank, Tensor({4}), 0.5, cfg, 9);
    REQUIRE(!out.placements.empty());
    for (const auto& pl : out.placements)
        for (int64_t k = 0; k < 6; ++k) CHECK(pl.z_app[k] == 1.0f);
}

TEST_CASE("scene spec and latent bank serialize exactly") {
    const Fixture fx;
    const auto cfg = fx.sampler();
    const SampledScene base = sample_scene(fx.models(), cfg, 12);
    const SceneSpec back = scene_from_json(scene_to_json(base.spec));
    CHECK(back.z_bg.values == base.spec.z_bg.values);
    REQUIRE(back.placements.size() == base.spec.placements.size());
    for (size_t k = 0; k < back.placements.size(); ++k) {
        CHECK(back.placements[k].z_app.values == base.spec.placements[k].z_app.values);
        CHECK(back.placements[k].x == base.spec.placements[k].x);
        CHECK(back.placements[k].width == base.spec.placements[k].width);
    }

    Rng rng(77);
    std::vector<LatentBankEntry> bank;
    for (int i = 0; i < 5; ++i) {
        LatentBankEntry e;
        e.z_bg = Tensor({4});
        for (auto& v : e.z_bg.values) v = static_cast<float>(rng.normal());
        for (int j = 0; j < 3; ++j) {
            Tensor z({6});
            for (auto& v : z.values) v = static_cast<float>(rng.normal());
            e.z_objects.push_back(std::move(z));
        }
        bank.push_back(std::move(e));
    }
    const std::string path =
        (std::filesystem::temp_directory_path() / "cfate_test_bank.json").string();
    write_latent_bank(path, bank);
    const auto loaded = read_latent_bank(path);
    REQUIRE(loaded.size() == bank.size());
    for (size_t i = 0; i < bank.size(); ++i) {
        CHECK(loaded[i].z_bg.values == bank[i].z_bg.values);  // exact f32 round trip
        REQUIRE(loaded[i].z_objects.size() == bank[i].z_objects.size());
        for (size_t j = 0; j < bank[i].z_objects.size(); ++j)
            CHECK(loaded[i].z_objects[j].values == bank[i].z_objects[j].values);
    }
    std::filesystem::remove(path);
}
