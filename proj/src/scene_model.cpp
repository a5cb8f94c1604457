#include "cfate/scene_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cfate/errors.hpp"

namespace cfate::scene {

using nlohmann::json;

Tensor sharpen_mask(const Tensor& logits, double tau) {
    if (!(tau > 0)) throw config_error("sharpen_mask: tau must be positive");
    Tensor out(logits.shape);
    for (int64_t i = 0; i < logits.numel(); ++i)
        out[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(logits[i]) / tau)));
    return out;
}

double mask_entropy(const Tensor& mask_prob, bool normalized) {
    double bits = 0;
    for (int64_t i = 0; i < mask_prob.numel(); ++i) {
        const double p = mask_prob[i];
        if (p > 0.0 && p < 1.0)
            bits -= p * std::log2(p) + (1.0 - p) * std::log2(1.0 - p);
    }
    if (normalized && mask_prob.numel() > 0) bits /= static_cast<double>(mask_prob.numel());
    return bits;
}

namespace {

Tensor draw_normal(int n, Rng& rng) {
    Tensor z({n});
    for (int i = 0; i < n; ++i) z[i] = static_cast<float>(rng.normal());
    return z;
}

bool latent_accepted(const Models& models, const SamplerConfig& cfg, const Tensor& z) {
    const Tensor logits =
        forward(models.object_spec->decoder_mask, models.object_params->dec_mask, z);
    const Tensor mask = sharpen_mask(logits, cfg.tau);
    return mask_entropy(mask, cfg.normalized_entropy) <= cfg.entropy_threshold;
}

}  // namespace

Tensor sample_object_latent(const Models& models, const SamplerConfig& cfg, Rng& rng) {
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        Tensor z = draw_normal(models.object_spec->latent_dim, rng);
        if (latent_accepted(models, cfg, z)) return z;
    }
    throw sampling_error("entropy rejection exhausted " + std::to_string(cfg.max_attempts) +
                         " attempts at threshold " + std::to_string(cfg.entropy_threshold) + " bits");
}

ComposeResult compose(const Models& models, const Tensor& z_bg,
                      const std::vector<ObjectPlacement>& placements, const SamplerConfig& cfg) {
    const int W = cfg.canvas_w, H = cfg.canvas_h;
    const Tensor bg_small =
        bgmodel::sample_background(*models.background_spec, *models.background_params, z_bg);
    const Tensor bg = bgmodel::upsample_to(bg_small, W, H);

    ComposeResult result;
    result.image = ImageF(W, H, 3);
    result.provenance = LabelMap(W, H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int ch = 0; ch < 3; ++ch)
                result.image.at(x, y, ch) = bg[(static_cast<int64_t>(ch) * H + y) * W + x];

    for (size_t k = 0; k < placements.size(); ++k) {
        const ObjectPlacement& pl = placements[k];
        const auto decoded = objmodel::sample_object(*models.object_spec, *models.object_params, pl.z_app);
        const Tensor sharp = sharpen_mask(decoded.mask_logits, cfg.tau);

        const int ow = std::max(1, static_cast<int>(std::lround(pl.width)));
        const int oh = std::max(1, static_cast<int>(std::lround(pl.height)));
        const int ch_crop = decoded.appearance.shape[0];
        const int hh = decoded.appearance.shape[1], ww = decoded.appearance.shape[2];

        // rescale appearance bilinearly, mask nearest, then binarize at 0.5
        ImageF app(ww, hh, ch_crop);
        for (int c = 0; c < ch_crop; ++c)
            for (int y = 0; y < hh; ++y)
                for (int x = 0; x < ww; ++x)
                    app.at(x, y, c) = decoded.appearance[(static_cast<int64_t>(c) * hh + y) * ww + x];
        const ImageF app_scaled = resize_bilinear(app, ow, oh);
        Mask mask(ww, hh);
        for (int y = 0; y < hh; ++y)
            for (int x = 0; x < ww; ++x)
                mask.at(x, y) = sharp[static_cast<int64_t>(y) * ww + x] >= 0.5f ? 1 : 0;
        const Mask mask_scaled = resize_nearest(mask, ow, oh);

        const int x0 = static_cast<int>(std::lround(pl.x)) - ow / 2;
        const int y0 = static_cast<int>(std::lround(pl.y)) - oh / 2;
        for (int y = 0; y < oh; ++y) {
            const int cy = y0 + y;
            if (cy < 0 || cy >= H) continue;
            for (int x = 0; x < ow; ++x) {
                const int cx = x0 + x;
                if (cx < 0 || cx >= W) continue;
                if (!mask_scaled.at(x, y)) continue;
                for (int c = 0; c < 3; ++c) result.image.at(cx, cy, c) = app_scaled.at(x, y, c);
                result.provenance.at(cx, cy) = static_cast<uint16_t>(k + 1);
            }
        }
    }
    return result;
}

namespace {

ObjectPlacement sample_placement(const Models& models, const SamplerConfig& cfg, Rng& rng) {
    ObjectPlacement pl;
    pl.z_app = sample_object_latent(models, cfg, rng);
    pl.x = rng.uniform(0, cfg.canvas_w);
    pl.y = rng.uniform(0, cfg.canvas_h);
    pl.width = rng.uniform(cfg.min_width, cfg.max_width);
    pl.height = pl.width / 2.0;  // fixed 2:1 ratio under the independent prior
    return pl;
}

}  // namespace

SampledScene sample_scene(const Models& models, const SamplerConfig& cfg, uint64_t seed) {
    if (!models.object_spec || !models.background_spec)
        throw config_error("sample_scene: models not set");
    Rng rng(seed);
    SampledScene out;
    out.spec.z_bg = draw_normal(models.background_spec->latent_dim, rng);
    const int k = cfg.k_min == cfg.k_max ? cfg.k_min : rng.uniform_int(cfg.k_min, cfg.k_max);
    for (int i = 0; i < k; ++i) out.spec.placements.push_back(sample_placement(models, cfg, rng));
    out.composed = compose(models, out.spec.z_bg, out.spec.placements, cfg);
    return out;
}

SceneSpec intervene(const SceneSpec& spec, const Intervention& intervention, const Models& models,
                    const SamplerConfig& cfg) {
    SceneSpec out = spec;
    Rng rng(derive_seed(intervention.seed, "intervene", 0));
    switch (intervention.kind) {
        case Intervention::Kind::set_count: {
            if (intervention.count < 0) throw config_error("intervene: negative count");
            const int k = intervention.count;
            if (k < static_cast<int>(out.placements.size())) {
                out.placements.resize(static_cast<size_t>(k));
            } else {
                while (static_cast<int>(out.placements.size()) < k)
                    out.placements.push_back(sample_placement(models, cfg, rng));
            }
            break;
        }
        case Intervention::Kind::resample_appearance: {
            if (intervention.index < 0 || intervention.index >= static_cast<int>(out.placements.size()))
                throw input_error("intervene: placement index out of range");
            out.placements[static_cast<size_t>(intervention.index)].z_app =
                sample_object_latent(models, cfg, rng);
            break;
        }
        case Intervention::Kind::set_scale: {
            if (intervention.index < 0 || intervention.index >= static_cast<int>(out.placements.size()))
                throw input_error("intervene: placement index out of range");
            auto& pl = out.placements[static_cast<size_t>(intervention.index)];
            pl.width = intervention.width;
            pl.height = intervention.height;
            break;
        }
        case Intervention::Kind::swap_background:
            if (intervention.z_bg.numel() != spec.z_bg.numel())
                throw config_error("intervene: background latent size mismatch");
            out.z_bg = intervention.z_bg;
            break;
        case Intervention::Kind::resample_positions:
            for (auto& pl : out.placements) {
                pl.x = rng.uniform(0, cfg.canvas_w);
                pl.y = rng.uniform(0, cfg.canvas_h);
            }
            break;
    }
    return out;
}

SceneSpec conditional_sample(const Models& models, const std::vector<LatentBankEntry>& bank,
                             const Tensor& z_bg, double fraction, const SamplerConfig& cfg,
                             uint64_t seed) {
    if (bank.empty()) throw input_error("conditional_sample: empty latent bank");
    const size_t keep = std::min(
        bank.size(),
        static_cast<size_t>(std::ceil(fraction * static_cast<double>(bank.size()))));
    if (keep == 0) throw config_error("conditional_sample: fraction selects no neighbors");

    std::vector<std::pair<double, size_t>> by_distance;
    for (size_t i = 0; i < bank.size(); ++i) {
        check_same_shape(bank[i].z_bg, z_bg, "conditional_sample");
        double d2 = 0;
        for (int64_t j = 0; j < z_bg.numel(); ++j) {
            const double d = bank[i].z_bg[j] - z_bg[j];
            d2 += d * d;
        }
        by_distance.push_back({d2, i});
    }
    std::sort(by_distance.begin(), by_distance.end());

    std::vector<const Tensor*> pool;
    for (size_t i = 0; i < keep; ++i)
        for (const auto& z : bank[by_distance[i].second].z_objects) pool.push_back(&z);

    Rng rng(seed);
    SceneSpec out;
    out.z_bg = z_bg;
    const int k = cfg.k_min == cfg.k_max ? cfg.k_min : rng.uniform_int(cfg.k_min, cfg.k_max);
    for (int i = 0; i < k && !pool.empty(); ++i) {
        bool accepted = false;
        for (int attempt = 0; attempt < cfg.max_attempts && !accepted; ++attempt) {
            const Tensor& z = *pool[rng.uniform_int(pool.size())];
            if (!latent_accepted(models, cfg, z)) continue;
            ObjectPlacement pl;
            pl.z_app = z;
            pl.x = rng.uniform(0, cfg.canvas_w);
            pl.y = rng.uniform(0, cfg.canvas_h);
            pl.width = rng.uniform(cfg.min_width, cfg.max_width);
            pl.height = pl.width / 2.0;
            out.placements.push_back(std::move(pl));
            accepted = true;
        }
        if (!accepted)
            throw sampling_error("conditional_sample: entropy rejection exhausted the attempt budget");
    }
    return out;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

json tensor_to_json(const Tensor& t) {
    json j;
    j["shape"] = t.shape;
    j["values"] = t.values;
    return j;
}

Tensor tensor_from_json(const json& j) {
    return Tensor(j.at("shape").get<std::vector<int>>(), j.at("values").get<std::vector<float>>());
}

}  // namespace

std::string scene_to_json(const SceneSpec& spec) {
    json j;
    j["z_bg"] = tensor_to_json(spec.z_bg);
    json placements = json::array();
    for (const auto& pl : spec.placements) {
        json p;
        p["z_app"] = tensor_to_json(pl.z_app);
        p["pos"] = {pl.x, pl.y};
        p["scale"] = {pl.width, pl.height};
        placements.push_back(std::move(p));
    }
    j["placements"] = std::move(placements);
    return j.dump();
}

SceneSpec scene_from_json(const std::string& text) {
    const json j = json::parse(text);
    SceneSpec spec;
    spec.z_bg = tensor_from_json(j.at("z_bg"));
    for (const auto& p : j.at("placements")) {
        ObjectPlacement pl;
        pl.z_app = tensor_from_json(p.at("z_app"));
        pl.x = p.at("pos").at(0).get<double>();
        pl.y = p.at("pos").at(1).get<double>();
        pl.width = p.at("scale").at(0).get<double>();
        pl.height = p.at("scale").at(1).get<double>();
        spec.placements.push_back(std::move(pl));
    }
    return spec;
}

void write_latent_bank(const std::string& path, const std::vector<LatentBankEntry>& bank) {
    json j;
    j["version"] = 1;
    json entries = json::array();
    for (const auto& e : bank) {
        json je;
        je["z_bg"] = tensor_to_json(e.z_bg);
        json objs = json::array();
        for (const auto& z : e.z_objects) objs.push_back(tensor_to_json(z));
        je["z_objects"] = std::move(objs);
        entries.push_back(std::move(je));
    }
    j["entries"] = std::move(entries);
    std::ofstream os(path);
    if (!os) throw input_error("cannot open for writing: " + path);
    os << j.dump() << "\n";
}

std::vector<LatentBankEntry> read_latent_bank(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw input_error("cannot open: " + path);
    const json j = json::parse(is);
    std::vector<LatentBankEntry> bank;
    for (const auto& je : j.at("entries")) {
        LatentBankEntry e;
        e.z_bg = tensor_from_json(je.at("z_bg"));
        for (const auto& z : je.at("z_objects")) e.z_objects.push_back(tensor_from_json(z));
        bank.push_back(std::move(e));
    }
    return bank;
}

}  // namespace cfate::scene
