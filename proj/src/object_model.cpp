#include "cfate/object_model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "cfate/errors.hpp"
#include "cfate/rle.hpp"

namespace cfate::objmodel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Tensor image_region_to_tensor(const std::vector<ImageU8>& frames, int t, int x0, int y0, int x1,
                              int y1, int out_w, int out_h) {
    const ImageU8& frame = frames[static_cast<size_t>(t)];
    ImageF region(x1 - x0, y1 - y0, 3);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            for (int ch = 0; ch < 3; ++ch)
                region.at(x - x0, y - y0, ch) = frame.at(x, y, ch) / 255.0f;
    const ImageF scaled = resize_bilinear(region, out_w, out_h);
    Tensor tensor({3, out_h, out_w});
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x)
                tensor[(static_cast<int64_t>(ch) * out_h + y) * out_w + x] = scaled.at(x, y, ch);
    return tensor;
}

}  // namespace

std::vector<ObjectCrop> extract_crops(const std::vector<ImageU8>& frames,
                                      const std::vector<LabelMap>& segmentation,
                                      const ExtractConfig& cfg, int video_id) {
    if (frames.size() != segmentation.size())
        throw input_error("extract_crops: frames/segmentation length mismatch");
    std::vector<ObjectCrop> crops;
    if (frames.empty()) return crops;
    const int w = frames[0].w, h = frames[0].h;

    for (int t = 0; t < static_cast<int>(frames.size()); ++t) {
        const LabelMap& seg = segmentation[static_cast<size_t>(t)];
        if (seg.w != w || seg.h != h) throw input_error("extract_crops: segmentation shape mismatch");

        // bbox and area per label in this frame
        std::map<uint16_t, std::array<int, 5>> boxes;  // label -> x0,y0,x1,y1,area
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const uint16_t lbl = seg.at(x, y);
                if (lbl == 0) continue;
                auto [it, inserted] = boxes.insert({lbl, {x, y, x + 1, y + 1, 0}});
                auto& b = it->second;
                b[0] = std::min(b[0], x);
                b[1] = std::min(b[1], y);
                b[2] = std::max(b[2], x + 1);
                b[3] = std::max(b[3], y + 1);
                b[4] += 1;
            }
        }
        for (const auto& [lbl, b] : boxes) {
            if (b[4] < cfg.min_area) continue;
            if (b[0] < cfg.min_border_distance || b[1] < cfg.min_border_distance ||
                w - b[2] < cfg.min_border_distance || h - b[3] < cfg.min_border_distance)
                continue;

            // resample the label partition once with nearest neighbor so the
            // crop masks stay a partition
            const int bw = b[2] - b[0], bh = b[3] - b[1];
            ObjectCrop crop;
            crop.m0 = Mask(cfg.crop_w, cfg.crop_h);
            crop.m1 = Mask(cfg.crop_w, cfg.crop_h);
            crop.m_other = Mask(cfg.crop_w, cfg.crop_h);
            const float sx = static_cast<float>(bw) / cfg.crop_w;
            const float sy = static_cast<float>(bh) / cfg.crop_h;
            for (int y = 0; y < cfg.crop_h; ++y) {
                const int src_y = b[1] + std::min(static_cast<int>((y + 0.5f) * sy), bh - 1);
                for (int x = 0; x < cfg.crop_w; ++x) {
                    const int src_x = b[0] + std::min(static_cast<int>((x + 0.5f) * sx), bw - 1);
                    const uint16_t s = seg.at(src_x, src_y);
                    if (s == 0) crop.m0.at(x, y) = 1;
                    else if (s == lbl) crop.m1.at(x, y) = 1;
                    else crop.m_other.at(x, y) = 1;
                }
            }
            if (crop.m1.area() == 0 || crop.m0.area() + crop.m1.area() == 0) continue;

            crop.image = image_region_to_tensor(frames, t, b[0], b[1], b[2], b[3], cfg.crop_w, cfg.crop_h);
            crop.video_id = video_id;
            crop.frame = t;
            crop.object_label = lbl;
            crop.bbox_x0 = b[0];
            crop.bbox_y0 = b[1];
            crop.bbox_x1 = b[2];
            crop.bbox_y1 = b[3];
            crops.push_back(std::move(crop));
        }
    }
    return crops;
}

Tensor augment(const ObjectCrop& crop, const AugmentationSpec& spec,
               const std::vector<const ObjectCrop*>& batch, size_t self_index, Rng& rng) {
    Tensor img = crop.image;
    const int h = img.shape[1], w = img.shape[2];
    switch (spec.mode) {
        case AugmentationSpec::Mode::none:
            break;
        case AugmentationSpec::Mode::cutout: {
            const int rects = spec.cutout_min_rects == spec.cutout_max_rects
                                  ? spec.cutout_min_rects
                                  : rng.uniform_int(spec.cutout_min_rects, spec.cutout_max_rects);
            for (int r = 0; r < rects; ++r) {
                const double frac = rng.uniform(spec.cutout_min_area, spec.cutout_max_area);
                const double aspect = rng.uniform(0.5, 2.0);
                int rw = std::clamp(static_cast<int>(std::lround(std::sqrt(frac * w * h * aspect))), 1, w);
                int rh = std::clamp(static_cast<int>(std::lround(frac * w * h / rw)), 1, h);
                const int x0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(w - rw + 1)));
                const int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(h - rh + 1)));
                for (int y = y0; y < y0 + rh; ++y)
                    for (int x = x0; x < x0 + rw; ++x)
                        for (int ch = 0; ch < 3; ++ch)
                            img[(static_cast<int64_t>(ch) * h + y) * w + x] = spec.cutout_fill;
            }
            break;
        }
        case AugmentationSpec::Mode::other_object: {
            if (batch.size() < 2) throw input_error("augment: other-object mode needs a batch of >= 2");
            size_t donor_idx = rng.uniform_int(batch.size() - 1);
            if (donor_idx >= self_index) ++donor_idx;
            const ObjectCrop& donor = *batch[donor_idx];
            const int max_dx = static_cast<int>(std::lround(spec.other_shift_frac * w));
            const int max_dy = static_cast<int>(std::lround(spec.other_shift_frac * h));
            const int dx = rng.uniform_int(-max_dx, max_dx);
            const int dy = rng.uniform_int(-max_dy, max_dy);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const int sx = x - dx, sy = y - dy;
                    if (sx < 0 || sx >= w || sy < 0 || sy >= h) continue;
                    if (!donor.m1.at(sx, sy)) continue;
                    for (int ch = 0; ch < 3; ++ch)
                        img[(static_cast<int64_t>(ch) * h + y) * w + x] =
                            donor.image[(static_cast<int64_t>(ch) * h + sy) * w + sx];
                }
            }
            break;
        }
    }
    return img;
}

template <typename T>
LossTerms object_loss_core(const TensorT<T>& image, const Mask& m0, const Mask& m1,
                           const TensorT<T>& appearance, const TensorT<T>& mask_logits,
                           double kl_value, const LossConfig& cfg) {
    const int h = image.shape[1], w = image.shape[2];
    double z_img = 0, z_mask = 0, l_img = 0, l_mask = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int64_t pix = static_cast<int64_t>(y) * w + x;
            const bool fg = m1.at(x, y) != 0;
            const bool bg = m0.at(x, y) != 0;
            if (fg) {
                z_img += 1;
                for (int ch = 0; ch < 3; ++ch) {
                    const double d = static_cast<double>(image[static_cast<int64_t>(ch) * h * w + pix]) -
                                     static_cast<double>(appearance[static_cast<int64_t>(ch) * h * w + pix]);
                    l_img += d * d;
                }
            }
            if (fg || bg) {
                z_mask += 1;
                const double p =
                    std::clamp(1.0 / (1.0 + std::exp(-static_cast<double>(mask_logits[pix]))),
                               kBceClamp, 1.0 - kBceClamp);
                const double t = fg ? 1.0 : 0.0;
                l_mask += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
            }
        }
    }
    if (z_img == 0 || z_mask == 0)
        throw numeric_error("object_loss: degenerate crop (empty m1 or m0+m1)");
    LossTerms terms;
    terms.appear = l_img / z_img;
    terms.mask = l_mask / z_mask;
    terms.kl = kl_value;
    terms.total = terms.appear + cfg.gamma * terms.mask + cfg.beta * terms.kl;
    return terms;
}

LossTerms object_loss(const ObjectCrop& crop, const ReconOutput& recon, const LossConfig& cfg) {
    check_same_shape(crop.image, recon.appearance, "object_loss");
    // recompute logits from the probabilities if only those are present
    Tensor logits = recon.mask_logits;
    if (logits.numel() == 0) {
        logits = Tensor(recon.mask_prob.shape);
        for (int64_t i = 0; i < logits.numel(); ++i) {
            const double p = std::clamp(static_cast<double>(recon.mask_prob[i]), 1e-12, 1.0 - 1e-12);
            logits[i] = static_cast<float>(std::log(p / (1.0 - p)));
        }
    }
    const double kl = kl_standard_normal(recon.mu, recon.logvar);
    return object_loss_core(crop.image, crop.m0, crop.m1, recon.appearance, logits, kl, cfg);
}

template <typename T>
void object_loss_backward(const TensorT<T>& image, const Mask& m0, const Mask& m1,
                          const TensorT<T>& appearance, const TensorT<T>& mask_logits,
                          const LossConfig& cfg, double scale, TensorT<T>& d_appearance,
                          TensorT<T>& d_mask_logits) {
    const int h = image.shape[1], w = image.shape[2];
    double z_img = 0, z_mask = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (m1.at(x, y)) z_img += 1;
            if (m1.at(x, y) || m0.at(x, y)) z_mask += 1;
        }
    if (z_img == 0 || z_mask == 0)
        throw numeric_error("object_loss_backward: degenerate crop");
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int64_t pix = static_cast<int64_t>(y) * w + x;
            const bool fg = m1.at(x, y) != 0;
            const bool bg = m0.at(x, y) != 0;
            if (fg) {
                for (int ch = 0; ch < 3; ++ch) {
                    const int64_t i = static_cast<int64_t>(ch) * h * w + pix;
                    d_appearance[i] += static_cast<T>(
                        scale * 2.0 * (static_cast<double>(appearance[i]) - static_cast<double>(image[i])) /
                        z_img);
                }
            }
            if (fg || bg) {
                const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(mask_logits[pix])));
                // the clamp zeroes the gradient outside [clamp, 1-clamp]
                if (p > kBceClamp && p < 1.0 - kBceClamp) {
                    const double t = fg ? 1.0 : 0.0;
                    d_mask_logits[pix] += static_cast<T>(scale * cfg.gamma * (p - t) / z_mask);
                }
            }
        }
    }
}

namespace {

Tensor sigmoid_of(const Tensor& logits) {
    Tensor out(logits.shape);
    for (int64_t i = 0; i < logits.numel(); ++i)
        out[i] = 1.0f / (1.0f + std::exp(-logits[i]));
    return out;
}

Tensor squeeze_mask(const Tensor& t) {
    // [1,H,W] -> [H,W]
    Tensor out({t.shape[1], t.shape[2]});
    out.values = t.values;
    return out;
}

}  // namespace

TrainResult train_object_model(const std::vector<ObjectCrop>& crops, const VaeSpec& spec,
                               const TrainConfig& cfg, uint64_t seed) {
    if (crops.empty()) throw input_error("train_object_model: empty crop set");
    spec.validate();

    Rng init_rng(derive_seed(seed, "object-init", 0));
    TrainResult result;
    result.params = init_vae<float>(spec, init_rng);
    VaeAdam adam = VaeAdam::make(result.params, cfg.lr);
    Rng train_rng(derive_seed(seed, "object-train", 0));

    // crops grouped by object identity
    std::map<std::pair<int, uint16_t>, std::vector<size_t>> by_object;
    for (size_t i = 0; i < crops.size(); ++i)
        by_object[{crops[i].video_id, crops[i].object_label}].push_back(i);

    const int L = spec.latent_dim;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        adam.set_lr(epoch >= cfg.lr_drop_epoch ? cfg.lr * 0.1 : cfg.lr);

        // two random frames from every object, without replacement
        std::vector<size_t> selected;
        for (const auto& [obj, indices] : by_object) {
            if (static_cast<int>(indices.size()) <= cfg.crops_per_object) {
                selected.insert(selected.end(), indices.begin(), indices.end());
                continue;
            }
            std::vector<size_t> pool = indices;
            for (int k = 0; k < cfg.crops_per_object; ++k) {
                const size_t pick =
                    k + static_cast<size_t>(train_rng.uniform_int(static_cast<uint64_t>(pool.size() - k)));
                std::swap(pool[static_cast<size_t>(k)], pool[pick]);
                selected.push_back(pool[static_cast<size_t>(k)]);
            }
        }
        // shuffle the epoch's samples
        for (size_t i = selected.size(); i > 1; --i)
            std::swap(selected[i - 1], selected[train_rng.uniform_int(static_cast<uint64_t>(i))]);

        LossTerms epoch_sum;
        int64_t num_batches = 0;
        for (size_t batch_start = 0; batch_start < selected.size(); batch_start += cfg.batch_size) {
            const size_t batch_end = std::min(selected.size(), batch_start + cfg.batch_size);
            const size_t bsize = batch_end - batch_start;
            std::vector<const ObjectCrop*> batch;
            for (size_t i = batch_start; i < batch_end; ++i)
                batch.push_back(&crops[selected[i]]);

            VaeParams grads = zero_grads_like(result.params);
            LossTerms batch_terms;
            for (size_t bi = 0; bi < bsize; ++bi) {
                const ObjectCrop& crop = *batch[bi];
                const Tensor input = augment(crop, cfg.augmentation, batch, bi, train_rng);
                Tensor eps({L});
                for (int i = 0; i < L; ++i) eps[i] = static_cast<float>(train_rng.normal());
                const auto fwd = vae_forward(spec, result.params, input, eps);

                const double kl = kl_standard_normal(fwd.mu, fwd.logvar);
                const Tensor mask_logits = squeeze_mask(fwd.mask_logits);
                const LossTerms terms =
                    object_loss_core(crop.image, crop.m0, crop.m1, fwd.appearance, mask_logits, kl,
                                     cfg.loss);
                batch_terms.appear += terms.appear;
                batch_terms.mask += terms.mask;
                batch_terms.kl += terms.kl;
                batch_terms.total += terms.total;

                Tensor d_app(fwd.appearance.shape);
                Tensor d_logits_2d(mask_logits.shape);
                object_loss_backward(crop.image, crop.m0, crop.m1, fwd.appearance, mask_logits,
                                     cfg.loss, 1.0 / static_cast<double>(bsize), d_app, d_logits_2d);
                Tensor d_logits(fwd.mask_logits.shape);
                d_logits.values = d_logits_2d.values;
                vae_backward(spec, result.params, fwd, d_app, d_logits,
                             cfg.loss.beta / static_cast<double>(bsize), grads);
            }
            if (!std::isfinite(batch_terms.total))
                throw numeric_error("train_object_model: non-finite loss at epoch " +
                                    std::to_string(epoch) + ", batch " + std::to_string(num_batches));
            adam.step(result.params, grads);
            epoch_sum.appear += batch_terms.appear / static_cast<double>(bsize);
            epoch_sum.mask += batch_terms.mask / static_cast<double>(bsize);
            epoch_sum.kl += batch_terms.kl / static_cast<double>(bsize);
            epoch_sum.total += batch_terms.total / static_cast<double>(bsize);
            ++num_batches;
        }
        EpochLog log;
        log.epoch = epoch;
        if (num_batches > 0) {
            log.appear = epoch_sum.appear / static_cast<double>(num_batches);
            log.mask = epoch_sum.mask / static_cast<double>(num_batches);
            log.kl = epoch_sum.kl / static_cast<double>(num_batches);
            log.total = epoch_sum.total / static_cast<double>(num_batches);
        }
        result.log.push_back(log);
    }
    return result;
}

ReconOutput reconstruct(const VaeSpec& spec, const VaeParams& params, const Tensor& image) {
    const auto fwd = vae_forward_mean(spec, params, image);
    ReconOutput out;
    out.appearance = fwd.appearance;
    out.mask_logits = squeeze_mask(fwd.mask_logits);
    out.mask_prob = sigmoid_of(out.mask_logits);
    out.mu = fwd.mu;
    out.logvar = fwd.logvar;
    return out;
}

DecodedObject sample_object(const VaeSpec& spec, const VaeParams& params, const Tensor& z) {
    if (z.numel() != spec.latent_dim) throw config_error("sample_object: latent size mismatch");
    DecodedObject out;
    out.appearance = forward(spec.decoder_app, params.dec_app, z);
    out.mask_logits = squeeze_mask(forward(spec.decoder_mask, params.dec_mask, z));
    out.mask_prob = sigmoid_of(out.mask_logits);
    return out;
}

// ---------------------------------------------------------------------------
// crop dataset serialization

namespace {

std::string crop_base(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "crop_%06d", i);
    return buf;
}

ImageU8 tensor_to_u8(const Tensor& t) {
    const int h = t.shape[1], w = t.shape[2];
    ImageU8 img(w, h, 3);
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const float v = std::clamp(t[(static_cast<int64_t>(ch) * h + y) * w + x], 0.0f, 1.0f);
                img.at(x, y, ch) = static_cast<uint8_t>(std::lround(v * 255.0f));
            }
    return img;
}

Tensor u8_to_tensor(const ImageU8& img) {
    Tensor t({3, img.h, img.w});
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                t[(static_cast<int64_t>(ch) * img.h + y) * img.w + x] = img.at(x, y, ch) / 255.0f;
    return t;
}

}  // namespace

void write_crops(const std::string& dir, const std::vector<ObjectCrop>& crops) {
    fs::create_directories(dir);
    for (size_t i = 0; i < crops.size(); ++i) {
        const ObjectCrop& crop = crops[i];
        const std::string base = crop_base(static_cast<int>(i));
        write_ppm((fs::path(dir) / (base + ".ppm")).string(), tensor_to_u8(crop.image));
        json j;
        j["video_id"] = crop.video_id;
        j["frame"] = crop.frame;
        j["object_label"] = crop.object_label;
        j["bbox"] = {crop.bbox_x0, crop.bbox_y0, crop.bbox_x1, crop.bbox_y1};
        j["m0"] = json::parse(rle_to_json(rle_encode(crop.m0)));
        j["m1"] = json::parse(rle_to_json(rle_encode(crop.m1)));
        j["m_other"] = json::parse(rle_to_json(rle_encode(crop.m_other)));
        std::ofstream os(fs::path(dir) / (base + ".json"));
        os << j.dump() << "\n";
        if (!os) throw input_error("write failed: " + dir + "/" + base + ".json");
    }
    json index;
    index["count"] = crops.size();
    std::ofstream os(fs::path(dir) / "index.json");
    os << index.dump() << "\n";
}

std::vector<ObjectCrop> read_crops(const std::string& dir) {
    std::ifstream idx(fs::path(dir) / "index.json");
    if (!idx) throw input_error("missing index.json in " + dir);
    const json index = json::parse(idx);
    const size_t count = index.at("count").get<size_t>();
    std::vector<ObjectCrop> crops;
    crops.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        const std::string base = crop_base(static_cast<int>(i));
        std::ifstream is(fs::path(dir) / (base + ".json"));
        if (!is) throw input_error("missing crop sidecar " + base + ".json");
        const json j = json::parse(is);
        ObjectCrop crop;
        crop.image = u8_to_tensor(read_ppm((fs::path(dir) / (base + ".ppm")).string()));
        crop.video_id = j.at("video_id").get<int>();
        crop.frame = j.at("frame").get<int>();
        crop.object_label = j.at("object_label").get<uint16_t>();
        crop.bbox_x0 = j.at("bbox").at(0).get<int>();
        crop.bbox_y0 = j.at("bbox").at(1).get<int>();
        crop.bbox_x1 = j.at("bbox").at(2).get<int>();
        crop.bbox_y1 = j.at("bbox").at(3).get<int>();
        crop.m0 = rle_decode(rle_from_json(j.at("m0").dump()));
        crop.m1 = rle_decode(rle_from_json(j.at("m1").dump()));
        crop.m_other = rle_decode(rle_from_json(j.at("m_other").dump()));
        crops.push_back(std::move(crop));
    }
    return crops;
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream os(path);
    if (!os) throw input_error("cannot open for writing: " + path);
    for (const auto& e : log) {
        json j;
        j["epoch"] = e.epoch;
        j["L_appear"] = e.appear;
        j["L_mask"] = e.mask;
        j["KL"] = e.kl;
        j["total"] = e.total;
        os << j.dump() << "\n";
    }
}

template LossTerms object_loss_core<float>(const Tensor&, const Mask&, const Mask&, const Tensor&,
                                           const Tensor&, double, const LossConfig&);
template LossTerms object_loss_core<double>(const TensorD&, const Mask&, const Mask&, const TensorD&,
                                            const TensorD&, double, const LossConfig&);
template void object_loss_backward<float>(const Tensor&, const Mask&, const Mask&, const Tensor&,
                                          const Tensor&, const LossConfig&, double, Tensor&, Tensor&);
template void object_loss_backward<double>(const TensorD&, const Mask&, const Mask&, const TensorD&,
                                           const TensorD&, const LossConfig&, double, TensorD&,
                                           TensorD&);

}  // namespace cfate::objmodel
