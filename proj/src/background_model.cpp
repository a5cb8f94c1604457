#include "cfate/background_model.hpp"

#include <algorithm>
#include <cmath>

#include "cfate/errors.hpp"

namespace cfate::bgmodel {

BackgroundSample prepare_background(const ImageU8& frame, const Mask& fg_mask, int target_w,
                                    int target_h) {
    if (frame.w != fg_mask.w || frame.h != fg_mask.h)
        throw input_error("prepare_background: mask does not match frame");

    double mean[3] = {0, 0, 0};
    int64_t bg_count = 0;
    for (int y = 0; y < frame.h; ++y)
        for (int x = 0; x < frame.w; ++x) {
            if (fg_mask.at(x, y)) continue;
            ++bg_count;
            for (int ch = 0; ch < 3; ++ch) mean[ch] += frame.at(x, y, ch) / 255.0;
        }
    if (bg_count == 0) throw numeric_error("prepare_background: all-foreground frame");
    for (double& m : mean) m /= static_cast<double>(bg_count);

    ImageF filled(frame.w, frame.h, 3);
    ImageF coverage(frame.w, frame.h, 1);
    for (int y = 0; y < frame.h; ++y)
        for (int x = 0; x < frame.w; ++x) {
            const bool fg = fg_mask.at(x, y) != 0;
            coverage.at(x, y, 0) = fg ? 0.0f : 1.0f;
            for (int ch = 0; ch < 3; ++ch)
                filled.at(x, y, ch) = fg ? static_cast<float>(mean[ch]) : frame.at(x, y, ch) / 255.0f;
        }

    const ImageF small = resize_bilinear(filled, target_w, target_h);
    const ImageF cov_small = resize_bilinear(coverage, target_w, target_h);

    BackgroundSample sample;
    sample.image = Tensor({3, target_h, target_w});
    sample.m_bg = Mask(target_w, target_h);
    for (int y = 0; y < target_h; ++y)
        for (int x = 0; x < target_w; ++x) {
            sample.m_bg.at(x, y) = cov_small.at(x, y, 0) > 0.5f ? 1 : 0;
            for (int ch = 0; ch < 3; ++ch)
                sample.image[(static_cast<int64_t>(ch) * target_h + y) * target_w + x] =
                    small.at(x, y, ch);
        }
    return sample;
}

template <typename T>
BgLossTerms background_loss_core(const TensorT<T>& image, const Mask& m_bg, const TensorT<T>& recon,
                                 double kl_value, double beta) {
    const int h = image.shape[1], w = image.shape[2];
    double z = 0, l = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!m_bg.at(x, y)) continue;
            z += 1;
            const int64_t pix = static_cast<int64_t>(y) * w + x;
            for (int ch = 0; ch < 3; ++ch) {
                const double d = static_cast<double>(image[static_cast<int64_t>(ch) * h * w + pix]) -
                                 static_cast<double>(recon[static_cast<int64_t>(ch) * h * w + pix]);
                l += d * d;
            }
        }
    if (z == 0) throw numeric_error("background_loss: degenerate sample (empty m_bg)");
    BgLossTerms terms;
    terms.appear = l / z;
    terms.kl = kl_value;
    terms.total = terms.appear + beta * terms.kl;
    return terms;
}

BgLossTerms background_loss(const BackgroundSample& sample, const Tensor& recon, const Tensor& mu,
                            const Tensor& logvar, double beta) {
    check_same_shape(sample.image, recon, "background_loss");
    return background_loss_core(sample.image, sample.m_bg, recon, kl_standard_normal(mu, logvar),
                                beta);
}

template <typename T>
void background_loss_backward(const TensorT<T>& image, const Mask& m_bg, const TensorT<T>& recon,
                              double scale, TensorT<T>& d_recon) {
    const int h = image.shape[1], w = image.shape[2];
    double z = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (m_bg.at(x, y)) z += 1;
    if (z == 0) throw numeric_error("background_loss_backward: degenerate sample");
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!m_bg.at(x, y)) continue;
            const int64_t pix = static_cast<int64_t>(y) * w + x;
            for (int ch = 0; ch < 3; ++ch) {
                const int64_t i = static_cast<int64_t>(ch) * h * w + pix;
                d_recon[i] += static_cast<T>(
                    scale * 2.0 * (static_cast<double>(recon[i]) - static_cast<double>(image[i])) / z);
            }
        }
}

BgTrainResult train_background_model(const std::vector<BackgroundSample>& samples,
                                     const VaeSpec& spec, const BgTrainConfig& cfg, uint64_t seed) {
    if (samples.empty()) throw input_error("train_background_model: empty sample set");
    if (spec.has_mask_decoder())
        throw config_error("train_background_model: background spec must not have a mask decoder");
    spec.validate();

    Rng init_rng(derive_seed(seed, "background-init", 0));
    BgTrainResult result;
    result.params = init_vae<float>(spec, init_rng);
    VaeAdam adam = VaeAdam::make(result.params, cfg.lr);
    Rng train_rng(derive_seed(seed, "background-train", 0));

    const int L = spec.latent_dim;
    const Tensor empty_logits;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        adam.set_lr(epoch >= cfg.lr_drop_epoch ? cfg.lr * 0.1 : cfg.lr);
        std::vector<size_t> order(samples.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[train_rng.uniform_int(static_cast<uint64_t>(i))]);

        double sum_appear = 0, sum_kl = 0, sum_total = 0;
        int64_t num_batches = 0;
        for (size_t batch_start = 0; batch_start < order.size(); batch_start += cfg.batch_size) {
            const size_t batch_end = std::min(order.size(), batch_start + cfg.batch_size);
            const size_t bsize = batch_end - batch_start;
            VaeParams grads = zero_grads_like(result.params);
            double batch_total = 0, batch_appear = 0, batch_kl = 0;
            for (size_t bi = batch_start; bi < batch_end; ++bi) {
                const BackgroundSample& sample = samples[order[bi]];
                Tensor eps({L});
                for (int i = 0; i < L; ++i) eps[i] = static_cast<float>(train_rng.normal());
                const auto fwd = vae_forward(spec, result.params, sample.image, eps);
                const double kl = kl_standard_normal(fwd.mu, fwd.logvar);
                const auto terms =
                    background_loss_core(sample.image, sample.m_bg, fwd.appearance, kl, cfg.beta);
                batch_appear += terms.appear;
                batch_kl += terms.kl;
                batch_total += terms.total;
                Tensor d_recon(fwd.appearance.shape);
                background_loss_backward(sample.image, sample.m_bg, fwd.appearance,
                                         1.0 / static_cast<double>(bsize), d_recon);
                vae_backward(spec, result.params, fwd, d_recon, empty_logits,
                             cfg.beta / static_cast<double>(bsize), grads);
            }
            if (!std::isfinite(batch_total))
                throw numeric_error("train_background_model: non-finite loss at epoch " +
                                    std::to_string(epoch));
            adam.step(result.params, grads);
            sum_appear += batch_appear / static_cast<double>(bsize);
            sum_kl += batch_kl / static_cast<double>(bsize);
            sum_total += batch_total / static_cast<double>(bsize);
            ++num_batches;
        }
        objmodel::EpochLog log;
        log.epoch = epoch;
        if (num_batches > 0) {
            log.appear = sum_appear / static_cast<double>(num_batches);
            log.kl = sum_kl / static_cast<double>(num_batches);
            log.total = sum_total / static_cast<double>(num_batches);
        }
        result.log.push_back(log);
    }
    return result;
}

Tensor sample_background(const VaeSpec& spec, const VaeParams& params, const Tensor& z) {
    if (z.numel() != spec.latent_dim) throw config_error("sample_background: latent size mismatch");
    return forward(spec.decoder_app, params.dec_app, z);
}

Tensor upsample_to(const Tensor& image, int out_w, int out_h) {
    const int h = image.shape[1], w = image.shape[2];
    ImageF img(w, h, 3);
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                img.at(x, y, ch) = image[(static_cast<int64_t>(ch) * h + y) * w + x];
    const ImageF big = resize_bilinear(img, out_w, out_h);
    Tensor out({3, out_h, out_w});
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x)
                out[(static_cast<int64_t>(ch) * out_h + y) * out_w + x] = big.at(x, y, ch);
    return out;
}

template BgLossTerms background_loss_core<float>(const Tensor&, const Mask&, const Tensor&, double,
                                                 double);
template BgLossTerms background_loss_core<double>(const TensorD&, const Mask&, const TensorD&,
                                                  double, double);
template void background_loss_backward<float>(const Tensor&, const Mask&, const Tensor&, double,
                                              Tensor&);
template void background_loss_backward<double>(const TensorD&, const Mask&, const TensorD&, double,
                                               TensorD&);

}  // namespace cfate::bgmodel
