#pragma once

#include <vector>

#include "cfate/image.hpp"
#include "cfate/object_model.hpp"
#include "cfate/vae.hpp"

namespace cfate::bgmodel {

// Low-resolution background training image; foreground pixels hold the mean
// background color before downscaling.
struct BackgroundSample {
    Tensor image;  // [3,Hb,Wb] in [0,1]
    Mask m_bg;     // Hb x Wb, 1 = background
    int video_id = 0;
    int frame = 0;
};

// fg_mask flags foreground pixels (from the ensemble). Throws numeric_error
// when the frame has no background pixels at all.
BackgroundSample prepare_background(const ImageU8& frame, const Mask& fg_mask, int target_w,
                                    int target_h);

struct BgLossTerms {
    double appear = 0, kl = 0, total = 0;
};

// sum m_bg*|c-chat|^2 / sum m_bg + beta*KL
BgLossTerms background_loss(const BackgroundSample& sample, const Tensor& recon, const Tensor& mu,
                            const Tensor& logvar, double beta);

template <typename T>
BgLossTerms background_loss_core(const TensorT<T>& image, const Mask& m_bg,
                                 const TensorT<T>& recon, double kl_value, double beta);

template <typename T>
void background_loss_backward(const TensorT<T>& image, const Mask& m_bg, const TensorT<T>& recon,
                              double scale, TensorT<T>& d_recon);

struct BgTrainConfig {
    int epochs = 40;
    int lr_drop_epoch = 30;
    double lr = 1e-4;
    double beta = 1e-3;
    int batch_size = 16;
};

struct BgTrainResult {
    VaeParams params;
    std::vector<objmodel::EpochLog> log;  // mask term unused (0)
};

BgTrainResult train_background_model(const std::vector<BackgroundSample>& samples,
                                     const VaeSpec& spec, const BgTrainConfig& cfg, uint64_t seed);

// Deterministic decode of z at model resolution.
Tensor sample_background(const VaeSpec& spec, const VaeParams& params, const Tensor& z);

// Bilinear upsample of a [3,h,w] tensor to the scene canvas.
Tensor upsample_to(const Tensor& image, int out_w, int out_h);

}  // namespace cfate::bgmodel
