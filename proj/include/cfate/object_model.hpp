#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfate/image.hpp"
#include "cfate/motion_seg.hpp"
#include "cfate/rng.hpp"
#include "cfate/vae.hpp"

namespace cfate::objmodel {

// Rescaled object crop with candidate masks: m0 background, m1 the central
// object, m_other the union of all other objects. The three masks partition
// the crop.
struct ObjectCrop {
    Tensor image;  // [3,Hc,Wc], values in [0,1]
    Mask m0, m1, m_other;
    int video_id = 0;
    int frame = 0;
    uint16_t object_label = 0;
    int bbox_x0 = 0, bbox_y0 = 0, bbox_x1 = 0, bbox_y1 = 0;  // original frame, half-open
};

struct ExtractConfig {
    int crop_w = 32, crop_h = 16;
    int64_t min_area = 64;        // px in the source frame
    int min_border_distance = 8;  // px between bbox and frame boundary
};

// One crop per qualifying (object, frame): area >= min_area, bbox at least
// min_border_distance from every frame edge, nonempty m1 after rescaling.
std::vector<ObjectCrop> extract_crops(const std::vector<ImageU8>& frames,
                                      const std::vector<LabelMap>& segmentation,
                                      const ExtractConfig& cfg, int video_id = 0);

struct AugmentationSpec {
    enum class Mode { none, cutout, other_object };
    Mode mode = Mode::none;
    int cutout_min_rects = 1, cutout_max_rects = 3;
    double cutout_min_area = 0.10, cutout_max_area = 0.40;  // fraction of the crop
    float cutout_fill = 0.5f;
    double other_shift_frac = 0.25;  // of the crop dimensions
};

// Returns the modified input image only; the loss targets stay the
// unaugmented crop.
Tensor augment(const ObjectCrop& crop, const AugmentationSpec& spec,
               const std::vector<const ObjectCrop*>& batch, size_t self_index, Rng& rng);

struct LossConfig {
    double gamma = 0.1;  // mask loss weight
    double beta = 1e-4;  // prior loss weight
};

struct ReconOutput {
    Tensor appearance;  // [3,Hc,Wc] in [0,1]
    Tensor mask_prob;   // [Hc,Wc], strictly inside (0,1)
    Tensor mask_logits; // [Hc,Wc]
    Tensor mu, logvar;
};

struct LossTerms {
    double appear = 0, mask = 0, kl = 0, total = 0;
};

constexpr double kBceClamp = 1e-6;

// L_appear = sum m1*|c-chat|^2 / sum m1; L_mask = sum (m0+m1)*BCE(m1,mhat) /
// sum (m0+m1); total = L_appear + gamma*L_mask + beta*KL. Pixels with
// m_other = 1 contribute to neither reconstruction term. Throws
// numeric_error on degenerate crops (sum m1 == 0 or sum m0+m1 == 0).
LossTerms object_loss(const ObjectCrop& crop, const ReconOutput& recon, const LossConfig& cfg);

// Loss core shared with training/gradient checks: mask given as logits.
template <typename T>
LossTerms object_loss_core(const TensorT<T>& image, const Mask& m0, const Mask& m1,
                           const TensorT<T>& appearance, const TensorT<T>& mask_logits,
                           double kl_value, const LossConfig& cfg);

// Gradients of the reconstruction terms w.r.t. decoder outputs, scaled by
// `scale` (e.g. 1/batch); the KL term is handled by vae_backward.
template <typename T>
void object_loss_backward(const TensorT<T>& image, const Mask& m0, const Mask& m1,
                          const TensorT<T>& appearance, const TensorT<T>& mask_logits,
                          const LossConfig& cfg, double scale, TensorT<T>& d_appearance,
                          TensorT<T>& d_mask_logits);

struct TrainConfig {
    int epochs = 60;
    int lr_drop_epoch = 40;       // learning rate divided by 10 afterwards
    double lr = 1e-4;
    int batch_size = 16;
    int crops_per_object = 2;     // sampled per epoch, without replacement
    AugmentationSpec augmentation;
    LossConfig loss;
};

struct EpochLog {
    int epoch = 0;
    double appear = 0, mask = 0, kl = 0, total = 0;
};

struct TrainResult {
    VaeParams params;
    std::vector<EpochLog> log;
};

// Minibatch Adam on object_loss with the reparameterized latent;
// deterministic given the seed. Aborts with numeric_error on non-finite
// losses (reporting epoch and batch).
TrainResult train_object_model(const std::vector<ObjectCrop>& crops, const VaeSpec& spec,
                               const TrainConfig& cfg, uint64_t seed);

// Deterministic reconstruction through the posterior mean.
ReconOutput reconstruct(const VaeSpec& spec, const VaeParams& params, const Tensor& image);

// Deterministic decode of a latent through both decoders.
struct DecodedObject {
    Tensor appearance;   // [3,Hc,Wc]
    Tensor mask_prob;    // [Hc,Wc] at temperature 1
    Tensor mask_logits;  // [Hc,Wc]
};
DecodedObject sample_object(const VaeSpec& spec, const VaeParams& params, const Tensor& z);

// Crop dataset directory: crop_%06d.ppm + crop_%06d.json sidecars.
void write_crops(const std::string& dir, const std::vector<ObjectCrop>& crops);
std::vector<ObjectCrop> read_crops(const std::string& dir);

void write_train_log(const std::string& path, const std::vector<EpochLog>& log);

}  // namespace cfate::objmodel
