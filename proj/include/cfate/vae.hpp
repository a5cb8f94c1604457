#pragma once

#include <string>
#include <vector>

#include "cfate/adam.hpp"
#include "cfate/nn.hpp"
#include "cfate/rng.hpp"
#include "cfate/weights_io.hpp"

namespace cfate {

// Encoder/decoder bundle. Object models carry two decoders (appearance with
// a final sigmoid, mask emitting logits); background models only decode
// appearance.
struct VaeSpec {
    NetworkSpec encoder;
    NetworkSpec decoder_app;
    NetworkSpec decoder_mask;  // empty layer list when absent
    int latent_dim = 0;

    bool has_mask_decoder() const { return !decoder_mask.layers.empty(); }
    void validate() const;
};

// Conv stack per the shared architecture family: each hidden layer is a 3x3
// convolution + layer norm + leaky ReLU; decoders mirror the encoder with
// transposed convolutions and end in an extra plain conv layer.
VaeSpec make_vae_spec(int in_h, int in_w, const std::vector<int>& channels,
                      const std::vector<int>& strides, int latent_dim, bool with_mask_decoder);

template <typename T>
struct VaeParamsT {
    std::vector<TensorT<T>> enc, dec_app, dec_mask;
};
using VaeParams = VaeParamsT<float>;

template <typename T>
VaeParamsT<T> init_vae(const VaeSpec& spec, Rng& rng) {
    VaeParamsT<T> p;
    p.enc = init_params<T>(spec.encoder, rng);
    p.dec_app = init_params<T>(spec.decoder_app, rng);
    if (spec.has_mask_decoder()) p.dec_mask = init_params<T>(spec.decoder_mask, rng);
    return p;
}

std::vector<NamedTensor> vae_to_named(const VaeSpec& spec, const VaeParams& params);
VaeParams vae_from_named(const VaeSpec& spec, const std::vector<NamedTensor>& named);

// One training-mode forward pass: z = mu + exp(logvar/2) * eps.
template <typename T>
struct VaeForwardT {
    Tape<T> enc_tape, app_tape, mask_tape;
    TensorT<T> mu, logvar, eps, z;
    TensorT<T> appearance;   // decoder_app output
    TensorT<T> mask_logits;  // empty when no mask decoder
};

template <typename T>
VaeForwardT<T> vae_forward(const VaeSpec& spec, const VaeParamsT<T>& params, const TensorT<T>& input,
                           const TensorT<T>& eps);

// eps = 0, i.e. decode the posterior mean.
template <typename T>
VaeForwardT<T> vae_forward_mean(const VaeSpec& spec, const VaeParamsT<T>& params,
                                const TensorT<T>& input);

// Backward through decoders, reparameterization and encoder. d_appearance /
// d_mask_logits are gradients w.r.t. the decoder outputs; kl_weight scales
// the KL term's contribution to (mu, logvar). All gradients accumulate.
template <typename T>
void vae_backward(const VaeSpec& spec, const VaeParamsT<T>& params, const VaeForwardT<T>& fwd,
                  const TensorT<T>& d_appearance, const TensorT<T>& d_mask_logits, double kl_weight,
                  VaeParamsT<T>& grads);

template <typename T>
VaeParamsT<T> zero_grads_like(const VaeParamsT<T>& params) {
    VaeParamsT<T> g;
    for (const auto& p : params.enc) g.enc.emplace_back(p.shape);
    for (const auto& p : params.dec_app) g.dec_app.emplace_back(p.shape);
    for (const auto& p : params.dec_mask) g.dec_mask.emplace_back(p.shape);
    return g;
}

// Adam over the three parameter groups.
template <typename T>
struct VaeAdamT {
    AdamStateT<T> enc, dec_app, dec_mask;

    static VaeAdamT make(const VaeParamsT<T>& params, double lr) {
        VaeAdamT s;
        s.enc = AdamStateT<T>::make(params.enc, lr);
        s.dec_app = AdamStateT<T>::make(params.dec_app, lr);
        s.dec_mask = AdamStateT<T>::make(params.dec_mask, lr);
        return s;
    }
    void set_lr(double lr) {
        enc.lr = lr;
        dec_app.lr = lr;
        dec_mask.lr = lr;
    }
    void step(VaeParamsT<T>& params, const VaeParamsT<T>& grads) {
        adam_step(enc, params.enc, grads.enc);
        adam_step(dec_app, params.dec_app, grads.dec_app);
        if (!params.dec_mask.empty()) adam_step(dec_mask, params.dec_mask, grads.dec_mask);
    }
};
using VaeAdam = VaeAdamT<float>;

extern template struct VaeForwardT<float>;
extern template struct VaeForwardT<double>;
extern template VaeForwardT<float> vae_forward<float>(const VaeSpec&, const VaeParamsT<float>&,
                                                      const Tensor&, const Tensor&);
extern template VaeForwardT<double> vae_forward<double>(const VaeSpec&, const VaeParamsT<double>&,
                                                        const TensorD&, const TensorD&);
extern template VaeForwardT<float> vae_forward_mean<float>(const VaeSpec&, const VaeParamsT<float>&,
                                                           const Tensor&);
extern template VaeForwardT<double> vae_forward_mean<double>(const VaeSpec&, const VaeParamsT<double>&,
                                                             const TensorD&);
extern template void vae_backward<float>(const VaeSpec&, const VaeParamsT<float>&,
                                         const VaeForwardT<float>&, const Tensor&, const Tensor&,
                                         double, VaeParamsT<float>&);
extern template void vae_backward<double>(const VaeSpec&, const VaeParamsT<double>&,
                                          const VaeForwardT<double>&, const TensorD&, const TensorD&,
                                          double, VaeParamsT<double>&);

}  // namespace cfate
