#include "cfate/vae.hpp"

#include <cmath>

#include "cfate/errors.hpp"

namespace cfate {

void VaeSpec::validate() const {
    encoder.validate();
    const auto enc_out = encoder.output_shape();
    if (enc_out.size() != 1 || enc_out[0] != 2 * latent_dim)
        throw config_error("VaeSpec: encoder must emit 2*latent_dim values");
    if (decoder_app.input_shape != std::vector<int>{latent_dim})
        throw config_error("VaeSpec: appearance decoder must take [latent_dim] input");
    decoder_app.validate();
    if (has_mask_decoder()) {
        if (decoder_mask.input_shape != std::vector<int>{latent_dim})
            throw config_error("VaeSpec: mask decoder must take [latent_dim] input");
        decoder_mask.validate();
        const auto a = decoder_app.output_shape();
        const auto m = decoder_mask.output_shape();
        if (a.size() != 3 || m.size() != 3 || a[1] != m[1] || a[2] != m[2])
            throw config_error("VaeSpec: decoder output shapes disagree");
    }
}

VaeSpec make_vae_spec(int in_h, int in_w, const std::vector<int>& channels,
                      const std::vector<int>& strides, int latent_dim, bool with_mask_decoder) {
    if (channels.empty() || channels.size() != strides.size())
        throw config_error("make_vae_spec: channels/strides must be nonempty and equal length");
    if (latent_dim <= 0) throw config_error("make_vae_spec: latent_dim must be positive");

    int h = in_h, w = in_w;
    const int n = static_cast<int>(channels.size());
    for (int i = 0; i < n; ++i) {
        const int s = strides[static_cast<size_t>(i)];
        if (s != 1 && s != 2) throw config_error("make_vae_spec: strides must be 1 or 2");
        if (s == 2 && (h % 2 || w % 2))
            throw config_error("make_vae_spec: stride-2 layer needs even input dimensions");
        h = (h - 1) / s + 1;
        w = (w - 1) / s + 1;
    }
    const int c_last = channels.back();
    const int flat = c_last * h * w;

    VaeSpec spec;
    spec.latent_dim = latent_dim;

    spec.encoder.input_shape = {3, in_h, in_w};
    spec.encoder.latent_dim = latent_dim;
    int prev_c = 3;
    for (int i = 0; i < n; ++i) {
        spec.encoder.layers.push_back(LayerSpec::conv(prev_c, channels[static_cast<size_t>(i)],
                                                      strides[static_cast<size_t>(i)]));
        spec.encoder.layers.push_back(LayerSpec::layernorm());
        spec.encoder.layers.push_back(LayerSpec::lrelu());
        prev_c = channels[static_cast<size_t>(i)];
    }
    spec.encoder.layers.push_back(LayerSpec::affine(flat, 2 * latent_dim));

    auto make_decoder = [&](int out_channels, bool final_sigmoid) {
        NetworkSpec dec;
        dec.input_shape = {latent_dim};
        dec.layers.push_back(LayerSpec::affine(latent_dim, flat, {c_last, h, w}));
        dec.layers.push_back(LayerSpec::layernorm());
        dec.layers.push_back(LayerSpec::lrelu());
        // reversed layer parameters with transposed convolutions
        for (int i = n - 1; i >= 0; --i) {
            const int in_c = channels[static_cast<size_t>(i)];
            const int out_c = i > 0 ? channels[static_cast<size_t>(i - 1)] : channels[0];
            dec.layers.push_back(LayerSpec::tconv(in_c, out_c, strides[static_cast<size_t>(i)]));
            dec.layers.push_back(LayerSpec::layernorm());
            dec.layers.push_back(LayerSpec::lrelu());
        }
        // additional convolutional decoding layer, no norm or nonlinearity
        dec.layers.push_back(LayerSpec::conv(channels[0], out_channels, 1));
        if (final_sigmoid) dec.layers.push_back(LayerSpec::sigmoid());
        return dec;
    };

    spec.decoder_app = make_decoder(3, true);
    if (with_mask_decoder) spec.decoder_mask = make_decoder(1, false);
    spec.validate();
    return spec;
}

std::vector<NamedTensor> vae_to_named(const VaeSpec& spec, const VaeParams& params) {
    std::vector<NamedTensor> named;
    auto push = [&named](const std::string& prefix, const NetworkSpec& net,
                         const std::vector<Tensor>& tensors) {
        const auto names = param_names(net);
        if (names.size() != tensors.size())
            throw config_error("vae_to_named: parameter count mismatch for " + prefix);
        for (size_t i = 0; i < names.size(); ++i) named.push_back({prefix + names[i], tensors[i]});
    };
    push("enc.", spec.encoder, params.enc);
    push("dec_app.", spec.decoder_app, params.dec_app);
    if (spec.has_mask_decoder()) push("dec_mask.", spec.decoder_mask, params.dec_mask);
    return named;
}

VaeParams vae_from_named(const VaeSpec& spec, const std::vector<NamedTensor>& named) {
    VaeParams params;
    size_t idx = 0;
    auto pull = [&](const std::string& prefix, const NetworkSpec& net, std::vector<Tensor>& out) {
        const auto names = param_names(net);
        const auto shapes = param_shapes(net);
        for (size_t i = 0; i < names.size(); ++i, ++idx) {
            if (idx >= named.size()) throw format_error("weight file: missing tensor " + prefix + names[i]);
            const NamedTensor& nt = named[idx];
            if (nt.name != prefix + names[i])
                throw format_error("weight file: expected tensor " + prefix + names[i] + ", found " + nt.name);
            if (nt.tensor.shape != shapes[i])
                throw format_error("weight file: shape mismatch for " + nt.name);
            out.push_back(nt.tensor);
        }
    };
    pull("enc.", spec.encoder, params.enc);
    pull("dec_app.", spec.decoder_app, params.dec_app);
    if (spec.has_mask_decoder()) pull("dec_mask.", spec.decoder_mask, params.dec_mask);
    if (idx != named.size()) throw format_error("weight file: unexpected extra tensors");
    return params;
}

template <typename T>
VaeForwardT<T> vae_forward(const VaeSpec& spec, const VaeParamsT<T>& params, const TensorT<T>& input,
                           const TensorT<T>& eps) {
    const int L = spec.latent_dim;
    if (eps.numel() != L) throw config_error("vae_forward: eps must have latent_dim values");
    VaeForwardT<T> fwd;
    const TensorT<T> enc_out = forward(spec.encoder, params.enc, input, &fwd.enc_tape);
    fwd.mu = TensorT<T>({L});
    fwd.logvar = TensorT<T>({L});
    for (int i = 0; i < L; ++i) {
        fwd.mu[i] = enc_out[i];
        fwd.logvar[i] = enc_out[L + i];
    }
    fwd.eps = eps;
    fwd.z = TensorT<T>({L});
    for (int i = 0; i < L; ++i)
        fwd.z[i] = fwd.mu[i] + std::exp(fwd.logvar[i] / T{2}) * eps[i];
    fwd.appearance = forward(spec.decoder_app, params.dec_app, fwd.z, &fwd.app_tape);
    if (spec.has_mask_decoder())
        fwd.mask_logits = forward(spec.decoder_mask, params.dec_mask, fwd.z, &fwd.mask_tape);
    return fwd;
}

template <typename T>
VaeForwardT<T> vae_forward_mean(const VaeSpec& spec, const VaeParamsT<T>& params,
                                const TensorT<T>& input) {
    return vae_forward(spec, params, input, TensorT<T>({spec.latent_dim}));
}

template <typename T>
void vae_backward(const VaeSpec& spec, const VaeParamsT<T>& params, const VaeForwardT<T>& fwd,
                  const TensorT<T>& d_appearance, const TensorT<T>& d_mask_logits, double kl_weight,
                  VaeParamsT<T>& grads) {
    const int L = spec.latent_dim;
    TensorT<T> dz({L});
    {
        const TensorT<T> dz_app =
            backward(spec.decoder_app, params.dec_app, fwd.app_tape, d_appearance, grads.dec_app);
        for (int i = 0; i < L; ++i) dz[i] += dz_app[i];
    }
    if (spec.has_mask_decoder() && d_mask_logits.numel() > 0) {
        const TensorT<T> dz_mask =
            backward(spec.decoder_mask, params.dec_mask, fwd.mask_tape, d_mask_logits, grads.dec_mask);
        for (int i = 0; i < L; ++i) dz[i] += dz_mask[i];
    }
    // z = mu + exp(logvar/2) * eps
    TensorT<T> d_enc_out({2 * L});
    for (int i = 0; i < L; ++i) {
        d_enc_out[i] = dz[i];
        d_enc_out[L + i] = static_cast<T>(dz[i] * 0.5 * std::exp(fwd.logvar[i] / T{2}) * fwd.eps[i]);
    }
    if (kl_weight != 0.0) {
        for (int i = 0; i < L; ++i) {
            d_enc_out[i] += static_cast<T>(kl_weight * fwd.mu[i]);
            d_enc_out[L + i] +=
                static_cast<T>(kl_weight * 0.5 * (std::exp(static_cast<double>(fwd.logvar[i])) - 1.0));
        }
    }
    backward(spec.encoder, params.enc, fwd.enc_tape, d_enc_out, grads.enc);
}

template struct VaeForwardT<float>;
template struct VaeForwardT<double>;
template VaeForwardT<float> vae_forward<float>(const VaeSpec&, const VaeParamsT<float>&, const Tensor&,
                                               const Tensor&);
template VaeForwardT<double> vae_forward<double>(const VaeSpec&, const VaeParamsT<double>&,
                                                 const TensorD&, const TensorD&);
template VaeForwardT<float> vae_forward_mean<float>(const VaeSpec&, const VaeParamsT<float>&,
                                                    const Tensor&);
template VaeForwardT<double> vae_forward_mean<double>(const VaeSpec&, const VaeParamsT<double>&,
                                                      const TensorD&);
template void vae_backward<float>(const VaeSpec&, const VaeParamsT<float>&, const VaeForwardT<float>&,
                                  const Tensor&, const Tensor&, double, VaeParamsT<float>&);
template void vae_backward<double>(const VaeSpec&, const VaeParamsT<double>&,
                                   const VaeForwardT<double>&, const TensorD&, const TensorD&, double,
                                   VaeParamsT<double>&);

}  // namespace cfate
