#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cfate/errors.hpp"
#include "cfate/rng.hpp"
#include "cfate/tensor.hpp"

namespace cfate {

// Differentiable layer set. Convolutions use a fixed 3x3 kernel with padding
// 1; transposed convolutions with stride 2 use output padding 1 so spatial
// dimensions double exactly (asserted at network construction).
enum class LayerKind { affine, conv2d, transposed_conv2d, layer_norm, leaky_relu, sigmoid };

struct LayerSpec {
    LayerKind kind;
    int in_channels = 0;   // conv2d / transposed_conv2d
    int out_channels = 0;  // conv2d / transposed_conv2d
    int stride = 1;        // conv2d / transposed_conv2d, in {1,2}
    int in_features = 0;   // affine
    int out_features = 0;  // affine
    std::vector<int> out_shape;  // affine only: optional CHW view of the output
    double slope = 0.01;   // leaky_relu

    static LayerSpec affine(int in_f, int out_f, std::vector<int> out_shape = {}) {
        LayerSpec l;
        l.kind = LayerKind::affine;
        l.in_features = in_f;
        l.out_features = out_f;
        l.out_shape = std::move(out_shape);
        return l;
    }
    static LayerSpec conv(int in_c, int out_c, int stride) {
        LayerSpec l;
        l.kind = LayerKind::conv2d;
        l.in_channels = in_c;
        l.out_channels = out_c;
        l.stride = stride;
        return l;
    }
    static LayerSpec tconv(int in_c, int out_c, int stride) {
        LayerSpec l;
        l.kind = LayerKind::transposed_conv2d;
        l.in_channels = in_c;
        l.out_channels = out_c;
        l.stride = stride;
        return l;
    }
    static LayerSpec layernorm() {
        LayerSpec l;
        l.kind = LayerKind::layer_norm;
        return l;
    }
    static LayerSpec lrelu(double slope = 0.01) {
        LayerSpec l;
        l.kind = LayerKind::leaky_relu;
        l.slope = slope;
        return l;
    }
    static LayerSpec sigmoid() {
        LayerSpec l;
        l.kind = LayerKind::sigmoid;
        return l;
    }
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::vector<int> input_shape;  // [C,H,W] or [N]
    int latent_dim = 0;            // encoders: output must be [2*latent_dim]

    // Walks the layer algebra; throws config_error on any incompatibility.
    // Returned chain has size layers.size()+1, chain[0] == input_shape.
    std::vector<std::vector<int>> shape_chain() const;
    std::vector<int> output_shape() const { return shape_chain().back(); }
    void validate() const;
};

// Per-layer parameter shapes:
//   affine:            weight [out,in], bias [out]
//   conv2d:            weight [out_c,in_c,3,3], bias [out_c]
//   transposed_conv2d: weight [in_c,out_c,3,3], bias [out_c]
//   layer_norm:        gain [C], bias [C]  (C = leading dim of its input)
//   leaky_relu/sigmoid: none
std::vector<std::vector<int>> param_shapes(const NetworkSpec& net);

// Names like "0.weight", "0.bias", "3.gain" aligned with param_shapes order.
std::vector<std::string> param_names(const NetworkSpec& net);

template <typename T>
std::vector<TensorT<T>> init_params(const NetworkSpec& net, Rng& rng);

// Records every intermediate activation so backward can be replayed.
template <typename T>
struct Tape {
    std::vector<TensorT<T>> acts;  // acts[0] = input, acts[i+1] = layer i output
};

template <typename T>
TensorT<T> forward(const NetworkSpec& net, const std::vector<TensorT<T>>& params,
                   const TensorT<T>& input, Tape<T>* tape = nullptr);

// Returns the gradient w.r.t. the input; parameter gradients are accumulated
// (+=) into param_grads, which must be zero-or-previous-gradient tensors
// shaped like the parameters. Gradients are linear in the upstream gradient.
template <typename T>
TensorT<T> backward(const NetworkSpec& net, const std::vector<TensorT<T>>& params,
                    const Tape<T>& tape, const TensorT<T>& upstream,
                    std::vector<TensorT<T>>& param_grads);

// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)
template <typename T>
double kl_standard_normal(const TensorT<T>& mu, const TensorT<T>& logvar);

// d(kl)/d(mu) = mu, d(kl)/d(logvar) = 0.5*(exp(logvar)-1); scaled by weight
// and accumulated into the given gradient tensors.
template <typename T>
void kl_standard_normal_backward(const TensorT<T>& mu, const TensorT<T>& logvar, double weight,
                                 TensorT<T>& grad_mu, TensorT<T>& grad_logvar);

extern template std::vector<Tensor> init_params<float>(const NetworkSpec&, Rng&);
extern template std::vector<TensorD> init_params<double>(const NetworkSpec&, Rng&);
extern template Tensor forward<float>(const NetworkSpec&, const std::vector<Tensor>&, const Tensor&, Tape<float>*);
extern template TensorD forward<double>(const NetworkSpec&, const std::vector<TensorD>&, const TensorD&, Tape<double>*);
extern template Tensor backward<float>(const NetworkSpec&, const std::vector<Tensor>&, const Tape<float>&,
                                       const Tensor&, std::vector<Tensor>&);
extern template TensorD backward<double>(const NetworkSpec&, const std::vector<TensorD>&, const Tape<double>&,
                                         const TensorD&, std::vector<TensorD>&);
extern template double kl_standard_normal<float>(const Tensor&, const Tensor&);
extern template double kl_standard_normal<double>(const TensorD&, const TensorD&);
extern template void kl_standard_normal_backward<float>(const Tensor&, const Tensor&, double, Tensor&, Tensor&);
extern template void kl_standard_normal_backward<double>(const TensorD&, const TensorD&, double, TensorD&, TensorD&);

}  // namespace cfate
