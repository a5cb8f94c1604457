#include "cfate/nn.hpp"

#include <algorithm>
#include <cstring>

namespace cfate {

namespace {

constexpr int kKernel = 3;
constexpr int kPad = 1;
constexpr double kLayerNormEps = 1e-5;

int conv_out_dim(int in, int stride) { return (in - 1) / stride + 1; }
int tconv_out_dim(int in, int stride) { return (in - 1) * stride + 1 + (stride - 1); }

int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

}  // namespace

std::vector<std::vector<int>> NetworkSpec::shape_chain() const {
    std::vector<std::vector<int>> chain;
    chain.push_back(input_shape);
    std::vector<int> cur = input_shape;
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const std::string where = "layer " + std::to_string(i);
        switch (l.kind) {
            case LayerKind::affine: {
                if (numel_of(cur) != l.in_features)
                    throw config_error(where + ": affine expects " + std::to_string(l.in_features) +
                                       " input features, got " + std::to_string(numel_of(cur)));
                if (!l.out_shape.empty()) {
                    if (numel_of(l.out_shape) != l.out_features)
                        throw config_error(where + ": affine out_shape does not match out_features");
                    cur = l.out_shape;
                } else {
                    cur = {l.out_features};
                }
                break;
            }
            case LayerKind::conv2d: {
                if (cur.size() != 3 || cur[0] != l.in_channels)
                    throw config_error(where + ": conv2d expects [C,H,W] input with C=" +
                                       std::to_string(l.in_channels));
                if (l.stride != 1 && l.stride != 2) throw config_error(where + ": stride must be 1 or 2");
                cur = {l.out_channels, conv_out_dim(cur[1], l.stride), conv_out_dim(cur[2], l.stride)};
                break;
            }
            case LayerKind::transposed_conv2d: {
                if (cur.size() != 3 || cur[0] != l.in_channels)
                    throw config_error(where + ": transposed_conv2d expects [C,H,W] input with C=" +
                                       std::to_string(l.in_channels));
                if (l.stride != 1 && l.stride != 2) throw config_error(where + ": stride must be 1 or 2");
                const int oh = tconv_out_dim(cur[1], l.stride);
                const int ow = tconv_out_dim(cur[2], l.stride);
                if (l.stride == 2 && (oh != 2 * cur[1] || ow != 2 * cur[2]))
                    throw config_error(where + ": stride-2 transposed conv must double the shape");
                cur = {l.out_channels, oh, ow};
                break;
            }
            case LayerKind::layer_norm:
                break;  // shape preserved
            case LayerKind::leaky_relu:
                if (!(l.slope > 0.0)) throw config_error(where + ": leaky_relu slope must be positive");
                break;
            case LayerKind::sigmoid:
                break;
        }
        chain.push_back(cur);
    }
    return chain;
}

void NetworkSpec::validate() const {
    const auto chain = shape_chain();
    if (latent_dim > 0) {
        const auto& out = chain.back();
        std::string got;
        for (int d : out) got += (got.empty() ? "" : "x") + std::to_string(d);
        if (out.size() != 1 || out[0] != 2 * latent_dim)
            throw config_error("encoder output must be [2*latent_dim], got [" + got + "]");
    }
}

std::vector<std::vector<int>> param_shapes(const NetworkSpec& net) {
    const auto chain = net.shape_chain();
    std::vector<std::vector<int>> shapes;
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        switch (l.kind) {
            case LayerKind::affine:
                shapes.push_back({l.out_features, l.in_features});
                shapes.push_back({l.out_features});
                break;
            case LayerKind::conv2d:
                shapes.push_back({l.out_channels, l.in_channels, kKernel, kKernel});
                shapes.push_back({l.out_channels});
                break;
            case LayerKind::transposed_conv2d:
                shapes.push_back({l.in_channels, l.out_channels, kKernel, kKernel});
                shapes.push_back({l.out_channels});
                break;
            case LayerKind::layer_norm: {
                const int c = chain[i][0];
                shapes.push_back({c});
                shapes.push_back({c});
                break;
            }
            case LayerKind::leaky_relu:
            case LayerKind::sigmoid:
                break;
        }
    }
    return shapes;
}

std::vector<std::string> param_names(const NetworkSpec& net) {
    std::vector<std::string> names;
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        const std::string p = std::to_string(i);
        switch (l.kind) {
            case LayerKind::affine:
            case LayerKind::conv2d:
            case LayerKind::transposed_conv2d:
                names.push_back(p + ".weight");
                names.push_back(p + ".bias");
                break;
            case LayerKind::layer_norm:
                names.push_back(p + ".gain");
                names.push_back(p + ".bias");
                break;
            case LayerKind::leaky_relu:
            case LayerKind::sigmoid:
                break;
        }
    }
    return names;
}

template <typename T>
std::vector<TensorT<T>> init_params(const NetworkSpec& net, Rng& rng) {
    std::vector<TensorT<T>> params;
    const auto chain = net.shape_chain();
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        auto glorot = [&](std::vector<int> shape, int fan_in, int fan_out) {
            TensorT<T> w(std::move(shape));
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& v : w.values) v = static_cast<T>(rng.uniform(-bound, bound));
            return w;
        };
        switch (l.kind) {
            case LayerKind::affine:
                params.push_back(glorot({l.out_features, l.in_features}, l.in_features, l.out_features));
                params.emplace_back(std::vector<int>{l.out_features});
                break;
            case LayerKind::conv2d:
                params.push_back(glorot({l.out_channels, l.in_channels, kKernel, kKernel},
                                        l.in_channels * kKernel * kKernel,
                                        l.out_channels * kKernel * kKernel));
                params.emplace_back(std::vector<int>{l.out_channels});
                break;
            case LayerKind::transposed_conv2d:
                params.push_back(glorot({l.in_channels, l.out_channels, kKernel, kKernel},
                                        l.in_channels * kKernel * kKernel,
                                        l.out_channels * kKernel * kKernel));
                params.emplace_back(std::vector<int>{l.out_channels});
                break;
            case LayerKind::layer_norm: {
                const int c = chain[i][0];
                TensorT<T> gain(std::vector<int>{c});
                std::fill(gain.values.begin(), gain.values.end(), T{1});
                params.push_back(std::move(gain));
                params.emplace_back(std::vector<int>{c});
                break;
            }
            case LayerKind::leaky_relu:
            case LayerKind::sigmoid:
                break;
        }
    }
    return params;
}

namespace {

template <typename T>
TensorT<T> affine_fwd(const LayerSpec& l, const TensorT<T>& w, const TensorT<T>& b,
                      const TensorT<T>& x) {
    TensorT<T> y(l.out_shape.empty() ? std::vector<int>{l.out_features} : l.out_shape);
    const int out = l.out_features, in = l.in_features;
    for (int o = 0; o < out; ++o) {
        T acc = b[o];
        const T* wrow = w.data() + static_cast<int64_t>(o) * in;
        for (int i = 0; i < in; ++i) acc += wrow[i] * x[i];
        y[o] = acc;
    }
    return y;
}

template <typename T>
TensorT<T> affine_bwd(const LayerSpec& l, const TensorT<T>& w, const TensorT<T>& x,
                      const TensorT<T>& dy, TensorT<T>& dw, TensorT<T>& db) {
    const int out = l.out_features, in = l.in_features;
    TensorT<T> dx;
    dx.shape = x.shape;
    dx.values.assign(x.values.size(), T{0});
    for (int o = 0; o < out; ++o) {
        const T g = dy[o];
        db[o] += g;
        T* dwrow = dw.data() + static_cast<int64_t>(o) * in;
        const T* wrow = w.data() + static_cast<int64_t>(o) * in;
        for (int i = 0; i < in; ++i) {
            dwrow[i] += g * x[i];
            dx[i] += g * wrow[i];
        }
    }
    return dx;
}

template <typename T>
TensorT<T> conv_fwd(const LayerSpec& l, const TensorT<T>& w, const TensorT<T>& b,
                    const TensorT<T>& x) {
    const int ic = l.in_channels, oc = l.out_channels, s = l.stride;
    const int h = x.shape[1], wd = x.shape[2];
    const int oh = conv_out_dim(h, s), ow = conv_out_dim(wd, s);
    TensorT<T> y({oc, oh, ow});
    for (int o = 0; o < oc; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                T acc = b[o];
                for (int i = 0; i < ic; ++i) {
                    const T* xin = x.data() + (static_cast<int64_t>(i) * h) * wd;
                    const T* wk = w.data() + ((static_cast<int64_t>(o) * ic + i) * kKernel) * kKernel;
                    for (int ky = 0; ky < kKernel; ++ky) {
                        const int iy = oy * s + ky - kPad;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kKernel; ++kx) {
                            const int ix = ox * s + kx - kPad;
                            if (ix < 0 || ix >= wd) continue;
                            acc += xin[iy * wd + ix] * wk[ky * kKernel + kx];
                        }
                    }
                }
                y[(static_cast<int64_t>(o) * oh + oy) * ow + ox] = acc;
            }
        }
    }
    return y;
}

template <typename T>
TensorT<T> conv_bwd(const LayerSpec& l, const TensorT<T>& w, const TensorT<T>& x,
                    const TensorT<T>& dy, TensorT<T>& dw, TensorT<T>& db) {
    const int ic = l.in_channels, oc = l.out_channels, s = l.stride;
    const int h = x.shape[1], wd = x.shape[2];
    const int oh = conv_out_dim(h, s), ow = conv_out_dim(wd, s);
    TensorT<T> dx;
    dx.shape = x.shape;
    dx.values.assign(x.values.size(), T{0});
    for (int o = 0; o < oc; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const T g = dy[(static_cast<int64_t>(o) * oh + oy) * ow + ox];
                db[o] += g;
                for (int i = 0; i < ic; ++i) {
                    const T* xin = x.data() + (static_cast<int64_t>(i) * h) * wd;
                    T* dxin = dx.data() + (static_cast<int64_t>(i) * h) * wd;
                    const int64_t wbase = ((static_cast<int64_t>(o) * ic + i) * kKernel) * kKernel;
                    for (int ky = 0; ky < kKernel; ++ky) {
                        const int iy = oy * s + ky - kPad;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kKernel; ++kx) {
                            const int ix = ox * s + kx - kPad;
                            if (ix < 0 || ix >= wd) continue;
                            dw[wbase + ky * kKernel + kx] += g * xin[iy * wd + ix];
                            dxin[iy * wd + ix] += g * w[wbase + ky * kKernel + kx];
                        }
                    }
                }
            }
        }
    }
    return dx;
}

template <typename T>
TensorT<T> tconv_fwd(const LayerSpec& l, const TensorT<T>& w, const TensorT<T>& b,
                     const TensorT<T>& x) {
    const int ic = l.in_channels, oc = l.out_channels, s = l.stride;
    const int h = x.shape[1], wd = x.shape[2];
    const int oh = tconv_out_dim(h, s), ow = tconv_out_dim(wd, s);
    TensorT<T> y({oc, oh, ow});
    for (int o = 0; o < oc; ++o) {
        T* yout = y.data() + (static_cast<int64_t>(o) * oh) * ow;
        for (int64_t j = 0; j < static_cast<int64_t>(oh) * ow; ++j) yout[j] = b[o];
    }
    for (int i = 0; i < ic; ++i) {
        const T* xin = x.data() + (static_cast<int64_t>(i) * h) * wd;
        for (int o = 0; o < oc; ++o) {
            T* yout = y.data() + (static_cast<int64_t>(o) * oh) * ow;
            const T* wk = w.data() + ((static_cast<int64_t>(i) * oc + o) * kKernel) * kKernel;
            for (int iy = 0; iy < h; ++iy) {
                for (int ix = 0; ix < wd; ++ix) {
                    const T v = xin[iy * wd + ix];
                    for (int ky = 0; ky < kKernel; ++ky) {
                        const int ny = iy * s + ky - kPad;
                        if (ny < 0 || ny >= oh) continue;
                        for (int kx = 0; kx < kKernel; ++kx) {
                            const int nx = ix * s + kx - kPad;
                            if (nx < 0 || nx >= ow) continue;
                            yout[ny * ow + nx] += v * wk[ky * kKernel + kx];
                        }
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
TensorT<T> tconv_bwd(const LayerSpec& l, const TensorT<T>& w, const TensorT<T>& x,
                     const TensorT<T>& dy, TensorT<T>& dw, TensorT<T>& db) {
    const int ic = l.in_channels, oc = l.out_channels, s = l.stride;
    const int h = x.shape[1], wd = x.shape[2];
    const int oh = tconv_out_dim(h, s), ow = tconv_out_dim(wd, s);
    TensorT<T> dx;
    dx.shape = x.shape;
    dx.values.assign(x.values.size(), T{0});
    for (int o = 0; o < oc; ++o) {
        const T* g = dy.data() + (static_cast<int64_t>(o) * oh) * ow;
        for (int64_t j = 0; j < static_cast<int64_t>(oh) * ow; ++j) db[o] += g[j];
    }
    for (int i = 0; i < ic; ++i) {
        const T* xin = x.data() + (static_cast<int64_t>(i) * h) * wd;
        T* dxin = dx.data() + (static_cast<int64_t>(i) * h) * wd;
        for (int o = 0; o < oc; ++o) {
            const T* g = dy.data() + (static_cast<int64_t>(o) * oh) * ow;
            const int64_t wbase = ((static_cast<int64_t>(i) * oc + o) * kKernel) * kKernel;
            for (int iy = 0; iy < h; ++iy) {
                for (int ix = 0; ix < wd; ++ix) {
                    T acc = 0;
                    for (int ky = 0; ky < kKernel; ++ky) {
                        const int ny = iy * s + ky - kPad;
                        if (ny < 0 || ny >= oh) continue;
                        for (int kx = 0; kx < kKernel; ++kx) {
                            const int nx = ix * s + kx - kPad;
                            if (nx < 0 || nx >= ow) continue;
                            const T gy = g[ny * ow + nx];
                            dw[wbase + ky * kKernel + kx] += xin[iy * wd + ix] * gy;
                            acc += w[wbase + ky * kKernel + kx] * gy;
                        }
                    }
                    dxin[iy * wd + ix] += acc;
                }
            }
        }
    }
    return dx;
}

template <typename T>
TensorT<T> layernorm_fwd(const TensorT<T>& gain, const TensorT<T>& bias, const TensorT<T>& x) {
    const int64_t n = x.numel();
    const int c = x.shape[0];
    const int64_t per_c = n / c;
    double mean = 0;
    for (const T& v : x.values) mean += static_cast<double>(v);
    mean /= static_cast<double>(n);
    double var = 0;
    for (const T& v : x.values) {
        const double d = static_cast<double>(v) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    TensorT<T> y;
    y.shape = x.shape;
    y.values.resize(x.values.size());
    for (int64_t i = 0; i < n; ++i) {
        const int ci = static_cast<int>(i / per_c);
        const double norm = (static_cast<double>(x[i]) - mean) * inv;
        y[i] = static_cast<T>(static_cast<double>(gain[ci]) * norm + static_cast<double>(bias[ci]));
    }
    return y;
}

template <typename T>
TensorT<T> layernorm_bwd(const TensorT<T>& gain, const TensorT<T>& x, const TensorT<T>& dy,
                         TensorT<T>& dgain, TensorT<T>& dbias) {
    const int64_t n = x.numel();
    const int c = x.shape[0];
    const int64_t per_c = n / c;
    double mean = 0;
    for (const T& v : x.values) mean += static_cast<double>(v);
    mean /= static_cast<double>(n);
    double var = 0;
    for (const T& v : x.values) {
        const double d = static_cast<double>(v) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);

    // norm_i = (x_i - mean) * inv; out_i = gain_c * norm_i + bias_c
    std::vector<double> norm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) norm[i] = (static_cast<double>(x[i]) - mean) * inv;

    double g_mean = 0, gn_mean = 0;
    std::vector<double> g(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const int ci = static_cast<int>(i / per_c);
        g[i] = static_cast<double>(dy[i]) * static_cast<double>(gain[ci]);
        g_mean += g[i];
        gn_mean += g[i] * norm[i];
        dgain[ci] += static_cast<T>(static_cast<double>(dy[i]) * norm[i]);
        dbias[ci] += dy[i];
    }
    g_mean /= static_cast<double>(n);
    gn_mean /= static_cast<double>(n);

    TensorT<T> dx;
    dx.shape = x.shape;
    dx.values.resize(x.values.size());
    for (int64_t i = 0; i < n; ++i)
        dx[i] = static_cast<T>(inv * (g[i] - g_mean - norm[i] * gn_mean));
    return dx;
}

}  // namespace

template <typename T>
TensorT<T> forward(const NetworkSpec& net, const std::vector<TensorT<T>>& params,
                   const TensorT<T>& input, Tape<T>* tape) {
    if (input.shape != net.input_shape)
        throw config_error("network input shape mismatch: expected " +
                           TensorT<T>(net.input_shape).shape_str() + ", got " + input.shape_str());
    if (tape) {
        tape->acts.clear();
        tape->acts.push_back(input);
    }
    TensorT<T> cur = input;
    size_t p = 0;
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        switch (l.kind) {
            case LayerKind::affine: {
                const TensorT<T>& w = params[p++];
                const TensorT<T>& b = params[p++];
                cur = affine_fwd(l, w, b, cur);
                break;
            }
            case LayerKind::conv2d: {
                const TensorT<T>& w = params[p++];
                const TensorT<T>& b = params[p++];
                cur = conv_fwd(l, w, b, cur);
                break;
            }
            case LayerKind::transposed_conv2d: {
                const TensorT<T>& w = params[p++];
                const TensorT<T>& b = params[p++];
                cur = tconv_fwd(l, w, b, cur);
                break;
            }
            case LayerKind::layer_norm: {
                const TensorT<T>& gain = params[p++];
                const TensorT<T>& bias = params[p++];
                cur = layernorm_fwd(gain, bias, cur);
                break;
            }
            case LayerKind::leaky_relu: {
                const T slope = static_cast<T>(l.slope);
                for (auto& v : cur.values) v = v >= T{0} ? v : slope * v;
                break;
            }
            case LayerKind::sigmoid: {
                for (auto& v : cur.values) v = T{1} / (T{1} + std::exp(-v));
                break;
            }
        }
        if (tape) tape->acts.push_back(cur);
    }
    return cur;
}

template <typename T>
TensorT<T> backward(const NetworkSpec& net, const std::vector<TensorT<T>>& params,
                    const Tape<T>& tape, const TensorT<T>& upstream,
                    std::vector<TensorT<T>>& param_grads) {
    if (tape.acts.size() != net.layers.size() + 1)
        throw config_error("backward: tape does not match network");
    // param index of each layer's first tensor
    std::vector<size_t> pstart(net.layers.size());
    size_t p = 0;
    for (size_t i = 0; i < net.layers.size(); ++i) {
        pstart[i] = p;
        const LayerKind k = net.layers[i].kind;
        if (k != LayerKind::leaky_relu && k != LayerKind::sigmoid) p += 2;
    }
    if (param_grads.size() != p) throw config_error("backward: param_grads size mismatch");

    TensorT<T> grad = upstream;
    for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
        const LayerSpec& l = net.layers[static_cast<size_t>(i)];
        const TensorT<T>& x = tape.acts[static_cast<size_t>(i)];
        const TensorT<T>& y = tape.acts[static_cast<size_t>(i) + 1];
        switch (l.kind) {
            case LayerKind::affine:
                grad = affine_bwd(l, params[pstart[i]], x, grad, param_grads[pstart[i]],
                                  param_grads[pstart[i] + 1]);
                break;
            case LayerKind::conv2d:
                grad = conv_bwd(l, params[pstart[i]], x, grad, param_grads[pstart[i]],
                                param_grads[pstart[i] + 1]);
                break;
            case LayerKind::transposed_conv2d:
                grad = tconv_bwd(l, params[pstart[i]], x, grad, param_grads[pstart[i]],
                                 param_grads[pstart[i] + 1]);
                break;
            case LayerKind::layer_norm:
                grad = layernorm_bwd(params[pstart[i]], x, grad, param_grads[pstart[i]],
                                     param_grads[pstart[i] + 1]);
                break;
            case LayerKind::leaky_relu: {
                const T slope = static_cast<T>(l.slope);
                TensorT<T> dx;
                dx.shape = x.shape;
                dx.values.resize(x.values.size());
                for (int64_t j = 0; j < x.numel(); ++j)
                    dx[j] = x[j] >= T{0} ? grad[j] : slope * grad[j];
                grad = std::move(dx);
                break;
            }
            case LayerKind::sigmoid: {
                TensorT<T> dx;
                dx.shape = x.shape;
                dx.values.resize(x.values.size());
                for (int64_t j = 0; j < x.numel(); ++j) dx[j] = grad[j] * y[j] * (T{1} - y[j]);
                grad = std::move(dx);
                break;
            }
        }
        if (!grad.all_finite())
            throw numeric_error("non-finite gradient at layer " + std::to_string(i));
    }
    return grad;
}

template <typename T>
double kl_standard_normal(const TensorT<T>& mu, const TensorT<T>& logvar) {
    check_same_shape(mu, logvar, "kl_standard_normal");
    double acc = 0;
    for (int64_t i = 0; i < mu.numel(); ++i) {
        const double m = mu[i], lv = logvar[i];
        acc += m * m + std::exp(lv) - 1.0 - lv;
    }
    return 0.5 * acc;
}

template <typename T>
void kl_standard_normal_backward(const TensorT<T>& mu, const TensorT<T>& logvar, double weight,
                                 TensorT<T>& grad_mu, TensorT<T>& grad_logvar) {
    for (int64_t i = 0; i < mu.numel(); ++i) {
        grad_mu[i] += static_cast<T>(weight * mu[i]);
        grad_logvar[i] += static_cast<T>(weight * 0.5 * (std::exp(static_cast<double>(logvar[i])) - 1.0));
    }
}

template std::vector<Tensor> init_params<float>(const NetworkSpec&, Rng&);
template std::vector<TensorD> init_params<double>(const NetworkSpec&, Rng&);
template Tensor forward<float>(const NetworkSpec&, const std::vector<Tensor>&, const Tensor&, Tape<float>*);
template TensorD forward<double>(const NetworkSpec&, const std::vector<TensorD>&, const TensorD&, Tape<double>*);
template Tensor backward<float>(const NetworkSpec&, const std::vector<Tensor>&, const Tape<float>&,
                                const Tensor&, std::vector<Tensor>&);
template TensorD backward<double>(const NetworkSpec&, const std::vector<TensorD>&, const Tape<double>&,
                                  const TensorD&, std::vector<TensorD>&);
template double kl_standard_normal<float>(const Tensor&, const Tensor&);
template double kl_standard_normal<double>(const TensorD&, const TensorD&);
template void kl_standard_normal_backward<float>(const Tensor&, const Tensor&, double, Tensor&, Tensor&);
template void kl_standard_normal_backward<double>(const TensorD&, const TensorD&, double, TensorD&, TensorD&);

}  // namespace cfate
