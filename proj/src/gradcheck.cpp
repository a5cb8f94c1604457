#include "cfate/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "cfate/background_model.hpp"
#include "cfate/nn.hpp"
#include "cfate/object_model.hpp"
#include "cfate/rng.hpp"
#include "cfate/vae.hpp"

namespace cfate {

namespace {

constexpr double kStep = 1e-5;

double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
    return std::fabs(analytic - numeric) / denom;
}

TensorD random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    TensorD t(std::move(shape));
    for (auto& v : t.values) v = scale * rng.normal();
    return t;
}

// Central differences are only valid away from the leaky-ReLU kink; a probe
// step of 1e-5 moves activations by well under this margin.
constexpr double kKinkMargin = 1e-3;

bool away_from_kinks(const NetworkSpec& net, const std::vector<TensorD>& params,
                     const TensorD& input) {
    Tape<double> tape;
    forward<double>(net, params, input, &tape);
    for (size_t i = 0; i < net.layers.size(); ++i) {
        if (net.layers[i].kind != LayerKind::leaky_relu) continue;
        for (double v : tape.acts[i].values)
            if (std::fabs(v) < kKinkMargin) return false;
    }
    return true;
}

bool tape_away_from_kinks(const NetworkSpec& net, const Tape<double>& tape) {
    for (size_t i = 0; i < net.layers.size(); ++i) {
        if (net.layers[i].kind != LayerKind::leaky_relu) continue;
        for (double v : tape.acts[i].values)
            if (std::fabs(v) < kKinkMargin) return false;
    }
    return true;
}

// max relative error between analytic parameter+input gradients and central
// differences for scalar objective <forward(input), upstream>
double check_network(const NetworkSpec& net, std::vector<TensorD>& params, TensorD& input,
                     Rng& rng) {
    const TensorD out0 = forward<double>(net, params, input, nullptr);
    TensorD upstream = random_tensor(out0.shape, rng);

    auto objective = [&]() {
        const TensorD out = forward<double>(net, params, input, nullptr);
        double acc = 0;
        for (int64_t i = 0; i < out.numel(); ++i) acc += out[i] * upstream[i];
        return acc;
    };

    Tape<double> tape;
    forward<double>(net, params, input, &tape);
    std::vector<TensorD> param_grads;
    for (const auto& p : params) param_grads.emplace_back(p.shape);
    const TensorD input_grad = backward<double>(net, params, tape, upstream, param_grads);

    double worst = 0;
    auto probe = [&](double& slot, double analytic) {
        const double saved = slot;
        slot = saved + kStep;
        const double hi = objective();
        slot = saved - kStep;
        const double lo = objective();
        slot = saved;
        worst = std::max(worst, rel_err(analytic, (hi - lo) / (2 * kStep)));
    };
    for (size_t k = 0; k < params.size(); ++k)
        for (int64_t i = 0; i < params[k].numel(); ++i) probe(params[k][i], param_grads[k][i]);
    for (int64_t i = 0; i < input.numel(); ++i) probe(input[i], input_grad[i]);
    return worst;
}

NetworkSpec single_layer_net(LayerKind kind, Rng& rng) {
    NetworkSpec net;
    switch (kind) {
        case LayerKind::affine: {
            const int in = rng.uniform_int(2, 6), out = rng.uniform_int(2, 6);
            net.input_shape = {in};
            net.layers.push_back(LayerSpec::affine(in, out));
            break;
        }
        case LayerKind::conv2d: {
            const int ic = rng.uniform_int(1, 3), oc = rng.uniform_int(1, 3);
            const int stride = rng.uniform() < 0.5 ? 1 : 2;
            net.input_shape = {ic, 6, 4};
            net.layers.push_back(LayerSpec::conv(ic, oc, stride));
            break;
        }
        case LayerKind::transposed_conv2d: {
            const int ic = rng.uniform_int(1, 3), oc = rng.uniform_int(1, 3);
            const int stride = rng.uniform() < 0.5 ? 1 : 2;
            net.input_shape = {ic, 3, 4};
            net.layers.push_back(LayerSpec::tconv(ic, oc, stride));
            break;
        }
        case LayerKind::layer_norm: {
            const int c = rng.uniform_int(1, 3);
            net.input_shape = {c, 4, 3};
            net.layers.push_back(LayerSpec::layernorm());
            break;
        }
        case LayerKind::leaky_relu: {
            net.input_shape = {3, 4, 4};
            net.layers.push_back(LayerSpec::lrelu(0.01 + rng.uniform() * 0.2));
            break;
        }
        case LayerKind::sigmoid: {
            net.input_shape = {2, 3, 3};
            net.layers.push_back(LayerSpec::sigmoid());
            break;
        }
    }
    return net;
}

NetworkSpec composite_net(Rng& rng) {
    // conv -> layernorm -> nonlinearity -> affine head on a small map
    NetworkSpec net;
    const int ic = rng.uniform_int(1, 3), oc = rng.uniform_int(2, 4);
    const int stride = rng.uniform() < 0.5 ? 1 : 2;
    net.input_shape = {ic, 4, 6};
    net.layers.push_back(LayerSpec::conv(ic, oc, stride));
    net.layers.push_back(LayerSpec::layernorm());
    net.layers.push_back(rng.uniform() < 0.5 ? LayerSpec::lrelu(0.05) : LayerSpec::sigmoid());
    const auto mid = net.shape_chain().back();
    const int flat = mid[0] * mid[1] * mid[2];
    net.layers.push_back(LayerSpec::affine(flat, rng.uniform_int(2, 5)));
    return net;
}

VaeSpec tiny_vae(Rng& rng, bool with_mask) {
    const int latent = rng.uniform_int(2, 4);
    return make_vae_spec(8, 4, {3, 4}, {2, 1}, latent, with_mask);
}

Mask random_mask(int w, int h, Rng& rng, double p) {
    Mask m(w, h);
    for (auto& v : m.data) v = rng.uniform() < p ? 1 : 0;
    return m;
}

// end-to-end object loss: input -> encoder -> reparam (fixed eps) ->
// decoders -> masked loss incl. beta*KL; checks d(total)/d(params)
double check_object_loss_e2e(Rng& rng) {
    const VaeSpec spec = tiny_vae(rng, true);
    const int h = spec.encoder.input_shape[1], w = spec.encoder.input_shape[2];

    VaeParamsT<double> params;
    TensorD input, eps;
    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng init_rng(rng.next_u64());
        params = init_vae<double>(spec, init_rng);
        input = random_tensor({3, h, w}, rng, 0.5);
        eps = random_tensor({spec.latent_dim}, rng);
        const auto probe = vae_forward<double>(spec, params, input, eps);
        if (tape_away_from_kinks(spec.encoder, probe.enc_tape) &&
            tape_away_from_kinks(spec.decoder_app, probe.app_tape) &&
            tape_away_from_kinks(spec.decoder_mask, probe.mask_tape))
            break;
    }

    const TensorD image = random_tensor({3, h, w}, rng, 0.5);
    Mask m1 = random_mask(w, h, rng, 0.4);
    if (m1.area() == 0) m1.at(0, 0) = 1;
    Mask m0(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (!m1.at(x, y)) m0.at(x, y) = rng.uniform() < 0.7 ? 1 : 0;
    if (m0.area() == 0) {
        m1.at(w - 1, h - 1) = 0;
        m0.at(w - 1, h - 1) = 1;
    }
    objmodel::LossConfig loss_cfg;
    loss_cfg.gamma = 0.1;
    loss_cfg.beta = 1e-3;

    auto objective = [&]() {
        const auto fwd = vae_forward<double>(spec, params, input, eps);
        TensorD logits({h, w});
        logits.values = fwd.mask_logits.values;
        const double kl = kl_standard_normal(fwd.mu, fwd.logvar);
        return objmodel::object_loss_core<double>(image, m0, m1, fwd.appearance, logits, kl, loss_cfg)
            .total;
    };

    const auto fwd = vae_forward<double>(spec, params, input, eps);
    VaeParamsT<double> grads;
    for (const auto& p : params.enc) grads.enc.emplace_back(p.shape);
    for (const auto& p : params.dec_app) grads.dec_app.emplace_back(p.shape);
    for (const auto& p : params.dec_mask) grads.dec_mask.emplace_back(p.shape);
    TensorD d_app(fwd.appearance.shape);
    TensorD logits({h, w});
    logits.values = fwd.mask_logits.values;
    TensorD d_logits_2d(logits.shape);
    objmodel::object_loss_backward<double>(image, m0, m1, fwd.appearance, logits, loss_cfg, 1.0,
                                           d_app, d_logits_2d);
    TensorD d_logits(fwd.mask_logits.shape);
    d_logits.values = d_logits_2d.values;
    vae_backward<double>(spec, params, fwd, d_app, d_logits, loss_cfg.beta, grads);

    double worst = 0;
    auto sweep = [&](std::vector<TensorD>& group, const std::vector<TensorD>& ggrads) {
        for (size_t k = 0; k < group.size(); ++k) {
            for (int64_t i = 0; i < group[k].numel(); ++i) {
                const double saved = group[k][i];
                group[k][i] = saved + kStep;
                const double hi = objective();
                group[k][i] = saved - kStep;
                const double lo = objective();
                group[k][i] = saved;
                worst = std::max(worst, rel_err(ggrads[k][i], (hi - lo) / (2 * kStep)));
            }
        }
    };
    sweep(params.enc, grads.enc);
    sweep(params.dec_app, grads.dec_app);
    sweep(params.dec_mask, grads.dec_mask);
    return worst;
}

double check_background_loss_e2e(Rng& rng) {
    const VaeSpec spec = tiny_vae(rng, false);
    const int h = spec.encoder.input_shape[1], w = spec.encoder.input_shape[2];

    VaeParamsT<double> params;
    TensorD input, eps;
    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng init_rng(rng.next_u64());
        params = init_vae<double>(spec, init_rng);
        input = random_tensor({3, h, w}, rng, 0.5);
        eps = random_tensor({spec.latent_dim}, rng);
        const auto probe = vae_forward<double>(spec, params, input, eps);
        if (tape_away_from_kinks(spec.encoder, probe.enc_tape) &&
            tape_away_from_kinks(spec.decoder_app, probe.app_tape))
            break;
    }

    Mask m_bg = random_mask(w, h, rng, 0.7);
    if (m_bg.area() == 0) m_bg.at(0, 0) = 1;
    const double beta = 1e-3;

    auto objective = [&]() {
        const auto fwd = vae_forward<double>(spec, params, input, eps);
        const double kl = kl_standard_normal(fwd.mu, fwd.logvar);
        return bgmodel::background_loss_core<double>(input, m_bg, fwd.appearance, kl, beta).total;
    };

    const auto fwd = vae_forward<double>(spec, params, input, eps);
    VaeParamsT<double> grads;
    for (const auto& p : params.enc) grads.enc.emplace_back(p.shape);
    for (const auto& p : params.dec_app) grads.dec_app.emplace_back(p.shape);
    TensorD d_recon(fwd.appearance.shape);
    bgmodel::background_loss_backward<double>(input, m_bg, fwd.appearance, 1.0, d_recon);
    const TensorD no_logits;
    vae_backward<double>(spec, params, fwd, d_recon, no_logits, beta, grads);

    double worst = 0;
    auto sweep = [&](std::vector<TensorD>& group, const std::vector<TensorD>& ggrads) {
        for (size_t k = 0; k < group.size(); ++k) {
            for (int64_t i = 0; i < group[k].numel(); ++i) {
                const double saved = group[k][i];
                group[k][i] = saved + kStep;
                const double hi = objective();
                group[k][i] = saved - kStep;
                const double lo = objective();
                group[k][i] = saved;
                worst = std::max(worst, rel_err(ggrads[k][i], (hi - lo) / (2 * kStep)));
            }
        }
    };
    sweep(params.enc, grads.enc);
    sweep(params.dec_app, grads.dec_app);
    return worst;
}

}  // namespace

GradCheckReport run_grad_checks(uint64_t seed, int num_configs, double tolerance) {
    GradCheckReport report;
    report.tolerance = tolerance;
    Rng rng(derive_seed(seed, "grad-check", 0));

    const LayerKind kinds[] = {LayerKind::affine,     LayerKind::conv2d, LayerKind::transposed_conv2d,
                               LayerKind::layer_norm, LayerKind::leaky_relu, LayerKind::sigmoid};
    const char* kind_names[] = {"affine", "conv2d", "transposed_conv2d",
                                "layer_norm", "leaky_relu", "sigmoid"};

    // budget: 5 configs per layer kind, 8 composites, 6 + 6 end-to-end losses
    const int per_kind = std::max(1, (num_configs - 20) / 6);
    int remaining = num_configs;

    auto draw_safe = [&](const NetworkSpec& net, std::vector<TensorD>& params, TensorD& input) {
        for (int attempt = 0; attempt < 100; ++attempt) {
            Rng init_rng(rng.next_u64());
            params = init_params<double>(net, init_rng);
            input = random_tensor(net.input_shape, rng);
            if (away_from_kinks(net, params, input)) return;
        }
    };

    for (size_t k = 0; k < 6 && remaining > 0; ++k) {
        for (int rep = 0; rep < per_kind && remaining > 0; ++rep, --remaining) {
            NetworkSpec net = single_layer_net(kinds[k], rng);
            std::vector<TensorD> params;
            TensorD input;
            draw_safe(net, params, input);
            GradCheckCase c;
            c.name = std::string(kind_names[k]) + " #" + std::to_string(rep);
            c.max_rel_err = check_network(net, params, input, rng);
            c.pass = c.max_rel_err < tolerance;
            report.cases.push_back(c);
        }
    }
    for (int rep = 0; rep < 8 && remaining > 12; ++rep, --remaining) {
        NetworkSpec net = composite_net(rng);
        std::vector<TensorD> params;
        TensorD input;
        draw_safe(net, params, input);
        GradCheckCase c;
        c.name = "composite #" + std::to_string(rep);
        c.max_rel_err = check_network(net, params, input, rng);
        c.pass = c.max_rel_err < tolerance;
        report.cases.push_back(c);
    }
    const int loss_reps = remaining / 2;
    for (int rep = 0; rep < loss_reps; ++rep, --remaining) {
        GradCheckCase c;
        c.name = "object_loss e2e #" + std::to_string(rep);
        c.max_rel_err = check_object_loss_e2e(rng);
        c.pass = c.max_rel_err < tolerance;
        report.cases.push_back(c);
    }
    while (remaining > 0) {
        GradCheckCase c;
        c.name = "background_loss e2e #" + std::to_string(remaining);
        c.max_rel_err = check_background_loss_e2e(rng);
        c.pass = c.max_rel_err < tolerance;
        report.cases.push_back(c);
        --remaining;
    }
    return report;
}

}  // namespace cfate
