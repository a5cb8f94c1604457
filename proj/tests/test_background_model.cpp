#include <doctest.h>

#include <cmath>

#include "cfate/background_model.hpp"
#include "cfate/rng.hpp"

using namespace cfate;
using namespace cfate::bgmodel;

TEST_CASE("prepare_background: all-background frame is only downscaled") {
    ImageU8 frame(16, 8, 3);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) frame.at(x, y, c) = static_cast<uint8_t>(10 * y + c);
    const Mask fg(16, 8);  // nothing flagged
    const BackgroundSample sample = prepare_background(frame, fg, 8, 4);
    CHECK(sample.image.shape == std::vector<int>{3, 4, 8});
    for (uint8_t v : sample.m_bg.data) CHECK(v == 1);
    // downscale of the same frame must agree exactly
    const ImageF ref = resize_bilinear(to_float(frame), 8, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c)
                CHECK(sample.image[(static_cast<int64_t>(c) * 4 + y) * 8 + x] ==
                      doctest::Approx(ref.at(x, y, c)));
}

TEST_CASE("prepare_background: foreground pixels become the background mean") {
    // uniform grey 0.5 background, left half foreground
    ImageU8 frame(8, 4, 3);
    Mask fg(8, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 8; ++x) {
            const bool is_fg = x < 4;
            fg.at(x, y) = is_fg ? 1 : 0;
            for (int c = 0; c < 3; ++c)
                frame.at(x, y, c) = is_fg ? 250 : 128;  // fg values must not leak
        }
    const BackgroundSample sample = prepare_background(frame, fg, 8, 4);
    for (int64_t i = 0; i < sample.image.numel(); ++i)
        CHECK(sample.image[i] == doctest::Approx(128.0 / 255.0).epsilon(1e-6));
}

TEST_CASE("prepare_background: mean uses background pixels only (2-color fixture)") {
    // background = 100 on top row, 200 on bottom row; fg column replaced by
    // the hand-computed mean of 150
    ImageU8 frame(4, 2, 3);
    Mask fg(4, 2);
    for (int x = 0; x < 4; ++x) {
        for (int c = 0; c < 3; ++c) {
            frame.at(x, 0, c) = 100;
            frame.at(x, 1, c) = 200;
        }
    }
    fg.at(0, 0) = 1;
    fg.at(0, 1) = 1;
    for (int c = 0; c < 3; ++c) {
        frame.at(0, 0, c) = 255;
        frame.at(0, 1, c) = 255;
    }
    const BackgroundSample sample = prepare_background(frame, fg, 4, 2);
    const double mean = (3 * 100 + 3 * 200) / 6.0 / 255.0;
    // fg pixels got the mean before downscaling; downscale at identical size
    // is identity up to interpolation at the same grid
    CHECK(sample.image[0] == doctest::Approx(mean).epsilon(1e-6));
    CHECK(sample.image[static_cast<int64_t>(1) * 2 * 4] == doctest::Approx(mean).epsilon(1e-6));
}

TEST_CASE("prepare_background: all-foreground frame is degenerate") {
    ImageU8 frame(4, 4, 3, 50);
    const Mask fg(4, 4, 1);
    CHECK_THROWS_AS(prepare_background(frame, fg, 4, 4), numeric_error);
}

TEST_CASE("background_loss: perfect reconstruction leaves beta*KL") {
    BackgroundSample sample;
    sample.image = Tensor({3, 2, 2});
    for (auto& v : sample.image.values) v = 0.4f;
    sample.m_bg = Mask(2, 2, 1);
    const Tensor mu({3}, {1.f, 0.f, -1.f});
    const Tensor logvar({3});
    const auto terms = background_loss(sample, sample.image, mu, logvar, 1e-3);
    CHECK(terms.appear == doctest::Approx(0.0));
    CHECK(terms.total == doctest::Approx(1e-3 * kl_standard_normal(mu, logvar)));
}

TEST_CASE("background_loss: masked-out pixels do not affect the loss") {
    BackgroundSample sample;
    sample.image = Tensor({3, 2, 2});
    sample.m_bg = Mask(2, 2, 1);
    sample.m_bg.at(1, 1) = 0;  // foreground
    Tensor recon({3, 2, 2});
    const auto base = background_loss(sample, recon, Tensor({2}), Tensor({2}), 0.0);
    Tensor perturbed = recon;
    for (int c = 0; c < 3; ++c) perturbed[(static_cast<int64_t>(c) * 2 + 1) * 2 + 1] = 0.77f;
    const auto after = background_loss(sample, perturbed, Tensor({2}), Tensor({2}), 0.0);
    CHECK(after.total == base.total);
}

TEST_CASE("background_loss: 2x2 hand example") {
    // m_bg = 3 pixels, one differs by (0.5, 0, 0): loss = 0.25/3
    BackgroundSample sample;
    sample.image = Tensor({3, 2, 2});
    sample.m_bg = Mask(2, 2, 1);
    sample.m_bg.at(1, 1) = 0;
    Tensor recon = sample.image;
    recon[0] = 0.5f;  // channel 0, pixel (0,0)
    const auto terms = background_loss(sample, recon, Tensor({2}), Tensor({2}), 0.0);
    CHECK(terms.appear == doctest::Approx(0.25 / 3.0));
}

TEST_CASE("background training runs and reduces the loss; sampling is deterministic") {
    Rng rng(40);
    const VaeSpec spec = make_vae_spec(8, 12, {4, 8}, {2, 2}, 4, false);
    std::vector<BackgroundSample> samples;
    for (int i = 0; i < 12; ++i) {
        BackgroundSample s;
        s.image = Tensor({3, 8, 12});
        const float base = static_cast<float>(0.2 + 0.05 * (i % 5));
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 12; ++x)
                for (int c = 0; c < 3; ++c)
                    s.image[(static_cast<int64_t>(c) * 8 + y) * 12 + x] =
                        base + 0.03f * y + 0.01f * c;
        s.m_bg = Mask(12, 8, 1);
        samples.push_back(std::move(s));
    }
    BgTrainConfig cfg;
    cfg.epochs = 15;
    cfg.lr_drop_epoch = 12;
    cfg.lr = 3e-3;
    cfg.beta = 0.0;
    cfg.batch_size = 6;
    const BgTrainResult result = train_background_model(samples, spec, cfg, 5);
    CHECK(result.log.back().appear < result.log.front().appear);

    Tensor z({4});
    const Tensor a = sample_background(spec, result.params, z);
    const Tensor b = sample_background(spec, result.params, z);
    CHECK(a.values == b.values);
}

TEST_CASE("upsample: constant image stays constant, checker interpolates") {
    Tensor img({3, 2, 2});
    for (auto& v : img.values) v = 0.25f;
    const Tensor up = upsample_to(img, 6, 4);
    CHECK(up.shape == std::vector<int>{3, 4, 6});
    for (float v : up.values) CHECK(v == doctest::Approx(0.25f));

    Tensor checker({3, 2, 2});
    for (int c = 0; c < 3; ++c) {
        checker[static_cast<int64_t>(c) * 4 + 0] = 1.0f;
        checker[static_cast<int64_t>(c) * 4 + 3] = 1.0f;
    }
    const Tensor up2 = upsample_to(checker, 4, 4);
    const double expected = 0.75 * 0.75 + 0.25 * 0.25;  // bilinear at (0.25,0.25)
    CHECK(up2[1 * 4 + 1] == doctest::Approx(expected));
}
