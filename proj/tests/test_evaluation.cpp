#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "cfate/evaluation.hpp"
#include "cfate/rng.hpp"

using namespace cfate;
using namespace cfate::eval;

TEST_CASE("iou basics") {
    Mask a(4, 4), b(4, 4);
    CHECK(iou(a, b) == doctest::Approx(1.0));  // both empty by definition
    a.at(0, 0) = 1;
    CHECK(iou(a, b) == doctest::Approx(0.0));  // empty vs nonempty
    b.at(0, 0) = 1;
    CHECK(iou(a, b) == doctest::Approx(1.0));

    // 2x2 boxes at (0,0) and (1,1): 1 intersection, 7 union
    Mask p(4, 4), q(4, 4);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) p.at(x, y) = 1;
    for (int y = 1; y < 3; ++y)
        for (int x = 1; x < 3; ++x) q.at(x, y) = 1;
    CHECK(iou(p, q) == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("hungarian: dominant diagonal and singleton") {
    const auto a = hungarian_match({{0.9, 0.1}, {0.2, 0.8}});
    CHECK(a == std::vector<int>{0, 1});
    const auto b = hungarian_match({{0.5}});
    CHECK(b == std::vector<int>{0});
}

namespace {

double assignment_score(const std::vector<std::vector<double>>& m, const std::vector<int>& a) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] >= 0) s += m[i][static_cast<size_t>(a[i])];
    return s;
}

// exact optimum by permutation enumeration (pads the smaller side)
double brute_force_assignment(const std::vector<std::vector<double>>& m) {
    const int rows = static_cast<int>(m.size());
    const int cols = static_cast<int>(m[0].size());
    std::vector<int> cols_perm(static_cast<size_t>(std::max(rows, cols)));
    std::iota(cols_perm.begin(), cols_perm.end(), 0);
    double best = -1;
    do {
        double s = 0;
        for (int i = 0; i < rows; ++i)
            if (cols_perm[static_cast<size_t>(i)] < cols) s += m[static_cast<size_t>(i)][static_cast<size_t>(cols_perm[static_cast<size_t>(i)])];
        best = std::max(best, s);
    } while (std::next_permutation(cols_perm.begin(), cols_perm.end()));
    return best;
}

}  // namespace

TEST_CASE("hungarian equals brute force on 1000 random matrices up to 6x6") {
    Rng rng(1717);
    for (int trial = 0; trial < 1000; ++trial) {
        const int rows = 1 + static_cast<int>(rng.uniform_int(6));
        const int cols = 1 + static_cast<int>(rng.uniform_int(6));
        std::vector<std::vector<double>> m(static_cast<size_t>(rows),
                                           std::vector<double>(static_cast<size_t>(cols)));
        for (auto& row : m)
            for (auto& v : row) v = rng.uniform();
        const auto assignment = hungarian_match(m);
        const double got = assignment_score(m, assignment);
        const double best = brute_force_assignment(m);
        REQUIRE(got == doctest::Approx(best).epsilon(1e-9));
    }
}

namespace {

std::vector<LabelMap> maps_from(const std::vector<std::vector<std::vector<int>>>& frames) {
    std::vector<LabelMap> out;
    for (const auto& f : frames) {
        LabelMap m(static_cast<int>(f[0].size()), static_cast<int>(f.size()));
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x) m.at(x, y) = static_cast<uint16_t>(f[static_cast<size_t>(y)][static_cast<size_t>(x)]);
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace

TEST_CASE("davis aggregation: single object and the two-object 1.0/0.0 case") {
    // one object with IoU 0.8 in every frame -> 0.8
    const auto gt = maps_from({{{1, 1, 1, 1, 0}}, {{1, 1, 1, 1, 0}}});
    const auto pred = maps_from({{{1, 1, 1, 0, 0}}, {{1, 1, 1, 0, 0}}});
    const VideoMatches m = match_video(pred, gt);
    CHECK(davis_object_iou(m) == doctest::Approx(0.75));  // 3/4 per frame

    // two objects at constant 1.0 and 0.0 -> 0.5
    const auto gt2 = maps_from({{{1, 1, 0, 2, 2}}, {{1, 1, 0, 2, 2}}});
    const auto pred2 = maps_from({{{1, 1, 0, 0, 0}}, {{1, 1, 0, 0, 0}}});
    const VideoMatches m2 = match_video(pred2, gt2);
    CHECK(davis_object_iou(m2) == doctest::Approx(0.5));
}

TEST_CASE("davis aggregation: hand-computed 3-object 4-frame fixture") {
    // object 1 visible frames 0-3 with per-frame IoUs {1, 1, 1/3, 1/3}
    // object 2 visible frames 0-1 with IoUs {1, 0}
    // object 3 visible frame 3 with IoU {1}
    // per-object means: 2/3, 1/2, 1; davis = (2/3 + 1/2 + 1)/3 = 13/18
    const auto gt = maps_from({
        {{1, 1, 1, 0, 2, 2, 0, 0}},
        {{1, 1, 1, 0, 2, 2, 0, 0}},
        {{1, 1, 1, 0, 0, 0, 0, 0}},
        {{1, 1, 1, 0, 0, 0, 3, 3}},
    });
    const auto pred = maps_from({
        {{1, 1, 1, 0, 2, 2, 0, 0}},
        {{1, 1, 1, 0, 0, 0, 0, 2}},  // object 2 predicted disjoint: IoU 0
        {{1, 0, 0, 0, 0, 0, 0, 0}},  // IoU 1/3
        {{1, 0, 0, 0, 0, 0, 3, 3}},  // object 1 IoU 1/3, object 3 IoU 1
    });
    const VideoMatches m = match_video(pred, gt);
    const auto means = per_object_mean_iou(m);
    REQUIRE(means.size() == 3);
    CHECK(means[0] == doctest::Approx(2.0 / 3.0));
    CHECK(means[1] == doctest::Approx(0.5));
    CHECK(means[2] == doctest::Approx(1.0));
    CHECK(davis_object_iou(m) == doctest::Approx(13.0 / 18.0));

    // aggregation order matters: global frame averaging would differ
    // (per-frame object IoUs: f0 {1,1}, f1 {1,0}, f2 {1/3}, f3 {1/3,1} ->
    //  global mean = (1+1+1+0+1/3+1/3+1)/7 = 4.667/7 = 0.667 != 13/18)
    const double global_mean = (1.0 + 1.0 + 1.0 + 0.0 + 1.0 / 3 + 1.0 / 3 + 1.0) / 7.0;
    CHECK(davis_object_iou(m) != doctest::Approx(global_mean));
}

TEST_CASE("recall_at counts strictly-greater matches") {
    const std::vector<double> means = {0.0, 0.3, 0.7};
    CHECK(recall_at(means, 0.0) == doctest::Approx(2.0 / 3.0));
    CHECK(recall_at(means, 0.5) == doctest::Approx(1.0 / 3.0));
    CHECK(recall_at({0.6, 0.6}, 0.5) == doctest::Approx(1.0));
    CHECK(recall_at({}, 0.5) == doctest::Approx(0.0));
}

TEST_CASE("score_segmentation: perfect prediction gives IoU 1 everywhere") {
    const auto gt = maps_from({{{0, 1, 1, 0}, {0, 2, 2, 0}}, {{0, 1, 1, 0}, {0, 2, 2, 0}}});
    const SegScores s = score_segmentation(gt, gt);
    CHECK(s.background_iou == doctest::Approx(1.0));
    CHECK(s.object_iou == doctest::Approx(1.0));
    CHECK(s.recall_at_0 == doctest::Approx(1.0));
    CHECK(s.recall_at_05 == doctest::Approx(1.0));
    CHECK(s.num_gt_objects == 2);
}

TEST_CASE("recon scoring: perfect prediction and the occluded-mask baseline") {
    // synthetic eval sample: unoccluded 2x4 box, occluded = left half
    ReconEvalSample sample;
    const int w = 8, h = 4;
    sample.input = Tensor({3, h, w});
    sample.gt_appearance = Tensor({3, h, w});
    sample.gt_unoccluded = Mask(w, h);
    sample.gt_occluded = Mask(w, h);
    for (int y = 1; y < 3; ++y)
        for (int x = 2; x < 6; ++x) sample.gt_unoccluded.at(x, y) = 1;
    for (int y = 1; y < 3; ++y)
        for (int x = 2; x < 4; ++x) sample.gt_occluded.at(x, y) = 1;
    sample.visible_fraction = 0.5;

    const auto baseline = score_baseline({sample});
    CHECK(baseline.iou == doctest::Approx(0.5));      // |occ|/|unocc|
    CHECK(baseline.iou_at_05 == doctest::Approx(0.5));
    CHECK(baseline.n == 1);
    CHECK(baseline.n_at_05 == 1);
}

TEST_CASE("make_recon_eval_set extracts at unoccluded bounding boxes") {
    fishbowl::GeneratorConfig cfg;
    cfg.width = 96;
    cfg.height = 64;
    cfg.frames = 8;
    cfg.min_sprites = cfg.max_sprites = 2;
    cfg.min_size = 24;
    cfg.max_size = 32;
    const auto video = fishbowl::generate(cfg, 3);
    const auto samples = make_recon_eval_set(video, 32, 16);
    REQUIRE(!samples.empty());
    for (const auto& s : samples) {
        CHECK(s.gt_unoccluded.area() > 0);
        CHECK(s.visible_fraction >= 0.0);
        CHECK(s.visible_fraction <= 1.0);
        // occluded mask is a subset of the unoccluded mask in crop space
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 32; ++x)
                if (s.gt_occluded.at(x, y)) REQUIRE(s.gt_unoccluded.at(x, y) == 1);
    }
}

TEST_CASE("aggregate_over_seeds: mean and standard error") {
    const auto agg = aggregate_over_seeds({1.0, 2.0, 3.0});
    CHECK(agg.mean == doctest::Approx(2.0));
    CHECK(agg.stderr_ == doctest::Approx(1.0 / std::sqrt(3.0)));
}
