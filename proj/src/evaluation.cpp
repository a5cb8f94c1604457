#include "cfate/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "cfate/errors.hpp"

namespace cfate::eval {

double iou(const Mask& a, const Mask& b) {
    if (a.w != b.w || a.h != b.h) throw input_error("iou: shape mismatch");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const bool va = a.data[i] != 0, vb = b.data[i] != 0;
        inter += (va && vb) ? 1 : 0;
        uni += (va || vb) ? 1 : 0;
    }
    if (uni == 0) return 1.0;  // two empty masks agree perfectly
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int> hungarian_match(const std::vector<std::vector<double>>& score) {
    const int rows = static_cast<int>(score.size());
    if (rows == 0) return {};
    const int cols = static_cast<int>(score[0].size());
    for (const auto& r : score)
        if (static_cast<int>(r.size()) != cols) throw input_error("hungarian_match: ragged matrix");
    if (cols == 0) return std::vector<int>(static_cast<size_t>(rows), -1);

    // potentials-based shortest augmenting path on the square padded matrix,
    // minimizing cost = -score
    const int n = std::max(rows, cols);
    const double INF = std::numeric_limits<double>::infinity();
    auto cost = [&](int i, int j) {
        if (i < rows && j < cols) return -score[static_cast<size_t>(i)][static_cast<size_t>(j)];
        return 0.0;  // padding
    };

    std::vector<double> u(static_cast<size_t>(n) + 1, 0), v(static_cast<size_t>(n) + 1, 0);
    std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1, INF);
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = p[static_cast<size_t>(j0)];
            double delta = INF;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> assignment(static_cast<size_t>(rows), -1);
    for (int j = 1; j <= n; ++j) {
        const int i = p[static_cast<size_t>(j)];
        if (i >= 1 && i <= rows && j <= cols) assignment[static_cast<size_t>(i) - 1] = j - 1;
    }
    return assignment;
}

VideoMatches match_video(const std::vector<LabelMap>& predicted,
                         const std::vector<LabelMap>& ground_truth) {
    if (predicted.size() != ground_truth.size())
        throw input_error("match_video: frame count mismatch");
    const int T = static_cast<int>(predicted.size());

    uint16_t max_gt = 0;
    for (const auto& g : ground_truth)
        for (uint16_t v : g.data) max_gt = std::max(max_gt, v);

    VideoMatches out;
    out.matched_iou.assign(max_gt, std::vector<double>(static_cast<size_t>(T), 0.0));
    out.visible.assign(max_gt, std::vector<char>(static_cast<size_t>(T), 0));

    for (int t = 0; t < T; ++t) {
        const LabelMap& gt = ground_truth[static_cast<size_t>(t)];
        const LabelMap& pr = predicted[static_cast<size_t>(t)];
        if (gt.w != pr.w || gt.h != pr.h) throw input_error("match_video: shape mismatch");

        // collect per-label masks
        std::map<uint16_t, Mask> gt_masks, pr_masks;
        for (int y = 0; y < gt.h; ++y)
            for (int x = 0; x < gt.w; ++x) {
                const uint16_t g = gt.at(x, y);
                if (g != 0) {
                    auto [it, ins] = gt_masks.insert({g, Mask(gt.w, gt.h)});
                    it->second.at(x, y) = 1;
                }
                const uint16_t q = pr.at(x, y);
                if (q != 0) {
                    auto [it, ins] = pr_masks.insert({q, Mask(gt.w, gt.h)});
                    it->second.at(x, y) = 1;
                }
            }

        // background IoU by fiat: label 0 vs label 0
        Mask gt_bg(gt.w, gt.h), pr_bg(gt.w, gt.h);
        for (int y = 0; y < gt.h; ++y)
            for (int x = 0; x < gt.w; ++x) {
                gt_bg.at(x, y) = gt.at(x, y) == 0 ? 1 : 0;
                pr_bg.at(x, y) = pr.at(x, y) == 0 ? 1 : 0;
            }
        out.background_iou_per_frame.push_back(iou(gt_bg, pr_bg));

        std::vector<uint16_t> gt_ids, pr_ids;
        for (const auto& [id, m] : gt_masks) gt_ids.push_back(id);
        for (const auto& [id, m] : pr_masks) pr_ids.push_back(id);

        std::vector<std::vector<double>> scores(gt_ids.size(),
                                                std::vector<double>(pr_ids.size(), 0.0));
        for (size_t i = 0; i < gt_ids.size(); ++i)
            for (size_t j = 0; j < pr_ids.size(); ++j)
                scores[i][j] = iou(gt_masks.at(gt_ids[i]), pr_masks.at(pr_ids[j]));

        const std::vector<int> assignment = hungarian_match(scores);
        for (size_t i = 0; i < gt_ids.size(); ++i) {
            const size_t obj = static_cast<size_t>(gt_ids[i]) - 1;
            out.visible[obj][static_cast<size_t>(t)] = 1;
            if (assignment[i] >= 0)
                out.matched_iou[obj][static_cast<size_t>(t)] = scores[i][static_cast<size_t>(assignment[i])];
        }
    }
    return out;
}

std::vector<double> per_object_mean_iou(const VideoMatches& matches) {
    std::vector<double> means;
    for (size_t obj = 0; obj < matches.matched_iou.size(); ++obj) {
        double sum = 0;
        int frames = 0;
        for (size_t t = 0; t < matches.matched_iou[obj].size(); ++t) {
            if (!matches.visible[obj][t]) continue;
            sum += matches.matched_iou[obj][t];
            ++frames;
        }
        if (frames > 0) means.push_back(sum / frames);
    }
    return means;
}

double davis_object_iou(const VideoMatches& matches) {
    const auto means = per_object_mean_iou(matches);
    if (means.empty()) throw input_error("davis_object_iou: no ground-truth objects");
    double sum = 0;
    for (double m : means) sum += m;
    return sum / static_cast<double>(means.size());
}

double recall_at(const std::vector<double>& per_object_mean_ious, double tau) {
    if (per_object_mean_ious.empty()) return 0.0;
    int hits = 0;
    for (double v : per_object_mean_ious)
        if (v > tau) ++hits;
    return static_cast<double>(hits) / static_cast<double>(per_object_mean_ious.size());
}

SegScores score_segmentation(const std::vector<LabelMap>& predicted,
                             const std::vector<LabelMap>& ground_truth) {
    const VideoMatches matches = match_video(predicted, ground_truth);
    const auto means = per_object_mean_iou(matches);
    SegScores s;
    s.num_gt_objects = static_cast<int>(means.size());
    double bg = 0;
    for (double v : matches.background_iou_per_frame) bg += v;
    s.background_iou = matches.background_iou_per_frame.empty()
                           ? 1.0
                           : bg / static_cast<double>(matches.background_iou_per_frame.size());
    if (!means.empty()) {
        double sum = 0;
        for (double m : means) sum += m;
        s.object_iou = sum / static_cast<double>(means.size());
        s.recall_at_0 = recall_at(means, 0.0);
        s.recall_at_05 = recall_at(means, 0.5);
    }
    return s;
}

SegScores average_scores(const std::vector<SegScores>& per_video) {
    SegScores avg;
    if (per_video.empty()) return avg;
    // object metrics average over videos that have objects
    int with_objects = 0;
    for (const auto& s : per_video) {
        avg.background_iou += s.background_iou;
        avg.num_gt_objects += s.num_gt_objects;
        if (s.num_gt_objects > 0) {
            avg.object_iou += s.object_iou;
            avg.recall_at_0 += s.recall_at_0;
            avg.recall_at_05 += s.recall_at_05;
            ++with_objects;
        }
    }
    avg.background_iou /= static_cast<double>(per_video.size());
    if (with_objects > 0) {
        avg.object_iou /= with_objects;
        avg.recall_at_0 /= with_objects;
        avg.recall_at_05 /= with_objects;
    }
    return avg;
}

std::vector<ReconEvalSample> make_recon_eval_set(const fishbowl::VideoSample& video, int crop_w,
                                                 int crop_h, int64_t min_unoccluded_area) {
    std::vector<ReconEvalSample> samples;
    const int W = video.background.w, H = video.background.h;
    for (size_t s = 0; s < video.sprites.size(); ++s) {
        for (int t = 0; t < static_cast<int>(video.frames.size()); ++t) {
            const Mask unocc = video.sprites[s].unoccluded_mask(t, W, H);
            const int64_t unocc_area = unocc.area();
            if (unocc_area < min_unoccluded_area) continue;

            int x0 = W, y0 = H, x1 = 0, y1 = 0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (unocc.at(x, y)) {
                        x0 = std::min(x0, x);
                        y0 = std::min(y0, y);
                        x1 = std::max(x1, x + 1);
                        y1 = std::max(y1, y + 1);
                    }

            const ImageU8 gt_app_full = video.sprites[s].unoccluded_appearance(t, W, H);
            const LabelMap& labels = video.labels[static_cast<size_t>(t)];

            ReconEvalSample sample;
            sample.input = Tensor({3, crop_h, crop_w});
            sample.gt_appearance = Tensor({3, crop_h, crop_w});
            sample.gt_unoccluded = Mask(crop_w, crop_h);
            sample.gt_occluded = Mask(crop_w, crop_h);

            const int bw = x1 - x0, bh = y1 - y0;
            ImageF input_region(bw, bh, 3), gt_region(bw, bh, 3);
            for (int y = 0; y < bh; ++y)
                for (int x = 0; x < bw; ++x)
                    for (int ch = 0; ch < 3; ++ch) {
                        input_region.at(x, y, ch) =
                            video.frames[static_cast<size_t>(t)].at(x0 + x, y0 + y, ch) / 255.0f;
                        gt_region.at(x, y, ch) = gt_app_full.at(x0 + x, y0 + y, ch) / 255.0f;
                    }
            const ImageF input_scaled = resize_bilinear(input_region, crop_w, crop_h);
            const ImageF gt_scaled = resize_bilinear(gt_region, crop_w, crop_h);
            const float sx = static_cast<float>(bw) / crop_w, sy = static_cast<float>(bh) / crop_h;
            int64_t occ_area = 0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (labels.at(x, y) == static_cast<uint16_t>(s + 1)) ++occ_area;
            for (int y = 0; y < crop_h; ++y) {
                const int src_y = y0 + std::min(static_cast<int>((y + 0.5f) * sy), bh - 1);
                for (int x = 0; x < crop_w; ++x) {
                    const int src_x = x0 + std::min(static_cast<int>((x + 0.5f) * sx), bw - 1);
                    sample.gt_unoccluded.at(x, y) = unocc.at(src_x, src_y);
                    sample.gt_occluded.at(x, y) =
                        labels.at(src_x, src_y) == static_cast<uint16_t>(s + 1) ? 1 : 0;
                    for (int ch = 0; ch < 3; ++ch) {
                        sample.input[(static_cast<int64_t>(ch) * crop_h + y) * crop_w + x] =
                            input_scaled.at(x, y, ch);
                        sample.gt_appearance[(static_cast<int64_t>(ch) * crop_h + y) * crop_w + x] =
                            gt_scaled.at(x, y, ch);
                    }
                }
            }
            sample.visible_fraction =
                static_cast<double>(occ_area) / static_cast<double>(unocc_area);
            samples.push_back(std::move(sample));
        }
    }
    return samples;
}

namespace {

struct ScoreAccumulator {
    double iou_sum = 0, mae_sum = 0;
    double iou_sum_05 = 0, mae_sum_05 = 0;
    int n = 0, n_05 = 0, n_mae = 0, n_mae_05 = 0, excluded = 0;

    void add(double iou_value, bool have_mae, double mae_value, double visible_fraction) {
        iou_sum += iou_value;
        ++n;
        if (have_mae) {
            mae_sum += mae_value;
            ++n_mae;
        } else {
            ++excluded;
        }
        if (visible_fraction <= 0.5) {
            iou_sum_05 += iou_value;
            ++n_05;
            if (have_mae) {
                mae_sum_05 += mae_value;
                ++n_mae_05;
            }
        }
    }
    ObjectReconScores finish() const {
        ObjectReconScores s;
        s.n = n;
        s.n_at_05 = n_05;
        s.mae_excluded = excluded;
        if (n > 0) s.iou = iou_sum / n;
        if (n_mae > 0) s.mae = mae_sum / n_mae;
        if (n_05 > 0) s.iou_at_05 = iou_sum_05 / n_05;
        if (n_mae_05 > 0) s.mae_at_05 = mae_sum_05 / n_mae_05;
        return s;
    }
};

}  // namespace

ObjectReconScores score_reconstructions(const VaeSpec& spec, const VaeParams& params,
                                        const std::vector<ReconEvalSample>& samples) {
    ScoreAccumulator acc;
    for (const auto& sample : samples) {
        const auto recon = objmodel::reconstruct(spec, params, sample.input);
        const int h = sample.input.shape[1], w = sample.input.shape[2];
        Mask pred(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                pred.at(x, y) = recon.mask_prob[static_cast<int64_t>(y) * w + x] >= 0.5f ? 1 : 0;

        const double iou_value = iou(pred, sample.gt_unoccluded);
        double mae = 0;
        int64_t inter = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!pred.at(x, y) || !sample.gt_unoccluded.at(x, y)) continue;
                ++inter;
                const int64_t pix = static_cast<int64_t>(y) * w + x;
                for (int ch = 0; ch < 3; ++ch) {
                    const int64_t i = static_cast<int64_t>(ch) * h * w + pix;
                    mae += std::fabs(recon.appearance[i] - sample.gt_appearance[i]) * 255.0;
                }
            }
        const bool have_mae = inter > 0;
        if (have_mae) mae /= static_cast<double>(inter * 3);
        acc.add(iou_value, have_mae, mae, sample.visible_fraction);
    }
    return acc.finish();
}

ObjectReconScores score_baseline(const std::vector<ReconEvalSample>& samples) {
    ScoreAccumulator acc;
    for (const auto& sample : samples) {
        const double iou_value = iou(sample.gt_occluded, sample.gt_unoccluded);
        acc.add(iou_value, false, 0.0, sample.visible_fraction);
    }
    ObjectReconScores s = acc.finish();
    s.mae_excluded = 0;  // the baseline has no appearance prediction
    return s;
}

MeanStderr aggregate_over_seeds(const std::vector<double>& per_seed) {
    MeanStderr out;
    if (per_seed.empty()) return out;
    for (double v : per_seed) out.mean += v;
    out.mean /= static_cast<double>(per_seed.size());
    if (per_seed.size() > 1) {
        double var = 0;
        for (double v : per_seed) var += (v - out.mean) * (v - out.mean);
        var /= static_cast<double>(per_seed.size() - 1);
        out.stderr_ = std::sqrt(var / static_cast<double>(per_seed.size()));
    }
    return out;
}

}  // namespace cfate::eval
