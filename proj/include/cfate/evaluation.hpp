#pragma once

#include <string>
#include <vector>

#include "cfate/fishbowl.hpp"
#include "cfate/image.hpp"
#include "cfate/object_model.hpp"

namespace cfate::eval {

// |a ∩ b| / |a ∪ b|; both-empty pairs count as perfect agreement (1).
double iou(const Mask& a, const Mask& b);

// Optimal assignment maximizing total score. Returns per-row column indices
// (-1 for unassigned rows). Exact for arbitrary nonnegative matrices.
std::vector<int> hungarian_match(const std::vector<std::vector<double>>& score);

// Per-frame matching of ground-truth objects against predicted labels.
struct VideoMatches {
    // matched_iou[obj][frame]: IoU of the assigned prediction, 0 if
    // unmatched; visible[obj][frame]: ground-truth mask nonempty.
    std::vector<std::vector<double>> matched_iou;
    std::vector<std::vector<char>> visible;
    std::vector<double> background_iou_per_frame;
};

VideoMatches match_video(const std::vector<LabelMap>& predicted,
                         const std::vector<LabelMap>& ground_truth);

// DAVIS-style aggregation: mean over each object's visible frames first,
// then mean over objects.
std::vector<double> per_object_mean_iou(const VideoMatches& matches);
double davis_object_iou(const VideoMatches& matches);

// Fraction of objects with mean IoU strictly greater than tau.
double recall_at(const std::vector<double>& per_object_mean_ious, double tau);

struct SegScores {
    double background_iou = 0;
    double object_iou = 0;
    double recall_at_0 = 0;
    double recall_at_05 = 0;
    int num_gt_objects = 0;
};

SegScores score_segmentation(const std::vector<LabelMap>& predicted,
                             const std::vector<LabelMap>& ground_truth);
SegScores average_scores(const std::vector<SegScores>& per_video);

// One evaluation crop: model prediction against the unoccluded ground truth,
// extracted at the ground-truth unoccluded bounding box.
struct ReconEvalSample {
    Tensor input;          // [3,Hc,Wc] frame crop (with occlusions)
    Mask gt_unoccluded;    // crop space
    Tensor gt_appearance;  // [3,Hc,Wc]
    Mask gt_occluded;      // crop space (the visible part)
    double visible_fraction = 1.0;  // |occluded| / |unoccluded| at full resolution
};

std::vector<ReconEvalSample> make_recon_eval_set(const fishbowl::VideoSample& video, int crop_w,
                                                 int crop_h, int64_t min_unoccluded_area = 16);

struct ObjectReconScores {
    double iou = 0, mae = 0;          // all samples
    double iou_at_05 = 0, mae_at_05 = 0;  // visible fraction <= 0.5
    int n = 0, n_at_05 = 0;
    int mae_excluded = 0;  // crops with empty prediction/ground-truth intersection
};

// Scores model reconstructions; masks binarized at 0.5, MAE over RGB in
// [0,255] on the intersection of predicted and ground-truth masks.
ObjectReconScores score_reconstructions(const VaeSpec& spec, const VaeParams& params,
                                        const std::vector<ReconEvalSample>& samples);

// Unoccluded-mask baseline: the ground-truth occluded mask scored against
// the unoccluded one (a model that segments perfectly but never completes).
ObjectReconScores score_baseline(const std::vector<ReconEvalSample>& samples);

struct MeanStderr {
    double mean = 0, stderr_ = 0;
};
MeanStderr aggregate_over_seeds(const std::vector<double>& per_seed);

}  // namespace cfate::eval
