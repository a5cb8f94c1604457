#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cfate/image.hpp"

namespace cfate::moseg {

// A tracked point: alive over a contiguous frame range [start_frame,
// start_frame + pos.size() - 1]; terminated trajectories never revive.
struct PointTrajectory {
    int id = 0;
    int start_frame = 0;
    std::vector<std::array<float, 2>> pos;  // per alive frame
    std::vector<float> sigma;               // local flow variation per alive frame

    int end_frame() const { return start_frame + static_cast<int>(pos.size()) - 1; }
    bool alive(int frame) const { return frame >= start_frame && frame <= end_frame(); }
    const std::array<float, 2>& at(int frame) const {
        return pos[static_cast<size_t>(frame - start_frame)];
    }
    // velocity between frame and frame+1; caller must ensure both are alive
    std::array<float, 2> velocity(int frame) const {
        const auto& a = at(frame);
        const auto& b = at(frame + 1);
        return {b[0] - a[0], b[1] - a[1]};
    }
};

struct TrackConfig {
    int grid_spacing = 4;
    double fb_threshold = 1.5;   // px
    double sigma_floor = 0.3;    // px, lower bound on the local flow variation
};

// Seeds a regular grid, advects through the flow by bilinear sampling,
// re-seeds uncovered grid cells every frame, and terminates points on
// forward-backward inconsistency or canvas exit. Backward fields are
// reconstructed by splatting; targets hit by conflicting sources are
// occlusion events and terminate arriving trajectories.
std::vector<PointTrajectory> track(const std::vector<ImageF>& flow, const TrackConfig& cfg);

// d(a,b) = max over overlapping t of |v_a(t) - v_b(t)| / sigma_t with
// sigma_t = max(floor, min(sigma_a(t), sigma_b(t))). Throws input_error if
// the overlap is shorter than 2 frames.
double motion_distance(const PointTrajectory& a, const PointTrajectory& b);

struct AffinityGraph {
    int num_nodes = 0;
    struct Edge {
        int a = 0, b = 0;   // a < b
        double w = 0;       // positive = attractive, negative = repulsive
    };
    std::vector<Edge> edges;
};

struct GraphConfig {
    double theta0 = 0.5;
    double theta1 = 1.0;
    double interaction_radius = 20.0;  // px
};

// Edges between trajectories that come within the interaction radius at some
// common frame; cost w = theta0 - theta1 * d.
AffinityGraph build_graph(const std::vector<PointTrajectory>& trajectories, const GraphConfig& cfg);

struct ClusterLabeling {
    std::vector<uint32_t> label;  // node -> cluster, contiguous from 0
    uint32_t num_clusters = 0;
};

// Greedy agglomerative edge contraction (merge the most attractive cluster
// pair while any inter-cluster weight is positive) followed by single-node
// move refinement; every step is non-worsening for the multicut objective
// (sum of intra-cluster edge weights, to be maximized).
ClusterLabeling cluster(const AffinityGraph& graph);

// Objective value of a labeling: sum of edge weights within clusters.
double multicut_objective(const AffinityGraph& graph, const std::vector<uint32_t>& label);

struct SeedPoint {
    int x = 0, y = 0;
    uint16_t label = 0;  // 0 = background seed
};

// Marker-based watershed: priority flood on the Sobel gradient magnitude of
// the frame, 4-connected, ties broken by insertion order. Every pixel ends
// labeled; no seeds means an all-background frame.
LabelMap densify_frame(const ImageU8& frame, const std::vector<SeedPoint>& seeds);

struct DenseSegmentation {
    std::vector<LabelMap> frames;
    struct ObjectInfo {
        uint16_t label = 0;
        int first_frame = 0, last_frame = 0;
        int64_t pixels = 0;
    };
    std::vector<ObjectInfo> table;
};

// 6-connectivity over (x,y,t) within equal input labels; output labels are
// contiguous from 1 (0 stays background). Components smaller than
// min_component_pixels (0 disables) are relabeled to background.
DenseSegmentation connected_components_3d(const std::vector<LabelMap>& label_maps,
                                          int64_t min_component_pixels = 0);

struct SegmentParams {
    TrackConfig track;
    GraphConfig graph;
    int min_cluster_size = 5;          // trajectories; smaller clusters seed background
    int64_t min_component_pixels = 0;
};

// Full Stage 1: track -> affinities -> multicut -> watershed densification
// per frame -> spatio-temporal connected components.
DenseSegmentation segment_video(const std::vector<ImageU8>& frames, const std::vector<ImageF>& flow,
                                const SegmentParams& params);

struct SigmaDeltaConfig {
    int amplification = 4;        // N in the variance recurrence
    int min_variance = 2;
    int max_variance = 255;
    int frame_diff_threshold = 25;
};

// Foreground ensemble: per-channel Sigma-Delta estimation OR'd with static
// frame differencing against frame 0. A pixel flagged by either member is
// foreground.
std::vector<Mask> background_mask(const std::vector<ImageU8>& frames, const SigmaDeltaConfig& cfg);

}  // namespace cfate::moseg
