#include "cfate/motion_seg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <unordered_map>

#include "cfate/errors.hpp"

namespace cfate::moseg {

namespace {

constexpr float kInvalidFlow = std::numeric_limits<float>::quiet_NaN();

// Backward field by splatting forward displacements; targets receiving
// conflicting sources are marked invalid (occlusion boundary).
ImageF splat_backward(const ImageF& fwd) {
    ImageF bwd(fwd.w, fwd.h, 2);
    Mask seen(fwd.w, fwd.h);
    for (int y = 0; y < fwd.h; ++y) {
        for (int x = 0; x < fwd.w; ++x) {
            const float dx = fwd.at(x, y, 0), dy = fwd.at(x, y, 1);
            const int tx = static_cast<int>(std::lround(x + dx));
            const int ty = static_cast<int>(std::lround(y + dy));
            if (tx < 0 || tx >= fwd.w || ty < 0 || ty >= fwd.h) continue;
            if (!seen.at(tx, ty)) {
                seen.at(tx, ty) = 1;
                bwd.at(tx, ty, 0) = -dx;
                bwd.at(tx, ty, 1) = -dy;
            } else if (std::fabs(bwd.at(tx, ty, 0) + dx) > 0.5f ||
                       std::fabs(bwd.at(tx, ty, 1) + dy) > 0.5f) {
                bwd.at(tx, ty, 0) = kInvalidFlow;
                bwd.at(tx, ty, 1) = kInvalidFlow;
            }
        }
    }
    return bwd;
}

// median over the 9x9 window of |flow(q) - flow(center)|
float local_flow_variation(const ImageF& flow, int cx, int cy) {
    const float fx = flow.at(cx, cy, 0), fy = flow.at(cx, cy, 1);
    std::vector<float> diffs;
    diffs.reserve(81);
    for (int dy = -4; dy <= 4; ++dy) {
        for (int dx = -4; dx <= 4; ++dx) {
            const int x = std::clamp(cx + dx, 0, flow.w - 1);
            const int y = std::clamp(cy + dy, 0, flow.h - 1);
            diffs.push_back(std::hypot(flow.at(x, y, 0) - fx, flow.at(x, y, 1) - fy));
        }
    }
    auto mid = diffs.begin() + diffs.size() / 2;
    std::nth_element(diffs.begin(), mid, diffs.end());
    return *mid;
}

}  // namespace

std::vector<PointTrajectory> track(const std::vector<ImageF>& flow, const TrackConfig& cfg) {
    if (flow.empty()) throw input_error("track: empty flow sequence");
    const int w = flow[0].w, h = flow[0].h;
    for (const auto& f : flow)
        if (f.w != w || f.h != h || f.c != 2) throw input_error("track: inconsistent flow shapes");
    if (cfg.grid_spacing < 1) throw config_error("track: grid_spacing must be >= 1");
    const int num_frames = static_cast<int>(flow.size()) + 1;

    const int gs = cfg.grid_spacing;
    const int cells_x = (w + gs - 1) / gs, cells_y = (h + gs - 1) / gs;

    std::vector<PointTrajectory> done;
    std::vector<PointTrajectory> active;
    int next_id = 0;

    for (int t = 0; t < num_frames; ++t) {
        // re-seed grid cells not covered by any live point
        std::vector<char> covered(static_cast<size_t>(cells_x) * cells_y, 0);
        for (const auto& tr : active) {
            const auto& p = tr.pos.back();
            const int cx = std::clamp(static_cast<int>(p[0]) / gs, 0, cells_x - 1);
            const int cy = std::clamp(static_cast<int>(p[1]) / gs, 0, cells_y - 1);
            covered[static_cast<size_t>(cy) * cells_x + cx] = 1;
        }
        for (int cy = 0; cy < cells_y; ++cy) {
            for (int cx = 0; cx < cells_x; ++cx) {
                if (covered[static_cast<size_t>(cy) * cells_x + cx]) continue;
                const float px = std::min(static_cast<float>(cx * gs + gs / 2), static_cast<float>(w - 1));
                const float py = std::min(static_cast<float>(cy * gs + gs / 2), static_cast<float>(h - 1));
                PointTrajectory tr;
                tr.id = next_id++;
                tr.start_frame = t;
                tr.pos.push_back({px, py});
                active.push_back(std::move(tr));
            }
        }

        // local flow variation at the current position (last field provides
        // the scale for the final frame)
        const ImageF& sigma_src = flow[static_cast<size_t>(std::min(t, num_frames - 2))];
        for (auto& tr : active) {
            const auto& p = tr.pos.back();
            tr.sigma.push_back(local_flow_variation(sigma_src,
                                                    std::clamp(static_cast<int>(std::lround(p[0])), 0, w - 1),
                                                    std::clamp(static_cast<int>(std::lround(p[1])), 0, h - 1)));
        }

        if (t + 1 == num_frames) break;

        const ImageF& fwd = flow[static_cast<size_t>(t)];
        const ImageF bwd = splat_backward(fwd);
        std::vector<PointTrajectory> survivors;
        survivors.reserve(active.size());
        for (auto& tr : active) {
            const auto& p = tr.pos.back();
            const float fx = sample_bilinear(fwd, p[0], p[1], 0);
            const float fy = sample_bilinear(fwd, p[0], p[1], 1);
            const float qx = p[0] + fx, qy = p[1] + fy;
            bool ok = qx >= 0 && qx <= w - 1 && qy >= 0 && qy <= h - 1;
            if (ok) {
                const float bx = sample_bilinear(bwd, qx, qy, 0);
                const float by = sample_bilinear(bwd, qx, qy, 1);
                if (!std::isfinite(bx) || !std::isfinite(by) ||
                    std::hypot(fx + bx, fy + by) > cfg.fb_threshold)
                    ok = false;
            }
            if (ok) {
                tr.pos.push_back({qx, qy});
                survivors.push_back(std::move(tr));
            } else {
                done.push_back(std::move(tr));
            }
        }
        active = std::move(survivors);
    }
    for (auto& tr : active) done.push_back(std::move(tr));
    // single-frame points carry no motion evidence; drop them
    std::erase_if(done, [](const PointTrajectory& tr) { return tr.pos.size() < 2; });
    std::sort(done.begin(), done.end(),
              [](const PointTrajectory& a, const PointTrajectory& b) { return a.id < b.id; });
    return done;
}

double motion_distance(const PointTrajectory& a, const PointTrajectory& b) {
    const int lo = std::max(a.start_frame, b.start_frame);
    const int hi = std::min(a.end_frame(), b.end_frame());
    if (hi - lo + 1 < 2) throw input_error("motion_distance: trajectories overlap < 2 frames");
    double d = 0;
    for (int t = lo; t < hi; ++t) {
        const auto va = a.velocity(t);
        const auto vb = b.velocity(t);
        const double sigma_a = a.sigma[static_cast<size_t>(t - a.start_frame)];
        const double sigma_b = b.sigma[static_cast<size_t>(t - b.start_frame)];
        const double scale = std::max(0.3, std::min(sigma_a, sigma_b));
        const double diff = std::hypot(va[0] - vb[0], va[1] - vb[1]) / scale;
        d = std::max(d, diff);
    }
    return d;
}

AffinityGraph build_graph(const std::vector<PointTrajectory>& trajectories, const GraphConfig& cfg) {
    AffinityGraph graph;
    graph.num_nodes = static_cast<int>(trajectories.size());
    if (trajectories.empty()) return graph;

    int max_frame = 0;
    for (const auto& tr : trajectories) max_frame = std::max(max_frame, tr.end_frame());

    const double radius = cfg.interaction_radius;
    std::set<std::pair<int, int>> candidate;
    for (int t = 0; t <= max_frame; ++t) {
        // spatial hash per frame
        std::unordered_map<int64_t, std::vector<int>> buckets;
        auto key = [&](int bx, int by) { return static_cast<int64_t>(bx) * 1000003 + by; };
        for (size_t i = 0; i < trajectories.size(); ++i) {
            if (!trajectories[i].alive(t)) continue;
            const auto& p = trajectories[i].at(t);
            buckets[key(static_cast<int>(p[0] / radius), static_cast<int>(p[1] / radius))].push_back(
                static_cast<int>(i));
        }
        for (const auto& [bucket_key, ids] : buckets) {
            const int bx = static_cast<int>(bucket_key / 1000003);
            const int by = static_cast<int>(bucket_key % 1000003);
            for (int i : ids) {
                const auto& pi = trajectories[static_cast<size_t>(i)].at(t);
                for (int nx = bx - 1; nx <= bx + 1; ++nx) {
                    for (int ny = by - 1; ny <= by + 1; ++ny) {
                        auto it = buckets.find(key(nx, ny));
                        if (it == buckets.end()) continue;
                        for (int j : it->second) {
                            if (j <= i) continue;
                            const auto& pj = trajectories[static_cast<size_t>(j)].at(t);
                            if (std::hypot(pi[0] - pj[0], pi[1] - pj[1]) <= radius)
                                candidate.insert({i, j});
                        }
                    }
                }
            }
        }
    }

    for (const auto& [i, j] : candidate) {
        const auto& a = trajectories[static_cast<size_t>(i)];
        const auto& b = trajectories[static_cast<size_t>(j)];
        const int lo = std::max(a.start_frame, b.start_frame);
        const int hi = std::min(a.end_frame(), b.end_frame());
        if (hi - lo + 1 < 2) continue;
        const double d = motion_distance(a, b);
        graph.edges.push_back({i, j, cfg.theta0 - cfg.theta1 * d});
    }
    return graph;
}

double multicut_objective(const AffinityGraph& graph, const std::vector<uint32_t>& label) {
    double obj = 0;
    for (const auto& e : graph.edges)
        if (label[static_cast<size_t>(e.a)] == label[static_cast<size_t>(e.b)]) obj += e.w;
    return obj;
}

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(static_cast<size_t>(n)) {
        for (int i = 0; i < n; ++i) parent[static_cast<size_t>(i)] = i;
    }
    int find(int x) {
        while (parent[static_cast<size_t>(x)] != x) {
            parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
            x = parent[static_cast<size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) { parent[static_cast<size_t>(find(a))] = find(b); }
};

using ClusterWeights = std::map<std::pair<int, int>, double>;

// greedy agglomerative contraction phase; returns true if any merge happened
bool merge_phase(ClusterWeights& weights, UnionFind& uf) {
    bool merged_any = false;
    using QEntry = std::tuple<double, int, int>;  // (-w, a, b) for min-heap by weight desc
    std::priority_queue<QEntry> queue;
    for (const auto& [key, w] : weights)
        if (w > 0) queue.push({w, -key.first, -key.second});

    while (!queue.empty()) {
        const auto [w, na, nb] = queue.top();
        queue.pop();
        const int a = -na, b = -nb;
        auto it = weights.find({a, b});
        if (it == weights.end() || it->second != w) continue;  // stale entry
        if (uf.find(a) != a || uf.find(b) != b) continue;
        if (w <= 0) break;

        // contract b into a
        uf.unite(b, a);
        merged_any = true;
        std::vector<std::pair<int, double>> moved;
        for (auto wit = weights.begin(); wit != weights.end();) {
            const auto [x, y] = wit->first;
            if (x == b || y == b) {
                const int other = x == b ? y : x;
                if (other != a) moved.push_back({other, wit->second});
                wit = weights.erase(wit);
            } else {
                ++wit;
            }
        }
        for (const auto& [other, wv] : moved) {
            const auto key = std::minmax(a, other);
            auto [mit, inserted] = weights.insert({{key.first, key.second}, wv});
            if (!inserted) mit->second += wv;
            if (mit->second > 0) queue.push({mit->second, -key.first, -key.second});
        }
    }
    return merged_any;
}

// Kernighan-Lin pass over one cluster pair (cb may be an empty cluster id,
// which lets the pass split ca). Nodes move at most once, the best move is
// taken even when negative, and the best positive prefix (or a full join)
// is applied. Returns true when the objective improved.
bool kl_pair(const std::vector<std::vector<std::pair<int, double>>>& adj, std::vector<int>& assign,
             int ca, int cb) {
    std::vector<int> nodes;
    for (int v = 0; v < static_cast<int>(assign.size()); ++v)
        if (assign[static_cast<size_t>(v)] == ca || assign[static_cast<size_t>(v)] == cb)
            nodes.push_back(v);
    if (nodes.size() < 2) return false;

    std::map<int, int> side;  // current side during the tentative pass
    double join_gain = 0;
    for (int v : nodes) {
        side[v] = assign[static_cast<size_t>(v)];
        for (const auto& [u, w] : adj[static_cast<size_t>(v)])
            if (v < u && ((assign[static_cast<size_t>(u)] == ca) != (assign[static_cast<size_t>(v)] == ca)) &&
                (assign[static_cast<size_t>(u)] == ca || assign[static_cast<size_t>(u)] == cb))
                join_gain += w;
    }

    std::vector<int> moved_order;
    std::map<int, char> moved;
    double cumulative = 0, best_prefix_gain = 0;
    size_t best_prefix_len = 0;
    for (size_t step = 0; step < nodes.size(); ++step) {
        int best_node = -1;
        double best_gain = -1e300;
        for (int v : nodes) {
            if (moved.count(v)) continue;
            double gain = 0;
            for (const auto& [u, w] : adj[static_cast<size_t>(v)]) {
                const auto it = side.find(u);
                if (it == side.end()) continue;  // outside the pair
                gain += it->second == side[v] ? -w : w;
            }
            if (gain > best_gain + 1e-15) {
                best_gain = gain;
                best_node = v;
            }
        }
        if (best_node < 0) break;
        side[best_node] = side[best_node] == ca ? cb : ca;
        moved[best_node] = 1;
        moved_order.push_back(best_node);
        cumulative += best_gain;
        if (cumulative > best_prefix_gain + 1e-12) {
            best_prefix_gain = cumulative;
            best_prefix_len = moved_order.size();
        }
    }

    if (join_gain > best_prefix_gain + 1e-12 && join_gain > 1e-12) {
        for (int v : nodes) assign[static_cast<size_t>(v)] = ca;
        return true;
    }
    if (best_prefix_gain > 1e-12) {
        for (size_t i = 0; i < best_prefix_len; ++i) {
            int& a = assign[static_cast<size_t>(moved_order[i])];
            a = a == ca ? cb : ca;
        }
        return true;
    }
    return false;
}

// single-node move refinement; returns true if any move improved the objective
bool move_phase(const AffinityGraph& graph, std::vector<int>& assign) {
    const int n = graph.num_nodes;
    std::vector<std::vector<std::pair<int, double>>> adj(static_cast<size_t>(n));
    for (const auto& e : graph.edges) {
        adj[static_cast<size_t>(e.a)].push_back({e.b, e.w});
        adj[static_cast<size_t>(e.b)].push_back({e.a, e.w});
    }
    int next_cluster = 0;
    for (int v : assign) next_cluster = std::max(next_cluster, v + 1);

    bool improved_any = false;
    for (int sweep = 0; sweep < 64; ++sweep) {
        bool improved = false;
        for (int v = 0; v < n; ++v) {
            std::map<int, double> gain;  // cluster -> sum of weights from v
            for (const auto& [u, w] : adj[static_cast<size_t>(v)]) gain[assign[static_cast<size_t>(u)]] += w;
            const double current = gain.count(assign[static_cast<size_t>(v)])
                                       ? gain[assign[static_cast<size_t>(v)]]
                                       : 0.0;
            int best_cluster = assign[static_cast<size_t>(v)];
            double best = current;
            for (const auto& [c, g] : gain) {
                if (g > best + 1e-12) {
                    best = g;
                    best_cluster = c;
                }
            }
            // moving out into a fresh singleton scores 0
            if (0.0 > best + 1e-12) {
                best_cluster = next_cluster++;
                best = 0.0;
            }
            if (best_cluster != assign[static_cast<size_t>(v)]) {
                assign[static_cast<size_t>(v)] = best_cluster;
                improved = true;
                improved_any = true;
            }
        }
        if (!improved) break;
    }
    return improved_any;
}

}  // namespace

ClusterLabeling cluster(const AffinityGraph& graph) {
    const int n = graph.num_nodes;
    ClusterLabeling out;
    out.label.assign(static_cast<size_t>(n), 0);
    if (n == 0) return out;

    std::vector<int> assign(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) assign[static_cast<size_t>(i)] = i;

    for (int round = 0; round < 16; ++round) {
        // aggregate edge weights between current clusters
        UnionFind uf(n);
        // map cluster ids to representatives: the first node seen per cluster
        std::map<int, int> rep;
        for (int i = 0; i < n; ++i) {
            auto [it, inserted] = rep.insert({assign[static_cast<size_t>(i)], i});
            if (!inserted) uf.unite(i, it->second);
        }
        ClusterWeights weights;
        for (const auto& e : graph.edges) {
            const int ra = uf.find(e.a), rb = uf.find(e.b);
            if (ra == rb) continue;
            const auto key = std::minmax(ra, rb);
            weights[{key.first, key.second}] += e.w;
        }
        const bool merged = merge_phase(weights, uf);
        for (int i = 0; i < n; ++i) assign[static_cast<size_t>(i)] = uf.find(i);
        const bool moved = move_phase(graph, assign);

        // Kernighan-Lin over adjacent cluster pairs plus an empty partition
        // per cluster, so stuck merges can still split
        std::vector<std::vector<std::pair<int, double>>> adj(static_cast<size_t>(n));
        for (const auto& e : graph.edges) {
            adj[static_cast<size_t>(e.a)].push_back({e.b, e.w});
            adj[static_cast<size_t>(e.b)].push_back({e.a, e.w});
        }
        bool kl_improved = false;
        for (int pass = 0; pass < 8; ++pass) {
            bool improved = false;
            std::set<std::pair<int, int>> pairs;
            std::set<int> clusters;
            for (const auto& e : graph.edges) {
                const int ca = assign[static_cast<size_t>(e.a)], cb = assign[static_cast<size_t>(e.b)];
                if (ca != cb) pairs.insert(std::minmax(ca, cb));
            }
            for (int v : assign) clusters.insert(v);
            int fresh = *clusters.rbegin() + 1;
            for (const auto& [ca, cb] : pairs) improved |= kl_pair(adj, assign, ca, cb);
            for (int c : clusters) improved |= kl_pair(adj, assign, c, fresh++);
            if (!improved) break;
            kl_improved = true;
        }
        if (!merged && !moved && !kl_improved) break;
    }

    // contiguous labels in order of first appearance
    std::map<int, uint32_t> relabel;
    for (int i = 0; i < n; ++i) {
        auto [it, inserted] = relabel.insert({assign[static_cast<size_t>(i)],
                                              static_cast<uint32_t>(relabel.size())});
        out.label[static_cast<size_t>(i)] = it->second;
    }
    out.num_clusters = static_cast<uint32_t>(relabel.size());
    return out;
}

LabelMap densify_frame(const ImageU8& frame, const std::vector<SeedPoint>& seeds) {
    const int w = frame.w, h = frame.h;
    LabelMap labels(w, h);
    if (seeds.empty()) return labels;

    const ImageF grad = sobel_magnitude(frame);
    // 1-based working labels so that background seeds (label 0) are distinct
    // from "unvisited"
    std::vector<int32_t> work(static_cast<size_t>(w) * h, -1);

    struct Entry {
        float priority;
        uint64_t seq;
        int x, y;
        int32_t label;
        bool operator>(const Entry& o) const {
            if (priority != o.priority) return priority > o.priority;
            return seq > o.seq;
        }
    };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> queue;
    uint64_t seq = 0;
    for (const auto& s : seeds) {
        if (s.x < 0 || s.x >= w || s.y < 0 || s.y >= h) continue;
        queue.push({grad.at(s.x, s.y, 0), seq++, s.x, s.y, static_cast<int32_t>(s.label)});
    }

    const int dx4[4] = {1, -1, 0, 0};
    const int dy4[4] = {0, 0, 1, -1};
    while (!queue.empty()) {
        const Entry e = queue.top();
        queue.pop();
        int32_t& cell = work[static_cast<size_t>(e.y) * w + e.x];
        if (cell != -1) continue;
        cell = e.label;
        for (int k = 0; k < 4; ++k) {
            const int nx = e.x + dx4[k], ny = e.y + dy4[k];
            if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
            if (work[static_cast<size_t>(ny) * w + nx] != -1) continue;
            queue.push({std::max(e.priority, grad.at(nx, ny, 0)), seq++, nx, ny, e.label});
        }
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            labels.at(x, y) = static_cast<uint16_t>(std::max(work[static_cast<size_t>(y) * w + x], 0));
    return labels;
}

DenseSegmentation connected_components_3d(const std::vector<LabelMap>& label_maps,
                                          int64_t min_component_pixels) {
    DenseSegmentation seg;
    if (label_maps.empty()) return seg;
    const int w = label_maps[0].w, h = label_maps[0].h;
    const int T = static_cast<int>(label_maps.size());
    for (const auto& m : label_maps)
        if (m.w != w || m.h != h) throw input_error("connected_components_3d: shape mismatch");

    const int64_t plane = static_cast<int64_t>(w) * h;
    auto vox = [&](int x, int y, int t) { return static_cast<int64_t>(t) * plane + y * w + x; };

    std::vector<int32_t> comp(static_cast<size_t>(plane) * T, -1);
    UnionFind uf(0);
    uf.parent.clear();

    // first pass: provisional components, unions with -x, -y, -t neighbors
    int32_t next = 0;
    for (int t = 0; t < T; ++t) {
        const LabelMap& cur = label_maps[static_cast<size_t>(t)];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const uint16_t lbl = cur.at(x, y);
                if (lbl == 0) continue;
                int32_t assigned = -1;
                auto try_neighbor = [&](int nx, int ny, int nt) {
                    if (nx < 0 || ny < 0 || nt < 0) return;
                    if (label_maps[static_cast<size_t>(nt)].at(nx, ny) != lbl) return;
                    const int32_t nc = comp[static_cast<size_t>(vox(nx, ny, nt))];
                    if (assigned == -1) {
                        assigned = nc;
                    } else if (uf.find(assigned) != uf.find(nc)) {
                        uf.unite(assigned, nc);
                    }
                };
                try_neighbor(x - 1, y, t);
                try_neighbor(x, y - 1, t);
                try_neighbor(x, y, t - 1);
                if (assigned == -1) {
                    assigned = next++;
                    uf.parent.push_back(assigned);
                }
                comp[static_cast<size_t>(vox(x, y, t))] = uf.find(assigned);
            }
        }
    }

    // resolve roots, count pixels, then relabel contiguously by first pixel
    std::unordered_map<int32_t, int64_t> count;
    for (auto& c : comp)
        if (c >= 0) {
            c = uf.find(c);
            ++count[c];
        }
    std::unordered_map<int32_t, uint16_t> relabel;
    uint16_t next_label = 1;
    for (int64_t i = 0; i < static_cast<int64_t>(comp.size()); ++i) {
        const int32_t c = comp[static_cast<size_t>(i)];
        if (c < 0) continue;
        if (min_component_pixels > 0 && count[c] < min_component_pixels) continue;
        if (relabel.insert({c, next_label}).second) {
            if (next_label == 0xFFFF) throw numeric_error("connected_components_3d: label overflow");
            ++next_label;
        }
    }

    seg.frames.assign(static_cast<size_t>(T), LabelMap(w, h));
    std::map<uint16_t, DenseSegmentation::ObjectInfo> table;
    for (int t = 0; t < T; ++t) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const int32_t c = comp[static_cast<size_t>(vox(x, y, t))];
                if (c < 0) continue;
                auto it = relabel.find(c);
                if (it == relabel.end()) continue;
                seg.frames[static_cast<size_t>(t)].at(x, y) = it->second;
                auto [tit, inserted] = table.insert({it->second, {it->second, t, t, 0}});
                tit->second.last_frame = t;
                tit->second.pixels += 1;
            }
        }
    }
    for (auto& [lbl, info] : table) seg.table.push_back(info);
    return seg;
}

DenseSegmentation segment_video(const std::vector<ImageU8>& frames, const std::vector<ImageF>& flow,
                                const SegmentParams& params) {
    if (frames.size() != flow.size() + 1)
        throw input_error("segment_video: need one more frame than flow fields");
    const auto trajectories = track(flow, params.track);
    const auto graph = build_graph(trajectories, params.graph);
    const auto labeling = cluster(graph);

    // cluster sizes; the largest cluster is background, small clusters are
    // folded into background as well
    std::vector<int64_t> size(labeling.num_clusters, 0);
    for (uint32_t c : labeling.label) ++size[c];
    uint32_t bg_cluster = 0;
    for (uint32_t c = 0; c < labeling.num_clusters; ++c)
        if (size[c] > size[bg_cluster]) bg_cluster = c;

    // object labels ordered by cluster size, descending (ties by cluster id)
    std::vector<uint32_t> order;
    for (uint32_t c = 0; c < labeling.num_clusters; ++c)
        if (c != bg_cluster && size[c] >= params.min_cluster_size) order.push_back(c);
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        return size[a] != size[b] ? size[a] > size[b] : a < b;
    });
    std::vector<uint16_t> cluster_to_label(labeling.num_clusters, 0);
    for (size_t i = 0; i < order.size(); ++i)
        cluster_to_label[order[i]] = static_cast<uint16_t>(i + 1);

    std::vector<LabelMap> dense;
    for (int t = 0; t < static_cast<int>(frames.size()); ++t) {
        std::vector<SeedPoint> seeds;
        for (size_t i = 0; i < trajectories.size(); ++i) {
            const auto& tr = trajectories[i];
            if (!tr.alive(t)) continue;
            const auto& p = tr.at(t);
            seeds.push_back({static_cast<int>(std::lround(p[0])), static_cast<int>(std::lround(p[1])),
                             cluster_to_label[labeling.label[i]]});
        }
        dense.push_back(densify_frame(frames[static_cast<size_t>(t)], seeds));
    }
    return connected_components_3d(dense, params.min_component_pixels);
}

std::vector<Mask> background_mask(const std::vector<ImageU8>& frames, const SigmaDeltaConfig& cfg) {
    if (frames.size() < 2) throw input_error("background_mask: need at least 2 frames");
    const int w = frames[0].w, h = frames[0].h, c = frames[0].c;
    std::vector<Mask> out;
    out.reserve(frames.size());

    std::vector<int16_t> mean(frames[0].data.begin(), frames[0].data.end());
    std::vector<int16_t> variance(frames[0].data.size(),
                                  static_cast<int16_t>(cfg.min_variance));

    out.emplace_back(w, h);  // frame 0: warm-up, no detection
    for (size_t t = 1; t < frames.size(); ++t) {
        const ImageU8& img = frames[t];
        Mask fg(w, h);
        for (size_t i = 0; i < img.data.size(); ++i) {
            const int16_t v = img.data[i];
            if (mean[i] < v) ++mean[i];
            else if (mean[i] > v) --mean[i];
            const int16_t delta = static_cast<int16_t>(std::abs(v - mean[i]));
            const int target = std::clamp(cfg.amplification * delta, cfg.min_variance, cfg.max_variance);
            if (variance[i] < target) ++variance[i];
            else if (variance[i] > target) --variance[i];
            const bool sd_fg = delta > variance[i];
            const bool diff_fg = std::abs(static_cast<int>(img.data[i]) -
                                          static_cast<int>(frames[0].data[i])) > cfg.frame_diff_threshold;
            if (sd_fg || diff_fg) fg.data[i / static_cast<size_t>(c)] = 1;
        }
        out.push_back(std::move(fg));
    }
    return out;
}

}  // namespace cfate::moseg
