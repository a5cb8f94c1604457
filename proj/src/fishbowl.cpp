#include "cfate/fishbowl.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cfate/errors.hpp"
#include "cfate/rle.hpp"

namespace cfate::fishbowl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::array<uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    auto u8 = [](double t) { return static_cast<uint8_t>(std::lround(std::clamp(t * 255.0, 0.0, 255.0))); };
    return {u8(r + m), u8(g + m), u8(b + m)};
}

std::array<uint8_t, 3> scale_color(const std::array<uint8_t, 3>& c, double f) {
    auto u8 = [](double t) { return static_cast<uint8_t>(std::lround(std::clamp(t, 0.0, 255.0))); };
    return {u8(c[0] * f), u8(c[1] * f), u8(c[2] * f)};
}

bool in_triangle(double px, double py, double ax, double ay, double bx, double by, double cx,
                 double cy) {
    auto side = [](double x1, double y1, double x2, double y2, double x3, double y3) {
        return (x1 - x3) * (y2 - y3) - (x2 - x3) * (y1 - y3);
    };
    const double d1 = side(px, py, ax, ay, bx, by);
    const double d2 = side(px, py, bx, by, cx, cy);
    const double d3 = side(px, py, cx, cy, ax, ay);
    const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
    const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
    return !(has_neg && has_pos);
}

}  // namespace

SpriteStamp rasterize_sprite(const SpriteSpec& spec) {
    const double rx = spec.body_rx * spec.scale;
    const double ry = spec.body_ry * spec.scale;
    const double tail = spec.tail_size * spec.scale;
    const double fin = spec.fin_offset * spec.scale;

    const auto body_color = color_shift(spec.base_color, spec.color_shift_index * 45.0);
    const auto trim_color = scale_color(body_color, 0.72);

    // tail triangle behind the body, dorsal fin on top; head faces +x before
    // the optional horizontal flip
    const double tax = -rx - tail, tay0 = -0.62 * tail, tay1 = 0.62 * tail;
    const double tcx = -0.55 * rx;
    const double fx0 = -0.30 * rx, fx1 = 0.35 * rx;
    const double ftipx = -0.05 * rx, ftipy = -ry - fin;

    const int lo_x = static_cast<int>(std::floor(tax)) - 1;
    const int hi_x = static_cast<int>(std::ceil(rx)) + 1;
    const int lo_y = static_cast<int>(std::floor(std::min(ftipy, -ry))) - 1;
    const int hi_y = static_cast<int>(std::ceil(std::max(ry, tay1))) + 1;

    SpriteStamp stamp;
    stamp.min_dx = 1 << 30;
    stamp.max_dx = -(1 << 30);
    stamp.min_dy = 1 << 30;
    stamp.max_dy = -(1 << 30);
    const double eye_x = 0.55 * rx, eye_y = -0.25 * ry, eye_r = std::max(0.8, 0.18 * ry);
    const int stripe_w = std::max(2, static_cast<int>(std::lround(0.45 * ry)));

    for (int oy = lo_y; oy <= hi_y; ++oy) {
        for (int ox = lo_x; ox <= hi_x; ++ox) {
            const double px = ox, py = oy;
            const bool in_body = (px * px) / (rx * rx) + (py * py) / (ry * ry) <= 1.0;
            const bool in_tail = in_triangle(px, py, tax, tay0, tax, tay1, tcx, 0.0);
            const bool in_fin = in_triangle(px, py, fx0, -ry + 0.5, fx1, -ry + 0.5, ftipx, ftipy);
            if (!(in_body || in_tail || in_fin)) continue;

            std::array<uint8_t, 3> col = in_body ? body_color : trim_color;
            if (in_body) {
                const double de = std::hypot(px - eye_x, py - eye_y);
                if (de <= eye_r) col = {20, 20, 28};
                else if (((ox + 1000 * stripe_w) / stripe_w) % 3 == 0) col = scale_color(body_color, 0.85);
                else if (py > 0.45 * ry) col = scale_color(body_color, 1.12);
            }
            const int sdx = spec.faces_left ? -ox : ox;
            stamp.dx.push_back(sdx);
            stamp.dy.push_back(oy);
            stamp.color.push_back(col);
            stamp.min_dx = std::min(stamp.min_dx, sdx);
            stamp.max_dx = std::max(stamp.max_dx, sdx);
            stamp.min_dy = std::min(stamp.min_dy, oy);
            stamp.max_dy = std::max(stamp.max_dy, oy);
        }
    }
    return stamp;
}

Mask SpriteState::unoccluded_mask(int frame, int w, int h) const {
    Mask mask(w, h);
    const int cx = center_px[frame][0], cy = center_px[frame][1];
    for (size_t i = 0; i < stamp.dx.size(); ++i) {
        const int x = cx + stamp.dx[i], y = cy + stamp.dy[i];
        if (x >= 0 && x < w && y >= 0 && y < h) mask.at(x, y) = 1;
    }
    return mask;
}

ImageU8 SpriteState::unoccluded_appearance(int frame, int w, int h) const {
    ImageU8 img(w, h, 3);
    const int cx = center_px[frame][0], cy = center_px[frame][1];
    for (size_t i = 0; i < stamp.dx.size(); ++i) {
        const int x = cx + stamp.dx[i], y = cy + stamp.dy[i];
        if (x >= 0 && x < w && y >= 0 && y < h)
            for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = stamp.color[i][ch];
    }
    return img;
}

namespace {

ImageU8 make_background(int w, int h, Rng& rng) {
    const auto top = hsv_to_rgb(rng.uniform(185, 225), rng.uniform(0.45, 0.7), rng.uniform(0.45, 0.7));
    const auto bot = hsv_to_rgb(rng.uniform(185, 235), rng.uniform(0.5, 0.8), rng.uniform(0.15, 0.4));
    ImageU8 bg(w, h, 3);
    for (int y = 0; y < h; ++y) {
        const double a = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                bg.at(x, y, ch) = static_cast<uint8_t>(std::lround((1 - a) * top[ch] + a * bot[ch]));
    }
    // low-frequency plant blobs anchored to the lower half
    const int blobs = rng.uniform_int(2, 5);
    for (int b = 0; b < blobs; ++b) {
        const double cx = rng.uniform(0, w);
        const double cy = rng.uniform(h * 0.55, h * 1.05);
        const double r = rng.uniform(0.12, 0.3) * h;
        const auto plant = hsv_to_rgb(rng.uniform(90, 150), rng.uniform(0.5, 0.85), rng.uniform(0.25, 0.55));
        for (int y = std::max(0, static_cast<int>(cy - r)); y < std::min(h, static_cast<int>(cy + r) + 1); ++y) {
            for (int x = std::max(0, static_cast<int>(cx - r)); x < std::min(w, static_cast<int>(cx + r) + 1); ++x) {
                const double d = std::hypot(x - cx, y - cy);
                if (d >= r) continue;
                const double wgt = 0.85 * (1.0 - (d / r) * (d / r));
                for (int ch = 0; ch < 3; ++ch)
                    bg.at(x, y, ch) = static_cast<uint8_t>(
                        std::lround((1 - wgt) * bg.at(x, y, ch) + wgt * plant[ch]));
            }
        }
    }
    return bg;
}

}  // namespace

VideoSample generate(const GeneratorConfig& config, uint64_t seed) {
    if (config.width <= 0 || config.height <= 0)
        throw config_error("fishbowl: canvas dimensions must be positive");
    if (config.frames < 2) throw config_error("fishbowl: need at least 2 frames");
    if (config.min_sprites < 0 || config.max_sprites < config.min_sprites)
        throw config_error("fishbowl: invalid sprite count range");

    const int w = config.width, h = config.height, T = config.frames;
    Rng rng(seed);

    VideoSample video;
    video.config = config;
    video.seed = seed;
    video.background = make_background(w, h, rng);

    const int n_sprites = config.min_sprites == config.max_sprites
                              ? config.min_sprites
                              : rng.uniform_int(config.min_sprites, config.max_sprites);

    // unique depth ranks via a shuffled identity permutation
    std::vector<int> ranks(static_cast<size_t>(n_sprites));
    for (int i = 0; i < n_sprites; ++i) ranks[static_cast<size_t>(i)] = i;
    for (int i = n_sprites - 1; i > 0; --i)
        std::swap(ranks[static_cast<size_t>(i)], ranks[rng.uniform_int(static_cast<uint64_t>(i + 1))]);

    for (int s = 0; s < n_sprites; ++s) {
        SpriteSpec spec;
        const double length = rng.uniform(config.min_size, config.max_size);
        spec.body_rx = 0.32 * length;
        spec.body_ry = 0.18 * length;
        spec.tail_size = 0.22 * length;
        spec.fin_offset = 0.10 * length;
        spec.scale = 1.0;
        spec.base_color = hsv_to_rgb(rng.uniform(0, 360), rng.uniform(0.55, 1.0), rng.uniform(0.65, 1.0));
        spec.color_shift_index = static_cast<int>(rng.uniform_int(8));
        spec.depth_rank = ranks[static_cast<size_t>(s)];

        MotionPath path;
        const double speed = rng.uniform(config.min_speed, config.max_speed);
        const double dir = rng.uniform() < 0.5 ? -1.0 : 1.0;
        path.vx0 = dir * speed;
        spec.faces_left = dir < 0;
        if (rng.uniform() < 0.5) {
            path.kind = MotionPath::Kind::sinusoidal;
            path.vx1 = path.vx0;
            path.amp = rng.uniform(0.2, 0.9);
            path.period = rng.uniform(10.0, 24.0);
            path.phase = rng.uniform(0.0, 2.0 * M_PI);
            path.vy0 = 0;
            path.vy1 = 0;
        } else {
            path.kind = MotionPath::Kind::piecewise_linear;
            path.vy0 = rng.uniform(-0.5, 0.5);
            path.vx1 = path.vx0 * rng.uniform(0.6, 1.4);
            path.vy1 = rng.uniform(-0.5, 0.5);
        }

        SpriteState state;
        state.spec = spec;
        state.path = path;
        state.stamp = rasterize_sprite(spec);

        // keep the whole stamp inside the canvas by reflecting at margins
        const double mx0 = -state.stamp.min_dx + 1.0, mx1 = w - 2.0 - state.stamp.max_dx;
        const double my0 = -state.stamp.min_dy + 1.0, my1 = h - 2.0 - state.stamp.max_dy;
        if (mx1 <= mx0 || my1 <= my0)
            throw config_error("fishbowl: sprite does not fit the canvas; shrink sizes");
        path.x0 = rng.uniform(mx0, mx1);
        path.y0 = rng.uniform(my0, my1);
        state.path = path;

        double x = path.x0, y = path.y0, sx = 1.0, sy = 1.0;
        for (int t = 0; t < T; ++t) {
            state.center.push_back({x, y});
            state.center_px.push_back({static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y))});
            if (t + 1 == T) break;
            const double a = T > 2 ? static_cast<double>(t) / (T - 2) : 0.0;
            double vx, vy;
            if (path.kind == MotionPath::Kind::sinusoidal) {
                vx = path.vx0;
                vy = path.amp * std::sin(2.0 * M_PI * t / path.period + path.phase);
            } else {
                vx = (1 - a) * path.vx0 + a * path.vx1;
                vy = (1 - a) * path.vy0 + a * path.vy1;
            }
            double nx = x + sx * vx, ny = y + sy * vy;
            if (nx < mx0 || nx > mx1) {
                sx = -sx;
                nx = x + sx * vx;
            }
            if (ny < my0 || ny > my1) {
                sy = -sy;
                ny = y + sy * vy;
            }
            x = std::clamp(nx, mx0, mx1);
            y = std::clamp(ny, my0, my1);
        }
        video.sprites.push_back(std::move(state));
    }

    // depth-sorted painter order: far to near
    std::vector<int> order(static_cast<size_t>(n_sprites));
    for (int i = 0; i < n_sprites; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return video.sprites[static_cast<size_t>(a)].spec.depth_rank <
               video.sprites[static_cast<size_t>(b)].spec.depth_rank;
    });

    for (int t = 0; t < T; ++t) {
        ImageU8 frame = video.background;
        LabelMap labels(w, h);
        for (int idx : order) {
            const SpriteState& sp = video.sprites[static_cast<size_t>(idx)];
            const int cx = sp.center_px[static_cast<size_t>(t)][0];
            const int cy = sp.center_px[static_cast<size_t>(t)][1];
            for (size_t i = 0; i < sp.stamp.dx.size(); ++i) {
                const int x = cx + sp.stamp.dx[i], y = cy + sp.stamp.dy[i];
                if (x < 0 || x >= w || y < 0 || y >= h) continue;
                for (int ch = 0; ch < 3; ++ch) frame.at(x, y, ch) = sp.stamp.color[i][ch];
                labels.at(x, y) = static_cast<uint16_t>(idx + 1);
            }
        }
        video.frames.push_back(std::move(frame));
        video.labels.push_back(std::move(labels));
    }

    // ground-truth flow: realized integer displacement of the owning sprite
    Rng noise_rng(derive_seed(seed, "flow-noise", 0));
    for (int t = 0; t + 1 < T; ++t) {
        ImageF field(w, h, 2);
        std::vector<char> dropped(static_cast<size_t>(n_sprites), 0);
        for (int s = 0; s < n_sprites; ++s)
            if (config.flow_noise.drop_prob > 0 && noise_rng.uniform() < config.flow_noise.drop_prob)
                dropped[static_cast<size_t>(s)] = 1;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const uint16_t label = video.labels[static_cast<size_t>(t)].at(x, y);
                if (label == 0) continue;
                const SpriteState& sp = video.sprites[label - 1];
                if (dropped[label - 1]) continue;
                field.at(x, y, 0) = static_cast<float>(sp.center_px[static_cast<size_t>(t) + 1][0] -
                                                       sp.center_px[static_cast<size_t>(t)][0]);
                field.at(x, y, 1) = static_cast<float>(sp.center_px[static_cast<size_t>(t) + 1][1] -
                                                       sp.center_px[static_cast<size_t>(t)][1]);
            }
        }
        if (config.flow_noise.sigma > 0)
            for (auto& v : field.data)
                v += static_cast<float>(config.flow_noise.sigma * noise_rng.normal());
        video.flow.push_back(std::move(field));
    }
    return video;
}

// ---------------------------------------------------------------------------
// dataset serialization

namespace {

std::string frame_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%04d.ppm", t);
    return buf;
}
std::string labels_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "labels_%04d.pgm", t);
    return buf;
}
std::string obj_name(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "obj_%02d.ppm", k);
    return buf;
}

Mask stamp_mask(const SpriteStamp& stamp) {
    Mask m(stamp.max_dx - stamp.min_dx + 1, stamp.max_dy - stamp.min_dy + 1);
    for (size_t i = 0; i < stamp.dx.size(); ++i)
        m.at(stamp.dx[i] - stamp.min_dx, stamp.dy[i] - stamp.min_dy) = 1;
    return m;
}

ImageU8 stamp_appearance(const SpriteStamp& stamp) {
    ImageU8 img(stamp.max_dx - stamp.min_dx + 1, stamp.max_dy - stamp.min_dy + 1, 3);
    for (size_t i = 0; i < stamp.dx.size(); ++i)
        for (int ch = 0; ch < 3; ++ch)
            img.at(stamp.dx[i] - stamp.min_dx, stamp.dy[i] - stamp.min_dy, ch) = stamp.color[i][ch];
    return img;
}

}  // namespace

void write_video(const std::string& dir, const VideoSample& video) {
    fs::create_directories(dir);
    fs::create_directories(fs::path(dir) / "unocc");
    const int T = static_cast<int>(video.frames.size());
    for (int t = 0; t < T; ++t) {
        write_ppm((fs::path(dir) / frame_name(t)).string(), video.frames[static_cast<size_t>(t)]);
        write_pgm16((fs::path(dir) / labels_name(t)).string(), video.labels[static_cast<size_t>(t)]);
    }
    write_flow((fs::path(dir) / "flow.cffl").string(), video.flow);
    write_ppm((fs::path(dir) / "background.ppm").string(), video.background);

    json meta;
    meta["version"] = 1;
    meta["seed"] = video.seed;
    meta["size"] = {video.config.height, video.config.width};
    meta["frames"] = T;
    json sprites = json::array();
    for (size_t s = 0; s < video.sprites.size(); ++s) {
        const SpriteState& sp = video.sprites[s];
        json js;
        js["depth_rank"] = sp.spec.depth_rank;
        js["base_color"] = sp.spec.base_color;
        js["color_shift_index"] = sp.spec.color_shift_index;
        js["body_rx"] = sp.spec.body_rx;
        js["body_ry"] = sp.spec.body_ry;
        js["tail_size"] = sp.spec.tail_size;
        js["fin_offset"] = sp.spec.fin_offset;
        js["scale"] = sp.spec.scale;
        js["faces_left"] = sp.spec.faces_left;
        js["stamp_origin"] = {sp.stamp.min_dx, sp.stamp.min_dy};
        js["stamp_mask"] = json::parse(rle_to_json(rle_encode(stamp_mask(sp.stamp))));
        js["appearance"] = std::string("unocc/") + obj_name(static_cast<int>(s));
        json centers = json::array();
        for (const auto& c : sp.center_px) centers.push_back({c[0], c[1]});
        js["centers_px"] = centers;
        json centers_real = json::array();
        for (const auto& c : sp.center) centers_real.push_back({c[0], c[1]});
        js["centers"] = centers_real;
        sprites.push_back(std::move(js));
        write_ppm((fs::path(dir) / "unocc" / obj_name(static_cast<int>(s))).string(),
                  stamp_appearance(sp.stamp));
    }
    meta["sprites"] = std::move(sprites);
    std::ofstream os(fs::path(dir) / "meta.json");
    os << meta.dump(2) << "\n";
    if (!os) throw input_error("write failed: " + dir + "/meta.json");
}

VideoSample read_video(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "meta.json");
    if (!is) throw input_error("missing meta.json in " + dir);
    json meta = json::parse(is);
    VideoSample video;
    video.seed = meta.at("seed").get<uint64_t>();
    video.config.height = meta.at("size").at(0).get<int>();
    video.config.width = meta.at("size").at(1).get<int>();
    const int T = meta.at("frames").get<int>();
    video.config.frames = T;
    for (int t = 0; t < T; ++t) {
        video.frames.push_back(read_ppm((fs::path(dir) / frame_name(t)).string()));
        video.labels.push_back(read_pgm16((fs::path(dir) / labels_name(t)).string()));
    }
    video.flow = read_flow((fs::path(dir) / "flow.cffl").string());
    video.background = read_ppm((fs::path(dir) / "background.ppm").string());

    for (const auto& js : meta.at("sprites")) {
        SpriteState sp;
        sp.spec.depth_rank = js.at("depth_rank").get<int>();
        sp.spec.base_color = js.at("base_color").get<std::array<uint8_t, 3>>();
        sp.spec.color_shift_index = js.at("color_shift_index").get<int>();
        sp.spec.body_rx = js.at("body_rx").get<double>();
        sp.spec.body_ry = js.at("body_ry").get<double>();
        sp.spec.tail_size = js.at("tail_size").get<double>();
        sp.spec.fin_offset = js.at("fin_offset").get<double>();
        sp.spec.scale = js.at("scale").get<double>();
        sp.spec.faces_left = js.at("faces_left").get<bool>();
        const int origin_dx = js.at("stamp_origin").at(0).get<int>();
        const int origin_dy = js.at("stamp_origin").at(1).get<int>();
        const Mask m = rle_decode(rle_from_json(js.at("stamp_mask").dump()));
        const ImageU8 app = read_ppm((fs::path(dir) / js.at("appearance").get<std::string>()).string());
        sp.stamp.min_dx = origin_dx;
        sp.stamp.min_dy = origin_dy;
        sp.stamp.max_dx = origin_dx + m.w - 1;
        sp.stamp.max_dy = origin_dy + m.h - 1;
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x)
                if (m.at(x, y)) {
                    sp.stamp.dx.push_back(x + origin_dx);
                    sp.stamp.dy.push_back(y + origin_dy);
                    sp.stamp.color.push_back({app.at(x, y, 0), app.at(x, y, 1), app.at(x, y, 2)});
                }
        for (const auto& c : js.at("centers_px"))
            sp.center_px.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
        for (const auto& c : js.at("centers"))
            sp.center.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
        video.sprites.push_back(std::move(sp));
    }
    return video;
}

}  // namespace cfate::fishbowl
