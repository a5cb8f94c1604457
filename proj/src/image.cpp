#include "cfate/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cfate {

ImageF to_float(const ImageU8& img) {
    ImageF out(img.w, img.h, img.c);
    for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] / 255.0f;
    return out;
}

ImageU8 to_u8(const ImageF& img) {
    ImageU8 out(img.w, img.h, img.c);
    for (size_t i = 0; i < img.data.size(); ++i) {
        const float v = std::clamp(img.data[i], 0.0f, 1.0f);
        out.data[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    return out;
}

namespace {

void write_pnm_header(std::ostream& os, const char* magic, int w, int h, int maxval) {
    os << magic << "\n" << w << " " << h << "\n" << maxval << "\n";
}

// reads "P6\n<w> <h>\n<maxval>\n" tolerating comments and arbitrary whitespace
void read_pnm_header(std::istream& is, const char* magic, int& w, int& h, int& maxval) {
    std::string tag;
    is >> tag;
    if (tag != magic) throw format_error(std::string("expected ") + magic + " header, got " + tag);
    auto next_int = [&is]() {
        for (;;) {
            int ch = is.peek();
            if (ch == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(ch)) {
                is.get();
            } else {
                break;
            }
        }
        int v;
        if (!(is >> v)) throw format_error("malformed PNM header");
        return v;
    };
    w = next_int();
    h = next_int();
    maxval = next_int();
    is.get();  // single whitespace before payload
}

}  // namespace

void write_ppm(const std::string& path, const ImageU8& img) {
    if (img.c != 3) throw input_error("write_ppm: image must have 3 channels");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw input_error("cannot open for writing: " + path);
    write_pnm_header(os, "P6", img.w, img.h, 255);
    os.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (!os) throw input_error("write failed: " + path);
}

ImageU8 read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw input_error("cannot open: " + path);
    int w, h, maxval;
    read_pnm_header(is, "P6", w, h, maxval);
    if (maxval != 255) throw format_error("read_ppm: only maxval 255 supported");
    ImageU8 img(w, h, 3);
    is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (!is) throw format_error("read_ppm: truncated payload in " + path);
    return img;
}

void write_pgm(const std::string& path, const ImageU8& img) {
    if (img.c != 1) throw input_error("write_pgm: image must have 1 channel");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw input_error("cannot open for writing: " + path);
    write_pnm_header(os, "P5", img.w, img.h, 255);
    os.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (!os) throw input_error("write failed: " + path);
}

ImageU8 read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw input_error("cannot open: " + path);
    int w, h, maxval;
    read_pnm_header(is, "P5", w, h, maxval);
    if (maxval != 255) throw format_error("read_pgm: only maxval 255 supported");
    ImageU8 img(w, h, 1);
    is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (!is) throw format_error("read_pgm: truncated payload in " + path);
    return img;
}

void write_pgm16(const std::string& path, const LabelMap& labels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw input_error("cannot open for writing: " + path);
    write_pnm_header(os, "P5", labels.w, labels.h, 65535);
    // netpbm 16-bit payload is big-endian
    for (uint16_t v : labels.data) {
        const uint8_t hi = static_cast<uint8_t>(v >> 8), lo = static_cast<uint8_t>(v & 0xFF);
        os.put(static_cast<char>(hi));
        os.put(static_cast<char>(lo));
    }
    if (!os) throw input_error("write failed: " + path);
}

LabelMap read_pgm16(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw input_error("cannot open: " + path);
    int w, h, maxval;
    read_pnm_header(is, "P5", w, h, maxval);
    if (maxval != 65535) throw format_error("read_pgm16: expected maxval 65535");
    LabelMap labels(w, h);
    for (auto& v : labels.data) {
        const int hi = is.get(), lo = is.get();
        if (hi < 0 || lo < 0) throw format_error("read_pgm16: truncated payload in " + path);
        v = static_cast<uint16_t>((hi << 8) | lo);
    }
    return labels;
}

void write_flow(const std::string& path, const std::vector<ImageF>& fields) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw input_error("cannot open for writing: " + path);
    const uint32_t w = fields.empty() ? 0 : static_cast<uint32_t>(fields[0].w);
    const uint32_t h = fields.empty() ? 0 : static_cast<uint32_t>(fields[0].h);
    const uint32_t t = static_cast<uint32_t>(fields.size());
    os.write("CFFL", 4);
    os.write(reinterpret_cast<const char*>(&w), 4);
    os.write(reinterpret_cast<const char*>(&h), 4);
    os.write(reinterpret_cast<const char*>(&t), 4);
    for (const auto& f : fields) {
        if (f.c != 2 || static_cast<uint32_t>(f.w) != w || static_cast<uint32_t>(f.h) != h)
            throw input_error("write_flow: inconsistent field shapes");
        os.write(reinterpret_cast<const char*>(f.data.data()),
                 static_cast<std::streamsize>(f.data.size() * sizeof(float)));
    }
    if (!os) throw input_error("write failed: " + path);
}

std::vector<ImageF> read_flow(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw input_error("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CFFL", 4) != 0) throw format_error("CFFL: bad magic in " + path);
    uint32_t w, h, t;
    is.read(reinterpret_cast<char*>(&w), 4);
    is.read(reinterpret_cast<char*>(&h), 4);
    is.read(reinterpret_cast<char*>(&t), 4);
    if (!is) throw format_error("CFFL: truncated header");
    std::vector<ImageF> fields;
    fields.reserve(t);
    for (uint32_t i = 0; i < t; ++i) {
        ImageF f(static_cast<int>(w), static_cast<int>(h), 2);
        is.read(reinterpret_cast<char*>(f.data.data()),
                static_cast<std::streamsize>(f.data.size() * sizeof(float)));
        if (!is) throw format_error("CFFL: truncated field " + std::to_string(i));
        fields.push_back(std::move(f));
    }
    return fields;
}

float sample_bilinear(const ImageF& img, float x, float y, int ch) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const float fx = x - x0, fy = y - y0;
    auto clamped = [&](int xi, int yi) {
        xi = std::clamp(xi, 0, img.w - 1);
        yi = std::clamp(yi, 0, img.h - 1);
        return img.at(xi, yi, ch);
    };
    const float v00 = clamped(x0, y0), v10 = clamped(x0 + 1, y0);
    const float v01 = clamped(x0, y0 + 1), v11 = clamped(x0 + 1, y0 + 1);
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

ImageF resize_bilinear(const ImageF& img, int out_w, int out_h) {
    ImageF out(out_w, out_h, img.c);
    const float sx = static_cast<float>(img.w) / out_w;
    const float sy = static_cast<float>(img.h) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const float src_y = (y + 0.5f) * sy - 0.5f;
        for (int x = 0; x < out_w; ++x) {
            const float src_x = (x + 0.5f) * sx - 0.5f;
            for (int ch = 0; ch < img.c; ++ch)
                out.at(x, y, ch) = sample_bilinear(img, src_x, src_y, ch);
        }
    }
    return out;
}

Mask resize_nearest(const Mask& mask, int out_w, int out_h) {
    Mask out(out_w, out_h);
    const float sx = static_cast<float>(mask.w) / out_w;
    const float sy = static_cast<float>(mask.h) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const int src_y = std::min(static_cast<int>((y + 0.5f) * sy), mask.h - 1);
        for (int x = 0; x < out_w; ++x) {
            const int src_x = std::min(static_cast<int>((x + 0.5f) * sx), mask.w - 1);
            out.at(x, y) = mask.at(src_x, src_y);
        }
    }
    return out;
}

ImageF sobel_magnitude(const ImageU8& img) {
    ImageF luma(img.w, img.h, 1);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            if (img.c == 3)
                luma.at(x, y, 0) = 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) +
                                   0.114f * img.at(x, y, 2);
            else
                luma.at(x, y, 0) = img.at(x, y, 0);
        }
    ImageF out(img.w, img.h, 1);
    auto lum = [&](int x, int y) {
        x = std::clamp(x, 0, img.w - 1);
        y = std::clamp(y, 0, img.h - 1);
        return luma.at(x, y, 0);
    };
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const float gx = (lum(x + 1, y - 1) + 2 * lum(x + 1, y) + lum(x + 1, y + 1)) -
                             (lum(x - 1, y - 1) + 2 * lum(x - 1, y) + lum(x - 1, y + 1));
            const float gy = (lum(x - 1, y + 1) + 2 * lum(x, y + 1) + lum(x + 1, y + 1)) -
                             (lum(x - 1, y - 1) + 2 * lum(x, y - 1) + lum(x + 1, y - 1));
            out.at(x, y, 0) = std::sqrt(gx * gx + gy * gy);
        }
    }
    return out;
}

std::array<uint8_t, 3> color_shift(const std::array<uint8_t, 3>& rgb, double angle_deg) {
    const double r = rgb[0], g = rgb[1], b = rgb[2];
    // NTSC YIQ transform
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    const double i = 0.595716 * r - 0.274453 * g - 0.321263 * b;
    const double q = 0.211456 * r - 0.522591 * g + 0.311135 * b;
    const double a = angle_deg * M_PI / 180.0;
    const double ir = i * std::cos(a) - q * std::sin(a);
    const double qr = i * std::sin(a) + q * std::cos(a);
    const double ro = y + 0.9563 * ir + 0.6210 * qr;
    const double go = y - 0.2721 * ir - 0.6474 * qr;
    const double bo = y - 1.1070 * ir + 1.7046 * qr;
    auto clamp_u8 = [](double v) {
        return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    };
    return {clamp_u8(ro), clamp_u8(go), clamp_u8(bo)};
}

}  // namespace cfate
