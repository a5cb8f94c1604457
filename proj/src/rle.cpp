#include "cfate/rle.hpp"

#include <json.hpp>

#include "cfate/errors.hpp"

namespace cfate {

RLEMask rle_encode(const Mask& mask) {
    RLEMask rle;
    rle.h = mask.h;
    rle.w = mask.w;
    uint8_t current = 0;  // runs start counting zeros
    int64_t run = 0;
    for (int x = 0; x < mask.w; ++x) {
        for (int y = 0; y < mask.h; ++y) {
            const uint8_t v = mask.at(x, y) ? 1 : 0;
            if (v == current) {
                ++run;
            } else {
                rle.counts.push_back(run);
                current = v;
                run = 1;
            }
        }
    }
    rle.counts.push_back(run);
    return rle;
}

Mask rle_decode(const RLEMask& rle) {
    int64_t total = 0;
    for (int64_t c : rle.counts) {
        if (c < 0) throw format_error("rle_decode: negative run length");
        total += c;
    }
    if (total != static_cast<int64_t>(rle.h) * rle.w)
        throw format_error("rle_decode: counts sum " + std::to_string(total) + " != H*W " +
                           std::to_string(static_cast<int64_t>(rle.h) * rle.w));
    Mask mask(rle.w, rle.h);
    int64_t pos = 0;
    uint8_t value = 0;
    for (int64_t c : rle.counts) {
        for (int64_t k = 0; k < c; ++k, ++pos) {
            const int x = static_cast<int>(pos / rle.h);
            const int y = static_cast<int>(pos % rle.h);
            mask.at(x, y) = value;
        }
        value ^= 1;
    }
    return mask;
}

std::string rle_to_json(const RLEMask& rle) {
    nlohmann::json j;
    j["size"] = {rle.h, rle.w};
    j["counts"] = rle.counts;
    return j.dump();
}

RLEMask rle_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    RLEMask rle;
    rle.h = j.at("size").at(0).get<int>();
    rle.w = j.at("size").at(1).get<int>();
    rle.counts = j.at("counts").get<std::vector<int64_t>>();
    return rle;
}

}  // namespace cfate
