#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfate/image.hpp"

namespace cfate {

// COCO-style run length encoding: column-major pixel order (index = x*H + y),
// counts alternate zero-run / one-run starting with the zero-run (which may
// be 0). sum(counts) == H*W.
struct RLEMask {
    int h = 0, w = 0;
    std::vector<int64_t> counts;
};

RLEMask rle_encode(const Mask& mask);
Mask rle_decode(const RLEMask& rle);  // throws format_error if counts do not sum to H*W

// {"size":[H,W],"counts":[...]}
std::string rle_to_json(const RLEMask& rle);
RLEMask rle_from_json(const std::string& json_text);

}  // namespace cfate
