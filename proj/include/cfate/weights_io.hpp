#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cfate/tensor.hpp"

namespace cfate {

// CFW1 weight container. Layout (little-endian throughout):
//   magic "CFW1", version u16, tensor count u32, then per tensor:
//   name length u16, UTF-8 name bytes, rank u8, dims u32 each, f32 payload.
// Round-trips are bit-exact.
struct NamedTensor {
    std::string name;
    Tensor tensor;
};

constexpr uint16_t kWeightFormatVersion = 1;

void save_weights(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_weights(const std::string& path);

}  // namespace cfate
