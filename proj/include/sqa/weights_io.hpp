#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sqa/tensor.hpp"

namespace sqa {

// Named float32 tensors persisted in the AQSW container:
//   magic "AQSW" | u32 version | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | u32 dims... | f32 payload
// All integers and floats little-endian. Reads reject malformed input with a
// FormatError naming the byte offset.

constexpr std::uint32_t kWeightFormatVersion = 1;

struct NamedTensor {
    std::string name;
    TensorPtr<float> tensor;
};

void save_weights(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_weights(const std::string& path);

// Copies stored values into the matching destination tensors by name.
// Missing or extra names and shape mismatches raise FormatError.
void assign_weights(const std::vector<NamedTensor>& stored,
                    const std::vector<NamedTensor>& dest);

}  // namespace sqa
