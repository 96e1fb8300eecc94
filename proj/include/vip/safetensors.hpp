#pragma once

#include <map>
#include <string>

#include "vip/tensor.hpp"

namespace vip {

// safetensors container: 8-byte little-endian header length, JSON header
// mapping tensor name -> {dtype, shape, data_offsets}, then raw tensor
// bytes. Only F32 tensors are supported.
using TensorMap = std::map<std::string, Tensor>;

// Throws FormatError on a malformed file, LoadError on unsupported dtype.
TensorMap load_safetensors(const std::string& path);

// Writes tensors in name-sorted order with a deterministic header.
void save_safetensors(const std::string& path, const TensorMap& tensors);

} // namespace vip
