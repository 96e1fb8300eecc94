#pragma once

#include <cstddef>
#include <string>

namespace vip {

// SHA-256 of a byte buffer, lowercase hex.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& s);

} // namespace vip
