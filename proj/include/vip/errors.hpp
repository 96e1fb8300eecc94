#pragma once

#include <stdexcept>
#include <string>

namespace vip {

// Weight container / checkpoint problems: a tensor is missing or has the
// wrong shape.
struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The container itself is malformed (bad header, truncated file).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A metric is mathematically undefined for the given input (zero-norm
// vector, zero matrix).
struct UndefinedResultError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DecodeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PreprocessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace vip
