#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace vip {

// Dense row-major float32 tensor. The universal numeric carrier of the
// toolkit; kernels accumulate in double and store back as float.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<float> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& storage() { return data_; }
    const std::vector<float>& storage() const { return data_; }

    float& operator()(std::size_t i) { return data_[i]; }
    float operator()(std::size_t i) const { return data_[i]; }
    float& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    float operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    float& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    float operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    // Extent of the last axis; 0 for a rank-0 tensor.
    std::size_t last_extent() const { return shape_.empty() ? 0 : shape_.back(); }

    bool all_finite() const;
    Tensor reshaped(std::vector<std::size_t> new_shape) const;

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

// Numerically stabilized softmax over the last axis (max subtraction,
// double accumulation). Throws std::invalid_argument on empty last axis.
Tensor softmax(const Tensor& logits);

// Per-last-axis-slice normalization with biased (population) variance:
// gain * (x - mean) / sqrt(var + eps) + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps);

// 2-D matrix product with fixed accumulation order (bit-identical across
// runs).
Tensor matmul(const Tensor& a, const Tensor& b);

// x [n x in] * weight^T [out x in] + bias [out] (bias may be empty).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Exact (erf-based) GELU, elementwise.
Tensor gelu(const Tensor& x);

// SiLU (x * sigmoid(x)), elementwise. Used by the SwiGLU MLP.
Tensor silu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);
// Cosine of two same-size vectors; throws UndefinedResultError when either
// has zero norm.
double cosine(const Tensor& a, const Tensor& b);

} // namespace vip
