#include "vip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "vip/errors.hpp"

namespace vip {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

void check_same_size(const Tensor& a, const Tensor& b, const char* op) {
    if (a.numel() != b.numel())
        throw std::invalid_argument(std::string(op) + ": size mismatch " +
                                    std::to_string(a.numel()) + " vs " + std::to_string(b.numel()));
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0f) {
    for (std::size_t e : shape_)
        if (e == 0) throw std::invalid_argument("Tensor: zero extent");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_))
        throw std::invalid_argument("Tensor: data length does not match shape");
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
    if (shape_product(new_shape) != data_.size())
        throw std::invalid_argument("reshape: element count mismatch");
    return Tensor(std::move(new_shape), data_);
}

Tensor softmax(const Tensor& logits) {
    const std::size_t d = logits.last_extent();
    if (d == 0) throw std::invalid_argument("softmax: empty last axis");
    Tensor out(logits.shape());
    const std::size_t slices = logits.numel() / d;
    for (std::size_t s = 0; s < slices; ++s) {
        const float* in = logits.data() + s * d;
        float* o = out.data() + s * d;
        float mx = in[0];
        for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, in[i]);
        double sum = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double e = std::exp(static_cast<double>(in[i]) - mx);
            o[i] = static_cast<float>(e);
            sum += e;
        }
        for (std::size_t i = 0; i < d; ++i) o[i] = static_cast<float>(o[i] / sum);
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    const std::size_t d = x.last_extent();
    if (d == 0) throw std::invalid_argument("layer_norm: empty last axis");
    if (gain.numel() != d || bias.numel() != d)
        throw std::invalid_argument("layer_norm: gain/bias length must equal last-axis extent");
    Tensor out(x.shape());
    const std::size_t slices = x.numel() / d;
    for (std::size_t s = 0; s < slices; ++s) {
        const float* in = x.data() + s * d;
        float* o = out.data() + s * d;
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += in[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = in[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        for (std::size_t i = 0; i < d; ++i)
            o[i] = static_cast<float>(gain(i) * ((in[i] - mean) * inv) + bias(i));
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: expects 2-D operands");
    const std::size_t n = a.extent(0), k = a.extent(1);
    if (b.extent(0) != k)
        throw std::invalid_argument("matmul: inner extents differ (" + std::to_string(k) +
                                    " vs " + std::to_string(b.extent(0)) + ")");
    const std::size_t m = b.extent(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += static_cast<double>(a(i, p)) * static_cast<double>(b(p, j));
            out(i, j) = static_cast<float>(acc);
        }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2)
        throw std::invalid_argument("linear: expects 2-D input and weight");
    const std::size_t n = x.extent(0), in = x.extent(1);
    if (weight.extent(1) != in)
        throw std::invalid_argument("linear: weight column count must equal input dim");
    const std::size_t out_dim = weight.extent(0);
    if (!bias.empty() && bias.numel() != out_dim)
        throw std::invalid_argument("linear: bias length must equal output dim");
    Tensor out({n, out_dim});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out_dim; ++j) {
            double acc = bias.empty() ? 0.0 : static_cast<double>(bias(j));
            for (std::size_t p = 0; p < in; ++p)
                acc += static_cast<double>(x(i, p)) * static_cast<double>(weight(j, p));
            out(i, j) = static_cast<float>(acc);
        }
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x(i);
        out(i) = static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
    }
    return out;
}

Tensor silu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x(i);
        out(i) = static_cast<float>(v / (1.0 + std::exp(-v)));
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_size(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out(i) = a(i) + b(i);
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_size(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out(i) = a(i) - b(i);
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    check_same_size(a, b, "hadamard");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out(i) = a(i) * b(i);
    return out;
}

Tensor scale(const Tensor& a, float s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out(i) = a(i) * s;
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    check_same_size(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        acc += static_cast<double>(a(i)) * static_cast<double>(b(i));
    return acc;
}

double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double cosine(const Tensor& a, const Tensor& b) {
    const double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0)
        throw UndefinedResultError("cosine: zero-norm vector");
    return dot(a, b) / (na * nb);
}

} // namespace vip
