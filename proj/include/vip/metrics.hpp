#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vip/tensor.hpp"

namespace vip {

// n x d matrix of per-image features plus a provenance tag
// (full | patch-only | register-only | skip-only | layer index).
struct FeatureMatrix {
    Tensor data; // [n x d]
    std::string label;

    std::size_t rows() const { return data.extent(0); }
    std::size_t cols() const { return data.extent(1); }
};

struct CkaReport {
    double value = 0.0;
    std::size_t n = 0;
    std::string label_x;
    std::string label_y;
};

// Linear CKA via the d x d cross-covariance form
// ||X^T Y||_F^2 / (||X^T X||_F ||Y^T Y||_F) after column-mean centering.
// Throws std::invalid_argument on row-count mismatch, UndefinedResultError
// on an (effectively) zero matrix.
CkaReport linear_cka(const FeatureMatrix& x, const FeatureMatrix& y);

struct GramDecomposition {
    Tensor pp; // Xp Xp^T
    Tensor rr; // Xr Xr^T
    Tensor pr; // Xp Xr^T
    Tensor rp; // Xr Xp^T
};

// The four terms sum to (Xp + Xr)(Xp + Xr)^T.
GramDecomposition gram_decompose(const FeatureMatrix& xp, const FeatureMatrix& xr);

// Cosine of each layer's CLS vector against the last layer's; a zero vector
// yields a missing entry. Last entry is 1 by construction.
std::vector<std::optional<double>> layerwise_cls_similarity(const std::vector<Tensor>& cls_per_layer);

struct PairwiseCosineStats {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::size_t pairs = 0;
};

// Statistics over all n(n-1)/2 off-diagonal row pair cosines. Throws
// UndefinedResultError naming the first zero-norm row.
PairwiseCosineStats pairwise_cosine_stats(const FeatureMatrix& tokens);

struct ActivationProfile {
    std::vector<std::size_t> dims; // top_k dimensions by mean pre-norm activation
    std::vector<double> pre_means;
    std::vector<double> post_means; // same dimensions after per-row layer norm
};

// Ranks dimensions by mean activation before layer norm (ties broken by
// index) and reports the paired means after a unit-gain, zero-bias layer
// norm applied per row.
ActivationProfile activation_profile(const FeatureMatrix& tokens, std::size_t top_k,
                                     float eps = 1e-6f);

// Nearest-class-prototype classification by cosine similarity with exactly
// one training row per class; returns top-k accuracy. Ties in the ranking
// are broken by lowest class index.
double one_shot_probe(const FeatureMatrix& train, const std::vector<int>& train_labels,
                      const FeatureMatrix& test, const std::vector<int>& test_labels,
                      std::size_t k);

} // namespace vip
