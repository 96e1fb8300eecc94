#pragma once

#include "vip/model.hpp"
#include "vip/tensor.hpp"

namespace vip {

// Final-layer CLS output split into additive buckets. attn_total is the
// bias-free projected attention output; skip_contrib carries the residual
// stream plus the projection-bias term, so attn_total + skip_contrib equals
// the post-attention residual stream exactly.
struct ClsDecomposition {
    Tensor patch_contrib;    // [dim]
    Tensor register_contrib; // [dim]
    Tensor cls_self_contrib; // [dim]
    Tensor skip_contrib;     // [dim]
    Tensor attn_total;       // patch + register + cls_self
    Tensor full_out;         // attn_total + skip_contrib
};

// Head-averaged CLS attention mass per token group; shares sum to 1.
struct AttentionPartition {
    double patch_share = 0.0;
    double register_share = 0.0;
    double cls_self_share = 0.0;
};

struct ContributionNorms {
    double patch_norm = 0.0;
    double nonpatch_norm = 0.0; // register + cls_self + skip
    double skip_norm = 0.0;
};

// Per-head convex combination over each token group, heads concatenated,
// pushed through the (layerscale-scaled) output projection from the trace.
ClsDecomposition decompose_cls(const ForwardTrace& trace, const TokenLayout& layout,
                               std::size_t layer);

AttentionPartition attention_partition(const ForwardTrace& trace, const TokenLayout& layout,
                                       std::size_t layer);

ContributionNorms contribution_norms(const ClsDecomposition& d);

// Cosine between patch_contrib and attn_total; throws UndefinedResultError
// on a zero-norm vector.
double patch_total_cosine(const ClsDecomposition& d);

} // namespace vip
