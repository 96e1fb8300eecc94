#include "vip/decomposition.hpp"

#include <stdexcept>
#include <string>

#include "vip/errors.hpp"

namespace vip {

namespace {

void check_layer(const ForwardTrace& trace, const TokenLayout& layout, std::size_t layer) {
    if (layer >= trace.layers.size())
        throw std::invalid_argument("decomposition: layer " + std::to_string(layer) +
                                    " out of range");
    if (layout.token_count() != trace.token_count)
        throw std::invalid_argument("decomposition: layout covers " +
                                    std::to_string(layout.token_count()) + " tokens, trace has " +
                                    std::to_string(trace.token_count));
}

// Sum_{i in group} a_i v_i for the CLS row, per head, heads concatenated.
Tensor group_combination(const LayerTrace& lt, const std::vector<std::size_t>& group) {
    const std::size_t H = lt.attention.extent(0);
    const std::size_t hd = lt.attn_values.extent(2);
    Tensor o({1, H * hd});
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t c = 0; c < hd; ++c) {
            double acc = 0.0;
            for (std::size_t i : group)
                acc += static_cast<double>(lt.attention(h, 0, i)) *
                       static_cast<double>(lt.attn_values(h, i, c));
            o(0, h * hd + c) = static_cast<float>(acc);
        }
    return o;
}

Tensor project_row(const LayerTrace& lt, const Tensor& o) {
    Tensor r = linear(o, lt.proj_scaled, Tensor{});
    return r.reshaped({r.extent(1)});
}

} // namespace

ClsDecomposition decompose_cls(const ForwardTrace& trace, const TokenLayout& layout,
                               std::size_t layer) {
    check_layer(trace, layout, layer);
    const LayerTrace& lt = trace.layers[layer];
    const std::size_t d = lt.skip_in.extent(1);

    ClsDecomposition out;
    out.patch_contrib = project_row(lt, group_combination(lt, layout.patch_indices));
    out.register_contrib = project_row(lt, group_combination(lt, layout.register_indices));
    out.cls_self_contrib = project_row(lt, group_combination(lt, {layout.cls_index}));
    out.skip_contrib = Tensor({d});
    for (std::size_t j = 0; j < d; ++j) out.skip_contrib(j) = lt.skip_in(layout.cls_index, j);
    out.attn_total = add(add(out.patch_contrib, out.register_contrib), out.cls_self_contrib);
    out.full_out = add(out.attn_total, out.skip_contrib);
    return out;
}

AttentionPartition attention_partition(const ForwardTrace& trace, const TokenLayout& layout,
                                       std::size_t layer) {
    check_layer(trace, layout, layer);
    const LayerTrace& lt = trace.layers[layer];
    const std::size_t H = lt.attention.extent(0);
    auto group_mass = [&](const std::vector<std::size_t>& group) {
        double acc = 0.0;
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t i : group) acc += lt.attention(h, 0, i);
        return acc / static_cast<double>(H);
    };
    AttentionPartition p;
    p.patch_share = group_mass(layout.patch_indices);
    p.register_share = group_mass(layout.register_indices);
    p.cls_self_share = group_mass({layout.cls_index});
    return p;
}

ContributionNorms contribution_norms(const ClsDecomposition& d) {
    ContributionNorms n;
    n.patch_norm = l2_norm(d.patch_contrib);
    n.nonpatch_norm = l2_norm(add(add(d.register_contrib, d.cls_self_contrib), d.skip_contrib));
    n.skip_norm = l2_norm(d.skip_contrib);
    return n;
}

double patch_total_cosine(const ClsDecomposition& d) {
    return cosine(d.patch_contrib, d.attn_total);
}

} // namespace vip
