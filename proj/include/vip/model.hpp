#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vip/safetensors.hpp"
#include "vip/tensor.hpp"

namespace vip {

enum class MlpKind { GeluMlp, Swiglu };

struct ModelConfig {
    std::size_t depth = 1;
    std::size_t dim = 8;
    std::size_t heads = 1;
    std::size_t patch_size = 14;
    std::size_t num_registers = 0;
    MlpKind mlp_kind = MlpKind::GeluMlp;
    std::size_t mlp_hidden = 0; // 0 -> 4 * dim
    bool layerscale = false;
    float eps = 1e-6f;
    std::size_t in_dim = 0; // 0 -> 3 * patch_size^2
    std::size_t base_grid = 16; // pos-embed patch grid side

    std::size_t mlp_hidden_dim() const { return mlp_hidden ? mlp_hidden : 4 * dim; }
    std::size_t input_dim() const { return in_dim ? in_dim : 3 * patch_size * patch_size; }
    std::size_t head_dim() const { return dim / heads; }

    void validate() const; // throws std::invalid_argument

    static ModelConfig from_json_file(const std::string& path);
    std::string to_canonical_json() const;
    std::string hash() const; // sha256 of the canonical form
};

// Index map separating CLS / register / patch token positions.
// Token order is [CLS, registers..., patches...].
struct TokenLayout {
    std::size_t cls_index = 0;
    std::vector<std::size_t> register_indices;
    std::vector<std::size_t> patch_indices;
    std::pair<std::size_t, std::size_t> grid;

    static TokenLayout make(const ModelConfig& config, std::pair<std::size_t, std::size_t> grid);
    std::size_t token_count() const { return 1 + register_indices.size() + patch_indices.size(); }
};

// Per-layer instrumentation record. All terms of the CLS output
// decomposition are recoverable from these tensors.
struct LayerTrace {
    Tensor attention;      // [heads x tokens x tokens], post-softmax (post-mask if masked)
    Tensor hidden_in;      // [tokens x dim], post-layer-norm input to attention
    Tensor hidden_raw;     // [tokens x dim], pre-layer-norm residual stream
    Tensor attn_values;    // [heads x tokens x head_dim]
    Tensor attn_block_out; // [tokens x dim], projected attention output (layerscale applied)
    Tensor skip_in;        // [tokens x dim], residual stream + projection-bias term
    Tensor final_output;   // [tokens x dim], residual stream after the MLP
    Tensor proj_scaled;    // [dim x dim], output projection with layerscale folded in
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
    std::size_t token_count = 0;

    // Global image embedding: final-layer CLS row of final_output.
    Tensor cls_embedding() const;
    // CLS row of final_output at every layer (residual stream after each block).
    std::vector<Tensor> cls_per_layer() const;
};

enum class TokenGroup { Patches, Registers };

// Expected tensor name -> shape for a config; the weight container must
// provide exactly these (extra names are ignored).
std::map<std::string, std::vector<std::size_t>> expected_tensor_shapes(const ModelConfig& config);

class Model {
public:
    // Throws LoadError (missing tensor / shape mismatch, naming the tensor)
    // or FormatError (malformed container).
    static Model load(const std::string& path, const ModelConfig& config);
    static Model from_tensors(TensorMap tensors, const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    const TensorMap& weights() const { return weights_; }
    std::size_t parameter_count() const;

    // Full instrumented forward pass. patches is [p1*p2 x input_dim] with a
    // square patch grid; deterministic, bit-identical across runs.
    ForwardTrace forward(const Tensor& patches) const;

    // Same pass, but at `layer` the CLS attention row keeps only the given
    // token group (entries to the other group and to CLS itself are zeroed
    // after softmax; optionally renormalized to sum 1).
    ForwardTrace forward_masked(const Tensor& patches, std::size_t layer, TokenGroup keep,
                                bool renormalize = false) const;

    TokenLayout layout_for(std::size_t num_patches) const;

private:
    Model(TensorMap tensors, ModelConfig config)
        : weights_(std::move(tensors)), config_(config) {}

    struct MaskSpec {
        std::size_t layer;
        TokenGroup keep;
        bool renormalize;
    };
    ForwardTrace run(const Tensor& patches, const std::optional<MaskSpec>& mask) const;

    const Tensor& tensor(const std::string& name) const;
    Tensor interpolated_pos_embed(std::size_t grid) const;

    TensorMap weights_;
    ModelConfig config_;
};

} // namespace vip
