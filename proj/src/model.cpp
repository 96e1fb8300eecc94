#include "vip/model.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "vip/errors.hpp"
#include "vip/hash.hpp"

namespace vip {

namespace {
using json = nlohmann::json;

std::string mlp_kind_name(MlpKind k) { return k == MlpKind::GeluMlp ? "gelu-mlp" : "swiglu"; }

MlpKind mlp_kind_parse(const std::string& s) {
    if (s == "gelu-mlp") return MlpKind::GeluMlp;
    if (s == "swiglu") return MlpKind::Swiglu;
    throw std::invalid_argument("model config: unknown mlp_kind '" + s + "'");
}

std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Catmull-Rom kernel for bicubic grid interpolation (a = -0.5).
double cubic_weight(double t) {
    t = std::abs(t);
    if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
}

} // namespace

std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

void ModelConfig::validate() const {
    if (depth < 1) throw std::invalid_argument("model config: depth must be >= 1");
    if (patch_size < 1) throw std::invalid_argument("model config: patch_size must be >= 1");
    if (dim == 0 || heads == 0 || dim % heads != 0)
        throw std::invalid_argument("model config: dim must be divisible by heads");
    if (eps <= 0.0f) throw std::invalid_argument("model config: eps must be positive");
    if (base_grid < 1) throw std::invalid_argument("model config: base_grid must be >= 1");
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("model config: cannot open " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw FormatError(std::string("model config: invalid JSON: ") + e.what());
    }
    ModelConfig c;
    c.depth = j.at("depth").get<std::size_t>();
    c.dim = j.at("dim").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.patch_size = j.at("patch_size").get<std::size_t>();
    c.num_registers = j.value("num_registers", std::size_t{0});
    c.mlp_kind = mlp_kind_parse(j.value("mlp_kind", std::string("gelu-mlp")));
    c.mlp_hidden = j.value("mlp_hidden", std::size_t{0});
    c.layerscale = j.value("layerscale", false);
    c.eps = j.value("eps", 1e-6f);
    c.in_dim = j.value("in_dim", std::size_t{0});
    c.base_grid = j.value("base_grid", std::size_t{16});
    c.validate();
    return c;
}

std::string ModelConfig::to_canonical_json() const {
    json j;
    j["base_grid"] = base_grid;
    j["depth"] = depth;
    j["dim"] = dim;
    j["eps"] = eps;
    j["heads"] = heads;
    j["in_dim"] = input_dim();
    j["layerscale"] = layerscale;
    j["mlp_hidden"] = mlp_hidden_dim();
    j["mlp_kind"] = mlp_kind_name(mlp_kind);
    j["num_registers"] = num_registers;
    j["patch_size"] = patch_size;
    return j.dump();
}

std::string ModelConfig::hash() const { return sha256_hex(to_canonical_json()); }

TokenLayout TokenLayout::make(const ModelConfig& config, std::pair<std::size_t, std::size_t> grid) {
    TokenLayout l;
    l.cls_index = 0;
    l.grid = grid;
    for (std::size_t i = 0; i < config.num_registers; ++i) l.register_indices.push_back(1 + i);
    const std::size_t patches = grid.first * grid.second;
    for (std::size_t i = 0; i < patches; ++i)
        l.patch_indices.push_back(1 + config.num_registers + i);
    return l;
}

Tensor ForwardTrace::cls_embedding() const {
    const Tensor& out = layers.back().final_output;
    const std::size_t d = out.extent(1);
    Tensor cls({d});
    for (std::size_t j = 0; j < d; ++j) cls(j) = out(0, j);
    return cls;
}

std::vector<Tensor> ForwardTrace::cls_per_layer() const {
    std::vector<Tensor> out;
    for (const auto& l : layers) {
        const std::size_t d = l.final_output.extent(1);
        Tensor cls({d});
        for (std::size_t j = 0; j < d; ++j) cls(j) = l.final_output(0, j);
        out.push_back(std::move(cls));
    }
    return out;
}

std::map<std::string, std::vector<std::size_t>> expected_tensor_shapes(const ModelConfig& c) {
    std::map<std::string, std::vector<std::size_t>> m;
    const std::size_t d = c.dim, h = c.mlp_hidden_dim();
    m["cls_token"] = {d};
    if (c.num_registers > 0) m["register_tokens"] = {c.num_registers, d};
    m["pos_embed"] = {1 + c.base_grid * c.base_grid, d};
    m["patch_embed.weight"] = {d, c.input_dim()};
    m["patch_embed.bias"] = {d};
    for (std::size_t i = 0; i < c.depth; ++i) {
        const std::string p = "blocks." + std::to_string(i) + ".";
        m[p + "norm1.weight"] = {d};
        m[p + "norm1.bias"] = {d};
        for (const char* proj : {"q", "k", "v"}) {
            m[p + "attn." + proj + ".weight"] = {d, d};
            m[p + "attn." + proj + ".bias"] = {d};
        }
        m[p + "attn.proj.weight"] = {d, d};
        m[p + "attn.proj.bias"] = {d};
        m[p + "norm2.weight"] = {d};
        m[p + "norm2.bias"] = {d};
        if (c.layerscale) {
            m[p + "ls1.gamma"] = {d};
            m[p + "ls2.gamma"] = {d};
        }
        if (c.mlp_kind == MlpKind::GeluMlp) {
            m[p + "mlp.fc1.weight"] = {h, d};
            m[p + "mlp.fc1.bias"] = {h};
            m[p + "mlp.fc2.weight"] = {d, h};
            m[p + "mlp.fc2.bias"] = {d};
        } else {
            m[p + "mlp.w1.weight"] = {h, d};
            m[p + "mlp.w1.bias"] = {h};
            m[p + "mlp.w2.weight"] = {h, d};
            m[p + "mlp.w2.bias"] = {h};
            m[p + "mlp.w3.weight"] = {d, h};
            m[p + "mlp.w3.bias"] = {d};
        }
    }
    return m;
}

Model Model::load(const std::string& path, const ModelConfig& config) {
    config.validate();
    TensorMap tensors = load_safetensors(path);
    return from_tensors(std::move(tensors), config);
}

Model Model::from_tensors(TensorMap tensors, const ModelConfig& config) {
    config.validate();
    for (const auto& [name, shape] : expected_tensor_shapes(config)) {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw LoadError("model load: missing tensor '" + name + "'");
        if (it->second.shape() != shape)
            throw LoadError("model load: tensor '" + name + "' has shape " +
                            shape_str(it->second.shape()) + ", expected " + shape_str(shape));
    }
    return Model(std::move(tensors), config);
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, shape] : expected_tensor_shapes(config_))
        n += weights_.at(name).numel();
    return n;
}

const Tensor& Model::tensor(const std::string& name) const { return weights_.at(name); }

TokenLayout Model::layout_for(std::size_t num_patches) const {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(num_patches))));
    if (side * side != num_patches)
        throw std::invalid_argument("model: patch count " + std::to_string(num_patches) +
                                    " is not a square grid");
    return TokenLayout::make(config_, {side, side});
}

Tensor Model::interpolated_pos_embed(std::size_t grid) const {
    const Tensor& pe = tensor("pos_embed");
    const std::size_t g0 = config_.base_grid, d = config_.dim;
    Tensor out({1 + grid * grid, d});
    for (std::size_t j = 0; j < d; ++j) out(0, j) = pe(0, j);
    if (grid == g0) {
        for (std::size_t i = 0; i < g0 * g0; ++i)
            for (std::size_t j = 0; j < d; ++j) out(1 + i, j) = pe(1 + i, j);
        return out;
    }
    // Bicubic (Catmull-Rom) resample of the patch-grid embeddings; CLS row
    // is carried over unchanged.
    const double scale = static_cast<double>(g0) / static_cast<double>(grid);
    for (std::size_t y = 0; y < grid; ++y) {
        const double sy = (y + 0.5) * scale - 0.5;
        const long y0 = static_cast<long>(std::floor(sy));
        for (std::size_t x = 0; x < grid; ++x) {
            const double sx = (x + 0.5) * scale - 0.5;
            const long x0 = static_cast<long>(std::floor(sx));
            for (std::size_t j = 0; j < d; ++j) {
                double acc = 0.0, wsum = 0.0;
                for (long dy = -1; dy <= 2; ++dy) {
                    const long yy = std::clamp<long>(y0 + dy, 0, static_cast<long>(g0) - 1);
                    const double wy = cubic_weight(sy - static_cast<double>(y0 + dy));
                    for (long dx = -1; dx <= 2; ++dx) {
                        const long xx = std::clamp<long>(x0 + dx, 0, static_cast<long>(g0) - 1);
                        const double w = wy * cubic_weight(sx - static_cast<double>(x0 + dx));
                        acc += w * pe(1 + static_cast<std::size_t>(yy) * g0 +
                                          static_cast<std::size_t>(xx),
                                      j);
                        wsum += w;
                    }
                }
                out(1 + y * grid + x, j) = static_cast<float>(acc / wsum);
            }
        }
    }
    return out;
}

ForwardTrace Model::forward(const Tensor& patches) const { return run(patches, std::nullopt); }

ForwardTrace Model::forward_masked(const Tensor& patches, std::size_t layer, TokenGroup keep,
                                   bool renormalize) const {
    if (layer >= config_.depth)
        throw std::invalid_argument("forward_masked: layer " + std::to_string(layer) +
                                    " out of range for depth " + std::to_string(config_.depth));
    return run(patches, MaskSpec{layer, keep, renormalize});
}

ForwardTrace Model::run(const Tensor& patches, const std::optional<MaskSpec>& mask) const {
    if (patches.rank() != 2 || patches.extent(1) != config_.input_dim())
        throw std::invalid_argument("forward: patches must be [n x " +
                                    std::to_string(config_.input_dim()) + "]");
    const std::size_t num_patches = patches.extent(0);
    const TokenLayout layout = layout_for(num_patches);
    const std::size_t T = layout.token_count();
    const std::size_t d = config_.dim, H = config_.heads, hd = config_.head_dim();

    // Embed: linear patch embedding, CLS + registers prepended, positional
    // embeddings added to CLS and patches only.
    Tensor embedded = linear(patches, tensor("patch_embed.weight"), tensor("patch_embed.bias"));
    const Tensor pos = interpolated_pos_embed(layout.grid.first);
    Tensor x({T, d});
    const Tensor& cls = tensor("cls_token");
    for (std::size_t j = 0; j < d; ++j) x(0, j) = cls(j) + pos(0, j);
    for (std::size_t r = 0; r < config_.num_registers; ++r) {
        const Tensor& regs = tensor("register_tokens");
        for (std::size_t j = 0; j < d; ++j) x(1 + r, j) = regs(r, j);
    }
    for (std::size_t p = 0; p < num_patches; ++p)
        for (std::size_t j = 0; j < d; ++j)
            x(1 + config_.num_registers + p, j) = embedded(p, j) + pos(1 + p, j);

    ForwardTrace trace;
    trace.token_count = T;
    const float attn_scale = 1.0f / std::sqrt(static_cast<float>(hd));
    Tensor ones({d});
    for (std::size_t j = 0; j < d; ++j) ones(j) = 1.0f;

    for (std::size_t li = 0; li < config_.depth; ++li) {
        const std::string p = "blocks." + std::to_string(li) + ".";
        LayerTrace lt;
        lt.hidden_raw = x;
        lt.hidden_in = layer_norm(x, tensor(p + "norm1.weight"), tensor(p + "norm1.bias"),
                                  config_.eps);

        const Tensor q = linear(lt.hidden_in, tensor(p + "attn.q.weight"), tensor(p + "attn.q.bias"));
        const Tensor k = linear(lt.hidden_in, tensor(p + "attn.k.weight"), tensor(p + "attn.k.bias"));
        const Tensor v = linear(lt.hidden_in, tensor(p + "attn.v.weight"), tensor(p + "attn.v.bias"));

        Tensor logits({H, T, T});
        lt.attn_values = Tensor({H, T, hd});
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t c = 0; c < hd; ++c) lt.attn_values(h, t, c) = v(t, h * hd + c);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t s = 0; s < T; ++s) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < hd; ++c)
                        acc += static_cast<double>(q(t, h * hd + c)) *
                               static_cast<double>(k(s, h * hd + c));
                    logits(h, t, s) = static_cast<float>(acc) * attn_scale;
                }
        }
        lt.attention = softmax(logits);

        if (mask && mask->layer == li) {
            // Zero the CLS row outside the kept group (CLS-self always
            // zeroed), post-softmax.
            std::vector<bool> keep(T, false);
            const auto& kept = mask->keep == TokenGroup::Patches ? layout.patch_indices
                                                                 : layout.register_indices;
            for (std::size_t i : kept) keep[i] = true;
            for (std::size_t h = 0; h < H; ++h) {
                double sum = 0.0;
                for (std::size_t s = 0; s < T; ++s) {
                    if (!keep[s]) lt.attention(h, 0, s) = 0.0f;
                    sum += lt.attention(h, 0, s);
                }
                if (mask->renormalize && sum > 0.0)
                    for (std::size_t s = 0; s < T; ++s)
                        lt.attention(h, 0, s) = static_cast<float>(lt.attention(h, 0, s) / sum);
            }
        }

        // Convex combination per head, heads concatenated.
        Tensor o({T, d});
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t c = 0; c < hd; ++c) {
                    double acc = 0.0;
                    for (std::size_t s = 0; s < T; ++s)
                        acc += static_cast<double>(lt.attention(h, t, s)) *
                               static_cast<double>(lt.attn_values(h, s, c));
                    o(t, h * hd + c) = static_cast<float>(acc);
                }

        const Tensor& ls1 = config_.layerscale ? tensor(p + "ls1.gamma") : ones;
        const Tensor& proj_w = tensor(p + "attn.proj.weight");
        lt.proj_scaled = Tensor({d, d});
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) lt.proj_scaled(i, j) = ls1(i) * proj_w(i, j);
        lt.attn_block_out = linear(o, lt.proj_scaled, Tensor{});

        // The projection bias is attention-independent, so it rides the
        // skip path; attn_block_out stays linear in the attention weights.
        const Tensor& proj_b = tensor(p + "attn.proj.bias");
        lt.skip_in = Tensor({T, d});
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j) lt.skip_in(t, j) = x(t, j) + ls1(j) * proj_b(j);

        x = add(lt.skip_in, lt.attn_block_out);

        const Tensor ln2 = layer_norm(x, tensor(p + "norm2.weight"), tensor(p + "norm2.bias"),
                                      config_.eps);
        Tensor mlp_out;
        if (config_.mlp_kind == MlpKind::GeluMlp) {
            mlp_out = linear(gelu(linear(ln2, tensor(p + "mlp.fc1.weight"),
                                         tensor(p + "mlp.fc1.bias"))),
                             tensor(p + "mlp.fc2.weight"), tensor(p + "mlp.fc2.bias"));
        } else {
            const Tensor a = silu(linear(ln2, tensor(p + "mlp.w1.weight"), tensor(p + "mlp.w1.bias")));
            const Tensor b = linear(ln2, tensor(p + "mlp.w2.weight"), tensor(p + "mlp.w2.bias"));
            mlp_out = linear(hadamard(a, b), tensor(p + "mlp.w3.weight"), tensor(p + "mlp.w3.bias"));
        }
        if (config_.layerscale) {
            const Tensor& ls2 = tensor(p + "ls2.gamma");
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t j = 0; j < d; ++j) mlp_out(t, j) *= ls2(j);
        }
        lt.final_output = add(x, mlp_out);
        x = lt.final_output;
        trace.layers.push_back(std::move(lt));
    }
    return trace;
}

} // namespace vip
