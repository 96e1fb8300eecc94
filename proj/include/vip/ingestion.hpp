#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "vip/model.hpp"
#include "vip/safetensors.hpp"
#include "vip/tensor.hpp"

namespace vip {

struct ImageSpec {
    std::string path;
    Tensor pixels; // [h x w x 3], RGB in [0, 1]
    std::optional<std::string> label;
    std::string content_hash; // sha256 of the raw file bytes
};

// ImageNet channel statistics, the de-facto default for this model family.
inline constexpr std::array<float, 3> kDefaultMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kDefaultStd = {0.229f, 0.224f, 0.225f};

struct PreprocessOptions {
    std::size_t resize = 256; // shorter side
    std::size_t crop = 224;   // center crop, must be divisible by patch_size
    std::array<float, 3> mean = kDefaultMean;
    std::array<float, 3> std = kDefaultStd;
};

// Throws DecodeError on an unreadable/undecodable file.
ImageSpec decode_image(const std::string& path);

// Bilinear shorter-side resize (half-pixel centers, edge clamp), center
// crop, per-channel normalization, then unfold into non-overlapping patch
// rows in row-major grid order. Each row is one patch, channel-major
// (c, y, x) within the patch. Result: [(crop/ps)^2 x 3*ps^2].
Tensor preprocess(const ImageSpec& image, const ModelConfig& config,
                  const PreprocessOptions& opts);

struct DatasetEntry {
    std::string path;
    std::optional<std::string> label;
};

// Sorted-path order, optionally seeded-shuffled, truncated to `limit`.
// Labels come from `labels.csv` (path,label) under root when present,
// otherwise from the immediate parent directory name. Throws DatasetError
// on a missing or empty directory.
std::vector<DatasetEntry> iterate_dataset(const std::string& root,
                                          std::optional<std::size_t> limit, std::uint64_t seed,
                                          bool shuffle);

// Content-addressed feature/trace cache under VIP_CACHE_DIR (default
// ./.vip-cache). Entries are safetensors containers with a JSON sidecar
// carrying the config hash and toolkit version.
class FeatureCache {
public:
    explicit FeatureCache(std::string root = "");

    const std::string& root() const { return root_; }

    // Key is the sha256 of (image content hash, config hash, analysis tag,
    // toolkit version).
    std::string key(const std::string& image_hash, const std::string& config_hash,
                    const std::string& analysis_tag) const;

    std::optional<TensorMap> get(const std::string& key) const;
    void put(const std::string& key, const TensorMap& tensors, const std::string& config_hash,
             const std::string& analysis_tag) const;

private:
    std::string root_;
};

} // namespace vip
