#include "vip/ingestion.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "vip/errors.hpp"
#include "vip/hash.hpp"
#include "vip/version.hpp"

namespace fs = std::filesystem;

namespace vip {

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DecodeError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Bilinear sample with half-pixel centers and edge clamping; fixed rounding
// so outputs are reproducible across platforms.
Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
    const std::size_t in_h = img.extent(0), in_w = img.extent(1);
    Tensor out({out_h, out_w, 3});
    const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        const std::size_t y0 = std::min(static_cast<std::size_t>(fy), in_h - 1);
        const std::size_t y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            const std::size_t x0 = std::min(static_cast<std::size_t>(fx), in_w - 1);
            const std::size_t x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = (1.0 - wx) * img(y0, x0, c) + wx * img(y0, x1, c);
                const double bot = (1.0 - wx) * img(y1, x0, c) + wx * img(y1, x1, c);
                out(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

} // namespace

ImageSpec decode_image(const std::string& path) {
    const std::string bytes = read_file_bytes(path);
    const std::vector<unsigned char> buf(bytes.begin(), bytes.end());
    cv::Mat bgr = cv::imdecode(buf, cv::IMREAD_COLOR);
    if (bgr.empty()) throw DecodeError("cannot decode image " + path);

    ImageSpec spec;
    spec.path = path;
    spec.content_hash = sha256_hex(bytes);
    const auto h = static_cast<std::size_t>(bgr.rows);
    const auto w = static_cast<std::size_t>(bgr.cols);
    spec.pixels = Tensor({h, w, 3});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const auto& px = bgr.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
            spec.pixels(y, x, 0) = px[2] / 255.0f; // BGR -> RGB
            spec.pixels(y, x, 1) = px[1] / 255.0f;
            spec.pixels(y, x, 2) = px[0] / 255.0f;
        }
    return spec;
}

Tensor preprocess(const ImageSpec& image, const ModelConfig& config,
                  const PreprocessOptions& opts) {
    const std::size_t ps = config.patch_size;
    if (opts.crop % ps != 0)
        throw PreprocessError("preprocess: crop " + std::to_string(opts.crop) +
                              " not divisible by patch size " + std::to_string(ps));
    const std::size_t h = image.pixels.extent(0), w = image.pixels.extent(1);
    if (h == 0 || w == 0) throw PreprocessError("preprocess: empty image " + image.path);

    // Shorter side -> opts.resize, aspect preserved (round to nearest).
    std::size_t rh, rw;
    if (h <= w) {
        rh = opts.resize;
        rw = static_cast<std::size_t>(
            std::lround(static_cast<double>(w) * opts.resize / static_cast<double>(h)));
    } else {
        rw = opts.resize;
        rh = static_cast<std::size_t>(
            std::lround(static_cast<double>(h) * opts.resize / static_cast<double>(w)));
    }
    if (rh < opts.crop || rw < opts.crop)
        throw PreprocessError("preprocess: image " + image.path + " smaller than crop after resize");

    const Tensor resized = resize_bilinear(image.pixels, rh, rw);
    const std::size_t oy = (rh - opts.crop) / 2, ox = (rw - opts.crop) / 2;

    const std::size_t grid = opts.crop / ps;
    Tensor patches({grid * grid, 3 * ps * ps});
    for (std::size_t gy = 0; gy < grid; ++gy)
        for (std::size_t gx = 0; gx < grid; ++gx) {
            const std::size_t row = gy * grid + gx;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t py = 0; py < ps; ++py)
                    for (std::size_t px = 0; px < ps; ++px) {
                        const float v = resized(oy + gy * ps + py, ox + gx * ps + px, c);
                        patches(row, (c * ps + py) * ps + px) =
                            (v - opts.mean[c]) / opts.std[c];
                    }
        }
    return patches;
}

std::vector<DatasetEntry> iterate_dataset(const std::string& root,
                                          std::optional<std::size_t> limit, std::uint64_t seed,
                                          bool shuffle) {
    if (!fs::is_directory(root)) throw DatasetError("dataset root is not a directory: " + root);

    std::map<std::string, std::string> csv_labels;
    const fs::path csv = fs::path(root) / "labels.csv";
    if (fs::exists(csv)) {
        std::ifstream f(csv);
        std::string line;
        while (std::getline(f, line)) {
            const auto comma = line.find(',');
            if (comma == std::string::npos) continue;
            csv_labels[line.substr(0, comma)] = line.substr(comma + 1);
        }
    }

    std::vector<DatasetEntry> entries;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file() || !is_image_file(e.path())) continue;
        DatasetEntry d;
        d.path = e.path().string();
        const std::string rel = fs::relative(e.path(), root).string();
        if (auto it = csv_labels.find(rel); it != csv_labels.end())
            d.label = it->second;
        else if (e.path().parent_path() != fs::path(root))
            d.label = e.path().parent_path().filename().string();
        entries.push_back(std::move(d));
    }
    if (entries.empty()) throw DatasetError("no images found under " + root);

    std::sort(entries.begin(), entries.end(),
              [](const DatasetEntry& a, const DatasetEntry& b) { return a.path < b.path; });
    if (shuffle) {
        std::mt19937_64 rng(seed);
        std::shuffle(entries.begin(), entries.end(), rng);
    }
    if (limit && entries.size() > *limit) entries.resize(*limit);
    return entries;
}

FeatureCache::FeatureCache(std::string root) : root_(std::move(root)) {
    if (root_.empty()) {
        if (const char* env = std::getenv("VIP_CACHE_DIR"))
            root_ = env;
        else
            root_ = "./.vip-cache";
    }
}

std::string FeatureCache::key(const std::string& image_hash, const std::string& config_hash,
                              const std::string& analysis_tag) const {
    return sha256_hex(image_hash + "\n" + config_hash + "\n" + analysis_tag + "\n" +
                      kToolkitVersion);
}

std::optional<TensorMap> FeatureCache::get(const std::string& key) const {
    const fs::path file = fs::path(root_) / (key + ".safetensors");
    if (!fs::exists(file)) return std::nullopt;
    return load_safetensors(file.string());
}

void FeatureCache::put(const std::string& key, const TensorMap& tensors,
                       const std::string& config_hash, const std::string& analysis_tag) const {
    fs::create_directories(root_);
    const fs::path file = fs::path(root_) / (key + ".safetensors");
    // Write-then-rename keeps concurrent readers off partial files.
    const fs::path tmp = fs::path(root_) / (key + ".tmp");
    save_safetensors(tmp.string(), tensors);
    fs::rename(tmp, file);

    nlohmann::json sidecar;
    sidecar["analysis_tag"] = analysis_tag;
    sidecar["config_hash"] = config_hash;
    sidecar["toolkit_version"] = kToolkitVersion;
    std::ofstream s(fs::path(root_) / (key + ".json"));
    s << sidecar.dump(2) << "\n";
}

} // namespace vip
