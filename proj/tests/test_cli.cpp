// End-to-end tests spawning the installed CLI binary against generated
// checkpoints and PNG datasets.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <sys/wait.h>

#include "vip/ingestion.hpp"
#include "vip/metrics.hpp"
#include "vip/model.hpp"
#include "vip/safetensors.hpp"

#include "test_util.hpp"

using namespace vip;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    fs::path root;
    fs::path model_path;
    fs::path config_path;
    fs::path data_dir;
    fs::path cache_dir;
    ModelConfig config;

    Fixture() {
        root = fs::temp_directory_path() / "vip_cli_fixture";
        fs::remove_all(root);
        fs::create_directories(root);
        data_dir = root / "data";
        cache_dir = root / "cache";
        fs::create_directories(data_dir);
        fs::create_directories(cache_dir);

        config.depth = 2;
        config.dim = 16;
        config.heads = 2;
        config.patch_size = 8; // crop 16 -> 2x2 patch grid
        config.num_registers = 2;
        config.layerscale = true;
        config.base_grid = 2;

        std::mt19937_64 rng(2024);
        model_path = root / "model.safetensors";
        save_safetensors(model_path.string(), viptest::random_model_tensors(config, rng));

        config_path = root / "config.json";
        nlohmann::json j;
        j["depth"] = config.depth;
        j["dim"] = config.dim;
        j["heads"] = config.heads;
        j["patch_size"] = config.patch_size;
        j["num_registers"] = config.num_registers;
        j["layerscale"] = config.layerscale;
        j["base_grid"] = config.base_grid;
        std::ofstream(config_path) << j.dump(2);
    }
    ~Fixture() { fs::remove_all(root); }

    void write_png(const fs::path& p, unsigned seed) const {
        fs::create_directories(p.parent_path());
        cv::Mat img(24, 24, CV_8UC3);
        cv::RNG cvrng(seed);
        cvrng.fill(img, cv::RNG::UNIFORM, 0, 256);
        cv::imwrite(p.string(), img);
    }

    int run(const std::string& args) const {
        const std::string cmd = std::string(VIP_CLI_BIN) + " " + args + " 2>/dev/null";
        const int status = std::system(cmd.c_str());
        REQUIRE(status != -1);
        return WEXITSTATUS(status);
    }

    std::string shared_flags(const fs::path& data, const fs::path& out) const {
        return "--model " + model_path.string() + " --config " + config_path.string() +
               " --data " + data.string() + " --out " + out.string() +
               " --resize 20 --crop 16";
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("partition reports per-image shares that sum to 1") {
    Fixture fx;
    for (int i = 0; i < 5; ++i) fx.write_png(fx.data_dir / ("img" + std::to_string(i) + ".png"), 10 + i);
    const fs::path out = fx.root / "partition.json";
    REQUIRE(fx.run("partition " + fx.shared_flags(fx.data_dir, out)) == 0);

    const auto rep = nlohmann::json::parse(slurp(out));
    REQUIRE(rep["records"].size() == 5);
    for (const auto& rec : rep["records"]) {
        const double p = rec["values"]["patch_share"].get<double>();
        const double r = rec["values"]["register_share"].get<double>();
        const double c = rec["values"]["cls_self_share"].get<double>();
        CHECK(p >= 0.0);
        CHECK(r >= 0.0);
        CHECK(c >= 0.0);
        CHECK(std::abs(p + r + c - 1.0) < 1e-6);
        CHECK(std::abs(rec["values"]["register_share_with_cls"].get<double>() - (r + c)) < 1e-7);
    }
    // records sorted by image content hash
    std::string prev;
    for (const auto& rec : rep["records"]) {
        const std::string h = rec["image_hash"];
        CHECK(prev < h);
        prev = h;
    }
}

TEST_CASE("repeated runs emit byte-identical reports") {
    Fixture fx;
    for (int i = 0; i < 4; ++i) fx.write_png(fx.data_dir / ("img" + std::to_string(i) + ".png"), 30 + i);
    const fs::path o1 = fx.root / "a.json", o2 = fx.root / "b.json";
    REQUIRE(fx.run("decompose " + fx.shared_flags(fx.data_dir, o1)) == 0);
    REQUIRE(fx.run("decompose " + fx.shared_flags(fx.data_dir, o2)) == 0);
    CHECK(slurp(o1) == slurp(o2));

    const fs::path c1 = fx.root / "a.csv", c2 = fx.root / "b.csv";
    REQUIRE(fx.run("norms " + fx.shared_flags(fx.data_dir, c1) + " --format csv") == 0);
    REQUIRE(fx.run("norms " + fx.shared_flags(fx.data_dir, c2) + " --format csv") == 0);
    CHECK(slurp(c1) == slurp(c2));
    CHECK(slurp(c1).find("image_hash") == 0);
}

TEST_CASE("probe on duplicated class images is exactly solvable") {
    Fixture fx;
    const char* classes[] = {"ant", "bee", "cat"};
    for (int c = 0; c < 3; ++c) {
        // two byte-identical copies per class: test features equal the prototype
        fx.write_png(fx.data_dir / classes[c] / "a.png", 100 + c);
        fs::copy_file(fx.data_dir / classes[c] / "a.png", fx.data_dir / classes[c] / "b.png");
    }
    const fs::path out = fx.root / "probe.json";
    REQUIRE(fx.run("probe " + fx.shared_flags(fx.data_dir, out) + " --top-k 1 --reps 3") == 0);
    const auto rep = nlohmann::json::parse(slurp(out));
    CHECK(rep["results"]["probe_full_top1_mean"].get<double>() == doctest::Approx(1.0));
    CHECK(rep["results"]["probe_patch_only_top1_mean"].get<double>() == doctest::Approx(1.0));
    CHECK(rep["results"]["probe_full_top1_std"].get<double>() == doctest::Approx(0.0));
}

TEST_CASE("cka results match a recomputation from the cached features") {
    Fixture fx;
    for (int i = 0; i < 6; ++i) fx.write_png(fx.data_dir / ("img" + std::to_string(i) + ".png"), 50 + i);
    setenv("VIP_CACHE_DIR", fx.cache_dir.c_str(), 1);
    const fs::path out = fx.root / "cka.json";
    REQUIRE(fx.run("cka " + fx.shared_flags(fx.data_dir, out)) == 0);
    const auto rep = nlohmann::json::parse(slurp(out));
    REQUIRE(rep["records"].size() == 6);
    REQUIRE(rep["results"].contains("cka_full_patch_only"));
    REQUIRE(rep["results"].contains("cka_full_register_only"));
    REQUIRE(rep["results"].contains("cka_full_skip_only"));

    // rebuild the feature matrices from the cache the run populated
    const FeatureCache cache(fx.cache_dir.string());
    const std::string tag = "cka-features;layer=1;renorm=0";
    const std::string cfg_hash = ModelConfig::from_json_file(fx.config_path.string()).hash();
    std::map<std::string, std::vector<Tensor>> variants;
    for (const auto& rec : rep["records"]) {
        const auto feats = cache.get(cache.key(rec["image_hash"], cfg_hash, tag));
        REQUIRE(feats.has_value());
        for (const auto& [name, t] : *feats) variants[name].push_back(t);
    }
    auto to_matrix = [](const std::vector<Tensor>& rows) {
        Tensor m({rows.size(), rows.front().numel()});
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < rows[i].numel(); ++j) m(i, j) = rows[i](j);
        return m;
    };
    const FeatureMatrix full{to_matrix(variants.at("full")), "full"};
    for (const auto& name : {"patch_only", "register_only", "skip_only"}) {
        const FeatureMatrix fm{to_matrix(variants.at(name)), name};
        CHECK(std::abs(rep["results"][std::string("cka_full_") + name].get<double>() -
                       linear_cka(full, fm).value) < 1e-6);
    }

    // second run is served from the cache and reproduces the report exactly
    const fs::path out2 = fx.root / "cka2.json";
    REQUIRE(fx.run("cka " + fx.shared_flags(fx.data_dir, out2)) == 0);
    CHECK(slurp(out) == slurp(out2));
    unsetenv("VIP_CACHE_DIR");
}

TEST_CASE("render writes one svg per image with one rect per grid cell") {
    Fixture fx;
    for (int i = 0; i < 3; ++i) fx.write_png(fx.data_dir / ("img" + std::to_string(i) + ".png"), 70 + i);
    const fs::path out = fx.root / "maps";
    REQUIRE(fx.run("render " + fx.shared_flags(fx.data_dir, out)) == 0);
    std::size_t svgs = 0;
    for (const auto& e : fs::directory_iterator(out)) {
        if (e.path().extension() != ".svg") continue;
        ++svgs;
        const std::string svg = slurp(e.path());
        std::size_t rects = 0;
        for (std::size_t p = svg.find("<rect"); p != std::string::npos;
             p = svg.find("<rect", p + 1))
            ++rects;
        CHECK(rects == 4); // 2x2 patch grid
    }
    CHECK(svgs == 3);
}

TEST_CASE("exit codes map the failure domains") {
    Fixture fx;
    fx.write_png(fx.data_dir / "img.png", 1);
    const fs::path out = fx.root / "out.json";

    // malformed checkpoint: drop one required tensor
    TensorMap tensors = load_safetensors(fx.model_path.string());
    tensors.erase("blocks.1.attn.k.weight");
    const fs::path broken = fx.root / "broken.safetensors";
    save_safetensors(broken.string(), tensors);
    CHECK(fx.run("partition --model " + broken.string() + " --config " +
                 fx.config_path.string() + " --data " + fx.data_dir.string() + " --out " +
                 out.string() + " --resize 20 --crop 16") == 3);

    // layer out of range -> invalid argument
    CHECK(fx.run("partition " + fx.shared_flags(fx.data_dir, out) + " --layer 9") == 2);

    // empty dataset directory
    const fs::path empty = fx.root / "empty";
    fs::create_directories(empty);
    CHECK(fx.run("partition " + fx.shared_flags(empty, out)) == 4);

    // probe without enough images per class
    CHECK(fx.run("probe " + fx.shared_flags(fx.data_dir, out)) == 4);
}

TEST_CASE("limit and seed control the processed subset deterministically") {
    Fixture fx;
    for (int i = 0; i < 6; ++i) fx.write_png(fx.data_dir / ("img" + std::to_string(i) + ".png"), 90 + i);
    const fs::path o1 = fx.root / "s1.json", o2 = fx.root / "s2.json";
    REQUIRE(fx.run("partition " + fx.shared_flags(fx.data_dir, o1) + " --limit 3 --seed 7") == 0);
    REQUIRE(fx.run("partition " + fx.shared_flags(fx.data_dir, o2) + " --limit 3 --seed 7") == 0);
    CHECK(slurp(o1) == slurp(o2));
    const auto rep = nlohmann::json::parse(slurp(o1));
    CHECK(rep["records"].size() == 3);
    CHECK(rep["settings"]["seed"] == "7");
}
