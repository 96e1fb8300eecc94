#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>

#include "vip/errors.hpp"
#include "vip/safetensors.hpp"

#include "test_util.hpp"

using namespace vip;
namespace fs = std::filesystem;

namespace {
std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}
} // namespace

TEST_CASE("round trip preserves names, shapes and bits") {
    std::mt19937_64 rng(1);
    TensorMap m;
    m["alpha"] = viptest::random_tensor({3, 4}, rng);
    m["beta.weight"] = viptest::random_tensor({7}, rng);
    m["gamma"] = viptest::random_tensor({2, 2, 5}, rng);
    const std::string path = temp_path("vip_st_roundtrip.safetensors");
    save_safetensors(path, m);
    const TensorMap back = load_safetensors(path);
    REQUIRE(back.size() == 3);
    for (const auto& [name, t] : m) {
        REQUIRE(back.count(name) == 1);
        CHECK(back.at(name) == t);
    }
    fs::remove(path);
}

TEST_CASE("malformed header length is a format error") {
    const std::string path = temp_path("vip_st_short.safetensors");
    std::ofstream(path, std::ios::binary) << "abc";
    CHECK_THROWS_AS(load_safetensors(path), FormatError);
    fs::remove(path);
}

TEST_CASE("non-JSON header is a format error") {
    const std::string path = temp_path("vip_st_badjson.safetensors");
    {
        std::ofstream f(path, std::ios::binary);
        const std::uint64_t len = 4;
        f.write(reinterpret_cast<const char*>(&len), 8);
        f << "oops";
    }
    CHECK_THROWS_AS(load_safetensors(path), FormatError);
    fs::remove(path);
}

TEST_CASE("truncated payload is a format error") {
    std::mt19937_64 rng(2);
    TensorMap m;
    m["x"] = viptest::random_tensor({8, 8}, rng);
    const std::string path = temp_path("vip_st_trunc.safetensors");
    save_safetensors(path, m);
    const auto full = fs::file_size(path);
    fs::resize_file(path, full - 16);
    CHECK_THROWS_AS(load_safetensors(path), FormatError);
    fs::remove(path);
}

TEST_CASE("unsupported dtype is a load error") {
    const std::string path = temp_path("vip_st_dtype.safetensors");
    {
        const std::string header =
            R"({"x": {"dtype": "F16", "shape": [2], "data_offsets": [0, 4]}})";
        std::ofstream f(path, std::ios::binary);
        const std::uint64_t len = header.size();
        f.write(reinterpret_cast<const char*>(&len), 8);
        f << header << "0000";
    }
    CHECK_THROWS_AS(load_safetensors(path), LoadError);
    fs::remove(path);
}

TEST_CASE("missing file is a format error") {
    CHECK_THROWS_AS(load_safetensors(temp_path("vip_no_such_file.safetensors")), FormatError);
}
