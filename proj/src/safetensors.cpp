#include "vip/safetensors.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "vip/errors.hpp"

namespace vip {

namespace {
using json = nlohmann::json;
} // namespace

TensorMap load_safetensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("safetensors: cannot open " + path);

    std::uint64_t header_len = 0;
    unsigned char len_bytes[8];
    if (!f.read(reinterpret_cast<char*>(len_bytes), 8))
        throw FormatError("safetensors: file shorter than 8-byte header length");
    for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | len_bytes[i];
    if (header_len == 0 || header_len > (1ull << 31))
        throw FormatError("safetensors: implausible header length");

    std::string header(header_len, '\0');
    if (!f.read(header.data(), static_cast<std::streamsize>(header_len)))
        throw FormatError("safetensors: truncated header");

    json j;
    try {
        j = json::parse(header);
    } catch (const json::exception& e) {
        throw FormatError(std::string("safetensors: header is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("safetensors: header must be a JSON object");

    std::vector<char> payload(std::istreambuf_iterator<char>(f), {});

    TensorMap out;
    for (auto& [name, entry] : j.items()) {
        if (name == "__metadata__") continue;
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets"))
            throw FormatError("safetensors: malformed entry for '" + name + "'");
        const std::string dtype = entry["dtype"].get<std::string>();
        if (dtype != "F32")
            throw LoadError("safetensors: tensor '" + name + "' has unsupported dtype " + dtype);
        std::vector<std::size_t> shape;
        std::size_t numel = 1;
        for (const auto& e : entry["shape"]) {
            const auto ext = e.get<std::uint64_t>();
            if (ext == 0) throw FormatError("safetensors: zero extent in '" + name + "'");
            shape.push_back(static_cast<std::size_t>(ext));
            numel *= static_cast<std::size_t>(ext);
        }
        const auto offs = entry["data_offsets"];
        const std::uint64_t begin = offs.at(0).get<std::uint64_t>();
        const std::uint64_t end = offs.at(1).get<std::uint64_t>();
        if (end < begin || end > payload.size() || end - begin != numel * sizeof(float))
            throw FormatError("safetensors: bad data_offsets for '" + name + "'");
        std::vector<float> data(numel);
        std::memcpy(data.data(), payload.data() + begin, numel * sizeof(float));
        out.emplace(name, Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

void save_safetensors(const std::string& path, const TensorMap& tensors) {
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const std::uint64_t bytes = t.numel() * sizeof(float);
        header[name] = {{"dtype", "F32"},
                        {"shape", t.shape()},
                        {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("safetensors: cannot write " + path);
    const std::uint64_t len = hs.size();
    unsigned char len_bytes[8];
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<const char*>(len_bytes), 8);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : tensors)
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) throw IoError("safetensors: write failed for " + path);
}

} // namespace vip
