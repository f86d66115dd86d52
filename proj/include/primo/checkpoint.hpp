#pragma once

// Checkpoint layout (version 1), all integers little-endian:
//
//   offset 0   8 bytes   magic "PRIMOCKP"
//   offset 8   u32       format version
//   offset 12  u64       manifest length L in bytes
//   offset 20  L bytes   UTF-8 JSON manifest
//   offset 20+L          float64 payload, little-endian, arrays concatenated
//
// The manifest is {"version":1, "header":{...}, "arrays":[{"name", "shape",
// "offset", "count"}, ...]} where offset/count are in float64 elements from
// the start of the payload. "header" carries model architecture metadata.

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "primo/errors.hpp"
#include "primo/tensor.hpp"

namespace primo {

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    nlohmann::json header = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    [[nodiscard]] const NamedArray& find(const std::string& name) const
    {
        for (const auto& a : arrays)
            if (a.name == name)
                return a;
        throw SchemaError("checkpoint has no array named '" + name + "'");
    }
};

inline constexpr std::array<char, 8> kCheckpointMagic{'P', 'R', 'I', 'M', 'O', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class UInt>
void put_le(std::ostream& os, UInt value)
{
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
        os.put(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <class UInt>
UInt get_le(std::istream& is, const std::string& what)
{
    UInt value = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        const int c = is.get();
        if (c == std::char_traits<char>::eof())
            throw SchemaError("checkpoint truncated while reading " + what);
        value |= static_cast<UInt>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return value;
}

} // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    nlohmann::json manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["header"] = ckpt.header;
    manifest["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : ckpt.arrays) {
        if (shape_size(a.shape) != a.values.size())
            throw DimensionError("checkpoint array '" + a.name + "' has inconsistent shape");
        manifest["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.values.size()}});
        offset += a.values.size();
    }
    const std::string text = manifest.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw IoError("cannot open checkpoint for writing: " + path.string());
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::put_le<std::uint32_t>(os, kCheckpointVersion);
    detail::put_le<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : ckpt.arrays)
        for (double v : a.values)
            detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    if (!os)
        throw IoError("failed writing checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("cannot open checkpoint: " + path.string());
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kCheckpointMagic)
        throw SchemaError("not a checkpoint file (bad magic): " + path.string());
    const auto version = detail::get_le<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion)
        throw SchemaError("unsupported checkpoint version " + std::to_string(version));
    const auto length = detail::get_le<std::uint64_t>(is, "manifest length");
    std::string text(length, '\0');
    is.read(text.data(), static_cast<std::streamsize>(length));
    if (!is)
        throw SchemaError("checkpoint truncated in manifest");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.header = manifest.value("header", nlohmann::json::object());
    std::uint64_t expected_offset = 0;
    for (const auto& entry : manifest.at("arrays")) {
        NamedArray a;
        a.name = entry.at("name").get<std::string>();
        a.shape = entry.at("shape").get<Shape>();
        const auto count = entry.at("count").get<std::uint64_t>();
        if (entry.at("offset").get<std::uint64_t>() != expected_offset || shape_size(a.shape) != count)
            throw SchemaError("checkpoint manifest entry '" + a.name + "' is inconsistent");
        a.values.resize(count);
        for (auto& v : a.values)
            v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is, "payload of '" + a.name + "'"));
        expected_offset += count;
        ckpt.arrays.push_back(std::move(a));
    }
    return ckpt;
}

/// Copies a saved array into a live parameter after checking the shape.
inline void restore_parameter(Parameter& p, const Checkpoint& ckpt)
{
    const NamedArray& a = ckpt.find(p.name());
    if (a.shape != p.shape())
        throw SchemaError("checkpoint array '" + a.name + "' has shape " + shape_str(a.shape) + ", expected " +
                          shape_str(p.shape()));
    std::copy(a.values.begin(), a.values.end(), p.values().begin());
}

} // namespace primo
