#pragma once

// Float array container used for model weights, adversarial images and explanation maps.
//
// Layout:
//   bytes 0..7    magic "ADVXFC01"
//   bytes 8..15   header length L, uint64 little-endian
//   next L bytes  JSON header: {"format", "version", "kind", "meta",
//                 "arrays": [{"name", "shape", "offset", "count"}], "total_count"}
//   remainder     little-endian float32 values of every array, concatenated in
//                 header order; "offset" is the byte offset into this blob.

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "advxai/tensor.hpp"

namespace advxai {

inline constexpr char kContainerMagic[8] = {'A', 'D', 'V', 'X', 'F', 'C', '0', '1'};
inline constexpr int kContainerVersion = 1;

struct NamedArray {
    std::string name;
    Tensor<float> values;
};

struct Container {
    std::string kind;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray& find(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return a;
        throw std::runtime_error("container: no array named '" + name + "'");
    }
};

class ContainerError : public std::runtime_error {
   public:
    ContainerError(const std::string& field, const std::string& what)
        : std::runtime_error("container field '" + field + "': " + what), field_(field) {}
    const std::string& field() const { return field_; }

   private:
    std::string field_;
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

}  // namespace detail

inline std::string encode_container(const Container& c) {
    nlohmann::json header;
    header["format"] = "advxai-float-container";
    header["version"] = kContainerVersion;
    header["kind"] = c.kind;
    header["meta"] = c.meta;
    header["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0, total = 0;
    for (const auto& a : c.arrays) {
        header["arrays"].push_back(
            {{"name", a.name}, {"shape", a.values.shape()}, {"offset", offset}, {"count", a.values.size()}});
        offset += a.values.size() * 4;
        total += a.values.size();
    }
    header["total_count"] = total;
    const std::string text = header.dump();

    std::string out(kContainerMagic, sizeof kContainerMagic);
    const std::uint64_t len = text.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xffu));
    out += text;
    out.reserve(out.size() + total * 4);
    for (const auto& a : c.arrays)
        for (const float v : a.values.data()) detail::put_u32_le(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

inline Container decode_container(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
        throw ContainerError("magic", "not an advxai float container");
    }
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= std::uint64_t{raw[8 + i]} << (8 * i);
    if (len > bytes.size() - 16) throw ContainerError("header_length", "header extends past end of file");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    } catch (const nlohmann::json::exception& e) {
        throw ContainerError("header", e.what());
    }
    auto field = [&](const nlohmann::json& j, const char* name) -> const nlohmann::json& {
        if (!j.is_object() || !j.contains(name)) throw ContainerError(name, "missing");
        return j.at(name);
    };
    if (field(header, "format") != "advxai-float-container") throw ContainerError("format", "unexpected format tag");
    if (field(header, "version") != kContainerVersion) {
        throw ContainerError("version", "unsupported version " + field(header, "version").dump());
    }

    Container c;
    c.kind = field(header, "kind").get<std::string>();
    c.meta = header.value("meta", nlohmann::json::object());
    const std::size_t blob_start = 16 + len;
    const std::size_t blob_size = bytes.size() - blob_start;
    const auto total = field(header, "total_count").get<std::uint64_t>();
    if (blob_size != total * 4) {
        throw ContainerError("total_count", "blob holds " + std::to_string(blob_size) + " bytes, header declares " +
                                                std::to_string(total * 4));
    }

    std::uint64_t expected_offset = 0, recount = 0;
    for (const auto& a : field(header, "arrays")) {
        const auto name = field(a, "name").get<std::string>();
        const auto shape = field(a, "shape").get<Shape>();
        const auto offset = field(a, "offset").get<std::uint64_t>();
        const auto count = field(a, "count").get<std::uint64_t>();
        if (shape_size(shape) != count) throw ContainerError("count", "array '" + name + "' shape/count mismatch");
        if (offset != expected_offset) throw ContainerError("offset", "array '" + name + "' is not contiguous");
        if (offset + count * 4 > blob_size) throw ContainerError("offset", "array '" + name + "' truncated");
        std::vector<float> values(count);
        const unsigned char* p = raw + blob_start + offset;
        for (std::uint64_t i = 0; i < count; ++i) values[i] = std::bit_cast<float>(detail::get_u32_le(p + 4 * i));
        c.arrays.push_back({name, Tensor<float>(shape, std::move(values))});
        expected_offset += count * 4;
        recount += count;
    }
    if (recount != total) throw ContainerError("total_count", "arrays sum to " + std::to_string(recount));
    return c;
}

inline void write_container(const std::filesystem::path& path, const Container& c) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    const std::string bytes = encode_container(c);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("container: cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("container: write failed for " + path.string());
}

inline Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("container: cannot open " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_container(bytes);
}

}  // namespace advxai
