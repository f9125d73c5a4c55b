#pragma once

// Binary checkpoint container:
//   8-byte magic "DNAVCKPT", u32 format version, u64 header length,
//   JSON header (sorted keys), then every array's elements back to back,
//   little-endian, in header order.

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ductnav/error.hpp"

namespace ductnav::ckpt {

inline constexpr char kMagic[8] = {'D', 'N', 'A', 'V', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kFormatVersion = 1;

using ArrayData = std::variant<std::vector<float>, std::vector<double>, std::vector<std::uint8_t>>;

struct NamedArray {
    std::string name;
    ArrayData data;
};

struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    void put(std::string name, ArrayData d) { arrays.push_back({std::move(name), std::move(d)}); }

    template <class T>
    const std::vector<T>& get(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) {
                if (const auto* v = std::get_if<std::vector<T>>(&a.data)) return *v;
                throw IoError("checkpoint array '" + name + "' has an unexpected element type");
            }
        throw IoError("checkpoint is missing array '" + name + "'");
    }

    bool has(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return true;
        return false;
    }
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const unsigned char* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

inline const char* dtype_name(const ArrayData& d) {
    switch (d.index()) {
        case 0: return "f32";
        case 1: return "f64";
        default: return "u8";
    }
}

inline std::size_t element_size(const std::string& dtype) {
    if (dtype == "f32") return 4;
    if (dtype == "f64") return 8;
    if (dtype == "u8") return 1;
    throw IoError("checkpoint: unknown dtype '" + dtype + "'");
}

}  // namespace detail

inline std::string encode(const Checkpoint& c) {
    nlohmann::json header;
    header["meta"] = c.meta;
    header["arrays"] = nlohmann::json::array();
    for (const auto& a : c.arrays) {
        const std::size_t n = std::visit([](const auto& v) { return v.size(); }, a.data);
        header["arrays"].push_back({{"name", a.name}, {"dtype", detail::dtype_name(a.data)}, {"count", n}});
    }
    const std::string htext = header.dump();

    std::string out(kMagic, kMagic + 8);
    detail::put_le<std::uint32_t>(out, kFormatVersion);
    detail::put_le<std::uint64_t>(out, htext.size());
    out += htext;
    for (const auto& a : c.arrays) {
        std::visit(
            [&out](const auto& v) {
                using T = typename std::decay_t<decltype(v)>::value_type;
                for (T x : v) {
                    if constexpr (std::is_same_v<T, float>) detail::put_le(out, std::bit_cast<std::uint32_t>(x));
                    else if constexpr (std::is_same_v<T, double>) detail::put_le(out, std::bit_cast<std::uint64_t>(x));
                    else out.push_back(static_cast<char>(x));
                }
            },
            a.data);
    }
    return out;
}

inline Checkpoint decode(const std::string& bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 20 || std::memcmp(p, kMagic, 8) != 0) throw IoError("not a ductnav checkpoint (bad magic)");
    const auto version = detail::get_le<std::uint32_t>(p + 8);
    if (version != kFormatVersion)
        throw IoError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kFormatVersion) + ")");
    const auto hlen = detail::get_le<std::uint64_t>(p + 12);
    if (hlen > bytes.size() - 20) throw IoError("checkpoint header truncated");

    Checkpoint c;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(20, hlen));
        c.meta = header.at("meta");
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint header: ") + e.what());
    }
    std::size_t off = 20 + hlen;
    try {
        for (const auto& a : header.at("arrays")) {
            const auto name = a.at("name").get<std::string>();
            const auto dtype = a.at("dtype").get<std::string>();
            const auto n = a.at("count").get<std::size_t>();
            const std::size_t es = detail::element_size(dtype);
            if (n > (bytes.size() - off) / es) throw IoError("checkpoint array '" + name + "' truncated");
            const unsigned char* q = p + off;
            if (dtype == "f32") {
                std::vector<float> v(n);
                for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(q + 4 * i));
                c.put(name, std::move(v));
            } else if (dtype == "f64") {
                std::vector<double> v(n);
                for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(q + 8 * i));
                c.put(name, std::move(v));
            } else {
                c.put(name, std::vector<std::uint8_t>(q, q + n));
            }
            off += n * es;
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint header: ") + e.what());
    }
    if (off != bytes.size()) throw IoError("checkpoint has trailing bytes");
    return c;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
    return ss.str();
}

/// Writes to a sibling temp file and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move '" + tmp + "' to '" + path.string() + "': " + ec.message());
}

inline void save(const Checkpoint& c, const std::filesystem::path& path) { write_file_atomic(path, encode(c)); }

inline Checkpoint load(const std::filesystem::path& path) { return decode(read_file(path)); }

}  // namespace ductnav::ckpt
