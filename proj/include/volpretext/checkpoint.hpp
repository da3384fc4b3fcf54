#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "volpretext/params.hpp"

namespace vpx {

// VPXW parameter checkpoint: magic "VPXW", format version u16, then a
// u32-count-prefixed list of (name: u32 length + UTF-8 bytes,
// shape: u32 rank + u32 extents, data: little-endian f32 array).
// Entries appear in parameter-store insertion order; the f32 payload
// round-trips bit-exactly.
namespace vpxw {

constexpr char kMagic[4] = {'V', 'P', 'X', 'W'};
constexpr std::uint16_t kVersion = 1;

struct RawEntry {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> data;
};

namespace detail {

template <typename U>
void put(std::string& out, U v) {
    unsigned char bytes[sizeof(U)];
    std::memcpy(bytes, &v, sizeof(U));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U take(const std::string& buf, std::size_t& off, const char* what) {
    if (off + sizeof(U) > buf.size()) {
        throw FormatError(std::string("vpxw: truncated while reading ") + what, off);
    }
    U v;
    std::memcpy(&v, buf.data() + off, sizeof(U));
    off += sizeof(U);
    return v;
}

} // namespace detail

inline std::string encode(const std::vector<RawEntry>& entries) {
    std::string out;
    out.append(kMagic, 4);
    detail::put<std::uint16_t>(out, kVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.append(e.name);
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
        std::int64_t count = 1;
        for (auto d : e.shape) {
            detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
            count *= d;
        }
        if (count != static_cast<std::int64_t>(e.data.size())) {
            throw ShapeError("vpxw: entry '" + e.name + "' shape/payload mismatch");
        }
        for (float f : e.data) detail::put<float>(out, f);
    }
    return out;
}

inline std::vector<RawEntry> decode(const std::string& buf) {
    std::size_t off = 0;
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw FormatError("vpxw: bad magic", 0);
    }
    off = 4;
    const auto version = detail::take<std::uint16_t>(buf, off, "version");
    if (version != kVersion) {
        throw FormatError("vpxw: unsupported version " + std::to_string(version), 4);
    }
    const auto count = detail::take<std::uint32_t>(buf, off, "entry count");
    std::vector<RawEntry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        RawEntry e;
        const auto name_len = detail::take<std::uint32_t>(buf, off, "name length");
        if (off + name_len > buf.size()) {
            throw FormatError("vpxw: truncated name", off);
        }
        e.name.assign(buf.data() + off, name_len);
        off += name_len;
        const auto rank = detail::take<std::uint32_t>(buf, off, "rank");
        std::int64_t numel = 1;
        for (std::uint32_t a = 0; a < rank; ++a) {
            const auto d = detail::take<std::uint32_t>(buf, off, "extent");
            e.shape.push_back(static_cast<std::int64_t>(d));
            numel *= d;
        }
        if (off + static_cast<std::size_t>(numel) * sizeof(float) > buf.size()) {
            throw FormatError("vpxw: truncated payload of '" + e.name + "'", off);
        }
        e.data.resize(static_cast<std::size_t>(numel));
        std::memcpy(e.data.data(), buf.data() + off,
                    static_cast<std::size_t>(numel) * sizeof(float));
        off += static_cast<std::size_t>(numel) * sizeof(float);
        entries.push_back(std::move(e));
    }
    if (off != buf.size()) {
        throw FormatError("vpxw: trailing bytes after last entry", off);
    }
    return entries;
}

} // namespace vpxw

template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const std::string& path) {
    std::vector<vpxw::RawEntry> entries;
    for (const auto& e : store.entries()) {
        vpxw::RawEntry raw;
        raw.name = e.name;
        raw.shape = e.node->value.shape;
        raw.data.resize(static_cast<std::size_t>(e.node->value.numel()));
        for (std::int64_t i = 0; i < e.node->value.numel(); ++i) {
            raw.data[static_cast<std::size_t>(i)] = static_cast<float>(e.node->value[i]);
        }
        entries.push_back(std::move(raw));
    }
    const std::string buf = vpxw::encode(entries);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("vpxw: cannot open '" + path + "' for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("vpxw: short write to '" + path + "'");
}

template <typename T>
void load_checkpoint(ParameterStore<T>& store, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("vpxw: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto entries = vpxw::decode(buf);
    if (entries.size() != store.entries().size()) {
        throw DataError("vpxw: checkpoint has " + std::to_string(entries.size()) +
                        " entries, store expects " + std::to_string(store.entries().size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& raw = entries[i];
        const auto& e = store.entries()[i];
        if (raw.name != e.name) {
            throw DataError("vpxw: entry " + std::to_string(i) + " is '" + raw.name +
                            "', store expects '" + e.name + "'");
        }
        if (raw.shape != e.node->value.shape) {
            throw DataError("vpxw: entry '" + raw.name + "' shape mismatch");
        }
        for (std::int64_t j = 0; j < e.node->value.numel(); ++j) {
            e.node->value[j] = static_cast<T>(raw.data[static_cast<std::size_t>(j)]);
        }
    }
}

} // namespace vpx
