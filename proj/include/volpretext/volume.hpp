#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "volpretext/errors.hpp"

namespace vpx::prep {

// Dense 3-D scalar grid, row-major with W fastest.
struct Volume {
    std::array<std::int64_t, 3> dims{0, 0, 0}; // D, H, W
    std::vector<float> voxels;
    std::string meta; // source scan id, empty when unknown

    Volume() = default;
    Volume(std::int64_t d, std::int64_t h, std::int64_t w, float fill = 0.0f)
        : dims{d, h, w}, voxels(static_cast<std::size_t>(d * h * w), fill) {}

    std::int64_t numel() const { return dims[0] * dims[1] * dims[2]; }
    bool cubic() const { return dims[0] == dims[1] && dims[1] == dims[2]; }

    float& at(std::int64_t d, std::int64_t h, std::int64_t w) {
        return voxels[static_cast<std::size_t>((d * dims[1] + h) * dims[2] + w)];
    }
    float at(std::int64_t d, std::int64_t h, std::int64_t w) const {
        return voxels[static_cast<std::size_t>((d * dims[1] + h) * dims[2] + w)];
    }
};

// VOLB volume file: magic "VOLB", version u16=1, dims 3*u32 (D,H,W),
// dtype u8=1 (f32), 6 reserved zero bytes, then D*H*W little-endian f32
// with W fastest. Header is 25 bytes; round trips are bit-exact.
namespace volb {

constexpr char kMagic[4] = {'V', 'O', 'L', 'B'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::size_t kHeaderSize = 25;

inline std::string encode(const Volume& v) {
    std::string out;
    out.append(kMagic, 4);
    auto put = [&out](const void* p, std::size_t n) {
        out.append(reinterpret_cast<const char*>(p), n);
    };
    const std::uint16_t version = kVersion;
    put(&version, 2);
    for (int a = 0; a < 3; ++a) {
        const std::uint32_t d = static_cast<std::uint32_t>(v.dims[static_cast<std::size_t>(a)]);
        put(&d, 4);
    }
    const std::uint8_t dtype = kDtypeF32;
    put(&dtype, 1);
    const char reserved[6] = {0, 0, 0, 0, 0, 0};
    out.append(reserved, 6);
    put(v.voxels.data(), v.voxels.size() * sizeof(float));
    return out;
}

inline Volume decode(const std::string& buf) {
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw vpx::FormatError("volb: bad magic", 0);
    }
    if (buf.size() < kHeaderSize) {
        throw vpx::FormatError("volb: truncated header", buf.size());
    }
    std::uint16_t version;
    std::memcpy(&version, buf.data() + 4, 2);
    if (version != kVersion) {
        throw vpx::FormatError("volb: unsupported version " + std::to_string(version), 4);
    }
    std::uint32_t dims[3];
    std::memcpy(dims, buf.data() + 6, 12);
    std::uint8_t dtype;
    std::memcpy(&dtype, buf.data() + 18, 1);
    if (dtype != kDtypeF32) {
        throw vpx::FormatError("volb: unsupported dtype " + std::to_string(dtype), 18);
    }
    Volume v;
    v.dims = {static_cast<std::int64_t>(dims[0]), static_cast<std::int64_t>(dims[1]),
              static_cast<std::int64_t>(dims[2])};
    const std::size_t expect = static_cast<std::size_t>(v.numel()) * sizeof(float);
    const std::size_t have = buf.size() - kHeaderSize;
    if (have != expect) {
        throw vpx::FormatError("volb: header declares " + std::to_string(v.numel()) +
                                   " voxels (" + std::to_string(expect) +
                                   " payload bytes) but file holds " + std::to_string(have),
                               kHeaderSize + std::min(have, expect));
    }
    v.voxels.resize(static_cast<std::size_t>(v.numel()));
    std::memcpy(v.voxels.data(), buf.data() + kHeaderSize, expect);
    return v;
}

} // namespace volb

inline void write_volume(const Volume& v, const std::string& path) {
    const std::string buf = volb::encode(v);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw vpx::DataError("volb: cannot open '" + path + "' for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw vpx::DataError("volb: short write to '" + path + "'");
}

inline Volume read_volume(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw vpx::DataError("volb: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return volb::decode(buf);
}

} // namespace vpx::prep
