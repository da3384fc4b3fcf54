#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "volpretext/volume.hpp"

namespace vpx::prep {

namespace detail {

// lerp(a, a, t) == a bit-exactly, which keeps resize and CLAHE blending
// exact on constant regions.
inline float lerp(float a, float b, float t) { return a + t * (b - a); }

} // namespace detail

// Corner-aligned trilinear resampling to an exact target shape.
inline Volume resize_trilinear(const Volume& v, std::array<std::int64_t, 3> target) {
    for (int a = 0; a < 3; ++a) {
        if (target[static_cast<std::size_t>(a)] < 1) {
            throw vpx::ParamError("resize_trilinear: target axis " + std::to_string(a) +
                                  " extent must be >= 1");
        }
        if (v.dims[static_cast<std::size_t>(a)] < 1) {
            throw vpx::ParamError("resize_trilinear: source axis " + std::to_string(a) +
                                  " extent must be >= 1");
        }
    }
    Volume out(target[0], target[1], target[2]);
    out.meta = v.meta;
    std::array<double, 3> scale;
    for (int a = 0; a < 3; ++a) {
        const auto in_e = v.dims[static_cast<std::size_t>(a)];
        const auto out_e = target[static_cast<std::size_t>(a)];
        scale[static_cast<std::size_t>(a)] =
            out_e > 1 ? static_cast<double>(in_e - 1) / static_cast<double>(out_e - 1) : 0.0;
    }
    auto split = [](double x, std::int64_t extent, std::int64_t& lo, std::int64_t& hi,
                    float& frac) {
        lo = static_cast<std::int64_t>(std::floor(x));
        if (lo < 0) lo = 0;
        if (lo > extent - 1) lo = extent - 1;
        hi = std::min<std::int64_t>(lo + 1, extent - 1);
        frac = static_cast<float>(x - static_cast<double>(lo));
        if (frac < 0.0f) frac = 0.0f;
        if (frac > 1.0f) frac = 1.0f;
    };
    for (std::int64_t d = 0; d < target[0]; ++d) {
        std::int64_t d0, d1;
        float fd;
        split(static_cast<double>(d) * scale[0], v.dims[0], d0, d1, fd);
        for (std::int64_t h = 0; h < target[1]; ++h) {
            std::int64_t h0, h1;
            float fh;
            split(static_cast<double>(h) * scale[1], v.dims[1], h0, h1, fh);
            for (std::int64_t w = 0; w < target[2]; ++w) {
                std::int64_t w0, w1;
                float fw;
                split(static_cast<double>(w) * scale[2], v.dims[2], w0, w1, fw);
                const float c00 = detail::lerp(v.at(d0, h0, w0), v.at(d0, h0, w1), fw);
                const float c01 = detail::lerp(v.at(d0, h1, w0), v.at(d0, h1, w1), fw);
                const float c10 = detail::lerp(v.at(d1, h0, w0), v.at(d1, h0, w1), fw);
                const float c11 = detail::lerp(v.at(d1, h1, w0), v.at(d1, h1, w1), fw);
                const float c0 = detail::lerp(c00, c01, fh);
                const float c1 = detail::lerp(c10, c11, fh);
                out.at(d, h, w) = detail::lerp(c0, c1, fd);
            }
        }
    }
    return out;
}

// (I - min) / (max - min). A constant volume maps to all zeros so batch
// pipelines stay total.
inline Volume minmax_normalize(const Volume& v) {
    Volume out = v;
    if (v.voxels.empty()) return out;
    float lo = v.voxels[0], hi = v.voxels[0];
    for (float x : v.voxels) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (lo == hi) {
        std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
        return out;
    }
    const float range = hi - lo;
    for (auto& x : out.voxels) x = (x - lo) / range;
    return out;
}

struct ClaheParams {
    int tiles_per_axis = 8;
    int bins = 256;
    double clip_limit = 2.0; // multiple of the uniform bin height

    void validate() const {
        if (tiles_per_axis < 1) throw vpx::ParamError("clahe: tiles_per_axis must be >= 1");
        if (bins < 2) throw vpx::ParamError("clahe: bins must be >= 2");
        if (!(clip_limit > 0.0)) throw vpx::ParamError("clahe: clip_limit must be > 0");
    }
};

namespace detail {

// Per-tile monotone intensity mapping: clipped histogram (one uniform
// redistribution pass of the excess) followed by the piecewise-linear CDF.
// A tile whose voxels all share one value maps identically, so constants
// pass through CLAHE unchanged.
struct TileMapping {
    std::vector<double> cdf; // exclusive prefix sums, bins + 1 entries
    double count = 0.0;
    bool identity = false;
    int bins = 0;

    float apply(float v) const {
        if (identity) return v;
        double x = static_cast<double>(v) * bins;
        std::int64_t k = static_cast<std::int64_t>(x);
        if (k >= bins) k = bins - 1;
        if (k < 0) k = 0;
        const double theta = x - static_cast<double>(k);
        const double hk = cdf[static_cast<std::size_t>(k + 1)] - cdf[static_cast<std::size_t>(k)];
        double y = (cdf[static_cast<std::size_t>(k)] + theta * hk) / count;
        if (y < 0.0) y = 0.0;
        if (y > 1.0) y = 1.0;
        return static_cast<float>(y);
    }
};

} // namespace detail

// Volumetric contrast-limited adaptive histogram equalization. The volume
// is split into tiles_per_axis^3 tiles; each voxel blends the mappings of
// its <= 8 surrounding tile centers trilinearly. Input and output live in
// [0, 1].
inline Volume clahe3d(const Volume& v, const ClaheParams& p) {
    p.validate();
    for (std::size_t i = 0; i < v.voxels.size(); ++i) {
        const float x = v.voxels[i];
        if (!(x >= 0.0f && x <= 1.0f)) {
            throw vpx::DataError("clahe3d: voxel " + std::to_string(i) + " value " +
                                 std::to_string(x) + " outside [0,1]");
        }
    }
    const int nt = p.tiles_per_axis;
    std::array<std::vector<std::int64_t>, 3> bounds; // nt+1 boundaries per axis
    for (int a = 0; a < 3; ++a) {
        auto& b = bounds[static_cast<std::size_t>(a)];
        b.resize(static_cast<std::size_t>(nt) + 1);
        for (int t = 0; t <= nt; ++t) {
            b[static_cast<std::size_t>(t)] =
                v.dims[static_cast<std::size_t>(a)] * t / nt;
        }
    }
    auto tile_nonempty = [&](int a, int t) {
        return bounds[static_cast<std::size_t>(a)][static_cast<std::size_t>(t + 1)] >
               bounds[static_cast<std::size_t>(a)][static_cast<std::size_t>(t)];
    };

    std::vector<detail::TileMapping> tiles(static_cast<std::size_t>(nt) * nt * nt);
    std::vector<double> hist(static_cast<std::size_t>(p.bins));
    for (int tz = 0; tz < nt; ++tz) {
        for (int ty = 0; ty < nt; ++ty) {
            for (int tx = 0; tx < nt; ++tx) {
                auto& tile = tiles[static_cast<std::size_t>((tz * nt + ty) * nt + tx)];
                tile.bins = p.bins;
                if (!tile_nonempty(0, tz) || !tile_nonempty(1, ty) || !tile_nonempty(2, tx)) {
                    tile.identity = true;
                    continue;
                }
                std::fill(hist.begin(), hist.end(), 0.0);
                float lo = 2.0f, hi = -1.0f;
                std::int64_t count = 0;
                for (std::int64_t d = bounds[0][static_cast<std::size_t>(tz)];
                     d < bounds[0][static_cast<std::size_t>(tz + 1)]; ++d) {
                    for (std::int64_t h = bounds[1][static_cast<std::size_t>(ty)];
                         h < bounds[1][static_cast<std::size_t>(ty + 1)]; ++h) {
                        for (std::int64_t w = bounds[2][static_cast<std::size_t>(tx)];
                             w < bounds[2][static_cast<std::size_t>(tx + 1)]; ++w) {
                            const float x = v.at(d, h, w);
                            lo = std::min(lo, x);
                            hi = std::max(hi, x);
                            std::int64_t k = static_cast<std::int64_t>(
                                static_cast<double>(x) * p.bins);
                            if (k >= p.bins) k = p.bins - 1;
                            hist[static_cast<std::size_t>(k)] += 1.0;
                            ++count;
                        }
                    }
                }
                if (lo == hi) {
                    tile.identity = true;
                    continue;
                }
                const double limit =
                    p.clip_limit * static_cast<double>(count) / static_cast<double>(p.bins);
                double excess = 0.0;
                for (auto& hval : hist) {
                    if (hval > limit) {
                        excess += hval - limit;
                        hval = limit;
                    }
                }
                const double bonus = excess / static_cast<double>(p.bins);
                for (auto& hval : hist) hval += bonus;
                tile.cdf.resize(static_cast<std::size_t>(p.bins) + 1);
                tile.cdf[0] = 0.0;
                for (int k = 0; k < p.bins; ++k) {
                    tile.cdf[static_cast<std::size_t>(k + 1)] =
                        tile.cdf[static_cast<std::size_t>(k)] + hist[static_cast<std::size_t>(k)];
                }
                tile.count = static_cast<double>(count);
            }
        }
    }

    // Tile centers used for the trilinear blend.
    std::array<std::vector<double>, 3> centers;
    for (int a = 0; a < 3; ++a) {
        auto& c = centers[static_cast<std::size_t>(a)];
        c.resize(static_cast<std::size_t>(nt));
        for (int t = 0; t < nt; ++t) {
            c[static_cast<std::size_t>(t)] =
                (static_cast<double>(bounds[static_cast<std::size_t>(a)][static_cast<std::size_t>(t)]) +
                 static_cast<double>(
                     bounds[static_cast<std::size_t>(a)][static_cast<std::size_t>(t + 1)]) -
                 1.0) /
                2.0;
        }
    }
    auto bracket = [&](int a, std::int64_t pos, int& t0, int& t1, float& frac) {
        const auto& c = centers[static_cast<std::size_t>(a)];
        const double x = static_cast<double>(pos);
        if (nt == 1 || x <= c[0]) {
            t0 = t1 = 0;
            frac = 0.0f;
            return;
        }
        if (x >= c[static_cast<std::size_t>(nt - 1)]) {
            t0 = t1 = nt - 1;
            frac = 0.0f;
            return;
        }
        int t = 0;
        while (t + 1 < nt && c[static_cast<std::size_t>(t + 1)] <= x) ++t;
        t0 = t;
        t1 = t + 1;
        const double span =
            c[static_cast<std::size_t>(t1)] - c[static_cast<std::size_t>(t0)];
        frac = span > 0.0 ? static_cast<float>((x - c[static_cast<std::size_t>(t0)]) / span)
                          : 0.0f;
    };

    Volume out(v.dims[0], v.dims[1], v.dims[2]);
    out.meta = v.meta;
    for (std::int64_t d = 0; d < v.dims[0]; ++d) {
        int tz0, tz1;
        float fz;
        bracket(0, d, tz0, tz1, fz);
        for (std::int64_t h = 0; h < v.dims[1]; ++h) {
            int ty0, ty1;
            float fy;
            bracket(1, h, ty0, ty1, fy);
            for (std::int64_t w = 0; w < v.dims[2]; ++w) {
                int tx0, tx1;
                float fx;
                bracket(2, w, tx0, tx1, fx);
                const float x = v.at(d, h, w);
                auto m = [&](int tz, int ty, int tx) {
                    return tiles[static_cast<std::size_t>((tz * nt + ty) * nt + tx)].apply(x);
                };
                const float c00 = detail::lerp(m(tz0, ty0, tx0), m(tz0, ty0, tx1), fx);
                const float c01 = detail::lerp(m(tz0, ty1, tx0), m(tz0, ty1, tx1), fx);
                const float c10 = detail::lerp(m(tz1, ty0, tx0), m(tz1, ty0, tx1), fx);
                const float c11 = detail::lerp(m(tz1, ty1, tx0), m(tz1, ty1, tx1), fx);
                const float c0 = detail::lerp(c00, c01, fy);
                const float c1 = detail::lerp(c10, c11, fy);
                out.at(d, h, w) = detail::lerp(c0, c1, fz);
            }
        }
    }
    return out;
}

// The three-step pipeline: resize -> min-max normalize -> CLAHE.
inline Volume preprocess_pipeline(const Volume& v, std::array<std::int64_t, 3> target,
                                  const ClaheParams& clahe) {
    return clahe3d(minmax_normalize(resize_trilinear(v, target)), clahe);
}

} // namespace vpx::prep
