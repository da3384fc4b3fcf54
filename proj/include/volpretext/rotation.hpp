#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "volpretext/volume.hpp"

namespace vpx::rot {

// Quarter-turn counts per anatomical plane, applied in the fixed order
// plane 1 (axial, about axis 0) -> plane 2 (sagittal, about axis 1) ->
// plane 3 (coronal, about axis 2). Each component lives in {0,1,2,3},
// so the combination space has exactly 64 members.
struct RotationSpec {
    std::array<int, 3> quarter_turns{0, 0, 0};

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            const int q = quarter_turns[static_cast<std::size_t>(a)];
            if (q < 0 || q > 3) {
                throw vpx::ParamError("rotation spec component " + std::to_string(a) +
                                      " = " + std::to_string(q) + " outside {0,1,2,3}");
            }
        }
    }

    bool operator==(const RotationSpec& o) const { return quarter_turns == o.quarter_turns; }

    // Lexicographic (a,b,c) index in [0, 64).
    int lex_index() const {
        return quarter_turns[0] * 16 + quarter_turns[1] * 4 + quarter_turns[2];
    }

    static RotationSpec from_lex_index(int idx) {
        RotationSpec r;
        r.quarter_turns = {idx / 16, (idx / 4) % 4, idx % 4};
        return r;
    }
};

// Signed axis permutation in gather form: the output voxel at index o reads
// the input at index q with q[perm[k]] = flip[k] ? (E-1 - o[k]) : o[k].
struct AxisTransform {
    std::array<int, 3> perm{0, 1, 2};
    std::array<bool, 3> flip{false, false, false};

    bool operator==(const AxisTransform& o) const { return perm == o.perm && flip == o.flip; }
    bool operator<(const AxisTransform& o) const {
        if (perm != o.perm) return perm < o.perm;
        return flip < o.flip;
    }

    static AxisTransform identity() { return {}; }

    // Permutation sign times (-1)^(number of flips); proper rotations are +1.
    int determinant() const {
        int sign = 1;
        std::array<int, 3> p = perm;
        for (int i = 0; i < 3; ++i) {
            while (p[static_cast<std::size_t>(i)] != i) {
                std::swap(p[static_cast<std::size_t>(i)],
                          p[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])]);
                sign = -sign;
            }
        }
        for (bool f : flip) {
            if (f) sign = -sign;
        }
        return sign;
    }
};

// first applied, then second; the result maps input indices straight to the
// final output.
inline AxisTransform compose(const AxisTransform& second, const AxisTransform& first) {
    AxisTransform c;
    for (int k = 0; k < 3; ++k) {
        const int j = second.perm[static_cast<std::size_t>(k)];
        c.perm[static_cast<std::size_t>(k)] = first.perm[static_cast<std::size_t>(j)];
        c.flip[static_cast<std::size_t>(k)] = first.flip[static_cast<std::size_t>(j)] ^
                                              second.flip[static_cast<std::size_t>(k)];
    }
    return c;
}

inline AxisTransform inverse(const AxisTransform& t) {
    AxisTransform inv;
    for (int k = 0; k < 3; ++k) {
        const int j = t.perm[static_cast<std::size_t>(k)];
        inv.perm[static_cast<std::size_t>(j)] = k;
        inv.flip[static_cast<std::size_t>(j)] = t.flip[static_cast<std::size_t>(k)];
    }
    return inv;
}

// One 90-degree clockwise turn about the given axis, clockwise as seen from
// the positive end of the axis looking toward the origin. For rotation
// about axis r with remaining axes (i, j) in ascending order the gather
// rule is q[i] = E-1 - o[j], q[j] = o[i].
inline AxisTransform quarter_turn(int axis) {
    if (axis < 0 || axis > 2) throw vpx::ParamError("quarter_turn: axis outside {0,1,2}");
    const int i = axis == 0 ? 1 : 0;
    const int j = axis == 2 ? 1 : 2;
    AxisTransform t;
    t.perm[static_cast<std::size_t>(axis)] = axis;
    t.flip[static_cast<std::size_t>(axis)] = false;
    // q[i] = E-1 - o[j]  -> perm[j] = i, flip[j] = true
    t.perm[static_cast<std::size_t>(j)] = i;
    t.flip[static_cast<std::size_t>(j)] = true;
    // q[j] = o[i]        -> perm[i] = j, flip[i] = false
    t.perm[static_cast<std::size_t>(i)] = j;
    t.flip[static_cast<std::size_t>(i)] = false;
    return t;
}

inline AxisTransform to_axis_transform(const RotationSpec& r) {
    r.validate();
    AxisTransform t = AxisTransform::identity();
    for (int axis = 0; axis < 3; ++axis) {
        const AxisTransform q = quarter_turn(axis);
        for (int n = 0; n < r.quarter_turns[static_cast<std::size_t>(axis)]; ++n) {
            t = compose(q, t);
        }
    }
    return t;
}

// Lossless voxel permutation of a cubic volume.
inline prep::Volume apply(const AxisTransform& t, const prep::Volume& v) {
    if (!v.cubic()) {
        throw vpx::ShapeError("rotation: volume " + std::to_string(v.dims[0]) + "x" +
                              std::to_string(v.dims[1]) + "x" + std::to_string(v.dims[2]) +
                              " is not cubic");
    }
    const std::int64_t e = v.dims[0];
    prep::Volume out(e, e, e);
    out.meta = v.meta;
    std::array<std::int64_t, 3> q{};
    for (std::int64_t d = 0; d < e; ++d) {
        for (std::int64_t h = 0; h < e; ++h) {
            for (std::int64_t w = 0; w < e; ++w) {
                const std::array<std::int64_t, 3> o{d, h, w};
                for (int k = 0; k < 3; ++k) {
                    q[static_cast<std::size_t>(t.perm[static_cast<std::size_t>(k)])] =
                        t.flip[static_cast<std::size_t>(k)] ? e - 1 - o[static_cast<std::size_t>(k)]
                                                            : o[static_cast<std::size_t>(k)];
                }
                out.at(d, h, w) = v.at(q[0], q[1], q[2]);
            }
        }
    }
    return out;
}

inline prep::Volume apply(const RotationSpec& r, const prep::Volume& v) {
    return apply(to_axis_transform(r), v);
}

enum class Scheme { paper32, unique24 };

inline const char* scheme_name(Scheme s) {
    return s == Scheme::paper32 ? "paper32" : "unique24";
}

inline Scheme scheme_from_name(const std::string& s) {
    if (s == "paper32") return Scheme::paper32;
    if (s == "unique24") return Scheme::unique24;
    throw vpx::ConfigError("unknown rotation label scheme '" + s + "'");
}

// Label table mapping every RotationSpec to a class id (or -1 where the
// scheme leaves a spec unlabeled). Duplicates are pairs of lex indices
// whose images coincide on a distinct-valued probe.
struct LabelScheme {
    Scheme scheme;
    int num_classes = 0;
    std::array<int, 64> class_of_spec{}; // -1 = unlabeled
    std::vector<RotationSpec> representative; // one spec per class id
    std::vector<std::pair<int, int>> duplicates; // (earlier lex, later lex)
};

namespace detail {

inline prep::Volume distinct_probe(std::int64_t edge = 3) {
    prep::Volume probe(edge, edge, edge);
    for (std::size_t i = 0; i < probe.voxels.size(); ++i) {
        probe.voxels[i] = static_cast<float>(i);
    }
    return probe;
}

inline std::string image_key(const prep::Volume& v) {
    return std::string(reinterpret_cast<const char*>(v.voxels.data()),
                       v.voxels.size() * sizeof(float));
}

} // namespace detail

// Brute-force deduplication over all 64 specs against a probe volume whose
// voxel values are pairwise distinct. unique24 assigns one class per
// distinct image (the proper rotation group of the cube, 24 members);
// paper32 takes the first 32 specs in lexicographic order verbatim as
// classes 0..31 and reports the image-duplicate pairs that scheme contains.
inline LabelScheme dedup_classes(Scheme scheme, const prep::Volume* probe_override = nullptr) {
    const prep::Volume probe = probe_override ? *probe_override : detail::distinct_probe();
    LabelScheme table;
    table.scheme = scheme;
    table.class_of_spec.fill(-1);

    std::map<std::string, int> first_lex_of_image;
    std::vector<int> image_group(64); // lex index of the first spec with the same image
    for (int idx = 0; idx < 64; ++idx) {
        const RotationSpec spec = RotationSpec::from_lex_index(idx);
        const std::string key = detail::image_key(apply(spec, probe));
        auto [it, inserted] = first_lex_of_image.emplace(key, idx);
        image_group[static_cast<std::size_t>(idx)] = it->second;
        if (!inserted) {
            table.duplicates.emplace_back(it->second, idx);
        }
    }

    if (scheme == Scheme::unique24) {
        std::map<int, int> class_of_group; // first lex index -> class id
        for (int idx = 0; idx < 64; ++idx) {
            const int group = image_group[static_cast<std::size_t>(idx)];
            auto [it, inserted] =
                class_of_group.emplace(group, static_cast<int>(table.representative.size()));
            if (inserted) {
                table.representative.push_back(RotationSpec::from_lex_index(group));
            }
            table.class_of_spec[static_cast<std::size_t>(idx)] = it->second;
        }
        table.num_classes = static_cast<int>(table.representative.size());
        // Only duplicate pairs inside the labeled range matter for unique24's
        // report; the partition itself already folds them together.
    } else {
        table.num_classes = 32;
        table.representative.reserve(32);
        for (int idx = 0; idx < 32; ++idx) {
            table.class_of_spec[static_cast<std::size_t>(idx)] = idx;
            table.representative.push_back(RotationSpec::from_lex_index(idx));
        }
        std::vector<std::pair<int, int>> in_range;
        for (const auto& [a, b] : table.duplicates) {
            if (a < 32 && b < 32) in_range.push_back({a, b});
        }
        table.duplicates = std::move(in_range);
    }
    return table;
}

inline nlohmann::json label_table_json(const LabelScheme& table) {
    nlohmann::json rows = nlohmann::json::array();
    std::map<int, int> dup_of; // later lex -> earlier lex
    for (const auto& [a, b] : table.duplicates) dup_of[b] = a;
    for (int idx = 0; idx < 64; ++idx) {
        const int cls = table.class_of_spec[static_cast<std::size_t>(idx)];
        if (cls < 0) continue;
        const RotationSpec spec = RotationSpec::from_lex_index(idx);
        nlohmann::json row;
        row["spec"] = spec.quarter_turns;
        row["class"] = cls;
        auto it = dup_of.find(idx);
        if (it != dup_of.end()) {
            row["duplicate_of"] = RotationSpec::from_lex_index(it->second).quarter_turns;
        } else {
            row["duplicate_of"] = nullptr;
        }
        rows.push_back(row);
    }
    return rows;
}

} // namespace vpx::rot
