#include <catch2/catch.hpp>

#include <algorithm>
#include <set>

#include "volpretext/rotation.hpp"

#include "helpers.hpp"

using namespace vpx;
using rot::AxisTransform;
using rot::RotationSpec;

namespace {

std::vector<AxisTransform> proper_rotations() {
    std::set<AxisTransform> seen;
    std::vector<AxisTransform> out;
    for (int idx = 0; idx < 64; ++idx) {
        const auto t = rot::to_axis_transform(RotationSpec::from_lex_index(idx));
        if (seen.insert(t).second) out.push_back(t);
    }
    return out;
}

} // namespace

TEST_CASE("rotation: (0,0,0) is the identity transform", "[rotation]") {
    const auto t = rot::to_axis_transform(RotationSpec{});
    REQUIRE(t == AxisTransform::identity());
    REQUIRE(t.determinant() == 1);
}

TEST_CASE("rotation: (2,0,0) equals (1,0,0) squared", "[rotation]") {
    const auto once = rot::to_axis_transform(RotationSpec{{1, 0, 0}});
    const auto twice = rot::to_axis_transform(RotationSpec{{2, 0, 0}});
    REQUIRE(rot::compose(once, once) == twice);
}

TEST_CASE("rotation: all 64 specs map into the 24 proper rotations", "[rotation]") {
    std::set<AxisTransform> images;
    for (int idx = 0; idx < 64; ++idx) {
        const auto t = rot::to_axis_transform(RotationSpec::from_lex_index(idx));
        REQUIRE(t.determinant() == 1);
        images.insert(t);
    }
    REQUIRE(images.size() == 24);
}

TEST_CASE("rotation: invalid spec components are rejected", "[rotation]") {
    REQUIRE_THROWS_AS(rot::to_axis_transform(RotationSpec{{4, 0, 0}}), ParamError);
    REQUIRE_THROWS_AS(rot::to_axis_transform(RotationSpec{{0, -1, 0}}), ParamError);
}

TEST_CASE("rotation: closure, associativity and inverses hold exhaustively", "[rotation]") {
    const auto group = proper_rotations();
    REQUIRE(group.size() == 24);
    std::set<AxisTransform> members(group.begin(), group.end());
    for (const auto& a : group) {
        REQUIRE(members.count(rot::inverse(a)) == 1);
        REQUIRE(rot::compose(rot::inverse(a), a) == AxisTransform::identity());
        REQUIRE(rot::compose(a, rot::inverse(a)) == AxisTransform::identity());
        for (const auto& b : group) {
            REQUIRE(members.count(rot::compose(a, b)) == 1);
        }
    }
    // Associativity on a sample of triples (pairs already cover closure).
    for (std::size_t i = 0; i < group.size(); i += 5) {
        for (std::size_t j = 0; j < group.size(); j += 7) {
            for (std::size_t k = 0; k < group.size(); k += 11) {
                const auto left = rot::compose(rot::compose(group[i], group[j]), group[k]);
                const auto right = rot::compose(group[i], rot::compose(group[j], group[k]));
                REQUIRE(left == right);
            }
        }
    }
}

TEST_CASE("rotation: compose agrees with sequential application", "[rotation]") {
    Rng rng(50, 0);
    const auto v = test_helpers::random_volume(4, 4, 4, rng);
    const auto group = proper_rotations();
    for (std::size_t i = 0; i < group.size(); i += 3) {
        for (std::size_t j = 0; j < group.size(); j += 4) {
            const auto chained = rot::apply(group[j], rot::apply(group[i], v));
            const auto fused = rot::apply(rot::compose(group[j], group[i]), v);
            REQUIRE(chained.voxels == fused.voxels);
        }
    }
}

TEST_CASE("rotation: apply is lossless and inverse-exact on every transform", "[rotation]") {
    Rng rng(51, 0);
    const auto v = test_helpers::random_volume(5, 5, 5, rng);
    std::vector<float> sorted_ref = v.voxels;
    std::sort(sorted_ref.begin(), sorted_ref.end());

    for (int idx = 0; idx < 64; ++idx) {
        const auto spec = RotationSpec::from_lex_index(idx);
        const auto rotated = rot::apply(spec, v);
        std::vector<float> sorted = rotated.voxels;
        std::sort(sorted.begin(), sorted.end());
        REQUIRE(sorted == sorted_ref); // voxel multiset preserved

        const auto t = rot::to_axis_transform(spec);
        const auto back = rot::apply(rot::inverse(t), rotated);
        REQUIRE(back.voxels == v.voxels); // bit-exact round trip
    }
}

TEST_CASE("rotation: identity spec leaves any volume untouched", "[rotation]") {
    Rng rng(52, 0);
    const auto v = test_helpers::random_volume(6, 6, 6, rng);
    REQUIRE(rot::apply(RotationSpec{}, v).voxels == v.voxels);
}

TEST_CASE("rotation: non-cubic volumes are rejected", "[rotation]") {
    prep::Volume v(4, 4, 5);
    REQUIRE_THROWS_AS(rot::apply(RotationSpec{{0, 0, 1}}, v), ShapeError);
}

TEST_CASE("rotation: unique24 finds exactly 24 distinct images", "[rotation]") {
    const auto table = rot::dedup_classes(rot::Scheme::unique24);
    REQUIRE(table.num_classes == 24);
    REQUIRE(table.representative.size() == 24);
    std::set<int> used;
    for (int idx = 0; idx < 64; ++idx) {
        const int cls = table.class_of_spec[static_cast<std::size_t>(idx)];
        REQUIRE(cls >= 0);
        REQUIRE(cls < 24);
        used.insert(cls);
    }
    REQUIRE(used.size() == 24); // every class hit at least once
    // Representatives reproduce their own class.
    for (int cls = 0; cls < 24; ++cls) {
        const auto& spec = table.representative[static_cast<std::size_t>(cls)];
        REQUIRE(table.class_of_spec[static_cast<std::size_t>(spec.lex_index())] == cls);
    }
}

TEST_CASE("rotation: unique24 labeling is probe independent", "[rotation]") {
    const auto base = rot::dedup_classes(rot::Scheme::unique24);
    Rng rng(53, 0);
    for (int trial = 0; trial < 3; ++trial) {
        // Random probe with pairwise distinct voxel values.
        prep::Volume probe(4, 4, 4);
        for (std::size_t i = 0; i < probe.voxels.size(); ++i) {
            probe.voxels[i] = static_cast<float>(i) + static_cast<float>(rng.next_double()) * 0.5f;
        }
        const auto other = rot::dedup_classes(rot::Scheme::unique24, &probe);
        REQUIRE(other.num_classes == 24);
        for (int idx = 0; idx < 64; ++idx) {
            REQUIRE(other.class_of_spec[static_cast<std::size_t>(idx)] ==
                    base.class_of_spec[static_cast<std::size_t>(idx)]);
        }
    }
}

TEST_CASE("rotation: paper32 takes the first 32 specs verbatim", "[rotation]") {
    const auto table = rot::dedup_classes(rot::Scheme::paper32);
    REQUIRE(table.num_classes == 32);
    REQUIRE(table.class_of_spec[0] == 0); // (0,0,0) -> class 0
    REQUIRE(table.class_of_spec[1] == 1); // (0,0,1) -> class 1
    REQUIRE(table.representative[0].quarter_turns == std::array<int, 3>{0, 0, 0});
    REQUIRE(table.representative[1].quarter_turns == std::array<int, 3>{0, 0, 1});
    for (int idx = 0; idx < 32; ++idx) {
        REQUIRE(table.class_of_spec[static_cast<std::size_t>(idx)] == idx);
    }
    for (int idx = 32; idx < 64; ++idx) {
        REQUIRE(table.class_of_spec[static_cast<std::size_t>(idx)] == -1); // unlabeled remainder
    }
    // 32 classes over 24 distinct images: the duplicate report cannot be empty.
    REQUIRE_FALSE(table.duplicates.empty());
    for (const auto& [a, b] : table.duplicates) {
        REQUIRE(a < b);
        REQUIRE(b < 32);
    }
}

TEST_CASE("rotation: label table serializes with duplicate links", "[rotation]") {
    const auto table = rot::dedup_classes(rot::Scheme::paper32);
    const auto j = rot::label_table_json(table);
    REQUIRE(j.size() == 32);
    REQUIRE(j[0]["class"] == 0);
    REQUIRE(j[0]["spec"] == nlohmann::json::array({0, 0, 0}));
    bool any_dup = false;
    for (const auto& row : j) {
        if (!row["duplicate_of"].is_null()) any_dup = true;
    }
    REQUIRE(any_dup);
}
