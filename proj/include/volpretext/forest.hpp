#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "volpretext/errors.hpp"
#include "volpretext/rng.hpp"

namespace vpx::eval {

// Bagged CART trees: gini impurity, per-split feature subsample of
// ceil(sqrt(d)), bootstrap per tree, grown to purity or below two samples.
// Each tree owns a dedicated rng stream, so the forest is identical whether
// trees are built serially or in parallel.
struct ForestConfig {
    int n_trees = 100;
    int min_samples_split = 2;
    int max_features = 0; // 0 -> ceil(sqrt(d))
    std::uint64_t seed = 0;
};

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    int vote = 0; // leaf majority, positive wins ties
};

struct Tree {
    std::vector<TreeNode> nodes;

    int predict(const std::vector<double>& x) const {
        int at = 0;
        while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
            const auto& nd = nodes[static_cast<std::size_t>(at)];
            at = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
        }
        return nodes[static_cast<std::size_t>(at)].vote;
    }
};

struct RandomForest {
    std::vector<Tree> trees;

    // Positive-vote fraction in [0, 1].
    double score(const std::vector<double>& x) const {
        int pos = 0;
        for (const auto& t : trees) pos += t.predict(x);
        return static_cast<double>(pos) / static_cast<double>(trees.size());
    }

    int predict(const std::vector<double>& x) const { return score(x) > 0.5 ? 1 : 0; }
};

namespace detail {

struct TreeBuilder {
    const std::vector<std::vector<double>>& X;
    const std::vector<int>& y;
    int max_features;
    int min_samples_split;
    Rng& rng;
    Tree& tree;

    static double gini(std::int64_t pos, std::int64_t total) {
        if (total == 0) return 0.0;
        const double p = static_cast<double>(pos) / static_cast<double>(total);
        return 2.0 * p * (1.0 - p);
    }

    int build(std::vector<std::size_t> rows) {
        std::int64_t pos = 0;
        for (auto r : rows) pos += y[r];
        const std::int64_t total = static_cast<std::int64_t>(rows.size());
        const bool pure = pos == 0 || pos == total;
        if (pure || total < min_samples_split) {
            return leaf(pos, total);
        }

        // Feature subsample: partial Fisher-Yates over the index list.
        const int d = static_cast<int>(X[0].size());
        std::vector<int> feats(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i) feats[static_cast<std::size_t>(i)] = i;
        const int tries = std::min(max_features, d);
        for (int i = 0; i < tries; ++i) {
            const auto j =
                i + static_cast<int>(rng.bounded(static_cast<std::uint64_t>(d - i)));
            std::swap(feats[static_cast<std::size_t>(i)], feats[static_cast<std::size_t>(j)]);
        }

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_impurity = gini(pos, total);
        std::vector<std::pair<double, int>> vals(rows.size());
        for (int fi = 0; fi < tries; ++fi) {
            const int f = feats[static_cast<std::size_t>(fi)];
            for (std::size_t i = 0; i < rows.size(); ++i) {
                vals[i] = {X[rows[i]][static_cast<std::size_t>(f)], y[rows[i]]};
            }
            std::sort(vals.begin(), vals.end());
            std::int64_t left_pos = 0;
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                left_pos += vals[i].second;
                if (vals[i].first == vals[i + 1].first) continue;
                const auto left_n = static_cast<std::int64_t>(i + 1);
                const auto right_n = total - left_n;
                const double impurity =
                    (static_cast<double>(left_n) * gini(left_pos, left_n) +
                     static_cast<double>(right_n) * gini(pos - left_pos, right_n)) /
                    static_cast<double>(total);
                if (impurity < best_impurity - 1e-12) {
                    best_impurity = impurity;
                    best_feature = f;
                    best_threshold = (vals[i].first + vals[i + 1].first) / 2.0;
                }
            }
        }
        if (best_feature < 0) {
            return leaf(pos, total);
        }

        std::vector<std::size_t> left_rows, right_rows;
        for (auto r : rows) {
            if (X[r][static_cast<std::size_t>(best_feature)] <= best_threshold) {
                left_rows.push_back(r);
            } else {
                right_rows.push_back(r);
            }
        }
        rows.clear();
        rows.shrink_to_fit();
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({best_feature, best_threshold, -1, -1, 0});
        const int left_id = build(std::move(left_rows));
        const int right_id = build(std::move(right_rows));
        tree.nodes[static_cast<std::size_t>(id)].left = left_id;
        tree.nodes[static_cast<std::size_t>(id)].right = right_id;
        return id;
    }

    int leaf(std::int64_t pos, std::int64_t total) {
        const int id = static_cast<int>(tree.nodes.size());
        TreeNode nd;
        nd.feature = -1;
        nd.vote = 2 * pos >= total ? 1 : 0;
        tree.nodes.push_back(nd);
        return id;
    }
};

} // namespace detail

inline RandomForest train_random_forest(const std::vector<std::vector<double>>& features,
                                        const std::vector<int>& labels,
                                        const ForestConfig& cfg = {}) {
    const std::size_t n = features.size();
    if (n == 0 || labels.size() != n) {
        throw vpx::ParamError("forest: features/labels length mismatch");
    }
    bool has_pos = false, has_neg = false;
    for (int y : labels) {
        (y == 1 ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
        throw vpx::DataError("forest: degenerate training data, a single class present");
    }
    const std::size_t d = features[0].size();
    for (const auto& row : features) {
        if (row.size() != d) throw vpx::ParamError("forest: ragged feature rows");
    }
    if (cfg.n_trees < 1) throw vpx::ParamError("forest: n_trees must be >= 1");

    const int max_features =
        cfg.max_features > 0
            ? cfg.max_features
            : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));

    RandomForest forest;
    forest.trees.resize(static_cast<std::size_t>(cfg.n_trees));
    for (int t = 0; t < cfg.n_trees; ++t) {
        Rng rng(cfg.seed, stream::kTreeBase + static_cast<std::uint64_t>(t));
        std::vector<std::size_t> rows(n);
        for (auto& r : rows) r = static_cast<std::size_t>(rng.bounded(n));
        detail::TreeBuilder builder{features, labels, max_features, cfg.min_samples_split, rng,
                                    forest.trees[static_cast<std::size_t>(t)]};
        builder.build(std::move(rows));
    }
    return forest;
}

} // namespace vpx::eval
