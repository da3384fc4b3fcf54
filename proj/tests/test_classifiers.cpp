#include <catch2/catch.hpp>

#include <cmath>

#include "volpretext/downstream.hpp"
#include "volpretext/forest.hpp"
#include "volpretext/svm.hpp"

#include "helpers.hpp"

using namespace vpx;
using eval::ForestConfig;
using eval::SvmConfig;

namespace {

// Two well-separated Gaussian blobs in d dimensions.
void make_blobs(int n_per_class, int d, Rng& rng, std::vector<std::vector<double>>& X,
                std::vector<int>& y, double separation = 6.0) {
    X.clear();
    y.clear();
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < n_per_class; ++i) {
            std::vector<double> row(static_cast<std::size_t>(d));
            for (auto& v : row) v = rng.normal() + (c == 1 ? separation : 0.0);
            X.push_back(std::move(row));
            y.push_back(c);
        }
    }
}

// The classic XOR layout: four clusters, class = parity of the quadrant.
void make_xor(int n_per_cluster, Rng& rng, std::vector<std::vector<double>>& X,
              std::vector<int>& y) {
    X.clear();
    y.clear();
    const double centers[4][2] = {{0, 0}, {4, 4}, {0, 4}, {4, 0}};
    for (int q = 0; q < 4; ++q) {
        for (int i = 0; i < n_per_cluster; ++i) {
            X.push_back({centers[q][0] + rng.normal() * 0.3,
                         centers[q][1] + rng.normal() * 0.3});
            y.push_back(q < 2 ? 0 : 1);
        }
    }
}

double train_accuracy(const std::function<int(const std::vector<double>&)>& predict,
                      const std::vector<std::vector<double>>& X, const std::vector<int>& y) {
    int hits = 0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        if (predict(X[i]) == y[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(X.size());
}

} // namespace

TEST_CASE("svm: separable blobs reach training accuracy 1.0", "[classifiers]") {
    Rng rng(90, 0);
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    make_blobs(40, 3, rng, X, y);
    const auto model = eval::train_linear_svm(X, y, {});
    REQUIRE(train_accuracy([&](const auto& x) { return model.predict(x); }, X, y) == 1.0);
}

TEST_CASE("svm: flipping labels negates the decision scores", "[classifiers]") {
    Rng rng(91, 0);
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    make_blobs(25, 4, rng, X, y, 2.0);
    std::vector<int> flipped;
    for (int v : y) flipped.push_back(1 - v);
    const auto a = eval::train_linear_svm(X, y, {});
    const auto b = eval::train_linear_svm(X, flipped, {});
    for (const auto& x : X) {
        REQUIRE(b.decision(x) == Approx(-a.decision(x)).margin(1e-9));
    }
}

TEST_CASE("svm: single-class training data is a degenerate error", "[classifiers]") {
    std::vector<std::vector<double>> X{{1.0}, {2.0}};
    std::vector<int> y{1, 1};
    REQUIRE_THROWS_AS(eval::train_linear_svm(X, y, {}), DataError);
}

TEST_CASE("svm: fixed seed reproduces the exact model", "[classifiers]") {
    Rng rng(92, 0);
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    make_blobs(30, 3, rng, X, y, 1.0);
    const auto a = eval::train_linear_svm(X, y, {});
    const auto b = eval::train_linear_svm(X, y, {});
    REQUIRE(a.w == b.w);
    REQUIRE(a.b == b.b);
}

TEST_CASE("forest: pure replicated data trains to accuracy 1.0", "[classifiers]") {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    for (int i = 0; i < 30; ++i) {
        X.push_back({static_cast<double>(i % 3), static_cast<double>(i % 5)});
        y.push_back(i % 3 == 0 ? 1 : 0);
    }
    ForestConfig cfg;
    cfg.n_trees = 50;
    const auto forest = eval::train_random_forest(X, y, cfg);
    REQUIRE(train_accuracy([&](const auto& x) { return forest.predict(x); }, X, y) == 1.0);
}

TEST_CASE("forest: XOR is learnable by trees but not by the linear SVM", "[classifiers]") {
    Rng rng(93, 0);
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    make_xor(20, rng, X, y);
    ForestConfig cfg;
    cfg.n_trees = 100;
    const auto forest = eval::train_random_forest(X, y, cfg);
    REQUIRE(train_accuracy([&](const auto& x) { return forest.predict(x); }, X, y) == 1.0);
    const auto svm = eval::train_linear_svm(X, y, {});
    REQUIRE(train_accuracy([&](const auto& x) { return svm.predict(x); }, X, y) <= 0.75);
}

TEST_CASE("forest: same seed gives identical votes, different seeds differ", "[classifiers]") {
    Rng rng(94, 0);
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    make_blobs(25, 4, rng, X, y, 1.5);
    ForestConfig cfg;
    cfg.n_trees = 20;
    cfg.seed = 5;
    const auto a = eval::train_random_forest(X, y, cfg);
    const auto b = eval::train_random_forest(X, y, cfg);
    for (const auto& x : X) {
        REQUIRE(a.score(x) == b.score(x));
    }
    // Tree structures match node for node.
    REQUIRE(a.trees.size() == b.trees.size());
    for (std::size_t t = 0; t < a.trees.size(); ++t) {
        REQUIRE(a.trees[t].nodes.size() == b.trees[t].nodes.size());
        for (std::size_t n = 0; n < a.trees[t].nodes.size(); ++n) {
            REQUIRE(a.trees[t].nodes[n].feature == b.trees[t].nodes[n].feature);
            REQUIRE(a.trees[t].nodes[n].threshold == b.trees[t].nodes[n].threshold);
        }
    }
}

TEST_CASE("feature table: CSV round trip preserves rows", "[classifiers]") {
    eval::FeatureTable table;
    table.provenance = "ckpt-1";
    Rng rng(95, 0);
    for (int i = 0; i < 10; ++i) {
        eval::FeatureRow row;
        row.scan_id = "S" + std::to_string(i);
        row.subject_id = "SUB" + std::to_string(i / 2);
        row.label = i % 2;
        for (int f = 0; f < 4; ++f) row.features.push_back(rng.normal());
        table.rows.push_back(std::move(row));
    }
    const std::string dir = test_helpers::temp_dir("csv");
    eval::write_feature_table(table, dir + "/f.csv");
    const auto loaded = eval::read_feature_table(dir + "/f.csv");
    REQUIRE(loaded.rows.size() == table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        REQUIRE(loaded.rows[i].scan_id == table.rows[i].scan_id);
        REQUIRE(loaded.rows[i].subject_id == table.rows[i].subject_id);
        REQUIRE(loaded.rows[i].label == table.rows[i].label);
        for (std::size_t f = 0; f < 4; ++f) {
            REQUIRE(loaded.rows[i].features[f] ==
                    Approx(table.rows[i].features[f]).epsilon(1e-7));
        }
    }
    // CSV emission is deterministic.
    REQUIRE(eval::feature_table_csv(table) == eval::feature_table_csv(table));
}

TEST_CASE("downstream: grouped folds never split a subject", "[classifiers]") {
    Rng rng(96, 0);
    eval::FeatureTable table;
    for (int s = 0; s < 30; ++s) {
        for (int j = 0; j < 2; ++j) {
            eval::FeatureRow row;
            row.scan_id = "S" + std::to_string(s) + "_" + std::to_string(j);
            row.subject_id = "S" + std::to_string(s);
            row.label = s % 2;
            const double shift = s % 2 == 1 ? 3.0 : 0.0;
            for (int f = 0; f < 3; ++f) row.features.push_back(rng.normal() + shift);
            table.rows.push_back(std::move(row));
        }
    }
    eval::DownstreamConfig cfg;
    cfg.k = 5;
    const auto result = eval::evaluate_downstream(table, cfg);
    for (const auto& row : table.rows) {
        REQUIRE(result.plan.assignments.at(row.scan_id) ==
                result.plan.subject_map.at(row.subject_id));
    }
    REQUIRE(result.svc.folds.size() == 5);
    REQUIRE(result.rfc.folds.size() == 5);
    REQUIRE(*result.svc.acc.mean > 0.9); // well-separated blobs
}

TEST_CASE("downstream: constant features yield chance AUC", "[classifiers]") {
    eval::FeatureTable table;
    for (int s = 0; s < 40; ++s) {
        eval::FeatureRow row;
        row.scan_id = "S" + std::to_string(s);
        row.subject_id = row.scan_id;
        row.label = s % 2;
        row.features = {1.0, 2.0};
        table.rows.push_back(std::move(row));
    }
    eval::DownstreamConfig cfg;
    cfg.k = 4;
    const auto result = eval::evaluate_downstream(table, cfg);
    REQUIRE(*result.svc.auc.mean == Approx(0.5).margin(0.05));
    REQUIRE(*result.rfc.auc.mean == Approx(0.5).margin(0.05));
}

TEST_CASE("downstream: standardizer fits on train rows only", "[classifiers]") {
    // Direct instrumentation check on the Standardizer itself.
    eval::FeatureTable table;
    for (int s = 0; s < 12; ++s) {
        eval::FeatureRow row;
        row.scan_id = "S" + std::to_string(s);
        row.subject_id = row.scan_id;
        row.label = s % 2;
        row.features = {static_cast<double>(s)};
        table.rows.push_back(std::move(row));
    }
    const auto plan = cohort::grouped_kfold(
        [&] {
            phantom::Manifest m;
            for (const auto& r : table.rows) {
                phantom::ScanRecord rec;
                rec.subject_id = r.subject_id;
                rec.scan_id = r.scan_id;
                m.push_back(rec);
            }
            return m;
        }(),
        3, 0);
    for (int fold = 0; fold < 3; ++fold) {
        std::vector<const eval::FeatureRow*> train;
        std::set<std::string> test_ids;
        for (const auto& r : table.rows) {
            if (plan.assignments.at(r.scan_id) == fold) {
                test_ids.insert(r.scan_id);
            } else {
                train.push_back(&r);
            }
        }
        eval::Standardizer std_fit;
        std_fit.fit(train);
        for (const auto& id : std_fit.fitted_row_ids) {
            REQUIRE(test_ids.count(id) == 0);
        }
    }
}

TEST_CASE("downstream: single-class tables are rejected", "[classifiers]") {
    eval::FeatureTable table;
    for (int s = 0; s < 12; ++s) {
        eval::FeatureRow row;
        row.scan_id = "S" + std::to_string(s);
        row.subject_id = row.scan_id;
        row.label = 1;
        row.features = {0.0};
        table.rows.push_back(std::move(row));
    }
    REQUIRE_THROWS_AS(eval::evaluate_downstream(table, {}), DataError);
}
