#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "volpretext/cohort.hpp"
#include "volpretext/forest.hpp"
#include "volpretext/metrics.hpp"
#include "volpretext/svm.hpp"

namespace vpx::eval {

struct FeatureRow {
    std::string scan_id;
    std::string subject_id;
    int label = 0; // 1 = AD
    std::vector<double> features;
};

struct FeatureTable {
    std::vector<FeatureRow> rows;
    std::string provenance; // checkpoint id

    int dim() const { return rows.empty() ? 0 : static_cast<int>(rows[0].features.size()); }

    void validate() const {
        std::set<std::string> ids;
        for (const auto& r : rows) {
            if (static_cast<int>(r.features.size()) != dim()) {
                throw vpx::DataError("feature table: ragged row '" + r.scan_id + "'");
            }
            if (!ids.insert(r.scan_id).second) {
                throw vpx::DataError("feature table: duplicate scan_id '" + r.scan_id + "'");
            }
        }
    }
};

// CSV with header scan_id,subject_id,label,f0..f{d-1}; label CN/AD.
inline std::string feature_table_csv(const FeatureTable& table) {
    std::string out = "scan_id,subject_id,label";
    for (int i = 0; i < table.dim(); ++i) out += ",f" + std::to_string(i);
    out += "\n";
    char buf[40];
    for (const auto& r : table.rows) {
        out += r.scan_id + "," + r.subject_id + "," + (r.label == 1 ? "AD" : "CN");
        for (double f : r.features) {
            std::snprintf(buf, sizeof(buf), ",%.9g", f);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

inline void write_feature_table(const FeatureTable& table, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw vpx::DataError("feature table: cannot open '" + path + "' for writing");
    f << feature_table_csv(table);
    if (!f) throw vpx::DataError("feature table: short write to '" + path + "'");
}

inline FeatureTable read_feature_table(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw vpx::DataError("feature table: cannot open '" + path + "'");
    FeatureTable table;
    std::string line;
    if (!std::getline(f, line)) throw vpx::DataError("feature table: empty file '" + path + "'");
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        FeatureRow row;
        if (!std::getline(ss, row.scan_id, ',') || !std::getline(ss, row.subject_id, ',') ||
            !std::getline(ss, cell, ',')) {
            throw vpx::DataError("feature table: malformed line " + std::to_string(lineno));
        }
        if (cell == "AD") {
            row.label = 1;
        } else if (cell == "CN") {
            row.label = 0;
        } else {
            throw vpx::DataError("feature table: line " + std::to_string(lineno) +
                                 ": unknown label '" + cell + "'");
        }
        while (std::getline(ss, cell, ',')) {
            row.features.push_back(std::strtod(cell.c_str(), nullptr));
        }
        table.rows.push_back(std::move(row));
    }
    table.validate();
    return table;
}

// Feature standardizer fitted on training rows only; it records which rows
// it saw so leakage tests can assert the fit never touched a test row.
struct Standardizer {
    std::vector<double> mean, stddev;
    std::vector<std::string> fitted_row_ids;

    void fit(const std::vector<const FeatureRow*>& rows) {
        if (rows.empty()) throw vpx::DataError("standardizer: no rows to fit");
        const std::size_t d = rows[0]->features.size();
        mean.assign(d, 0.0);
        stddev.assign(d, 0.0);
        fitted_row_ids.clear();
        for (const auto* r : rows) {
            fitted_row_ids.push_back(r->scan_id);
            for (std::size_t i = 0; i < d; ++i) mean[i] += r->features[i];
        }
        for (auto& m : mean) m /= static_cast<double>(rows.size());
        for (const auto* r : rows) {
            for (std::size_t i = 0; i < d; ++i) {
                const double dlt = r->features[i] - mean[i];
                stddev[i] += dlt * dlt;
            }
        }
        for (auto& s : stddev) {
            s = std::sqrt(s / static_cast<double>(rows.size()));
            if (s == 0.0) s = 1.0;
        }
    }

    std::vector<double> transform(const std::vector<double>& x) const {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / stddev[i];
        return out;
    }
};

struct DownstreamConfig {
    int k = 10;
    std::uint64_t seed = 0;
    SvmConfig svm;
    ForestConfig forest;
    std::string task_tag;
};

struct DownstreamResult {
    MetricsReport svc;
    MetricsReport rfc;
    cohort::SplitPlan plan;
};

// Grouped K-fold downstream evaluation: per fold, fit SVC (on standardized
// features, train-fold statistics only) and RFC (raw features) on the train
// side, score the held-out fold, and aggregate the metric rows.
inline DownstreamResult evaluate_downstream(const FeatureTable& table,
                                            const DownstreamConfig& cfg = {}) {
    table.validate();
    if (table.rows.empty()) throw vpx::DataError("evaluate_downstream: empty feature table");
    bool has_pos = false, has_neg = false;
    phantom::Manifest mini;
    for (const auto& r : table.rows) {
        (r.label == 1 ? has_pos : has_neg) = true;
        phantom::ScanRecord rec;
        rec.subject_id = r.subject_id;
        rec.scan_id = r.scan_id;
        rec.diagnosis = r.label == 1 ? phantom::Diagnosis::AD : phantom::Diagnosis::CN;
        rec.cohort = "eval";
        mini.push_back(std::move(rec));
    }
    if (!has_pos || !has_neg) {
        throw vpx::DataError("evaluate_downstream: both classes must be present");
    }

    DownstreamResult result;
    result.plan = cohort::grouped_kfold(mini, cfg.k, cfg.seed);
    result.svc.classifier = "SVC";
    result.rfc.classifier = "RFC";
    result.svc.task = cfg.task_tag;
    result.rfc.task = cfg.task_tag;

    for (int fold = 0; fold < cfg.k; ++fold) {
        std::vector<const FeatureRow*> train_rows, test_rows;
        for (const auto& r : table.rows) {
            if (result.plan.assignments.at(r.scan_id) == fold) {
                test_rows.push_back(&r);
            } else {
                train_rows.push_back(&r);
            }
        }
        if (test_rows.empty()) continue;

        std::vector<int> train_labels, test_labels;
        for (const auto* r : train_rows) train_labels.push_back(r->label);
        for (const auto* r : test_rows) test_labels.push_back(r->label);

        // SVC path: standardized features, train-fold statistics only.
        Standardizer std_fit;
        std_fit.fit(train_rows);
        std::vector<std::vector<double>> train_std, test_std;
        for (const auto* r : train_rows) train_std.push_back(std_fit.transform(r->features));
        for (const auto* r : test_rows) test_std.push_back(std_fit.transform(r->features));
        SvmConfig svm_cfg = cfg.svm;
        svm_cfg.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(fold));
        const LinearSvm svm = train_linear_svm(train_std, train_labels, svm_cfg);
        std::vector<int> svm_preds;
        std::vector<double> svm_scores;
        for (const auto& x : test_std) {
            svm_preds.push_back(svm.predict(x));
            svm_scores.push_back(svm.decision(x));
        }
        result.svc.folds.push_back(compute_metrics(test_labels, svm_preds, svm_scores));

        // RFC path: raw features.
        std::vector<std::vector<double>> train_raw, test_raw;
        for (const auto* r : train_rows) train_raw.push_back(r->features);
        for (const auto* r : test_rows) test_raw.push_back(r->features);
        ForestConfig rf_cfg = cfg.forest;
        rf_cfg.seed = mix_seed(cfg.seed ^ 0x5eedf00dull, static_cast<std::uint64_t>(fold));
        const RandomForest forest = train_random_forest(train_raw, train_labels, rf_cfg);
        std::vector<int> rf_preds;
        std::vector<double> rf_scores;
        for (const auto& x : test_raw) {
            rf_preds.push_back(forest.predict(x));
            rf_scores.push_back(forest.score(x));
        }
        result.rfc.folds.push_back(compute_metrics(test_labels, rf_preds, rf_scores));
    }

    result.svc.aggregate();
    result.rfc.aggregate();
    return result;
}

} // namespace vpx::eval
