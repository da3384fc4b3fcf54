#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "volpretext/errors.hpp"

namespace vpx::eval {

// Confusion-derived metrics for one fold. AD is the positive class.
// A metric whose denominator class is empty stays unset rather than 0.
struct MetricsRow {
    std::optional<double> acc, sen, spe, auc, j_stat;
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

// Mann-Whitney AUC with midranks for tied scores.
inline std::optional<double> auc_mann_whitney(const std::vector<int>& labels,
                                              const std::vector<double>& scores) {
    const std::size_t n = labels.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = mid;
        i = j + 1;
    }
    double pos_rank_sum = 0.0;
    std::int64_t n_pos = 0, n_neg = 0;
    for (std::size_t t = 0; t < n; ++t) {
        if (labels[t] == 1) {
            pos_rank_sum += rank[t];
            ++n_pos;
        } else {
            ++n_neg;
        }
    }
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    const double u = pos_rank_sum - static_cast<double>(n_pos) *
                                        (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// labels/predictions in {0 (CN), 1 (AD)}; scores are real decision values.
inline MetricsRow compute_metrics(const std::vector<int>& labels,
                                  const std::vector<int>& predictions,
                                  const std::vector<double>& scores) {
    if (labels.size() != predictions.size() || labels.size() != scores.size()) {
        throw vpx::ParamError("compute_metrics: labels/predictions/scores length mismatch (" +
                              std::to_string(labels.size()) + "/" +
                              std::to_string(predictions.size()) + "/" +
                              std::to_string(scores.size()) + ")");
    }
    MetricsRow row;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            if (predictions[i] == 1) ++row.tp; else ++row.fn;
        } else {
            if (predictions[i] == 1) ++row.fp; else ++row.tn;
        }
    }
    const std::int64_t n = row.tp + row.tn + row.fp + row.fn;
    if (n > 0) row.acc = static_cast<double>(row.tp + row.tn) / static_cast<double>(n);
    if (row.tp + row.fn > 0) {
        row.sen = static_cast<double>(row.tp) / static_cast<double>(row.tp + row.fn);
    }
    if (row.tn + row.fp > 0) {
        row.spe = static_cast<double>(row.tn) / static_cast<double>(row.tn + row.fp);
    }
    row.auc = auc_mann_whitney(labels, scores);
    if (row.sen && row.spe) row.j_stat = *row.sen + *row.spe - 1.0;
    return row;
}

// Mean and standard deviation over the folds where the metric is defined.
struct Aggregate {
    std::optional<double> mean, stddev;
    int defined_count = 0;
    int undefined_count = 0;
};

inline Aggregate aggregate_metric(const std::vector<std::optional<double>>& values) {
    Aggregate agg;
    double sum = 0.0;
    for (const auto& v : values) {
        if (v) {
            sum += *v;
            ++agg.defined_count;
        } else {
            ++agg.undefined_count;
        }
    }
    if (agg.defined_count == 0) return agg;
    const double mean = sum / agg.defined_count;
    double sq = 0.0;
    for (const auto& v : values) {
        if (v) sq += (*v - mean) * (*v - mean);
    }
    agg.mean = mean;
    agg.stddev = std::sqrt(sq / agg.defined_count);
    return agg;
}

struct MetricsReport {
    std::string classifier; // "SVC" | "RFC"
    std::string task;       // provenance tag for report tables
    std::vector<MetricsRow> folds;
    Aggregate acc, sen, spe, auc, j_stat;

    void aggregate() {
        auto pick = [&](auto member) {
            std::vector<std::optional<double>> v;
            v.reserve(folds.size());
            for (const auto& f : folds) v.push_back(f.*member);
            return aggregate_metric(v);
        };
        acc = pick(&MetricsRow::acc);
        sen = pick(&MetricsRow::sen);
        spe = pick(&MetricsRow::spe);
        auc = pick(&MetricsRow::auc);
        j_stat = pick(&MetricsRow::j_stat);
    }
};

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& v) {
    if (v) return *v;
    return nullptr;
}

inline nlohmann::json aggregate_json(const Aggregate& a) {
    nlohmann::json j;
    j["mean"] = opt_json(a.mean);
    j["std"] = opt_json(a.stddev);
    j["defined_folds"] = a.defined_count;
    j["undefined_folds"] = a.undefined_count;
    return j;
}

} // namespace detail

inline nlohmann::json metrics_report_json(const MetricsReport& rep) {
    nlohmann::json j;
    j["classifier"] = rep.classifier;
    j["task"] = rep.task;
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : rep.folds) {
        nlohmann::json fj;
        fj["acc"] = detail::opt_json(f.acc);
        fj["sen"] = detail::opt_json(f.sen);
        fj["spe"] = detail::opt_json(f.spe);
        fj["auc"] = detail::opt_json(f.auc);
        fj["j_stat"] = detail::opt_json(f.j_stat);
        fj["tp"] = f.tp;
        fj["tn"] = f.tn;
        fj["fp"] = f.fp;
        fj["fn"] = f.fn;
        folds.push_back(fj);
    }
    j["folds"] = folds;
    j["acc"] = detail::aggregate_json(rep.acc);
    j["sen"] = detail::aggregate_json(rep.sen);
    j["spe"] = detail::aggregate_json(rep.spe);
    j["auc"] = detail::aggregate_json(rep.auc);
    j["j_stat"] = detail::aggregate_json(rep.j_stat);
    return j;
}

// Fixed-width text table: one row per report,
// columns ACC / SEN / SPE / AUC / J_stat as mean +/- std.
inline std::string metrics_text_table(const std::vector<MetricsReport>& reports) {
    auto cell = [](const Aggregate& a) {
        if (!a.mean) return std::string("undef");
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%.3f +/-%.3f", *a.mean, a.stddev.value_or(0.0));
        return std::string(buf);
    };
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-24s %-18s %-18s %-18s %-18s %-18s\n", "Model", "ACC",
                  "SEN", "SPE", "AUC", "J_stat");
    out += line;
    for (const auto& rep : reports) {
        const std::string name = rep.classifier + (rep.task.empty() ? "" : " " + rep.task);
        std::snprintf(line, sizeof(line), "%-24s %-18s %-18s %-18s %-18s %-18s\n", name.c_str(),
                      cell(rep.acc).c_str(), cell(rep.sen).c_str(), cell(rep.spe).c_str(),
                      cell(rep.auc).c_str(), cell(rep.j_stat).c_str());
        out += line;
    }
    return out;
}

} // namespace vpx::eval
