#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "volpretext/phantom.hpp"
#include "volpretext/rng.hpp"

namespace vpx::cohort {

// CDR entry nearest the scan date; an exact tie picks the earlier entry.
inline const phantom::CdrEntry& associate_cdr(const phantom::ScanRecord& scan) {
    if (scan.cdr_history.empty()) {
        throw vpx::DataError("associate_cdr: scan '" + scan.scan_id + "' has no CDR history");
    }
    const phantom::CdrEntry* best = &scan.cdr_history.front();
    std::int64_t best_dist = std::llabs(scan.acquired_day - best->day);
    for (const auto& e : scan.cdr_history) {
        const std::int64_t dist = std::llabs(scan.acquired_day - e.day);
        if (dist < best_dist) {
            best = &e;
            best_dist = dist;
        }
    }
    return *best;
}

struct SubjectDiagnosis {
    phantom::Diagnosis group = phantom::Diagnosis::CN;
    std::vector<std::string> kept_scan_ids;
};

// CDR-based selection: the subject's group is AD when the maximum
// associated CDR score reaches the threshold (0.5 by default, folding the
// very-mild and mild stages into AD); CN requires every associated score to
// be exactly 0. AD subjects keep only the scans associated with the
// subject's maximum score.
inline SubjectDiagnosis assign_diagnosis(const std::vector<phantom::ScanRecord>& subject_scans,
                                         double ad_threshold = 0.5) {
    if (subject_scans.empty()) {
        throw vpx::DataError("assign_diagnosis: no scans for subject");
    }
    std::vector<double> scores;
    scores.reserve(subject_scans.size());
    double max_score = 0.0;
    for (const auto& scan : subject_scans) {
        const double s = associate_cdr(scan).score;
        scores.push_back(s);
        max_score = std::max(max_score, s);
    }
    SubjectDiagnosis out;
    out.group = max_score >= ad_threshold ? phantom::Diagnosis::AD : phantom::Diagnosis::CN;
    for (std::size_t i = 0; i < subject_scans.size(); ++i) {
        if (out.group == phantom::Diagnosis::CN || scores[i] == max_score) {
            out.kept_scan_ids.push_back(subject_scans[i].scan_id);
        }
    }
    return out;
}

// Applies assign_diagnosis across a manifest, keeping manifest order.
struct Selection {
    phantom::Manifest kept;
    std::map<std::string, phantom::Diagnosis> subject_group;
};

inline Selection select_by_cdr(const phantom::Manifest& manifest, double ad_threshold = 0.5) {
    std::map<std::string, std::vector<phantom::ScanRecord>> by_subject;
    std::vector<std::string> order;
    for (const auto& r : manifest) {
        if (!by_subject.count(r.subject_id)) order.push_back(r.subject_id);
        by_subject[r.subject_id].push_back(r);
    }
    Selection sel;
    std::set<std::string> kept_ids;
    for (const auto& sid : order) {
        const auto diag = assign_diagnosis(by_subject[sid], ad_threshold);
        sel.subject_group[sid] = diag.group;
        kept_ids.insert(diag.kept_scan_ids.begin(), diag.kept_scan_ids.end());
    }
    for (const auto& r : manifest) {
        if (kept_ids.count(r.scan_id)) sel.kept.push_back(r);
    }
    return sel;
}

// Subject-grouped K-fold assignment. Subjects are shuffled by the seeded
// generator and dealt round-robin, so fold sizes differ by at most one
// subject and no subject ever crosses folds.
struct SplitPlan {
    int k = 0;
    std::map<std::string, int> assignments; // scan_id -> fold
    std::map<std::string, int> subject_map; // subject_id -> fold
    std::uint64_t seed = 0;
    std::int64_t created_marker = 0; // max acquired_day seen at plan creation
};

inline SplitPlan grouped_kfold(const phantom::Manifest& manifest, int k, std::uint64_t seed) {
    if (k < 2) throw vpx::ParamError("grouped_kfold: k must be >= 2");
    std::vector<std::string> subjects;
    std::set<std::string> seen;
    std::int64_t marker = 0;
    for (const auto& r : manifest) {
        if (seen.insert(r.subject_id).second) subjects.push_back(r.subject_id);
        marker = std::max(marker, r.acquired_day);
    }
    if (static_cast<int>(subjects.size()) < k) {
        throw vpx::ParamError("grouped_kfold: " + std::to_string(subjects.size()) +
                              " subjects < " + std::to_string(k) + " folds");
    }
    Rng rng(seed, stream::kFolds);
    rng.shuffle(subjects.begin(), subjects.end());
    SplitPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.created_marker = marker;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        plan.subject_map[subjects[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    }
    for (const auto& r : manifest) {
        plan.assignments[r.scan_id] = plan.subject_map.at(r.subject_id);
    }
    return plan;
}

inline nlohmann::json split_plan_json(const SplitPlan& p) {
    nlohmann::json j;
    j["k"] = p.k;
    j["seed"] = p.seed;
    j["created_marker"] = p.created_marker;
    j["assignments"] = p.assignments;
    j["subject_map"] = p.subject_map;
    return j;
}

inline SplitPlan split_plan_from_json(const nlohmann::json& j) {
    SplitPlan p;
    p.k = j.at("k").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.created_marker = j.at("created_marker").get<std::int64_t>();
    p.assignments = j.at("assignments").get<std::map<std::string, int>>();
    p.subject_map = j.at("subject_map").get<std::map<std::string, int>>();
    return p;
}

// Leakage taxonomy:
//   A - a subject's scans occupy more than one fold (wrong data split);
//   B - an augmented scan and its parent land in different folds, or an
//       augmented scan already existed when the plan was created
//       (late split);
//   C - pretraining subjects overlap the evaluation subjects
//       (biased transfer learning).
struct Violation {
    char type = 'A';
    std::vector<std::string> ids;
    std::string detail;
};

struct LeakageReport {
    std::vector<Violation> violations;

    bool clean() const { return violations.empty(); }
    bool has_type(char t) const {
        for (const auto& v : violations) {
            if (v.type == t) return true;
        }
        return false;
    }
};

inline nlohmann::json leakage_report_json(const LeakageReport& rep) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : rep.violations) {
        nlohmann::json j;
        j["type"] = std::string(1, v.type);
        j["ids"] = v.ids;
        j["detail"] = v.detail;
        arr.push_back(j);
    }
    nlohmann::json out;
    out["violations"] = arr;
    out["clean"] = rep.clean();
    return out;
}

inline LeakageReport audit_leakage(const phantom::Manifest& manifest, const SplitPlan& plan,
                                   const std::set<std::string>& pretrain_subjects) {
    std::map<std::string, const phantom::ScanRecord*> by_scan;
    for (const auto& r : manifest) by_scan[r.scan_id] = &r;

    LeakageReport rep;

    // Type A: subject scans spread over several folds.
    std::map<std::string, std::set<int>> subject_folds;
    for (const auto& [scan_id, fold] : plan.assignments) {
        auto it = by_scan.find(scan_id);
        if (it == by_scan.end()) {
            throw vpx::DataError("audit_leakage: plan scan '" + scan_id +
                                 "' missing from manifest");
        }
        subject_folds[it->second->subject_id].insert(fold);
    }
    for (const auto& [subject, folds] : subject_folds) {
        if (folds.size() > 1) {
            Violation v;
            v.type = 'A';
            v.ids.push_back(subject);
            std::string fold_list;
            for (int f : folds) fold_list += (fold_list.empty() ? "" : ",") + std::to_string(f);
            v.detail = "subject '" + subject + "' has scans in folds {" + fold_list + "}";
            rep.violations.push_back(std::move(v));
        }
    }

    // Type B: augmentation-related placement.
    for (const auto& r : manifest) {
        if (r.parent_scan_id.empty()) continue;
        const auto self_it = plan.assignments.find(r.scan_id);
        const auto parent_it = plan.assignments.find(r.parent_scan_id);
        if (self_it != plan.assignments.end() && parent_it != plan.assignments.end() &&
            self_it->second != parent_it->second) {
            Violation v;
            v.type = 'B';
            v.ids = {r.scan_id, r.parent_scan_id};
            v.detail = "augmented scan '" + r.scan_id + "' (fold " +
                       std::to_string(self_it->second) + ") separated from parent '" +
                       r.parent_scan_id + "' (fold " + std::to_string(parent_it->second) + ")";
            rep.violations.push_back(std::move(v));
        }
        if (r.acquired_day <= plan.created_marker) {
            Violation v;
            v.type = 'B';
            v.ids = {r.scan_id};
            v.detail = "augmented scan '" + r.scan_id + "' (day " +
                       std::to_string(r.acquired_day) + ") predates the split marker " +
                       std::to_string(plan.created_marker);
            rep.violations.push_back(std::move(v));
        }
    }

    // Type C: pretraining subjects reappearing downstream.
    std::vector<std::string> overlap;
    for (const auto& [subject, folds] : subject_folds) {
        (void)folds;
        if (pretrain_subjects.count(subject)) overlap.push_back(subject);
    }
    if (!overlap.empty()) {
        Violation v;
        v.type = 'C';
        v.ids = overlap;
        v.detail = "pretraining and evaluation share " + std::to_string(overlap.size()) +
                   " subject(s)";
        rep.violations.push_back(std::move(v));
    }

    return rep;
}

} // namespace vpx::cohort
