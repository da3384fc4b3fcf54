#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "volpretext/rng.hpp"
#include "volpretext/volume.hpp"

namespace vpx::phantom {

enum class Diagnosis { CN, AD };

inline const char* diagnosis_name(Diagnosis d) { return d == Diagnosis::CN ? "CN" : "AD"; }

inline Diagnosis diagnosis_from_name(const std::string& s) {
    if (s == "CN") return Diagnosis::CN;
    if (s == "AD") return Diagnosis::AD;
    throw vpx::DataError("unknown diagnosis '" + s + "'");
}

// Parametric stand-in for a clinical scan: concentric skull / cortex /
// white-matter / ventricle geometry conditioned on age and atrophy.
struct PhantomSpec {
    int grid = 32;                // cube edge, voxels
    double age = 60.0;            // years, [44, 82]
    Diagnosis diagnosis = Diagnosis::CN;
    double atrophy_severity = 0.0; // [0, 1], 0 iff CN
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (grid < 16) throw vpx::ParamError("phantom: grid " + std::to_string(grid) + " < 16");
        if (age < 44.0 || age > 82.0) {
            throw vpx::ParamError("phantom: age " + std::to_string(age) + " outside [44,82]");
        }
        if (atrophy_severity < 0.0 || atrophy_severity > 1.0) {
            throw vpx::ParamError("phantom: atrophy_severity outside [0,1]");
        }
        if ((diagnosis == Diagnosis::CN) != (atrophy_severity == 0.0)) {
            throw vpx::ParamError("phantom: atrophy_severity must be 0 iff diagnosis is CN");
        }
        if (noise_sigma < 0.0) throw vpx::ParamError("phantom: noise_sigma must be >= 0");
    }
};

struct CdrEntry {
    std::int64_t day = 0;
    double score = 0.0; // {0, 0.5, 1, 2, 3}
};

struct ScanRecord {
    std::string subject_id;
    std::string scan_id;
    std::int64_t acquired_day = 0;
    double age = 60.0;
    Diagnosis diagnosis = Diagnosis::CN;
    std::vector<CdrEntry> cdr_history; // days strictly increasing
    std::string parent_scan_id;        // set for augmented/derived scans
    std::string cohort;                // "pretrain" | "eval"
};

using Manifest = std::vector<ScanRecord>;

// Intensity levels of the concentric geometry.
namespace level {
constexpr float kBackground = 0.0f;
constexpr float kSkull = 0.9f;
constexpr float kCortex = 0.6f;
constexpr float kWhiteMatter = 0.4f;
constexpr float kVentricle = 0.1f;
} // namespace level

namespace detail {

// Fixed oblique orientation of the ventricle ellipsoid. The tilt removes
// every axis-aligned symmetry from the volume, so each of the 24 proper
// rotations produces a geometrically distinct image.
inline std::array<std::array<double, 3>, 3> ventricle_rotation() {
    const double angle = 0.45;
    double ax = 1.0, ay = 0.6, az = 0.25;
    const double norm = std::sqrt(ax * ax + ay * ay + az * az);
    ax /= norm;
    ay /= norm;
    az /= norm;
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    return {{{t * ax * ax + c, t * ax * ay - s * az, t * ax * az + s * ay},
             {t * ax * ay + s * az, t * ay * ay + c, t * ay * az - s * ax},
             {t * ax * az - s * ay, t * ay * az + s * ax, t * az * az + c}}};
}

} // namespace detail

// Deterministic synthetic volume. Identical specs produce bit-identical
// voxel buffers.
inline prep::Volume generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const double g = static_cast<double>(spec.grid);
    const double age_frac = (spec.age - 44.0) / 38.0;

    // Brain outline: centered axis-aligned ellipsoid; skull is a thin shell
    // around it. t0 and r0 are 12% and 15% of the grid edge.
    const std::array<double, 3> brain_semi{0.44 * g, 0.40 * g, 0.37 * g};
    const double skull_rel = 0.06;
    const double t0 = 0.12 * g;
    const double thickness = t0 * (1.0 - 0.3 * age_frac - 0.4 * spec.atrophy_severity);
    const double mean_semi = (brain_semi[0] + brain_semi[1] + brain_semi[2]) / 3.0;
    const double cortex_rel = thickness / mean_semi;

    const double r0 = 0.15 * g;
    const double vent_r = r0 * (1.0 + 0.3 * age_frac + 0.6 * spec.atrophy_severity);
    const std::array<double, 3> vent_semi{vent_r * 0.85, vent_r * 0.70, vent_r * 0.55};
    const auto rot = detail::ventricle_rotation();

    const double center = (g - 1.0) / 2.0;
    prep::Volume out(spec.grid, spec.grid, spec.grid);
    std::size_t idx = 0;
    for (std::int64_t d = 0; d < spec.grid; ++d) {
        for (std::int64_t h = 0; h < spec.grid; ++h) {
            for (std::int64_t w = 0; w < spec.grid; ++w, ++idx) {
                const double p0 = static_cast<double>(d) - center;
                const double p1 = static_cast<double>(h) - center;
                const double p2 = static_cast<double>(w) - center;
                const double rho = std::sqrt((p0 / brain_semi[0]) * (p0 / brain_semi[0]) +
                                             (p1 / brain_semi[1]) * (p1 / brain_semi[1]) +
                                             (p2 / brain_semi[2]) * (p2 / brain_semi[2]));
                float value = level::kBackground;
                if (rho <= 1.0) {
                    const double q0 = rot[0][0] * p0 + rot[0][1] * p1 + rot[0][2] * p2;
                    const double q1 = rot[1][0] * p0 + rot[1][1] * p1 + rot[1][2] * p2;
                    const double q2 = rot[2][0] * p0 + rot[2][1] * p1 + rot[2][2] * p2;
                    const double rho_v = std::sqrt((q0 / vent_semi[0]) * (q0 / vent_semi[0]) +
                                                   (q1 / vent_semi[1]) * (q1 / vent_semi[1]) +
                                                   (q2 / vent_semi[2]) * (q2 / vent_semi[2]));
                    if (rho_v <= 1.0) {
                        value = level::kVentricle;
                    } else if (rho > 1.0 - cortex_rel) {
                        value = level::kCortex;
                    } else {
                        value = level::kWhiteMatter;
                    }
                } else if (rho <= 1.0 + skull_rel) {
                    value = level::kSkull;
                }
                out.voxels[idx] = value;
            }
        }
    }

    if (spec.noise_sigma > 0.0) {
        Rng rng(spec.seed, stream::kNoise);
        for (auto& v : out.voxels) {
            v += static_cast<float>(spec.noise_sigma * rng.normal());
            if (v < 0.0f) v = 0.0f;
            if (v > 1.0f) v = 1.0f;
        }
    }
    return out;
}

struct CohortConfig {
    enum class Kind { Pretrain, Eval };
    Kind kind = Kind::Pretrain;
    int n_subjects = 10;
    int scans_min = 1;
    int scans_max = 3;
    double ad_fraction = 0.0; // must be 0 for pretrain
    int grid = 32;
    double noise_sigma = 0.03;
    double severity_min = 0.5;
    double severity_max = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_subjects < 1) throw vpx::ParamError("cohort: n_subjects must be >= 1");
        if (scans_min < 1 || scans_max < scans_min) {
            throw vpx::ParamError("cohort: bad scans_per_subject range");
        }
        if (ad_fraction < 0.0 || ad_fraction > 1.0) {
            throw vpx::ParamError("cohort: ad_fraction outside [0,1]");
        }
        if (kind == Kind::Pretrain && ad_fraction != 0.0) {
            throw vpx::ParamError("cohort: pretrain cohort is CN-only, ad_fraction must be 0");
        }
        if (kind == Kind::Eval && ad_fraction > 0.0 &&
            static_cast<int>(std::lround(ad_fraction * n_subjects)) == 0) {
            throw vpx::ParamError("cohort: ad_fraction > 0 yields zero AD subjects");
        }
        if (severity_min < 0.0 || severity_max > 1.0 || severity_max < severity_min) {
            throw vpx::ParamError("cohort: bad severity range");
        }
    }
};

struct Cohort {
    std::vector<prep::Volume> volumes; // aligned with manifest rows
    Manifest manifest;
};

// CN-only pretrain cohorts and mixed CN/AD eval cohorts. Each subject's
// scans share the subject geometry (age, severity) and differ only in
// per-scan noise. AD subjects carry CDR histories whose maximum is >= 0.5;
// CN histories are all zero.
inline Cohort generate_cohort(const CohortConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed, stream::kCohort);
    const int n_ad = cfg.kind == CohortConfig::Kind::Eval
                         ? static_cast<int>(std::lround(cfg.ad_fraction * cfg.n_subjects))
                         : 0;
    const std::string prefix = cfg.kind == CohortConfig::Kind::Pretrain ? "P" : "E";
    const std::string cohort_name =
        cfg.kind == CohortConfig::Kind::Pretrain ? "pretrain" : "eval";

    Cohort out;
    for (int s = 0; s < cfg.n_subjects; ++s) {
        char sid[16];
        std::snprintf(sid, sizeof(sid), "%s%04d", prefix.c_str(), s);
        const Diagnosis diag = s < n_ad ? Diagnosis::AD : Diagnosis::CN;
        const double age = 44.0 + 38.0 * rng.next_double();
        const double severity =
            diag == Diagnosis::AD
                ? cfg.severity_min + (cfg.severity_max - cfg.severity_min) * rng.next_double()
                : 0.0;
        const int n_scans =
            cfg.scans_min +
            static_cast<int>(rng.bounded(static_cast<std::uint64_t>(cfg.scans_max -
                                                                    cfg.scans_min + 1)));
        const std::int64_t day0 = 400 + static_cast<std::int64_t>(rng.bounded(3000));
        const double max_score = diag == Diagnosis::AD
                                     ? (severity >= 0.85 ? 2.0 : severity >= 0.65 ? 1.0 : 0.5)
                                     : 0.0;

        std::vector<std::int64_t> scan_days(static_cast<std::size_t>(n_scans));
        std::int64_t day = day0;
        for (int j = 0; j < n_scans; ++j) {
            scan_days[static_cast<std::size_t>(j)] = day;
            day += 120 + static_cast<std::int64_t>(rng.bounded(120));
        }

        std::vector<CdrEntry> history;
        if (diag == Diagnosis::AD) {
            // An old zero entry far before the first scan, then the plateau
            // at the subject's maximum; every scan day sits nearest a
            // max-score entry, so nothing is discarded by CDR selection.
            history.push_back({scan_days.front() - 360, 0.0});
        }
        for (std::int64_t sd : scan_days) {
            const std::int64_t offset = static_cast<std::int64_t>(rng.bounded(21)) - 10;
            history.push_back({sd + offset, max_score});
        }
        for (std::size_t i = 1; i < history.size(); ++i) {
            if (history[i].day <= history[i - 1].day) history[i].day = history[i - 1].day + 1;
        }

        for (int j = 0; j < n_scans; ++j) {
            ScanRecord rec;
            rec.subject_id = sid;
            char scid[24];
            std::snprintf(scid, sizeof(scid), "%s_T%02d", sid, j);
            rec.scan_id = scid;
            rec.acquired_day = scan_days[static_cast<std::size_t>(j)];
            rec.age = age;
            rec.diagnosis = diag;
            rec.cdr_history = history;
            rec.cohort = cohort_name;

            PhantomSpec spec;
            spec.grid = cfg.grid;
            spec.age = age;
            spec.diagnosis = diag;
            spec.atrophy_severity = severity;
            spec.noise_sigma = cfg.noise_sigma;
            spec.seed = mix_seed(cfg.seed, mix_seed(static_cast<std::uint64_t>(s),
                                                    static_cast<std::uint64_t>(j)));
            prep::Volume vol = generate_phantom(spec);
            vol.meta = rec.scan_id;
            out.volumes.push_back(std::move(vol));
            out.manifest.push_back(std::move(rec));
        }
    }
    return out;
}

// --- Manifest JSON Lines -------------------------------------------------

inline nlohmann::json record_json(const ScanRecord& r) {
    nlohmann::json j;
    j["subject_id"] = r.subject_id;
    j["scan_id"] = r.scan_id;
    j["acquired_day"] = r.acquired_day;
    j["age"] = r.age;
    j["diagnosis"] = diagnosis_name(r.diagnosis);
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& e : r.cdr_history) {
        hist.push_back(nlohmann::json::array({e.day, e.score}));
    }
    j["cdr_history"] = hist;
    if (r.parent_scan_id.empty()) {
        j["parent_scan_id"] = nullptr;
    } else {
        j["parent_scan_id"] = r.parent_scan_id;
    }
    j["cohort"] = r.cohort;
    return j;
}

inline ScanRecord record_from_json(const nlohmann::json& j) {
    ScanRecord r;
    r.subject_id = j.at("subject_id").get<std::string>();
    r.scan_id = j.at("scan_id").get<std::string>();
    r.acquired_day = j.at("acquired_day").get<std::int64_t>();
    r.age = j.at("age").get<double>();
    r.diagnosis = diagnosis_from_name(j.at("diagnosis").get<std::string>());
    for (const auto& e : j.at("cdr_history")) {
        r.cdr_history.push_back({e.at(0).get<std::int64_t>(), e.at(1).get<double>()});
    }
    if (!j.at("parent_scan_id").is_null()) {
        r.parent_scan_id = j.at("parent_scan_id").get<std::string>();
    }
    r.cohort = j.at("cohort").get<std::string>();
    return r;
}

inline std::string manifest_to_jsonl(const Manifest& m) {
    std::string out;
    for (const auto& r : m) {
        out += record_json(r).dump();
        out += '\n';
    }
    return out;
}

inline void write_manifest(const Manifest& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw vpx::DataError("manifest: cannot open '" + path + "' for writing");
    f << manifest_to_jsonl(m);
    if (!f) throw vpx::DataError("manifest: short write to '" + path + "'");
}

inline Manifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw vpx::DataError("manifest: cannot open '" + path + "'");
    Manifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            m.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw vpx::DataError("manifest: line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

} // namespace vpx::phantom
