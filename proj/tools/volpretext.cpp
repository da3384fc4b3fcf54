// volpretext: phantom cohorts -> preprocessing -> pretext pretraining ->
// representation extraction -> downstream AD/CN evaluation, plus the
// leakage auditor and report generation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "volpretext/volpretext.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitLeakage = 5;

// Flat dotted-key configuration: defaults < config file < command flags.
class RunConfig {
  public:
    void declare(const std::string& key, json default_value) {
        values_[key] = std::move(default_value);
    }

    void load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw vpx::DataError("config: cannot open '" + path + "'");
        json j;
        try {
            f >> j;
        } catch (const json::exception& e) {
            throw vpx::DataError("config: " + std::string(e.what()));
        }
        if (!j.is_object()) throw vpx::ConfigError("config: top level must be an object");
        for (const auto& [key, value] : j.items()) {
            if (!values_.count(key)) {
                throw vpx::ConfigError("config: unknown key '" + key + "'");
            }
            values_[key] = value;
        }
    }

    void set(const std::string& key, json value) { values_.at(key) = std::move(value); }

    template <typename T>
    T get(const std::string& key) const {
        try {
            return values_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw vpx::ConfigError("config: key '" + key + "': " + e.what());
        }
    }

    json resolved() const {
        json j;
        for (const auto& [key, value] : values_) j[key] = value;
        return j;
    }

  private:
    std::map<std::string, json> values_;
};

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw vpx::DataError("cannot create directory '" + dir + "': " + ec.message());
}

// Outputs are write-once: refuse to clobber an existing file.
std::string fresh_path(const std::string& dir, const std::string& name) {
    const std::string path = (fs::path(dir) / name).string();
    if (fs::exists(path)) throw vpx::DataError("output '" + path + "' already exists");
    return path;
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw vpx::DataError("cannot open '" + path + "' for writing");
    f << j.dump(2) << "\n";
}

json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw vpx::DataError("cannot open '" + path + "'");
    try {
        json j;
        f >> j;
        return j;
    } catch (const json::exception& e) {
        throw vpx::DataError(std::string("json: ") + e.what() + " in '" + path + "'");
    }
}

struct LoadedCohort {
    vpx::phantom::Manifest manifest;
    std::vector<vpx::prep::Volume> volumes; // aligned with manifest
};

LoadedCohort load_cohort_dir(const std::string& dir) {
    LoadedCohort out;
    out.manifest = vpx::phantom::read_manifest((fs::path(dir) / "manifest.jsonl").string());
    out.volumes.reserve(out.manifest.size());
    for (const auto& rec : out.manifest) {
        out.volumes.push_back(
            vpx::prep::read_volume((fs::path(dir) / "volumes" / (rec.scan_id + ".volb")).string()));
    }
    return out;
}

void save_cohort_dir(const vpx::phantom::Manifest& manifest,
                     const std::vector<vpx::prep::Volume>& volumes, const std::string& dir) {
    ensure_dir((fs::path(dir) / "volumes").string());
    vpx::phantom::write_manifest(manifest, fresh_path(dir, "manifest.jsonl"));
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        vpx::prep::write_volume(
            volumes[i], fresh_path((fs::path(dir) / "volumes").string(),
                                   manifest[i].scan_id + ".volb"));
    }
}

// --- gen -------------------------------------------------------------------

int run_gen(const RunConfig& cfg) {
    const std::string out_dir = cfg.get<std::string>("out");
    ensure_dir(out_dir);
    const auto seed = cfg.get<std::uint64_t>("seed");

    vpx::phantom::CohortConfig pre;
    pre.kind = vpx::phantom::CohortConfig::Kind::Pretrain;
    pre.n_subjects = cfg.get<int>("gen.pretrain_subjects");
    pre.scans_min = cfg.get<int>("gen.scans_min");
    pre.scans_max = cfg.get<int>("gen.scans_max");
    pre.grid = cfg.get<int>("gen.grid");
    pre.noise_sigma = cfg.get<double>("gen.noise_sigma");
    pre.ad_fraction = 0.0;
    pre.seed = seed;

    vpx::phantom::CohortConfig ev = pre;
    ev.kind = vpx::phantom::CohortConfig::Kind::Eval;
    ev.n_subjects = cfg.get<int>("gen.eval_subjects");
    ev.ad_fraction = cfg.get<double>("gen.ad_fraction");
    ev.severity_min = cfg.get<double>("gen.severity_min");
    ev.severity_max = cfg.get<double>("gen.severity_max");
    ev.seed = vpx::mix_seed(seed, 1);

    const auto pretrain = vpx::phantom::generate_cohort(pre);
    const auto evaluation = vpx::phantom::generate_cohort(ev);
    save_cohort_dir(pretrain.manifest, pretrain.volumes,
                    (fs::path(out_dir) / "pretrain").string());
    save_cohort_dir(evaluation.manifest, evaluation.volumes,
                    (fs::path(out_dir) / "eval").string());
    write_json_file(fresh_path(out_dir, "gen.config.json"), cfg.resolved());
    std::printf("gen: %zu pretrain scans, %zu eval scans -> %s\n", pretrain.manifest.size(),
                evaluation.manifest.size(), out_dir.c_str());
    return kExitOk;
}

// --- prep ------------------------------------------------------------------

int run_prep(const RunConfig& cfg) {
    const std::string in_dir = cfg.get<std::string>("in");
    const std::string out_dir = cfg.get<std::string>("out");
    ensure_dir((fs::path(out_dir) / "volumes").string());

    int edge = cfg.get<int>("prep.target_edge");
    if (edge == 0) {
        edge = vpx::model::preset_from_name(cfg.get<std::string>("preset")) ==
                       vpx::model::Preset::paper192
                   ? 192
                   : 32;
    }
    vpx::prep::ClaheParams clahe;
    clahe.tiles_per_axis = cfg.get<int>("prep.clahe_tiles");
    clahe.bins = cfg.get<int>("prep.clahe_bins");
    clahe.clip_limit = cfg.get<double>("prep.clahe_clip");

    const auto manifest =
        vpx::phantom::read_manifest((fs::path(in_dir) / "manifest.jsonl").string());
    vpx::phantom::write_manifest(manifest, fresh_path(out_dir, "manifest.jsonl"));
    json provenance;
    for (const auto& rec : manifest) {
        const std::string src =
            (fs::path(in_dir) / "volumes" / (rec.scan_id + ".volb")).string();
        auto vol = vpx::prep::read_volume(src);
        auto processed = vpx::prep::preprocess_pipeline(vol, {edge, edge, edge}, clahe);
        processed.meta = rec.scan_id;
        const std::string dst =
            fresh_path((fs::path(out_dir) / "volumes").string(), rec.scan_id + ".volb");
        vpx::prep::write_volume(processed, dst);
        provenance[rec.scan_id] = {{"source", src},
                                   {"stages", {"resize_trilinear", "minmax_normalize", "clahe3d"}}};
    }
    write_json_file(fresh_path(out_dir, "prep.provenance.json"), provenance);
    write_json_file(fresh_path(out_dir, "prep.config.json"), cfg.resolved());
    std::printf("prep: %zu volumes -> %s (edge %d)\n", manifest.size(), out_dir.c_str(), edge);
    return kExitOk;
}

// --- pretrain ----------------------------------------------------------------

vpx::model::ModelConfig model_config_from_run(const RunConfig& cfg, vpx::model::Task task,
                                              int rotation_classes) {
    const auto preset = vpx::model::preset_from_name(cfg.get<std::string>("preset"));
    auto mc = preset == vpx::model::Preset::paper192
                  ? vpx::model::ModelConfig::paper192_default(task, rotation_classes)
                  : vpx::model::ModelConfig::desk32_default(task, rotation_classes);
    mc.dropout_p = cfg.get<double>("pretrain.dropout");
    const int edge = cfg.get<int>("pretrain.input_edge");
    if (edge > 0) {
        mc.input_edge = edge;
        mc.decoder_widths = vpx::model::derive_decoder_widths(mc);
    }
    return mc;
}

int run_pretrain(const RunConfig& cfg) {
    const std::string data_dir = cfg.get<std::string>("data");
    const std::string out_dir = cfg.get<std::string>("out");
    ensure_dir(out_dir);

    const auto task = vpx::model::task_from_name(cfg.get<std::string>("pretrain.task"));
    const auto scheme = vpx::rot::scheme_from_name(cfg.get<std::string>("pretrain.label_scheme"));
    const auto labels = vpx::rot::dedup_classes(scheme);

    vpx::train::TrainConfig tc;
    tc.task = task;
    tc.epochs = cfg.get<int>("pretrain.epochs");
    tc.base_lr = cfg.get<double>("pretrain.base_lr");
    tc.lr_step = cfg.get<int>("pretrain.lr_step");
    tc.lr_gamma = cfg.get<double>("pretrain.lr_gamma");
    tc.batch_size = cfg.get<int>("pretrain.batch_size");
    tc.seed = cfg.get<std::uint64_t>("seed");
    tc.label_scheme = scheme;
    const int crop_source = cfg.get<int>("pretrain.crop_source");
    const int crop_target = cfg.get<int>("pretrain.crop_target");
    if (crop_source > 0 && crop_target > 0) {
        tc.crop = vpx::train::CropSpec{crop_source, crop_target};
    } else if (crop_source > 0 || crop_target > 0) {
        throw vpx::ConfigError("pretrain: crop_source and crop_target must be set together");
    }

    const auto cohort_data = load_cohort_dir(data_dir);
    std::vector<vpx::train::TrainItem> items;
    std::set<std::string> subjects;
    for (std::size_t i = 0; i < cohort_data.manifest.size(); ++i) {
        if (cohort_data.manifest[i].cohort != "pretrain") continue;
        items.push_back({&cohort_data.volumes[i], &cohort_data.manifest[i]});
        subjects.insert(cohort_data.manifest[i].subject_id);
    }
    if (items.empty()) throw vpx::DataError("pretrain: no pretrain-cohort scans in " + data_dir);
    vpx::train::Dataset dataset(items);

    auto mc = model_config_from_run(cfg, task, labels.num_classes);
    vpx::Rng init(tc.seed, vpx::stream::kInit);
    auto model = vpx::model::Model<float>::build(mc, init);

    vpx::train::TrainLog log = task == vpx::model::Task::multihead
                                   ? vpx::train::train_multihead(dataset, model, tc)
                                   : vpx::train::train_task(dataset, model, tc);

    const std::string ckpt = fresh_path(out_dir, "checkpoint.vpxw");
    vpx::save_checkpoint(model.params, ckpt);
    log.checkpoint_ref = ckpt;
    vpx::model::write_model_config(mc, fresh_path(out_dir, "model.config.json"));
    vpx::train::write_train_log(log, fresh_path(out_dir, "trainlog.jsonl"));
    write_json_file(fresh_path(out_dir, "pretrain.subjects.json"),
                    json(std::vector<std::string>(subjects.begin(), subjects.end())));
    write_json_file(fresh_path(out_dir, "pretrain.config.json"), cfg.resolved());
    std::printf("pretrain[%s]: %d epochs over %zu scans -> %s\n",
                vpx::model::task_name(task), tc.epochs, items.size(), out_dir.c_str());
    return kExitOk;
}

// --- extract -----------------------------------------------------------------

int run_extract(const RunConfig& cfg) {
    const std::string ckpt = cfg.get<std::string>("checkpoint");
    const std::string data_dir = cfg.get<std::string>("data");
    const std::string out_file = cfg.get<std::string>("out");
    if (fs::exists(out_file)) throw vpx::DataError("output '" + out_file + "' already exists");
    std::string mc_path = cfg.get<std::string>("model_config");
    if (mc_path.empty()) {
        mc_path = (fs::path(ckpt).parent_path() / "model.config.json").string();
    }

    auto mc = vpx::model::read_model_config(mc_path);
    vpx::Rng init(0, vpx::stream::kInit);
    auto model = vpx::model::Model<float>::build(mc, init);
    vpx::load_checkpoint(model.params, ckpt);

    const auto cohort_data = load_cohort_dir(data_dir);
    std::map<std::string, std::size_t> volume_of;
    for (std::size_t i = 0; i < cohort_data.manifest.size(); ++i) {
        volume_of[cohort_data.manifest[i].scan_id] = i;
    }

    vpx::phantom::Manifest rows = cohort_data.manifest;
    std::map<std::string, vpx::phantom::Diagnosis> group;
    if (cfg.get<bool>("extract.cdr_select")) {
        auto sel = vpx::cohort::select_by_cdr(cohort_data.manifest);
        rows = std::move(sel.kept);
        group = std::move(sel.subject_group);
    } else {
        for (const auto& rec : rows) group[rec.subject_id] = rec.diagnosis;
    }

    vpx::eval::FeatureTable table;
    table.provenance = ckpt;
    const int batch = 16;
    for (std::size_t at = 0; at < rows.size(); at += batch) {
        std::vector<const vpx::prep::Volume*> ptrs;
        for (std::size_t i = at; i < std::min(rows.size(), at + batch); ++i) {
            ptrs.push_back(&cohort_data.volumes[volume_of.at(rows[i].scan_id)]);
        }
        const auto features = vpx::model::extract_representation(model, ptrs);
        for (std::size_t j = 0; j < features.size(); ++j) {
            const auto& rec = rows[at + j];
            vpx::eval::FeatureRow row;
            row.scan_id = rec.scan_id;
            row.subject_id = rec.subject_id;
            row.label = group.at(rec.subject_id) == vpx::phantom::Diagnosis::AD ? 1 : 0;
            row.features.assign(features[j].begin(), features[j].end());
            table.rows.push_back(std::move(row));
        }
    }
    vpx::eval::write_feature_table(table, out_file);
    std::printf("extract: %zu rows x %d features -> %s\n", table.rows.size(), table.dim(),
                out_file.c_str());
    return kExitOk;
}

// --- eval --------------------------------------------------------------------

int run_eval(const RunConfig& cfg) {
    const std::string features = cfg.get<std::string>("features");
    const std::string out_dir = cfg.get<std::string>("out");
    ensure_dir(out_dir);

    vpx::eval::DownstreamConfig dc;
    dc.k = cfg.get<int>("eval.k");
    dc.seed = cfg.get<std::uint64_t>("seed");
    dc.task_tag = cfg.get<std::string>("eval.task_tag");

    const auto table = vpx::eval::read_feature_table(features);
    const auto result = vpx::eval::evaluate_downstream(table, dc);

    write_json_file(fresh_path(out_dir, "metrics_svc.json"),
                    vpx::eval::metrics_report_json(result.svc));
    write_json_file(fresh_path(out_dir, "metrics_rfc.json"),
                    vpx::eval::metrics_report_json(result.rfc));
    vpx::report::write_text_file(fresh_path(out_dir, "metrics.txt"),
                                 vpx::eval::metrics_text_table({result.svc, result.rfc}));
    write_json_file(fresh_path(out_dir, "eval.plan.json"),
                    vpx::cohort::split_plan_json(result.plan));
    write_json_file(fresh_path(out_dir, "eval.config.json"), cfg.resolved());
    std::printf("%s", vpx::eval::metrics_text_table({result.svc, result.rfc}).c_str());
    return kExitOk;
}

// --- audit -------------------------------------------------------------------

int run_audit(const RunConfig& cfg) {
    const auto manifest = vpx::phantom::read_manifest(cfg.get<std::string>("manifest"));
    const auto plan = vpx::cohort::split_plan_from_json(
        read_json_file(cfg.get<std::string>("plan")));
    std::set<std::string> pretrain;
    const std::string subjects_file = cfg.get<std::string>("pretrain_subjects");
    if (!subjects_file.empty()) {
        for (const auto& s : read_json_file(subjects_file)) {
            pretrain.insert(s.get<std::string>());
        }
    }
    const auto report = vpx::cohort::audit_leakage(manifest, plan, pretrain);
    const json j = vpx::cohort::leakage_report_json(report);
    const std::string out_file = cfg.get<std::string>("out");
    if (!out_file.empty()) {
        write_json_file(out_file, j);
    }
    std::printf("%s\n", j.dump(2).c_str());
    return report.clean() ? kExitOk : kExitLeakage;
}

// --- report ------------------------------------------------------------------

int run_report(const RunConfig& cfg) {
    const std::string out_dir = cfg.get<std::string>("out");
    ensure_dir(out_dir);
    const auto trainlogs = cfg.get<std::vector<std::string>>("report.trainlogs");
    const auto metric_files = cfg.get<std::vector<std::string>>("report.metrics");

    std::string summary = "# volpretext run summary\n\n";
    std::map<std::string, std::vector<double>> curves;
    std::string losses_csv = "source,epoch,head,loss\n";
    for (const auto& path : trainlogs) {
        std::ifstream f(path);
        if (!f) throw vpx::DataError("report: cannot open '" + path + "'");
        const std::string tag = fs::path(path).parent_path().filename().string();
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception& e) {
                throw vpx::DataError("report: " + path + ": " + e.what());
            }
            if (!j.contains("epoch")) continue;
            for (const auto& [head, loss] : j.at("loss").items()) {
                curves[tag + ":" + head].push_back(loss.get<double>());
                losses_csv += tag + "," + std::to_string(j.at("epoch").get<int>()) + "," + head +
                              "," + std::to_string(loss.get<double>()) + "\n";
            }
        }
    }
    if (!curves.empty()) {
        vpx::report::write_text_file(
            fresh_path(out_dir, "loss_curves.svg"),
            vpx::report::svg_line_chart(curves, "Pretext training loss", "epoch", "mean loss"));
        vpx::report::write_text_file(fresh_path(out_dir, "losses.csv"), losses_csv);
        summary += "## Training\n\n";
        for (const auto& [name, vals] : curves) {
            summary += "- " + name + ": first " + std::to_string(vals.front()) + ", last " +
                       std::to_string(vals.back()) + " over " + std::to_string(vals.size()) +
                       " epochs\n";
        }
        summary += "\n![loss curves](loss_curves.svg)\n\n";
    }

    const std::vector<std::string> metric_names{"acc", "sen", "spe", "auc", "j_stat"};
    std::map<std::string, std::vector<double>> bars;
    std::string metrics_csv = "source,metric,mean,std\n";
    std::string table_md;
    for (const auto& path : metric_files) {
        const json j = read_json_file(path);
        std::string tag = j.value("classifier", "?");
        if (j.contains("task") && j.at("task").is_string() && !j.at("task").get<std::string>().empty()) {
            tag += " " + j.at("task").get<std::string>();
        }
        std::vector<double> vals;
        for (const auto& name : metric_names) {
            const auto& agg = j.at(name);
            const double mean = agg.at("mean").is_null() ? 0.0 : agg.at("mean").get<double>();
            const double sd = agg.at("std").is_null() ? 0.0 : agg.at("std").get<double>();
            vals.push_back(mean);
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.3f,%.3f", mean, sd);
            metrics_csv += tag + "," + name + "," + buf + "\n";
        }
        bars[tag] = vals;
        char row[256];
        std::snprintf(row, sizeof(row), "| %s | %.3f | %.3f | %.3f | %.3f | %.3f |\n",
                      tag.c_str(), vals[0], vals[1], vals[2], vals[3], vals[4]);
        table_md += row;
    }
    if (!bars.empty()) {
        vpx::report::write_text_file(
            fresh_path(out_dir, "metrics_bars.svg"),
            vpx::report::svg_bar_chart({"ACC", "SEN", "SPE", "AUC", "J"}, bars,
                                       "Downstream metrics"));
        vpx::report::write_text_file(fresh_path(out_dir, "metrics.csv"), metrics_csv);
        summary += "## Downstream metrics\n\n";
        summary += "| Model | ACC | SEN | SPE | AUC | J_stat |\n";
        summary += "|---|---|---|---|---|---|\n";
        summary += table_md;
        summary += "\n![metrics](metrics_bars.svg)\n";
    }
    vpx::report::write_text_file(fresh_path(out_dir, "summary.md"), summary);
    write_json_file(fresh_path(out_dir, "report.config.json"), cfg.resolved());
    std::printf("report: %zu trainlogs, %zu metric files -> %s\n", trainlogs.size(),
                metric_files.size(), out_dir.c_str());
    return kExitOk;
}

// --- wiring ------------------------------------------------------------------

struct PendingFlag {
    CLI::Option* option = nullptr;
    std::function<json()> take;
    std::string key;
};

// Registers a flag bound to a config key; the flag wins over the file.
template <typename T>
CLI::Option* bind_option(CLI::App* cmd, RunConfig& cfg, std::vector<PendingFlag>& pending,
                         const std::string& flag, const std::string& key, T default_value,
                         const std::string& help) {
    cfg.declare(key, json(default_value));
    auto holder = std::make_shared<T>(default_value);
    auto* opt = cmd->add_option(flag, *holder, help);
    pending.push_back({opt, [holder] { return json(*holder); }, key});
    return opt;
}

void bind_flag(CLI::App* cmd, RunConfig& cfg, std::vector<PendingFlag>& pending,
               const std::string& flag, const std::string& key, bool default_value,
               const std::string& help) {
    cfg.declare(key, json(default_value));
    auto holder = std::make_shared<bool>(default_value);
    auto* opt = cmd->add_flag(flag, *holder, help);
    pending.push_back({opt, [holder] { return json(*holder); }, key});
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-supervised pretext training on synthetic brain phantoms"};
    app.require_subcommand(1);

    struct Command {
        CLI::App* cmd;
        RunConfig cfg;
        std::vector<PendingFlag> flags;
        std::string config_path;
        std::vector<std::string> required; // string keys that must end up non-empty
        int (*run)(const RunConfig&);
    };
    std::vector<std::unique_ptr<Command>> commands;

    auto make_command = [&](const std::string& name, const std::string& help,
                            int (*fn)(const RunConfig&)) -> Command& {
        auto c = std::make_unique<Command>();
        c->cmd = app.add_subcommand(name, help);
        c->run = fn;
        c->cmd->add_option("--config", c->config_path, "JSON config file (flat dotted keys)");
        commands.push_back(std::move(c));
        return *commands.back();
    };

    {
        auto& c = make_command("gen", "Generate phantom cohorts and manifests", run_gen);
        c.required = {"out"};
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--out", "out", "", "output directory");
        bind_option<std::uint64_t>(c.cmd, c.cfg, c.flags, "--seed", "seed", 0, "master seed");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--pretrain-subjects", "gen.pretrain_subjects",
                         20, "CN-only pretraining subjects");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--eval-subjects", "gen.eval_subjects", 20,
                         "evaluation subjects (CN+AD)");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--scans-min", "gen.scans_min", 1,
                         "min scans per subject");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--scans-max", "gen.scans_max", 2,
                         "max scans per subject");
        bind_option<double>(c.cmd, c.cfg, c.flags, "--ad-fraction", "gen.ad_fraction", 0.5,
                            "AD fraction of the eval cohort");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--grid", "gen.grid", 32, "phantom cube edge");
        bind_option<double>(c.cmd, c.cfg, c.flags, "--noise", "gen.noise_sigma", 0.03,
                            "additive noise sigma");
        bind_option<double>(c.cmd, c.cfg, c.flags, "--severity-min", "gen.severity_min", 0.5,
                            "AD atrophy severity lower bound");
        bind_option<double>(c.cmd, c.cfg, c.flags, "--severity-max", "gen.severity_max", 1.0,
                            "AD atrophy severity upper bound");
    }
    {
        auto& c = make_command("prep", "Preprocess cohort volumes", run_prep);
        c.required = {"in", "out"};
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--in", "in", "", "cohort directory");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--out", "out", "", "output directory");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--preset", "preset", "desk32",
                                 "paper192|desk32 (sets the target edge)");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--target-edge", "prep.target_edge", 0,
                         "override target edge (0 = preset default)");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--clahe-tiles", "prep.clahe_tiles", 2,
                         "CLAHE tiles per axis");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--clahe-bins", "prep.clahe_bins", 64,
                         "CLAHE histogram bins");
        bind_option<double>(c.cmd, c.cfg, c.flags, "--clahe-clip", "prep.clahe_clip", 2.0,
                            "CLAHE clip limit");
    }
    {
        auto& c = make_command("pretrain", "Train one pretext task", run_pretrain);
        c.required = {"data", "out"};
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--data", "data", "",
                                 "preprocessed cohort directory");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--out", "out", "", "output directory");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--task", "pretrain.task", "rotation",
                                 "age|rotation|reconstruction|multihead");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--preset", "preset", "desk32",
                                 "architecture preset");
        bind_option<std::uint64_t>(c.cmd, c.cfg, c.flags, "--seed", "seed", 0, "master seed");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--epochs", "pretrain.epochs", 10, "epochs");
        bind_option<double>(c.cmd, c.cfg, c.flags, "--base-lr", "pretrain.base_lr", 0.001,
                            "base learning rate");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--lr-step", "pretrain.lr_step", 20,
                         "epochs per learning-rate step");
        bind_option<double>(c.cmd, c.cfg, c.flags, "--lr-gamma", "pretrain.lr_gamma", 0.5,
                            "learning-rate decay factor");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--batch-size", "pretrain.batch_size", 8,
                         "mini-batch size");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--label-scheme",
                                 "pretrain.label_scheme", "unique24",
                                 "rotation label scheme: unique24|paper32");
        bind_option<double>(c.cmd, c.cfg, c.flags, "--dropout", "pretrain.dropout", 0.5,
                            "dropout rate in block 7");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--input-edge", "pretrain.input_edge", 0,
                         "override the preset input edge (0 = preset default)");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--crop-source", "pretrain.crop_source", 0,
                         "random-crop source edge (0 = no crop)");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--crop-target", "pretrain.crop_target", 0,
                         "random-crop target edge (0 = no crop)");
    }
    {
        auto& c = make_command("extract", "Extract representations to a feature table",
                               run_extract);
        c.required = {"checkpoint", "data", "out"};
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--checkpoint", "checkpoint", "",
                                 "VPXW checkpoint");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--model-config", "model_config", "",
                                 "model config sidecar (default: next to the checkpoint)");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--data", "data", "",
                                 "cohort directory to extract from");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--out", "out", "", "output CSV");
        bind_flag(c.cmd, c.cfg, c.flags, "--cdr-select,!--no-cdr-select", "extract.cdr_select",
                  true, "apply CDR-based subject selection");
    }
    {
        auto& c = make_command("eval", "Downstream grouped-CV evaluation", run_eval);
        c.required = {"features", "out"};
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--features", "features", "",
                                 "feature table CSV");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--out", "out", "", "output directory");
        bind_option<int>(c.cmd, c.cfg, c.flags, "--k", "eval.k", 10, "folds");
        bind_option<std::uint64_t>(c.cmd, c.cfg, c.flags, "--seed", "seed", 0, "fold seed");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--task-tag", "eval.task_tag", "",
                                 "provenance tag shown in tables");
    }
    {
        auto& c = make_command("audit", "Leakage audit of a split plan", run_audit);
        c.required = {"manifest", "plan"};
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--manifest", "manifest", "",
                                 "manifest JSONL");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--plan", "plan", "",
                                 "split plan JSON");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--pretrain-subjects",
                                 "pretrain_subjects", "", "pretraining subject list JSON");
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--out", "out", "",
                                 "write the report JSON here");
    }
    {
        auto& c = make_command("report", "Merge train logs and metrics into a summary",
                               run_report);
        c.required = {"out"};
        c.cfg.declare("report.trainlogs", json::array());
        auto logs = std::make_shared<std::vector<std::string>>();
        auto* opt_logs = c.cmd->add_option("--trainlog", *logs, "trainlog.jsonl files");
        c.flags.push_back({opt_logs, [logs] { return json(*logs); }, "report.trainlogs"});
        c.cfg.declare("report.metrics", json::array());
        auto mets = std::make_shared<std::vector<std::string>>();
        auto* opt_mets = c.cmd->add_option("--metrics", *mets, "metrics_*.json files");
        c.flags.push_back({opt_mets, [mets] { return json(*mets); }, "report.metrics"});
        bind_option<std::string>(c.cmd, c.cfg, c.flags, "--out", "out", "", "output directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    for (auto& c : commands) {
        if (!c->cmd->parsed()) continue;
        try {
            if (!c->config_path.empty()) c->cfg.load_file(c->config_path);
            for (const auto& flag : c->flags) {
                if (flag.option->count() > 0) c->cfg.set(flag.key, flag.take());
            }
            for (const auto& key : c->required) {
                if (c->cfg.get<std::string>(key).empty()) {
                    throw vpx::ConfigError("missing required key '" + key + "'");
                }
            }
            return c->run(c->cfg);
        } catch (const vpx::ConfigError& e) {
            std::fprintf(stderr, "config error: %s\n", e.what());
            return kExitConfig;
        } catch (const vpx::NumericError& e) {
            std::fprintf(stderr, "numeric abort: %s\n", e.what());
            return kExitNumeric;
        } catch (const vpx::DataError& e) {
            std::fprintf(stderr, "data error: %s\n", e.what());
            return kExitData;
        } catch (const vpx::Error& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return kExitData;
        }
    }
    return kExitConfig;
}
