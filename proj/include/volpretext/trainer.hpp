#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "volpretext/model.hpp"
#include "volpretext/phantom.hpp"
#include "volpretext/preprocess.hpp"
#include "volpretext/rotation.hpp"

namespace vpx::train {

struct CropSpec {
    int source_edge = 0;
    int target_edge = 0;
};

struct TrainConfig {
    model::Task task = model::Task::age;
    int epochs = 10;
    double base_lr = 1e-3;
    int lr_step = 20;
    double lr_gamma = 0.5;
    int batch_size = 8;
    std::optional<CropSpec> crop;
    std::uint64_t seed = 0;
    rot::Scheme label_scheme = rot::Scheme::unique24; // rotation task only

    void validate() const {
        if (epochs < 1) throw vpx::ParamError("train: epochs must be >= 1");
        if (batch_size < 1) throw vpx::ParamError("train: batch_size must be >= 1");
        if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) {
            throw vpx::ParamError("train: lr_gamma outside (0,1]");
        }
        if (lr_step < 1) throw vpx::ParamError("train: lr_step must be >= 1");
        if (!(base_lr > 0.0)) throw vpx::ParamError("train: base_lr must be > 0");
        if (crop && (crop->target_edge > crop->source_edge || crop->target_edge < 1)) {
            throw vpx::ParamError("train: crop target edge must be in [1, source edge]");
        }
    }
};

// Step decay: base_lr * gamma^floor(epoch / step).
inline double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw vpx::ParamError("lr_at: epoch must be >= 0");
    return cfg.base_lr * std::pow(cfg.lr_gamma, static_cast<double>(epoch / cfg.lr_step));
}

// Contiguous cubic sub-volume at uniform integer offsets in
// [0, edge - target]^3.
inline prep::Volume random_crop(const prep::Volume& v, int target_edge, Rng& rng) {
    if (!v.cubic()) throw vpx::ShapeError("random_crop: volume is not cubic");
    const std::int64_t edge = v.dims[0];
    if (target_edge < 1 || target_edge > edge) {
        throw vpx::ParamError("random_crop: target edge " + std::to_string(target_edge) +
                              " outside [1, " + std::to_string(edge) + "]");
    }
    const std::uint64_t span = static_cast<std::uint64_t>(edge - target_edge + 1);
    const std::int64_t od = static_cast<std::int64_t>(rng.bounded(span));
    const std::int64_t oh = static_cast<std::int64_t>(rng.bounded(span));
    const std::int64_t ow = static_cast<std::int64_t>(rng.bounded(span));
    prep::Volume out(target_edge, target_edge, target_edge);
    out.meta = v.meta;
    for (std::int64_t d = 0; d < target_edge; ++d) {
        for (std::int64_t h = 0; h < target_edge; ++h) {
            const float* src = &v.voxels[static_cast<std::size_t>(
                ((d + od) * v.dims[1] + h + oh) * v.dims[2] + ow)];
            float* dst = &out.voxels[static_cast<std::size_t>((d * target_edge + h) *
                                                              target_edge)];
            std::copy(src, src + target_edge, dst);
        }
    }
    return out;
}

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    std::map<std::string, double> mean_loss; // per head
    double wall_ms = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    std::string checkpoint_ref;
    std::vector<std::string> accessed_scan_ids;   // audit trail, insertion order
    std::vector<std::array<int, 3>> head_orders; // multihead: per-batch head order
};

// Uniform random permutation of the three heads (0=age, 1=reconstruction,
// 2=rotation in the trainer's fixed base order).
inline std::array<int, 3> draw_head_order(Rng& rng) {
    std::array<int, 3> order{0, 1, 2};
    rng.shuffle(order.begin(), order.end());
    return order;
}

inline std::string train_log_jsonl(const TrainLog& log) {
    std::string out;
    for (const auto& e : log.epochs) {
        nlohmann::json j;
        j["epoch"] = e.epoch;
        j["lr"] = e.lr;
        j["loss"] = e.mean_loss;
        j["wall_ms"] = e.wall_ms;
        out += j.dump();
        out += '\n';
    }
    if (!log.checkpoint_ref.empty()) {
        nlohmann::json j;
        j["checkpoint"] = log.checkpoint_ref;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline void write_train_log(const TrainLog& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw vpx::DataError("train log: cannot open '" + path + "' for writing");
    f << train_log_jsonl(log);
}

// One training example: a preprocessed volume plus its manifest record.
struct TrainItem {
    const prep::Volume* volume = nullptr;
    const phantom::ScanRecord* record = nullptr;
};

// Data source with an access hook; every volume fetch is reported, which is
// what the leakage audit in the tests hangs off.
class Dataset {
  public:
    Dataset() = default;
    Dataset(std::vector<TrainItem> items) : items_(std::move(items)) {}

    std::size_t size() const { return items_.size(); }

    const TrainItem& get(std::size_t i, TrainLog* log = nullptr) const {
        const auto& item = items_.at(i);
        if (log) log->accessed_scan_ids.push_back(item.record->scan_id);
        return item;
    }

    const std::vector<TrainItem>& items() const { return items_; }

  private:
    std::vector<TrainItem> items_;
};

namespace detail {

template <typename T>
Tensor<T> volume_to_tensor(const std::vector<const prep::Volume*>& batch) {
    const std::int64_t n = static_cast<std::int64_t>(batch.size());
    const std::int64_t e = batch[0]->dims[0];
    Tensor<T> out({n, 1, e, e, e});
    for (std::int64_t b = 0; b < n; ++b) {
        const auto& vox = batch[static_cast<std::size_t>(b)]->voxels;
        T* dst = out.ptr() + b * static_cast<std::int64_t>(vox.size());
        for (std::size_t i = 0; i < vox.size(); ++i) dst[i] = static_cast<T>(vox[i]);
    }
    return out;
}

inline std::chrono::steady_clock::time_point now() { return std::chrono::steady_clock::now(); }

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(now() - t0).count();
}

} // namespace detail

// Training loop internals shared by the single-task and multi-head paths.
template <typename T>
class Trainer {
  public:
    Trainer(Dataset& data, model::Model<T>& model, const TrainConfig& cfg)
        : data_(data), model_(model), cfg_(cfg), optimizer_(model.params),
          shuffle_rng_(cfg.seed, stream::kShuffle), label_rng_(cfg.seed, stream::kRotationLabel),
          crop_rng_(cfg.seed, stream::kCrop), dropout_rng_(cfg.seed, stream::kDropout),
          head_order_rng_(cfg.seed, stream::kHeadOrder) {
        cfg.validate();
        if (data.size() == 0) throw vpx::DataError("train: empty dataset");
        if (cfg.task == model::Task::rotation || cfg.task == model::Task::multihead) {
            labels_ = rot::dedup_classes(cfg.label_scheme);
            if (model.cfg.rotation_classes != labels_.num_classes) {
                throw vpx::ConfigError(
                    "train: rotation head size " + std::to_string(model.cfg.rotation_classes) +
                    " != label scheme classes " + std::to_string(labels_.num_classes));
            }
        }
        if (cfg.task == model::Task::age || cfg.task == model::Task::multihead) {
            fit_age_scale();
        }
    }

    TrainLog run() {
        TrainLog log;
        const bool multihead = cfg_.task == model::Task::multihead;
        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            const auto t0 = detail::now();
            const double lr = lr_at(epoch, cfg_);
            std::vector<std::size_t> order(data_.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            shuffle_rng_.shuffle(order.begin(), order.end());

            std::map<std::string, double> loss_sum;
            std::map<std::string, std::int64_t> loss_n;
            for (std::size_t at = 0; at < order.size(); at += cfg_.batch_size) {
                const std::size_t hi =
                    std::min(order.size(), at + static_cast<std::size_t>(cfg_.batch_size));
                std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                                               order.begin() + static_cast<std::ptrdiff_t>(hi));
                try {
                    if (multihead) {
                        run_multihead_batch(batch, lr, log, loss_sum, loss_n);
                    } else {
                        const double loss = run_batch(batch, cfg_.task, lr, log);
                        loss_sum[model::task_name(cfg_.task)] +=
                            loss * static_cast<double>(batch.size());
                        loss_n[model::task_name(cfg_.task)] +=
                            static_cast<std::int64_t>(batch.size());
                    }
                } catch (const vpx::NumericError& e) {
                    throw vpx::NumericError("train: epoch " + std::to_string(epoch) +
                                            ", batch at item " + std::to_string(at) + ": " +
                                            e.what());
                }
            }

            EpochLog el;
            el.epoch = epoch;
            el.lr = lr;
            for (const auto& [head, sum] : loss_sum) {
                el.mean_loss[head] = sum / static_cast<double>(loss_n.at(head));
            }
            el.wall_ms = detail::ms_since(t0);
            log.epochs.push_back(std::move(el));
        }
        return log;
    }

  private:
    Dataset& data_;
    model::Model<T>& model_;
    TrainConfig cfg_;
    Adam<T> optimizer_;
    Rng shuffle_rng_, label_rng_, crop_rng_, dropout_rng_, head_order_rng_;
    rot::LabelScheme labels_;

    void fit_age_scale() {
        double sum = 0.0, sq = 0.0;
        for (const auto& item : data_.items()) {
            sum += item.record->age;
        }
        const double mu = sum / static_cast<double>(data_.size());
        for (const auto& item : data_.items()) {
            const double d = item.record->age - mu;
            sq += d * d;
        }
        const double sigma = std::sqrt(sq / static_cast<double>(data_.size()));
        model_.set_age_scale(mu, sigma > 0.0 ? sigma : 1.0);
    }

    prep::Volume prepare_volume(const TrainItem& item) {
        if (!cfg_.crop) return *item.volume;
        prep::Volume v = *item.volume;
        if (v.dims[0] != cfg_.crop->source_edge) {
            v = prep::resize_trilinear(v, {cfg_.crop->source_edge, cfg_.crop->source_edge,
                                           cfg_.crop->source_edge});
        }
        return random_crop(v, cfg_.crop->target_edge, crop_rng_);
    }

    // One optimizer step for one head; returns the batch loss.
    double run_batch(const std::vector<std::size_t>& batch, model::Task task, double lr,
                     TrainLog& log) {
        std::vector<prep::Volume> staged;
        staged.reserve(batch.size());
        std::vector<std::int64_t> rot_targets;
        std::vector<T> age_targets;
        for (std::size_t idx : batch) {
            const TrainItem& item = data_.get(idx, &log);
            prep::Volume v = prepare_volume(item);
            if (task == model::Task::rotation) {
                const std::int64_t cls =
                    static_cast<std::int64_t>(label_rng_.bounded(
                        static_cast<std::uint64_t>(labels_.num_classes)));
                v = rot::apply(labels_.representative[static_cast<std::size_t>(cls)], v);
                rot_targets.push_back(cls);
            } else if (task == model::Task::age) {
                age_targets.push_back(static_cast<T>(item.record->age));
            }
            staged.push_back(std::move(v));
        }
        std::vector<const prep::Volume*> ptrs;
        for (const auto& v : staged) ptrs.push_back(&v);
        Tensor<T> input = detail::volume_to_tensor<T>(ptrs);

        model_.params.zero_grad();
        Var<T> x = Var<T>::leaf(input);
        Var<T> repr = model_.encode(x, true, &dropout_rng_);
        Var<T> loss;
        switch (task) {
            case model::Task::age: {
                Tensor<T> target({static_cast<std::int64_t>(age_targets.size()), 1});
                for (std::size_t i = 0; i < age_targets.size(); ++i) target[i] = age_targets[i];
                loss = mse_loss(model_.age_output(repr), target);
                break;
            }
            case model::Task::rotation:
                loss = cross_entropy(model_.rotation_logits(repr), rot_targets);
                break;
            case model::Task::reconstruction:
                loss = mse_loss(model_.reconstruct(repr, true), input);
                break;
            default:
                throw vpx::ConfigError("train: run_batch cannot drive multihead directly");
        }
        loss.backward();
        optimizer_.step(lr);
        return static_cast<double>(loss.value()[0]);
    }

    // Multi-head step: a random permutation of the three heads, each head's
    // loss backed up and applied before the next head runs.
    void run_multihead_batch(const std::vector<std::size_t>& batch, double lr, TrainLog& log,
                             std::map<std::string, double>& loss_sum,
                             std::map<std::string, std::int64_t>& loss_n) {
        static constexpr std::array<model::Task, 3> kHeads{
            model::Task::age, model::Task::reconstruction, model::Task::rotation};
        const std::array<int, 3> order = draw_head_order(head_order_rng_);
        log.head_orders.push_back(order);
        for (int slot : order) {
            const model::Task head = kHeads[static_cast<std::size_t>(slot)];
            const double loss = run_batch(batch, head, lr, log);
            loss_sum[model::task_name(head)] += loss * static_cast<double>(batch.size());
            loss_n[model::task_name(head)] += static_cast<std::int64_t>(batch.size());
        }
    }
};

template <typename T>
TrainLog train_task(Dataset& data, model::Model<T>& model, const TrainConfig& cfg) {
    if (cfg.task == model::Task::multihead) {
        throw vpx::ConfigError("train_task: use train_multihead for the multihead task");
    }
    Trainer<T> trainer(data, model, cfg);
    return trainer.run();
}

template <typename T>
TrainLog train_multihead(Dataset& data, model::Model<T>& model, const TrainConfig& cfg) {
    if (cfg.task != model::Task::multihead) {
        throw vpx::ConfigError("train_multihead: cfg.task must be multihead");
    }
    Trainer<T> trainer(data, model, cfg);
    return trainer.run();
}

// --- Post-training evaluation helpers (eval mode) -------------------------

// Accuracy of the rotation head over freshly sampled rotations of the
// dataset volumes.
template <typename T>
double rotation_accuracy(Dataset& data, model::Model<T>& model, rot::Scheme scheme,
                         std::uint64_t seed) {
    const auto labels = rot::dedup_classes(scheme);
    Rng rng(seed, stream::kRotationLabel);
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const TrainItem& item = data.get(i);
        const std::int64_t cls = static_cast<std::int64_t>(
            rng.bounded(static_cast<std::uint64_t>(labels.num_classes)));
        prep::Volume v = rot::apply(labels.representative[static_cast<std::size_t>(cls)],
                                    *item.volume);
        Var<T> x = Var<T>::leaf(detail::volume_to_tensor<T>({&v}));
        Var<T> logits = model.rotation_logits(model.encode(x, false));
        const T* row = logits.value().ptr();
        std::int64_t best = 0;
        for (std::int64_t k = 1; k < logits.value().dim(1); ++k) {
            if (row[k] > row[best]) best = k;
        }
        if (best == cls) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

// Mean absolute error of the age head against the records, plus the
// predict-the-mean baseline on the same data.
template <typename T>
std::pair<double, double> age_mae_and_baseline(Dataset& data, model::Model<T>& model) {
    double mean_age = 0.0;
    for (const auto& item : data.items()) mean_age += item.record->age;
    mean_age /= static_cast<double>(data.size());
    double mae = 0.0, baseline = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const TrainItem& item = data.get(i);
        Var<T> x = Var<T>::leaf(detail::volume_to_tensor<T>({item.volume}));
        Var<T> pred = model.age_output(model.encode(x, false));
        mae += std::abs(static_cast<double>(pred.value()[0]) - item.record->age);
        baseline += std::abs(mean_age - item.record->age);
    }
    return {mae / static_cast<double>(data.size()), baseline / static_cast<double>(data.size())};
}

} // namespace vpx::train
