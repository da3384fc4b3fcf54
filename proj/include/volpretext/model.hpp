#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "volpretext/checkpoint.hpp"
#include "volpretext/nn_conv.hpp"
#include "volpretext/nn_layers.hpp"
#include "volpretext/nn_loss.hpp"
#include "volpretext/nn_norm.hpp"
#include "volpretext/params.hpp"
#include "volpretext/volume.hpp"

namespace vpx::model {

enum class Preset { paper192, desk32 };
enum class Task { age, rotation, reconstruction, multihead };

inline const char* preset_name(Preset p) { return p == Preset::paper192 ? "paper192" : "desk32"; }
inline const char* task_name(Task t) {
    switch (t) {
        case Task::age: return "age";
        case Task::rotation: return "rotation";
        case Task::reconstruction: return "reconstruction";
        default: return "multihead";
    }
}

inline Preset preset_from_name(const std::string& s) {
    if (s == "paper192") return Preset::paper192;
    if (s == "desk32") return Preset::desk32;
    throw vpx::ConfigError("unknown preset '" + s + "'");
}

inline Task task_from_name(const std::string& s) {
    if (s == "age") return Task::age;
    if (s == "rotation") return Task::rotation;
    if (s == "reconstruction") return Task::reconstruction;
    if (s == "multihead") return Task::multihead;
    throw vpx::ConfigError("unknown task '" + s + "'");
}

struct ModelConfig;
inline std::vector<int> derive_decoder_widths(const ModelConfig& cfg);

// Architecture preset. paper192 is the full-scale 7-block layout; desk32 is
// the laptop-scale preset: four pooled blocks (32 -> 16 -> 8 -> 4 -> 2),
// then the 1x1x1-conv block, then a final block whose fixed 2x2x2 average
// pool is replaced by global average pooling.
struct ModelConfig {
    Preset preset = Preset::desk32;
    int input_edge = 32;
    std::vector<int> widths;         // conv width per block
    std::vector<int> decoder_widths; // channels after each decoder upsample
    double dropout_p = 0.5;
    Task head = Task::age;
    int rotation_classes = 24;

    static ModelConfig paper192_default(Task head = Task::age, int rotation_classes = 24) {
        ModelConfig cfg;
        cfg.preset = Preset::paper192;
        cfg.input_edge = 192;
        cfg.widths = {32, 64, 128, 256, 256, 64, 64};
        cfg.head = head;
        cfg.rotation_classes = rotation_classes;
        cfg.decoder_widths = derive_decoder_widths(cfg);
        return cfg;
    }

    static ModelConfig desk32_default(Task head = Task::age, int rotation_classes = 24) {
        ModelConfig cfg;
        cfg.preset = Preset::desk32;
        cfg.input_edge = 32;
        cfg.widths = {8, 16, 24, 32, 16, 16};
        cfg.head = head;
        cfg.rotation_classes = rotation_classes;
        cfg.decoder_widths = derive_decoder_widths(cfg);
        return cfg;
    }

    int pooled_blocks() const { return preset == Preset::paper192 ? 5 : 4; }

    void validate() const {
        const std::size_t expect = static_cast<std::size_t>(pooled_blocks()) + 2;
        if (widths.size() != expect) {
            throw vpx::ConfigError("model: preset " + std::string(preset_name(preset)) +
                                   " needs " + std::to_string(expect) + " block widths, got " +
                                   std::to_string(widths.size()));
        }
        for (int w : widths) {
            if (w < 1) throw vpx::ConfigError("model: block width must be >= 1");
        }
        if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
            throw vpx::ConfigError("model: dropout_p outside [0,1)");
        }
        if (rotation_classes < 2) throw vpx::ConfigError("model: rotation_classes must be >= 2");
    }
};

// One entry per stage of the encoder walk; used for validation, parameter
// counting and the decoder's mirrored size plan.
struct StageShape {
    std::string name;
    int channels = 0;
    int edge = 0;
};

inline std::vector<StageShape> infer_encoder_shapes(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<StageShape> out;
    int edge = cfg.input_edge;
    int ch = 1;
    out.push_back({"input", ch, edge});
    const int pooled = cfg.pooled_blocks();
    for (int i = 0; i < pooled; ++i) {
        const std::string name = "b" + std::to_string(i + 1);
        if (edge < 2 || edge % 2 != 0) {
            throw vpx::ConfigError("model: stage " + name + " cannot maxpool edge " +
                                   std::to_string(edge));
        }
        ch = cfg.widths[static_cast<std::size_t>(i)];
        edge /= 2;
        out.push_back({name, ch, edge});
    }
    ch = cfg.widths[static_cast<std::size_t>(pooled)];
    out.push_back({"b6", ch, edge});
    // Block 7.
    ch = cfg.widths[static_cast<std::size_t>(pooled) + 1];
    if (cfg.preset == Preset::paper192) {
        if (edge < 2 || edge % 2 != 0) {
            throw vpx::ConfigError("model: stage b7 cannot avgpool edge " +
                                   std::to_string(edge));
        }
        edge /= 2;
        if (edge != 3) {
            throw vpx::ConfigError("model: stage b7 valid 3x3x3 conv needs edge 3, got " +
                                   std::to_string(edge));
        }
        edge = 1;
    } else {
        edge = 1; // global average pool, then 1x1x1 conv
    }
    out.push_back({"b7", ch, edge});
    return out;
}

inline std::int64_t representation_dim(const ModelConfig& cfg) {
    const auto shapes = infer_encoder_shapes(cfg);
    const auto& last = shapes.back();
    return static_cast<std::int64_t>(last.channels) * last.edge * last.edge * last.edge;
}

// Exact learnable-parameter count of the feature extractor, computed from
// the config alone (conv kernels + biases + batchnorm gamma/beta).
inline std::int64_t count_encoder_params(const ModelConfig& cfg) {
    cfg.validate();
    std::int64_t total = 0;
    std::int64_t in_ch = 1;
    const int pooled = cfg.pooled_blocks();
    for (int i = 0; i < pooled; ++i) {
        const std::int64_t w = cfg.widths[static_cast<std::size_t>(i)];
        total += 27 * in_ch * w + w; // conv 3x3x3 + bias
        total += 2 * w;              // batchnorm gamma/beta
        in_ch = w;
    }
    const std::int64_t w6 = cfg.widths[static_cast<std::size_t>(pooled)];
    total += in_ch * w6 + w6 + 2 * w6; // 1x1x1 conv + batchnorm
    const std::int64_t w7 = cfg.widths[static_cast<std::size_t>(pooled) + 1];
    const std::int64_t k7 = cfg.preset == Preset::paper192 ? 27 : 1;
    total += k7 * w6 * w7 + w7; // block-7 conv (no batchnorm in block 7)
    return total;
}

// Decoder size plan: the encoder's spatial trajectory reversed, stopping
// short of the 1^3 bottleneck.
inline std::vector<int> decoder_sizes(const ModelConfig& cfg) {
    const auto shapes = infer_encoder_shapes(cfg);
    std::vector<int> sizes;
    for (const auto& s : shapes) {
        if (s.edge > 1 && (sizes.empty() || sizes.back() != s.edge)) sizes.push_back(s.edge);
    }
    if (cfg.preset == Preset::paper192) sizes.push_back(3); // pre-conv avgpool output
    std::sort(sizes.begin(), sizes.end());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    return sizes;
}

// Mirrored decoder channel plan: each upsample target reuses the encoder
// width at that spatial size; the input size keeps the first block's width
// and intermediate pool sizes fall back to the 1x1x1-conv block's width.
inline std::vector<int> derive_decoder_widths(const ModelConfig& cfg) {
    const auto shapes = infer_encoder_shapes(cfg);
    std::vector<int> widths;
    for (int s : decoder_sizes(cfg)) {
        int w = cfg.widths[static_cast<std::size_t>(cfg.pooled_blocks())];
        if (s == cfg.input_edge) {
            w = cfg.widths.front();
        } else {
            for (std::size_t i = 1; i < shapes.size(); ++i) {
                if (shapes[i].edge == s) {
                    w = shapes[i].channels;
                    break;
                }
            }
        }
        widths.push_back(w);
    }
    return widths;
}

// The 7-block 3D CNN with whichever heads the configured task needs.
// All parameters (and batchnorm running stats) live in one named store,
// which is exactly what VPXW checkpoints serialize.
template <typename T>
class Model {
  public:
    ModelConfig cfg;
    ParameterStore<T> params;

    static Model build(const ModelConfig& cfg, Rng& rng) {
        Model m;
        m.cfg = cfg;
        m.shapes_ = infer_encoder_shapes(cfg);
        std::int64_t in_ch = 1;
        const int pooled = cfg.pooled_blocks();
        for (int i = 0; i < pooled; ++i) {
            m.add_conv_block("enc.b" + std::to_string(i + 1),
                             cfg.widths[static_cast<std::size_t>(i)], in_ch, 3, rng, true);
            in_ch = cfg.widths[static_cast<std::size_t>(i)];
        }
        m.add_conv_block("enc.b6", cfg.widths[static_cast<std::size_t>(pooled)], in_ch, 1, rng,
                         true);
        in_ch = cfg.widths[static_cast<std::size_t>(pooled)];
        const int k7 = cfg.preset == Preset::paper192 ? 3 : 1;
        m.add_conv_block("enc.b7", cfg.widths[static_cast<std::size_t>(pooled) + 1], in_ch, k7,
                         rng, false);

        const std::int64_t repr = representation_dim(cfg);
        if (cfg.head == Task::age || cfg.head == Task::multihead) {
            m.params.add("age.fc.w", kaiming_normal<T>({1, repr}, repr, rng));
            m.params.add("age.fc.b", Tensor<T>({1}, T(0)));
            m.params.add("age.mu", Tensor<T>({1}, T(0)), false);
            m.params.add("age.sigma", Tensor<T>({1}, T(1)), false);
        }
        if (cfg.head == Task::rotation || cfg.head == Task::multihead) {
            m.params.add("rot.fc.w",
                         kaiming_normal<T>({cfg.rotation_classes, repr}, repr, rng));
            m.params.add("rot.fc.b", Tensor<T>({cfg.rotation_classes}, T(0)));
        }
        if (cfg.head == Task::reconstruction || cfg.head == Task::multihead) {
            const auto sizes = decoder_sizes(cfg);
            if (cfg.decoder_widths.size() != sizes.size()) {
                throw vpx::ConfigError("model: decoder needs " + std::to_string(sizes.size()) +
                                       " widths, got " +
                                       std::to_string(cfg.decoder_widths.size()));
            }
            std::int64_t ch = repr;
            for (std::size_t j = 0; j < sizes.size(); ++j) {
                const std::int64_t w = cfg.decoder_widths[j];
                const std::string name = "dec.u" + std::to_string(j);
                m.params.add(name + ".conv.w", kaiming_normal<T>({w, ch, 3, 3, 3}, ch * 27, rng));
                m.params.add(name + ".conv.b", Tensor<T>({w}, T(0)));
                m.params.add(name + ".bn.gamma", Tensor<T>({w}, T(1)));
                m.params.add(name + ".bn.beta", Tensor<T>({w}, T(0)));
                m.params.add(name + ".bn.running_mean", Tensor<T>({w}, T(0)), false);
                m.params.add(name + ".bn.running_var", Tensor<T>({w}, T(1)), false);
                ch = w;
            }
            m.params.add("dec.final.conv.w", kaiming_normal<T>({1, ch, 3, 3, 3}, ch * 27, rng));
            m.params.add("dec.final.conv.b", Tensor<T>({1}, T(0)));
        }
        return m;
    }

    // Encoder forward to the flattened representation [N, repr].
    Var<T> encode(const Var<T>& x, bool train, Rng* dropout_rng = nullptr) {
        if (x.value().rank() != 5 || x.value().dim(1) != 1 ||
            x.value().dim(2) != cfg.input_edge || x.value().dim(3) != cfg.input_edge ||
            x.value().dim(4) != cfg.input_edge) {
            throw vpx::ShapeError("encode: input must be [N,1," + std::to_string(cfg.input_edge) +
                                  "^3], got " + shape_str(x.value()));
        }
        Var<T> h = x;
        const int pooled = cfg.pooled_blocks();
        for (int i = 0; i < pooled; ++i) {
            const std::string name = "enc.b" + std::to_string(i + 1);
            h = conv3d(h, params.get(name + ".conv.w"), params.get(name + ".conv.b"), 1, 1);
            h = bn(name, h, train);
            h = maxpool3d(h, 2, 2);
            h = relu(h);
        }
        h = conv3d(h, params.get("enc.b6.conv.w"), params.get("enc.b6.conv.b"), 1, 0);
        h = bn("enc.b6", h, train);
        h = relu(h);
        // Block 7: average pool, dropout, conv, flatten.
        const int pool = cfg.preset == Preset::paper192
                             ? 2
                             : static_cast<int>(h.value().dim(2)); // global at desk scale
        h = avgpool3d(h, pool, pool);
        if (train && cfg.dropout_p > 0.0 && !dropout_rng) {
            throw vpx::ConfigError("encode: train mode requires a dropout rng");
        }
        static Rng unused_rng(0, stream::kDropout);
        h = dropout(h, cfg.dropout_p, dropout_rng ? *dropout_rng : unused_rng, train);
        h = conv3d(h, params.get("enc.b7.conv.w"), params.get("enc.b7.conv.b"), 1, 0);
        return flatten(h);
    }

    // Age head: linear read-out decoded through the stored target scaling,
    // so predictions are in years.
    Var<T> age_output(const Var<T>& repr) {
        require_head(Task::age, "age");
        Var<T> out = linear(repr, params.get("age.fc.w"), params.get("age.fc.b"));
        const T sigma = params.get("age.sigma").value()[0];
        const T mu = params.get("age.mu").value()[0];
        return scale_shift(out, sigma, mu);
    }

    void set_age_scale(double mu, double sigma) {
        require_head(Task::age, "age");
        params.get("age.mu").node()->value[0] = static_cast<T>(mu);
        params.get("age.sigma").node()->value[0] = static_cast<T>(sigma <= 0.0 ? 1.0 : sigma);
    }

    Var<T> rotation_logits(const Var<T>& repr) {
        require_head(Task::rotation, "rotation");
        return linear(repr, params.get("rot.fc.w"), params.get("rot.fc.b"));
    }

    // Decoder head: mirrored upsample blocks back to the input shape,
    // squashed onto [0,1].
    Var<T> reconstruct(const Var<T>& repr, bool train) {
        require_head(Task::reconstruction, "reconstruction");
        const std::int64_t n = repr.value().dim(0);
        Var<T> h = reshape(repr, {n, repr.value().dim(1), 1, 1, 1});
        const auto sizes = decoder_sizes(cfg);
        int cur = 1;
        for (std::size_t j = 0; j < sizes.size(); ++j) {
            const std::string name = "dec.u" + std::to_string(j);
            h = upsample_nearest3d(h, sizes[j] / cur);
            cur = sizes[j];
            h = conv3d(h, params.get(name + ".conv.w"), params.get(name + ".conv.b"), 1, 1);
            h = bn(name, h, train);
            h = relu(h);
        }
        h = conv3d(h, params.get("dec.final.conv.w"), params.get("dec.final.conv.b"), 1, 1);
        return sigmoid(h);
    }

    std::int64_t encoder_param_count() const { return params.trainable_count_prefix("enc."); }

    const std::vector<StageShape>& stage_shapes() const { return shapes_; }

  private:
    std::vector<StageShape> shapes_;

    void add_conv_block(const std::string& name, std::int64_t width, std::int64_t in_ch,
                        int kernel, Rng& rng, bool with_bn) {
        const std::int64_t kvol = static_cast<std::int64_t>(kernel) * kernel * kernel;
        params.add(name + ".conv.w",
                   kaiming_normal<T>({width, in_ch, kernel, kernel, kernel}, in_ch * kvol, rng));
        params.add(name + ".conv.b", Tensor<T>({width}, T(0)));
        if (with_bn) {
            params.add(name + ".bn.gamma", Tensor<T>({width}, T(1)));
            params.add(name + ".bn.beta", Tensor<T>({width}, T(0)));
            params.add(name + ".bn.running_mean", Tensor<T>({width}, T(0)), false);
            params.add(name + ".bn.running_var", Tensor<T>({width}, T(1)), false);
        }
    }

    Var<T> bn(const std::string& name, const Var<T>& h, bool train) {
        return batchnorm3d(h, params.get(name + ".bn.gamma"), params.get(name + ".bn.beta"),
                           params.get(name + ".bn.running_mean"),
                           params.get(name + ".bn.running_var"), train);
    }

    void require_head(Task t, const char* what) const {
        if (cfg.head != t && cfg.head != Task::multihead) {
            throw vpx::ConfigError(std::string("model: configured task '") +
                                   task_name(cfg.head) + "' has no " + what + " head");
        }
    }
};

// Eval-mode representation extraction: dropout off, batchnorm running stats.
template <typename T>
std::vector<std::vector<T>> extract_representation(Model<T>& model,
                                                   const std::vector<const prep::Volume*>& batch) {
    if (batch.empty()) return {};
    const int e = model.cfg.input_edge;
    for (const auto* v : batch) {
        if (v->dims[0] != e || v->dims[1] != e || v->dims[2] != e) {
            throw vpx::ShapeError("extract: volume " + std::to_string(v->dims[0]) +
                                  "^3 does not match model edge " + std::to_string(e));
        }
    }
    const std::int64_t n = static_cast<std::int64_t>(batch.size());
    Tensor<T> input({n, 1, e, e, e});
    for (std::int64_t b = 0; b < n; ++b) {
        const auto& vox = batch[static_cast<std::size_t>(b)]->voxels;
        T* dst = input.ptr() + b * static_cast<std::int64_t>(vox.size());
        for (std::size_t i = 0; i < vox.size(); ++i) dst[i] = static_cast<T>(vox[i]);
    }
    Var<T> x = Var<T>::leaf(std::move(input));
    Var<T> repr = model.encode(x, false);
    const std::int64_t dim = repr.value().dim(1);
    std::vector<std::vector<T>> out(static_cast<std::size_t>(n));
    for (std::int64_t b = 0; b < n; ++b) {
        out[static_cast<std::size_t>(b)].assign(repr.value().ptr() + b * dim,
                                                repr.value().ptr() + (b + 1) * dim);
    }
    return out;
}

// --- ModelConfig JSON sidecar --------------------------------------------

inline nlohmann::json model_config_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["preset"] = preset_name(cfg.preset);
    j["input_edge"] = cfg.input_edge;
    j["widths"] = cfg.widths;
    j["decoder_widths"] = cfg.decoder_widths;
    j["dropout_p"] = cfg.dropout_p;
    j["head"] = task_name(cfg.head);
    j["rotation_classes"] = cfg.rotation_classes;
    j["representation_dim"] = representation_dim(cfg);
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.preset = preset_from_name(j.at("preset").get<std::string>());
    cfg.input_edge = j.at("input_edge").get<int>();
    cfg.widths = j.at("widths").get<std::vector<int>>();
    cfg.decoder_widths = j.at("decoder_widths").get<std::vector<int>>();
    cfg.dropout_p = j.at("dropout_p").get<double>();
    cfg.head = task_from_name(j.at("head").get<std::string>());
    cfg.rotation_classes = j.at("rotation_classes").get<int>();
    cfg.validate();
    return cfg;
}

inline void write_model_config(const ModelConfig& cfg, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw vpx::DataError("model config: cannot open '" + path + "' for writing");
    f << model_config_json(cfg).dump(2) << "\n";
}

inline ModelConfig read_model_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw vpx::DataError("model config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw vpx::DataError("model config: " + std::string(e.what()));
    }
    return model_config_from_json(j);
}

} // namespace vpx::model
