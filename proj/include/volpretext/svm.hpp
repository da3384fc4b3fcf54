#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volpretext/errors.hpp"
#include "volpretext/rng.hpp"

namespace vpx::eval {

// L2-regularized hinge loss minimized by Pegasos-style seeded SGD: fixed
// epoch count, fixed shuffle per seed, lambda = 1/(C*n). Deterministic for
// a given (data, config).
struct SvmConfig {
    double C = 1.0;
    int epochs = 200;
    std::uint64_t seed = 0;
};

struct LinearSvm {
    std::vector<double> w;
    double b = 0.0;

    double decision(const std::vector<double>& x) const {
        double s = b;
        for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
        return s;
    }

    int predict(const std::vector<double>& x) const { return decision(x) > 0.0 ? 1 : 0; }
};

inline LinearSvm train_linear_svm(const std::vector<std::vector<double>>& features,
                                  const std::vector<int>& labels, const SvmConfig& cfg = {}) {
    const std::size_t n = features.size();
    if (n == 0 || labels.size() != n) {
        throw vpx::ParamError("svm: features/labels length mismatch");
    }
    bool has_pos = false, has_neg = false;
    for (int y : labels) {
        (y == 1 ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
        throw vpx::DataError("svm: degenerate training data, a single class present");
    }
    const std::size_t d = features[0].size();
    for (const auto& row : features) {
        if (row.size() != d) throw vpx::ParamError("svm: ragged feature rows");
    }
    if (!(cfg.C > 0.0)) throw vpx::ParamError("svm: C must be > 0");

    const double lambda = 1.0 / (cfg.C * static_cast<double>(n));
    LinearSvm model;
    model.w.assign(d, 0.0);
    Rng rng(cfg.seed, stream::kSvm);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::int64_t t = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        for (std::size_t pick : order) {
            ++t;
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            const double y = labels[pick] == 1 ? 1.0 : -1.0;
            const auto& x = features[pick];
            const double margin = y * model.decision(x);
            const double shrink = 1.0 - eta * lambda;
            for (auto& wi : model.w) wi *= shrink;
            if (margin < 1.0) {
                const double coef = eta * y;
                for (std::size_t i = 0; i < d; ++i) model.w[i] += coef * x[i];
                model.b += coef;
            }
        }
    }
    return model;
}

} // namespace vpx::eval
