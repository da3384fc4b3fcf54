#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "volpretext/params.hpp"

namespace vpx {

struct GradCheckBlock {
    std::string name;
    double max_rel_err;
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;
    double max_rel_err = 0.0;

    bool within(double tol) const { return max_rel_err <= tol; }
};

// Central-difference verification of reverse-mode gradients at 64-bit.
// `build` must reconstruct the full forward graph from the store's current
// values and return the scalar loss; it is invoked 2*P + 1 times. Relative
// error is |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckReport grad_check(ParameterStore<double>& store,
                                  const std::function<Var<double>(ParameterStore<double>&)>& build,
                                  double h = 1e-5) {
    const std::int64_t total = store.trainable_count();
    if (total >= 10000) {
        throw ParamError("grad_check: " + std::to_string(total) +
                         " parameters is too many for central differences (< 10^4)");
    }

    store.zero_grad();
    Var<double> loss = build(store);
    loss.backward();

    std::vector<Tensor<double>> analytic;
    analytic.reserve(store.entries().size());
    for (const auto& e : store.entries()) {
        if (e.trainable && e.node->grad.shape == e.node->value.shape) {
            analytic.push_back(e.node->grad);
        } else {
            analytic.push_back(Tensor<double>(e.node->value.shape, 0.0));
        }
    }

    GradCheckReport report;
    for (std::size_t p = 0; p < store.entries().size(); ++p) {
        const auto& e = store.entries()[p];
        if (!e.trainable) continue;
        GradCheckBlock block{e.name, 0.0};
        for (std::int64_t i = 0; i < e.node->value.numel(); ++i) {
            const double saved = e.node->value[i];
            e.node->value[i] = saved + h;
            const double f_plus = build(store).value()[0];
            e.node->value[i] = saved - h;
            const double f_minus = build(store).value()[0];
            e.node->value[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double a = analytic[p][i];
            const double rel =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            block.max_rel_err = std::max(block.max_rel_err, rel);
        }
        report.max_rel_err = std::max(report.max_rel_err, block.max_rel_err);
        report.blocks.push_back(std::move(block));
    }
    return report;
}

} // namespace vpx
