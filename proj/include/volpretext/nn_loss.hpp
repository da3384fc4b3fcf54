#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "volpretext/autograd.hpp"

namespace vpx {

// Mean squared error against a constant target of identical shape.
template <typename T>
Var<T> mse_loss(const Var<T>& prediction, const Tensor<T>& target) {
    const auto& p = prediction.value();
    if (p.shape != target.shape) {
        throw ShapeError("mse_loss: prediction " + shape_str(p) + " vs target " +
                         shape_str(target));
    }
    const std::int64_t n = p.numel();
    if (n == 0) throw ShapeError("mse_loss: empty tensors");
    T acc = T(0);
    for (std::int64_t i = 0; i < n; ++i) {
        const T d = p[i] - target[i];
        acc += d * d;
    }
    Tensor<T> out({1});
    out[0] = acc / static_cast<T>(n);
    check_finite(out, "mse_loss");
    auto res = make_op_node<T>(std::move(out), {prediction.node()});
    if (res.requires_grad()) {
        auto p_n = prediction.node();
        auto tgt = std::make_shared<Tensor<T>>(target);
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [p_n, tgt, self, n] {
            const T g = self->grad[0] * T(2) / static_cast<T>(n);
            Tensor<T>& gin = p_n->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                gin[i] += g * (p_n->value[i] - (*tgt)[i]);
            }
        };
    }
    return res;
}

// Plain softmax over the last axis of a [N,K] tensor (no autograd; used for
// predictions and property checks).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax: input rank != 2");
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    Tensor<T> out(logits.shape);
    for (std::int64_t i = 0; i < n; ++i) {
        const T* z = logits.ptr() + i * k;
        T* q = out.ptr() + i * k;
        T mx = z[0];
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, z[j]);
        T denom = T(0);
        for (std::int64_t j = 0; j < k; ++j) {
            q[j] = std::exp(z[j] - mx);
            denom += q[j];
        }
        for (std::int64_t j = 0; j < k; ++j) q[j] /= denom;
    }
    return out;
}

// Softmax + negative log likelihood with max-subtraction stabilization.
// logits [N,K], labels are class indices in [0,K).
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::int64_t>& labels) {
    const auto& z = logits.value();
    if (z.rank() != 2) throw ShapeError("cross_entropy: logits rank != 2");
    const std::int64_t n = z.dim(0), k = z.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw ShapeError("cross_entropy: batch axis mismatch, logits N=" + std::to_string(n) +
                         " labels N=" + std::to_string(labels.size()));
    }
    for (std::int64_t i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] < 0 ||
            labels[static_cast<std::size_t>(i)] >= k) {
            throw DataError("cross_entropy: label " +
                            std::to_string(labels[static_cast<std::size_t>(i)]) +
                            " outside [0," + std::to_string(k) + ")");
        }
    }
    auto probs = std::make_shared<Tensor<T>>(softmax(z));
    T acc = T(0);
    for (std::int64_t i = 0; i < n; ++i) {
        const T* z_row = z.ptr() + i * k;
        T mx = z_row[0];
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, z_row[j]);
        T denom = T(0);
        for (std::int64_t j = 0; j < k; ++j) denom += std::exp(z_row[j] - mx);
        acc += std::log(denom) - (z_row[labels[static_cast<std::size_t>(i)]] - mx);
    }
    Tensor<T> out({1});
    out[0] = acc / static_cast<T>(n);
    check_finite(out, "cross_entropy");
    auto res = make_op_node<T>(std::move(out), {logits.node()});
    if (res.requires_grad()) {
        auto z_n = logits.node();
        auto lbl = std::make_shared<std::vector<std::int64_t>>(labels);
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [z_n, lbl, probs, self, n, k] {
            const T g = self->grad[0] / static_cast<T>(n);
            Tensor<T>& gin = z_n->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                const T* p = probs->ptr() + i * k;
                T* gz = gin.ptr() + i * k;
                const std::int64_t y = (*lbl)[static_cast<std::size_t>(i)];
                for (std::int64_t j = 0; j < k; ++j) {
                    gz[j] += g * (p[j] - (j == y ? T(1) : T(0)));
                }
            }
        };
    }
    return res;
}

} // namespace vpx
