#pragma once

#include <cmath>
#include <cstdint>
#include <memory>

#include "volpretext/autograd.hpp"

namespace vpx {

// Per-channel batch normalization over [N,C,D,H,W]. Train mode normalizes
// with batch statistics (biased variance), folds them into the running
// stats (running_var keeps the unbiased estimate), and backpropagates
// through the normalization itself. Eval mode treats the running stats as
// constants. The stats are plain non-trainable leaves so they travel with
// checkpoints.
template <typename T>
Var<T> batchnorm3d(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                   const Var<T>& running_mean, const Var<T>& running_var, bool train,
                   double momentum = 0.1, double epsilon = 1e-5) {
    const auto& in = input.value();
    if (in.rank() != 5) throw ShapeError("batchnorm3d: input rank != 5");
    const std::int64_t n = in.dim(0), c = in.dim(1);
    const std::int64_t spatial = in.dim(2) * in.dim(3) * in.dim(4);
    if (gamma.value().rank() != 1 || gamma.value().dim(0) != c ||
        beta.value().rank() != 1 || beta.value().dim(0) != c) {
        throw ShapeError("batchnorm3d: gamma/beta axis 0 must equal C=" + std::to_string(c));
    }
    if (running_mean.value().dim(0) != c || running_var.value().dim(0) != c) {
        throw ShapeError("batchnorm3d: running stats axis 0 must equal C=" + std::to_string(c));
    }
    const std::int64_t m = n * spatial; // elements per channel
    if (train && m < 2) {
        throw DataError("batchnorm3d: degenerate batch, " + std::to_string(m) +
                        " element(s) per channel in train mode");
    }
    const T eps = static_cast<T>(epsilon);

    Tensor<T>& rmean = running_mean.node()->value;
    Tensor<T>& rvar = running_var.node()->value;

    Tensor<T> out(in.shape);
    auto mean_used = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{c});
    auto invstd_used = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{c});
    for (std::int64_t ch = 0; ch < c; ++ch) {
        T mu, v;
        if (train) {
            T acc = T(0);
            for (std::int64_t b = 0; b < n; ++b) {
                const T* p = in.ptr() + (b * c + ch) * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) acc += p[i];
            }
            mu = acc / static_cast<T>(m);
            T vacc = T(0);
            for (std::int64_t b = 0; b < n; ++b) {
                const T* p = in.ptr() + (b * c + ch) * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) {
                    const T d = p[i] - mu;
                    vacc += d * d;
                }
            }
            v = vacc / static_cast<T>(m);
            const T mom = static_cast<T>(momentum);
            const T unbiased = m > 1 ? vacc / static_cast<T>(m - 1) : v;
            rmean[ch] = (T(1) - mom) * rmean[ch] + mom * mu;
            rvar[ch] = (T(1) - mom) * rvar[ch] + mom * unbiased;
        } else {
            mu = rmean[ch];
            v = rvar[ch];
        }
        const T invstd = T(1) / std::sqrt(v + eps);
        (*mean_used)[ch] = mu;
        (*invstd_used)[ch] = invstd;
        const T g = gamma.value()[ch];
        const T bta = beta.value()[ch];
        for (std::int64_t b = 0; b < n; ++b) {
            const T* p = in.ptr() + (b * c + ch) * spatial;
            T* q = out.ptr() + (b * c + ch) * spatial;
            for (std::int64_t i = 0; i < spatial; ++i) {
                q[i] = (p[i] - mu) * invstd * g + bta;
            }
        }
    }
    check_finite(out, "batchnorm3d");
    auto res = make_op_node<T>(std::move(out), {input.node(), gamma.node(), beta.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        auto g_n = gamma.node();
        auto b_n = beta.node();
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [in_n, g_n, b_n, self, mean_used, invstd_used, n, c, spatial,
                                   m, train] {
            const Tensor<T>& gout = self->grad;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const T mu = (*mean_used)[ch];
                const T invstd = (*invstd_used)[ch];
                const T g = g_n->value[ch];
                // Channel reductions shared by every input term.
                T sum_gy = T(0);
                T sum_gy_xhat = T(0);
                for (std::int64_t b = 0; b < n; ++b) {
                    const T* gy = gout.ptr() + (b * c + ch) * spatial;
                    const T* x = in_n->value.ptr() + (b * c + ch) * spatial;
                    for (std::int64_t i = 0; i < spatial; ++i) {
                        sum_gy += gy[i];
                        sum_gy_xhat += gy[i] * (x[i] - mu) * invstd;
                    }
                }
                if (g_n->requires_grad) g_n->ensure_grad()[ch] += sum_gy_xhat;
                if (b_n->requires_grad) b_n->ensure_grad()[ch] += sum_gy;
                if (in_n->requires_grad) {
                    Tensor<T>& gin = in_n->ensure_grad();
                    if (train) {
                        const T inv_m = T(1) / static_cast<T>(m);
                        for (std::int64_t b = 0; b < n; ++b) {
                            const T* gy = gout.ptr() + (b * c + ch) * spatial;
                            const T* x = in_n->value.ptr() + (b * c + ch) * spatial;
                            T* gx = gin.ptr() + (b * c + ch) * spatial;
                            for (std::int64_t i = 0; i < spatial; ++i) {
                                const T xhat = (x[i] - mu) * invstd;
                                gx[i] += g * invstd *
                                         (gy[i] - inv_m * sum_gy - inv_m * xhat * sum_gy_xhat);
                            }
                        }
                    } else {
                        for (std::int64_t b = 0; b < n; ++b) {
                            const T* gy = gout.ptr() + (b * c + ch) * spatial;
                            T* gx = gin.ptr() + (b * c + ch) * spatial;
                            for (std::int64_t i = 0; i < spatial; ++i) {
                                gx[i] += gy[i] * g * invstd;
                            }
                        }
                    }
                }
            }
        };
    }
    return res;
}

} // namespace vpx
