#pragma once

#include <algorithm>
#include <cstdint>
#include <utility>

#include "volpretext/autograd.hpp"
#include "volpretext/parallel.hpp"
#include "volpretext/rng.hpp"

namespace vpx {

namespace detail {

template <typename T>
void pool_check(const Tensor<T>& input, int kernel, const char* op) {
    if (input.rank() != 5) {
        throw ShapeError(std::string(op) + ": input rank " + std::to_string(input.rank()) +
                         " != 5");
    }
    const char* axes[3] = {"D", "H", "W"};
    for (int a = 0; a < 3; ++a) {
        if (input.dim(2 + a) < kernel) {
            throw ShapeError(std::string(op) + ": spatial axis " + axes[a] + " extent " +
                             std::to_string(input.dim(2 + a)) + " < kernel " +
                             std::to_string(kernel));
        }
    }
}

} // namespace detail

// Windowed max with stride == kernel; output extent is floor(E/stride).
// Backward routes each output gradient to its argmax voxel; ties break to
// the lowest linear index.
template <typename T>
Var<T> maxpool3d(const Var<T>& input, int kernel = 2, int stride = 2) {
    if (kernel < 1 || stride < 1) throw ParamError("maxpool3d: kernel/stride must be >= 1");
    if (stride != kernel) throw ParamError("maxpool3d: stride must equal kernel");
    detail::pool_check(input.value(), kernel, "maxpool3d");
    const auto& in = input.value();
    const std::int64_t n = in.dim(0), ch = in.dim(1);
    const std::int64_t d = in.dim(2), h = in.dim(3), w = in.dim(4);
    const std::int64_t od = d / stride, oh = h / stride, ow = w / stride;
    Tensor<T> out({n, ch, od, oh, ow});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(out.numel()));
    const T* ip = in.ptr();
    T* op = out.ptr();
    std::int64_t* amp = argmax->data();
    parallel_for(n * ch, [&](std::int64_t job) {
        const std::int64_t in_base = job * d * h * w;
        const std::int64_t out_base = job * od * oh * ow;
        for (std::int64_t z = 0; z < od; ++z) {
            for (std::int64_t y = 0; y < oh; ++y) {
                for (std::int64_t x = 0; x < ow; ++x) {
                    T best{};
                    std::int64_t best_idx = -1;
                    for (std::int64_t kz = 0; kz < kernel; ++kz) {
                        for (std::int64_t ky = 0; ky < kernel; ++ky) {
                            for (std::int64_t kx = 0; kx < kernel; ++kx) {
                                const std::int64_t idx =
                                    in_base + ((z * stride + kz) * h + y * stride + ky) * w +
                                    x * stride + kx;
                                if (best_idx < 0 || ip[idx] > best) {
                                    best = ip[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    const std::int64_t o = out_base + (z * oh + y) * ow + x;
                    op[o] = best;
                    amp[o] = best_idx;
                }
            }
        }
    });
    check_finite(out, "maxpool3d");
    auto res = make_op_node<T>(std::move(out), {input.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [in_n, self, argmax] {
            Tensor<T>& gin = in_n->ensure_grad();
            const Tensor<T>& gout = self->grad;
            for (std::int64_t i = 0; i < gout.numel(); ++i) {
                gin[(*argmax)[static_cast<std::size_t>(i)]] += gout[i];
            }
        };
    }
    return res;
}

// Window mean with stride == kernel; backward spreads each output gradient
// uniformly over its window.
template <typename T>
Var<T> avgpool3d(const Var<T>& input, int kernel = 2, int stride = 2) {
    if (kernel < 1 || stride < 1) throw ParamError("avgpool3d: kernel/stride must be >= 1");
    if (stride != kernel) throw ParamError("avgpool3d: stride must equal kernel");
    detail::pool_check(input.value(), kernel, "avgpool3d");
    const auto& in = input.value();
    const std::int64_t n = in.dim(0), ch = in.dim(1);
    const std::int64_t d = in.dim(2), h = in.dim(3), w = in.dim(4);
    const std::int64_t od = d / stride, oh = h / stride, ow = w / stride;
    const T inv = T(1) / static_cast<T>(kernel * kernel * kernel);
    Tensor<T> out({n, ch, od, oh, ow});
    const T* ip = in.ptr();
    T* op = out.ptr();
    parallel_for(n * ch, [&](std::int64_t job) {
        const std::int64_t in_base = job * d * h * w;
        const std::int64_t out_base = job * od * oh * ow;
        for (std::int64_t z = 0; z < od; ++z) {
            for (std::int64_t y = 0; y < oh; ++y) {
                for (std::int64_t x = 0; x < ow; ++x) {
                    T acc = T(0);
                    for (std::int64_t kz = 0; kz < kernel; ++kz) {
                        for (std::int64_t ky = 0; ky < kernel; ++ky) {
                            for (std::int64_t kx = 0; kx < kernel; ++kx) {
                                acc += ip[in_base +
                                          ((z * stride + kz) * h + y * stride + ky) * w +
                                          x * stride + kx];
                            }
                        }
                    }
                    op[out_base + (z * oh + y) * ow + x] = acc * inv;
                }
            }
        }
    });
    check_finite(out, "avgpool3d");
    auto res = make_op_node<T>(std::move(out), {input.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        Node<T>* self = res.node().get();
        const std::int64_t sd = d, sh = h, sw = w;
        res.node()->backward_fn = [in_n, self, kernel, stride, sd, sh, sw, od, oh, ow, inv] {
            Tensor<T>& gin = in_n->ensure_grad();
            const Tensor<T>& gout = self->grad;
            const std::int64_t planes = gout.dim(0) * gout.dim(1);
            for (std::int64_t job = 0; job < planes; ++job) {
                const std::int64_t in_base = job * sd * sh * sw;
                const std::int64_t out_base = job * od * oh * ow;
                for (std::int64_t z = 0; z < od; ++z) {
                    for (std::int64_t y = 0; y < oh; ++y) {
                        for (std::int64_t x = 0; x < ow; ++x) {
                            const T g = gout[out_base + (z * oh + y) * ow + x] * inv;
                            for (std::int64_t kz = 0; kz < kernel; ++kz) {
                                for (std::int64_t ky = 0; ky < kernel; ++ky) {
                                    for (std::int64_t kx = 0; kx < kernel; ++kx) {
                                        gin[in_base +
                                            ((z * stride + kz) * sh + y * stride + ky) * sw +
                                            x * stride + kx] += g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return res;
}

// max(x, 0); subgradient 0 at 0.
template <typename T>
Var<T> relu(const Var<T>& input) {
    const auto& in = input.value();
    Tensor<T> out(in.shape);
    for (std::int64_t i = 0; i < in.numel(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
    auto res = make_op_node<T>(std::move(out), {input.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [in_n, self] {
            Tensor<T>& gin = in_n->ensure_grad();
            const Tensor<T>& gout = self->grad;
            for (std::int64_t i = 0; i < gout.numel(); ++i) {
                if (in_n->value[i] > T(0)) gin[i] += gout[i];
            }
        };
    }
    return res;
}

// Numerically stable logistic squash onto (0, 1).
template <typename T>
Var<T> sigmoid(const Var<T>& input) {
    const auto& in = input.value();
    Tensor<T> out(in.shape);
    for (std::int64_t i = 0; i < in.numel(); ++i) {
        const T x = in[i];
        if (x >= T(0)) {
            out[i] = T(1) / (T(1) + std::exp(-x));
        } else {
            const T e = std::exp(x);
            out[i] = e / (T(1) + e);
        }
    }
    check_finite(out, "sigmoid");
    auto res = make_op_node<T>(std::move(out), {input.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [in_n, self] {
            Tensor<T>& gin = in_n->ensure_grad();
            const Tensor<T>& y = self->value;
            const Tensor<T>& gout = self->grad;
            for (std::int64_t i = 0; i < gout.numel(); ++i) {
                gin[i] += gout[i] * y[i] * (T(1) - y[i]);
            }
        };
    }
    return res;
}

// Train mode: zero with probability p, scale survivors by 1/(1-p), mask drawn
// from rng. Eval mode: identity (consumes no draws).
template <typename T>
Var<T> dropout(const Var<T>& input, double p, Rng& rng, bool train) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ParamError("dropout: rate " + std::to_string(p) + " outside [0,1)");
    }
    const auto& in = input.value();
    if (!train || p == 0.0) {
        Tensor<T> out = in;
        auto res = make_op_node<T>(std::move(out), {input.node()});
        if (res.requires_grad()) {
            auto in_n = input.node();
            Node<T>* self = res.node().get();
            res.node()->backward_fn = [in_n, self] {
                Tensor<T>& gin = in_n->ensure_grad();
                const Tensor<T>& gout = self->grad;
                for (std::int64_t i = 0; i < gout.numel(); ++i) gin[i] += gout[i];
            };
        }
        return res;
    }
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<std::uint8_t>>(
        static_cast<std::size_t>(in.numel()));
    Tensor<T> out(in.shape);
    for (std::int64_t i = 0; i < in.numel(); ++i) {
        const bool keep = rng.next_double() >= p;
        (*mask)[static_cast<std::size_t>(i)] = keep ? 1 : 0;
        out[i] = keep ? in[i] * scale : T(0);
    }
    auto res = make_op_node<T>(std::move(out), {input.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [in_n, self, mask, scale] {
            Tensor<T>& gin = in_n->ensure_grad();
            const Tensor<T>& gout = self->grad;
            for (std::int64_t i = 0; i < gout.numel(); ++i) {
                if ((*mask)[static_cast<std::size_t>(i)]) gin[i] += gout[i] * scale;
            }
        };
    }
    return res;
}

// Same buffer, new extents; backward restores the original layout.
template <typename T>
Var<T> reshape(const Var<T>& input, std::vector<std::int64_t> new_shape) {
    const auto& in = input.value();
    if (Tensor<T>::count(new_shape) != in.numel()) {
        throw ShapeError("reshape: element count mismatch, " + shape_str(in) + " vs target");
    }
    Tensor<T> out = in;
    out.shape = std::move(new_shape);
    auto res = make_op_node<T>(std::move(out), {input.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [in_n, self] {
            Tensor<T>& gin = in_n->ensure_grad();
            const Tensor<T>& gout = self->grad;
            for (std::int64_t i = 0; i < gout.numel(); ++i) gin[i] += gout[i];
        };
    }
    return res;
}

// [N, ...] -> [N, product of the rest].
template <typename T>
Var<T> flatten(const Var<T>& input) {
    const auto& in = input.value();
    if (in.rank() < 2) throw ShapeError("flatten: input rank must be >= 2");
    Tensor<T> out = in;
    out.shape = {in.dim(0), in.numel() / in.dim(0)};
    auto res = make_op_node<T>(std::move(out), {input.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [in_n, self] {
            Tensor<T>& gin = in_n->ensure_grad();
            const Tensor<T>& gout = self->grad;
            for (std::int64_t i = 0; i < gout.numel(); ++i) gin[i] += gout[i];
        };
    }
    return res;
}

// Affine map: input [N,F], weight [O,F], bias [O] -> [N,O].
template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
    const auto& in = input.value();
    const auto& w = weight.value();
    const auto& b = bias.value();
    if (in.rank() != 2) throw ShapeError("linear: input rank != 2");
    if (w.rank() != 2) throw ShapeError("linear: weight rank != 2");
    if (w.dim(1) != in.dim(1)) {
        throw ShapeError("linear: feature axis mismatch, input F=" + std::to_string(in.dim(1)) +
                         " weight F=" + std::to_string(w.dim(1)));
    }
    if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
        throw ShapeError("linear: bias axis 0 must equal O=" + std::to_string(w.dim(0)));
    }
    const std::int64_t n = in.dim(0), f = in.dim(1), o = w.dim(0);
    Tensor<T> out({n, o});
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < o; ++j) {
            T acc = b[j];
            const T* xr = in.ptr() + i * f;
            const T* wr = w.ptr() + j * f;
            for (std::int64_t t = 0; t < f; ++t) acc += xr[t] * wr[t];
            out[i * o + j] = acc;
        }
    }
    check_finite(out, "linear");
    auto res = make_op_node<T>(std::move(out), {input.node(), weight.node(), bias.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        auto w_n = weight.node();
        auto b_n = bias.node();
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [in_n, w_n, b_n, self, n, f, o] {
            const Tensor<T>& gout = self->grad;
            if (in_n->requires_grad) {
                Tensor<T>& gin = in_n->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    for (std::int64_t j = 0; j < o; ++j) {
                        const T g = gout[i * o + j];
                        const T* wr = w_n->value.ptr() + j * f;
                        T* gr = gin.ptr() + i * f;
                        for (std::int64_t t = 0; t < f; ++t) gr[t] += g * wr[t];
                    }
                }
            }
            if (w_n->requires_grad || b_n->requires_grad) {
                Tensor<T>& gw = w_n->ensure_grad();
                Tensor<T>& gb = b_n->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    for (std::int64_t j = 0; j < o; ++j) {
                        const T g = gout[i * o + j];
                        gb[j] += g;
                        const T* xr = in_n->value.ptr() + i * f;
                        T* gwr = gw.ptr() + j * f;
                        for (std::int64_t t = 0; t < f; ++t) gwr[t] += g * xr[t];
                    }
                }
            }
        };
    }
    return res;
}

// Nearest-neighbour upsample by an integer factor per spatial axis.
template <typename T>
Var<T> upsample_nearest3d(const Var<T>& input, int factor) {
    if (factor < 1) throw ParamError("upsample_nearest3d: factor must be >= 1");
    const auto& in = input.value();
    if (in.rank() != 5) throw ShapeError("upsample_nearest3d: input rank != 5");
    const std::int64_t n = in.dim(0), ch = in.dim(1);
    const std::int64_t d = in.dim(2), h = in.dim(3), w = in.dim(4);
    const std::int64_t od = d * factor, oh = h * factor, ow = w * factor;
    Tensor<T> out({n, ch, od, oh, ow});
    const T* ip = in.ptr();
    T* op = out.ptr();
    parallel_for(n * ch, [&](std::int64_t job) {
        const std::int64_t in_base = job * d * h * w;
        const std::int64_t out_base = job * od * oh * ow;
        for (std::int64_t z = 0; z < od; ++z) {
            for (std::int64_t y = 0; y < oh; ++y) {
                const std::int64_t row_in = in_base + ((z / factor) * h + y / factor) * w;
                T* row_out = op + out_base + (z * oh + y) * ow;
                for (std::int64_t x = 0; x < ow; ++x) row_out[x] = ip[row_in + x / factor];
            }
        }
    });
    auto res = make_op_node<T>(std::move(out), {input.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [in_n, self, factor, d, h, w, od, oh, ow] {
            Tensor<T>& gin = in_n->ensure_grad();
            const Tensor<T>& gout = self->grad;
            const std::int64_t planes = gout.dim(0) * gout.dim(1);
            for (std::int64_t job = 0; job < planes; ++job) {
                const std::int64_t in_base = job * d * h * w;
                const std::int64_t out_base = job * od * oh * ow;
                for (std::int64_t z = 0; z < od; ++z) {
                    for (std::int64_t y = 0; y < oh; ++y) {
                        const std::int64_t row_in = in_base + ((z / factor) * h + y / factor) * w;
                        const T* row_out = gout.ptr() + out_base + (z * oh + y) * ow;
                        for (std::int64_t x = 0; x < ow; ++x) {
                            gin[row_in + x / factor] += row_out[x];
                        }
                    }
                }
            }
        };
    }
    return res;
}

// y = a*x + b with plain scalar constants (no learnable parameters).
template <typename T>
Var<T> scale_shift(const Var<T>& input, T a, T b) {
    const auto& in = input.value();
    Tensor<T> out(in.shape);
    for (std::int64_t i = 0; i < in.numel(); ++i) out[i] = a * in[i] + b;
    check_finite(out, "scale_shift");
    auto res = make_op_node<T>(std::move(out), {input.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [in_n, self, a] {
            Tensor<T>& gin = in_n->ensure_grad();
            const Tensor<T>& gout = self->grad;
            for (std::int64_t i = 0; i < gout.numel(); ++i) gin[i] += gout[i] * a;
        };
    }
    return res;
}

} // namespace vpx
