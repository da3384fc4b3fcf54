#pragma once

#include <algorithm>
#include <cstdint>

#include "volpretext/autograd.hpp"
#include "volpretext/parallel.hpp"

namespace vpx {

namespace detail {

struct ConvDims {
    std::int64_t n, cin, d, h, w;
    std::int64_t cout, k;
    std::int64_t od, oh, ow;
    int stride, padding;
};

inline std::int64_t conv_out_extent(std::int64_t in, int padding, std::int64_t k, int stride) {
    return (in + 2 * static_cast<std::int64_t>(padding) - k) / stride + 1;
}

template <typename T>
ConvDims conv_check(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                    int stride, int padding) {
    if (input.rank() != 5) {
        throw ShapeError("conv3d: input rank " + std::to_string(input.rank()) +
                         " != 5 (want [N,Cin,D,H,W])");
    }
    if (weight.rank() != 5) {
        throw ShapeError("conv3d: weight rank " + std::to_string(weight.rank()) +
                         " != 5 (want [Cout,Cin,k,k,k])");
    }
    const std::int64_t k = weight.dim(2);
    if (k != 1 && k != 3) {
        throw ParamError("conv3d: kernel extent " + std::to_string(k) + " not in {1,3}");
    }
    if (weight.dim(3) != k || weight.dim(4) != k) {
        throw ShapeError("conv3d: kernel is not cubic on axes 2..4");
    }
    if (weight.dim(1) != input.dim(1)) {
        throw ShapeError("conv3d: channel axis mismatch, input Cin=" +
                         std::to_string(input.dim(1)) + " weight Cin=" +
                         std::to_string(weight.dim(1)));
    }
    if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
        throw ShapeError("conv3d: bias axis 0 must equal Cout=" + std::to_string(weight.dim(0)));
    }
    if (stride < 1) throw ParamError("conv3d: stride must be >= 1");
    if (padding < 0) throw ParamError("conv3d: padding must be >= 0");
    ConvDims cd;
    cd.n = input.dim(0);
    cd.cin = input.dim(1);
    cd.d = input.dim(2);
    cd.h = input.dim(3);
    cd.w = input.dim(4);
    cd.cout = weight.dim(0);
    cd.k = k;
    cd.stride = stride;
    cd.padding = padding;
    const char* axes[3] = {"D", "H", "W"};
    const std::int64_t in_sp[3] = {cd.d, cd.h, cd.w};
    for (int a = 0; a < 3; ++a) {
        if (in_sp[a] + 2 * padding < k) {
            throw ShapeError(std::string("conv3d: padded axis ") + axes[a] + " extent " +
                             std::to_string(in_sp[a] + 2 * padding) + " < kernel " +
                             std::to_string(k));
        }
    }
    cd.od = conv_out_extent(cd.d, padding, k, stride);
    cd.oh = conv_out_extent(cd.h, padding, k, stride);
    cd.ow = conv_out_extent(cd.w, padding, k, stride);
    return cd;
}

// Valid output range [lo, hi) on one axis for a given kernel offset:
// i = o*stride - padding + koff must land in [0, extent).
inline void conv_axis_range(std::int64_t extent, std::int64_t out_extent, int stride, int padding,
                            std::int64_t koff, std::int64_t& lo, std::int64_t& hi) {
    const std::int64_t shift = koff - padding;
    lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
    hi = std::min<std::int64_t>(out_extent, shift < extent ? (extent - 1 - shift) / stride + 1 : 0);
    if (hi < lo) hi = lo;
}

// Dot product with a fixed eight-lane summation tree. The lane structure
// breaks the serial accumulation dependency (so the loop vectorizes) while
// keeping one fixed, run-independent combination order.
template <typename T>
T row_dot(const T* a, const T* b, std::int64_t n) {
    T lane[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
    }
    T tail = T(0);
    for (; i < n; ++i) tail += a[i] * b[i];
    return (((lane[0] + lane[1]) + (lane[2] + lane[3])) +
            ((lane[4] + lane[5]) + (lane[6] + lane[7]))) +
           tail;
}

template <typename T>
T row_sum(const T* a, std::int64_t n) {
    T lane[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int l = 0; l < 8; ++l) lane[l] += a[i + l];
    }
    T tail = T(0);
    for (; i < n; ++i) tail += a[i];
    return (((lane[0] + lane[1]) + (lane[2] + lane[3])) +
            ((lane[4] + lane[5]) + (lane[6] + lane[7]))) +
           tail;
}

template <typename T>
void conv_forward_kernel(const T* in, const T* w, const T* b, T* out, const ConvDims& c) {
    const std::int64_t in_chan = c.d * c.h * c.w;
    const std::int64_t out_chan = c.od * c.oh * c.ow;
    const std::int64_t kvol = c.k * c.k * c.k;
    parallel_for(c.n * c.cout, [&](std::int64_t job) {
        const std::int64_t n = job / c.cout;
        const std::int64_t co = job % c.cout;
        T* out_c = out + (n * c.cout + co) * out_chan;
        std::fill(out_c, out_c + out_chan, b[co]);
        for (std::int64_t ci = 0; ci < c.cin; ++ci) {
            const T* in_c = in + (n * c.cin + ci) * in_chan;
            const T* w_c = w + (co * c.cin + ci) * kvol;
            for (std::int64_t kd = 0; kd < c.k; ++kd) {
                std::int64_t od_lo, od_hi;
                conv_axis_range(c.d, c.od, c.stride, c.padding, kd, od_lo, od_hi);
                for (std::int64_t kh = 0; kh < c.k; ++kh) {
                    std::int64_t oh_lo, oh_hi;
                    conv_axis_range(c.h, c.oh, c.stride, c.padding, kh, oh_lo, oh_hi);
                    for (std::int64_t kw = 0; kw < c.k; ++kw) {
                        std::int64_t ow_lo, ow_hi;
                        conv_axis_range(c.w, c.ow, c.stride, c.padding, kw, ow_lo, ow_hi);
                        const T wv = w_c[(kd * c.k + kh) * c.k + kw];
                        if (wv == T(0)) continue;
                        for (std::int64_t od = od_lo; od < od_hi; ++od) {
                            const std::int64_t id = od * c.stride - c.padding + kd;
                            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                const std::int64_t ih = oh * c.stride - c.padding + kh;
                                const T* in_row = in_c + (id * c.h + ih) * c.w;
                                T* out_row = out_c + (od * c.oh + oh) * c.ow;
                                if (c.stride == 1) {
                                    const std::int64_t off = kw - c.padding;
                                    for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                                        out_row[ow] += wv * in_row[ow + off];
                                    }
                                } else {
                                    for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                                        out_row[ow] +=
                                            wv * in_row[ow * c.stride - c.padding + kw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
void conv_backward_input_kernel(const T* gout, const T* w, T* gin, const ConvDims& c) {
    const std::int64_t in_chan = c.d * c.h * c.w;
    const std::int64_t out_chan = c.od * c.oh * c.ow;
    const std::int64_t kvol = c.k * c.k * c.k;
    parallel_for(c.n * c.cin, [&](std::int64_t job) {
        const std::int64_t n = job / c.cin;
        const std::int64_t ci = job % c.cin;
        T* gin_c = gin + (n * c.cin + ci) * in_chan;
        for (std::int64_t co = 0; co < c.cout; ++co) {
            const T* gout_c = gout + (n * c.cout + co) * out_chan;
            const T* w_c = w + (co * c.cin + ci) * kvol;
            for (std::int64_t kd = 0; kd < c.k; ++kd) {
                std::int64_t od_lo, od_hi;
                conv_axis_range(c.d, c.od, c.stride, c.padding, kd, od_lo, od_hi);
                for (std::int64_t kh = 0; kh < c.k; ++kh) {
                    std::int64_t oh_lo, oh_hi;
                    conv_axis_range(c.h, c.oh, c.stride, c.padding, kh, oh_lo, oh_hi);
                    for (std::int64_t kw = 0; kw < c.k; ++kw) {
                        std::int64_t ow_lo, ow_hi;
                        conv_axis_range(c.w, c.ow, c.stride, c.padding, kw, ow_lo, ow_hi);
                        const T wv = w_c[(kd * c.k + kh) * c.k + kw];
                        if (wv == T(0)) continue;
                        for (std::int64_t od = od_lo; od < od_hi; ++od) {
                            const std::int64_t id = od * c.stride - c.padding + kd;
                            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                const std::int64_t ih = oh * c.stride - c.padding + kh;
                                T* gin_row = gin_c + (id * c.h + ih) * c.w;
                                const T* gout_row = gout_c + (od * c.oh + oh) * c.ow;
                                if (c.stride == 1) {
                                    const std::int64_t off = kw - c.padding;
                                    for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                                        gin_row[ow + off] += wv * gout_row[ow];
                                    }
                                } else {
                                    for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                                        gin_row[ow * c.stride - c.padding + kw] +=
                                            wv * gout_row[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
void conv_backward_weight_kernel(const T* gout, const T* in, T* gw, T* gb, const ConvDims& c) {
    const std::int64_t in_chan = c.d * c.h * c.w;
    const std::int64_t out_chan = c.od * c.oh * c.ow;
    const std::int64_t kvol = c.k * c.k * c.k;
    parallel_for(c.cout, [&](std::int64_t co) {
        T bias_acc = T(0);
        for (std::int64_t n = 0; n < c.n; ++n) {
            bias_acc += row_sum(gout + (n * c.cout + co) * out_chan, out_chan);
        }
        gb[co] += bias_acc;
        for (std::int64_t ci = 0; ci < c.cin; ++ci) {
            T* gw_c = gw + (co * c.cin + ci) * kvol;
            for (std::int64_t kd = 0; kd < c.k; ++kd) {
                std::int64_t od_lo, od_hi;
                conv_axis_range(c.d, c.od, c.stride, c.padding, kd, od_lo, od_hi);
                for (std::int64_t kh = 0; kh < c.k; ++kh) {
                    std::int64_t oh_lo, oh_hi;
                    conv_axis_range(c.h, c.oh, c.stride, c.padding, kh, oh_lo, oh_hi);
                    for (std::int64_t kw = 0; kw < c.k; ++kw) {
                        std::int64_t ow_lo, ow_hi;
                        conv_axis_range(c.w, c.ow, c.stride, c.padding, kw, ow_lo, ow_hi);
                        T acc = T(0);
                        for (std::int64_t n = 0; n < c.n; ++n) {
                            const T* in_c = in + (n * c.cin + ci) * in_chan;
                            const T* gout_c = gout + (n * c.cout + co) * out_chan;
                            for (std::int64_t od = od_lo; od < od_hi; ++od) {
                                const std::int64_t id = od * c.stride - c.padding + kd;
                                for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                    const std::int64_t ih = oh * c.stride - c.padding + kh;
                                    const T* in_row = in_c + (id * c.h + ih) * c.w;
                                    const T* gout_row = gout_c + (od * c.oh + oh) * c.ow;
                                    if (c.stride == 1) {
                                        const std::int64_t off = kw - c.padding;
                                        acc += row_dot(gout_row + ow_lo, in_row + ow_lo + off,
                                                       ow_hi - ow_lo);
                                    } else {
                                        for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                                            acc += gout_row[ow] *
                                                   in_row[ow * c.stride - c.padding + kw];
                                        }
                                    }
                                }
                            }
                        }
                        gw_c[(kd * c.k + kh) * c.k + kw] += acc;
                    }
                }
            }
        }
    });
}

} // namespace detail

// 3-D cross-correlation (no kernel flip). input [N,Cin,D,H,W],
// weight [Cout,Cin,k,k,k], bias [Cout]. Output extent per spatial axis is
// floor((E + 2*padding - k)/stride) + 1.
template <typename T>
Var<T> conv3d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride = 1,
              int padding = 0) {
    const auto c = detail::conv_check(input.value(), weight.value(), bias.value(), stride,
                                      padding);
    Tensor<T> out({c.n, c.cout, c.od, c.oh, c.ow});
    detail::conv_forward_kernel(input.value().ptr(), weight.value().ptr(), bias.value().ptr(),
                                out.ptr(), c);
    check_finite(out, "conv3d");
    auto res = make_op_node<T>(std::move(out), {input.node(), weight.node(), bias.node()});
    if (res.requires_grad()) {
        auto in_n = input.node();
        auto w_n = weight.node();
        auto b_n = bias.node();
        Node<T>* self = res.node().get(); // raw: the closure lives on this node
        res.node()->backward_fn = [in_n, w_n, b_n, self, c] {
            const T* gout = self->grad.ptr();
            if (in_n->requires_grad) {
                detail::conv_backward_input_kernel(gout, w_n->value.ptr(),
                                                   in_n->ensure_grad().ptr(), c);
            }
            if (w_n->requires_grad || b_n->requires_grad) {
                detail::conv_backward_weight_kernel(gout, in_n->value.ptr(),
                                                    w_n->ensure_grad().ptr(),
                                                    b_n->ensure_grad().ptr(), c);
            }
        };
    }
    return res;
}

} // namespace vpx
