#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "volpretext/errors.hpp"

namespace vpx {

// Dense row-major tensor. Layout convention for 5-D activations is
// [N, C, D, H, W] with W fastest.
template <typename T>
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(count(shape)), fill);
    }

    Tensor(std::vector<std::int64_t> s, std::vector<T> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != static_cast<std::int64_t>(data.size())) {
            throw ShapeError("tensor: shape product " + std::to_string(count(shape)) +
                             " != buffer length " + std::to_string(data.size()));
        }
    }

    static std::int64_t count(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto e : s) {
            if (e < 0) throw ShapeError("tensor: negative extent " + std::to_string(e));
            n *= e;
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    std::int64_t dim(int axis) const {
        if (axis < 0 || axis >= rank()) {
            throw ShapeError("tensor: axis " + std::to_string(axis) + " out of rank " +
                             std::to_string(rank()));
        }
        return shape[static_cast<std::size_t>(axis)];
    }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

// Global toggle for the finiteness contract. On by default; grad-check
// loops may switch it off around intentionally perturbed evaluations.
inline bool& finite_checks() {
    static bool enabled = true;
    return enabled;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    if (!finite_checks()) return;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (!std::isfinite(static_cast<double>(t.data[i]))) {
            throw NumericError(std::string(op) + ": non-finite value at flat index " +
                               std::to_string(i));
        }
    }
}

} // namespace vpx
