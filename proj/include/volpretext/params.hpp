#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "volpretext/autograd.hpp"
#include "volpretext/rng.hpp"

namespace vpx {

// Insertion-ordered named parameter storage. The order fixes checkpoint
// layout and the optimizer's update sequence. Non-trainable entries hold
// buffers that ship with checkpoints (running stats, scaling constants).
template <typename T>
class ParameterStore {
  public:
    struct Entry {
        std::string name;
        std::shared_ptr<Node<T>> node;
        bool trainable;
    };

    Var<T> add(const std::string& name, Tensor<T> init, bool trainable = true) {
        if (index_.count(name)) throw ConfigError("parameter '" + name + "' already registered");
        Var<T> v = Var<T>::leaf(std::move(init), trainable, name);
        v.node()->trainable = trainable;
        index_[name] = entries_.size();
        entries_.push_back({name, v.node(), trainable});
        return v;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Var<T> get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return Var<T>(entries_[it->second].node);
    }

    const std::vector<Entry>& entries() const { return entries_; }

    std::int64_t trainable_count() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) {
            if (e.trainable) n += e.node->value.numel();
        }
        return n;
    }

    std::int64_t trainable_count_prefix(const std::string& prefix) const {
        std::int64_t n = 0;
        for (const auto& e : entries_) {
            if (e.trainable && e.name.rfind(prefix, 0) == 0) n += e.node->value.numel();
        }
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.node->zero_grad();
    }

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Kaiming fan-in scaled normal init, the usual choice under ReLU stacks.
template <typename T>
Tensor<T> kaiming_normal(const std::vector<std::int64_t>& shape, std::int64_t fan_in, Rng& rng) {
    Tensor<T> t(shape);
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = static_cast<T>(rng.normal() * std_dev);
    }
    return t;
}

// Adam with the fixed (beta1, beta2, eps) = (0.9, 0.999, 1e-8) defaults.
// step() visits trainable entries in store order and validates that every
// consumed gradient is finite.
template <typename T>
class Adam {
  public:
    explicit Adam(ParameterStore<T>& store, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : store_(store), beta1_(static_cast<T>(beta1)), beta2_(static_cast<T>(beta2)),
          eps_(static_cast<T>(eps)) {
        for (const auto& e : store.entries()) {
            slots_.push_back({Tensor<T>(e.node->value.shape, T(0)),
                              Tensor<T>(e.node->value.shape, T(0))});
        }
    }

    void step(double lr) {
        ++t_;
        const T a = static_cast<T>(lr);
        const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), t_));
        const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), t_));
        const auto& entries = store_.entries();
        if (slots_.size() != entries.size()) {
            throw ConfigError("adam: parameter store changed size after optimizer creation");
        }
        for (std::size_t p = 0; p < entries.size(); ++p) {
            const auto& e = entries[p];
            if (!e.trainable) continue;
            auto& node = *e.node;
            if (node.grad.shape != node.value.shape) continue; // no gradient this step
            auto& m = slots_[p].m;
            auto& v = slots_[p].v;
            for (std::int64_t i = 0; i < node.value.numel(); ++i) {
                const T g = node.grad[i];
                if (!std::isfinite(static_cast<double>(g))) {
                    throw NumericError("adam: non-finite gradient in '" + e.name + "' at index " +
                                       std::to_string(i));
                }
                m[i] = beta1_ * m[i] + (T(1) - beta1_) * g;
                v[i] = beta2_ * v[i] + (T(1) - beta2_) * g * g;
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                node.value[i] -= a * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    std::int64_t steps_taken() const { return t_; }

  private:
    struct Slot {
        Tensor<T> m, v;
    };
    ParameterStore<T>& store_;
    std::vector<Slot> slots_;
    T beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

} // namespace vpx
