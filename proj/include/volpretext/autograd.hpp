#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "volpretext/tensor.hpp"

namespace vpx {

// Reverse-mode tape node. Nodes are created in forward order and carry a
// monotone sequence number; backward replays them in strictly descending
// sequence, which fixes the gradient accumulation order once and for all.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad; // allocated on demand, always value-shaped
    bool requires_grad = false;
    bool trainable = false;
    std::string name;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void()> backward_fn;
    std::int64_t seq = 0;

    Tensor<T>& ensure_grad() {
        if (grad.shape != value.shape) grad = Tensor<T>(value.shape, T(0));
        return grad;
    }

    void zero_grad() {
        if (grad.shape == value.shape) grad.fill(T(0));
    }
};

template <typename T>
std::int64_t next_seq() {
    static std::int64_t counter = 0;
    return ++counter;
}

// Value handle into the tape. Cheap to copy; ops below return fresh handles.
template <typename T>
class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Var leaf(Tensor<T> value, bool requires_grad = false, std::string name = {}) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        n->name = std::move(name);
        n->seq = next_seq<T>();
        return Var(n);
    }

    bool valid() const { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

    // Seeds d(self)/d(self) = 1 and propagates to every reachable node.
    // Only defined for scalar outputs.
    void backward() const {
        if (node_->value.numel() != 1) {
            throw ShapeError("backward: root must be scalar, got " + shape_str(node_->value));
        }
        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> seen;
        collect(node_.get(), order, seen);
        std::sort(order.begin(), order.end(),
                  [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });
        node_->ensure_grad();
        node_->grad.data[0] = T(1);
        for (Node<T>* n : order) {
            if (n->backward_fn) n->backward_fn();
        }
    }

  private:
    static void collect(Node<T>* n, std::vector<Node<T>*>& order,
                        std::unordered_set<Node<T>*>& seen) {
        if (!n->requires_grad || seen.count(n)) return;
        seen.insert(n);
        order.push_back(n);
        for (auto& p : n->parents) collect(p.get(), order, seen);
    }

    std::shared_ptr<Node<T>> node_;
};

// Builds an op result node wired to its inputs. The backward closure is
// installed by the caller after it has captured whatever it needs.
template <typename T>
Var<T> make_op_node(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    for (auto& p : parents) {
        if (p->requires_grad) n->requires_grad = true;
    }
    n->parents = std::move(parents);
    n->seq = next_seq<T>();
    return Var<T>(n);
}

} // namespace vpx
