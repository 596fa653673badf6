#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "flashcast/tensor.hpp"

namespace flashcast {

namespace detail {
inline thread_local bool grad_mode_enabled = true;
}

inline bool grad_enabled() noexcept { return detail::grad_mode_enabled; }

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() noexcept : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
    ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;  // empty until something flows into it
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const noexcept { return !backward_fn; }

    // Adds g into this node's gradient, allocating it on first use.
    void accumulate(const Tensor4<T>& g) {
        if (!requires_grad) return;
        if (grad.empty()) {
            grad = g;
            return;
        }
        require_same_shape(grad.shape(), g.shape(), "gradient accumulation");
        T* dst = grad.data();
        const T* src = g.data();
        for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i];
    }

    Tensor4<T>& grad_buffer() {
        if (grad.empty()) grad = Tensor4<T>(value.shape());
        return grad;
    }
};

// Handle to a value in the dynamic graph. Copies share the same node.
template <typename T>
class Variable {
public:
    Variable() = default;
    explicit Variable(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Variable leaf(Tensor4<T> value, bool requires_grad = false) {
        auto node = std::make_shared<Node<T>>();
        node->value = std::move(value);
        node->requires_grad = requires_grad;
        return Variable(std::move(node));
    }
    static Variable constant(Tensor4<T> value) { return leaf(std::move(value), false); }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor4<T>& value() const { return node_->value; }
    // Direct access for optimizers and finite-difference probes; bypasses the graph.
    Tensor4<T>& mutable_value() { return node_->value; }
    const Shape4& shape() const { return node_->value.shape(); }

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
    const Tensor4<T>& grad() const { return node_->grad; }
    Tensor4<T>& mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad = Tensor4<T>(); }

    Node<T>* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

// Builds an op result. Parents and the backward rule are kept only when grad mode is on and
// some input needs a gradient; otherwise the result is a detached constant.
template <typename T>
Variable<T> make_result(Tensor4<T> value, const char* op, std::initializer_list<Variable<T>> inputs,
                        std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = op;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return Variable<T>(std::move(node));
}

template <typename T>
Variable<T> make_result(Tensor4<T> value, const char* op, const std::vector<Variable<T>>& inputs,
                        std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = op;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return Variable<T>(std::move(node));
}

// Nodes reachable from root that require grad, parents before children.
template <typename T>
std::vector<Node<T>*> topological_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    if (!root || !root->requires_grad) return order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

// Reverse-mode sweep from a scalar root with seed gradient 1. The recorded graph is released
// afterwards; leaf gradients remain.
template <typename T>
void backward(const Variable<T>& root) {
    if (root.value().size() != 1) {
        throw DimensionError("size", "backward root must be a scalar, got " + root.shape().str());
    }
    Node<T>* r = root.node();
    if (!r->requires_grad) return;
    auto order = topological_order(r);
    r->accumulate(Tensor4<T>(root.shape(), T(1)));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->is_leaf() || node->grad.empty()) continue;
        node->backward_fn(*node);
    }
    for (Node<T>* node : order) {
        if (node->is_leaf()) continue;
        node->backward_fn = nullptr;
        node->parents.clear();
        node->grad = Tensor4<T>();
    }
}

}  // namespace flashcast
