#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "atme/common.hpp"
#include "atme/tensor.hpp"

namespace atme {

// Reverse-mode autodiff over Tensor<T>. Ops build a graph of shared Nodes;
// backward() walks it once in reverse topological order. Graphs are built on
// one thread (the training loop); heavy math lives inside the ops.

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;      // tracked inputs only
    std::function<void(Node&)> backward;             // distributes this->grad
    uint64_t seq = 0;

    Tensor<T>& ensure_grad() {
        if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
        return grad;
    }

    void add_grad(const Tensor<T>& g) {
        check(g.size() == value.size(), "add_grad: shape mismatch");
        Tensor<T>& acc = ensure_grad();
        T* dst = acc.data();
        const T* src = g.data();
        for (int64_t i = 0; i < g.size(); ++i) dst[i] += src[i];
    }
};

namespace detail {
inline uint64_t next_node_seq() {
    static uint64_t counter = 0;
    return ++counter;
}
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph construction in scope; forward passes become plain math.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev; }
};

template <typename T>
class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Var leaf(Tensor<T> value, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad && grad_enabled();
        n->seq = detail::next_node_seq();
        return Var(std::move(n));
    }

    // Parameters keep requires_grad across NoGradGuard scopes; the flag is
    // honored at op-build time instead.
    static Var param(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = true;
        n->seq = detail::next_node_seq();
        return Var(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& val() const { return node_->value; }
    Tensor<T>& val() { return node_->value; }
    Tensor<T>& grad() { return node_->ensure_grad(); }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }
    const std::vector<int>& shape() const { return node_->value.shape(); }

    void zero_grad() {
        if (node_) node_->grad = Tensor<T>();
    }

    Var detach() const { return leaf(node_->value, false); }

    std::shared_ptr<Node<T>> node() const { return node_; }

  private:
    std::shared_ptr<Node<T>> node_;
};

// Builds an op node. `bw` distributes self.grad into the parents it captured;
// it is only attached when grad mode is on and some input is tracked.
template <typename T>
Var<T> make_op(Tensor<T> value, const std::vector<Var<T>>& inputs,
               std::function<void(Node<T>&)> bw) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->seq = detail::next_node_seq();
    bool track = grad_enabled();
    bool any = false;
    if (track) {
        for (const Var<T>& v : inputs)
            if (v.defined() && v.requires_grad()) {
                any = true;
                break;
            }
    }
    if (track && any) {
        n->requires_grad = true;
        for (const Var<T>& v : inputs)
            if (v.defined() && v.requires_grad()) n->parents.push_back(v.node());
        n->backward = std::move(bw);
    }
    return Var<T>(std::move(n));
}

// Reverse-topological sweep from a scalar root. Each node's backward runs
// exactly once, after all of its consumers.
template <typename T>
void backward(const Var<T>& root) {
    check(root.defined() && root.val().size() == 1, "backward: root must be a defined scalar");
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    struct Frame {
        Node<T>* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.node().get(), 0});
    visited.insert(root.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node<T>* p = f.node->parents[f.next_parent++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad().fill(T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->backward) continue;
        if (n->grad.size() == n->value.size()) n->backward(*n);
        // Op grads are fully consumed once distributed; releasing them keeps
        // repeated backward calls over one graph independent and trims peak
        // memory. Leaves (no backward) keep accumulating.
        n->grad = Tensor<T>();
    }
}

}  // namespace atme
