#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "anyir/tensor.hpp"

namespace anyir {

template <class T>
class GradTape;

template <class T>
struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads `grad` of this node and accumulates into parents. Empty for leaves.
    std::function<void(Node&)> backward;

    BasicTensor<T>& ensure_grad() {
        if (grad.empty()) grad = BasicTensor<T>::zeros(value.shape());
        return grad;
    }
};

// Handle to a value in the computation graph. Copies share the node.
template <class T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    // A graph input. Parameters are leaves with requires_grad = true.
    static Var leaf(BasicTensor<T> value, bool requires_grad = false) {
        auto node = std::make_shared<Node<T>>();
        node->value = std::move(value);
        node->requires_grad = requires_grad;
        return Var(std::move(node));
    }

    // Creates the output of a differentiable operation and records it on the
    // active tape when any parent requires a gradient. `backward` may be empty
    // only for ops that are never differentiated; GradTape::backward rejects
    // such a node if a gradient reaches it.
    static Var from_op(BasicTensor<T> value, std::string op, std::vector<Var> parents,
                       std::function<void(Node<T>&)> backward);

    bool defined() const { return static_cast<bool>(node_); }
    const BasicTensor<T>& value() const { return node_->value; }
    BasicTensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t dim(int axis) const { return node_->value.dim(axis); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    const std::string& op() const { return node_->op; }

    // Accumulated gradient; all zeros when nothing flowed into this value.
    const BasicTensor<T>& grad() const { return node_->ensure_grad(); }
    void zero_grad() { node_->grad = BasicTensor<T>(); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

using VarF = Var<float>;
using VarD = Var<double>;

// Ordered record of executed differentiable operations. Recording is enabled
// for the current thread while a Recording guard is alive. One tape serves one
// forward/backward pass.
template <class T>
class GradTape {
public:
    class Recording {
    public:
        explicit Recording(GradTape& tape) : previous_(active_) { active_ = &tape; }
        ~Recording() { active_ = previous_; }
        Recording(const Recording&) = delete;
        Recording& operator=(const Recording&) = delete;

    private:
        GradTape* previous_;
    };

    static GradTape* active() { return active_; }

    Recording record() { return Recording(*this); }

    void push(std::shared_ptr<Node<T>> node) { nodes_.push_back(std::move(node)); }

    std::size_t size() const { return nodes_.size(); }
    std::vector<std::string> op_names() const {
        std::vector<std::string> names;
        names.reserve(nodes_.size());
        for (const auto& n : nodes_) names.push_back(n->op);
        return names;
    }

    // Seeds d(loss)/d(loss) = 1 and replays recorded ops in exact reverse
    // execution order. Gradients accumulate into leaves; intermediate
    // gradients are released as soon as they have been propagated.
    void backward(const Var<T>& loss, std::vector<std::string>* visit_order = nullptr) {
        if (loss.value().numel() != 1) {
            throw ShapeError("backward: loss must be a scalar, got shape " +
                             to_string(loss.shape()));
        }
        loss.node()->ensure_grad()[0] += T{1};
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node<T>& node = **it;
            if (node.grad.empty()) continue;
            if (!node.backward) {
                throw std::logic_error("backward: no adjoint registered for op '" + node.op + "'");
            }
            if (visit_order) visit_order->push_back(node.op);
            node.backward(node);
            node.grad = BasicTensor<T>();
        }
    }

    void clear() { nodes_.clear(); }

private:
    static inline thread_local GradTape* active_ = nullptr;
    std::vector<std::shared_ptr<Node<T>>> nodes_;
};

template <class T>
Var<T> Var<T>::from_op(BasicTensor<T> value, std::string op, std::vector<Var> parents,
                       std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = std::move(op);
    GradTape<T>* tape = GradTape<T>::active();
    bool needs = false;
    if (tape) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node_ptr());
        node->backward = std::move(backward);
        tape->push(node);
    }
    return Var(std::move(node));
}

// Adds `g` into the gradient of `parent` when it participates in
// differentiation.
template <class T>
inline BasicTensor<T>* grad_sink(Node<T>& child, std::size_t parent_index) {
    Node<T>& p = *child.parents[parent_index];
    if (!p.requires_grad) return nullptr;
    return &p.ensure_grad();
}

}  // namespace anyir
