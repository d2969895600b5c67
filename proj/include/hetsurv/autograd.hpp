#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hetsurv/tensor.hpp"

namespace hetsurv::ag {

class Node;
using Var = std::shared_ptr<Node>;

// One vertex of the define-by-run tape. Each operation appends a node whose
// backward closure holds the hand-derived gradient of that operation and
// accumulates into the parents' grads.
class Node {
  public:
    explicit Node(Tensor value, bool requires_grad = false)
        : value(std::move(value)), requires_grad(requires_grad) {}

    Tensor value;
    Tensor grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::string name;  // set for parameters
    std::vector<Var> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad = Tensor(value.shape());
    }
    void zero_grad() {
        ensure_grad();
        grad.fill(0.0);
    }
};

// Leaf holding an input or target that never receives gradient.
Var constant(Tensor value);
// Leaf that accumulates gradient (used by Parameter and by tests probing
// gradients w.r.t. inputs).
Var leaf(Tensor value);

// Reverse pass from a scalar root: topological order, root grad seeded with 1.
// Throws NumericError if the root value is non-finite.
void backward(const Var& root);

// While a guard is alive, ops skip recording parents/closures; forward values
// are unchanged. Used for inference and finite-difference probes.
bool grad_enabled();
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

// Named trainable tensor: value plus accumulated gradient. Copies share the
// underlying node, so models can hand out cheap handles.
class Parameter {
  public:
    Parameter() = default;
    Parameter(std::string name, Tensor init);

    const std::string& name() const { return node_->name; }
    Tensor& value() { return node_->value; }
    const Tensor& value() const { return node_->value; }
    Tensor& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const Tensor& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->zero_grad(); }
    const Var& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

  private:
    Var node_;
};

}  // namespace hetsurv::ag
