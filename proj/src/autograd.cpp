#include "hetsurv/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "hetsurv/errors.hpp"

namespace hetsurv::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

Var constant(Tensor value) { return std::make_shared<Node>(std::move(value), false); }

Var leaf(Tensor value) { return std::make_shared<Node>(std::move(value), true); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
    if (root->value.size() != 1) {
        throw DimensionError("backward expects a scalar root, got shape " + root->value.shape_str());
    }
    if (!std::isfinite(root->value[0])) {
        throw NumericError("backward on non-finite loss value");
    }

    // Iterative post-order DFS; recursion depth would scale with graph depth.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next].get();
            ++next;
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad.fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && node->grad.size() == node->value.size()) {
            node->backward(*node);
        }
    }
}

Parameter::Parameter(std::string name, Tensor init) : node_(leaf(std::move(init))) {
    node_->name = std::move(name);
    node_->ensure_grad();
}

}  // namespace hetsurv::ag
