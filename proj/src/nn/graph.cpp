#include "rsic/nn/graph.hpp"

#include <stdexcept>

namespace rsic::nn {

Var Graph::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
    return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Parameter& param) {
    if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) return Var(this, it->second);
    nodes_.push_back(Node{param.value, {}, {}, &param, mode_ == Mode::training});
    param_nodes_.emplace(&param, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, nullptr, needs});
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, nullptr, needs});
    return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad(const Var& v) {
    Node& node = nodes_[v.id()];
    if (node.grad.shape() != node.value.shape() || node.grad.size() != node.value.size()) {
        node.grad = Tensor(node.value.shape());
    }
    return node.grad;
}

void Graph::backward(const Var& root) {
    if (root.value().size() != 1) throw ShapeError("backward() needs a scalar root, got " + shape_string(root.shape()));
    if (!nodes_[root.id()].requires_grad) return;
    grad(root)[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad || node.grad.empty()) continue;
        if (node.backward) {
            // The closure may append to other nodes' grads but never to its own.
            const Tensor out_grad = std::move(node.grad);
            node.grad = Tensor();
            node.backward(*this, out_grad);
        } else if (node.param) {
            if (node.param->grad.size() != node.param->value.size()) node.param->zero_grad();
            node.param->grad += node.grad;
        }
    }
}

}  // namespace rsic::nn
