#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <unordered_map>

#include "rsic/nn/tensor.hpp"

namespace rsic::nn {

// A trainable tensor and its accumulated gradient.
struct Parameter {
    Tensor value;
    Tensor grad;

    void zero_grad() { grad = Tensor(value.shape()); }
};

class Graph;

// Handle to a node in a Graph. Cheap to copy; only valid while its graph lives.
class Var {
  public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t i) const { return value().dim(i); }
    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

  private:
    friend class Graph;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse walk
// of the tape is a valid topological order for backpropagation.
class Graph {
  public:
    enum class Mode { training, inference };

    using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

    explicit Graph(Mode mode = Mode::training) : mode_(mode) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Mode mode() const { return mode_; }

    Var constant(Tensor value);
    // Leaf bound to a parameter; repeated calls with the same parameter reuse one node.
    Var parameter(Parameter& param);

    // Records an op output. The backward closure is dropped when no input needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

    bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

    // Gradient buffer of v, zero-allocated on first access.
    Tensor& grad(const Var& v);

    // Seeds d(root)/d(root) = 1 (root must be a scalar) and accumulates into parameter grads.
    void backward(const Var& root);

    const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    Mode mode_;
    std::deque<Node> nodes_;
    std::unordered_map<Parameter*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(*this); }

}  // namespace rsic::nn
