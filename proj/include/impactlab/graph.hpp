#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "impactlab/tensor.hpp"

namespace impactlab::tensor {

// Handle to a node recorded on a Graph.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

// Reverse-mode tape. Every op evaluates eagerly, checks its output for
// NaN/Inf and records a closure that propagates gradients to its inputs.
//
// Policy: a graph is consumed by backward(); a second backward() on the same
// graph throws GraphStateError. Build a fresh graph per forward pass. The
// bound ParamStore is only read, so several graphs may share one store.
class Graph {
public:
    Graph() = default;
    explicit Graph(const ParamStore& params) : params_(&params) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    Var input(Tensor value);
    Var param(std::string_view name);

    Var conv1d(Var input, Var taps, std::optional<Var> bias = std::nullopt);
    Var temporal_conv(Var input, Var taps, std::optional<Var> bias = std::nullopt);
    Var linear(Var input, Var weight, std::optional<Var> bias = std::nullopt);
    Var forget_pool(Var candidates, Var forget);
    Var gru(Var xproj, Var recurrent, Var bias);

    Var tanh(Var x);
    Var sigmoid(Var x);
    Var relu(Var x);
    Var softmax(Var x);

    // Concatenates along the last axis; leading dimensions must agree.
    Var concat_last(Var a, Var b);
    Var reshape(Var x, Shape shape);
    // Last row of a (T, H) tensor, as (H).
    Var last_row(Var x);
    // Element i of a rank-1 tensor, as (1).
    Var pick(Var x, std::size_t i);
    Var add(Var a, Var b);
    Var scale(Var x, double factor);

    Var mse(Var pred, Var target);
    // -log p[target] for a probability vector.
    Var nll(Var probs, std::size_t target);

    const Tensor& value(Var v) const;
    std::size_t node_count() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }

    // Seeds d(loss)/d(loss) = seed and adds parameter gradients into `into`
    // (aligned with the bound ParamStore). `loss` must hold one element.
    void backward(Var loss, Gradients& into, double seed = 1.0);
    // Same, accumulating into params.grads() and marking them populated.
    void backward(Var loss, ParamStore& params, double seed = 1.0);

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;  // parameter storage, not copied
        Tensor grad;
        std::function<void(Graph&, std::size_t)> backward;
        std::optional<std::size_t> param_index;
        bool needs_grad = false;
    };

    Var push(Tensor value, bool needs_grad, std::function<void(Graph&, std::size_t)> backward);
    Node& node(Var v);
    const Node& node(Var v) const;
    Tensor& grad_of(std::size_t id);
    const Tensor& val(std::size_t id) const;
    bool needs(Var v) const { return node(v).needs_grad; }

    const ParamStore* params_ = nullptr;
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

}  // namespace impactlab::tensor
