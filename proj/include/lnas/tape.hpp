#pragma once

#include "lnas/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lnas {

using NodeId = std::size_t;

// One weighted term of scalar_combine: `weight` must be a one-element node.
struct WeightedTerm {
    NodeId weight;
    NodeId tensor;
};

// Reverse-mode gradients for every node of a tape, indexed by NodeId.
class Gradients {
public:
    Gradients() = default;
    explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

    const Tensor& operator[](NodeId id) const { return grads_.at(id); }
    std::size_t size() const noexcept { return grads_.size(); }

private:
    std::vector<Tensor> grads_;
};

// Single-threaded tape of tensor operations. Nodes are appended in
// topological order, so backward() is one reverse sweep.
class Tape {
public:
    enum class Op : std::uint8_t {
        leaf,
        constant,
        matmul,
        add,
        add_bias,
        scale,
        sum,
        scalar_combine,
        tanh,
        softmax,
        element,
        inner,
        softmax_cross_entropy,
    };

    NodeId leaf(Tensor value);
    NodeId constant(Tensor value);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    // x[m x n] + bias broadcast over rows; bias holds n entries.
    NodeId add_bias(NodeId x, NodeId bias);
    NodeId scale(NodeId a, double factor);
    NodeId sum(std::span<const NodeId> terms);
    NodeId scalar_combine(std::span<const WeightedTerm> terms);
    NodeId tanh(NodeId a);
    // Softmax over all entries of a, result has a's shape.
    NodeId softmax(NodeId a);
    NodeId element(NodeId a, std::size_t index);
    NodeId inner(NodeId a, NodeId b);
    // Mean negative log-likelihood of `labels` under row-wise softmax of logits.
    NodeId softmax_cross_entropy(NodeId logits, std::span<const int> labels);

    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    Op op(NodeId id) const { return nodes_.at(id).op; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Exact gradients of the one-element node `loss` with respect to every
    // node recorded before it.
    Gradients backward(NodeId loss) const;

private:
    struct Node {
        Op op;
        std::vector<NodeId> inputs;
        Tensor value;
        double factor = 0.0;
        std::size_t index = 0;
        std::vector<int> labels;
        Tensor cache;
    };

    NodeId push(Node node, const char* what);
    const Node& node(NodeId id) const;

    std::vector<Node> nodes_;
};

} // namespace lnas
