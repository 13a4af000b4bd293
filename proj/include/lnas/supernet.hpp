#pragma once

#include "lnas/search_space.hpp"
#include "lnas/tape.hpp"
#include "lnas/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lnas {

// Dense rows x cols matrix of doubles, row-major.
class RowMatrix {
public:
    RowMatrix() = default;
    RowMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols_, cols_); }
    std::span<const double> row(std::size_t r) const
    {
        return std::span<const double>(data_).subspan(r * cols_, cols_);
    }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    friend bool operator==(const RowMatrix&, const RowMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Per-layer probability rows injected into the supernet (L x |alpha|).
struct ProbMatrix : RowMatrix {
    using RowMatrix::RowMatrix;
};

// Row l holds the gradient of the loss with respect to layer l's probabilities.
struct LayerGradMatrix : RowMatrix {
    using RowMatrix::RowMatrix;
};

struct Batch {
    Tensor x;
    std::vector<int> y;
};

// Parameter-shaped gradients, aligned with SupernetState::params().
using ParamGrads = std::vector<Tensor>;

// Operation weights of L stacked cells plus stem and head. All cells share one
// CellSpec and one architecture vector but hold their own weights.
class SupernetState {
public:
    SupernetState(CellSpec spec, std::size_t layers, std::size_t input_dim, std::size_t classes,
                   std::uint64_t seed);

    const CellSpec& spec() const noexcept { return spec_; }
    std::size_t layers() const noexcept { return layers_; }
    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t classes() const noexcept { return classes_; }

    std::vector<Tensor>& params() noexcept { return params_; }
    const std::vector<Tensor>& params() const noexcept { return params_; }
    const std::vector<std::string>& param_names() const noexcept { return names_; }
    std::size_t scalar_count() const;

    std::size_t stem_weight() const noexcept { return 0; }
    std::size_t stem_bias() const noexcept { return 1; }
    // Indices of (weight, bias) for a parametric op, nullopt otherwise.
    std::optional<std::pair<std::size_t, std::size_t>> op_params(std::size_t layer, std::size_t edge,
                                                                 std::size_t op) const;
    std::size_t projection(std::size_t layer) const { return projection_.at(layer); }
    std::size_t head_weight() const noexcept { return params_.size() - 2; }
    std::size_t head_bias() const noexcept { return params_.size() - 1; }

    std::vector<double> flatten() const;
    void assign_flat(std::span<const double> flat);

    // Versioned little-endian blob tagged with the CellSpec hash.
    void save(const std::filesystem::path& path) const;
    // Rejects blobs whose spec hash or parameter shapes differ from `spec`.
    static SupernetState load(const std::filesystem::path& path, const CellSpec& spec);

private:
    CellSpec spec_;
    std::size_t layers_;
    std::size_t input_dim_;
    std::size_t classes_;
    std::vector<Tensor> params_;
    std::vector<std::string> names_;
    // [layer][edge * ops + op] -> index of weight tensor, or npos.
    std::vector<std::vector<std::size_t>> op_weight_;
    std::vector<std::size_t> projection_;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Every row equals softmax_per_edge(alpha).
ProbMatrix broadcast_P(const ArchParams& alpha, std::size_t layers);

// Tape node for every (layer, alpha index) probability slot.
struct ProbNodes {
    std::size_t layers = 0;
    std::size_t width = 0;
    std::vector<NodeId> ids;
    NodeId at(std::size_t layer, std::size_t k) const { return ids[layer * width + k]; }
};

struct Graph {
    std::vector<NodeId> params;
    NodeId logits = 0;
    NodeId loss = 0;
};

struct GraphOptions {
    // Omit mixture terms whose probability is exactly zero, yielding the
    // discrete sub-network for one-hot rows.
    bool prune_zero_terms = false;
};

// Records the supernet forward pass on `tape`. Every parameter becomes a leaf;
// probabilities come from caller-provided nodes so they may be per-layer
// leaves, a shared vector, or softmax outputs.
Graph build_graph(Tape& tape, const SupernetState& state, const ProbNodes& probs, const Batch& batch,
                  GraphOptions options = {});

// Leaves for every entry of P.
ProbNodes prob_leaves(Tape& tape, const ProbMatrix& P);

struct ForwardResult {
    double loss = 0.0;
    Tape tape;
    Graph graph;
    ProbNodes probs;
};

ForwardResult forward(const SupernetState& state, const ProbMatrix& P, const Batch& batch,
                      GraphOptions options = {});

// Loss and logits only, no gradients. Used for evaluation.
double evaluate_loss(const SupernetState& state, const ProbMatrix& P, const Batch& batch, GraphOptions options = {});
double evaluate_accuracy(const SupernetState& state, const ProbMatrix& P, const Batch& batch,
                         GraphOptions options = {});

struct LayerGradResult {
    double loss = 0.0;
    LayerGradMatrix G;
    ParamGrads omega;
};

// One forward and one backward pass: loss, per-layer probability gradients,
// and parameter gradients.
LayerGradResult layer_grads(const SupernetState& state, const ProbMatrix& P, const Batch& batch);

// J_sigma(alpha) * sum_l G[l], evaluated block by block.
std::vector<double> alpha_grad(const ArchParams& alpha, const LayerGradMatrix& G);

// Block-diagonal softmax Jacobian applied to v.
std::vector<double> jacobian_apply(const ArchParams& alpha, std::span<const double> v);

// Number of layer_grads backward passes executed by this process.
std::size_t forward_backward_passes();

} // namespace lnas
