#pragma once

#include "lnas/tape.hpp"
#include "lnas/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace lnas {

enum class OpKind : std::uint8_t { zero, skip, affine, nonlinear, avg_scale };

std::string_view op_name(OpKind kind);
OpKind parse_op(std::string_view name);
bool is_parametric(OpKind kind);

struct Edge {
    std::size_t from;
    std::size_t to;
    friend bool operator==(const Edge&, const Edge&) = default;
};

// Cell DAG: node 0 is the cell input, nodes 1..node_count-1 are intermediate.
class CellSpec {
public:
    CellSpec(std::size_t node_count, std::vector<Edge> edges, std::vector<OpKind> ops, std::size_t feature_width);

    // Every i < j edge over `intermediate_nodes + 1` nodes.
    static CellSpec fully_connected(std::size_t intermediate_nodes, std::vector<OpKind> ops,
                                    std::size_t feature_width);
    // 3 intermediate nodes, 6 edges, all five op kinds, width 16.
    static CellSpec default_spec();

    std::size_t node_count() const noexcept { return node_count_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const std::vector<OpKind>& ops() const noexcept { return ops_; }
    std::size_t feature_width() const noexcept { return feature_width_; }
    std::size_t edge_count() const noexcept { return edges_.size(); }
    std::size_t op_count() const noexcept { return ops_.size(); }
    std::size_t alpha_size() const noexcept { return edges_.size() * ops_.size(); }
    std::size_t alpha_index(std::size_t edge, std::size_t op) const noexcept { return edge * ops_.size() + op; }

    // Stable 64-bit FNV-1a digest of the canonical text form.
    std::uint64_t hash() const;
    std::string canonical() const;

    friend bool operator==(const CellSpec&, const CellSpec&) = default;

private:
    std::size_t node_count_;
    std::vector<Edge> edges_;
    std::vector<OpKind> ops_;
    std::size_t feature_width_;
};

// Architecture logits, edge-major and op-minor.
class ArchParams {
public:
    ArchParams() = default;
    ArchParams(std::size_t edges, std::size_t ops);
    ArchParams(std::size_t edges, std::size_t ops, std::vector<double> alpha);
    static ArchParams zeros(const CellSpec& spec) { return {spec.edge_count(), spec.op_count()}; }

    std::size_t edge_count() const noexcept { return edges_; }
    std::size_t op_count() const noexcept { return ops_; }
    std::size_t size() const noexcept { return alpha_.size(); }
    std::span<double> values() noexcept { return alpha_; }
    std::span<const double> values() const noexcept { return alpha_; }
    std::span<const double> block(std::size_t edge) const { return values().subspan(edge * ops_, ops_); }
    double& operator[](std::size_t i) { return alpha_[i]; }
    double operator[](std::size_t i) const { return alpha_[i]; }

    friend bool operator==(const ArchParams&, const ArchParams&) = default;

private:
    std::size_t edges_ = 0;
    std::size_t ops_ = 0;
    std::vector<double> alpha_;
};

struct Genotype {
    std::vector<std::size_t> choice;

    // "e0:op,e1:op,..." with op names.
    std::string to_text(const CellSpec& spec) const;
    static Genotype from_text(std::string_view text, const CellSpec& spec);
    nlohmann::json to_json(const CellSpec& spec) const;
    static Genotype from_json(const nlohmann::json& j, const CellSpec& spec);

    friend bool operator==(const Genotype&, const Genotype&) = default;
    friend auto operator<=>(const Genotype&, const Genotype&) = default;
};

// Per-edge softmax, max-subtracted.
std::vector<double> softmax_per_edge(const ArchParams& alpha);

// Per-edge argmax; ties go to the lowest op index.
Genotype discretize(const ArchParams& alpha);

inline constexpr std::size_t default_genotype_cap = 4096;

struct CapExceeded : std::length_error {
    using std::length_error::length_error;
};

// Every genotype in lexicographic order (edge 0 most significant).
std::vector<Genotype> enumerate_genotypes(const CellSpec& spec, std::size_t cap = default_genotype_cap);

// Tape nodes of one parametric op: x * weight + bias.
struct OpParams {
    NodeId weight;
    NodeId bias;
};

// Records kind(x) on the tape. zero and skip ignore params; parametric kinds
// require params whose shapes match x's width.
NodeId apply_op(Tape& tape, OpKind kind, std::optional<OpParams> params, NodeId x);

} // namespace lnas
