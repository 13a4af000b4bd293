#include "lnas/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace lnas {
namespace {

constexpr std::string_view op_names[] = {"zero", "skip", "affine", "nonlinear", "avg_scale"};

} // namespace

std::string_view op_name(OpKind kind)
{
    return op_names[static_cast<std::size_t>(kind)];
}

OpKind parse_op(std::string_view name)
{
    for (std::size_t i = 0; i < std::size(op_names); ++i)
        if (op_names[i] == name)
            return static_cast<OpKind>(i);
    throw std::invalid_argument("unknown op kind '" + std::string(name) + "'");
}

bool is_parametric(OpKind kind)
{
    return kind == OpKind::affine || kind == OpKind::nonlinear;
}

CellSpec::CellSpec(std::size_t node_count, std::vector<Edge> edges, std::vector<OpKind> ops,
                   std::size_t feature_width)
    : node_count_(node_count), edges_(std::move(edges)), ops_(std::move(ops)), feature_width_(feature_width)
{
    if (node_count_ < 2)
        throw std::invalid_argument("CellSpec: need at least 2 nodes");
    if (ops_.size() < 2)
        throw std::invalid_argument("CellSpec: need at least 2 candidate ops");
    if (feature_width_ == 0)
        throw std::invalid_argument("CellSpec: feature width must be positive");
    std::vector<bool> has_input(node_count_, false);
    for (std::size_t e = 0; e < edges_.size(); ++e) {
        const Edge& edge = edges_[e];
        if (edge.from >= edge.to || edge.to >= node_count_)
            throw std::invalid_argument("CellSpec: edge (" + std::to_string(edge.from) + "," +
                                        std::to_string(edge.to) + ") is not a forward edge");
        if (std::find(edges_.begin(), edges_.begin() + static_cast<std::ptrdiff_t>(e), edge) !=
            edges_.begin() + static_cast<std::ptrdiff_t>(e))
            throw std::invalid_argument("CellSpec: duplicate edge");
        has_input[edge.to] = true;
    }
    for (std::size_t j = 1; j < node_count_; ++j)
        if (!has_input[j])
            throw std::invalid_argument("CellSpec: node " + std::to_string(j) + " has no incoming edge");
}

CellSpec CellSpec::fully_connected(std::size_t intermediate_nodes, std::vector<OpKind> ops,
                                   std::size_t feature_width)
{
    std::vector<Edge> edges;
    for (std::size_t j = 1; j <= intermediate_nodes; ++j)
        for (std::size_t i = 0; i < j; ++i)
            edges.push_back({i, j});
    return {intermediate_nodes + 1, std::move(edges), std::move(ops), feature_width};
}

CellSpec CellSpec::default_spec()
{
    return fully_connected(
        3, {OpKind::zero, OpKind::skip, OpKind::affine, OpKind::nonlinear, OpKind::avg_scale}, 16);
}

std::string CellSpec::canonical() const
{
    std::ostringstream os;
    os << "nodes=" << node_count_ << ";width=" << feature_width_ << ";edges=";
    for (const auto& e : edges_)
        os << e.from << '-' << e.to << ',';
    os << ";ops=";
    for (auto op : ops_)
        os << op_name(op) << ',';
    return os.str();
}

std::uint64_t CellSpec::hash() const
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

ArchParams::ArchParams(std::size_t edges, std::size_t ops) : edges_(edges), ops_(ops), alpha_(edges * ops, 0.0) {}

ArchParams::ArchParams(std::size_t edges, std::size_t ops, std::vector<double> alpha)
    : edges_(edges), ops_(ops), alpha_(std::move(alpha))
{
    if (alpha_.size() != edges_ * ops_)
        throw ShapeError("ArchParams: expected " + std::to_string(edges_ * ops_) + " logits, got " +
                         std::to_string(alpha_.size()));
    for (double v : alpha_)
        if (!std::isfinite(v))
            throw NonFiniteError("ArchParams: non-finite logit");
}

std::vector<double> softmax_per_edge(const ArchParams& alpha)
{
    std::vector<double> p(alpha.size());
    const std::size_t k = alpha.op_count();
    for (std::size_t e = 0; e < alpha.edge_count(); ++e) {
        auto block = alpha.block(e);
        const double mx = *std::max_element(block.begin(), block.end());
        double z = 0.0;
        for (std::size_t o = 0; o < k; ++o) {
            p[e * k + o] = std::exp(block[o] - mx);
            z += p[e * k + o];
        }
        for (std::size_t o = 0; o < k; ++o)
            p[e * k + o] /= z;
    }
    return p;
}

Genotype discretize(const ArchParams& alpha)
{
    Genotype g;
    g.choice.resize(alpha.edge_count());
    for (std::size_t e = 0; e < alpha.edge_count(); ++e) {
        auto block = alpha.block(e);
        // max_element returns the first maximum.
        g.choice[e] = static_cast<std::size_t>(std::max_element(block.begin(), block.end()) - block.begin());
    }
    return g;
}

std::vector<Genotype> enumerate_genotypes(const CellSpec& spec, std::size_t cap)
{
    const std::size_t edges = spec.edge_count();
    const std::size_t ops = spec.op_count();
    std::size_t total = 1;
    for (std::size_t e = 0; e < edges; ++e) {
        total *= ops;
        if (total > cap)
            throw CapExceeded("enumerate_genotypes: " + std::to_string(ops) + "^" + std::to_string(edges) +
                              " genotypes exceed the cap of " + std::to_string(cap));
    }
    std::vector<Genotype> out;
    out.reserve(total);
    Genotype g{std::vector<std::size_t>(edges, 0)};
    for (std::size_t n = 0; n < total; ++n) {
        out.push_back(g);
        for (std::size_t e = edges; e-- > 0;) {
            if (++g.choice[e] < ops)
                break;
            g.choice[e] = 0;
        }
    }
    return out;
}

std::string Genotype::to_text(const CellSpec& spec) const
{
    std::string s;
    for (std::size_t e = 0; e < choice.size(); ++e) {
        if (e)
            s += ',';
        s += 'e' + std::to_string(e) + ':' + std::string(op_name(spec.ops().at(choice[e])));
    }
    return s;
}

Genotype Genotype::from_text(std::string_view text, const CellSpec& spec)
{
    Genotype g;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = std::min(text.find(',', pos), text.size());
        const std::string_view item = text.substr(pos, comma - pos);
        const std::size_t colon = item.find(':');
        if (item.size() < 3 || item[0] != 'e' || colon == std::string_view::npos)
            throw std::invalid_argument("genotype text: malformed item '" + std::string(item) + "'");
        const std::size_t edge = std::stoul(std::string(item.substr(1, colon - 1)));
        if (edge != g.choice.size())
            throw std::invalid_argument("genotype text: edges out of order");
        const OpKind kind = parse_op(item.substr(colon + 1));
        const auto it = std::find(spec.ops().begin(), spec.ops().end(), kind);
        if (it == spec.ops().end())
            throw std::invalid_argument("genotype text: op '" + std::string(op_name(kind)) + "' not in cell ops");
        g.choice.push_back(static_cast<std::size_t>(it - spec.ops().begin()));
        pos = comma + 1;
    }
    if (g.choice.size() != spec.edge_count())
        throw std::invalid_argument("genotype text: expected " + std::to_string(spec.edge_count()) + " edges");
    return g;
}

nlohmann::json Genotype::to_json(const CellSpec& spec) const
{
    nlohmann::json edges = nlohmann::json::array();
    for (std::size_t e = 0; e < choice.size(); ++e) {
        const Edge& edge = spec.edges().at(e);
        edges.push_back({{"from", edge.from}, {"to", edge.to}, {"op", op_name(spec.ops().at(choice[e]))}});
    }
    return {{"edges", edges}};
}

Genotype Genotype::from_json(const nlohmann::json& j, const CellSpec& spec)
{
    const auto& edges = j.at("edges");
    if (edges.size() != spec.edge_count())
        throw std::invalid_argument("genotype json: expected " + std::to_string(spec.edge_count()) + " edges");
    Genotype g;
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const Edge expected = spec.edges()[e];
        if (edges[e].at("from").get<std::size_t>() != expected.from ||
            edges[e].at("to").get<std::size_t>() != expected.to)
            throw std::invalid_argument("genotype json: edge " + std::to_string(e) + " does not match cell");
        const OpKind kind = parse_op(edges[e].at("op").get<std::string>());
        const auto it = std::find(spec.ops().begin(), spec.ops().end(), kind);
        if (it == spec.ops().end())
            throw std::invalid_argument("genotype json: op not in cell ops");
        g.choice.push_back(static_cast<std::size_t>(it - spec.ops().begin()));
    }
    return g;
}

NodeId apply_op(Tape& tape, OpKind kind, std::optional<OpParams> params, NodeId x)
{
    switch (kind) {
    case OpKind::zero:
        return tape.constant(Tensor::zeros(tape.value(x).shape()));
    case OpKind::skip:
        return x;
    case OpKind::avg_scale:
        return tape.scale(x, 0.5);
    case OpKind::affine:
    case OpKind::nonlinear: {
        if (!params)
            throw ShapeError("apply_op: parametric op '" + std::string(op_name(kind)) + "' needs parameters");
        const Tensor& xv = tape.value(x);
        const Tensor& w = tape.value(params->weight);
        if (xv.rank() != 2 || w.rank() != 2 || w.rows() != xv.cols() || w.cols() != xv.cols() ||
            tape.value(params->bias).size() != xv.cols())
            throw ShapeError("apply_op: parameter shapes do not match input width");
        const NodeId pre = tape.add_bias(tape.matmul(x, params->weight), params->bias);
        return kind == OpKind::nonlinear ? tape.tanh(pre) : pre;
    }
    }
    throw std::logic_error("apply_op: unhandled op kind");
}

} // namespace lnas
