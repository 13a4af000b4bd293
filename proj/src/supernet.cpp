#include "lnas/supernet.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

namespace lnas {
namespace {

constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
constexpr char checkpoint_magic[8] = {'L', 'N', 'A', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t checkpoint_version = 1;

std::atomic<std::size_t> pass_counter{0};

// Uniform(-g/sqrt(n), g/sqrt(n)) has variance g^2/(3n): sqrt(3) keeps unit variance through a
// linear map, and the extra 5/3 compensates tanh. There is no normalisation layer to do it instead.
const double projection_gain = std::sqrt(3.0);
const double op_gain = 5.0 / 3.0 * std::sqrt(3.0);

Tensor uniform_init(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double gain = 1.0)
{
    const double bound = gain / std::sqrt(static_cast<double>(rows));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t({rows, cols});
    for (double& v : t.data())
        v = dist(rng);
    return t;
}

template <class T>
void write_pod(std::ostream& os, const T& v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is)
{
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is)
        throw CheckpointError("checkpoint: truncated file");
    return v;
}

} // namespace

SupernetState::SupernetState(CellSpec spec, std::size_t layers, std::size_t input_dim, std::size_t classes,
                             std::uint64_t seed)
    : spec_(std::move(spec)), layers_(layers), input_dim_(input_dim), classes_(classes)
{
    if (layers_ < 1)
        throw std::invalid_argument("SupernetState: need at least one layer");
    if (input_dim_ == 0 || classes_ < 2)
        throw std::invalid_argument("SupernetState: need positive input width and at least two classes");
    const std::size_t w = spec_.feature_width();
    std::mt19937_64 rng(seed);

    auto add = [&](std::string name, Tensor t) {
        params_.push_back(std::move(t));
        names_.push_back(std::move(name));
        return params_.size() - 1;
    };
    add("stem.weight", uniform_init(input_dim_, w, rng));
    add("stem.bias", Tensor::zeros({1, w}));
    op_weight_.assign(layers_, std::vector<std::size_t>(spec_.alpha_size(), npos));
    for (std::size_t l = 0; l < layers_; ++l) {
        for (std::size_t e = 0; e < spec_.edge_count(); ++e) {
            for (std::size_t o = 0; o < spec_.op_count(); ++o) {
                if (!is_parametric(spec_.ops()[o]))
                    continue;
                const std::string prefix = "cell" + std::to_string(l) + ".e" + std::to_string(e) + "." +
                                           std::string(op_name(spec_.ops()[o]));
                op_weight_[l][spec_.alpha_index(e, o)] = add(prefix + ".weight", uniform_init(w, w, rng, op_gain));
                add(prefix + ".bias", Tensor::zeros({1, w}));
            }
        }
        projection_.push_back(add("cell" + std::to_string(l) + ".projection", uniform_init(w, w, rng, projection_gain)));
    }
    add("head.weight", uniform_init(w, classes_, rng));
    add("head.bias", Tensor::zeros({1, classes_}));
}

std::size_t SupernetState::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& p : params_)
        n += p.size();
    return n;
}

std::optional<std::pair<std::size_t, std::size_t>> SupernetState::op_params(std::size_t layer, std::size_t edge,
                                                                            std::size_t op) const
{
    const std::size_t idx = op_weight_.at(layer).at(spec_.alpha_index(edge, op));
    if (idx == npos)
        return std::nullopt;
    return std::pair{idx, idx + 1};
}

std::vector<double> SupernetState::flatten() const
{
    std::vector<double> flat;
    flat.reserve(scalar_count());
    for (const auto& p : params_)
        flat.insert(flat.end(), p.data().begin(), p.data().end());
    return flat;
}

void SupernetState::assign_flat(std::span<const double> flat)
{
    if (flat.size() != scalar_count())
        throw ShapeError("assign_flat: expected " + std::to_string(scalar_count()) + " values");
    std::size_t off = 0;
    for (auto& p : params_) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p.size(), p.data().begin());
        off += p.size();
    }
}

void SupernetState::save(const std::filesystem::path& path) const
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
    os.write(checkpoint_magic, sizeof(checkpoint_magic));
    write_pod(os, checkpoint_version);
    write_pod(os, spec_.hash());
    write_pod<std::uint64_t>(os, layers_);
    write_pod<std::uint64_t>(os, input_dim_);
    write_pod<std::uint64_t>(os, classes_);
    write_pod<std::uint64_t>(os, params_.size());
    for (const auto& p : params_) {
        write_pod<std::uint64_t>(os, p.rank());
        for (auto d : p.shape())
            write_pod<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(p.data().data()),
                 static_cast<std::streamsize>(p.size() * sizeof(double)));
    }
    if (!os)
        throw CheckpointError("checkpoint: write to '" + path.string() + "' failed");
}

SupernetState SupernetState::load(const std::filesystem::path& path, const CellSpec& spec)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
    char magic[sizeof(checkpoint_magic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, checkpoint_magic, sizeof(magic)) != 0)
        throw CheckpointError("checkpoint: '" + path.string() + "' is not a checkpoint");
    if (read_pod<std::uint32_t>(is) != checkpoint_version)
        throw CheckpointError("checkpoint: unsupported version");
    if (read_pod<std::uint64_t>(is) != spec.hash())
        throw CheckpointError("checkpoint: cell spec hash mismatch");
    const auto layers = read_pod<std::uint64_t>(is);
    const auto input_dim = read_pod<std::uint64_t>(is);
    const auto classes = read_pod<std::uint64_t>(is);
    SupernetState state(spec, layers, input_dim, classes, 0);
    if (read_pod<std::uint64_t>(is) != state.params_.size())
        throw CheckpointError("checkpoint: parameter count mismatch");
    for (auto& p : state.params_) {
        const auto rank = read_pod<std::uint64_t>(is);
        Shape shape(rank);
        for (auto& d : shape)
            d = read_pod<std::uint64_t>(is);
        if (shape != p.shape())
            throw CheckpointError("checkpoint: parameter shape mismatch");
        is.read(reinterpret_cast<char*>(p.data().data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
        if (!is)
            throw CheckpointError("checkpoint: truncated file");
        p.check_finite("checkpoint load");
    }
    return state;
}

ProbMatrix broadcast_P(const ArchParams& alpha, std::size_t layers)
{
    const auto p = softmax_per_edge(alpha);
    ProbMatrix P(layers, p.size());
    for (std::size_t l = 0; l < layers; ++l)
        std::copy(p.begin(), p.end(), P.row(l).begin());
    return P;
}

ProbNodes prob_leaves(Tape& tape, const ProbMatrix& P)
{
    ProbNodes nodes{P.rows(), P.cols(), {}};
    nodes.ids.reserve(P.rows() * P.cols());
    for (double v : P.values())
        nodes.ids.push_back(tape.leaf(Tensor::scalar(v)));
    return nodes;
}

Graph build_graph(Tape& tape, const SupernetState& state, const ProbNodes& probs, const Batch& batch,
                  GraphOptions options)
{
    const CellSpec& spec = state.spec();
    if (probs.layers != state.layers() || probs.width != spec.alpha_size())
        throw ShapeError("build_graph: probability table is " + std::to_string(probs.layers) + "x" +
                         std::to_string(probs.width) + ", expected " + std::to_string(state.layers()) + "x" +
                         std::to_string(spec.alpha_size()));
    if (batch.x.rank() != 2 || batch.x.cols() != state.input_dim())
        throw ShapeError("build_graph: batch features " + shape_string(batch.x.shape()) + " do not match input width " +
                         std::to_string(state.input_dim()));

    Graph g;
    g.params.reserve(state.params().size());
    for (const auto& p : state.params())
        g.params.push_back(tape.leaf(p));

    const NodeId x = tape.constant(batch.x);
    NodeId h = tape.add_bias(tape.matmul(x, g.params[state.stem_weight()]), g.params[state.stem_bias()]);

    const std::size_t n_nodes = spec.node_count();
    std::vector<WeightedTerm> terms;
    for (std::size_t l = 0; l < state.layers(); ++l) {
        std::vector<NodeId> nodes(n_nodes);
        nodes[0] = h;
        for (std::size_t j = 1; j < n_nodes; ++j) {
            terms.clear();
            for (std::size_t e = 0; e < spec.edge_count(); ++e) {
                if (spec.edges()[e].to != j)
                    continue;
                const NodeId src = nodes[spec.edges()[e].from];
                for (std::size_t o = 0; o < spec.op_count(); ++o) {
                    const NodeId w = probs.at(l, spec.alpha_index(e, o));
                    if (options.prune_zero_terms && tape.value(w)[0] == 0.0)
                        continue;
                    std::optional<OpParams> op_params;
                    if (auto idx = state.op_params(l, e, o))
                        op_params = OpParams{g.params[idx->first], g.params[idx->second]};
                    terms.push_back({w, apply_op(tape, spec.ops()[o], op_params, src)});
                }
            }
            nodes[j] = terms.empty() ? tape.constant(Tensor::zeros(tape.value(h).shape()))
                                     : tape.scalar_combine(terms);
        }
        const NodeId pooled = tape.scale(tape.sum(std::span(nodes).subspan(1)), 1.0 / static_cast<double>(n_nodes - 1));
        h = tape.matmul(pooled, g.params[state.projection(l)]);
    }

    g.logits = tape.add_bias(tape.matmul(h, g.params[state.head_weight()]), g.params[state.head_bias()]);
    g.loss = tape.softmax_cross_entropy(g.logits, batch.y);
    return g;
}

ForwardResult forward(const SupernetState& state, const ProbMatrix& P, const Batch& batch, GraphOptions options)
{
    ForwardResult r;
    r.probs = prob_leaves(r.tape, P);
    r.graph = build_graph(r.tape, state, r.probs, batch, options);
    r.loss = r.tape.value(r.graph.loss)[0];
    return r;
}

double evaluate_loss(const SupernetState& state, const ProbMatrix& P, const Batch& batch, GraphOptions options)
{
    return forward(state, P, batch, options).loss;
}

double evaluate_accuracy(const SupernetState& state, const ProbMatrix& P, const Batch& batch, GraphOptions options)
{
    const auto r = forward(state, P, batch, options);
    const Tensor& z = r.tape.value(r.graph.logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < z.cols(); ++c)
            if (z.at(i, c) > z.at(i, best))
                best = c;
        correct += best == static_cast<std::size_t>(batch.y[i]);
    }
    return static_cast<double>(correct) / static_cast<double>(z.rows());
}

LayerGradResult layer_grads(const SupernetState& state, const ProbMatrix& P, const Batch& batch)
{
    auto fr = forward(state, P, batch);
    const Gradients grads = fr.tape.backward(fr.graph.loss);
    pass_counter.fetch_add(1, std::memory_order_relaxed);

    LayerGradResult r;
    r.loss = fr.loss;
    r.G = LayerGradMatrix(P.rows(), P.cols());
    for (std::size_t l = 0; l < P.rows(); ++l)
        for (std::size_t k = 0; k < P.cols(); ++k)
            r.G(l, k) = grads[fr.probs.at(l, k)][0];
    r.omega.reserve(fr.graph.params.size());
    for (NodeId id : fr.graph.params)
        r.omega.push_back(grads[id]);
    return r;
}

std::vector<double> jacobian_apply(const ArchParams& alpha, std::span<const double> v)
{
    if (v.size() != alpha.size())
        throw ShapeError("jacobian_apply: vector length differs from alpha");
    const auto p = softmax_per_edge(alpha);
    const std::size_t k = alpha.op_count();
    std::vector<double> out(v.size());
    for (std::size_t e = 0; e < alpha.edge_count(); ++e) {
        const std::size_t base = e * k;
        double pv = 0.0;
        for (std::size_t o = 0; o < k; ++o)
            pv += p[base + o] * v[base + o];
        for (std::size_t o = 0; o < k; ++o)
            out[base + o] = p[base + o] * (v[base + o] - pv);
    }
    return out;
}

std::vector<double> alpha_grad(const ArchParams& alpha, const LayerGradMatrix& G)
{
    if (G.cols() != alpha.size())
        throw ShapeError("alpha_grad: gradient width differs from alpha");
    std::vector<double> total(G.cols(), 0.0);
    for (std::size_t l = 0; l < G.rows(); ++l)
        for (std::size_t k = 0; k < G.cols(); ++k)
            total[k] += G(l, k);
    for (double v : total)
        if (!std::isfinite(v))
            throw NonFiniteError("alpha_grad: non-finite layer gradient");
    return jacobian_apply(alpha, total);
}

std::size_t forward_backward_passes()
{
    return pass_counter.load(std::memory_order_relaxed);
}

} // namespace lnas
