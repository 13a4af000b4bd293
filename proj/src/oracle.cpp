#include "lnas/oracle.hpp"

#include <cmath>
#include <exception>

namespace lnas::oracle {
namespace {

struct FlatIndex {
    std::size_t tensor;
    std::size_t offset;
};

std::vector<FlatIndex> flat_index(const SupernetState& state)
{
    std::vector<FlatIndex> idx;
    idx.reserve(state.scalar_count());
    for (std::size_t t = 0; t < state.params().size(); ++t)
        for (std::size_t i = 0; i < state.params()[t].size(); ++i)
            idx.push_back({t, i});
    return idx;
}

} // namespace

LayerGradMatrix layer_grad(const SupernetState& state, const ProbMatrix& P, const Batch& batch, double h)
{
    if (P.rows() * P.cols() > max_oracle_params)
        throw CostGuardExceeded("oracle::layer_grad: probability matrix exceeds the cost guard");
    LayerGradMatrix G(P.rows(), P.cols());
    ProbMatrix probe = P;
    for (std::size_t l = 0; l < P.rows(); ++l) {
        for (std::size_t k = 0; k < P.cols(); ++k) {
            probe(l, k) = P(l, k) + h;
            const double up = evaluate_loss(state, probe, batch);
            probe(l, k) = P(l, k) - h;
            const double down = evaluate_loss(state, probe, batch);
            probe(l, k) = P(l, k);
            G(l, k) = (up - down) / (2.0 * h);
        }
    }
    return G;
}

double alignment_value(const SupernetState& state, const ArchParams& alpha, const Batch& batch, Regularizer variant)
{
    const auto r = layer_grads(state, broadcast_P(alpha, state.layers()), batch);
    switch (variant) {
    case Regularizer::cosine:
        return lambda_alignment(r.G);
    case Regularizer::sign:
        return lambda_sign(r.G);
    case Regularizer::none:
        break;
    }
    throw std::invalid_argument("alignment_value: no regularizer variant selected");
}

ParamGrads reg_grad(const SupernetState& state, const ArchParams& alpha, const Batch& batch, Regularizer variant,
                    double h)
{
    if (state.scalar_count() > max_oracle_params)
        throw CostGuardExceeded("oracle::reg_grad: " + std::to_string(state.scalar_count()) +
                                " weights exceed the cost guard of " + std::to_string(max_oracle_params));
    const auto idx = flat_index(state);
    std::vector<double> flat(idx.size());
    std::exception_ptr failure;

#pragma omp parallel
    {
        SupernetState probe = state;
#pragma omp for schedule(static)
        for (long long n = 0; n < static_cast<long long>(idx.size()); ++n) {
            const auto [t, i] = idx[static_cast<std::size_t>(n)];
            double& w = probe.params()[t][i];
            const double orig = w;
            try {
                w = orig + h;
                const double up = alignment_value(probe, alpha, batch, variant);
                w = orig - h;
                const double down = alignment_value(probe, alpha, batch, variant);
                flat[static_cast<std::size_t>(n)] = (up - down) / (2.0 * h);
            } catch (...) {
#pragma omp critical
                if (!failure)
                    failure = std::current_exception();
            }
            w = orig;
        }
    }
    if (failure)
        std::rethrow_exception(failure);

    ParamGrads out;
    for (const auto& p : state.params())
        out.push_back(Tensor::zeros(p.shape()));
    for (std::size_t n = 0; n < idx.size(); ++n)
        out[idx[n].tensor][idx[n].offset] = flat[n];
    return out;
}

SharedProbGrad shared_prob_grad(const SupernetState& state, std::span<const double> p, const Batch& batch)
{
    if (p.size() != state.spec().alpha_size())
        throw ShapeError("shared_prob_grad: probability vector length differs from alpha");
    Tape tape;
    ProbNodes nodes{state.layers(), p.size(), {}};
    std::vector<NodeId> shared;
    for (double v : p)
        shared.push_back(tape.leaf(Tensor::scalar(v)));
    for (std::size_t l = 0; l < state.layers(); ++l)
        nodes.ids.insert(nodes.ids.end(), shared.begin(), shared.end());
    const Graph g = build_graph(tape, state, nodes, batch);
    const Gradients grads = tape.backward(g.loss);

    SharedProbGrad r;
    r.loss = tape.value(g.loss)[0];
    for (NodeId id : shared)
        r.grad_p.push_back(grads[id][0]);
    for (NodeId id : g.params)
        r.omega.push_back(grads[id]);
    return r;
}

std::vector<double> alpha_grad_ad(const SupernetState& state, const ArchParams& alpha, const Batch& batch)
{
    Tape tape;
    const std::size_t k = alpha.op_count();
    std::vector<NodeId> logits;
    std::vector<NodeId> probs;
    for (std::size_t e = 0; e < alpha.edge_count(); ++e) {
        auto block = alpha.block(e);
        const NodeId leaf = tape.leaf(Tensor({k}, std::vector<double>(block.begin(), block.end())));
        logits.push_back(leaf);
        const NodeId sm = tape.softmax(leaf);
        for (std::size_t o = 0; o < k; ++o)
            probs.push_back(tape.element(sm, o));
    }
    ProbNodes nodes{state.layers(), alpha.size(), {}};
    for (std::size_t l = 0; l < state.layers(); ++l)
        nodes.ids.insert(nodes.ids.end(), probs.begin(), probs.end());
    const Graph g = build_graph(tape, state, nodes, batch);
    const Gradients grads = tape.backward(g.loss);
    std::vector<double> out;
    out.reserve(alpha.size());
    for (NodeId id : logits)
        for (double v : grads[id].data())
            out.push_back(v);
    return out;
}

} // namespace lnas::oracle
