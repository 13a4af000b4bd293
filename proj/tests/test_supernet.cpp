#include "helpers.hpp"

#include "lnas/gradcheck.hpp"
#include "lnas/supernet.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace lnas;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t)
{
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j)
            m[i][j] = t.at(i, j);
    return m;
}

Mat affine(const Mat& x, const Tensor& w, const Tensor* b)
{
    Mat y(x.size(), std::vector<double>(w.cols(), 0.0));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) {
            double s = b ? (*b)[j] : 0.0;
            for (std::size_t k = 0; k < w.rows(); ++k)
                s += x[i][k] * w.at(k, j);
            y[i][j] = s;
        }
    return y;
}

// Plain-loop evaluation of the supernet loss, written from the network
// definition without the tape.
double reference_loss(const SupernetState& s, const ProbMatrix& P, const Batch& batch)
{
    const auto& spec = s.spec();
    const auto& prm = s.params();
    Mat h = affine(to_mat(batch.x), prm[s.stem_weight()], &prm[s.stem_bias()]);
    const std::size_t n = h.size(), w = spec.feature_width();
    for (std::size_t l = 0; l < s.layers(); ++l) {
        std::vector<Mat> nodes(spec.node_count(), Mat(n, std::vector<double>(w, 0.0)));
        nodes[0] = h;
        for (std::size_t j = 1; j < spec.node_count(); ++j)
            for (std::size_t e = 0; e < spec.edge_count(); ++e) {
                if (spec.edges()[e].to != j)
                    continue;
                const Mat& src = nodes[spec.edges()[e].from];
                for (std::size_t o = 0; o < spec.op_count(); ++o) {
                    const double p = P(l, spec.alpha_index(e, o));
                    Mat out = src;
                    switch (spec.ops()[o]) {
                    case OpKind::zero:
                        for (auto& r : out)
                            std::fill(r.begin(), r.end(), 0.0);
                        break;
                    case OpKind::skip:
                        break;
                    case OpKind::avg_scale:
                        for (auto& r : out)
                            for (double& v : r)
                                v /= 2;
                        break;
                    case OpKind::affine:
                    case OpKind::nonlinear: {
                        const auto idx = *s.op_params(l, e, o);
                        out = affine(src, prm[idx.first], &prm[idx.second]);
                        if (spec.ops()[o] == OpKind::nonlinear)
                            for (auto& r : out)
                                for (double& v : r)
                                    v = std::tanh(v);
                        break;
                    }
                    }
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t c = 0; c < w; ++c)
                            nodes[j][i][c] += p * out[i][c];
                }
            }
        Mat pooled(n, std::vector<double>(w, 0.0));
        for (std::size_t j = 1; j < spec.node_count(); ++j)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < w; ++c)
                    pooled[i][c] += nodes[j][i][c] / static_cast<double>(spec.node_count() - 1);
        h = affine(pooled, prm[s.projection(l)], nullptr);
    }
    const Mat z = affine(h, prm[s.head_weight()], &prm[s.head_bias()]);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mx = z[i][0];
        for (double v : z[i])
            mx = std::max(mx, v);
        double se = 0.0;
        for (double v : z[i])
            se += std::exp(v - mx);
        loss += mx + std::log(se) - z[i][static_cast<std::size_t>(batch.y[i])];
    }
    return loss / static_cast<double>(n);
}

ProbMatrix one_hot(const CellSpec& spec, std::size_t layers, OpKind kind)
{
    ProbMatrix P(layers, spec.alpha_size());
    std::size_t op = 0;
    while (spec.ops()[op] != kind)
        ++op;
    for (std::size_t l = 0; l < layers; ++l)
        for (std::size_t e = 0; e < spec.edge_count(); ++e)
            P(l, spec.alpha_index(e, op)) = 1.0;
    return P;
}

ProbMatrix random_P(const CellSpec& spec, std::size_t layers, std::mt19937_64& rng)
{
    ProbMatrix P(layers, spec.alpha_size());
    for (std::size_t l = 0; l < layers; ++l) {
        const auto p = softmax_per_edge(test::random_alpha(spec, rng));
        std::copy(p.begin(), p.end(), P.row(l).begin());
    }
    return P;
}

} // namespace

TEST_CASE("broadcast_P examples")
{
    const auto P = broadcast_P(ArchParams(1, 2), 2);
    REQUIRE(P.rows() == 2);
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t k = 0; k < 2; ++k)
            CHECK(P(l, k) == 0.5);
    CHECK(broadcast_P(ArchParams(1, 2), 1).rows() == 1);

    std::mt19937_64 rng(1);
    const auto spec = test::all_ops_spec(3, 4);
    const auto alpha = test::random_alpha(spec, rng);
    const auto Q = broadcast_P(alpha, 5);
    const auto p = softmax_per_edge(alpha);
    for (std::size_t l = 0; l < 5; ++l)
        CHECK(std::vector<double>(Q.row(l).begin(), Q.row(l).end()) == p);
}

TEST_CASE("forward matches a plain-loop evaluation")
{
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 5; ++rep) {
        const auto spec = test::all_ops_spec(2 + rep % 2, 3);
        SupernetState state(spec, 3, 4, 3, 100 + rep);
        test::jitter(state, rng);
        const Batch batch = test::random_batch(6, 4, 3, rng);
        const auto P = random_P(spec, 3, rng);
        const double got = evaluate_loss(state, P, batch);
        CHECK(got == doctest::Approx(reference_loss(state, P, batch)).epsilon(1e-12));
        CHECK(evaluate_loss(state, P, batch) == got);
    }
}

TEST_CASE("one-hot skip rows reproduce the reduced network")
{
    std::mt19937_64 rng(3);
    const auto spec = test::all_ops_spec(3, 4);
    SupernetState state(spec, 3, 5, 4, 7);
    test::jitter(state, rng);
    const Batch batch = test::random_batch(8, 5, 4, rng);
    const auto P = one_hot(spec, 3, OpKind::skip);
    // With skip everywhere node j holds (number of paths 0 -> j) copies of the
    // cell input; for the complete DAG over 4 nodes that is 1, 2, 4.
    Tape tape;
    const auto& prm = state.params();
    NodeId h = tape.add_bias(tape.matmul(tape.constant(batch.x), tape.leaf(prm[state.stem_weight()])),
                             tape.leaf(prm[state.stem_bias()]));
    for (std::size_t l = 0; l < 3; ++l)
        h = tape.matmul(tape.scale(h, (1.0 + 2.0 + 4.0) / 3.0), tape.leaf(prm[state.projection(l)]));
    const auto logits = tape.add_bias(tape.matmul(h, tape.leaf(prm[state.head_weight()])),
                                      tape.leaf(prm[state.head_bias()]));
    const double reduced = tape.value(tape.softmax_cross_entropy(logits, batch.y))[0];
    CHECK(std::abs(evaluate_loss(state, P, batch) - reduced) <= 1e-10);
    GraphOptions pruned;
    pruned.prune_zero_terms = true;
    CHECK(std::abs(evaluate_loss(state, P, batch, pruned) - reduced) <= 1e-10);
}

TEST_CASE("one-hot zero rows give the uniform-prediction loss")
{
    std::mt19937_64 rng(4);
    const auto spec = test::all_ops_spec(3, 4);
    SupernetState state(spec, 2, 5, 6, 9);
    const Batch batch = test::random_batch(10, 5, 6, rng);
    // Zero-initialized head bias and a zero cell output leave every logit at 0.
    CHECK(evaluate_loss(state, one_hot(spec, 2, OpKind::zero), batch) ==
          doctest::Approx(std::log(6.0)).epsilon(1e-14));
}

TEST_CASE("a half skip, half zero mixture halves the node outputs")
{
    const CellSpec spec(2, {{0, 1}}, {OpKind::skip, OpKind::zero}, 3);
    SupernetState state(spec, 2, 3, 2, 5);
    std::mt19937_64 rng(5);
    const Batch batch = test::random_batch(4, 3, 2, rng);
    ProbMatrix P(2, 2);
    P(0, 0) = P(0, 1) = 0.5;
    P(1, 0) = 1.0;
    auto mixed = forward(state, P, batch);
    P(0, 0) = 1.0;
    P(0, 1) = 0.0;
    auto pure = forward(state, P, batch);
    // The first recorded scalar_combine is node 1 of layer 0.
    auto first_combine = [](const Tape& t) {
        for (NodeId i = 0; i < t.size(); ++i)
            if (t.op(i) == Tape::Op::scalar_combine)
                return t.value(i);
        return Tensor();
    };
    const Tensor a = first_combine(mixed.tape), b = first_combine(pure.tape);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i] == 0.5 * b[i]);
}

TEST_CASE("layer_grads entries match finite differences of the loss")
{
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 3; ++rep) {
        const auto spec = test::all_ops_spec(2, 3);
        SupernetState state(spec, 3, 4, 3, 20 + rep);
        test::jitter(state, rng);
        const Batch batch = test::random_batch(6, 4, 3, rng);
        const auto P = random_P(spec, 3, rng);
        const auto r = layer_grads(state, P, batch);
        CHECK(r.loss == evaluate_loss(state, P, batch));
        const ScalarFn f = [&](std::span<const double> flat) {
            ProbMatrix Q(P.rows(), P.cols());
            std::copy(flat.begin(), flat.end(), Q.values().begin());
            return evaluate_loss(state, Q, batch);
        };
        const auto numeric = central_difference(f, P.values(), 1e-5);
        CHECK(relative_error(r.G.values(), numeric) <= 1e-5);
        for (std::size_t k = 0; k < numeric.size(); ++k)
            if (std::abs(numeric[k]) > 1e-4)
                CHECK(relative_error(r.G.values()[k], numeric[k]) <= 1e-5);
    }
}

TEST_CASE("parameter gradients match finite differences")
{
    std::mt19937_64 rng(7);
    const CellSpec spec = CellSpec::fully_connected(2, {OpKind::skip, OpKind::affine, OpKind::nonlinear}, 2);
    SupernetState state(spec, 2, 3, 2, 3);
    test::jitter(state, rng);
    const Batch batch = test::random_batch(5, 3, 2, rng);
    const auto P = random_P(spec, 2, rng);
    const auto r = layer_grads(state, P, batch);
    const ScalarFn f = [&](std::span<const double> flat) {
        SupernetState s = state;
        s.assign_flat(flat);
        return evaluate_loss(s, P, batch);
    };
    const auto theta = state.flatten();
    CHECK(relative_error(test::flatten(r.omega), central_difference(f, theta, 1e-5)) <= 1e-6);
}

TEST_CASE("a layer followed by an all-zero layer receives no gradient")
{
    std::mt19937_64 rng(8);
    const auto spec = test::all_ops_spec(2, 3);
    SupernetState state(spec, 3, 4, 3, 11);
    test::jitter(state, rng);
    const Batch batch = test::random_batch(6, 4, 3, rng);
    auto P = random_P(spec, 3, rng);
    const auto zero = one_hot(spec, 3, OpKind::zero);
    std::copy(zero.row(1).begin(), zero.row(1).end(), P.row(1).begin());
    const auto r = layer_grads(state, P, batch);
    for (double g : r.G.row(0))
        CHECK(g == 0.0);
    bool any = false;
    for (double g : r.G.row(2))
        any = any || g != 0.0;
    CHECK(any);
}

TEST_CASE("summed layer rows equal the gradient of a shared probability vector")
{
    std::mt19937_64 rng(9);
    for (std::size_t layers : {2u, 4u, 8u}) {
        const auto spec = test::all_ops_spec(2, 3);
        SupernetState state(spec, layers, 4, 3, layers);
        test::jitter(state, rng);
        const Batch batch = test::random_batch(6, 4, 3, rng);
        const auto alpha = test::random_alpha(spec, rng);
        const auto P = broadcast_P(alpha, layers);
        const auto r = layer_grads(state, P, batch);

        Tape tape;
        ProbNodes shared{layers, spec.alpha_size(), {}};
        std::vector<NodeId> leaves;
        for (std::size_t k = 0; k < spec.alpha_size(); ++k)
            leaves.push_back(tape.leaf(Tensor::scalar(P(0, k))));
        for (std::size_t l = 0; l < layers; ++l)
            shared.ids.insert(shared.ids.end(), leaves.begin(), leaves.end());
        const auto g = build_graph(tape, state, shared, batch);
        const auto grads = tape.backward(g.loss);
        CHECK(tape.value(g.loss)[0] == r.loss);
        for (std::size_t k = 0; k < spec.alpha_size(); ++k) {
            double sum = 0.0;
            for (std::size_t l = 0; l < layers; ++l)
                sum += r.G(l, k);
            CHECK(std::abs(sum - grads[leaves[k]][0]) <= 1e-10 * std::max(1.0, std::abs(sum)));
        }
    }
}

TEST_CASE("alpha_grad examples")
{
    LayerGradMatrix G(1, 3);
    G(0, 0) = 1.0;
    const auto g = alpha_grad(ArchParams(1, 3), G);
    CHECK(g[0] == doctest::Approx(2.0 / 9.0).epsilon(1e-15));
    CHECK(g[1] == doctest::Approx(-1.0 / 9.0).epsilon(1e-15));
    CHECK(g[2] == doctest::Approx(-1.0 / 9.0).epsilon(1e-15));
    CHECK_THROWS_AS(alpha_grad(ArchParams(1, 4), G), ShapeError);
}

TEST_CASE("alpha_grad annihilates per-edge constants")
{
    std::mt19937_64 rng(10);
    std::normal_distribution<double> normal(0.0, 3.0);
    const auto spec = test::all_ops_spec(3, 2);
    for (int rep = 0; rep < 50; ++rep) {
        const auto alpha = test::random_alpha(spec, rng, 2.0);
        LayerGradMatrix G(4, spec.alpha_size());
        for (std::size_t l = 0; l < 4; ++l)
            for (std::size_t e = 0; e < spec.edge_count(); ++e) {
                const double c = normal(rng);
                for (std::size_t o = 0; o < spec.op_count(); ++o)
                    G(l, spec.alpha_index(e, o)) = c;
            }
        for (double v : alpha_grad(alpha, G))
            CHECK(std::abs(v) <= 1e-12);
    }
}

TEST_CASE("alpha_grad matches differentiating through softmax on the tape")
{
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 4; ++rep) {
        const auto spec = test::all_ops_spec(2, 3);
        const std::size_t layers = 2 + rep;
        SupernetState state(spec, layers, 4, 3, 40 + rep);
        test::jitter(state, rng);
        const Batch batch = test::random_batch(6, 4, 3, rng);
        const auto alpha = test::random_alpha(spec, rng);
        const auto ours = alpha_grad(alpha, layer_grads(state, broadcast_P(alpha, layers), batch).G);

        Tape tape;
        std::vector<NodeId> blocks;
        ProbNodes probs{layers, spec.alpha_size(), {}};
        std::vector<NodeId> p;
        for (std::size_t e = 0; e < spec.edge_count(); ++e) {
            const auto b = alpha.block(e);
            blocks.push_back(tape.leaf(Tensor({b.size()}, {b.begin(), b.end()})));
            const NodeId s = tape.softmax(blocks.back());
            for (std::size_t o = 0; o < spec.op_count(); ++o)
                p.push_back(tape.element(s, o));
        }
        for (std::size_t l = 0; l < layers; ++l)
            probs.ids.insert(probs.ids.end(), p.begin(), p.end());
        const auto g = build_graph(tape, state, probs, batch);
        const auto grads = tape.backward(g.loss);
        std::vector<double> ad;
        for (NodeId b : blocks)
            ad.insert(ad.end(), grads[b].data().begin(), grads[b].data().end());
        CHECK(relative_error(ours, ad) <= 1e-8);
    }
}

TEST_CASE("pass counter counts layer_grads calls")
{
    std::mt19937_64 rng(12);
    const auto spec = test::all_ops_spec(2, 2);
    SupernetState state(spec, 2, 3, 2, 1);
    const Batch batch = test::random_batch(3, 3, 2, rng);
    const auto before = forward_backward_passes();
    layer_grads(state, broadcast_P(ArchParams::zeros(spec), 2), batch);
    evaluate_loss(state, broadcast_P(ArchParams::zeros(spec), 2), batch);
    layer_grads(state, broadcast_P(ArchParams::zeros(spec), 2), batch);
    CHECK(forward_backward_passes() - before == 2);
}

TEST_CASE("shape errors")
{
    std::mt19937_64 rng(13);
    const auto spec = test::all_ops_spec(2, 2);
    SupernetState state(spec, 2, 3, 2, 1);
    CHECK_THROWS_AS(evaluate_loss(state, ProbMatrix(3, spec.alpha_size()), test::random_batch(3, 3, 2, rng)),
                    ShapeError);
    CHECK_THROWS_AS(evaluate_loss(state, ProbMatrix(2, spec.alpha_size()), test::random_batch(3, 4, 2, rng)),
                    ShapeError);
    CHECK_THROWS_AS(alpha_grad(ArchParams::zeros(spec), LayerGradMatrix(2, 3)), ShapeError);
}

TEST_CASE("checkpoint round trip and spec hash check")
{
    std::mt19937_64 rng(14);
    const auto spec = test::all_ops_spec(2, 3);
    SupernetState state(spec, 2, 4, 3, 77);
    test::jitter(state, rng);
    const auto dir = std::filesystem::temp_directory_path() / "lnas_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "state.bin";
    state.save(path);
    const auto loaded = SupernetState::load(path, spec);
    CHECK(loaded.params() == state.params());
    CHECK(loaded.layers() == 2);

    CHECK_THROWS_AS(SupernetState::load(path, test::all_ops_spec(2, 4)), CheckpointError);
    CHECK_THROWS_AS(SupernetState::load(dir / "missing.bin", spec), CheckpointError);
    {
        std::ofstream junk(dir / "junk.bin", std::ios::binary);
        junk << "not a checkpoint";
    }
    CHECK_THROWS_AS(SupernetState::load(dir / "junk.bin", spec), CheckpointError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("supernet construction")
{
    const auto spec = CellSpec::default_spec();
    SupernetState a(spec, 4, 8, 10, 1), b(spec, 4, 8, 10, 1), c(spec, 4, 8, 10, 2);
    CHECK(a.params() == b.params());
    CHECK(a.params() != c.params());
    // 6 edges x 2 parametric ops x (16x16 + 16) per layer, one projection per
    // layer, plus stem and head.
    CHECK(a.scalar_count() == 4 * (12 * (256 + 16) + 256) + (8 * 16 + 16) + (16 * 10 + 10));
    CHECK_FALSE(a.op_params(0, 0, 0).has_value());
    CHECK(a.op_params(0, 0, 2).has_value());
    CHECK_THROWS(SupernetState(spec, 2, 8, 1, 1));
}
