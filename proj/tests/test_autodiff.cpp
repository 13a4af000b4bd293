#include "lnas/gradcheck.hpp"
#include "lnas/kernels.hpp"
#include "lnas/tape.hpp"
#include "lnas/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

using namespace lnas;

namespace {

// Textbook triple loop, independent of the kernels under test.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n)
{
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p)
                c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data())
        v = u(rng);
    return t;
}

double matmul_value(const Tensor& a, const Tensor& b)
{
    Tape tape;
    return tape.value(tape.matmul(tape.leaf(a), tape.leaf(b))).data()[0];
}

// f(theta) = <op(leaves(theta)), r> for a random projection r.
struct OpCase {
    const char* name;
    std::vector<Shape> inputs;
    std::function<NodeId(Tape&, const std::vector<NodeId>&)> build;
};

double max_op_error(const OpCase& c, std::mt19937_64& rng)
{
    std::vector<Tensor> values;
    std::vector<double> theta;
    for (const auto& s : c.inputs) {
        values.push_back(uniform_tensor(s, rng));
        theta.insert(theta.end(), values.back().data().begin(), values.back().data().end());
    }
    Tensor probe;
    auto record = [&](std::span<const double> th, Tape& tape, std::vector<NodeId>& leaves) {
        std::size_t off = 0;
        leaves.clear();
        for (const auto& s : c.inputs) {
            const std::size_t n = shape_size(s);
            leaves.push_back(tape.leaf(Tensor(s, std::vector<double>(th.begin() + off, th.begin() + off + n))));
            off += n;
        }
        const NodeId out = c.build(tape, leaves);
        if (probe.size() == 0)
            probe = uniform_tensor(tape.value(out).shape(), rng);
        return tape.inner(out, tape.constant(probe));
    };
    Tape tape;
    std::vector<NodeId> leaves;
    const NodeId loss = record(theta, tape, leaves);
    const auto grads = tape.backward(loss);
    std::vector<double> analytic;
    for (NodeId id : leaves)
        analytic.insert(analytic.end(), grads[id].data().begin(), grads[id].data().end());
    const ScalarFn f = [&](std::span<const double> th) {
        Tape t;
        std::vector<NodeId> l;
        return t.value(record(th, t, l)).data()[0];
    };
    return relative_error(analytic, finite_diff_gradcheck(f, theta, analytic, 1e-5).numeric);
}

} // namespace

TEST_CASE("tensor rejects bad shapes and non-finite data")
{
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    CHECK_THROWS_AS(Tensor({1}, {std::numeric_limits<double>::quiet_NaN()}), NonFiniteError);
    CHECK_THROWS_AS(Tensor({2}, {1.0, std::numeric_limits<double>::infinity()}), NonFiniteError);
    const Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.at(1, 2) == 6.0);
    CHECK(shape_string(t.shape()) == "[2x3]");
}

TEST_CASE("matmul examples")
{
    Tape tape;
    const auto id = tape.leaf(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    const auto m = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    CHECK(tape.value(tape.matmul(id, m)) == Tensor::matrix(2, 2, {1, 2, 3, 4}));
    CHECK(matmul_value(Tensor::matrix(1, 2, {1, 0}), Tensor::matrix(2, 1, {0, 0})) == 0.0);
    const auto r = tape.matmul(m, tape.leaf(Tensor::matrix(2, 1, {1, 1})));
    CHECK(tape.value(r) == Tensor::matrix(2, 1, {3, 7}));
    CHECK_THROWS_AS(tape.matmul(m, tape.leaf(Tensor::matrix(3, 1, {1, 1, 1}))), ShapeError);
}

TEST_CASE("gemm kernels agree with a naive product, serial and parallel bit for bit")
{
    std::mt19937_64 rng(7);
    for (auto [m, k, n] : {std::tuple{1u, 1u, 1u}, {3u, 5u, 2u}, {17u, 9u, 13u}, {128u, 64u, 96u}}) {
        const Tensor a = uniform_tensor({m, k}, rng), b = uniform_tensor({k, n}, rng);
        const auto ref = naive_matmul(a.values(), b.values(), m, k, n);
        std::vector<double> serial(m * n), parallel(m * n), dispatch(m * n);
        const kernels::GemmDims d{m, n, k, kernels::Layout::normal, kernels::Layout::normal};
        kernels::gemm_serial(d, a.data(), b.data(), serial);
        kernels::gemm_parallel(d, a.data(), b.data(), parallel);
        kernels::gemm(d, a.data(), b.data(), dispatch);
        CHECK(serial == parallel);
        CHECK(serial == dispatch);
        double worst = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i)
            worst = std::max(worst, std::abs(ref[i] - serial[i]));
        CHECK(worst <= 1e-12 * static_cast<double>(k));
    }
}

TEST_CASE("gemm transposed layouts")
{
    std::mt19937_64 rng(8);
    const std::size_t m = 4, k = 3, n = 5;
    const Tensor a = uniform_tensor({m, k}, rng), b = uniform_tensor({k, n}, rng);
    const auto ref = naive_matmul(a.values(), b.values(), m, k, n);
    std::vector<double> at(k * m), bt(n * k);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
            at[p * m + i] = a.at(i, p);
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j)
            bt[j * k + p] = b.at(p, j);
    std::vector<double> c1(m * n), c2(m * n);
    kernels::gemm_serial({m, n, k, kernels::Layout::transposed, kernels::Layout::normal}, at, b.data(), c1);
    kernels::gemm_serial({m, n, k, kernels::Layout::normal, kernels::Layout::transposed}, a.data(), bt, c2);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(c1[i] == doctest::Approx(ref[i]).epsilon(1e-14));
        CHECK(c2[i] == doctest::Approx(ref[i]).epsilon(1e-14));
    }
}

TEST_CASE("scalar_combine examples and errors")
{
    Tape tape;
    const auto T = tape.leaf(Tensor::matrix(1, 2, {3, -1}));
    const auto one = tape.leaf(Tensor::scalar(1.0));
    const auto half = tape.leaf(Tensor::scalar(0.5));
    const Tensor tv = tape.value(T);
    const WeightedTerm single[] = {{one, T}};
    CHECK(tape.value(tape.scalar_combine(single)) == tv);
    const WeightedTerm halves[] = {{half, T}, {half, T}};
    CHECK(tape.value(tape.scalar_combine(halves)) == tv);

    const auto t1 = tape.leaf(Tensor::matrix(1, 2, {1, 0}));
    const auto t2 = tape.leaf(Tensor::matrix(1, 2, {0, 1}));
    const WeightedTerm mix[] = {{tape.leaf(Tensor::scalar(0.3)), t1}, {tape.leaf(Tensor::scalar(0.7)), t2}};
    const auto v = tape.value(tape.scalar_combine(mix));
    CHECK(v[0] == doctest::Approx(0.3));
    CHECK(v[1] == doctest::Approx(0.7));

    CHECK_THROWS_AS(tape.scalar_combine(std::span<const WeightedTerm>{}), ShapeError);
    const auto other = tape.leaf(Tensor::matrix(1, 3, {1, 2, 3}));
    const WeightedTerm bad[] = {{one, T}, {one, other}};
    CHECK_THROWS_AS(tape.scalar_combine(bad), ShapeError);
}

TEST_CASE("scalar_combine deposits <t, upstream> into each weight")
{
    Tape tape;
    const auto w1 = tape.leaf(Tensor::scalar(0.3));
    const auto w2 = tape.leaf(Tensor::scalar(0.7));
    const auto t1 = tape.leaf(Tensor::matrix(1, 2, {1, 2}));
    const auto t2 = tape.leaf(Tensor::matrix(1, 2, {-1, 4}));
    const WeightedTerm terms[] = {{w1, t1}, {w2, t2}};
    const auto out = tape.scalar_combine(terms);
    const auto loss = tape.inner(out, tape.constant(Tensor::matrix(1, 2, {5, 7})));
    const auto g = tape.backward(loss);
    CHECK(g[w1][0] == doctest::Approx(1 * 5 + 2 * 7));
    CHECK(g[w2][0] == doctest::Approx(-1 * 5 + 4 * 7));
    CHECK(g[t1][0] == doctest::Approx(0.3 * 5));
}

TEST_CASE("tanh examples")
{
    Tape tape;
    CHECK(tape.value(tape.tanh(tape.leaf(Tensor::scalar(0.0))))[0] == 0.0);
    CHECK(tape.value(tape.tanh(tape.leaf(Tensor::scalar(50.0))))[0] == doctest::Approx(1.0).epsilon(1e-12));
    const auto x = tape.leaf(Tensor::scalar(0.0));
    const auto y = tape.tanh(x);
    CHECK(tape.backward(y)[x][0] == 1.0);
}

TEST_CASE("softmax cross-entropy examples")
{
    {
        Tape tape;
        const int labels[] = {2, 0};
        const auto l = tape.softmax_cross_entropy(tape.leaf(Tensor::zeros({2, 5})), labels);
        CHECK(tape.value(l)[0] == doctest::Approx(std::log(5.0)).epsilon(1e-14));
    }
    {
        Tape tape;
        const int labels[] = {1};
        const auto l = tape.softmax_cross_entropy(tape.leaf(Tensor::matrix(1, 3, {0, 1000, 0})), labels);
        CHECK(tape.value(l)[0] == doctest::Approx(0.0));
    }
    {
        Tape tape;
        const int labels[] = {0};
        const auto l = tape.softmax_cross_entropy(tape.leaf(Tensor::matrix(1, 2, {1, 0})), labels);
        CHECK(tape.value(l)[0] == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-14));
        CHECK(tape.value(l)[0] == doctest::Approx(0.3133).epsilon(1e-4));
    }
    Tape tape;
    const int bad[] = {3};
    CHECK_THROWS_AS(tape.softmax_cross_entropy(tape.leaf(Tensor::zeros({1, 3})), bad), std::out_of_range);
    const int neg[] = {-1};
    CHECK_THROWS_AS(tape.softmax_cross_entropy(tape.leaf(Tensor::zeros({1, 3})), neg), std::out_of_range);
}

TEST_CASE("backward examples")
{
    Tape tape;
    const auto w = tape.leaf(Tensor::matrix(1, 3, {1, -2, 0.5}));
    const auto c = tape.constant(Tensor::scalar(4.0));
    const auto gc = tape.backward(c);
    CHECK(gc[w] == Tensor::zeros({1, 3}));

    const auto loss = tape.scale(tape.inner(w, w), 0.5);
    const auto g = tape.backward(loss);
    CHECK(g[w] == tape.value(w));
    CHECK_THROWS_AS(tape.backward(w), ShapeError);
}

TEST_CASE("every differentiable op matches central differences")
{
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> dim(1, 4);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
        const std::vector<OpCase> cases{
            {"matmul", {{m, k}, {k, n}}, [](Tape& t, const auto& in) { return t.matmul(in[0], in[1]); }},
            {"add", {{m, n}, {m, n}}, [](Tape& t, const auto& in) { return t.add(in[0], in[1]); }},
            {"add_bias", {{m, n}, {1, n}}, [](Tape& t, const auto& in) { return t.add_bias(in[0], in[1]); }},
            {"scale", {{m, n}}, [](Tape& t, const auto& in) { return t.scale(in[0], -1.7); }},
            {"sum", {{m, n}, {m, n}, {m, n}}, [](Tape& t, const auto& in) { return t.sum(in); }},
            {"tanh", {{m, n}}, [](Tape& t, const auto& in) { return t.tanh(in[0]); }},
            {"softmax", {{m, n}}, [](Tape& t, const auto& in) { return t.softmax(in[0]); }},
            {"element", {{m, n}}, [](Tape& t, const auto& in) { return t.element(in[0], 0); }},
            {"inner", {{m, n}, {m, n}}, [](Tape& t, const auto& in) { return t.inner(in[0], in[1]); }},
            {"scalar_combine", {{1}, {1}, {m, n}, {m, n}},
             [](Tape& t, const auto& in) {
                 const WeightedTerm terms[] = {{in[0], in[2]}, {in[1], in[3]}};
                 return t.scalar_combine(terms);
             }},
            {"cross_entropy", {{m, n + 1}},
             [m, n](Tape& t, const auto& in) {
                 std::vector<int> labels(m);
                 for (std::size_t i = 0; i < m; ++i)
                     labels[i] = static_cast<int>((i * 7 + 3) % (n + 1));
                 return t.softmax_cross_entropy(in[0], labels);
             }},
        };
        for (const auto& c : cases) {
            CAPTURE(c.name);
            CHECK(max_op_error(c, rng) <= 1e-5);
        }
    }
}

TEST_CASE("backward is deterministic")
{
    std::mt19937_64 rng(12);
    const Tensor a = uniform_tensor({5, 4}, rng), b = uniform_tensor({4, 3}, rng);
    auto run = [&] {
        Tape tape;
        const auto x = tape.leaf(a), w = tape.leaf(b);
        const int labels[] = {0, 1, 2, 0, 1};
        const auto loss = tape.softmax_cross_entropy(tape.tanh(tape.matmul(x, w)), labels);
        const auto g = tape.backward(loss);
        return std::pair{g[x], g[w]};
    };
    CHECK(run() == run());
}

TEST_CASE("ops stay finite on inputs within [-1e3, 1e3]")
{
    std::mt19937_64 rng(13);
    const Tensor a = uniform_tensor({3, 4}, rng, -1e3, 1e3);
    Tape tape;
    const auto x = tape.leaf(a);
    const int labels[] = {0, 1, 2};
    CHECK_NOTHROW(tape.softmax(x));
    CHECK_NOTHROW(tape.tanh(x));
    const auto loss = tape.softmax_cross_entropy(x, labels);
    CHECK(std::isfinite(tape.value(loss)[0]));
    CHECK_NOTHROW(tape.backward(loss));
}

TEST_CASE("gradcheck harness")
{
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(0.0, 1e-12) == doctest::Approx(1e-4));

    const double theta[] = {0.3, -1.2, 2.0};
    const ScalarFn linear = [](std::span<const double> t) { return 2.0 * t[0] - 3.0 * t[1] + 0.5 * t[2]; };
    const double lin_grad[] = {2.0, -3.0, 0.5};
    CHECK(finite_diff_gradcheck(linear, theta, lin_grad, 1e-5).max_rel_error < 1e-10);

    const double one[] = {1.0};
    const ScalarFn cube = [](std::span<const double> t) { return t[0] * t[0] * t[0]; };
    const double three[] = {3.0};
    CHECK(finite_diff_gradcheck(cube, one, three, 1e-3).max_rel_error <= 1e-5);

    CHECK_THROWS_AS(central_difference(cube, one, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(central_difference(cube, one, -1e-3), std::invalid_argument);
    const ScalarFn nan_fn = [](std::span<const double>) { return std::numeric_limits<double>::quiet_NaN(); };
    CHECK_THROWS_AS(central_difference(nan_fn, one, 1e-3), NonFiniteError);
}

TEST_CASE("two-layer net matches finite differences within 1e-6")
{
    std::mt19937_64 rng(14);
    const Tensor x = uniform_tensor({6, 3}, rng);
    const int labels[] = {0, 1, 2, 1, 0, 2};
    const Tensor w1 = uniform_tensor({3, 4}, rng), b1 = uniform_tensor({1, 4}, rng), w2 = uniform_tensor({4, 3}, rng);
    std::vector<double> theta;
    for (const Tensor* t : {&w1, &b1, &w2})
        theta.insert(theta.end(), t->data().begin(), t->data().end());
    auto record = [&](std::span<const double> th, Tape& tape, std::vector<NodeId>& leaves) {
        leaves = {tape.leaf(Tensor({3, 4}, {th.begin(), th.begin() + 12})),
                  tape.leaf(Tensor({1, 4}, {th.begin() + 12, th.begin() + 16})),
                  tape.leaf(Tensor({4, 3}, {th.begin() + 16, th.end()}))};
        const auto h = tape.tanh(tape.add_bias(tape.matmul(tape.constant(x), leaves[0]), leaves[1]));
        return tape.softmax_cross_entropy(tape.matmul(h, leaves[2]), labels);
    };
    Tape tape;
    std::vector<NodeId> leaves;
    const auto g = tape.backward(record(theta, tape, leaves));
    std::vector<double> analytic;
    for (auto id : leaves)
        analytic.insert(analytic.end(), g[id].data().begin(), g[id].data().end());
    const ScalarFn f = [&](std::span<const double> th) {
        Tape t;
        std::vector<NodeId> l;
        return t.value(record(th, t, l))[0];
    };
    CHECK(relative_error(analytic, finite_diff_gradcheck(f, theta, analytic, 1e-5).numeric) <= 1e-6);
}
