#include "helpers.hpp"

#include "lnas/alignment.hpp"
#include "lnas/gradcheck.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <cmath>
#include <random>

using namespace lnas;

namespace {

LayerGradMatrix rows(std::initializer_list<std::vector<double>> r)
{
    LayerGradMatrix G(r.size(), r.begin()->size());
    std::size_t l = 0;
    for (const auto& row : r)
        std::copy(row.begin(), row.end(), G.row(l++).begin());
    return G;
}

LayerGradMatrix random_G(std::size_t layers, std::size_t width, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal;
    LayerGradMatrix G(layers, width);
    for (double& v : G.values())
        v = normal(rng);
    return G;
}

double cosine(std::span<const double> a, std::span<const double> b)
{
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

double sign_term(std::span<const double> a, std::span<const double> b)
{
    double ab = 0, abs_ab = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        abs_ab += std::abs(a[i]) * std::abs(b[i]);
    }
    return ab / abs_ab;
}

double l2(std::span<const double> v)
{
    double s = 0;
    for (double x : v)
        s += x * x;
    return std::sqrt(s);
}

std::vector<double> jacobian_dense_apply(const ArchParams& alpha, std::span<const double> v)
{
    const auto p = softmax_per_edge(alpha);
    const std::size_t k = alpha.op_count();
    std::vector<double> out(v.size(), 0.0);
    for (std::size_t e = 0; e < alpha.edge_count(); ++e)
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                const double pi = p[e * k + i], pj = p[e * k + j];
                out[e * k + i] += ((i == j ? pi : 0.0) - pi * pj) * v[e * k + j];
            }
    return out;
}

// Removes the per-edge mean of every row, then Gram-Schmidt orthogonalizes.
LayerGradMatrix orthogonal_nullspace_free(std::size_t layers, std::size_t edges, std::size_t ops,
                                          std::mt19937_64& rng)
{
    auto G = random_G(layers, edges * ops, rng);
    for (std::size_t l = 0; l < layers; ++l) {
        auto r = G.row(l);
        for (std::size_t e = 0; e < edges; ++e) {
            double m = 0;
            for (std::size_t o = 0; o < ops; ++o)
                m += r[e * ops + o];
            m /= static_cast<double>(ops);
            for (std::size_t o = 0; o < ops; ++o)
                r[e * ops + o] -= m;
        }
        for (std::size_t q = 0; q < l; ++q) {
            const auto prev = G.row(q);
            double d = 0, n = 0;
            for (std::size_t i = 0; i < r.size(); ++i) {
                d += r[i] * prev[i];
                n += prev[i] * prev[i];
            }
            for (std::size_t i = 0; i < r.size(); ++i)
                r[i] -= d / n * prev[i];
        }
    }
    return G;
}

} // namespace

TEST_CASE("lambda examples")
{
    CHECK(lambda_alignment(rows({{1, 2}, {1, 2}, {1, 2}})) == doctest::Approx(1.0));
    CHECK(lambda_alignment(rows({{1, 0}, {0, 1}})) == 0.0);
    CHECK(lambda_alignment(rows({{1, 0}, {1, 0}, {0, 1}})) == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(lambda_alignment(rows({{1, 0}, {0, 0}})), DegenerateGradientError);
}

TEST_CASE("lambda_sign examples")
{
    CHECK(lambda_sign(rows({{2, -3}, {1, -1}})) == doctest::Approx(1.0));
    CHECK(lambda_sign(rows({{1, 1}, {-1, -1}})) == doctest::Approx(-1.0));
    CHECK(lambda_sign(rows({{1, -1}, {1, 1}})) == doctest::Approx(0.0));
    CHECK_THROWS_AS(lambda_sign(rows({{1, 0}, {0, 1}})), DegenerateGradientError);
}

TEST_CASE("alignment measures agree with a pairwise mean and are scale invariant")
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> scale(0.01, 100.0);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t L = 2 + rep % 7;
        auto G = random_G(L, 1 + rep % 13, rng);
        double cos_sum = 0, sign_sum = 0;
        for (std::size_t a = 0; a < L; ++a)
            for (std::size_t b = a + 1; b < L; ++b) {
                cos_sum += cosine(G.row(a), G.row(b));
                sign_sum += sign_term(G.row(a), G.row(b));
            }
        const double pairs = static_cast<double>(L * (L - 1) / 2);
        const double lam = lambda_alignment(G), lam_s = lambda_sign(G);
        CHECK(lam == doctest::Approx(cos_sum / pairs).epsilon(1e-12));
        CHECK(lam_s == doctest::Approx(sign_sum / pairs).epsilon(1e-12));
        CHECK(std::abs(lam) <= 1.0 + 1e-12);
        CHECK(std::abs(lam_s) <= 1.0 + 1e-12);

        const auto rep_report = alignment_report(G);
        CHECK(rep_report.lambda == lam);
        CHECK(rep_report.lambda_sign == lam_s);
        double upper = 0;
        for (std::size_t a = 0; a < L; ++a) {
            CHECK(rep_report.pairwise(a, a) == doctest::Approx(1.0));
            for (std::size_t b = 0; b < L; ++b)
                CHECK(rep_report.pairwise(a, b) == rep_report.pairwise(b, a));
            for (std::size_t b = a + 1; b < L; ++b)
                upper += rep_report.pairwise(a, b);
        }
        CHECK(lam == doctest::Approx(upper / pairs).epsilon(1e-12));
        CHECK(rep_report.min_layer_grad_norm == doctest::Approx(min_row_norm(G)));

        const std::size_t row = rep % L;
        const double c = scale(rng);
        for (double& v : G.row(row))
            v *= c;
        CHECK(lambda_alignment(G) == doctest::Approx(lam).epsilon(1e-12));
        CHECK(lambda_sign(G) == doctest::Approx(lam_s).epsilon(1e-12));
    }
}

TEST_CASE("lambda equals one for positively parallel rows")
{
    std::mt19937_64 rng(2);
    auto G = random_G(5, 7, rng);
    for (std::size_t l = 1; l < 5; ++l)
        for (std::size_t k = 0; k < 7; ++k)
            G(l, k) = G(0, k) * static_cast<double>(l + 1);
    CHECK(lambda_alignment(G) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(lambda_sign(G) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("delta_pair examples")
{
    const double e0[] = {1, 0}, e1[] = {0, 1};
    auto d = delta_pair(e0, e1, Regularizer::cosine);
    CHECK(d[0] == doctest::Approx(0.0));
    CHECK(d[1] == doctest::Approx(1.0));

    const double g[] = {1, 2, -1}, g2[] = {2, 4, -2};
    for (double v : delta_pair(g, g2, Regularizer::cosine))
        CHECK(std::abs(v) <= 1e-15);

    const double a[] = {3, 4};
    for (double v : delta_pair(a, a, Regularizer::sign))
        CHECK(std::abs(v) <= 1e-15);

    const double zero[] = {0, 0};
    CHECK_THROWS_AS(delta_pair(zero, e1, Regularizer::cosine), DegenerateGradientError);
    CHECK_THROWS(delta_pair(e0, e1, Regularizer::none));
}

TEST_CASE("delta_pair is the gradient of the pair term")
{
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        const auto G = random_G(2, 2 + rep % 9, rng);
        const std::vector<double> g(G.row(0).begin(), G.row(0).end()), g2(G.row(1).begin(), G.row(1).end());
        const ScalarFn cos_fn = [&](std::span<const double> x) { return cosine(x, g2); };
        const ScalarFn sign_fn = [&](std::span<const double> x) { return sign_term(x, g2); };
        const auto dc = delta_pair(g, g2, Regularizer::cosine);
        const auto ds = delta_pair(g, g2, Regularizer::sign);
        CHECK(relative_error(dc, central_difference(cos_fn, g, 1e-6)) <= 1e-7);
        CHECK(relative_error(ds, central_difference(sign_fn, g, 1e-6)) <= 1e-7);
        double dot = 0;
        for (std::size_t i = 0; i < g.size(); ++i)
            dot += dc[i] * g[i];
        CHECK(std::abs(dot) <= 1e-12 * l2(dc) * l2(g) + 1e-300);
    }
}

TEST_CASE("build_delta matches a double loop")
{
    std::mt19937_64 rng(4);
    for (auto variant : {Regularizer::cosine, Regularizer::sign}) {
        for (std::size_t L : {2u, 3u, 6u}) {
            const auto G = random_G(L, 8, rng);
            const auto D = build_delta(G, variant);
            double fro = 0;
            for (std::size_t l = 0; l < L; ++l) {
                std::vector<double> ref(8, 0.0);
                for (std::size_t m = 0; m < L; ++m) {
                    if (m == l)
                        continue;
                    const auto d = delta_pair(G.row(l), G.row(m), variant);
                    for (std::size_t k = 0; k < 8; ++k)
                        ref[k] += d[k];
                }
                for (std::size_t k = 0; k < 8; ++k) {
                    CHECK(std::abs(D.delta(l, k) - ref[k]) <= 1e-12);
                    fro += D.delta(l, k) * D.delta(l, k);
                }
            }
            CHECK(std::abs(D.frobenius_norm - std::sqrt(fro)) <= 1e-12);
            if (L == 2) {
                CHECK(std::vector<double>(D.delta.row(0).begin(), D.delta.row(0).end()) ==
                      delta_pair(G.row(0), G.row(1), variant));
                CHECK(std::vector<double>(D.delta.row(1).begin(), D.delta.row(1).end()) ==
                      delta_pair(G.row(1), G.row(0), variant));
            }
        }
    }
    const auto same = build_delta(rows({{1, -2, 3}, {1, -2, 3}, {1, -2, 3}}), Regularizer::cosine);
    CHECK(same.frobenius_norm <= 1e-15);
}

TEST_CASE("symmetric eigenvalues agree with a reference solver")
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal;
    for (std::size_t n : {1u, 2u, 3u, 5u, 8u, 13u}) {
        for (int rep = 0; rep < 10; ++rep) {
            Eigen::MatrixXd m(n, n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j <= i; ++j)
                    m(i, j) = m(j, i) = normal(rng);
            std::vector<double> a(n * n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    a[i * n + j] = m(i, j);
            const auto ours = symmetric_eigenvalues(a, n);
            const Eigen::VectorXd ref = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues();
            REQUIRE(ours.size() == n);
            for (std::size_t i = 0; i < n; ++i)
                CHECK(ours[i] == doctest::Approx(ref(static_cast<Eigen::Index>(i))).epsilon(1e-10).scale(1.0));
            CHECK(std::is_sorted(ours.begin(), ours.end()));
        }
    }
}

TEST_CASE("softmax Jacobian spectrum examples")
{
    auto s = softmax_jacobian_spectrum(ArchParams(1, 3));
    REQUIRE(s.blocks.size() == 1);
    CHECK(s.blocks[0][0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
    CHECK(s.blocks[0][1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(s.blocks[0][2] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(s.min_nonzero_eig == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    s = softmax_jacobian_spectrum(ArchParams(1, 3, {1000, 0, 0}));
    for (double v : s.blocks[0])
        CHECK(std::abs(v) <= 1e-6);

    for (double p : {0.1, 0.5, 0.73}) {
        s = softmax_jacobian_spectrum(ArchParams(1, 2, {std::log(p / (1 - p)), 0}));
        CHECK(s.blocks[0][1] == doctest::Approx(2 * p * (1 - p)).epsilon(1e-12));
    }
}

TEST_CASE("Jacobian blocks are PSD with one null eigenvalue")
{
    std::mt19937_64 rng(6);
    const auto spec = test::all_ops_spec(3, 2);
    for (int rep = 0; rep < 50; ++rep) {
        const auto alpha = test::random_alpha(spec, rng, 2.0);
        const auto s = softmax_jacobian_spectrum(alpha);
        REQUIRE(s.blocks.size() == spec.edge_count());
        double smallest = 1e300;
        for (const auto& b : s.blocks) {
            std::size_t near_zero = 0;
            for (double v : b) {
                CHECK(v >= -1e-12);
                near_zero += std::abs(v) <= 1e-10;
            }
            CHECK(near_zero == 1);
            smallest = std::min(smallest, b[1]);
        }
        CHECK(s.min_nonzero_eig == doctest::Approx(smallest).epsilon(1e-12));
    }
}

TEST_CASE("nullspace residual")
{
    ArchParams uniform(2, 3);
    const double constants[] = {2, 2, 2, -5, -5, -5};
    CHECK(nullspace_residual(uniform, constants) <= 1e-12);
    const double zero[6] = {};
    CHECK(nullspace_residual(uniform, zero) == 0.0);
    const double v[] = {1, -1, 0, 0, 0, 0};
    CHECK(nullspace_residual(uniform, v) == doctest::Approx(std::sqrt(2.0) / 3.0).epsilon(1e-12));

    std::mt19937_64 rng(7);
    const auto spec = test::all_ops_spec(2, 2);
    for (int rep = 0; rep < 20; ++rep) {
        const auto alpha = test::random_alpha(spec, rng);
        std::vector<double> w(spec.alpha_size());
        std::normal_distribution<double> normal;
        for (double& x : w)
            x = normal(rng);
        CHECK(nullspace_residual(alpha, w) == doctest::Approx(l2(jacobian_dense_apply(alpha, w))).epsilon(1e-12));
        CHECK(relative_error(jacobian_apply(alpha, w), jacobian_dense_apply(alpha, w)) <= 1e-14);
    }
}

TEST_CASE("prop1 examples")
{
    const ArchParams alpha(2, 3);
    const auto zero = prop1_check(alpha, LayerGradMatrix(3, 6));
    CHECK(zero.preconditions_met);
    CHECK(zero.lhs == 0.0);
    CHECK(zero.rhs == 0.0);
    CHECK(zero.holds);

    const auto bad = prop1_check(alpha, rows({{1, 0, -1, 0, 0, 0}, {1, -1, 0, 0, 0, 0}}));
    CHECK_FALSE(bad.preconditions_met);
    CHECK_FALSE(bad.violation.empty());
    const auto in_null = prop1_check(alpha, rows({{1, 1, 1, 0, 0, 0}}));
    CHECK_FALSE(in_null.preconditions_met);

    // One layer: a Rayleigh quotient bound on a single null-space-free row.
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        const auto a = test::random_alpha(test::all_ops_spec(2, 2), rng);
        const auto G = orthogonal_nullspace_free(1, a.edge_count(), a.op_count(), rng);
        const auto r = prop1_check(a, G);
        REQUIRE(r.preconditions_met);
        const double lam = softmax_jacobian_spectrum(a).min_nonzero_eig;
        const double gn = l2(G.row(0));
        CHECK(r.rhs == doctest::Approx(lam * lam * gn * gn).epsilon(1e-12));
        CHECK(r.lhs >= lam * lam * gn * gn - 1e-10);
    }
}

TEST_CASE("prop1 holds on randomized orthogonal instances")
{
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> ops(2, 5), edges(1, 12), layers(1, 8);
    int held = 0, trials = 0;
    while (trials < 1000) {
        const std::size_t k = ops(rng), e = edges(rng), L = layers(rng);
        if (e * k > 60 || L > e * (k - 1))
            continue;
        ++trials;
        std::normal_distribution<double> normal(0.0, 1.5);
        ArchParams alpha(e, k);
        for (double& v : alpha.values())
            v = normal(rng);
        const auto r = prop1_check(alpha, orthogonal_nullspace_free(L, e, k, rng));
        held += r.preconditions_met && r.holds;
    }
    CHECK(held == 1000);
}
