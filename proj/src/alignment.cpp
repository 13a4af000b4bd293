#include "lnas/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lnas {
namespace {

double sign_of(double v)
{
    return static_cast<double>((v > 0.0) - (v < 0.0));
}

double abs_dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += std::abs(a[i]) * std::abs(b[i]);
    return s;
}

void require_pairs(const LayerGradMatrix& G, const char* what)
{
    if (G.rows() < 2)
        throw std::invalid_argument(std::string(what) + ": need at least two layers");
}

double pairs(std::size_t L)
{
    return static_cast<double>(L) * static_cast<double>(L - 1) / 2.0;
}

std::vector<double> row_norms(const LayerGradMatrix& G, const char* what)
{
    std::vector<double> n(G.rows());
    for (std::size_t l = 0; l < G.rows(); ++l) {
        n[l] = norm2(G.row(l));
        if (!(n[l] > norm_floor))
            throw DegenerateGradientError(std::string(what) + ": layer " + std::to_string(l) +
                                          " gradient norm is below the floor");
    }
    return n;
}

} // namespace

std::string_view regularizer_name(Regularizer r)
{
    switch (r) {
    case Regularizer::none:
        return "none";
    case Regularizer::cosine:
        return "cosine";
    case Regularizer::sign:
        return "sign";
    }
    return "?";
}

Regularizer parse_regularizer(std::string_view name)
{
    if (name == "none")
        return Regularizer::none;
    if (name == "cosine")
        return Regularizer::cosine;
    if (name == "sign")
        return Regularizer::sign;
    throw std::invalid_argument("unknown variant '" + std::string(name) + "' (expected cosine, sign or none)");
}

double min_row_norm(const LayerGradMatrix& G)
{
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < G.rows(); ++l)
        m = std::min(m, norm2(G.row(l)));
    return G.rows() ? m : 0.0;
}

double lambda_alignment(const LayerGradMatrix& G)
{
    require_pairs(G, "lambda_alignment");
    const auto norms = row_norms(G, "lambda_alignment");
    double s = 0.0;
    for (std::size_t a = 0; a < G.rows(); ++a)
        for (std::size_t b = a + 1; b < G.rows(); ++b)
            s += dot(G.row(a), G.row(b)) / (norms[a] * norms[b]);
    return s / pairs(G.rows());
}

double lambda_sign(const LayerGradMatrix& G)
{
    require_pairs(G, "lambda_sign");
    double s = 0.0;
    for (std::size_t a = 0; a < G.rows(); ++a) {
        for (std::size_t b = a + 1; b < G.rows(); ++b) {
            const double denom = abs_dot(G.row(a), G.row(b));
            if (!(denom > norm_floor))
                throw DegenerateGradientError("lambda_sign: layers " + std::to_string(a) + " and " +
                                              std::to_string(b) + " share no support");
            s += dot(G.row(a), G.row(b)) / denom;
        }
    }
    return s / pairs(G.rows());
}

AlignmentReport alignment_report(const LayerGradMatrix& G)
{
    AlignmentReport r;
    r.lambda = lambda_alignment(G);
    r.lambda_sign = lambda_sign(G);
    r.min_layer_grad_norm = min_row_norm(G);
    const auto norms = row_norms(G, "alignment_report");
    r.pairwise = RowMatrix(G.rows(), G.rows());
    for (std::size_t a = 0; a < G.rows(); ++a) {
        r.pairwise(a, a) = 1.0;
        for (std::size_t b = a + 1; b < G.rows(); ++b) {
            const double c = dot(G.row(a), G.row(b)) / (norms[a] * norms[b]);
            r.pairwise(a, b) = c;
            r.pairwise(b, a) = c;
        }
    }
    return r;
}

nlohmann::json AlignmentReport::to_json() const
{
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t a = 0; a < pairwise.rows(); ++a)
        rows.push_back(std::vector<double>(pairwise.row(a).begin(), pairwise.row(a).end()));
    return {{"Lambda", lambda},
            {"Lambda_sign", lambda_sign},
            {"pairwise", rows},
            {"min_layer_grad_norm", min_layer_grad_norm}};
}

std::vector<double> delta_pair(std::span<const double> g, std::span<const double> g2, Regularizer variant)
{
    if (g.size() != g2.size())
        throw ShapeError("delta_pair: length mismatch");
    std::vector<double> out(g.size(), 0.0);
    switch (variant) {
    case Regularizer::none:
        throw std::invalid_argument("delta_pair: no regularizer variant selected");
    case Regularizer::cosine: {
        const double n1 = norm2(g);
        const double n2 = norm2(g2);
        if (!(n1 > norm_floor) || !(n2 > norm_floor))
            throw DegenerateGradientError("delta_pair: gradient norm below the floor");
        // (I - g g^T / |g|^2) g2 / (|g| |g2|)
        const double proj = dot(g, g2) / (n1 * n1);
        const double scale = 1.0 / (n1 * n2);
        for (std::size_t i = 0; i < g.size(); ++i)
            out[i] = (g2[i] - proj * g[i]) * scale;
        break;
    }
    case Regularizer::sign: {
        const double denom = abs_dot(g, g2);
        if (!(denom > norm_floor))
            throw DegenerateGradientError("delta_pair: |g|^T|g'| below the floor");
        // (I - (g^T g' / |g|^T|g'|) diag(sign g) diag(sign g')) g' / |g|^T|g'|
        const double ratio = dot(g, g2) / denom;
        for (std::size_t i = 0; i < g.size(); ++i)
            out[i] = (g2[i] - ratio * sign_of(g[i]) * sign_of(g2[i]) * g2[i]) / denom;
        break;
    }
    }
    return out;
}

DeltaMatrix build_delta(const LayerGradMatrix& G, Regularizer variant)
{
    require_pairs(G, "build_delta");
    DeltaMatrix d{RowMatrix(G.rows(), G.cols()), 0.0};
    for (std::size_t a = 0; a < G.rows(); ++a) {
        auto row = d.delta.row(a);
        for (std::size_t b = 0; b < G.rows(); ++b) {
            if (a == b)
                continue;
            const auto pair = delta_pair(G.row(a), G.row(b), variant);
            for (std::size_t k = 0; k < pair.size(); ++k)
                row[k] += pair[k];
        }
    }
    d.frobenius_norm = norm2(d.delta.values());
    return d;
}

std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n)
{
    if (a.size() != n * n)
        throw ShapeError("symmetric_eigenvalues: matrix is not n x n");
    if (n == 0)
        return {};
    auto A = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
    std::vector<double> d(n, 0.0), e(n, 0.0);

    // Householder reduction to tridiagonal form (lower triangle).
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t l = i - 1;
        double h = 0.0;
        if (l > 0) {
            double scale = 0.0;
            for (std::size_t k = 0; k <= l; ++k)
                scale += std::abs(A(i, k));
            if (scale == 0.0) {
                e[i] = A(i, l);
            } else {
                for (std::size_t k = 0; k <= l; ++k) {
                    A(i, k) /= scale;
                    h += A(i, k) * A(i, k);
                }
                double f = A(i, l);
                double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
                e[i] = scale * g;
                h -= f * g;
                A(i, l) = f - g;
                f = 0.0;
                for (std::size_t j = 0; j <= l; ++j) {
                    g = 0.0;
                    for (std::size_t k = 0; k <= j; ++k)
                        g += A(j, k) * A(i, k);
                    for (std::size_t k = j + 1; k <= l; ++k)
                        g += A(k, j) * A(i, k);
                    e[j] = g / h;
                    f += e[j] * A(i, j);
                }
                const double hh = f / (h + h);
                for (std::size_t j = 0; j <= l; ++j) {
                    f = A(i, j);
                    g = e[j] - hh * f;
                    e[j] = g;
                    for (std::size_t k = 0; k <= j; ++k)
                        A(j, k) -= f * e[k] + g * A(i, k);
                }
            }
        } else {
            e[i] = A(i, l);
        }
        d[i] = h;
    }
    for (std::size_t i = 0; i < n; ++i)
        d[i] = A(i, i);

    // Implicit QL on the tridiagonal (d, e).
    for (std::size_t i = 1; i < n; ++i)
        e[i - 1] = e[i];
    e[n - 1] = 0.0;
    const double eps = std::numeric_limits<double>::epsilon();
    const int ni = static_cast<int>(n);
    for (int l = 0; l < ni; ++l) {
        int iter = 0;
        int m = l;
        do {
            for (m = l; m < ni - 1; ++m) {
                const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
                if (std::abs(e[m]) <= eps * dd)
                    break;
            }
            if (m != l) {
                if (iter++ == 60)
                    throw std::runtime_error("symmetric_eigenvalues: QL iteration did not converge");
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + (g >= 0.0 ? std::abs(r) : -std::abs(r)));
                double s = 1.0, c = 1.0, p = 0.0;
                int i = m - 1;
                for (; i >= l; --i) {
                    double f = s * e[i];
                    const double b = c * e[i];
                    r = std::hypot(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                }
                if (r == 0.0 && i >= l)
                    continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
    std::sort(d.begin(), d.end());
    return d;
}

JacobianSpectrum softmax_jacobian_spectrum(const ArchParams& alpha)
{
    const auto p = softmax_per_edge(alpha);
    const std::size_t k = alpha.op_count();
    JacobianSpectrum spec;
    spec.min_nonzero_eig = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < alpha.edge_count(); ++e) {
        std::vector<double> block(k * k);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j)
                block[i * k + j] = (i == j ? p[e * k + i] : 0.0) - p[e * k + i] * p[e * k + j];
        auto eig = symmetric_eigenvalues(std::move(block), k);
        std::size_t null_idx = 0;
        for (std::size_t i = 1; i < k; ++i)
            if (std::abs(eig[i]) < std::abs(eig[null_idx]))
                null_idx = i;
        for (std::size_t i = 0; i < k; ++i)
            if (i != null_idx)
                spec.min_nonzero_eig = std::min(spec.min_nonzero_eig, eig[i]);
        spec.blocks.push_back(std::move(eig));
    }
    if (!std::isfinite(spec.min_nonzero_eig))
        spec.min_nonzero_eig = 0.0;
    return spec;
}

double nullspace_residual(const ArchParams& alpha, std::span<const double> v)
{
    return norm2(jacobian_apply(alpha, v));
}

Prop1Result prop1_check(const ArchParams& alpha, const LayerGradMatrix& G)
{
    Prop1Result r;
    if (G.cols() != alpha.size())
        throw ShapeError("prop1_check: gradient width differs from alpha");
    const std::size_t L = G.rows();
    const std::size_t k = alpha.op_count();
    std::vector<double> norms(L);
    for (std::size_t l = 0; l < L; ++l)
        norms[l] = norm2(G.row(l));

    for (std::size_t a = 0; a < L && r.violation.empty(); ++a) {
        for (std::size_t b = a + 1; b < L; ++b) {
            if (std::abs(dot(G.row(a), G.row(b))) > prop1_orthogonality_tol * norms[a] * norms[b]) {
                r.violation = "layers " + std::to_string(a) + " and " + std::to_string(b) + " are not orthogonal";
                break;
            }
        }
        for (std::size_t e = 0; e < alpha.edge_count() && r.violation.empty(); ++e) {
            double s = 0.0;
            for (std::size_t o = 0; o < k; ++o)
                s += G(a, e * k + o);
            if (std::abs(s) > prop1_orthogonality_tol * std::max(norms[a], 1.0))
                r.violation = "layer " + std::to_string(a) + " has a null-space component on edge " + std::to_string(e);
        }
    }
    if (!r.violation.empty())
        return r;
    r.preconditions_met = true;

    const auto g_alpha = alpha_grad(alpha, G);
    r.lhs = dot(g_alpha, g_alpha);
    const double lam = softmax_jacobian_spectrum(alpha).min_nonzero_eig;
    const double min_norm = L ? *std::min_element(norms.begin(), norms.end()) : 0.0;
    r.rhs = lam * lam * static_cast<double>(L) * min_norm * min_norm;
    r.holds = r.lhs >= r.rhs - 1e-10;
    return r;
}

} // namespace lnas
