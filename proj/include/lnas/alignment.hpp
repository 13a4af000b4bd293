#pragma once

#include "lnas/search_space.hpp"
#include "lnas/supernet.hpp"

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace lnas {

// Which alignment measure the regularizer targets.
enum class Regularizer { none, cosine, sign };

std::string_view regularizer_name(Regularizer r);
Regularizer parse_regularizer(std::string_view name);

inline constexpr double norm_floor = 1e-12;

// Raised when a layer gradient (or a pair's |g|^T|g'|) is at or below
// norm_floor, where the alignment measures are undefined.
struct DegenerateGradientError : std::domain_error {
    using std::domain_error::domain_error;
};

struct AlignmentReport {
    double lambda = 0.0;
    double lambda_sign = 0.0;
    RowMatrix pairwise;
    double min_layer_grad_norm = 0.0;

    nlohmann::json to_json() const;
};

// Mean pairwise cosine similarity of the rows of G.
double lambda_alignment(const LayerGradMatrix& G);
// Mean pairwise g^T g' / (|g|^T |g'|).
double lambda_sign(const LayerGradMatrix& G);
AlignmentReport alignment_report(const LayerGradMatrix& G);

double min_row_norm(const LayerGradMatrix& G);

// Gradient of the pair term for (g, g2) with respect to g.
std::vector<double> delta_pair(std::span<const double> g, std::span<const double> g2, Regularizer variant);

struct DeltaMatrix {
    RowMatrix delta;
    double frobenius_norm = 0.0;
};

// Row l = sum over l' != l of delta_pair(G[l], G[l'], variant).
DeltaMatrix build_delta(const LayerGradMatrix& G, Regularizer variant);

// Eigenvalues of a dense symmetric n x n matrix (row-major), ascending.
// Householder tridiagonalization followed by implicit QL.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n);

struct JacobianSpectrum {
    std::vector<std::vector<double>> blocks;
    // Smallest eigenvalue once each block's structural null eigenvalue (the
    // one nearest zero) is set aside.
    double min_nonzero_eig = 0.0;
};

JacobianSpectrum softmax_jacobian_spectrum(const ArchParams& alpha);

// || J_sigma(alpha) v ||_2
double nullspace_residual(const ArchParams& alpha, std::span<const double> v);

struct Prop1Result {
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = false;
    bool preconditions_met = false;
    std::string violation;
};

inline constexpr double prop1_orthogonality_tol = 1e-8;

// Checks ||J (sum_l G[l])||^2 >= min_nonzero_eig^2 * L * min_l ||G[l]||^2.
// Rows must be pairwise orthogonal and orthogonal to the per-edge constant
// null space; otherwise the check is skipped and the violation reported.
Prop1Result prop1_check(const ArchParams& alpha, const LayerGradMatrix& G);

} // namespace lnas
