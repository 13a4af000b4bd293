#pragma once

#include "lnas/alignment.hpp"
#include "lnas/supernet.hpp"

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

// Brute-force references for every approximated quantity. These share only the
// forward pass with the code they check.
namespace lnas::oracle {

inline constexpr std::size_t max_oracle_params = 5000;

struct CostGuardExceeded : std::length_error {
    using std::length_error::length_error;
};

// Central difference of the loss with respect to every entry of P.
LayerGradMatrix layer_grad(const SupernetState& state, const ProbMatrix& P, const Batch& batch, double h = 1e-5);

// Coordinate central differences of Lambda (cosine) or Lambda_sign (sign) with
// respect to every weight. Each probe recomputes the layer gradients.
ParamGrads reg_grad(const SupernetState& state, const ArchParams& alpha, const Batch& batch, Regularizer variant,
                    double h = 1e-5);

// Alignment measure at (state, alpha) for `variant`.
double alignment_value(const SupernetState& state, const ArchParams& alpha, const Batch& batch, Regularizer variant);

struct SharedProbGrad {
    double loss = 0.0;
    std::vector<double> grad_p;
    ParamGrads omega;
};

// Gradient with respect to one probability vector p shared by every layer.
SharedProbGrad shared_prob_grad(const SupernetState& state, std::span<const double> p, const Batch& batch);

// Gradient of the loss with respect to alpha with the softmax recorded on the
// tape.
std::vector<double> alpha_grad_ad(const SupernetState& state, const ArchParams& alpha, const Batch& batch);

} // namespace lnas::oracle
