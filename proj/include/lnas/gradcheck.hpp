#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace lnas {

using ScalarFn = std::function<double(std::span<const double>)>;

inline constexpr double gradcheck_denominator_floor = 1e-8;

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

// Normwise variant: ||a - b||_2 / max(||a||_2, ||b||_2, 1e-8).
double relative_error(std::span<const double> a, std::span<const double> b);

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::vector<double> numeric;
};

// Central differences (f(t + h e_k) - f(t - h e_k)) / 2h for every coordinate.
std::vector<double> central_difference(const ScalarFn& f, std::span<const double> theta, double h);

// Compares `analytic` against central differences of f at theta; reports the
// worst coordinate-wise relative error.
GradcheckReport finite_diff_gradcheck(const ScalarFn& f, std::span<const double> theta,
                                      std::span<const double> analytic, double h);

} // namespace lnas
