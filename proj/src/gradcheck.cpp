#include "lnas/gradcheck.hpp"

#include "lnas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lnas {

double relative_error(double a, double b)
{
    const double denom = std::max({std::abs(a), std::abs(b), gradcheck_denominator_floor});
    return std::abs(a - b) / denom;
}

double relative_error(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw ShapeError("relative_error: length mismatch");
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        diff += (a[i] - b[i]) * (a[i] - b[i]);
    const double denom = std::max({norm2(a), norm2(b), gradcheck_denominator_floor});
    return std::sqrt(diff) / denom;
}

std::vector<double> central_difference(const ScalarFn& f, std::span<const double> theta, double h)
{
    if (!(h > 0.0))
        throw std::invalid_argument("central_difference: step must be positive");
    std::vector<double> probe(theta.begin(), theta.end());
    std::vector<double> out(theta.size());
    for (std::size_t k = 0; k < theta.size(); ++k) {
        probe[k] = theta[k] + h;
        const double up = f(probe);
        probe[k] = theta[k] - h;
        const double down = f(probe);
        probe[k] = theta[k];
        if (!std::isfinite(up) || !std::isfinite(down))
            throw NonFiniteError("central_difference: f is not finite at coordinate " + std::to_string(k));
        out[k] = (up - down) / (2.0 * h);
    }
    return out;
}

GradcheckReport finite_diff_gradcheck(const ScalarFn& f, std::span<const double> theta,
                                      std::span<const double> analytic, double h)
{
    if (analytic.size() != theta.size())
        throw ShapeError("finite_diff_gradcheck: gradient length differs from parameter length");
    GradcheckReport report;
    report.numeric = central_difference(f, theta, h);
    for (std::size_t k = 0; k < theta.size(); ++k) {
        const double err = relative_error(analytic[k], report.numeric[k]);
        if (err > report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = k;
        }
    }
    return report;
}

} // namespace lnas
