#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lnas {

// Exponential moving averages over named series. The first sample of a series
// initializes it; later samples apply v <- d * v + (1 - d) * x.
class EmaTrace {
public:
    explicit EmaTrace(double decay = 0.999);

    double decay() const noexcept { return decay_; }
    double update(const std::string& series, double x);
    double value(const std::string& series) const;
    const std::vector<double>& history(const std::string& series) const;
    std::vector<std::string> series() const;

private:
    double decay_;
    std::map<std::string, std::vector<double>> history_;
};

// Free-function form of one EMA step.
double ema_update(EmaTrace& trace, const std::string& series, double x);

// Sum of |next - prev|.
double l1_change(std::span<const double> prev, std::span<const double> next);

} // namespace lnas
