#include "lnas/traces.hpp"

#include "lnas/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace lnas {

EmaTrace::EmaTrace(double decay) : decay_(decay)
{
    if (!(decay > 0.0 && decay < 1.0))
        throw std::invalid_argument("EmaTrace: decay must lie in (0, 1)");
}

double EmaTrace::update(const std::string& series, double x)
{
    auto& h = history_[series];
    const double v = h.empty() ? x : decay_ * h.back() + (1.0 - decay_) * x;
    h.push_back(v);
    return v;
}

double EmaTrace::value(const std::string& series) const
{
    const auto it = history_.find(series);
    if (it == history_.end() || it->second.empty())
        throw std::out_of_range("EmaTrace: no samples for series '" + series + "'");
    return it->second.back();
}

const std::vector<double>& EmaTrace::history(const std::string& series) const
{
    const auto it = history_.find(series);
    if (it == history_.end())
        throw std::out_of_range("EmaTrace: unknown series '" + series + "'");
    return it->second;
}

std::vector<std::string> EmaTrace::series() const
{
    std::vector<std::string> names;
    for (const auto& [name, _] : history_)
        names.push_back(name);
    return names;
}

double ema_update(EmaTrace& trace, const std::string& series, double x)
{
    return trace.update(series, x);
}

double l1_change(std::span<const double> prev, std::span<const double> next)
{
    if (prev.size() != next.size())
        throw ShapeError("l1_change: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < prev.size(); ++i)
        s += std::abs(next[i] - prev[i]);
    return s;
}

} // namespace lnas
