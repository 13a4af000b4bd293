#pragma once

#include "lnas/search_space.hpp"
#include "lnas/supernet.hpp"

#include <random>
#include <vector>

namespace lnas::test {

inline Batch random_batch(std::size_t n, std::size_t dim, std::size_t classes, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal;
    std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
    Batch b{Tensor({n, dim}), std::vector<int>(n)};
    for (double& v : b.x.data())
        v = normal(rng);
    for (int& y : b.y)
        y = label(rng);
    return b;
}

inline ArchParams random_alpha(const CellSpec& spec, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> normal(0.0, scale);
    ArchParams a = ArchParams::zeros(spec);
    for (double& v : a.values())
        v = normal(rng);
    return a;
}

// Adds N(0, scale^2) noise to every weight so biases are nonzero.
inline void jitter(SupernetState& state, std::mt19937_64& rng, double scale = 0.1)
{
    std::normal_distribution<double> normal(0.0, scale);
    auto flat = state.flatten();
    for (double& v : flat)
        v += normal(rng);
    state.assign_flat(flat);
}

inline std::vector<double> flatten(const std::vector<Tensor>& ts)
{
    std::vector<double> out;
    for (const auto& t : ts)
        out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
}

inline CellSpec all_ops_spec(std::size_t intermediate, std::size_t width)
{
    return CellSpec::fully_connected(
        intermediate, {OpKind::zero, OpKind::skip, OpKind::affine, OpKind::nonlinear, OpKind::avg_scale}, width);
}

} // namespace lnas::test
