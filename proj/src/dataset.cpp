#include "lnas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace lnas {
namespace {

struct Generator {
    std::vector<std::vector<double>> weights; // layer k: in x out, row-major
    std::vector<std::vector<double>> biases;
    std::vector<std::size_t> widths;          // widths[k] = input width of layer k
    std::vector<double> readout;              // last width x classes
    std::size_t classes = 0;

    int label(std::span<const double> x) const
    {
        std::vector<double> h(x.begin(), x.end());
        for (std::size_t k = 0; k < weights.size(); ++k) {
            const std::size_t in = widths[k], out = widths[k + 1];
            std::vector<double> next(out);
            for (std::size_t j = 0; j < out; ++j) {
                double s = biases[k][j];
                for (std::size_t i = 0; i < in; ++i)
                    s += h[i] * weights[k][i * out + j];
                next[j] = std::tanh(s);
            }
            h = std::move(next);
        }
        std::size_t best = 0;
        std::vector<double> z(classes, 0.0);
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t i = 0; i < h.size(); ++i)
                z[c] += h[i] * readout[i * classes + c];
        for (std::size_t c = 1; c < classes; ++c)
            if (z[c] > z[best])
                best = c;
        return static_cast<int>(best);
    }
};

Generator make_generator(DatasetKind kind, const DatasetSizes& s, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Generator g;
    g.classes = s.classes;
    g.widths.push_back(s.input_dim);
    const std::size_t depth = kind == DatasetKind::layered_composition ? s.depth : 0;
    for (std::size_t k = 0; k < depth; ++k) {
        const std::size_t in = g.widths.back(), out = s.input_dim;
        std::vector<double> w(in * out);
        const double sd = s.gain / std::sqrt(static_cast<double>(in));
        for (double& v : w)
            v = sd * normal(rng);
        std::vector<double> b(out);
        for (double& v : b)
            v = 0.5 * normal(rng);
        g.weights.push_back(std::move(w));
        g.biases.push_back(std::move(b));
        g.widths.push_back(out);
    }
    g.readout.resize(g.widths.back() * s.classes);
    for (double& v : g.readout)
        v = normal(rng);
    return g;
}

void fill_split(const Generator& gen, std::size_t n, std::size_t dim, std::mt19937_64& rng, Tensor& x,
                std::vector<int>& y)
{
    const std::size_t classes = gen.classes;
    std::vector<std::size_t> quota(classes, n / classes);
    for (std::size_t c = 0; c < n % classes; ++c)
        ++quota[c];
    std::vector<std::size_t> have(classes, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> data;
    data.reserve(n * dim);
    y.clear();
    std::vector<double> sample(dim);
    const std::size_t max_draws = 2000 * n + 10000;
    for (std::size_t draws = 0; y.size() < n; ++draws) {
        if (draws > max_draws)
            throw std::runtime_error("make_dataset: generator cannot fill class quotas; some class is too rare");
        for (double& v : sample)
            v = normal(rng);
        const int label = gen.label(sample);
        if (have[static_cast<std::size_t>(label)] >= quota[static_cast<std::size_t>(label)])
            continue;
        ++have[static_cast<std::size_t>(label)];
        data.insert(data.end(), sample.begin(), sample.end());
        y.push_back(label);
    }
    x = Tensor({n, dim}, std::move(data));
}

} // namespace

std::string_view dataset_kind_name(DatasetKind kind)
{
    return kind == DatasetKind::teacher_net ? "teacher-net" : "layered-composition";
}

SyntheticDataset make_dataset(DatasetKind kind, std::uint64_t seed, const DatasetSizes& sizes)
{
    if (sizes.n_train == 0 || sizes.n_val == 0 || sizes.input_dim == 0 || sizes.classes < 2)
        throw std::invalid_argument("make_dataset: sizes must be positive with at least two classes");
    std::mt19937_64 rng(seed);
    const Generator gen = make_generator(kind, sizes, rng);
    SyntheticDataset ds;
    ds.kind = kind;
    ds.seed = seed;
    ds.classes = sizes.classes;
    fill_split(gen, sizes.n_train, sizes.input_dim, rng, ds.train_x, ds.train_y);
    fill_split(gen, sizes.n_val, sizes.input_dim, rng, ds.val_x, ds.val_y);
    return ds;
}

Batch gather(const Tensor& x, std::span<const int> y, std::span<const std::size_t> idx)
{
    const std::size_t dim = x.cols();
    std::vector<double> data;
    data.reserve(idx.size() * dim);
    Batch b;
    b.y.reserve(idx.size());
    for (std::size_t i : idx) {
        const auto row = x.data().subspan(i * dim, dim);
        data.insert(data.end(), row.begin(), row.end());
        b.y.push_back(y[i]);
    }
    b.x = Tensor({idx.size(), dim}, std::move(data));
    return b;
}

} // namespace lnas
