#include "lnas/tabular.hpp"

#include "lnas/optimizers.hpp"
#include "lnas/trainer.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace lnas {

nlohmann::json TabularBudget::to_json() const
{
    return {{"steps", steps},       {"layers", layers},       {"batch_size", batch_size},
            {"lr", lr},             {"lr_min", lr_min},       {"momentum", momentum},
            {"weight_decay", weight_decay}, {"init_seed", init_seed}};
}

TabularBudget TabularBudget::from_json(const nlohmann::json& j)
{
    TabularBudget b;
    b.steps = j.at("steps").get<std::size_t>();
    b.layers = j.at("layers").get<std::size_t>();
    b.batch_size = j.at("batch_size").get<std::size_t>();
    b.lr = j.at("lr").get<double>();
    b.lr_min = j.at("lr_min").get<double>();
    b.momentum = j.at("momentum").get<double>();
    b.weight_decay = j.at("weight_decay").get<double>();
    b.init_seed = j.at("init_seed").get<std::uint64_t>();
    return b;
}

const TabularEntry& TabularBench::at(const Genotype& g) const
{
    const auto it = entries.find(g);
    if (it == entries.end()) {
        std::string choice;
        for (std::size_t c : g.choice)
            choice += (choice.empty() ? "" : ",") + std::to_string(c);
        throw UnknownGenotype("tabular bench has no entry for genotype (" + choice + ")");
    }
    return it->second;
}

nlohmann::json TabularBench::to_json() const
{
    nlohmann::json table = nlohmann::json::object();
    for (const auto& [g, e] : entries)
        table[g.to_text(spec)] = {
            {"val_accuracy", e.val_accuracy}, {"train_loss", e.train_loss}, {"param_count", e.param_count}};
    std::ostringstream hash;
    hash << std::hex << spec.hash();
    return {{"format", "lambda-nas-tabular/1"},
            {"spec", spec.canonical()},
            {"spec_hash", hash.str()},
            {"dataset_seed", dataset_seed},
            {"budget", budget.to_json()},
            {"entries", table}};
}

TabularBench TabularBench::from_json(const nlohmann::json& j, const CellSpec& spec)
{
    try {
        std::ostringstream hash;
        hash << std::hex << spec.hash();
        if (j.at("spec_hash").get<std::string>() != hash.str())
            throw BenchFormatError("tabular bench: spec hash does not match the cell spec");
        TabularBench b{spec, {}, j.at("dataset_seed").get<std::uint64_t>(),
                       TabularBudget::from_json(j.at("budget"))};
        for (const auto& [key, value] : j.at("entries").items()) {
            TabularEntry e{value.at("val_accuracy").get<double>(), value.at("train_loss").get<double>(),
                           value.at("param_count").get<std::size_t>()};
            if (!(e.val_accuracy >= 0.0 && e.val_accuracy <= 1.0))
                throw BenchFormatError("tabular bench: accuracy outside [0, 1] for " + key);
            b.entries.emplace(Genotype::from_text(key, spec), e);
        }
        for (const auto& g : enumerate_genotypes(spec))
            if (!b.entries.contains(g))
                throw BenchFormatError("tabular bench: missing genotype " + g.to_text(spec));
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw BenchFormatError(std::string("tabular bench: malformed JSON: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw BenchFormatError(std::string("tabular bench: ") + e.what());
    }
}

void TabularBench::save(const std::filesystem::path& path) const
{
    std::ofstream os(path);
    if (!os)
        throw BenchFormatError("tabular bench: cannot write '" + path.string() + "'");
    os << to_json().dump(2) << '\n';
}

TabularBench TabularBench::load(const std::filesystem::path& path, const CellSpec& spec)
{
    std::ifstream is(path);
    if (!is)
        throw BenchFormatError("tabular bench: cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw BenchFormatError("tabular bench: '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return from_json(j, spec);
}

ProbMatrix one_hot_P(const CellSpec& spec, const Genotype& g, std::size_t layers)
{
    if (g.choice.size() != spec.edge_count())
        throw ShapeError("one_hot_P: genotype edge count differs from cell");
    ProbMatrix P(layers, spec.alpha_size());
    for (std::size_t l = 0; l < layers; ++l)
        for (std::size_t e = 0; e < g.choice.size(); ++e)
            P(l, spec.alpha_index(e, g.choice.at(e))) = 1.0;
    return P;
}

TabularEntry train_genotype(const CellSpec& spec, const Genotype& g, const SyntheticDataset& data,
                            const TabularBudget& budget)
{
    SupernetState state(spec, budget.layers, data.train_x.cols(), data.classes, budget.init_seed);
    const ProbMatrix P = one_hot_P(spec, g, budget.layers);
    const GraphOptions pruned{true};
    NesterovSgd sgd(budget.momentum, budget.weight_decay);
    std::mt19937_64 rng(budget.init_seed ^ 0x5bd1e995ull);

    const std::size_t n = data.train_x.rows();
    const std::size_t bs = std::min(budget.batch_size, n);
    const std::size_t nb = batches_per_epoch(n, bs);
    std::vector<std::size_t> order(n);
    std::size_t pos = nb;
    for (std::size_t s = 0; s < budget.steps; ++s) {
        if (pos == nb) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            pos = 0;
        }
        const Batch batch = gather(data.train_x, data.train_y, std::span(order).subspan(pos * bs, bs));
        ++pos;
        auto fr = forward(state, P, batch, pruned);
        const Gradients grads = fr.tape.backward(fr.graph.loss);
        ParamGrads omega;
        omega.reserve(fr.graph.params.size());
        for (NodeId id : fr.graph.params)
            omega.push_back(grads[id]);
        sgd.step(state.params(), omega, cosine_lr(s, budget.steps, budget.lr, budget.lr_min));
    }

    TabularEntry entry;
    entry.val_accuracy = evaluate_accuracy(state, P, data.val(), pruned);
    entry.train_loss = evaluate_loss(state, P, data.train(), pruned);
    // Weights reachable in the discrete network.
    const auto& params = state.params();
    entry.param_count = params[state.stem_weight()].size() + params[state.stem_bias()].size() +
                        params[state.head_weight()].size() + params[state.head_bias()].size();
    for (std::size_t l = 0; l < budget.layers; ++l) {
        entry.param_count += params[state.projection(l)].size();
        for (std::size_t e = 0; e < g.choice.size(); ++e)
            if (auto idx = state.op_params(l, e, g.choice[e]))
                entry.param_count += params[idx->first].size() + params[idx->second].size();
    }
    return entry;
}

TabularBench build_tabular(const CellSpec& spec, const SyntheticDataset& data, const TabularBudget& budget,
                           std::size_t cap)
{
    const auto genotypes = enumerate_genotypes(spec, cap);
    std::vector<TabularEntry> results(genotypes.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < static_cast<long long>(genotypes.size()); ++i) {
        try {
            results[static_cast<std::size_t>(i)] =
                train_genotype(spec, genotypes[static_cast<std::size_t>(i)], data, budget);
        } catch (...) {
#pragma omp critical
            if (!failure)
                failure = std::current_exception();
        }
    }
    if (failure)
        std::rethrow_exception(failure);

    TabularBench bench{spec, {}, data.seed, budget};
    for (std::size_t i = 0; i < genotypes.size(); ++i)
        bench.entries.emplace(genotypes[i], results[i]);
    return bench;
}

RankResult rank_of(const Genotype& g, const TabularBench& bench)
{
    const double acc = bench.at(g).val_accuracy;
    std::set<double> better;
    for (const auto& [_, e] : bench.entries)
        if (e.val_accuracy > acc)
            better.insert(e.val_accuracy);
    RankResult r;
    r.rank = better.size() + 1;
    r.percentile = 1.0 - static_cast<double>(r.rank - 1) / static_cast<double>(bench.entries.size());
    return r;
}

} // namespace lnas
