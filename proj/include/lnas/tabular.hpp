#pragma once

#include "lnas/dataset.hpp"
#include "lnas/search_space.hpp"
#include "lnas/supernet.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace lnas {

struct TabularEntry {
    double val_accuracy = 0.0;
    double train_loss = 0.0;
    std::size_t param_count = 0;

    friend bool operator==(const TabularEntry&, const TabularEntry&) = default;
};

struct TabularBudget {
    std::size_t steps = 300;
    std::size_t layers = 4;
    std::size_t batch_size = 64;
    double lr = 0.05;
    double lr_min = 0.001;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t init_seed = 0;

    nlohmann::json to_json() const;
    static TabularBudget from_json(const nlohmann::json& j);
    friend bool operator==(const TabularBudget&, const TabularBudget&) = default;
};

// Ground-truth validation accuracy of every genotype in a small cell space,
// each trained as a standalone network.
struct TabularBench {
    CellSpec spec;
    std::map<Genotype, TabularEntry> entries;
    std::uint64_t dataset_seed = 0;
    TabularBudget budget;

    const TabularEntry& at(const Genotype& g) const;

    nlohmann::json to_json() const;
    // Validates the spec hash against `spec` and that every genotype is present.
    static TabularBench from_json(const nlohmann::json& j, const CellSpec& spec);
    void save(const std::filesystem::path& path) const;
    static TabularBench load(const std::filesystem::path& path, const CellSpec& spec);
};

struct BenchFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnknownGenotype : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// One-hot probability matrix selecting `g` in every layer.
ProbMatrix one_hot_P(const CellSpec& spec, const Genotype& g, std::size_t layers);

// Trains one genotype from budget.init_seed with Nesterov SGD on the pruned
// one-hot network and measures it.
TabularEntry train_genotype(const CellSpec& spec, const Genotype& g, const SyntheticDataset& data,
                            const TabularBudget& budget);

// Every genotype of `spec`; genotypes train in parallel, results are
// independent of the schedule.
TabularBench build_tabular(const CellSpec& spec, const SyntheticDataset& data, const TabularBudget& budget,
                           std::size_t cap = default_genotype_cap);

struct RankResult {
    std::size_t rank = 0;
    double percentile = 0.0;
};

// Dense rank by validation accuracy (ties share a rank, best is 1);
// percentile = 1 - (rank - 1) / entry count.
RankResult rank_of(const Genotype& g, const TabularBench& bench);

} // namespace lnas
