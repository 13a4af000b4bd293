#pragma once

#include "lnas/rig.hpp"
#include "lnas/tabular.hpp"
#include "lnas/trainer.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lnas {

struct CheckResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

// Outcome of one vanilla/regularized pair on the collapse rig.
struct PairedRun {
    std::uint64_t seed = 0;
    double vanilla_percentile = 0.0;
    double regularized_percentile = 0.0;
    bool vanilla_collapsed = false;
    bool regularized_collapsed = false;
    double vanilla_final_Lambda = 0.0;
    double regularized_final_Lambda = 0.0;
    std::string vanilla_genotype;
    std::string regularized_genotype;
    // Cumulative l1 increments over the middle and last thirds of training.
    double vanilla_mid_l1 = 0.0;
    double vanilla_last_l1 = 0.0;
    double regularized_mid_l1 = 0.0;
    double regularized_last_l1 = 0.0;
};

// Increments of the cumulative series over the middle and final thirds of the
// epochs.
std::pair<double, double> thirds_increments(const std::vector<EpochRecord>& epochs);

PairedRun paired_run(const Rig& rig, const SyntheticDataset& data, const TabularBench& bench, std::uint64_t seed,
                     const TrainConfig& regularized);

struct CollapseStudy {
    std::vector<PairedRun> runs;
    double vanilla_median_percentile = 0.0;
    double regularized_median_percentile = 0.0;
    std::size_t vanilla_collapses = 0;
    double median_Lambda_gap = 0.0;
    std::size_t plateau_pairs = 0;
};

// Paired searches for seeds 0..seeds-1 on the collapse rig.
CollapseStudy collapse_study(const Rig& rig, const SyntheticDataset& data, const TabularBench& bench,
                             std::size_t seeds);

// First-order vanilla search written directly against the supernet and
// optimizer primitives, used as the reference for the lambda = 0 path.
SearchResult reference_vanilla_search(const TrainConfig& config, const SyntheticDataset& data,
                                      const SearchSetup& setup);

struct EstimatorErrors {
    double epsilon0 = 0.0;
    double max_error = 0.0;
    double mean_error = 0.0;
};

// Relative error of reg_grad_fd against the coordinate oracle over `draws`
// random L = 2 toy instances, one entry per epsilon0.
std::vector<EstimatorErrors> estimator_errors(Regularizer variant, const std::vector<double>& epsilons,
                                              std::size_t draws, std::uint64_t seed);

struct VerifyOptions {
    std::size_t seeds = 4;
    // Prebuilt bench for the collapse rig; built on the fly when absent.
    std::optional<TabularBench> bench;
    // Called after each criterion finishes.
    std::function<void(const CheckResult&)> on_result;
};

// Runs every acceptance criterion in order.
std::vector<CheckResult> run_verification(const VerifyOptions& options);

std::string format_check(const CheckResult& r);

} // namespace lnas
