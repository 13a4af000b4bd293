#pragma once

#include "lnas/alignment.hpp"
#include "lnas/dataset.hpp"
#include "lnas/optimizers.hpp"
#include "lnas/search_space.hpp"
#include "lnas/supernet.hpp"
#include "lnas/traces.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace lnas {

struct TrainConfig {
    double lambda_max = 0.125;
    double epsilon0 = 1e-4;
    std::size_t epochs = 100;
    Regularizer variant = Regularizer::cosine;
    double omega_lr = 0.025;
    double omega_lr_min = 0.001;
    double omega_momentum = 0.9;
    double omega_weight_decay = 5e-4;
    double alpha_lr = 1e-4;
    double alpha_beta1 = 0.5;
    double alpha_beta2 = 0.999;
    double alpha_weight_decay = 1e-3;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load(const std::filesystem::path& path);
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct OptimizerState {
    OptimizerState(const TrainConfig& config)
        : omega(config.omega_momentum, config.omega_weight_decay),
          alpha(config.alpha_lr, config.alpha_beta1, config.alpha_beta2, config.alpha_weight_decay)
    {
    }
    NesterovSgd omega;
    Adam alpha;
};

enum class Phase { inner, outer };

// One trace line. Lambda / Lambda_sign are absent when a layer gradient was
// degenerate at that step.
struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    Phase phase = Phase::inner;
    double loss = 0.0;
    double lambda_t = 0.0;
    std::optional<double> Lambda;
    std::optional<double> Lambda_sign;
    double grad_norm_alpha = 0.0;
    double min_layer_grad_norm = 0.0;
    bool skipped_reg = false;

    // Not part of the trace schema.
    double grad_norm_omega = 0.0;
    double reg_grad_norm = 0.0;
    std::size_t passes = 0;

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

// lambda * t / T
double lambda_schedule(std::size_t t, std::size_t total, double lambda_max);

// lr_min + (lr_max - lr_min) * (1 + cos(pi t / total)) / 2
double cosine_lr(std::size_t t, std::size_t total, double lr_max, double lr_min);

struct RegGradResult {
    // Pass 1 at the unperturbed P.
    LayerGradResult base;
    // Estimate of grad_omega of the alignment measure.
    ParamGrads grad;
    // Alignment measure of `variant` at P (absent when skipped as degenerate).
    std::optional<double> value;
    DeltaMatrix delta;
    double epsilon = 0.0;
    bool skipped = false;
    std::string skip_reason;
};

// Three forward-backward passes: one at P = broadcast(alpha), two at P +/- eps
// Delta with eps = epsilon0 / ||Delta||_F. The difference quotient is divided
// by C(L, 2). Zero gradient when ||Delta||_F < 1e-12; skipped (flagged, zero
// gradient, one pass) when a layer gradient is degenerate.
RegGradResult reg_grad_fd(const SupernetState& state, const ArchParams& alpha, const Batch& batch,
                          Regularizer variant, double epsilon0);

struct InnerStepInput {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double lr = 0.0;
};

// Regularized omega update: direction grad L - lambda_t * reg_grad_fd.
StepRecord inner_step(SupernetState& state, OptimizerState& opt, const ArchParams& alpha, const Batch& batch,
                      const TrainConfig& config, const InnerStepInput& in, LayerGradMatrix* layer_grads_out = nullptr);

// Adam update of alpha along J_sigma(alpha) * sum_l grad_{l p} L_val.
StepRecord outer_step(const SupernetState& state, OptimizerState& opt, ArchParams& alpha, const Batch& batch,
                      const TrainConfig& config, std::size_t epoch, std::size_t step);

struct EpochRecord {
    std::size_t epoch = 0;
    double lambda_t = 0.0;
    // Means over this epoch's inner steps with defined values.
    double mean_Lambda = 0.0;
    double mean_Lambda_sign = 0.0;
    std::optional<AlignmentReport> report;
    double train_loss = 0.0;
    double val_loss = 0.0;
    // l1 distance between softmax weights at the end of this and the previous
    // epoch, and its running sum.
    double l1_change = 0.0;
    double cumulative_l1 = 0.0;
    // Running sum of l1 distances between consecutive outer steps.
    double cumulative_step_l1 = 0.0;
    std::vector<double> probs;
    Genotype genotype;
    std::map<std::string, double> ema;
};

struct SearchSetup {
    SearchSetup(CellSpec cell, std::size_t layer_count = 4) : spec(std::move(cell)), layers(layer_count) {}

    CellSpec spec;
    std::size_t layers = 4;
    double ema_decay = 0.999;
    // Where the diagnostic checkpoint goes on abort (and the final one).
    std::optional<std::filesystem::path> checkpoint_dir;
};

struct SearchResult {
    explicit SearchResult(CellSpec cell) : spec(std::move(cell)) {}

    CellSpec spec;
    Genotype genotype;
    ArchParams alpha;
    std::vector<StepRecord> trace;
    std::vector<EpochRecord> epochs;
    std::optional<std::filesystem::path> checkpoint;
    EmaTrace ema{0.999};
};

struct SearchAborted : std::runtime_error {
    SearchAborted(const std::string& what, std::optional<std::filesystem::path> checkpoint)
        : std::runtime_error(what), checkpoint(std::move(checkpoint))
    {
    }
    std::optional<std::filesystem::path> checkpoint;
};

// Batches per epoch for a split of n samples.
std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size);

// First-order bi-level search. Each step runs one inner step on a train batch
// followed by one outer step on a val batch. Deterministic for fixed inputs.
SearchResult search(const TrainConfig& config, const SyntheticDataset& data, const SearchSetup& setup);

// EMA series names: "<first|second>_half/<op>" (per-op layer gradient sums
// over all edges, split by layer position).
std::vector<std::pair<std::string, double>> gradient_series(const CellSpec& spec, const LayerGradMatrix& G);

} // namespace lnas
