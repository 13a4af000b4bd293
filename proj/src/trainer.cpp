#include "lnas/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

namespace lnas {
namespace {

double param_norm(const ParamGrads& g)
{
    double s = 0.0;
    for (const auto& t : g)
        s += dot(t.data(), t.data());
    return std::sqrt(s);
}

ProbMatrix perturbed(const ProbMatrix& P, const RowMatrix& delta, double eps)
{
    ProbMatrix out = P;
    auto o = out.values();
    auto d = delta.values();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] += eps * d[i];
    return out;
}

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out)
{
    if (j.contains(key))
        out = j.at(key).get<T>();
}

} // namespace

void TrainConfig::validate() const
{
    if (!(lambda_max >= 0.0))
        throw ConfigError("lambda_max must be >= 0");
    if (!(epsilon0 > 0.0))
        throw ConfigError("epsilon0 must be > 0");
    if (epochs < 1)
        throw ConfigError("epochs must be >= 1");
    if (batch_size < 1)
        throw ConfigError("batch_size must be >= 1");
    if (!(omega_lr >= 0.0) || !(omega_lr_min >= 0.0) || !(alpha_lr >= 0.0))
        throw ConfigError("learning rates must be >= 0");
    if (!(alpha_beta1 >= 0.0 && alpha_beta1 < 1.0) || !(alpha_beta2 >= 0.0 && alpha_beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
}

nlohmann::json TrainConfig::to_json() const
{
    return {{"lambda_max", lambda_max},
            {"epsilon0", epsilon0},
            {"epochs", epochs},
            {"variant", regularizer_name(variant)},
            {"omega_lr", omega_lr},
            {"omega_lr_min", omega_lr_min},
            {"omega_momentum", omega_momentum},
            {"omega_weight_decay", omega_weight_decay},
            {"alpha_lr", alpha_lr},
            {"alpha_beta1", alpha_beta1},
            {"alpha_beta2", alpha_beta2},
            {"alpha_weight_decay", alpha_weight_decay},
            {"batch_size", batch_size},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j)
{
    if (!j.is_object())
        throw ConfigError("run config must be a flat JSON object");
    TrainConfig c;
    const auto known = c.to_json();
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key))
            throw ConfigError("unknown config key '" + key + "'");
        if (value.is_object() || value.is_array())
            throw ConfigError("config key '" + key + "' must be a scalar");
    }
    try {
        read_key(j, "lambda_max", c.lambda_max);
        read_key(j, "epsilon0", c.epsilon0);
        read_key(j, "epochs", c.epochs);
        if (j.contains("variant"))
            c.variant = parse_regularizer(j.at("variant").get<std::string>());
        read_key(j, "omega_lr", c.omega_lr);
        read_key(j, "omega_lr_min", c.omega_lr_min);
        read_key(j, "omega_momentum", c.omega_momentum);
        read_key(j, "omega_weight_decay", c.omega_weight_decay);
        read_key(j, "alpha_lr", c.alpha_lr);
        read_key(j, "alpha_beta1", c.alpha_beta1);
        read_key(j, "alpha_beta2", c.alpha_beta2);
        read_key(j, "alpha_weight_decay", c.alpha_weight_decay);
        read_key(j, "batch_size", c.batch_size);
        read_key(j, "seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config value has the wrong type: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw ConfigError("cannot open config file '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

double lambda_schedule(std::size_t t, std::size_t total, double lambda_max)
{
    if (total == 0 || t > total)
        throw std::invalid_argument("lambda_schedule: need 0 <= t <= T with T > 0");
    return lambda_max * static_cast<double>(t) / static_cast<double>(total);
}

double cosine_lr(std::size_t t, std::size_t total, double lr_max, double lr_min)
{
    if (total == 0 || t > total)
        throw std::invalid_argument("cosine_lr: need 0 <= t <= total with total > 0");
    const double frac = static_cast<double>(t) / static_cast<double>(total);
    return lr_min + (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

RegGradResult reg_grad_fd(const SupernetState& state, const ArchParams& alpha, const Batch& batch,
                          Regularizer variant, double epsilon0)
{
    if (variant == Regularizer::none)
        throw std::invalid_argument("reg_grad_fd: no regularizer variant selected");
    if (!(epsilon0 > 0.0))
        throw std::invalid_argument("reg_grad_fd: epsilon0 must be positive");
    const ProbMatrix P = broadcast_P(alpha, state.layers());

    RegGradResult r;
    r.base = layer_grads(state, P, batch);
    r.grad.reserve(r.base.omega.size());
    for (const auto& g : r.base.omega)
        r.grad.push_back(Tensor::zeros(g.shape()));

    try {
        r.value = variant == Regularizer::cosine ? lambda_alignment(r.base.G) : lambda_sign(r.base.G);
        r.delta = build_delta(r.base.G, variant);
    } catch (const DegenerateGradientError& e) {
        r.value.reset();
        r.skipped = true;
        r.skip_reason = e.what();
        return r;
    }
    if (r.delta.frobenius_norm < norm_floor)
        return r;

    r.epsilon = epsilon0 / r.delta.frobenius_norm;
    const auto plus = layer_grads(state, perturbed(P, r.delta.delta, r.epsilon), batch);
    const auto minus = layer_grads(state, perturbed(P, r.delta.delta, -r.epsilon), batch);
    const std::size_t L = state.layers();
    const double scale = 1.0 / (2.0 * r.epsilon * (static_cast<double>(L) * static_cast<double>(L - 1) / 2.0));
    for (std::size_t t = 0; t < r.grad.size(); ++t) {
        auto out = r.grad[t].data();
        auto gp = plus.omega[t].data();
        auto gm = minus.omega[t].data();
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = (gp[i] - gm[i]) * scale;
    }
    return r;
}

StepRecord inner_step(SupernetState& state, OptimizerState& opt, const ArchParams& alpha, const Batch& batch,
                      const TrainConfig& config, const InnerStepInput& in, LayerGradMatrix* layer_grads_out)
{
    const std::size_t passes_before = forward_backward_passes();
    StepRecord rec;
    rec.phase = Phase::inner;
    rec.epoch = in.epoch;
    rec.step = in.step;
    rec.lambda_t = lambda_schedule(in.epoch, config.epochs, config.lambda_max);

    const bool regularize = config.variant != Regularizer::none && rec.lambda_t > 0.0;
    LayerGradResult base;
    ParamGrads direction;
    if (regularize) {
        auto reg = reg_grad_fd(state, alpha, batch, config.variant, config.epsilon0);
        rec.skipped_reg = reg.skipped;
        rec.reg_grad_norm = param_norm(reg.grad);
        base = std::move(reg.base);
        direction = base.omega;
        if (!reg.skipped) {
            for (std::size_t t = 0; t < direction.size(); ++t) {
                auto d = direction[t].data();
                auto g = reg.grad[t].data();
                for (std::size_t i = 0; i < d.size(); ++i)
                    d[i] -= rec.lambda_t * g[i];
            }
        }
    } else {
        base = layer_grads(state, broadcast_P(alpha, state.layers()), batch);
        direction = base.omega;
    }

    rec.loss = base.loss;
    rec.min_layer_grad_norm = min_row_norm(base.G);
    rec.grad_norm_omega = param_norm(base.omega);
    rec.grad_norm_alpha = norm2(alpha_grad(alpha, base.G));
    if (base.G.rows() >= 2) {
        try {
            rec.Lambda = lambda_alignment(base.G);
            rec.Lambda_sign = lambda_sign(base.G);
        } catch (const DegenerateGradientError&) {
            rec.Lambda.reset();
            rec.Lambda_sign.reset();
        }
    }
    opt.omega.step(state.params(), direction, in.lr);
    rec.passes = forward_backward_passes() - passes_before;
    if (layer_grads_out)
        *layer_grads_out = std::move(base.G);
    return rec;
}

StepRecord outer_step(const SupernetState& state, OptimizerState& opt, ArchParams& alpha, const Batch& batch,
                      const TrainConfig& config, std::size_t epoch, std::size_t step)
{
    const std::size_t passes_before = forward_backward_passes();
    StepRecord rec;
    rec.phase = Phase::outer;
    rec.epoch = epoch;
    rec.step = step;
    rec.lambda_t = lambda_schedule(epoch, config.epochs, config.lambda_max);

    const auto r = layer_grads(state, broadcast_P(alpha, state.layers()), batch);
    const auto g = alpha_grad(alpha, r.G);
    rec.loss = r.loss;
    rec.grad_norm_alpha = norm2(g);
    rec.min_layer_grad_norm = min_row_norm(r.G);
    if (r.G.rows() >= 2) {
        try {
            rec.Lambda = lambda_alignment(r.G);
            rec.Lambda_sign = lambda_sign(r.G);
        } catch (const DegenerateGradientError&) {
        }
    }
    opt.alpha.step(alpha.values(), g);
    rec.passes = forward_backward_passes() - passes_before;
    return rec;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size)
{
    return std::max<std::size_t>(1, n / batch_size);
}

std::vector<std::pair<std::string, double>> gradient_series(const CellSpec& spec, const LayerGradMatrix& G)
{
    const std::size_t L = G.rows();
    const std::size_t half = L / 2;
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t o = 0; o < spec.op_count(); ++o) {
        double first = 0.0, second = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            double mean = 0.0;
            for (std::size_t e = 0; e < spec.edge_count(); ++e)
                mean += G(l, spec.alpha_index(e, o));
            mean /= static_cast<double>(spec.edge_count());
            (l < half ? first : second) += mean;
        }
        const std::string op(op_name(spec.ops()[o]));
        out.emplace_back("first_half/" + op, first);
        out.emplace_back("second_half/" + op, second);
    }
    return out;
}

SearchResult search(const TrainConfig& config, const SyntheticDataset& data, const SearchSetup& setup)
{
    config.validate();
    if (data.train_x.rows() == 0 || data.val_x.rows() == 0)
        throw std::invalid_argument("search: dataset needs non-empty train and val splits");
    const CellSpec& spec = setup.spec;
    SupernetState state(spec, setup.layers, data.train_x.cols(), data.classes, config.seed);
    OptimizerState opt(config);

    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    ArchParams alpha = ArchParams::zeros(spec);
    {
        std::normal_distribution<double> normal(0.0, 1e-3);
        for (double& v : alpha.values())
            v = normal(rng);
    }

    SearchResult result(spec);
    result.ema = EmaTrace(setup.ema_decay);
    const std::size_t n_train = data.train_x.rows();
    const std::size_t n_val = data.val_x.rows();
    const std::size_t bs_train = std::min(config.batch_size, n_train);
    const std::size_t bs_val = std::min(config.batch_size, n_val);
    const std::size_t nb = batches_per_epoch(n_train, bs_train);
    const std::size_t nv = batches_per_epoch(n_val, bs_val);
    const std::size_t total_inner = config.epochs * nb;

    std::vector<std::size_t> train_order(n_train), val_order(n_val);
    std::vector<double> prev_probs = softmax_per_edge(alpha);
    std::vector<double> step_probs = prev_probs;
    double cumulative_l1 = 0.0;
    double cumulative_step_l1 = 0.0;
    std::size_t step = 0;
    std::size_t inner_count = 0;

    auto abort_with = [&](const std::exception& e) -> SearchAborted {
        std::optional<std::filesystem::path> ckpt;
        if (setup.checkpoint_dir) {
            std::filesystem::create_directories(*setup.checkpoint_dir);
            ckpt = *setup.checkpoint_dir / "diagnostic.ckpt";
            state.save(*ckpt);
        }
        return SearchAborted(std::string("search aborted at step ") + std::to_string(step) + ": " + e.what(), ckpt);
    };

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(train_order.begin(), train_order.end(), std::size_t{0});
        std::iota(val_order.begin(), val_order.end(), std::size_t{0});
        std::shuffle(train_order.begin(), train_order.end(), rng);
        std::shuffle(val_order.begin(), val_order.end(), rng);

        EpochRecord er;
        er.epoch = epoch;
        er.lambda_t = lambda_schedule(epoch, config.epochs, config.lambda_max);
        double sum_lambda = 0.0, sum_sign = 0.0, sum_train = 0.0, sum_val = 0.0;
        std::size_t n_lambda = 0;
        LayerGradMatrix G;

        for (std::size_t b = 0; b < nb; ++b) {
            const Batch train_batch =
                gather(data.train_x, data.train_y, std::span(train_order).subspan(b * bs_train, bs_train));
            const std::size_t vb = b % nv;
            const Batch val_batch = gather(data.val_x, data.val_y, std::span(val_order).subspan(vb * bs_val, bs_val));
            try {
                const double lr = cosine_lr(inner_count, total_inner, config.omega_lr, config.omega_lr_min);
                auto inner = inner_step(state, opt, alpha, train_batch, config, {epoch, step++, lr}, &G);
                ++inner_count;
                if (!std::isfinite(inner.loss))
                    throw NonFiniteError("non-finite training loss");
                for (const auto& [name, v] : gradient_series(spec, G))
                    result.ema.update(name, v);
                if (inner.Lambda) {
                    sum_lambda += *inner.Lambda;
                    sum_sign += *inner.Lambda_sign;
                    ++n_lambda;
                }
                sum_train += inner.loss;
                result.trace.push_back(inner);

                auto outer = outer_step(state, opt, alpha, val_batch, config, epoch, step++);
                if (!std::isfinite(outer.loss))
                    throw NonFiniteError("non-finite validation loss");
                sum_val += outer.loss;
                result.trace.push_back(outer);
                std::vector<double> p = softmax_per_edge(alpha);
                cumulative_step_l1 += l1_change(step_probs, p);
                step_probs = std::move(p);
            } catch (const NonFiniteError& e) {
                throw abort_with(e);
            }
        }

        er.mean_Lambda = n_lambda ? sum_lambda / static_cast<double>(n_lambda) : 0.0;
        er.mean_Lambda_sign = n_lambda ? sum_sign / static_cast<double>(n_lambda) : 0.0;
        try {
            er.report = alignment_report(G);
        } catch (const DegenerateGradientError&) {
        } catch (const std::invalid_argument&) {
        }
        er.train_loss = sum_train / static_cast<double>(nb);
        er.val_loss = sum_val / static_cast<double>(nb);
        er.probs = softmax_per_edge(alpha);
        er.l1_change = l1_change(prev_probs, er.probs);
        cumulative_l1 += er.l1_change;
        er.cumulative_l1 = cumulative_l1;
        er.cumulative_step_l1 = cumulative_step_l1;
        prev_probs = er.probs;
        er.genotype = discretize(alpha);
        for (const auto& name : result.ema.series())
            er.ema[name] = result.ema.value(name);
        result.epochs.push_back(std::move(er));
    }

    result.alpha = alpha;
    result.genotype = discretize(alpha);
    if (setup.checkpoint_dir) {
        std::filesystem::create_directories(*setup.checkpoint_dir);
        result.checkpoint = *setup.checkpoint_dir / "final.ckpt";
        state.save(*result.checkpoint);
    }
    return result;
}

} // namespace lnas
