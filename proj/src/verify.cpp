#include "lnas/verify.hpp"

#include "lnas/diagnostics.hpp"
#include "lnas/gradcheck.hpp"
#include "lnas/oracle.hpp"
#include "lnas/optimizers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

namespace lnas {

namespace {

using Clock = std::chrono::steady_clock;

struct Toy {
    SupernetState state;
    ArchParams alpha;
    Batch batch;
};

CellSpec all_ops_spec(std::size_t intermediate, std::size_t width)
{
    return CellSpec::fully_connected(
        intermediate, {OpKind::zero, OpKind::skip, OpKind::affine, OpKind::nonlinear, OpKind::avg_scale}, width);
}

Batch random_batch(std::size_t n, std::size_t dim, std::size_t classes, std::mt19937_64& rng)
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

// Weights jittered away from the zero-bias initialization so every gradient
// entry is generic.
Toy make_toy(const CellSpec& spec, std::size_t layers, std::size_t input_dim, std::size_t classes, std::size_t n,
             std::mt19937_64& rng)
{
    Toy t{SupernetState(spec, layers, input_dim, classes, rng()), ArchParams::zeros(spec),
          random_batch(n, input_dim, classes, rng)};
    std::normal_distribution<double> normal;
    auto flat = t.state.flatten();
    for (double& v : flat)
        v += 0.1 * normal(rng);
    t.state.assign_flat(flat);
    for (double& a : t.alpha.values())
        a = normal(rng);
    return t;
}

std::vector<double> flatten_grads(const ParamGrads& g)
{
    std::vector<double> out;
    for (const auto& t : g)
        out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
}

double median(std::vector<double> v)
{
    if (v.empty())
        return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::size_t three_quarters(std::size_t n) { return (3 * n + 3) / 4; }

std::string fmt(const char* format, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

double param_norm(const ParamGrads& g)
{
    double s = 0.0;
    for (const auto& t : g)
        s += dot(t.data(), t.data());
    return std::sqrt(s);
}

// ---------------------------------------------------------------- criteria

CheckResult check_gradients()
{
    CheckResult r{1, "gradient correctness", false, "", 0.0};
    std::mt19937_64 rng(101);
    double worst_omega = 0.0, worst_alpha = 0.0, worst_p = 0.0;
    const std::size_t instances = 20;
    for (std::size_t i = 0; i < instances; ++i) {
        const bool small = i % 2 == 0;
        const CellSpec spec = small ? tiny_oracle_spec() : all_ops_spec(2, 3);
        Toy toy = make_toy(spec, small ? 2 : 3, 3, 3, 6, rng);
        const ProbMatrix P = broadcast_P(toy.alpha, toy.state.layers());
        const auto lg = layer_grads(toy.state, P, toy.batch);

        SupernetState probe = toy.state;
        const auto theta = toy.state.flatten();
        const ScalarFn loss_of_omega = [&](std::span<const double> w) {
            probe.assign_flat(w);
            return evaluate_loss(probe, P, toy.batch);
        };
        const auto numeric_omega = central_difference(loss_of_omega, theta, 1e-5);
        worst_omega = std::max(worst_omega, relative_error(flatten_grads(lg.omega), numeric_omega));

        const auto numeric_p = oracle::layer_grad(toy.state, P, toy.batch, 1e-5);
        worst_p = std::max(worst_p, relative_error(lg.G.values(), numeric_p.values()));

        const ScalarFn loss_of_alpha = [&](std::span<const double> a) {
            const ArchParams probe_alpha(spec.edge_count(), spec.op_count(), std::vector<double>(a.begin(), a.end()));
            return evaluate_loss(toy.state, broadcast_P(probe_alpha, toy.state.layers()), toy.batch);
        };
        const auto numeric_alpha = central_difference(loss_of_alpha, toy.alpha.values(), 1e-5);
        worst_alpha = std::max(worst_alpha, relative_error(alpha_grad(toy.alpha, lg.G), numeric_alpha));
    }
    const double worst = std::max({worst_omega, worst_alpha, worst_p});
    r.passed = worst <= 1e-5;
    r.detail = fmt("%zu instances, max rel err omega %.2e, alpha %.2e, P %.2e (limit 1e-5)", instances, worst_omega,
                   worst_alpha, worst_p);
    return r;
}

CheckResult check_weight_sharing()
{
    CheckResult r{2, "weight-sharing decomposition", false, "", 0.0};
    std::mt19937_64 rng(202);
    double worst = 0.0;
    for (std::size_t L : {2u, 4u, 8u}) {
        for (int rep = 0; rep < 3; ++rep) {
            Toy toy = make_toy(CellSpec::default_spec(), L, 8, 4, 16, rng);
            const auto p = softmax_per_edge(toy.alpha);
            const auto lg = layer_grads(toy.state, broadcast_P(toy.alpha, L), toy.batch);
            const auto shared = oracle::shared_prob_grad(toy.state, p, toy.batch);
            double scale = 1.0;
            for (double v : shared.grad_p)
                scale = std::max(scale, std::abs(v));
            for (std::size_t k = 0; k < p.size(); ++k) {
                double sum = 0.0;
                for (std::size_t l = 0; l < L; ++l)
                    sum += lg.G(l, k);
                worst = std::max(worst, std::abs(sum - shared.grad_p[k]) / scale);
            }
        }
    }
    r.passed = worst <= 1e-10;
    r.detail = fmt("L in {2,4,8}, max |sum_l G - shared grad| / max(1, |shared|) = %.2e (limit 1e-10)", worst);
    return r;
}

CheckResult check_estimator(const std::vector<EstimatorErrors>& cosine, const std::vector<EstimatorErrors>& sign)
{
    CheckResult r{3, "estimator validity", false, "", 0.0};
    const double cos_err = cosine.back().max_error;
    const double sign_err = sign.back().max_error;
    const double order = std::log10(cosine[0].mean_error / cosine[1].mean_error);
    r.passed = cos_err <= 1e-3 && sign_err <= 5e-3 && order >= 1.5 && order <= 2.5;
    std::ostringstream os;
    os << fmt("eps0=1e-4 max rel err cosine %.2e (limit 1e-3), sign %.2e (limit 5e-3); ", cos_err, sign_err);
    os << "mean cosine error by eps0:";
    for (const auto& e : cosine)
        os << fmt(" %.0e->%.2e", e.epsilon0, e.mean_error);
    os << fmt("; observed order %.2f between 1e-2 and 1e-3 (want 1.5..2.5)", order);
    r.detail = os.str();
    return r;
}

CheckResult check_cost()
{
    CheckResult r{4, "three passes per regularized step", true, "", 0.0};
    std::mt19937_64 rng(404);
    std::ostringstream os;
    const std::vector<std::pair<std::size_t, CellSpec>> specs{
        {12, CellSpec::fully_connected(2, {OpKind::zero, OpKind::skip, OpKind::affine, OpKind::nonlinear}, 4)},
        {30, all_ops_spec(3, 4)}};
    for (std::size_t L : {2u, 8u}) {
        for (const auto& [size, spec] : specs) {
            for (Regularizer v : {Regularizer::cosine, Regularizer::sign}) {
                Toy toy = make_toy(spec, L, 4, 3, 8, rng);
                TrainConfig config;
                config.epochs = 2;
                config.variant = v;
                OptimizerState opt(config);
                const auto rec = inner_step(toy.state, opt, toy.alpha, toy.batch, config, {1, 0, 0.01});
                const bool ok = rec.passes == 3 && !rec.skipped_reg && spec.alpha_size() == size;
                r.passed = r.passed && ok;
                os << fmt("L=%zu |a|=%zu %s:%zu ", L, spec.alpha_size(), std::string(regularizer_name(v)).c_str(),
                          rec.passes);
            }
        }
    }
    r.detail = "passes per step: " + os.str();
    return r;
}

CheckResult check_prop1()
{
    CheckResult r{5, "layer-gradient bound", false, "", 0.0};
    std::mt19937_64 rng(505);
    std::normal_distribution<double> normal;
    std::size_t held = 0, total = 0;
    double min_slack = std::numeric_limits<double>::infinity();
    while (total < 1000) {
        const std::size_t edges = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
        const std::size_t max_ops = std::min<std::size_t>(10, 60 / edges);
        const std::size_t ops = std::uniform_int_distribution<std::size_t>(2, max_ops)(rng);
        const std::size_t dim = edges * (ops - 1);
        const std::size_t L = std::uniform_int_distribution<std::size_t>(2, std::min<std::size_t>(8, dim))(rng);
        if (L > dim)
            continue;
        const double spread = std::uniform_real_distribution<double>(0.1, 3.0)(rng);
        std::vector<double> a(edges * ops);
        for (double& v : a)
            v = spread * normal(rng);
        const ArchParams alpha(edges, ops, a);

        LayerGradMatrix G(L, edges * ops);
        for (std::size_t l = 0; l < L; ++l) {
            auto row = G.row(l);
            for (double& v : row)
                v = normal(rng);
            // Two Gram-Schmidt sweeps: per-edge means, then earlier rows.
            for (int sweep = 0; sweep < 2; ++sweep) {
                for (std::size_t e = 0; e < edges; ++e) {
                    const auto blk = row.subspan(e * ops, ops);
                    const double mean = std::accumulate(blk.begin(), blk.end(), 0.0) / static_cast<double>(ops);
                    for (double& v : blk)
                        v -= mean;
                }
                for (std::size_t k = 0; k < l; ++k) {
                    const auto prev = G.row(k);
                    const double c = dot(row, prev) / dot(prev, prev);
                    for (std::size_t i = 0; i < row.size(); ++i)
                        row[i] -= c * prev[i];
                }
            }
            const double scale = std::exp(normal(rng)) / norm2(row);
            for (double& v : row)
                v *= scale;
        }
        const auto res = prop1_check(alpha, G);
        ++total;
        if (res.preconditions_met && res.holds)
            ++held;
        min_slack = std::min(min_slack, res.lhs - res.rhs);
    }
    r.passed = held == total && min_slack >= -1e-10;
    r.detail = fmt("%zu/%zu instances hold, min slack lhs - rhs = %.3e", held, total, min_slack);
    return r;
}

CheckResult check_null_space()
{
    CheckResult r{6, "softmax Jacobian null space", false, "", 0.0};
    std::mt19937_64 rng(606);
    std::normal_distribution<double> normal;
    double worst_residual = 0.0, worst_saturated = 0.0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t edges = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
        const std::size_t ops = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
        std::vector<double> a(edges * ops), v(edges * ops);
        for (double& x : a)
            x = 2.0 * normal(rng);
        for (std::size_t e = 0; e < edges; ++e) {
            const double c = 10.0 * normal(rng);
            for (std::size_t o = 0; o < ops; ++o)
                v[e * ops + o] = c;
        }
        worst_residual = std::max(worst_residual, nullspace_residual(ArchParams(edges, ops, a), v));

        std::vector<double> sat(edges * ops);
        for (std::size_t e = 0; e < edges; ++e) {
            const std::size_t winner = std::uniform_int_distribution<std::size_t>(0, ops - 1)(rng);
            for (std::size_t o = 0; o < ops; ++o)
                sat[e * ops + o] = o == winner ? 20.0 + std::abs(normal(rng)) : -std::abs(normal(rng));
        }
        worst_saturated =
            std::max(worst_saturated, softmax_jacobian_spectrum(ArchParams(edges, ops, sat)).min_nonzero_eig);
    }
    r.passed = worst_residual <= 1e-12 && worst_saturated <= 1e-6;
    r.detail = fmt("max ||J v|| = %.2e (limit 1e-12); saturated min nonzero eig max %.2e (limit 1e-6)",
                   worst_residual, worst_saturated);
    return r;
}

CheckResult check_collapse(const CollapseStudy& s, double seconds)
{
    CheckResult r{7, "collapse reproduction and cure", false, "", 0.0};
    const std::size_t n = s.runs.size();
    r.passed = n >= 4 && s.vanilla_median_percentile <= 0.5 && s.vanilla_collapses >= three_quarters(n) &&
               s.regularized_median_percentile >= 0.75 && s.median_Lambda_gap >= 0.3 && seconds < 1800.0;
    std::ostringstream os;
    os << fmt("%zu seeds: vanilla median pct %.3f (<= 0.5), collapse %zu/%zu (>= %zu); regularized median pct "
              "%.3f (>= 0.75); median final Lambda gap %.3f (>= 0.3); %.0fs",
              n, s.vanilla_median_percentile, s.vanilla_collapses, n, three_quarters(n),
              s.regularized_median_percentile, s.median_Lambda_gap, seconds);
    for (const auto& p : s.runs)
        os << fmt("\n      seed %llu  none %-34s pct %.3f Lambda %.3f | cosine %-34s pct %.3f Lambda %.3f",
                  static_cast<unsigned long long>(p.seed), p.vanilla_genotype.c_str(), p.vanilla_percentile,
                  p.vanilla_final_Lambda, p.regularized_genotype.c_str(), p.regularized_percentile,
                  p.regularized_final_Lambda);
    r.detail = os.str();
    return r;
}

CheckResult check_plateau(const CollapseStudy& s)
{
    CheckResult r{8, "l1 plateau", false, "", 0.0};
    const std::size_t n = s.runs.size();
    r.passed = n >= 4 && s.plateau_pairs >= three_quarters(n);
    std::ostringstream os;
    os << fmt("%zu/%zu pairs (need %zu) with regularized last < mid/2 and vanilla last >= mid", s.plateau_pairs, n,
              three_quarters(n));
    for (const auto& p : s.runs)
        os << fmt("\n      seed %llu  none mid %.4f last %.4f | cosine mid %.4f last %.4f",
                  static_cast<unsigned long long>(p.seed), p.vanilla_mid_l1, p.vanilla_last_l1,
                  p.regularized_mid_l1, p.regularized_last_l1);
    r.detail = os.str();
    return r;
}

CheckResult check_lambda_zero(const Rig& rig, const SyntheticDataset& data)
{
    CheckResult r{9, "lambda = 0 equivalence", false, "", 0.0};
    TrainConfig config = rig.train;
    config.epochs = std::min<std::size_t>(config.epochs, 10);
    config.lambda_max = 0.0;
    config.variant = Regularizer::cosine;
    const SearchSetup setup{rig.spec, rig.layers};
    const auto zero = search(config, data, setup);
    const auto reference = reference_vanilla_search(config, data, setup);
    config.variant = Regularizer::none;
    const auto none = search(config, data, setup);
    const bool same_ref = zero.trace == reference.trace && zero.alpha == reference.alpha;
    const bool same_none = zero.trace == none.trace && zero.alpha == none.alpha;
    r.passed = same_ref && same_none && !zero.trace.empty();
    r.detail = fmt("%zu records; identical to reference path: %s, to variant none: %s", zero.trace.size(),
                   same_ref ? "yes" : "no", same_none ? "yes" : "no");
    return r;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

CheckResult check_determinism(const Rig& rig, const SyntheticDataset& data)
{
    CheckResult r{10, "determinism", false, "", 0.0};
    TrainConfig config = rig.train;
    config.epochs = std::min<std::size_t>(config.epochs, 10);
    config.seed = 3;
    const auto base = std::filesystem::temp_directory_path() /
                      ("lnas-verify-" + std::to_string(std::random_device{}()));
    const auto a = search(config, data, {rig.spec, rig.layers});
    const auto b = search(config, data, {rig.spec, rig.layers});
    const auto fa = export_traces(a, TraceFormat::json, base / "a");
    const auto fb = export_traces(b, TraceFormat::json, base / "b");
    const std::string ta = slurp(fa.trace), tb = slurp(fb.trace);
    std::filesystem::remove_all(base);
    r.passed = !ta.empty() && ta == tb && a.genotype == b.genotype;
    r.detail = fmt("trace.jsonl %zu bytes, identical: %s; genotype identical: %s", ta.size(),
                   ta == tb ? "yes" : "no", a.genotype == b.genotype ? "yes" : "no");
    return r;
}

CheckResult check_ablation(const Rig& rig, const SyntheticDataset& data, const TabularBench& bench,
                           const std::vector<EstimatorErrors>& cosine)
{
    CheckResult r{11, "ablation sweep", false, "", 0.0};
    bool monotone = true;
    for (std::size_t i = 1; i < cosine.size(); ++i)
        monotone = monotone && cosine[i].mean_error < cosine[i - 1].mean_error;

    std::ostringstream os;
    os << "estimator mean error by eps0:";
    for (const auto& e : cosine)
        os << fmt(" %.0e->%.2e", e.epsilon0, e.mean_error);
    os << (monotone ? " (monotone)" : " (NOT monotone)");
    os << "\n      knob     value    genotype                            pct    final Lambda";
    auto run = [&](const char* knob, double value, TrainConfig config) {
        const auto res = search(config, data, {rig.spec, rig.layers});
        os << fmt("\n      %-8s %-8.4g %-35s %.3f  %.3f", knob, value, res.genotype.to_text(rig.spec).c_str(),
                  rank_of(res.genotype, bench).percentile, res.epochs.back().mean_Lambda);
    };
    for (double eps : {1e-2, 1e-3, 1e-4}) {
        TrainConfig c = rig.train;
        c.epsilon0 = eps;
        run("epsilon0", eps, c);
    }
    for (double lam : {0.0625, 0.125, 0.25, 0.5}) {
        TrainConfig c = rig.train;
        c.lambda_max = lam;
        run("lambda", lam, c);
    }
    r.passed = monotone;
    r.detail = os.str();
    return r;
}

} // namespace

std::pair<double, double> thirds_increments(const std::vector<EpochRecord>& epochs)
{
    const std::size_t n = epochs.size();
    if (n < 3)
        throw std::invalid_argument("thirds_increments: need at least three epochs");
    const double a = epochs[n / 3 - 1].cumulative_l1;
    const double b = epochs[2 * n / 3 - 1].cumulative_l1;
    const double c = epochs[n - 1].cumulative_l1;
    return {b - a, c - b};
}

PairedRun paired_run(const Rig& rig, const SyntheticDataset& data, const TabularBench& bench, std::uint64_t seed,
                     const TrainConfig& regularized)
{
    TrainConfig vanilla = regularized;
    vanilla.variant = Regularizer::none;
    vanilla.seed = seed;
    TrainConfig reg = regularized;
    reg.seed = seed;
    const SearchSetup setup{rig.spec, rig.layers};
    const auto v = search(vanilla, data, setup);
    const auto g = search(reg, data, setup);

    PairedRun p;
    p.seed = seed;
    p.vanilla_percentile = rank_of(v.genotype, bench).percentile;
    p.regularized_percentile = rank_of(g.genotype, bench).percentile;
    p.vanilla_collapsed = collapse_flag(rig.spec, v.genotype);
    p.regularized_collapsed = collapse_flag(rig.spec, g.genotype);
    p.vanilla_final_Lambda = v.epochs.back().mean_Lambda;
    p.regularized_final_Lambda = g.epochs.back().mean_Lambda;
    p.vanilla_genotype = v.genotype.to_text(rig.spec);
    p.regularized_genotype = g.genotype.to_text(rig.spec);
    std::tie(p.vanilla_mid_l1, p.vanilla_last_l1) = thirds_increments(v.epochs);
    std::tie(p.regularized_mid_l1, p.regularized_last_l1) = thirds_increments(g.epochs);
    return p;
}

CollapseStudy collapse_study(const Rig& rig, const SyntheticDataset& data, const TabularBench& bench,
                             std::size_t seeds)
{
    CollapseStudy s;
    TrainConfig reg = rig.train;
    reg.variant = Regularizer::cosine;
    reg.lambda_max = 0.125;
    std::vector<double> vp, rp, gap;
    for (std::size_t seed = 0; seed < seeds; ++seed) {
        const auto p = paired_run(rig, data, bench, seed, reg);
        vp.push_back(p.vanilla_percentile);
        rp.push_back(p.regularized_percentile);
        gap.push_back(p.regularized_final_Lambda - p.vanilla_final_Lambda);
        if (p.vanilla_collapsed)
            ++s.vanilla_collapses;
        if (p.regularized_last_l1 < 0.5 * p.regularized_mid_l1 && p.vanilla_last_l1 >= p.vanilla_mid_l1)
            ++s.plateau_pairs;
        s.runs.push_back(p);
    }
    s.vanilla_median_percentile = median(vp);
    s.regularized_median_percentile = median(rp);
    s.median_Lambda_gap = median(gap);
    return s;
}

SearchResult reference_vanilla_search(const TrainConfig& config, const SyntheticDataset& data,
                                      const SearchSetup& setup)
{
    const CellSpec& spec = setup.spec;
    SupernetState state(spec, setup.layers, data.train_x.cols(), data.classes, config.seed);
    NesterovSgd sgd(config.omega_momentum, config.omega_weight_decay);
    Adam adam(config.alpha_lr, config.alpha_beta1, config.alpha_beta2, config.alpha_weight_decay);

    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    ArchParams alpha = ArchParams::zeros(spec);
    std::normal_distribution<double> init(0.0, 1e-3);
    for (double& v : alpha.values())
        v = init(rng);

    const std::size_t n_train = data.train_x.rows(), n_val = data.val_x.rows();
    const std::size_t bs_train = std::min(config.batch_size, n_train), bs_val = std::min(config.batch_size, n_val);
    const std::size_t nb = std::max<std::size_t>(1, n_train / bs_train);
    const std::size_t nv = std::max<std::size_t>(1, n_val / bs_val);
    std::vector<std::size_t> train_order(n_train), val_order(n_val);

    auto fill_alignment = [](StepRecord& rec, const LayerGradMatrix& G) {
        rec.min_layer_grad_norm = min_row_norm(G);
        try {
            rec.Lambda = lambda_alignment(G);
            rec.Lambda_sign = lambda_sign(G);
        } catch (const DegenerateGradientError&) {
            rec.Lambda.reset();
            rec.Lambda_sign.reset();
        }
    };

    SearchResult result(spec);
    std::size_t step = 0, inner = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(train_order.begin(), train_order.end(), std::size_t{0});
        std::iota(val_order.begin(), val_order.end(), std::size_t{0});
        std::shuffle(train_order.begin(), train_order.end(), rng);
        std::shuffle(val_order.begin(), val_order.end(), rng);
        const double lambda_t = config.lambda_max * static_cast<double>(epoch) / static_cast<double>(config.epochs);
        for (std::size_t b = 0; b < nb; ++b) {
            const Batch tb = gather(data.train_x, data.train_y, std::span(train_order).subspan(b * bs_train, bs_train));
            const Batch vb =
                gather(data.val_x, data.val_y, std::span(val_order).subspan((b % nv) * bs_val, bs_val));

            const std::size_t before = forward_backward_passes();
            const auto tg = layer_grads(state, broadcast_P(alpha, setup.layers), tb);
            StepRecord in;
            in.step = step++;
            in.epoch = epoch;
            in.phase = Phase::inner;
            in.lambda_t = lambda_t;
            in.loss = tg.loss;
            in.grad_norm_omega = param_norm(tg.omega);
            in.grad_norm_alpha = norm2(alpha_grad(alpha, tg.G));
            fill_alignment(in, tg.G);
            sgd.step(state.params(), tg.omega,
                     cosine_lr(inner++, config.epochs * nb, config.omega_lr, config.omega_lr_min));
            in.passes = forward_backward_passes() - before;
            result.trace.push_back(in);

            const std::size_t before_outer = forward_backward_passes();
            const auto vg = layer_grads(state, broadcast_P(alpha, setup.layers), vb);
            const auto ga = alpha_grad(alpha, vg.G);
            StepRecord out;
            out.step = step++;
            out.epoch = epoch;
            out.phase = Phase::outer;
            out.lambda_t = lambda_t;
            out.loss = vg.loss;
            out.grad_norm_alpha = norm2(ga);
            fill_alignment(out, vg.G);
            adam.step(alpha.values(), ga);
            out.passes = forward_backward_passes() - before_outer;
            result.trace.push_back(out);
        }
    }
    result.alpha = alpha;
    result.genotype = discretize(alpha);
    return result;
}

std::vector<EstimatorErrors> estimator_errors(Regularizer variant, const std::vector<double>& epsilons,
                                              std::size_t draws, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<EstimatorErrors> out;
    for (double eps : epsilons)
        out.push_back({eps, 0.0, 0.0});
    std::size_t accepted = 0;
    while (accepted < draws) {
        Toy toy = make_toy(tiny_oracle_spec(), 2, 2, 2, 8, rng);
        const auto base = layer_grads(toy.state, broadcast_P(toy.alpha, 2), toy.batch);
        bool generic = min_row_norm(base.G) > 1e-6;
        if (variant == Regularizer::sign)
            for (double v : base.G.values())
                generic = generic && std::abs(v) > 1e-7;
        if (!generic)
            continue;
        const auto exact = flatten_grads(oracle::reg_grad(toy.state, toy.alpha, toy.batch, variant, 1e-5));
        for (auto& e : out) {
            const auto est = reg_grad_fd(toy.state, toy.alpha, toy.batch, variant, e.epsilon0);
            const double err = relative_error(flatten_grads(est.grad), exact);
            e.max_error = std::max(e.max_error, err);
            e.mean_error += err / static_cast<double>(draws);
        }
        ++accepted;
    }
    return out;
}

std::vector<CheckResult> run_verification(const VerifyOptions& options)
{
    std::vector<CheckResult> results;
    auto timed = [&](auto&& fn) {
        const auto t0 = Clock::now();
        CheckResult r = fn();
        r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        if (options.on_result)
            options.on_result(r);
        results.push_back(std::move(r));
    };

    timed(check_gradients);
    timed(check_weight_sharing);

    std::vector<EstimatorErrors> cosine_errors, sign_errors;
    timed([&] {
        cosine_errors = estimator_errors(Regularizer::cosine, {1e-2, 1e-3, 1e-4}, 20, 303);
        sign_errors = estimator_errors(Regularizer::sign, {1e-4}, 20, 304);
        return check_estimator(cosine_errors, sign_errors);
    });
    timed(check_cost);
    timed(check_prop1);
    timed(check_null_space);

    const Rig rig = collapse_rig();
    const auto data = make_dataset(DatasetKind::layered_composition, rig.data_seed, rig.data);
    CollapseStudy study;
    const auto t7 = Clock::now();
    const TabularBench bench = options.bench ? *options.bench : build_tabular(rig.spec, data, rig.bench_budget);
    timed([&] {
        study = collapse_study(rig, data, bench, options.seeds);
        return check_collapse(study, std::chrono::duration<double>(Clock::now() - t7).count());
    });
    timed([&] { return check_plateau(study); });
    timed([&] { return check_lambda_zero(rig, data); });
    timed([&] { return check_determinism(rig, data); });
    timed([&] { return check_ablation(rig, data, bench, cosine_errors); });
    return results;
}

std::string format_check(const CheckResult& r)
{
    return fmt("%s  [%2d] %-34s %7.1fs  ", r.passed ? "PASS" : "FAIL", r.id, r.name.c_str(), r.seconds) + r.detail;
}

} // namespace lnas
