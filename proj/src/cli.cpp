#include "lnas/cli.hpp"

#include "lnas/diagnostics.hpp"
#include "lnas/kernels.hpp"
#include "lnas/rig.hpp"
#include "lnas/verify.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

namespace lnas {

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::size_t seeds = 4;
    std::optional<std::string> variant;
    std::optional<double> lambda;
    std::optional<double> epsilon0;
    std::optional<std::size_t> epochs;
    std::string out;
    std::string bench;
    std::string format = "json";
};

void add_train_flags(CLI::App* cmd, Flags& f)
{
    cmd->add_option("--config", f.config, "JSON run config (TrainConfig fields)");
    cmd->add_option("--variant", f.variant, "Regularizer: cosine, sign or none")
        ->check(CLI::IsMember({"cosine", "sign", "none"}));
    cmd->add_option("--lambda", f.lambda, "Maximum regularization weight")->check(CLI::NonNegativeNumber);
    cmd->add_option("--epsilon0", f.epsilon0, "Finite-difference scale")->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", f.epochs, "Search epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--bench", f.bench, "Tabular bench JSON for ranking the result");
}

TrainConfig resolve_config(const Flags& f, const TrainConfig& base)
{
    TrainConfig c = base;
    if (!f.config.empty()) {
        if (!std::filesystem::exists(f.config))
            throw UsageError("config file not found: '" + f.config + "'");
        c = TrainConfig::load(f.config);
    }
    if (f.seed)
        c.seed = *f.seed;
    if (f.variant)
        c.variant = parse_regularizer(*f.variant);
    if (f.lambda)
        c.lambda_max = *f.lambda;
    if (f.epsilon0)
        c.epsilon0 = *f.epsilon0;
    if (f.epochs)
        c.epochs = *f.epochs;
    c.validate();
    return c;
}

std::optional<TabularBench> load_bench(const std::string& path, const CellSpec& spec)
{
    if (path.empty())
        return std::nullopt;
    if (!std::filesystem::exists(path))
        throw UsageError("bench file not found: '" + path + "'");
    return TabularBench::load(path, spec);
}

// Two-sided 95% Student t quantiles for 1..30 degrees of freedom.
double t95(std::size_t df)
{
    static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                   2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                                   2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
    return df >= 1 && df <= 30 ? table[df - 1] : 1.960;
}

std::pair<double, double> mean_ci(const std::vector<double>& v)
{
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v)
        mean += x / n;
    if (v.size() < 2)
        return {mean, 0.0};
    double ss = 0.0;
    for (double x : v)
        ss += (x - mean) * (x - mean);
    return {mean, t95(v.size() - 1) * std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

int cmd_search(const Flags& f, std::ostream& out)
{
    const Rig rig = collapse_rig();
    const TrainConfig config = resolve_config(f, rig.train);
    const auto bench = load_bench(f.bench, rig.spec);
    const auto data = make_dataset(DatasetKind::layered_composition, rig.data_seed, rig.data);
    const std::filesystem::path dir = f.out.empty() ? "run" : f.out;
    SearchSetup setup(rig.spec, rig.layers);
    setup.checkpoint_dir = dir;
    const auto result = search(config, data, setup);
    const auto files =
        export_traces(result, f.format == "csv" ? TraceFormat::csv : TraceFormat::json, dir, bench ? &*bench : nullptr);
    out << "genotype " << result.genotype.to_text(rig.spec) << '\n';
    out << "final Lambda " << result.epochs.back().mean_Lambda << '\n';
    if (bench)
        out << "percentile " << rank_of(result.genotype, *bench).percentile << '\n';
    out << "wrote " << files.trace.string() << ", " << files.epochs.string() << ", " << files.summary.string()
        << '\n';
    return exit_ok;
}

int cmd_collapse_demo(const Flags& f, std::ostream& out)
{
    Rig rig = collapse_rig();
    TrainConfig reg = resolve_config(f, rig.train);
    if (reg.variant == Regularizer::none)
        throw UsageError("collapse-demo compares against a regularized run; --variant none is not allowed");
    if (f.seeds == 0)
        throw UsageError("--seeds must be positive");
    const auto data = make_dataset(DatasetKind::layered_composition, rig.data_seed, rig.data);
    const auto loaded = load_bench(f.bench, rig.spec);
    const TabularBench bench = loaded ? *loaded : build_tabular(rig.spec, data, rig.bench_budget);

    nlohmann::json runs = nlohmann::json::array();
    std::vector<double> vp, rp, vl, rl;
    char line[256];
    std::snprintf(line, sizeof line, "%-5s %-36s %-6s %-7s | %-36s %-6s %-7s\n", "seed", "vanilla genotype", "pct",
                  "Lambda", std::string(regularizer_name(reg.variant)).append(" genotype").c_str(), "pct", "Lambda");
    out << line;
    for (std::size_t s = 0; s < f.seeds; ++s) {
        const std::uint64_t seed = (f.seed ? *f.seed : 0) + s;
        const PairedRun p = paired_run(rig, data, bench, seed, reg);
        std::snprintf(line, sizeof line, "%-5llu %-36s %-6.3f %-7.3f | %-36s %-6.3f %-7.3f\n",
                      static_cast<unsigned long long>(seed), p.vanilla_genotype.c_str(), p.vanilla_percentile,
                      p.vanilla_final_Lambda, p.regularized_genotype.c_str(), p.regularized_percentile,
                      p.regularized_final_Lambda);
        out << line;
        vp.push_back(p.vanilla_percentile);
        rp.push_back(p.regularized_percentile);
        vl.push_back(p.vanilla_final_Lambda);
        rl.push_back(p.regularized_final_Lambda);
        runs.push_back({{"seed", seed},
                        {"vanilla", {{"genotype", p.vanilla_genotype},
                                     {"percentile", p.vanilla_percentile},
                                     {"collapse_flag", p.vanilla_collapsed},
                                     {"final_Lambda", p.vanilla_final_Lambda},
                                     {"l1_mid_third", p.vanilla_mid_l1},
                                     {"l1_last_third", p.vanilla_last_l1}}},
                        {"regularized", {{"genotype", p.regularized_genotype},
                                         {"percentile", p.regularized_percentile},
                                         {"collapse_flag", p.regularized_collapsed},
                                         {"final_Lambda", p.regularized_final_Lambda},
                                         {"l1_mid_third", p.regularized_mid_l1},
                                         {"l1_last_third", p.regularized_last_l1}}}});
    }
    const auto [vm, vci] = mean_ci(vp);
    const auto [rm, rci] = mean_ci(rp);
    const auto [vlm, vlci] = mean_ci(vl);
    const auto [rlm, rlci] = mean_ci(rl);
    std::snprintf(line, sizeof line, "percentile   vanilla %.3f +/- %.3f   %s %.3f +/- %.3f   (95%% CI)\n", vm, vci,
                  std::string(regularizer_name(reg.variant)).c_str(), rm, rci);
    out << line;
    std::snprintf(line, sizeof line, "final Lambda vanilla %.3f +/- %.3f   %s %.3f +/- %.3f\n", vlm, vlci,
                  std::string(regularizer_name(reg.variant)).c_str(), rlm, rlci);
    out << line;

    if (!f.out.empty()) {
        std::filesystem::create_directories(f.out);
        const auto path = std::filesystem::path(f.out) / "collapse_summary.json";
        std::ofstream os(path);
        if (!os)
            throw ExportError("cannot write '" + path.string() + "'");
        nlohmann::json summary{{"config", reg.to_json()},
                               {"runs", runs},
                               {"percentile", {{"vanilla", {{"mean", vm}, {"ci95", vci}}},
                                               {"regularized", {{"mean", rm}, {"ci95", rci}}}}},
                               {"final_Lambda", {{"vanilla", {{"mean", vlm}, {"ci95", vlci}}},
                                                 {"regularized", {{"mean", rlm}, {"ci95", rlci}}}}}};
        os << summary.dump(2) << '\n';
        out << "wrote " << path.string() << '\n';
    }
    return exit_ok;
}

int cmd_bench_build(const Flags& f, std::ostream& out)
{
    const Rig rig = collapse_rig();
    const auto data = make_dataset(DatasetKind::layered_composition, rig.data_seed, rig.data);
    const auto bench = build_tabular(rig.spec, data, rig.bench_budget);
    const std::filesystem::path path = f.out.empty() ? "bench.json" : f.out;
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    bench.save(path);
    out << "wrote " << bench.entries.size() << " genotypes to " << path.string() << '\n';
    return exit_ok;
}

int cmd_verify(const Flags& f, std::ostream& out)
{
    if (f.seeds < 4)
        throw UsageError("verify needs --seeds >= 4");
    VerifyOptions options;
    options.seeds = f.seeds;
    options.bench = load_bench(f.bench, collapse_rig().spec);
    options.on_result = [&](const CheckResult& r) { out << format_check(r) << std::endl; };
    const auto results = run_verification(options);
    std::size_t passed = 0;
    for (const auto& r : results)
        passed += r.passed ? 1 : 0;
    out << passed << '/' << results.size() << " checks passed\n";
    return passed == results.size() ? exit_ok : exit_failure;
}

int cmd_report(const Flags& f, std::ostream& out)
{
    if (f.out.empty())
        throw UsageError("report needs --out pointing at a run directory");
    const std::filesystem::path dir = f.out;
    if (!std::filesystem::is_directory(dir))
        throw UsageError("run directory not found: '" + dir.string() + "'");
    out << render_summary(dir);
    const auto series = collect_series(dir);
    write_series_csv(dir / "series.csv", series);
    out << "wrote " << series.size() << " points to " << (dir / "series.csv").string() << '\n';
    return exit_ok;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    kernels::configure_threads();

    CLI::App app{"Differentiable architecture search with layer-alignment regularization", "lambda_nas"};
    app.require_subcommand(1);
    Flags f;

    auto* search_cmd = app.add_subcommand("search", "Run one search on the collapse rig and export traces");
    add_train_flags(search_cmd, f);
    search_cmd->add_option("--seed", f.seed, "Search seed");
    search_cmd->add_option("--out", f.out, "Output directory (default: run)");
    search_cmd->add_option("--format", f.format, "Trace format")->check(CLI::IsMember({"json", "csv"}));

    auto* demo_cmd = app.add_subcommand("collapse-demo", "Paired vanilla and regularized searches");
    add_train_flags(demo_cmd, f);
    demo_cmd->add_option("--seed", f.seed, "First seed");
    demo_cmd->add_option("--seeds", f.seeds, "Number of paired seeds");
    demo_cmd->add_option("--out", f.out, "Directory for collapse_summary.json");

    auto* bench_cmd = app.add_subcommand("bench-build", "Train every genotype of the rig cell");
    bench_cmd->add_option("--out", f.out, "Bench JSON path (default: bench.json)");

    auto* verify_cmd = app.add_subcommand("verify", "Run the oracle and acceptance suite");
    verify_cmd->add_option("--seeds", f.seeds, "Paired seeds for the behavioral checks");
    verify_cmd->add_option("--bench", f.bench, "Prebuilt bench for the rig");

    auto* report_cmd = app.add_subcommand("report", "Summarize a run directory and write series.csv");
    report_cmd->add_option("--out", f.out, "Run directory written by search")->required();

    std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(rest.begin(), rest.end());
    try {
        app.parse(rest);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return exit_ok;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << app.help();
        return exit_usage;
    }

    try {
        if (search_cmd->parsed())
            return cmd_search(f, out);
        if (demo_cmd->parsed())
            return cmd_collapse_demo(f, out);
        if (bench_cmd->parsed())
            return cmd_bench_build(f, out);
        if (verify_cmd->parsed())
            return cmd_verify(f, out);
        return cmd_report(f, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_failure;
    }
}

} // namespace lnas
