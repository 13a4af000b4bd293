#include "lnas/diagnostics.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lnas {

namespace {

std::string_view phase_text(Phase p) { return p == Phase::inner ? "inner" : "outer"; }

Phase parse_phase(std::string_view s)
{
    if (s == "inner")
        return Phase::inner;
    if (s == "outer")
        return Phase::outer;
    throw ExportError("trace: unknown phase '" + std::string(s) + "'");
}

std::string real17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_real(const std::string& s)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ExportError("trace: bad number '" + s + "'");
    }
    if (used != s.size())
        throw ExportError("trace: bad number '" + s + "'");
    return v;
}

std::size_t parse_count(const std::string& s)
{
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size())
        throw ExportError("trace: bad integer '" + s + "'");
    return v;
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ','))
        cells.push_back(cell);
    if (!line.empty() && line.back() == ',')
        cells.emplace_back();
    return cells;
}

std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream os(path);
    if (!os)
        throw ExportError("cannot write '" + path.string() + "'");
    os.exceptions(std::ios::badbit);
    return os;
}

std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw ExportError("cannot read '" + path.string() + "'");
    return is;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path)
{
    auto is = open_in(path);
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty())
            continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw ExportError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

} // namespace

const std::vector<std::string>& trace_schema()
{
    static const std::vector<std::string> schema{"step",        "epoch",           "phase",
                                                 "loss",        "lambda_t",        "Lambda",
                                                 "Lambda_sign", "grad_norm_alpha", "min_layer_grad_norm",
                                                 "skipped_reg"};
    return schema;
}

nlohmann::json step_record_to_json(const StepRecord& r)
{
    nlohmann::json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["phase"] = phase_text(r.phase);
    j["loss"] = r.loss;
    j["lambda_t"] = r.lambda_t;
    j["Lambda"] = r.Lambda ? nlohmann::json(*r.Lambda) : nlohmann::json(nullptr);
    j["Lambda_sign"] = r.Lambda_sign ? nlohmann::json(*r.Lambda_sign) : nlohmann::json(nullptr);
    j["grad_norm_alpha"] = r.grad_norm_alpha;
    j["min_layer_grad_norm"] = r.min_layer_grad_norm;
    j["skipped_reg"] = r.skipped_reg;
    return j;
}

StepRecord step_record_from_json(const nlohmann::json& j)
{
    try {
        StepRecord r;
        r.step = j.at("step").get<std::size_t>();
        r.epoch = j.at("epoch").get<std::size_t>();
        r.phase = parse_phase(j.at("phase").get<std::string>());
        r.loss = j.at("loss").get<double>();
        r.lambda_t = j.at("lambda_t").get<double>();
        if (!j.at("Lambda").is_null())
            r.Lambda = j.at("Lambda").get<double>();
        if (!j.at("Lambda_sign").is_null())
            r.Lambda_sign = j.at("Lambda_sign").get<double>();
        r.grad_norm_alpha = j.at("grad_norm_alpha").get<double>();
        r.min_layer_grad_norm = j.at("min_layer_grad_norm").get<double>();
        r.skipped_reg = j.at("skipped_reg").get<bool>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ExportError(std::string("trace: malformed record: ") + e.what());
    }
}

void write_trace_csv(std::ostream& os, const std::vector<StepRecord>& trace)
{
    const auto& schema = trace_schema();
    for (std::size_t i = 0; i < schema.size(); ++i)
        os << (i ? "," : "") << schema[i];
    os << '\n';
    for (const auto& r : trace) {
        os << r.step << ',' << r.epoch << ',' << phase_text(r.phase) << ',' << real17(r.loss) << ','
           << real17(r.lambda_t) << ',' << (r.Lambda ? real17(*r.Lambda) : "") << ','
           << (r.Lambda_sign ? real17(*r.Lambda_sign) : "") << ',' << real17(r.grad_norm_alpha) << ','
           << real17(r.min_layer_grad_norm) << ',' << (r.skipped_reg ? "true" : "false") << '\n';
    }
}

std::vector<StepRecord> read_trace_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line))
        throw ExportError("trace.csv: empty file");
    if (split_csv(line) != trace_schema())
        throw ExportError("trace.csv: header does not match the trace schema");
    std::vector<StepRecord> out;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        const auto c = split_csv(line);
        if (c.size() != trace_schema().size())
            throw ExportError("trace.csv: wrong column count in '" + line + "'");
        StepRecord r;
        r.step = parse_count(c[0]);
        r.epoch = parse_count(c[1]);
        r.phase = parse_phase(c[2]);
        r.loss = parse_real(c[3]);
        r.lambda_t = parse_real(c[4]);
        if (!c[5].empty())
            r.Lambda = parse_real(c[5]);
        if (!c[6].empty())
            r.Lambda_sign = parse_real(c[6]);
        r.grad_norm_alpha = parse_real(c[7]);
        r.min_layer_grad_norm = parse_real(c[8]);
        if (c[9] != "true" && c[9] != "false")
            throw ExportError("trace.csv: bad boolean '" + c[9] + "'");
        r.skipped_reg = c[9] == "true";
        out.push_back(r);
    }
    return out;
}

void write_trace_jsonl(std::ostream& os, const std::vector<StepRecord>& trace)
{
    for (const auto& r : trace)
        os << step_record_to_json(r).dump() << '\n';
}

std::vector<StepRecord> read_trace_jsonl(std::istream& is)
{
    std::vector<StepRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        try {
            out.push_back(step_record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw ExportError(std::string("trace.jsonl: ") + e.what());
        }
    }
    return out;
}

bool collapse_flag(const CellSpec& spec, const Genotype& g)
{
    std::size_t nonparametric = 0;
    for (std::size_t o : g.choice)
        if (!is_parametric(spec.ops().at(o)))
            ++nonparametric;
    return 2 * nonparametric >= g.choice.size();
}

nlohmann::json epoch_record_to_json(const EpochRecord& e, std::size_t last_step)
{
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["last_step"] = last_step;
    j["lambda_t"] = e.lambda_t;
    j["mean_Lambda"] = e.mean_Lambda;
    j["mean_Lambda_sign"] = e.mean_Lambda_sign;
    j["report"] = e.report ? e.report->to_json() : nlohmann::json(nullptr);
    j["train_loss"] = e.train_loss;
    j["val_loss"] = e.val_loss;
    j["l1_change"] = e.l1_change;
    j["cumulative_l1"] = e.cumulative_l1;
    j["cumulative_step_l1"] = e.cumulative_step_l1;
    j["probs"] = e.probs;
    j["genotype"] = e.genotype.choice;
    j["ema"] = e.ema;
    return j;
}

nlohmann::json summary_json(const SearchResult& result, const TabularBench* bench)
{
    nlohmann::json j;
    j["genotype"] = result.genotype.to_text(result.spec);
    j["genotype_edges"] = result.genotype.to_json(result.spec).at("edges");
    j["spec"] = result.spec.canonical();
    j["epochs"] = result.epochs.size();
    j["trace_records"] = result.trace.size();
    if (!result.epochs.empty()) {
        const auto& last = result.epochs.back();
        j["final_Lambda"] = last.mean_Lambda;
        j["final_Lambda_sign"] = last.mean_Lambda_sign;
        j["final_val_loss"] = last.val_loss;
        j["cumulative_l1"] = last.cumulative_l1;
    } else {
        j["final_Lambda"] = nullptr;
    }
    j["collapse_flag"] = collapse_flag(result.spec, result.genotype);
    j["checkpoint"] = result.checkpoint ? nlohmann::json(result.checkpoint->string()) : nlohmann::json(nullptr);
    if (bench) {
        const RankResult rank = rank_of(result.genotype, *bench);
        j["rank"] = rank.rank;
        j["percentile"] = rank.percentile;
        j["val_accuracy"] = bench->at(result.genotype).val_accuracy;
    }
    return j;
}

ExportedFiles export_traces(const SearchResult& result, TraceFormat format, const std::filesystem::path& out_dir,
                            const TabularBench* bench)
{
    if (result.trace.empty())
        throw ExportError("export_traces: empty trace");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        throw ExportError("cannot create '" + out_dir.string() + "': " + ec.message());

    ExportedFiles files;
    files.trace = out_dir / (format == TraceFormat::csv ? "trace.csv" : "trace.jsonl");
    {
        auto os = open_out(files.trace);
        if (format == TraceFormat::csv)
            write_trace_csv(os, result.trace);
        else
            write_trace_jsonl(os, result.trace);
    }
    files.epochs = out_dir / "epochs.jsonl";
    {
        auto os = open_out(files.epochs);
        const std::size_t per_epoch = result.trace.size() / std::max<std::size_t>(result.epochs.size(), 1);
        for (const auto& e : result.epochs)
            os << epoch_record_to_json(e, (e.epoch + 1) * per_epoch - 1).dump() << '\n';
    }
    files.summary = out_dir / "summary.json";
    {
        auto os = open_out(files.summary);
        os << summary_json(result, bench).dump(2) << '\n';
    }
    return files;
}

std::vector<SeriesPoint> collect_series(const std::filesystem::path& run_dir)
{
    std::vector<StepRecord> trace;
    if (std::filesystem::exists(run_dir / "trace.jsonl")) {
        auto is = open_in(run_dir / "trace.jsonl");
        trace = read_trace_jsonl(is);
    } else {
        auto is = open_in(run_dir / "trace.csv");
        trace = read_trace_csv(is);
    }

    std::vector<SeriesPoint> out;
    for (const auto& r : trace) {
        if (r.phase == Phase::inner) {
            out.push_back({r.step, "loss/train", r.loss});
            if (r.Lambda)
                out.push_back({r.step, "Lambda", *r.Lambda});
            if (r.Lambda_sign)
                out.push_back({r.step, "Lambda_sign", *r.Lambda_sign});
            out.push_back({r.step, "min_layer_grad_norm", r.min_layer_grad_norm});
            out.push_back({r.step, "lambda_t", r.lambda_t});
        } else {
            out.push_back({r.step, "loss/val", r.loss});
            out.push_back({r.step, "grad_norm_alpha", r.grad_norm_alpha});
        }
    }

    for (const auto& e : read_jsonl(run_dir / "epochs.jsonl")) {
        try {
            const std::size_t step = e.at("last_step").get<std::size_t>();
            out.push_back({step, "epoch/mean_Lambda", e.at("mean_Lambda").get<double>()});
            out.push_back({step, "epoch/l1_change", e.at("l1_change").get<double>()});
            out.push_back({step, "epoch/cumulative_l1", e.at("cumulative_l1").get<double>()});
            out.push_back({step, "epoch/cumulative_step_l1", e.at("cumulative_step_l1").get<double>()});
            const auto& probs = e.at("probs");
            for (std::size_t k = 0; k < probs.size(); ++k)
                out.push_back({step, "p/" + std::to_string(k), probs[k].get<double>()});
            for (const auto& [name, v] : e.at("ema").items())
                out.push_back({step, "ema/" + name, v.get<double>()});
        } catch (const nlohmann::json::exception& ex) {
            throw ExportError("epochs.jsonl: malformed record: " + std::string(ex.what()));
        }
    }
    return out;
}

void write_series_csv(const std::filesystem::path& path, const std::vector<SeriesPoint>& points)
{
    auto os = open_out(path);
    os << "step,series,value\n";
    for (const auto& p : points)
        os << p.step << ',' << p.series << ',' << real17(p.value) << '\n';
}

std::string render_summary(const std::filesystem::path& run_dir)
{
    nlohmann::json summary;
    {
        auto is = open_in(run_dir / "summary.json");
        try {
            summary = nlohmann::json::parse(is);
        } catch (const nlohmann::json::parse_error& e) {
            throw ExportError((run_dir / "summary.json").string() + ": " + e.what());
        }
    }
    const auto epochs = read_jsonl(run_dir / "epochs.jsonl");

    std::ostringstream os;
    os << "genotype       " << summary.value("genotype", std::string("?")) << '\n';
    os << "epochs         " << summary.value("epochs", 0) << '\n';
    if (summary.contains("final_Lambda") && !summary["final_Lambda"].is_null())
        os << "final Lambda   " << summary["final_Lambda"].get<double>() << '\n';
    os << "collapse flag  " << (summary.value("collapse_flag", false) ? "yes" : "no") << '\n';
    if (summary.contains("percentile"))
        os << "bench rank     " << summary["rank"].get<std::size_t>() << " (percentile "
           << summary["percentile"].get<double>() << ")\n";
    if (!epochs.empty()) {
        const std::size_t n = epochs.size();
        auto cum = [&](std::size_t i) { return epochs[i].at("cumulative_l1").get<double>(); };
        os << "cumulative l1  " << cum(n - 1) << '\n';
        if (n >= 3) {
            const double a = cum(n / 3 - 1), b = cum(2 * n / 3 - 1), c = cum(n - 1);
            os << "l1 by third    " << a << ' ' << b - a << ' ' << c - b << '\n';
        }
        os << "\nepoch  Lambda     train_loss  val_loss   l1_change\n";
        const std::size_t stride = std::max<std::size_t>(1, n / 10);
        for (std::size_t i = 0; i < n; i += stride) {
            const auto& e = epochs[i];
            char line[128];
            std::snprintf(line, sizeof line, "%5zu  %9.5f  %10.5f  %9.5f  %9.5f\n", e.at("epoch").get<std::size_t>(),
                          e.at("mean_Lambda").get<double>(), e.at("train_loss").get<double>(),
                          e.at("val_loss").get<double>(), e.at("l1_change").get<double>());
            os << line;
        }
    }
    return os.str();
}

} // namespace lnas
