#pragma once

#include "lnas/search_space.hpp"
#include "lnas/tabular.hpp"
#include "lnas/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace lnas {

enum class TraceFormat { csv, json };

struct ExportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Columns of trace.csv / keys of each trace.jsonl object, in order.
const std::vector<std::string>& trace_schema();

nlohmann::json step_record_to_json(const StepRecord& r);
StepRecord step_record_from_json(const nlohmann::json& j);

// trace.csv: schema line then one row per record, reals with 17 significant
// digits, empty cell for an absent Lambda.
void write_trace_csv(std::ostream& os, const std::vector<StepRecord>& trace);
std::vector<StepRecord> read_trace_csv(std::istream& is);
void write_trace_jsonl(std::ostream& os, const std::vector<StepRecord>& trace);
std::vector<StepRecord> read_trace_jsonl(std::istream& is);

// At least half of the edges carry zero, skip or avg_scale.
bool collapse_flag(const CellSpec& spec, const Genotype& g);

nlohmann::json epoch_record_to_json(const EpochRecord& e, std::size_t last_step);
nlohmann::json summary_json(const SearchResult& result, const TabularBench* bench = nullptr);

struct ExportedFiles {
    std::filesystem::path trace;
    std::filesystem::path summary;
    std::filesystem::path epochs;
};

// Writes trace.{csv,jsonl}, epochs.jsonl and summary.json into out_dir.
ExportedFiles export_traces(const SearchResult& result, TraceFormat format, const std::filesystem::path& out_dir,
                            const TabularBench* bench = nullptr);

struct SeriesPoint {
    std::size_t step = 0;
    std::string series;
    double value = 0.0;
};

// Long-format series from an exported run directory: per-step alignment and
// losses, per-epoch l1 change, EMA gradient sums and softmax weights.
std::vector<SeriesPoint> collect_series(const std::filesystem::path& run_dir);
void write_series_csv(const std::filesystem::path& path, const std::vector<SeriesPoint>& points);

// Human-readable digest of summary.json and epochs.jsonl.
std::string render_summary(const std::filesystem::path& run_dir);

} // namespace lnas
