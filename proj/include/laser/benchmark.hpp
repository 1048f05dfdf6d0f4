#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "laser/config.hpp"
#include "laser/controller.hpp"
#include "laser/metrics.hpp"

namespace laser {

enum class Category { material, non_rigid, hybrid };
std::string_view to_string(Category c);
std::optional<Category> parse_category(std::string_view s);
// Row label used in aggregate tables: "Material", "Non-rigid", "Hybrid".
std::string_view display_name(Category c);

struct BenchmarkEntry {
    std::string id;
    Category category = Category::material;
    std::string description;
    std::optional<std::vector<std::string>> stage_prompts;
    std::optional<std::filesystem::path> image_path;  // resolved against the set file
    int n_t = 0;
    int n_f = 12;
    std::uint64_t seed = 0;
};

struct BenchmarkSet {
    std::vector<BenchmarkEntry> entries;
    std::map<Category, int> declared_counts;  // empty when the file declares none

    std::map<Category, int> counts() const;
};

// JSONL, one entry per line. An optional first line {"declared_counts": {...}}
// must agree with the entries. Errors carry the 1-based line number.
BenchmarkSet load_benchmark(const std::filesystem::path& path);
void save_benchmark(const BenchmarkSet& set, const std::filesystem::path& path);

// The published split: 70 material, 70 non-rigid, 60 hybrid.
const std::map<Category, int>& reference_split();
// Throws ConfigError unless the actual counts, and the declared ones when present,
// equal the reference split.
void validate_reference_split(const BenchmarkSet& set);

// Mechanisms removed for an ablation row.
struct AblationMode {
    bool no_fai = false;
    bool no_kvai = false;
    bool no_dai = false;
    bool no_ica = false;

    std::string label() const;  // "full", "w/o-FAI", "w/o-ICA+w/o-DAI", ...
};

// "full"/"none" or '+'/','-separated "w/o-FAI", "w/o-KVAI", "w/o-DAI", "w/o-ICA".
AblationMode parse_ablation(std::string_view text);
// Without ICA every transition gets DAI; a disabled strategy becomes None.
InjectionStrategy ablated_strategy(InjectionStrategy chosen, const AblationMode& mode);
void apply_ablation(StagePlan& plan, const AblationMode& mode);

struct EntryResult {
    std::string id;
    Category category = Category::material;
    bool ok = false;
    std::string error;
    MetricsReport metrics;
    std::vector<InjectionStrategy> strategies;
    // Seconds per 16 frames, split by the frame's strategy.
    std::optional<double> runtime_fai;
    std::optional<double> runtime_attention;  // KVAI and DAI
    std::optional<double> runtime_none;
};

struct TableRow {
    std::string label;
    double pic = 0.0;
    double lpips_total = 0.0;
    double lpips_max_endpoint = 0.0;
    double clip_frame = 0.0;
    double clip_text = 0.0;
    double ppl = 0.0;
    std::string runtime;  // "41.0s/48.0s" (FAI/KVAI-DAI), "-" when absent
};

struct BenchmarkReport {
    AblationMode ablation;
    std::vector<EntryResult> entries;
    std::vector<TableRow> rows;  // one per successful entry, then categories, then "Overall"
};

// Runs each entry into `out_dir/<id>/`; failures are recorded and the run continues.
BenchmarkReport run_benchmark(const BenchmarkSet& set, const RunConfig& config, const AblationMode& ablation,
                              const std::filesystem::path& out_dir);

// Means over exactly the entries of each category plus an overall row.
std::vector<TableRow> aggregate_rows(const std::vector<EntryResult>& entries, bool include_entries = true);

enum class TableFormat { csv, markdown };
const std::vector<std::string>& table_columns();
std::string emit_table(const std::vector<TableRow>& rows, TableFormat format);
// Parses emit_table's markdown back into rows.
std::vector<TableRow> parse_markdown_table(const std::string& text);

// Fills stage_prompts for entries lacking them, through SIA.
BenchmarkSet expand_benchmark(const BenchmarkSet& seeds, Controller& controller);

}  // namespace laser
