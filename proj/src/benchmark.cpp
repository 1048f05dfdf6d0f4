#include "laser/benchmark.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "laser/errors.hpp"
#include "laser/run.hpp"

namespace laser {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Category c) {
    switch (c) {
        case Category::material: return "material";
        case Category::non_rigid: return "non_rigid";
        case Category::hybrid: return "hybrid";
    }
    return "?";
}

std::optional<Category> parse_category(std::string_view s) {
    for (auto c : {Category::material, Category::non_rigid, Category::hybrid}) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

std::string_view display_name(Category c) {
    switch (c) {
        case Category::material: return "Material";
        case Category::non_rigid: return "Non-rigid";
        case Category::hybrid: return "Hybrid";
    }
    return "?";
}

std::map<Category, int> BenchmarkSet::counts() const {
    std::map<Category, int> out{{Category::material, 0}, {Category::non_rigid, 0}, {Category::hybrid, 0}};
    for (const auto& e : entries) ++out[e.category];
    return out;
}

namespace {

std::map<Category, int> parse_counts(const json& j, std::size_t line) {
    if (!j.is_object()) throw LoadError("declared_counts must be an object", line);
    std::map<Category, int> out;
    for (const auto& [k, v] : j.items()) {
        const auto c = parse_category(k);
        if (!c) throw LoadError("unknown category '" + k + "' in declared_counts", line);
        if (!v.is_number_integer() || v.get<int>() < 0) throw LoadError("declared count for " + k + " must be a non-negative integer", line);
        out[*c] = v.get<int>();
    }
    for (auto c : {Category::material, Category::non_rigid, Category::hybrid}) out.try_emplace(c, 0);
    return out;
}

BenchmarkEntry parse_entry(const json& j, std::size_t line, const fs::path& base) {
    static const std::set<std::string> allowed{"id", "category", "description", "stage_prompts",
                                               "image_path", "n_t", "n_f", "seed"};
    if (!j.is_object()) throw LoadError("entry must be a JSON object", line);
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) throw LoadError("unknown field '" + k + "'", line);
    }
    auto require_string = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
            throw LoadError(std::string("field '") + key + "' must be a non-empty string", line);
        }
        return j[key].get<std::string>();
    };
    auto optional_int = [&](const char* key, int fallback) {
        if (!j.contains(key)) return fallback;
        if (!j[key].is_number_integer()) throw LoadError(std::string("field '") + key + "' must be an integer", line);
        return j[key].get<int>();
    };
    BenchmarkEntry e;
    e.id = require_string("id");
    const std::string cat = require_string("category");
    const auto c = parse_category(cat);
    if (!c) throw LoadError("unknown category '" + cat + "' (expected material, non_rigid or hybrid)", line);
    e.category = *c;
    e.description = require_string("description");
    if (j.contains("stage_prompts")) {
        const auto& sp = j["stage_prompts"];
        if (!sp.is_array() || sp.size() < 2) throw LoadError("stage_prompts must list at least two prompts", line);
        std::vector<std::string> prompts;
        for (const auto& p : sp) {
            if (!p.is_string() || p.get<std::string>().empty()) throw LoadError("stage_prompts entries must be non-empty strings", line);
            prompts.push_back(p.get<std::string>());
        }
        e.stage_prompts = std::move(prompts);
    }
    if (j.contains("image_path")) e.image_path = base / require_string("image_path");
    e.n_f = optional_int("n_f", 12);
    e.n_t = optional_int("n_t", e.stage_prompts ? static_cast<int>(e.stage_prompts->size()) - 1 : 0);
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) throw LoadError("field 'seed' must be a non-negative integer", line);
        e.seed = j["seed"].get<std::uint64_t>();
    }
    if (e.n_f < 2) throw LoadError("n_f must be at least 2", line);
    if (e.n_t < 0 || e.n_t > kMaxStages) throw LoadError("n_t outside [0, " + std::to_string(kMaxStages) + "]", line);
    if (e.stage_prompts && static_cast<int>(e.stage_prompts->size()) != e.n_t + 1) {
        throw LoadError("n_t disagrees with the number of stage_prompts", line);
    }
    return e;
}

}  // namespace

BenchmarkSet load_benchmark(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read benchmark " + path.string());
    BenchmarkSet set;
    std::set<std::string> ids;
    std::string text;
    std::size_t line = 0;
    bool seen_entry = false;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw LoadError(std::string("invalid JSON: ") + e.what(), line);
        }
        if (j.is_object() && j.contains("declared_counts")) {
            if (seen_entry || !set.declared_counts.empty()) throw LoadError("declared_counts must be the first line", line);
            if (j.size() != 1) throw LoadError("declared_counts line must hold nothing else", line);
            set.declared_counts = parse_counts(j["declared_counts"], line);
            continue;
        }
        BenchmarkEntry e = parse_entry(j, line, path.parent_path());
        if (!ids.insert(e.id).second) throw LoadError("duplicate id '" + e.id + "'", line);
        set.entries.push_back(std::move(e));
        seen_entry = true;
    }
    if (!set.declared_counts.empty() && set.declared_counts != set.counts()) {
        std::string msg = "declared counts do not match entries:";
        for (const auto& [c, n] : set.counts()) {
            msg += " " + std::string(to_string(c)) + "=" + std::to_string(n) + "/" + std::to_string(set.declared_counts.at(c));
        }
        throw LoadError(msg, 1);
    }
    return set;
}

void save_benchmark(const BenchmarkSet& set, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    if (!set.declared_counts.empty()) {
        json counts;
        for (const auto& [c, n] : set.declared_counts) counts[std::string(to_string(c))] = n;
        out << json{{"declared_counts", counts}}.dump() << "\n";
    }
    for (const auto& e : set.entries) {
        json j{{"id", e.id}, {"category", std::string(to_string(e.category))}, {"description", e.description}};
        if (e.stage_prompts) j["stage_prompts"] = *e.stage_prompts;
        if (e.image_path) j["image_path"] = e.image_path->string();
        if (e.n_t > 0) j["n_t"] = e.n_t;
        j["n_f"] = e.n_f;
        j["seed"] = e.seed;
        out << j.dump() << "\n";
    }
}

const std::map<Category, int>& reference_split() {
    static const std::map<Category, int> split{{Category::material, 70}, {Category::non_rigid, 70}, {Category::hybrid, 60}};
    return split;
}

void validate_reference_split(const BenchmarkSet& set) {
    const auto actual = set.counts();
    auto describe = [](const std::map<Category, int>& m) {
        std::string s;
        for (const auto& [c, n] : m) s += (s.empty() ? "" : ", ") + std::string(to_string(c)) + "=" + std::to_string(n);
        return s;
    };
    if (actual != reference_split()) {
        throw ConfigError("entry counts {" + describe(actual) + "} differ from the reference split {" +
                          describe(reference_split()) + "}");
    }
    if (!set.declared_counts.empty() && set.declared_counts != reference_split()) {
        throw ConfigError("declared counts {" + describe(set.declared_counts) + "} differ from the reference split");
    }
}

std::string AblationMode::label() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
        if (on) s += (s.empty() ? "" : "+") + std::string("w/o-") + name;
    };
    add(no_fai, "FAI");
    add(no_kvai, "KVAI");
    add(no_dai, "DAI");
    add(no_ica, "ICA");
    return s.empty() ? "full" : s;
}

AblationMode parse_ablation(std::string_view text) {
    AblationMode mode;
    std::string s(text);
    if (s.empty() || s == "full" || s == "none") return mode;
    for (char& c : s) {
        if (c == ',') c = '+';
    }
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, '+')) {
        std::string key;
        for (char c : part) key.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        if (key.rfind("W/O-", 0) == 0) key = key.substr(4);
        else if (key.rfind("W/O", 0) == 0) key = key.substr(3);
        if (key == "FAI") mode.no_fai = true;
        else if (key == "KVAI") mode.no_kvai = true;
        else if (key == "DAI") mode.no_dai = true;
        else if (key == "ICA") mode.no_ica = true;
        else throw ConfigError("unknown ablation '" + part + "' (expected w/o-FAI, w/o-KVAI, w/o-DAI or w/o-ICA)");
    }
    return mode;
}

InjectionStrategy ablated_strategy(InjectionStrategy chosen, const AblationMode& mode) {
    InjectionStrategy s = mode.no_ica ? InjectionStrategy::dai : chosen;
    if ((s == InjectionStrategy::fai && mode.no_fai) || (s == InjectionStrategy::kvai && mode.no_kvai) ||
        (s == InjectionStrategy::dai && mode.no_dai)) {
        s = InjectionStrategy::none;
    }
    return s;
}

void apply_ablation(StagePlan& plan, const AblationMode& mode) {
    for (auto& t : plan.transitions) {
        const InjectionStrategy s = ablated_strategy(t.strategy, mode);
        if (s != t.strategy || mode.no_ica) {
            t.rationale = mode.label() + (t.strategy != s ? " replaced " + std::string(to_string(t.strategy)) : "");
            t.strategy = s;
            t.source = StrategySource::ablation;
        }
    }
}

namespace {

std::string fmt_seconds(const std::optional<double>& s) {
    if (!s) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fs", *s);
    return buf;
}

std::string runtime_cell(const std::optional<double>& fai, const std::optional<double>& attention,
                         const std::optional<double>& none) {
    std::string cell = fmt_seconds(fai) + "/" + fmt_seconds(attention);
    if (none) cell += " ddim " + fmt_seconds(none);
    return cell;
}

TableRow row_from(const std::string& label, const MetricsReport& m, const std::string& runtime) {
    return {label, m.pic, m.lpips_total, m.lpips_max_endpoint, m.clip_frame, m.clip_text, m.ppl, runtime};
}

}  // namespace

std::vector<TableRow> aggregate_rows(const std::vector<EntryResult>& entries, bool include_entries) {
    std::vector<TableRow> rows;
    if (include_entries) {
        for (const auto& e : entries) {
            if (e.ok) rows.push_back(row_from(e.id, e.metrics, runtime_cell(e.runtime_fai, e.runtime_attention, e.runtime_none)));
        }
    }
    auto mean_of = [](const std::vector<const EntryResult*>& group, const std::string& label) {
        MetricsReport m;
        double n = 0.0;
        double fai = 0, attn = 0, none = 0;
        int n_fai = 0, n_attn = 0, n_none = 0;
        for (const auto* e : group) {
            m.pic += e->metrics.pic;
            m.lpips_total += e->metrics.lpips_total;
            m.lpips_max_endpoint += e->metrics.lpips_max_endpoint;
            m.clip_frame += e->metrics.clip_frame;
            m.clip_text += e->metrics.clip_text;
            m.ppl += e->metrics.ppl;
            n += 1.0;
            if (e->runtime_fai) fai += *e->runtime_fai, ++n_fai;
            if (e->runtime_attention) attn += *e->runtime_attention, ++n_attn;
            if (e->runtime_none) none += *e->runtime_none, ++n_none;
        }
        m.pic /= n;
        m.lpips_total /= n;
        m.lpips_max_endpoint /= n;
        m.clip_frame /= n;
        m.clip_text /= n;
        m.ppl /= n;
        auto avg = [](double sum, int count) { return count ? std::optional(sum / count) : std::nullopt; };
        return row_from(label, m, runtime_cell(avg(fai, n_fai), avg(attn, n_attn), avg(none, n_none)));
    };
    std::vector<const EntryResult*> all;
    for (auto c : {Category::material, Category::non_rigid, Category::hybrid}) {
        std::vector<const EntryResult*> group;
        for (const auto& e : entries) {
            if (e.ok && e.category == c) group.push_back(&e);
        }
        if (!group.empty()) rows.push_back(mean_of(group, std::string(display_name(c))));
        all.insert(all.end(), group.begin(), group.end());
    }
    if (!all.empty()) rows.push_back(mean_of(all, "Overall"));
    return rows;
}

const std::vector<std::string>& table_columns() {
    static const std::vector<std::string> cols{"PIC", "LPIPS_T", "LPIPS_M", "CLIP Score (frame)",
                                               "CLIP Score (text)", "PPL", "Runtime"};
    return cols;
}

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string trim_cell(const std::string& s) {
    const auto b = s.find_first_not_of(' ');
    const auto e = s.find_last_not_of(' ');
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

std::string emit_table(const std::vector<TableRow>& rows, TableFormat format) {
    if (rows.empty()) throw ConfigError("cannot emit an empty results table");
    std::string out;
    if (format == TableFormat::csv) {
        out = "Row";
        for (const auto& c : table_columns()) out += "," + csv_field(c);
        out += "\n";
        for (const auto& r : rows) {
            out += csv_field(r.label) + "," + num(r.pic) + "," + num(r.lpips_total) + "," + num(r.lpips_max_endpoint) +
                   "," + num(r.clip_frame) + "," + num(r.clip_text) + "," + num(r.ppl) + "," + csv_field(r.runtime) + "\n";
        }
        return out;
    }
    out = "| Row |";
    for (const auto& c : table_columns()) out += " " + c + " |";
    out += "\n|---|";
    for (std::size_t i = 0; i < table_columns().size(); ++i) out += "---:|";
    out += "\n";
    for (const auto& r : rows) {
        out += "| " + r.label + " | " + num(r.pic) + " | " + num(r.lpips_total) + " | " + num(r.lpips_max_endpoint) +
               " | " + num(r.clip_frame) + " | " + num(r.clip_text) + " | " + num(r.ppl) + " | " + r.runtime + " |\n";
    }
    return out;
}

std::vector<TableRow> parse_markdown_table(const std::string& text) {
    std::vector<TableRow> rows;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(ss, line)) {
        ++lineno;
        if (line.empty() || line[0] != '|') continue;
        std::vector<std::string> cells;
        std::size_t pos = 1;
        while (pos < line.size()) {
            const auto next = line.find('|', pos);
            if (next == std::string::npos) break;
            cells.push_back(trim_cell(line.substr(pos, next - pos)));
            pos = next + 1;
        }
        if (!header_seen) {
            if (cells.size() != table_columns().size() + 1 ||
                !std::equal(table_columns().begin(), table_columns().end(), cells.begin() + 1)) {
                throw LoadError("table header does not match the expected columns", lineno);
            }
            header_seen = true;
            continue;
        }
        if (!cells.empty() && cells[0].rfind("---", 0) == 0) continue;
        if (cells.size() != table_columns().size() + 1) throw LoadError("row has the wrong number of cells", lineno);
        TableRow r;
        r.label = cells[0];
        try {
            r.pic = std::stod(cells[1]);
            r.lpips_total = std::stod(cells[2]);
            r.lpips_max_endpoint = std::stod(cells[3]);
            r.clip_frame = std::stod(cells[4]);
            r.clip_text = std::stod(cells[5]);
            r.ppl = std::stod(cells[6]);
        } catch (const std::exception&) {
            throw LoadError("non-numeric metric cell", lineno);
        }
        r.runtime = cells[7];
        rows.push_back(std::move(r));
    }
    if (!header_seen) throw LoadError("no table found", lineno);
    return rows;
}

BenchmarkReport run_benchmark(const BenchmarkSet& set, const RunConfig& config, const AblationMode& ablation,
                              const fs::path& out_dir) {
    if (set.entries.empty()) throw ConfigError("benchmark set is empty");
    const auto backbone = make_backbone(config.backbone, config.weights);
    const auto llm = make_backend(config.llm_backend);
    BenchmarkReport report;
    report.ablation = ablation;
    for (const auto& entry : set.entries) {
        EntryResult result;
        result.id = entry.id;
        result.category = entry.category;
        try {
            RunConfig cfg = config;
            cfg.n_f = entry.n_f;
            cfg.n_t = entry.n_t;
            cfg.seed = entry.seed;
            AnimationRequest request;
            request.description = entry.description;
            request.n_t = entry.n_t;
            request.n_f = entry.n_f;
            request.seed = entry.seed;
            if (entry.image_path) request.input_image = load_png(*entry.image_path);
            RunOptions options;
            options.stage_prompts = entry.stage_prompts;
            options.adjust_plan = [&ablation](StagePlan& plan) { apply_ablation(plan, ablation); };
            const RunArtifacts run = execute_run(*backbone, *llm, cfg, request, out_dir / entry.id, options);
            result.metrics = run.metrics;
            for (const auto& t : run.plan.transitions) result.strategies.push_back(t.strategy);
            double sums[3] = {0, 0, 0};
            int counts[3] = {0, 0, 0};
            for (const auto& r : run.animation.records) {
                const int k = r.strategy == InjectionStrategy::fai ? 0 : r.strategy == InjectionStrategy::none ? 2 : 1;
                sums[k] += r.seconds;
                ++counts[k];
            }
            auto per16 = [&](int k) { return counts[k] ? std::optional(16.0 * sums[k] / counts[k]) : std::nullopt; };
            result.runtime_fai = per16(0);
            result.runtime_attention = per16(1);
            result.runtime_none = per16(2);
            result.ok = true;
        } catch (const std::exception& e) {
            result.error = e.what();
        }
        report.entries.push_back(std::move(result));
    }
    report.rows = aggregate_rows(report.entries);
    return report;
}

BenchmarkSet expand_benchmark(const BenchmarkSet& seeds, Controller& controller) {
    BenchmarkSet out = seeds;
    for (auto& e : out.entries) {
        if (e.stage_prompts) continue;
        e.stage_prompts = controller.sia_decompose(e.description, e.n_t);
        e.n_t = static_cast<int>(e.stage_prompts->size()) - 1;
    }
    return out;
}

}  // namespace laser
