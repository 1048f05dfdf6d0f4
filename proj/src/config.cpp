#include "laser/config.hpp"

#include <fstream>

#include "laser/errors.hpp"
#include "laser/hash.hpp"

namespace laser {

using nlohmann::json;

namespace {

IndexRange range_from(const json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
        throw ConfigError("config key '" + key + "' must be a [first, last] integer pair");
    }
    IndexRange r{j[0].get<int>(), j[1].get<int>()};
    if (r.first > r.last) throw ConfigError("config key '" + key + "' has first > last");
    return r;
}

json range_json(const IndexRange& r) { return json::array({r.first, r.last}); }

template <typename T>
T typed(const json& j, const std::string& key) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

}  // namespace

void RunConfig::merge(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        if (key == "backbone") backbone = typed<std::string>(v, key);
        else if (key == "weights") weights = typed<std::string>(v, key);
        else if (key == "steps") steps = typed<int>(v, key);
        else if (key == "cfg_scale") cfg_scale = typed<double>(v, key);
        else if (key == "strategy") {
            if (v.is_null()) {
                strategy.reset();
            } else {
                const auto s = parse_strategy(typed<std::string>(v, key));
                if (!s) throw ConfigError("unknown strategy '" + v.get<std::string>() + "'");
                strategy = s;
            }
        } else if (key == "fai") {
            for (const auto& [k, x] : v.items()) {
                if (k == "steps") fai_steps = range_from(x, "fai.steps");
                else if (k == "layers") fai_layers = x.is_string() && x == "all" ? std::nullopt : std::optional(range_from(x, "fai.layers"));
                else if (k == "feature_layer") feature_layer = typed<int>(x, "fai.feature_layer");
                else throw ConfigError("unknown config key 'fai." + k + "'");
            }
        } else if (key == "attention") {
            for (const auto& [k, x] : v.items()) {
                if (k == "steps") attention_steps = range_from(x, "attention.steps");
                else if (k == "layers") attention_layers = range_from(x, "attention.layers");
                else throw ConfigError("unknown config key 'attention." + k + "'");
            }
        } else if (key == "w") w = typed<double>(v, key);
        else if (key == "beta_embeddings") beta_embeddings = typed<bool>(v, key);
        else if (key == "n_f") n_f = typed<int>(v, key);
        else if (key == "n_t") n_t = typed<int>(v, key);
        else if (key == "seed") seed = typed<std::uint64_t>(v, key);
        else if (key == "llm") {
            for (const auto& [k, x] : v.items()) {
                if (k == "backend") llm_backend = typed<std::string>(x, "llm.backend");
                else if (k == "max_retries") llm_retries = typed<int>(x, "llm.max_retries");
                else throw ConfigError("unknown config key 'llm." + k + "'");
            }
        } else if (key == "output_dir") output_dir = typed<std::string>(v, key);
        else if (key == "trace_cache") trace_cache = typed<std::string>(v, key);
        else if (key == "jobs") jobs = typed<int>(v, key);
        else if (key == "gif_fps") gif_fps = typed<int>(v, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

json RunConfig::to_json() const {
    const int fai_last = std::max(1, static_cast<int>(std::lround(steps * 0.5)));
    const int attn_skip = static_cast<int>(std::lround(steps * 0.1));
    json j;
    j["backbone"] = backbone;
    j["weights"] = weights;
    j["steps"] = steps;
    j["cfg_scale"] = cfg_scale;
    j["strategy"] = strategy ? json(std::string(to_string(*strategy))) : json(nullptr);
    j["fai"] = {{"steps", range_json(fai_steps.value_or(IndexRange{1, fai_last}))},
                {"layers", fai_layers ? range_json(*fai_layers) : json("all")},
                {"feature_layer", feature_layer}};
    j["attention"] = {{"steps", range_json(attention_steps.value_or(IndexRange{attn_skip + 1, steps}))},
                      {"layers", range_json(attention_layers)}};
    j["w"] = w;
    j["beta_embeddings"] = beta_embeddings;
    j["n_f"] = n_f;
    j["n_t"] = n_t;
    j["seed"] = seed;
    j["llm"] = {{"backend", llm_backend}, {"max_retries", llm_retries}};
    j["output_dir"] = output_dir;
    j["trace_cache"] = trace_cache;
    j["jobs"] = jobs;
    j["gif_fps"] = gif_fps;
    return j;
}

std::string RunConfig::hash() const {
    json j = to_json();
    j.erase("output_dir");
    j.erase("trace_cache");
    j.erase("jobs");
    return sha256_hex(j.dump());
}

GeneratorConfig RunConfig::generator_config(const BackboneDescriptor& desc) const {
    GeneratorConfig g = GeneratorConfig::defaults(desc, steps);
    const json j = to_json();
    const auto fs = range_from(j["fai"]["steps"], "fai.steps");
    const auto fl = fai_layers.value_or(IndexRange{1, desc.num_decoder_layers()});
    g.fai_schedule = InjectionSchedule::ranges(fs.first, fs.last, fl.first, fl.last, feature_layer);
    const auto as = range_from(j["attention"]["steps"], "attention.steps");
    g.attention_schedule = InjectionSchedule::ranges(as.first, as.last, attention_layers.first, attention_layers.last);
    g.cfg_scale = cfg_scale;
    g.w = w;
    g.beta_embeddings = beta_embeddings;
    g.jobs = jobs;
    g.validate(desc);
    return g;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    RunConfig c;
    c.merge(j);
    return c;
}

}  // namespace laser
