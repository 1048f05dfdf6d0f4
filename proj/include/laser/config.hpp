#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "laser/generator.hpp"

namespace laser {

struct IndexRange {
    int first = 0;
    int last = 0;

    friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

// Effective settings of one run. Unset windows follow the step count.
struct RunConfig {
    std::string backbone = "tiny-test";
    std::string weights;
    int steps = 50;
    double cfg_scale = 7.5;
    std::optional<InjectionStrategy> strategy;  // bypasses ICA
    std::optional<IndexRange> fai_steps;        // default: first half
    std::optional<IndexRange> fai_layers;       // default: every decoder layer
    int feature_layer = 4;
    std::optional<IndexRange> attention_steps;  // default: after the first tenth
    IndexRange attention_layers{3, 8};
    double w = 0.8;
    bool beta_embeddings = false;
    int n_f = 12;
    int n_t = 0;
    std::uint64_t seed = 0;
    std::string llm_backend = "mock";
    int llm_retries = 2;
    std::string output_dir = "runs/latest";
    std::string trace_cache;
    int jobs = 1;
    int gif_fps = 8;

    // Overlays the keys present in `j`; unknown keys are a ConfigError.
    void merge(const nlohmann::json& j);
    nlohmann::json to_json() const;
    // Hash of everything that affects outputs (not output_dir, trace_cache, jobs).
    std::string hash() const;

    GeneratorConfig generator_config(const BackboneDescriptor& desc) const;
};

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace laser
