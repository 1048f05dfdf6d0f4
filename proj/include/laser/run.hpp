#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "json.hpp"
#include "laser/config.hpp"
#include "laser/controller.hpp"
#include "laser/generator.hpp"
#include "laser/metrics.hpp"

namespace laser {

struct RunOptions {
    std::optional<std::vector<std::string>> stage_prompts;  // skip SIA
    std::optional<StagePlan> preset_plan;                    // skip every agent
    std::function<void(StagePlan&)> adjust_plan;             // e.g. ablation rules
    HookLog* hook_log = nullptr;
};

struct RunArtifacts {
    StagePlan plan;
    AnimationResult animation;
    MetricsReport metrics;
    nlohmann::json manifest;
};

// Plans, generates, evaluates and writes a run directory:
//   frames/NNNN.png, input.png, animation.gif, manifest.json, metrics.json,
//   timing.json, transcripts/
// manifest.json holds only deterministic content; wall-clock figures live in
// timing.json and metrics.json. On failure the manifest is written with
// status "failed" next to the frames produced so far, then the error rethrown.
RunArtifacts execute_run(const Backbone& backbone, const CompletionBackend& llm, const RunConfig& config,
                         const AnimationRequest& request, const std::filesystem::path& dir,
                         const RunOptions& options = {});

nlohmann::json plan_to_json(const StagePlan& plan);
StagePlan plan_from_json(const nlohmann::json& j);
nlohmann::json metrics_to_json(const MetricsReport& report);

// Reads a run's manifest back into (config, request, plan); checks the stored
// config hash. The input image is reloaded from the run directory when present.
struct RecordedRun {
    RunConfig config;
    AnimationRequest request;
    StagePlan plan;
};
RecordedRun load_recorded_run(const std::filesystem::path& manifest_path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace laser
