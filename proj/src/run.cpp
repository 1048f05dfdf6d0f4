#include "laser/run.hpp"

#include <cstdio>
#include <fstream>

#include "laser/errors.hpp"
#include "laser/hash.hpp"

namespace laser {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string pixel_hash(const Image& image) {
    const auto bytes = to_rgb8(image);
    return sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string frame_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu.png", index);
    return buf;
}

json schedule_json(InjectionStrategy strategy, const GeneratorConfig& g, const BackboneDescriptor& desc) {
    json j{{"kind", std::string(to_string(strategy))}};
    if (strategy == InjectionStrategy::none) return j;
    const auto& s = g.schedule_for(strategy);
    j["steps"] = std::vector<int>(s.active_steps.begin(), s.active_steps.end());
    j["layers"] = std::vector<int>(s.decoder_layers.begin(), s.decoder_layers.end());
    j["summary"] = s.describe();
    j["gamma"] = "t/" + std::to_string(desc.num_train_timesteps);
    if (strategy == InjectionStrategy::fai) j["feature_layer"] = s.feature_layer;
    if (strategy == InjectionStrategy::dai) {
        j["w"] = g.w;
        j["beta_embeddings"] = g.beta_embeddings;
    }
    if (strategy != InjectionStrategy::fai) j["cross_frame_attention"] = true;
    return j;
}

json transcript_json(const Transcript& t) {
    return {{"agent", t.agent},       {"prompt_version", t.prompt_version}, {"attempt", t.attempt},
            {"user_prompt", t.user_prompt}, {"response", t.response},       {"error", t.error}};
}

json agent_prompt_json() {
    json j;
    for (const AgentPrompt* p : {&sia_prompt(), &pga_prompt(), &ica_prompt()}) {
        j[std::string(p->agent)] = {{"version", std::string(p->version)}, {"sha256", p->sha256()}};
    }
    return j;
}

json shareable_config(const RunConfig& config) {
    json j = config.to_json();
    j.erase("output_dir");
    j.erase("trace_cache");
    j.erase("jobs");
    return j;
}

}  // namespace

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

json plan_to_json(const StagePlan& plan) {
    json transitions = json::array();
    for (const auto& t : plan.transitions) {
        transitions.push_back({{"index", t.index},
                               {"from", plan.prompts[t.index]},
                               {"to", plan.prompts[t.index + 1]},
                               {"strategy", std::string(to_string(t.strategy))},
                               {"decided_by", std::string(to_string(t.source))},
                               {"rationale", t.rationale}});
    }
    return {{"prompts", plan.prompts},
            {"enhanced_initial_prompt", plan.enhanced_initial_prompt ? json(*plan.enhanced_initial_prompt) : json(nullptr)},
            {"transitions", transitions},
            {"warnings", plan.warnings}};
}

StagePlan plan_from_json(const json& j) {
    StagePlan plan;
    try {
        plan.prompts = j.at("prompts").get<std::vector<std::string>>();
        if (!j.at("enhanced_initial_prompt").is_null()) plan.enhanced_initial_prompt = j["enhanced_initial_prompt"].get<std::string>();
        for (const auto& t : j.at("transitions")) {
            Transition tr;
            tr.index = t.at("index").get<int>();
            const auto s = parse_strategy(t.at("strategy").get<std::string>());
            if (!s) throw ConfigError("recorded plan has unknown strategy");
            tr.strategy = *s;
            const auto by = t.at("decided_by").get<std::string>();
            tr.source = by == "override" ? StrategySource::override_flag
                        : by == "ablation" ? StrategySource::ablation
                                           : StrategySource::ica;
            tr.rationale = t.value("rationale", "");
            plan.transitions.push_back(std::move(tr));
        }
        plan.warnings = j.value("warnings", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("recorded plan is malformed: ") + e.what());
    }
    plan.validate();
    return plan;
}

json metrics_to_json(const MetricsReport& r) {
    return {{"pic", r.pic},
            {"lpips_total", r.lpips_total},
            {"lpips_max_endpoint", r.lpips_max_endpoint},
            {"clip_frame", r.clip_frame},
            {"clip_text", r.clip_text},
            {"ppl", r.ppl},
            {"runtime_seconds", r.runtime_seconds},
            {"n_frames", r.n_frames}};
}

RunArtifacts execute_run(const Backbone& backbone, const CompletionBackend& llm, const RunConfig& config,
                         const AnimationRequest& user_request, const fs::path& dir, const RunOptions& options) {
    // Work from the input exactly as input.png will store it, so a recorded run replays bit for bit.
    AnimationRequest request = user_request;
    if (request.input_image) request.input_image = quantized(*request.input_image);
    const auto& desc = backbone.descriptor();
    const GeneratorConfig gen_base = config.generator_config(desc);
    std::optional<TraceCache> cache;
    if (!config.trace_cache.empty()) cache.emplace(config.trace_cache);
    GeneratorConfig gen = gen_base;
    gen.trace_cache = cache ? &*cache : nullptr;

    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "transcripts");
    for (const auto& entry : fs::directory_iterator(dir / "frames")) fs::remove(entry.path());

    RunArtifacts out;
    Controller controller(llm, config.llm_retries);
    auto write_transcripts = [&] {
        const auto& ts = controller.transcripts();
        for (std::size_t i = 0; i < ts.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "%02zu_%s_attempt%d.json", i, ts[i].agent.c_str(), ts[i].attempt);
            write_json(dir / "transcripts" / name, transcript_json(ts[i]));
        }
    };
    try {
        if (options.preset_plan) {
            out.plan = *options.preset_plan;
        } else if (options.stage_prompts) {
            out.plan = controller.plan_from_prompts(request, *options.stage_prompts, config.strategy);
        } else {
            out.plan = controller.plan(request, config.strategy);
        }
    } catch (...) {
        write_transcripts();
        throw;
    }
    write_transcripts();
    if (options.adjust_plan) options.adjust_plan(out.plan);
    out.plan.validate();

    json manifest;
    manifest["format"] = 1;
    manifest["config"] = shareable_config(config);
    manifest["config_hash"] = config.hash();
    manifest["backbone"] = desc.name;
    manifest["llm_backend"] = llm.name();
    manifest["agent_prompts"] = agent_prompt_json();
    manifest["request"] = {{"description", request.description},
                           {"n_t", request.n_t},
                           {"n_f", request.n_f},
                           {"seed", request.seed},
                           {"input_image", request.input_image ? json("input.png") : json(nullptr)},
                           {"input_image_sha256", request.input_image ? json(pixel_hash(*request.input_image)) : json(nullptr)}};
    manifest["plan"] = plan_to_json(out.plan);
    json schedules = json::array();
    for (const auto& t : out.plan.transitions) schedules.push_back(schedule_json(t.strategy, gen, desc));
    manifest["schedules"] = schedules;
    manifest["expected_frames"] = expected_frame_count(out.plan.n_t(), request.n_f);

    json frames = json::array();
    auto sink = [&](std::size_t index, const Image& frame, const FrameRecord& rec) {
        const std::string name = frame_name(index);
        save_png(frame, dir / "frames" / name);
        frames.push_back({{"index", index},
                          {"file", "frames/" + name},
                          {"stage", rec.stage},
                          {"alpha", rec.alpha},
                          {"strategy", std::string(to_string(rec.strategy))},
                          {"prompt_sha256", {sha256_hex(rec.prompt_from), sha256_hex(rec.prompt_to)}},
                          {"unconditional", rec.null_text_replacement ? "source_prompt" : "null_text"},
                          {"pixels_sha256", pixel_hash(frame)}});
    };
    try {
        out.animation = generate_animation(backbone, request, out.plan, gen, sink, options.hook_log);
    } catch (const std::exception& e) {
        manifest["frames"] = frames;
        manifest["status"] = "failed";
        manifest["error"] = e.what();
        write_json(dir / "manifest.json", manifest);
        throw;
    }
    save_png(out.animation.initial_image, dir / "input.png");
    manifest["initial_image"] = {{"file", "input.png"},
                                 {"source", request.input_image ? "user" : "generated"},
                                 {"pixels_sha256", pixel_hash(out.animation.initial_image)}};
    manifest["frames"] = frames;
    manifest["status"] = "complete";
    save_gif(out.animation.frames, dir / "animation.gif", config.gif_fps);

    PerceptualNet net;
    std::vector<FramePosition> positions;
    for (const auto& r : out.animation.records) positions.push_back({r.stage, r.alpha});
    out.metrics = evaluate_frames(net, out.animation.frames, out.animation.initial_image, out.plan.prompts, positions,
                                  out.animation.total_seconds);
    json metrics = metrics_to_json(out.metrics);
    metrics["runtime_per_16_frames"] = out.metrics.runtime_seconds * 16.0 / out.metrics.n_frames;
    metrics["notes"] = {{"pic", "mean of clamp(1 - d(frame, input), 0, 1) under the frozen perceptual network"},
                        {"ppl", "lpips_total * (n_frames - 1)"},
                        {"clip_frame", "mean cosine of consecutive frame embeddings; the headline CLIP column"},
                        {"clip_text", "mean cosine of each frame with its alpha-interpolated stage text; reported alongside "
                                      "because the headline operand pair is ambiguous"}};
    write_json(dir / "metrics.json", metrics);

    json timing = {{"total_seconds", out.animation.total_seconds}};
    json per_frame = json::array();
    for (const auto& r : out.animation.records) per_frame.push_back(r.seconds);
    timing["frame_seconds"] = per_frame;
    write_json(dir / "timing.json", timing);

    write_json(dir / "manifest.json", manifest);
    out.manifest = std::move(manifest);
    return out;
}

RecordedRun load_recorded_run(const fs::path& manifest_path) {
    const json m = read_json(manifest_path);
    RecordedRun rec;
    try {
        rec.config.merge(m.at("config"));
        if (rec.config.hash() != m.at("config_hash").get<std::string>()) {
            throw ConfigError("manifest config does not match its recorded hash");
        }
        const auto& r = m.at("request");
        rec.request.description = r.at("description").get<std::string>();
        rec.request.n_t = r.at("n_t").get<int>();
        rec.request.n_f = r.at("n_f").get<int>();
        rec.request.seed = r.at("seed").get<std::uint64_t>();
        if (!r.at("input_image").is_null()) {
            rec.request.input_image = load_png(manifest_path.parent_path() / r["input_image"].get<std::string>());
        }
        rec.plan = plan_from_json(m.at("plan"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("manifest is malformed: ") + e.what());
    }
    return rec;
}

}  // namespace laser
