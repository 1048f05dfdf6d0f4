#include "laser/generator.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include "laser/errors.hpp"
#include "laser/hash.hpp"

namespace laser {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string image_hash(const Image& image) {
    const auto bytes = to_rgb8(image);
    return sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

// Capture hooks for a recorder at each of `timesteps`.
StepHooks capture_hooks(TraceRecorder& recorder, const std::vector<int>& timesteps) {
    StepHooks out;
    for (int t : timesteps) {
        HookSet set = recorder.hooks_for(t);
        if (!set.empty()) out[t] = std::move(set);
    }
    return out;
}

}  // namespace

AlphaGrid make_alpha_grid(int n_f) {
    if (n_f < 2) throw ConfigError("n_f must be at least 2, got " + std::to_string(n_f));
    AlphaGrid grid;
    grid.values.resize(static_cast<std::size_t>(n_f));
    for (int k = 0; k < n_f; ++k) grid.values[k] = static_cast<double>(k) / (n_f - 1);
    grid.values.front() = 0.0;
    grid.values.back() = 1.0;
    return grid;
}

TextEmbedding interpolate_embeddings(const TextEmbedding& e_i, const TextEmbedding& e_next, double alpha,
                                     bool use_beta, double w) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("interpolation weight must lie in [0, 1]");
    if (use_beta && !(w > 0.0 && w < 1.0)) throw ConfigError("DAI weight w must lie in (0, 1)");
    require_same_shape(e_i.values, e_next.values, "interpolate_embeddings");
    const double t = use_beta ? w * alpha : alpha;
    TextEmbedding out;
    out.values = lerp(e_i.values, e_next.values, t);
    out.source_prompt = e_i.source_prompt + " -> " + e_next.source_prompt;
    out.truncated = e_i.truncated || e_next.truncated;
    return out;
}

GeneratorConfig GeneratorConfig::defaults(const BackboneDescriptor& desc, int steps) {
    GeneratorConfig c;
    c.steps = steps;
    c.fai_schedule = default_fai_schedule(steps, desc);
    c.attention_schedule = default_attention_schedule(steps);
    return c;
}

void GeneratorConfig::validate(const BackboneDescriptor& desc) const {
    if (steps < 1) throw ConfigError("steps must be positive");
    if (!std::isfinite(cfg_scale) || cfg_scale < 0.0) throw ConfigError("cfg_scale must be finite and >= 0");
    if (!(w > 0.0 && w < 1.0)) throw ConfigError("w must lie in (0, 1)");
    if (jobs < 1) throw ConfigError("jobs must be positive");
    fai_schedule.validate(steps, desc);
    attention_schedule.validate(steps, desc);
}

const InjectionSchedule& GeneratorConfig::schedule_for(InjectionStrategy strategy) const {
    return strategy == InjectionStrategy::fai ? fai_schedule : attention_schedule;
}

std::size_t expected_frame_count(int n_t, int n_f) {
    return static_cast<std::size_t>(n_t) * n_f - static_cast<std::size_t>(n_t - 1);
}

StageResult generate_stage(const Backbone& backbone, int stage_index, const Image& prior_image,
                           const std::string& prompt_from, const std::string& prompt_to,
                           InjectionStrategy strategy, int n_f, const GeneratorConfig& config, HookLog* log) {
    const auto start = Clock::now();
    const auto& desc = backbone.descriptor();
    config.validate(desc);
    const AlphaGrid alphas = make_alpha_grid(n_f);
    const TimestepGrid grid(config.steps, desc.num_train_timesteps);
    const InjectionSchedule& schedule = config.schedule_for(strategy);

    const TextEmbedding e_i = backbone.encode_prompt(prompt_from);
    const TextEmbedding e_next = backbone.encode_prompt(prompt_to);
    const TextEmbedding unconditional = strategy == InjectionStrategy::none ? backbone.null_embedding() : e_i;

    // (1) chained inversion of the prior image under e_i
    const Latent source = backbone.encode_image(prior_image);
    const auto sites = inversion_sites(strategy, schedule, desc);
    InversionResult inv = cached_invert(backbone, config.trace_cache, source, e_i, grid, sites, image_hash(prior_image),
                                        "stage" + std::to_string(stage_index));

    auto make_job = [&](double alpha) {
        FrameJob job;
        job.stage = stage_index;
        job.alpha = alpha;
        job.conditional = interpolate_embeddings(e_i, e_next, alpha,
                                                 config.beta_embeddings && strategy == InjectionStrategy::dai, config.w);
        job.unconditional = unconditional;
        job.initial_latent = inv.z_T;
        job.strategy = strategy;
        return job;
    };
    auto injection = [&](double alpha, const EndpointTraces& endpoints) -> StepHooks {
        const BlendWeights weights{alpha, config.w, desc.num_train_timesteps};
        switch (strategy) {
            case InjectionStrategy::fai: return fai_hooks(inv.trace, endpoints, weights, schedule, grid, desc);
            case InjectionStrategy::kvai: return kvai_hooks(inv.trace, endpoints, weights, schedule, grid, desc);
            case InjectionStrategy::dai: return dai_hooks(inv.trace, weights, schedule, grid, desc);
            case InjectionStrategy::none: return {};
        }
        return {};
    };

    SampleOptions options;
    options.scale = config.cfg_scale;
    options.log = log;
    if (strategy == InjectionStrategy::kvai || strategy == InjectionStrategy::dai) {
        options.cross_frame = cross_frame_schedule(schedule, grid, desc);
    }

    std::vector<Latent> latents(alphas.values.size());

    // (2) endpoints first, capturing what interior blends need
    const auto ep_sites = endpoint_sites(strategy, schedule, desc);
    const auto active = active_timesteps(schedule, grid);
    TraceRecorder first_rec(TraceOrigin::endpoint_first, "stage" + std::to_string(stage_index) + "/first", active, ep_sites);
    TraceRecorder last_rec(TraceOrigin::endpoint_last, "stage" + std::to_string(stage_index) + "/last", active, ep_sites);
    {
        const FrameJob first = make_job(0.0);
        const FrameJob last = make_job(1.0);
        std::vector<SampleJob> batch{
            {first.initial_latent, first.conditional, first.unconditional, injection(0.0, {}),
             ep_sites.empty() ? StepHooks{} : capture_hooks(first_rec, active)},
            {last.initial_latent, last.conditional, last.unconditional, injection(1.0, {}),
             ep_sites.empty() ? StepHooks{} : capture_hooks(last_rec, active)}};
        auto out = ddim_sample_batch(backbone, batch, grid, options);
        latents.front() = std::move(out[0]);
        latents.back() = std::move(out[1]);
    }
    EndpointTraces endpoints;
    if (!ep_sites.empty()) endpoints = {first_rec.seal(), last_rec.seal()};

    // (3) interior frames
    const std::size_t n_interior = alphas.values.size() - 2;
    if (n_interior > 0) {
        const bool batched = strategy == InjectionStrategy::kvai || strategy == InjectionStrategy::dai;
        if (batched) {
            std::vector<SampleJob> batch;
            for (std::size_t k = 1; k + 1 < alphas.values.size(); ++k) {
                const double alpha = alphas.values[k];
                FrameJob job = make_job(alpha);
                batch.push_back({job.initial_latent, job.conditional, job.unconditional, injection(alpha, endpoints), {}});
            }
            auto out = ddim_sample_batch(backbone, batch, grid, options);
            for (std::size_t k = 0; k < out.size(); ++k) latents[k + 1] = std::move(out[k]);
        } else {
            std::atomic<std::size_t> next{1};
            std::exception_ptr failure;
            std::mutex failure_mutex;
            auto worker = [&] {
                for (std::size_t k = next++; k + 1 < alphas.values.size(); k = next++) {
                    try {
                        const double alpha = alphas.values[k];
                        FrameJob job = make_job(alpha);
                        SampleJob sample{job.initial_latent, job.conditional, job.unconditional,
                                         injection(alpha, endpoints), {}};
                        latents[k] = std::move(ddim_sample_batch(backbone, std::span<const SampleJob>(&sample, 1),
                                                                 grid, options).front());
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            };
            const int workers = std::min<int>(config.jobs, static_cast<int>(n_interior));
            std::vector<std::thread> pool;
            for (int i = 1; i < workers; ++i) pool.emplace_back(worker);
            worker();
            for (auto& t : pool) t.join();
            if (failure) std::rethrow_exception(failure);
        }
    }

    // (4) decode
    StageResult result;
    for (std::size_t k = 0; k < latents.size(); ++k) {
        result.frames.push_back(backbone.decode_latent(latents[k]));
        FrameRecord rec;
        rec.stage = stage_index;
        rec.alpha = alphas.values[k];
        rec.strategy = strategy;
        rec.prompt_from = prompt_from;
        rec.prompt_to = prompt_to;
        rec.null_text_replacement = strategy != InjectionStrategy::none;
        result.records.push_back(std::move(rec));
    }
    result.latents = std::move(latents);
    result.z_T = std::move(inv.z_T);
    result.inversion_trace = std::move(inv.trace);
    result.seconds = seconds_since(start);
    for (auto& rec : result.records) rec.seconds = result.seconds / static_cast<double>(result.records.size());
    return result;
}

Image generate_initial_image(const Backbone& backbone, const std::string& prompt, std::uint64_t seed,
                             const GeneratorConfig& config) {
    const auto& desc = backbone.descriptor();
    const TimestepGrid grid(config.steps, desc.num_train_timesteps);
    GuidanceConfig guidance;
    guidance.scale = config.cfg_scale;
    const Latent z0 = ddim_sample(backbone, initial_noise(desc, seed), backbone.encode_prompt(prompt), guidance, grid);
    return backbone.decode_latent(z0);
}

AnimationResult generate_animation(const Backbone& backbone, const AnimationRequest& request,
                                   const StagePlan& plan, const GeneratorConfig& config, const FrameSink& sink,
                                   HookLog* log) {
    const auto start = Clock::now();
    request.validate();
    plan.validate();
    config.validate(backbone.descriptor());

    AnimationResult result;
    if (request.input_image) {
        result.initial_image = *request.input_image;
    } else {
        const std::string prompt = plan.enhanced_initial_prompt.value_or(plan.prompts.front());
        result.initial_image = generate_initial_image(backbone, prompt, request.seed, config);
    }

    Image prior = result.initial_image;
    for (int i = 0; i < plan.n_t(); ++i) {
        StageResult stage = generate_stage(backbone, i, prior, plan.prompts[i], plan.prompts[i + 1],
                                           plan.transitions[i].strategy, request.n_f, config, log);
        for (std::size_t k = i == 0 ? 0 : 1; k < stage.frames.size(); ++k) {
            result.frames.push_back(stage.frames[k]);
            result.records.push_back(stage.records[k]);
            if (sink) sink(result.frames.size() - 1, result.frames.back(), result.records.back());
        }
        prior = stage.frames.back();
    }
    result.total_seconds = seconds_since(start);
    return result;
}

}  // namespace laser
