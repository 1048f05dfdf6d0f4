#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "laser/controller.hpp"
#include "laser/ddim.hpp"
#include "laser/injection.hpp"
#include "laser/trace_cache.hpp"

namespace laser {

// Equidistant α values 0, 1/(n_f-1), ..., 1 with exact endpoints.
struct AlphaGrid {
    std::vector<double> values;
};

AlphaGrid make_alpha_grid(int n_f);

// (1 - α) e_i + α e_next; with use_beta, α is replaced by β = w·α.
TextEmbedding interpolate_embeddings(const TextEmbedding& e_i, const TextEmbedding& e_next, double alpha,
                                     bool use_beta = false, double w = 0.8);

struct GeneratorConfig {
    int steps = 50;
    double cfg_scale = 7.5;
    InjectionSchedule fai_schedule;
    InjectionSchedule attention_schedule;  // KVAI and DAI
    double w = 0.8;
    bool beta_embeddings = false;  // DAI only
    const TraceCache* trace_cache = nullptr;
    int jobs = 1;  // workers for independent (FAI / None) interior frames

    // Defaults for `desc` at `steps` sampling steps.
    static GeneratorConfig defaults(const BackboneDescriptor& desc, int steps = 50);
    void validate(const BackboneDescriptor& desc) const;
    const InjectionSchedule& schedule_for(InjectionStrategy strategy) const;
};

struct FrameJob {
    int stage = 0;
    double alpha = 0.0;
    TextEmbedding conditional;
    TextEmbedding unconditional;
    Latent initial_latent;
    InjectionStrategy strategy = InjectionStrategy::none;
};

struct FrameRecord {
    int stage = 0;
    double alpha = 0.0;
    InjectionStrategy strategy = InjectionStrategy::none;
    std::string prompt_from;
    std::string prompt_to;
    bool null_text_replacement = false;
    double seconds = 0.0;  // stage wall clock, inversion included, split evenly over its frames
};

struct StageResult {
    std::vector<Image> frames;  // α order
    std::vector<Latent> latents;
    std::vector<FrameRecord> records;
    Latent z_T;
    std::shared_ptr<const ActivationTrace> inversion_trace;
    double seconds = 0.0;
};

StageResult generate_stage(const Backbone& backbone, int stage_index, const Image& prior_image,
                           const std::string& prompt_from, const std::string& prompt_to,
                           InjectionStrategy strategy, int n_f, const GeneratorConfig& config,
                           HookLog* log = nullptr);

struct AnimationResult {
    Image initial_image;  // I_0
    std::vector<Image> frames;
    std::vector<FrameRecord> records;
    double total_seconds = 0.0;
};

// Called once per emitted frame, in order, as soon as its stage finishes.
using FrameSink = std::function<void(std::size_t index, const Image& frame, const FrameRecord& record)>;

// Stage boundary frames are emitted once: n_t * n_f - (n_t - 1) frames.
AnimationResult generate_animation(const Backbone& backbone, const AnimationRequest& request,
                                   const StagePlan& plan, const GeneratorConfig& config,
                                   const FrameSink& sink = {}, HookLog* log = nullptr);

// I_0 from text: CFG sampling of `prompt` from the seeded initial noise.
Image generate_initial_image(const Backbone& backbone, const std::string& prompt, std::uint64_t seed,
                             const GeneratorConfig& config);

std::size_t expected_frame_count(int n_t, int n_f);

}  // namespace laser
