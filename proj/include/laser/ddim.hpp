#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "laser/backbone.hpp"

namespace laser {

// DDIM timesteps with "leading" spacing and offset 1, as configured for SD 1.x:
// 50 steps over 1000 training timesteps gives 981, 961, ..., 1.
class TimestepGrid {
public:
    TimestepGrid(int num_steps, int num_train_timesteps);

    int num_steps() const { return static_cast<int>(sampling_.size()); }
    int stride() const { return stride_; }
    // Descending, one entry per sampling step.
    const std::vector<int>& sampling() const { return sampling_; }
    // Ascending, the order inversion visits timesteps.
    std::vector<int> inversion() const;
    // Timestep of the 1-based sampling step ordinal.
    int timestep_of_step(int ordinal) const;
    // 1-based sampling step ordinal of a grid timestep; nullopt off the grid.
    std::optional<int> step_of_timestep(int timestep) const;
    // Next lower noise level, or -1 for the clean endpoint.
    int previous(int timestep) const;
    bool contains(int timestep) const { return step_of_timestep(timestep).has_value(); }

private:
    int stride_;
    std::vector<int> sampling_;
};

enum class TraceOrigin { inversion, endpoint_first, endpoint_last };
std::string_view to_string(TraceOrigin origin);

// Captured site values keyed by (scheduler timestep, site). Only constructible
// sealed, through TraceRecorder or the on-disk cache.
class ActivationTrace {
public:
    using Key = std::pair<int, HookSite>;

    TraceOrigin origin() const { return origin_; }
    const std::string& source_id() const { return source_id_; }
    const std::vector<int>& timesteps() const { return timesteps_; }
    const std::vector<HookSite>& sites() const { return sites_; }
    std::size_t size() const { return entries_.size(); }

    bool contains(int timestep, const HookSite& site) const;
    // Throws ConfigError when absent.
    const Tensor& at(int timestep, const HookSite& site) const;
    const std::map<Key, Tensor>& entries() const { return entries_; }

    bool bit_equal(const ActivationTrace& other) const;

    // Validates completeness and finiteness; used by the recorder and the cache.
    static std::shared_ptr<const ActivationTrace> seal(TraceOrigin origin, std::string source_id,
                                                       std::vector<int> timesteps,
                                                       std::vector<HookSite> sites,
                                                       std::map<Key, Tensor> entries);

private:
    ActivationTrace() = default;

    TraceOrigin origin_ = TraceOrigin::inversion;
    std::string source_id_;
    std::vector<int> timesteps_;
    std::vector<HookSite> sites_;
    std::map<Key, Tensor> entries_;
};

// Collects capture-sink values during a denoising loop, then seals them.
class TraceRecorder {
public:
    TraceRecorder(TraceOrigin origin, std::string source_id, std::vector<int> timesteps,
                  std::vector<HookSite> sites);

    // Capture hooks for every recorded site at `timestep` (empty off the grid).
    HookSet hooks_for(int timestep);
    std::shared_ptr<const ActivationTrace> seal();

private:
    TraceOrigin origin_;
    std::string source_id_;
    std::vector<int> timesteps_;
    std::vector<HookSite> sites_;
    std::mutex mutex_;
    std::map<ActivationTrace::Key, Tensor> entries_;
};

enum class UnconditionalKind { null_text, replace_with_source };

struct GuidanceConfig {
    double scale = 7.5;
    UnconditionalKind unconditional = UnconditionalKind::null_text;
    std::optional<TextEmbedding> source;  // required for replace_with_source

    void validate() const;
};

// Hooks per scheduler timestep.
using StepHooks = std::map<int, HookSet>;
// Decoder layers running cross-frame attention, per scheduler timestep.
using CrossFrameSchedule = std::map<int, std::set<int>>;

// Record of a transform firing during sampling.
struct HookFiring {
    int timestep;
    HookSite site;
    std::size_t batch_index;
    bool conditional_branch;
};

class HookLog {
public:
    void record(const HookFiring& firing);
    std::vector<HookFiring> firings() const;

private:
    mutable std::mutex mutex_;
    std::vector<HookFiring> firings_;
};

// Deterministic eta = 0 DDIM transition between two noise levels. Linear in
// (z, eps) for fixed levels.
Latent ddim_transition(const Latent& z, const Latent& eps, double alpha_bar_from, double alpha_bar_to);

// Sampling step from t to t_prev (t_prev = -1 means the clean endpoint).
Latent ddim_step(const BackboneDescriptor& desc, const Latent& z_t, const Latent& eps, int t, int t_prev);
// Inversion step from t_prev up to t.
Latent ddim_inverse_step(const BackboneDescriptor& desc, const Latent& z_prev, const Latent& eps,
                         int t_prev, int t);

// eps_uncond + scale * (eps_cond - eps_uncond); exact at scale 0 and 1.
Latent cfg_combine(const Latent& eps_uncond, const Latent& eps_cond, double scale);

struct InversionResult {
    Latent z_T;
    std::shared_ptr<const ActivationTrace> trace;
};

// DDIM inversion at guidance scale 1, capturing `capture_sites` at every grid timestep.
InversionResult ddim_invert(const Backbone& backbone, const Latent& image_latent,
                            const TextEmbedding& embedding, const TimestepGrid& grid,
                            std::span<const HookSite> capture_sites, std::string source_id = "source");

struct SampleJob {
    Latent z_T;
    TextEmbedding conditional;
    TextEmbedding unconditional;
    StepHooks hooks;          // transforms apply to both branches
    StepHooks capture_hooks;  // captures read the conditional branch only
};

struct SampleOptions {
    double scale = 7.5;
    CrossFrameSchedule cross_frame;
    HookLog* log = nullptr;
};

// Samples a batch in one lockstep loop; batch elements only interact through
// cross-frame attention.
std::vector<Latent> ddim_sample_batch(const Backbone& backbone, std::span<const SampleJob> jobs,
                                      const TimestepGrid& grid, const SampleOptions& options);

Latent ddim_sample(const Backbone& backbone, const Latent& z_T, const TextEmbedding& embedding,
                   const GuidanceConfig& guidance, const TimestepGrid& grid,
                   const StepHooks& injection_hooks = {}, HookLog* log = nullptr);

// Gaussian initial latent for text-to-image sampling.
Latent initial_noise(const BackboneDescriptor& desc, std::uint64_t seed);

}  // namespace laser
