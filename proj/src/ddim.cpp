#include "laser/ddim.hpp"

#include <algorithm>
#include <cmath>

#include "laser/errors.hpp"
#include "laser/rng.hpp"

namespace laser {

TimestepGrid::TimestepGrid(int num_steps, int num_train_timesteps) {
    if (num_steps < 1 || num_steps > num_train_timesteps) {
        throw ConfigError("num_steps must lie in [1, " + std::to_string(num_train_timesteps) + "]");
    }
    stride_ = num_train_timesteps / num_steps;
    const int offset = (num_steps - 1) * stride_ + 1 < num_train_timesteps ? 1 : 0;
    for (int k = num_steps - 1; k >= 0; --k) sampling_.push_back(k * stride_ + offset);
}

std::vector<int> TimestepGrid::inversion() const { return {sampling_.rbegin(), sampling_.rend()}; }

int TimestepGrid::timestep_of_step(int ordinal) const {
    if (ordinal < 1 || ordinal > num_steps()) {
        throw ConfigError("step ordinal " + std::to_string(ordinal) + " outside [1, " +
                          std::to_string(num_steps()) + "]");
    }
    return sampling_[static_cast<std::size_t>(ordinal - 1)];
}

std::optional<int> TimestepGrid::step_of_timestep(int timestep) const {
    auto it = std::find(sampling_.begin(), sampling_.end(), timestep);
    if (it == sampling_.end()) return std::nullopt;
    return static_cast<int>(it - sampling_.begin()) + 1;
}

int TimestepGrid::previous(int timestep) const {
    const int p = timestep - stride_;
    return p < 0 ? -1 : p;
}

std::string_view to_string(TraceOrigin origin) {
    switch (origin) {
        case TraceOrigin::inversion: return "inversion";
        case TraceOrigin::endpoint_first: return "endpoint_first";
        case TraceOrigin::endpoint_last: return "endpoint_last";
    }
    return "?";
}

bool ActivationTrace::contains(int timestep, const HookSite& site) const {
    return entries_.contains({timestep, site});
}

const Tensor& ActivationTrace::at(int timestep, const HookSite& site) const {
    auto it = entries_.find({timestep, site});
    if (it == entries_.end()) {
        throw ConfigError("trace '" + source_id_ + "' has no value for timestep " +
                          std::to_string(timestep) + " site " + site.label());
    }
    return it->second;
}

bool ActivationTrace::bit_equal(const ActivationTrace& other) const {
    if (origin_ != other.origin_ || timesteps_ != other.timesteps_ || sites_ != other.sites_ ||
        entries_.size() != other.entries_.size()) {
        return false;
    }
    auto it = other.entries_.begin();
    for (const auto& [key, value] : entries_) {
        if (key != it->first || !laser::bit_equal(value, it->second)) return false;
        ++it;
    }
    return true;
}

std::shared_ptr<const ActivationTrace> ActivationTrace::seal(TraceOrigin origin, std::string source_id,
                                                             std::vector<int> timesteps,
                                                             std::vector<HookSite> sites,
                                                             std::map<Key, Tensor> entries) {
    if (entries.size() != timesteps.size() * sites.size()) {
        throw ConfigError("trace '" + source_id + "' incomplete: " + std::to_string(entries.size()) +
                          " entries for " + std::to_string(timesteps.size()) + " timesteps x " +
                          std::to_string(sites.size()) + " sites");
    }
    for (int t : timesteps) {
        for (const auto& s : sites) {
            auto it = entries.find({t, s});
            if (it == entries.end()) {
                throw ConfigError("trace '" + source_id + "' misses timestep " + std::to_string(t) +
                                  " site " + s.label());
            }
            if (!it->second.all_finite()) {
                throw NumericError("trace '" + source_id + "' holds non-finite values at " + s.label());
            }
        }
    }
    std::shared_ptr<ActivationTrace> trace(new ActivationTrace());
    trace->origin_ = origin;
    trace->source_id_ = std::move(source_id);
    trace->timesteps_ = std::move(timesteps);
    trace->sites_ = std::move(sites);
    trace->entries_ = std::move(entries);
    return trace;
}

TraceRecorder::TraceRecorder(TraceOrigin origin, std::string source_id, std::vector<int> timesteps,
                             std::vector<HookSite> sites)
    : origin_(origin), source_id_(std::move(source_id)), timesteps_(std::move(timesteps)),
      sites_(std::move(sites)) {}

HookSet TraceRecorder::hooks_for(int timestep) {
    HookSet hooks;
    if (std::find(timesteps_.begin(), timesteps_.end(), timestep) == timesteps_.end()) return hooks;
    for (const auto& site : sites_) {
        hooks.capture(site, [this, timestep](const HookSite& s, const Tensor& value) {
            std::lock_guard lock(mutex_);
            auto [it, inserted] = entries_.try_emplace({timestep, s}, value);
            if (!inserted) throw ConfigError("site " + s.label() + " captured twice at one timestep");
        });
    }
    return hooks;
}

std::shared_ptr<const ActivationTrace> TraceRecorder::seal() {
    std::lock_guard lock(mutex_);
    return ActivationTrace::seal(origin_, source_id_, timesteps_, sites_, std::move(entries_));
}

void GuidanceConfig::validate() const {
    if (!std::isfinite(scale) || scale < 0.0) throw ConfigError("guidance scale must be finite and >= 0");
    if (unconditional == UnconditionalKind::replace_with_source && !source) {
        throw ConfigError("replace_with_source guidance needs a source embedding");
    }
}

void HookLog::record(const HookFiring& firing) {
    std::lock_guard lock(mutex_);
    firings_.push_back(firing);
}

std::vector<HookFiring> HookLog::firings() const {
    std::lock_guard lock(mutex_);
    return firings_;
}

Latent ddim_transition(const Latent& z, const Latent& eps, double alpha_bar_from, double alpha_bar_to) {
    require_same_shape(z.values, eps.values, "ddim step");
    if (!z.values.all_finite() || !eps.values.all_finite()) {
        throw NumericError("ddim step received non-finite input");
    }
    const double sf = std::sqrt(alpha_bar_from);
    const double st = std::sqrt(alpha_bar_to);
    const double cz = st / sf;
    const double ce = std::sqrt(1.0 - alpha_bar_to) - st * std::sqrt(1.0 - alpha_bar_from) / sf;
    return Latent{axpby(cz, z.values, ce, eps.values), std::nullopt};
}

Latent ddim_step(const BackboneDescriptor& desc, const Latent& z_t, const Latent& eps, int t, int t_prev) {
    Latent out = ddim_transition(z_t, eps, desc.alpha_bar(t), desc.alpha_bar(t_prev));
    out.timestep_tag = t_prev;
    return out;
}

Latent ddim_inverse_step(const BackboneDescriptor& desc, const Latent& z_prev, const Latent& eps,
                         int t_prev, int t) {
    Latent out = ddim_transition(z_prev, eps, desc.alpha_bar(t_prev), desc.alpha_bar(t));
    out.timestep_tag = t;
    return out;
}

Latent cfg_combine(const Latent& eps_uncond, const Latent& eps_cond, double scale) {
    require_same_shape(eps_uncond.values, eps_cond.values, "cfg_combine");
    if (scale == 0.0) return eps_uncond;
    if (scale == 1.0) return eps_cond;
    Tensor out(eps_cond.values.shape());
    const float s = static_cast<float>(scale);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = eps_uncond.values[i] + s * (eps_cond.values[i] - eps_uncond.values[i]);
    }
    return Latent{std::move(out), eps_cond.timestep_tag};
}

InversionResult ddim_invert(const Backbone& backbone, const Latent& image_latent,
                            const TextEmbedding& embedding, const TimestepGrid& grid,
                            std::span<const HookSite> capture_sites, std::string source_id) {
    const auto& desc = backbone.descriptor();
    for (const auto& s : capture_sites) {
        if (!desc.is_valid(s)) throw ConfigError("capture site " + s.label() + " is not declared by " + desc.name);
    }
    const auto timesteps = grid.inversion();
    TraceRecorder recorder(TraceOrigin::inversion, std::move(source_id), timesteps,
                           {capture_sites.begin(), capture_sites.end()});
    Latent z = image_latent;
    for (int t : timesteps) {
        const HookSet hooks = recorder.hooks_for(t);
        const Latent eps = backbone.predict_noise(z, t, embedding, hooks.empty() ? nullptr : &hooks);
        z = ddim_inverse_step(desc, z, eps, grid.previous(t), t);
    }
    return InversionResult{std::move(z), recorder.seal()};
}

namespace {

HookSet logged(const HookSet& hooks, HookLog* log, int timestep, std::size_t batch_index, bool conditional) {
    if (!log) return hooks;
    HookSet out;
    for (const auto& [site, hook] : hooks.entries()) {
        if (hook.capture) out.capture(site, hook.capture);
        if (hook.transform) {
            out.transform(site, [log, timestep, batch_index, conditional, fn = hook.transform](
                                    const HookSite& s, const Tensor& x) {
                log->record({timestep, s, batch_index, conditional});
                return fn(s, x);
            });
        }
    }
    return out;
}

HookSet transforms_only(const HookSet& hooks) {
    HookSet out;
    for (const auto& [site, hook] : hooks.entries()) {
        if (hook.transform) out.transform(site, hook.transform);
    }
    return out;
}

}  // namespace

std::vector<Latent> ddim_sample_batch(const Backbone& backbone, std::span<const SampleJob> jobs,
                                      const TimestepGrid& grid, const SampleOptions& options) {
    if (jobs.empty()) return {};
    if (!std::isfinite(options.scale) || options.scale < 0.0) {
        throw ConfigError("guidance scale must be finite and >= 0");
    }
    for (const auto& job : jobs) {
        for (const auto* hooks : {&job.hooks, &job.capture_hooks}) {
            for (const auto& [t, set] : *hooks) {
                if (!grid.contains(t)) {
                    throw ConfigError("hook keyed at timestep " + std::to_string(t) + " is not on the sampling grid");
                }
            }
        }
    }
    for (const auto& [t, layers] : options.cross_frame) {
        if (!grid.contains(t)) {
            throw ConfigError("cross-frame attention at timestep " + std::to_string(t) + " is off the grid");
        }
    }

    const auto& desc = backbone.descriptor();
    const std::size_t n = jobs.size();
    std::vector<Latent> z;
    z.reserve(n);
    for (const auto& job : jobs) z.push_back(job.z_T);
    static const std::set<int> kNoCrossFrame;

    for (int t : grid.sampling()) {
        const auto cf = options.cross_frame.find(t);
        const std::set<int>& cross = cf == options.cross_frame.end() ? kNoCrossFrame : cf->second;

        std::vector<HookSet> cond_hooks(n), uncond_hooks(n);
        std::vector<DenoiseInput> cond(n), uncond(n);
        for (std::size_t b = 0; b < n; ++b) {
            if (auto it = jobs[b].hooks.find(t); it != jobs[b].hooks.end()) {
                cond_hooks[b] = logged(it->second, options.log, t, b, true);
                uncond_hooks[b] = logged(transforms_only(it->second), options.log, t, b, false);
            }
            if (auto it = jobs[b].capture_hooks.find(t); it != jobs[b].capture_hooks.end()) {
                cond_hooks[b].merge(it->second);
            }
            cond[b] = {&z[b], &jobs[b].conditional, cond_hooks[b].empty() ? nullptr : &cond_hooks[b]};
            uncond[b] = {&z[b], &jobs[b].unconditional, uncond_hooks[b].empty() ? nullptr : &uncond_hooks[b]};
        }
        std::vector<Latent> eps = backbone.predict_noise(cond, t, cross);
        if (options.scale != 1.0) {
            const std::vector<Latent> eps_u = backbone.predict_noise(uncond, t, cross);
            for (std::size_t b = 0; b < n; ++b) eps[b] = cfg_combine(eps_u[b], eps[b], options.scale);
        }
        for (std::size_t b = 0; b < n; ++b) z[b] = ddim_step(desc, z[b], eps[b], t, grid.previous(t));
    }
    return z;
}

Latent ddim_sample(const Backbone& backbone, const Latent& z_T, const TextEmbedding& embedding,
                   const GuidanceConfig& guidance, const TimestepGrid& grid, const StepHooks& injection_hooks,
                   HookLog* log) {
    guidance.validate();
    SampleJob job{z_T, embedding,
                  guidance.unconditional == UnconditionalKind::replace_with_source ? *guidance.source
                                                                                    : backbone.null_embedding(),
                  injection_hooks,
                  {}};
    SampleOptions options;
    options.scale = guidance.scale;
    options.log = log;
    return std::move(ddim_sample_batch(backbone, std::span<const SampleJob>(&job, 1), grid, options).front());
}

Latent initial_noise(const BackboneDescriptor& desc, std::uint64_t seed) {
    NormalSampler rng(seed);
    const auto shape = desc.latent_shape();
    const std::size_t count = static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
    return Latent{Tensor(shape, rng.normals(count)), std::nullopt};
}

}  // namespace laser
