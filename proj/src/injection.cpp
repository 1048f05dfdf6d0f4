#include "laser/injection.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "laser/errors.hpp"

namespace laser {

std::string_view to_string(InjectionStrategy strategy) {
    switch (strategy) {
        case InjectionStrategy::none: return "None";
        case InjectionStrategy::fai: return "FAI";
        case InjectionStrategy::kvai: return "KVAI";
        case InjectionStrategy::dai: return "DAI";
    }
    return "?";
}

std::optional<InjectionStrategy> parse_strategy(std::string_view label) {
    std::string s;
    for (char c : label) {
        if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    if (s == "FAI") return InjectionStrategy::fai;
    if (s == "KVAI") return InjectionStrategy::kvai;
    if (s == "DAI") return InjectionStrategy::dai;
    if (s == "NONE") return InjectionStrategy::none;
    return std::nullopt;
}

InjectionSchedule InjectionSchedule::ranges(int first_step, int last_step, int first_layer, int last_layer,
                                            int feature_layer) {
    InjectionSchedule s;
    for (int i = first_step; i <= last_step; ++i) s.active_steps.insert(i);
    for (int l = first_layer; l <= last_layer; ++l) s.decoder_layers.insert(l);
    s.feature_layer = feature_layer;
    return s;
}

void InjectionSchedule::validate(int num_steps, const BackboneDescriptor& desc) const {
    for (int s : active_steps) {
        if (s < 1 || s > num_steps) {
            throw ConfigError("injection step " + std::to_string(s) + " outside [1, " + std::to_string(num_steps) + "]");
        }
    }
    for (int l : decoder_layers) {
        if (l < 1 || l > desc.num_decoder_layers()) {
            throw ConfigError("injection layer " + std::to_string(l) + " not declared by " + desc.name);
        }
    }
    if (feature_layer < 1 || feature_layer > desc.num_decoder_layers()) {
        throw ConfigError("feature layer " + std::to_string(feature_layer) + " not declared by " + desc.name);
    }
}

namespace {

std::string compress(const std::set<int>& values) {
    if (values.empty()) return "none";
    std::string out;
    auto it = values.begin();
    while (it != values.end()) {
        const int start = *it;
        int end = start;
        auto next = std::next(it);
        while (next != values.end() && *next == end + 1) {
            end = *next;
            ++next;
        }
        if (!out.empty()) out += ",";
        out += start == end ? std::to_string(start) : std::to_string(start) + "-" + std::to_string(end);
        it = next;
    }
    return out;
}

}  // namespace

std::string InjectionSchedule::describe() const {
    return "steps " + compress(active_steps) + ", layers " + compress(decoder_layers);
}

InjectionSchedule default_fai_schedule(int num_steps, const BackboneDescriptor& desc) {
    const int last = std::max(1, static_cast<int>(std::lround(num_steps * 0.5)));
    return InjectionSchedule::ranges(1, last, 1, desc.num_decoder_layers(), 4);
}

InjectionSchedule default_attention_schedule(int num_steps) {
    const int skip = static_cast<int>(std::lround(num_steps * 0.1));
    return InjectionSchedule::ranges(skip + 1, num_steps, 3, 8);
}

double BlendWeights::gamma(int timestep) const {
    return std::clamp(static_cast<double>(timestep) / gamma_horizon, 0.0, 1.0);
}

namespace {

void check_unit(double x, const char* name) {
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
}

Tensor two_step_blend(const Tensor& first, const Tensor& last, const Tensor& current, double alpha,
                      double gamma, const char* what) {
    require_same_shape(first, last, what);
    require_same_shape(first, current, what);
    check_unit(alpha, "alpha");
    check_unit(gamma, "gamma");
    const float a0 = static_cast<float>(1.0 - alpha);
    const float a1 = static_cast<float>(alpha);
    const float g0 = static_cast<float>(1.0 - gamma);
    const float g1 = static_cast<float>(gamma);
    Tensor out(current.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = g0 * (a0 * first[i] + a1 * last[i]) + g1 * current[i];
    }
    return out;
}

}  // namespace

Tensor blend_value(const Tensor& first, const Tensor& last, const Tensor& current, double alpha, double gamma) {
    return two_step_blend(first, last, current, alpha, gamma, "blend_value");
}

Tensor blend_key(const Tensor& first, const Tensor& last, const Tensor& current, double alpha, double gamma) {
    return two_step_blend(first, last, current, alpha, gamma, "blend_key");
}

Tensor decremental_blend(const Tensor& source, const Tensor& current, double beta) {
    require_same_shape(source, current, "decremental_blend");
    check_unit(beta, "beta");
    return axpby(1.0 - beta, source, beta, current);
}

std::vector<int> active_timesteps(const InjectionSchedule& schedule, const TimestepGrid& grid) {
    std::vector<int> out;
    for (int step : schedule.active_steps) out.push_back(grid.timestep_of_step(step));
    return out;
}

namespace {

std::vector<int> attention_layers_in(const std::set<int>& layers, const BackboneDescriptor& desc) {
    std::vector<int> out;
    for (int l : layers) {
        if (desc.is_valid(HookSite::attention(l, Slot::k))) out.push_back(l);
    }
    return out;
}

void require_origin(const ActivationTrace& trace, TraceOrigin origin, const char* what) {
    if (trace.origin() != origin) {
        throw ConfigError(std::string(what) + ": trace '" + trace.source_id() + "' has origin " +
                          std::string(to_string(trace.origin())) + ", expected " + std::string(to_string(origin)));
    }
}

void require_entries(const ActivationTrace& trace, const std::vector<int>& timesteps,
                     const std::vector<HookSite>& sites) {
    for (int t : timesteps) {
        for (const auto& s : sites) trace.at(t, s);  // throws ConfigError when missing
    }
}

void require_endpoints(const EndpointTraces& endpoints, double alpha, const char* what) {
    if (alpha > 0.0 && alpha < 1.0 && !endpoints.complete()) {
        throw ConfigError(std::string(what) + ": interior frame (alpha=" + std::to_string(alpha) +
                          ") needs first- and last-frame endpoint traces");
    }
}

TransformFn replace_from(std::shared_ptr<const ActivationTrace> trace, int t) {
    return [trace = std::move(trace), t](const HookSite& site, const Tensor&) { return trace->at(t, site); };
}

}  // namespace

StepHooks fai_hooks(std::shared_ptr<const ActivationTrace> trace, const EndpointTraces& endpoints,
                    const BlendWeights& weights, const InjectionSchedule& schedule,
                    const TimestepGrid& grid, const BackboneDescriptor& desc) {
    if (!trace) throw ConfigError("fai_hooks: missing inversion trace");
    require_origin(*trace, TraceOrigin::inversion, "fai_hooks");
    require_endpoints(endpoints, weights.alpha, "fai_hooks");
    schedule.validate(grid.num_steps(), desc);

    const auto layers = desc.attention_layers();
    const auto timesteps = active_timesteps(schedule, grid);
    std::vector<HookSite> source_sites{HookSite::feature(schedule.feature_layer)};
    std::vector<HookSite> value_sites;
    for (int l : layers) {
        source_sites.push_back(HookSite::attention(l, Slot::q));
        source_sites.push_back(HookSite::attention(l, Slot::k));
        value_sites.push_back(HookSite::attention(l, Slot::v));
    }
    require_entries(*trace, timesteps, source_sites);
    const bool blend = endpoints.complete();
    if (blend) {
        require_origin(*endpoints.first, TraceOrigin::endpoint_first, "fai_hooks");
        require_origin(*endpoints.last, TraceOrigin::endpoint_last, "fai_hooks");
        require_entries(*endpoints.first, timesteps, value_sites);
        require_entries(*endpoints.last, timesteps, value_sites);
    }

    StepHooks hooks;
    for (int t : timesteps) {
        HookSet& set = hooks[t];
        for (const auto& site : source_sites) set.transform(site, replace_from(trace, t));
        if (!blend) continue;
        const double alpha = weights.alpha;
        const double gamma = weights.gamma(t);
        for (const auto& site : value_sites) {
            set.transform(site, [first = endpoints.first, last = endpoints.last, t, alpha, gamma](
                                    const HookSite& s, const Tensor& current) {
                return blend_value(first->at(t, s), last->at(t, s), current, alpha, gamma);
            });
        }
    }
    return hooks;
}

StepHooks kvai_hooks(std::shared_ptr<const ActivationTrace> trace, const EndpointTraces& endpoints,
                     const BlendWeights& weights, const InjectionSchedule& schedule,
                     const TimestepGrid& grid, const BackboneDescriptor& desc) {
    if (!trace) throw ConfigError("kvai_hooks: missing inversion trace");
    require_origin(*trace, TraceOrigin::inversion, "kvai_hooks");
    require_endpoints(endpoints, weights.alpha, "kvai_hooks");
    schedule.validate(grid.num_steps(), desc);

    const auto layers = attention_layers_in(schedule.decoder_layers, desc);
    const auto timesteps = active_timesteps(schedule, grid);
    std::vector<HookSite> key_sites, value_sites;
    for (int l : layers) {
        key_sites.push_back(HookSite::attention(l, Slot::k));
        value_sites.push_back(HookSite::attention(l, Slot::v));
    }
    require_entries(*trace, timesteps, key_sites);
    require_entries(*trace, timesteps, value_sites);
    const bool blend = endpoints.complete();
    if (blend) {
        require_origin(*endpoints.first, TraceOrigin::endpoint_first, "kvai_hooks");
        require_origin(*endpoints.last, TraceOrigin::endpoint_last, "kvai_hooks");
        require_entries(*endpoints.first, timesteps, key_sites);
        require_entries(*endpoints.last, timesteps, key_sites);
    }

    StepHooks hooks;
    for (int t : timesteps) {
        HookSet& set = hooks[t];
        for (const auto& site : value_sites) set.transform(site, replace_from(trace, t));
        for (const auto& site : key_sites) {
            if (!blend) {
                set.transform(site, replace_from(trace, t));
                continue;
            }
            // The frame's key after source replacement is the trace key.
            set.transform(site, [trace, first = endpoints.first, last = endpoints.last, t,
                                 alpha = weights.alpha, gamma = weights.gamma(t)](const HookSite& s, const Tensor&) {
                return blend_key(first->at(t, s), last->at(t, s), trace->at(t, s), alpha, gamma);
            });
        }
    }
    return hooks;
}

StepHooks dai_hooks(std::shared_ptr<const ActivationTrace> trace, const BlendWeights& weights,
                    const InjectionSchedule& schedule, const TimestepGrid& grid,
                    const BackboneDescriptor& desc) {
    if (!trace) throw ConfigError("dai_hooks: missing inversion trace");
    require_origin(*trace, TraceOrigin::inversion, "dai_hooks");
    if (!(weights.w > 0.0 && weights.w < 1.0)) throw ConfigError("DAI weight w must lie in (0, 1)");
    check_unit(weights.alpha, "alpha");
    schedule.validate(grid.num_steps(), desc);

    const auto layers = attention_layers_in(schedule.decoder_layers, desc);
    const auto timesteps = active_timesteps(schedule, grid);
    std::vector<HookSite> sites;
    for (int l : layers) {
        sites.push_back(HookSite::attention(l, Slot::k));
        sites.push_back(HookSite::attention(l, Slot::v));
    }
    require_entries(*trace, timesteps, sites);

    StepHooks hooks;
    const double beta = weights.beta();
    for (int t : timesteps) {
        HookSet& set = hooks[t];
        for (const auto& site : sites) {
            set.transform(site, [trace, t, beta](const HookSite& s, const Tensor& current) {
                return decremental_blend(trace->at(t, s), current, beta);
            });
        }
    }
    return hooks;
}

CrossFrameSchedule cross_frame_schedule(const InjectionSchedule& schedule, const TimestepGrid& grid,
                                        const BackboneDescriptor& desc) {
    const auto layers = attention_layers_in(schedule.decoder_layers, desc);
    CrossFrameSchedule out;
    if (layers.empty()) return out;
    for (int t : active_timesteps(schedule, grid)) out[t] = {layers.begin(), layers.end()};
    return out;
}

std::vector<HookSite> inversion_sites(InjectionStrategy strategy, const InjectionSchedule& schedule,
                                      const BackboneDescriptor& desc) {
    std::vector<HookSite> out;
    switch (strategy) {
        case InjectionStrategy::none:
            break;
        case InjectionStrategy::fai:
            out.push_back(HookSite::feature(schedule.feature_layer));
            for (int l : desc.attention_layers()) {
                out.push_back(HookSite::attention(l, Slot::q));
                out.push_back(HookSite::attention(l, Slot::k));
            }
            break;
        case InjectionStrategy::kvai:
        case InjectionStrategy::dai:
            for (int l : attention_layers_in(schedule.decoder_layers, desc)) {
                out.push_back(HookSite::attention(l, Slot::k));
                out.push_back(HookSite::attention(l, Slot::v));
            }
            break;
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<HookSite> endpoint_sites(InjectionStrategy strategy, const InjectionSchedule& schedule,
                                     const BackboneDescriptor& desc) {
    std::vector<HookSite> out;
    if (strategy == InjectionStrategy::fai) {
        for (int l : desc.attention_layers()) out.push_back(HookSite::attention(l, Slot::v));
    } else if (strategy == InjectionStrategy::kvai) {
        for (int l : attention_layers_in(schedule.decoder_layers, desc)) out.push_back(HookSite::attention(l, Slot::k));
    }
    return out;
}

}  // namespace laser
