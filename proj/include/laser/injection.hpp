#pragma once

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "laser/attention.hpp"
#include "laser/ddim.hpp"

namespace laser {

enum class InjectionStrategy { none, fai, kvai, dai };

std::string_view to_string(InjectionStrategy strategy);
// Case-insensitive; accepts FAI, KVAI, DAI and None.
std::optional<InjectionStrategy> parse_strategy(std::string_view label);

// Where and when a strategy's hooks fire. Steps are 1-based sampling ordinals.
struct InjectionSchedule {
    std::set<int> active_steps;
    std::set<int> decoder_layers;
    int feature_layer = 4;  // residual-feature injection layer (FAI)

    static InjectionSchedule ranges(int first_step, int last_step, int first_layer, int last_layer,
                                    int feature_layer = 4);

    // Throws ConfigError when steps fall outside [1, num_steps] or layers are undeclared.
    void validate(int num_steps, const BackboneDescriptor& desc) const;
    // "steps 6-50, layers 3-8" (ranges compressed)
    std::string describe() const;
};

// FAI: the first half of sampling, every decoder layer, residual feature at layer 4.
InjectionSchedule default_fai_schedule(int num_steps, const BackboneDescriptor& desc);
// KVAI/DAI: after the first tenth of sampling (5 of 50), decoder layers 3 to 8.
InjectionSchedule default_attention_schedule(int num_steps);

struct BlendWeights {
    double alpha = 0.0;           // frame position on the stage
    double w = 0.8;               // DAI source-retention scale, in (0, 1)
    int gamma_horizon = 1000;     // T in gamma(t) = t / T

    double gamma(int timestep) const;
    double beta() const { return w * alpha; }
};

// (1 - gamma) * [(1 - alpha) * first + alpha * last] + gamma * current
Tensor blend_value(const Tensor& first, const Tensor& last, const Tensor& current, double alpha, double gamma);
// Same algebra on the key slot.
Tensor blend_key(const Tensor& first, const Tensor& last, const Tensor& current, double alpha, double gamma);
// (1 - beta) * source + beta * current
Tensor decremental_blend(const Tensor& source, const Tensor& current, double beta);

// Per-stage endpoint captures (v for FAI, k for KVAI).
struct EndpointTraces {
    std::shared_ptr<const ActivationTrace> first;
    std::shared_ptr<const ActivationTrace> last;

    bool complete() const { return first && last; }
};

StepHooks fai_hooks(std::shared_ptr<const ActivationTrace> trace, const EndpointTraces& endpoints,
                    const BlendWeights& weights, const InjectionSchedule& schedule,
                    const TimestepGrid& grid, const BackboneDescriptor& desc);

StepHooks kvai_hooks(std::shared_ptr<const ActivationTrace> trace, const EndpointTraces& endpoints,
                     const BlendWeights& weights, const InjectionSchedule& schedule,
                     const TimestepGrid& grid, const BackboneDescriptor& desc);

StepHooks dai_hooks(std::shared_ptr<const ActivationTrace> trace, const BlendWeights& weights,
                    const InjectionSchedule& schedule, const TimestepGrid& grid,
                    const BackboneDescriptor& desc);

// Layers of `schedule` that carry self-attention, at every active step.
CrossFrameSchedule cross_frame_schedule(const InjectionSchedule& schedule, const TimestepGrid& grid,
                                        const BackboneDescriptor& desc);

// Sites the inversion pass must capture for a strategy.
std::vector<HookSite> inversion_sites(InjectionStrategy strategy, const InjectionSchedule& schedule,
                                      const BackboneDescriptor& desc);
// Sites captured from the stage's first and last frames.
std::vector<HookSite> endpoint_sites(InjectionStrategy strategy, const InjectionSchedule& schedule,
                                     const BackboneDescriptor& desc);

// Timesteps of the schedule's active steps, in sampling order.
std::vector<int> active_timesteps(const InjectionSchedule& schedule, const TimestepGrid& grid);

}  // namespace laser
