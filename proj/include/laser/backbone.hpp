#pragma once

#include <compare>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "laser/image.hpp"
#include "laser/tensor.hpp"

namespace laser {

struct TextEmbedding {
    Tensor values;  // [num_tokens x embed_dim]
    std::string source_prompt;
    bool truncated = false;  // prompt exceeded tokenizer capacity
};

struct Latent {
    Tensor values;  // [channels x h x w]
    std::optional<int> timestep_tag;
};

enum class SiteKind { residual_feature, self_attention };
enum class Slot { f, q, k, v };

// Addresses one hookable value in the denoiser's decoder. Layers are 1-based and
// ordered from the deepest (lowest resolution) decoder block outward. The kind
// is implied by the slot: `f` is the residual block output, q/k/v are the
// self-attention projections computed from it.
struct HookSite {
    int decoder_layer = 1;
    Slot slot = Slot::f;

    static HookSite feature(int layer) { return {layer, Slot::f}; }
    static HookSite attention(int layer, Slot s) { return {layer, s}; }

    SiteKind kind() const { return slot == Slot::f ? SiteKind::residual_feature : SiteKind::self_attention; }
    std::string label() const;  // "3/k"

    friend auto operator<=>(const HookSite&, const HookSite&) = default;
};

std::string_view to_string(Slot slot);
HookSite parse_hook_site(std::string_view label);

struct DecoderLayerInfo {
    int index = 0;
    int resolution = 0;  // spatial side length of the layer's feature map
    int channels = 0;
    bool has_attention = true;
};

struct BackboneDescriptor {
    std::string name;
    std::vector<DecoderLayerInfo> decoder_layers;
    int image_size = 0;
    int downsample_factor = 8;
    int latent_channels = 4;
    int latent_size = 0;  // latent h == w
    int embed_dim = 0;
    int num_tokens = 0;
    int num_train_timesteps = 1000;
    std::vector<double> alphas_cumprod;
    double final_alpha_cumprod = 1.0;

    int num_decoder_layers() const { return static_cast<int>(decoder_layers.size()); }
    std::vector<int> latent_shape() const { return {latent_channels, latent_size, latent_size}; }
    std::vector<int> embedding_shape() const { return {num_tokens, embed_dim}; }
    std::vector<int> attention_layers() const;

    // alpha_bar for a scheduler timestep; negative timesteps mean the clean endpoint.
    double alpha_bar(int timestep) const;

    bool is_valid(const HookSite& site) const;
    // Every hookable site in visit order.
    std::vector<HookSite> hook_sites() const;
};

// Scaled-linear beta schedule used by Stable Diffusion 1.x.
std::vector<double> scaled_linear_alphas_cumprod(int num_train_timesteps, double beta_start,
                                                 double beta_end);

BackboneDescriptor sd15_descriptor();
BackboneDescriptor tiny_test_descriptor();

// A capture sink receives a copy of the site's native value. A transform maps the
// native value to the value the network consumes and must preserve its shape.
// When both are present the capture sees the native value first.
using CaptureFn = std::function<void(const HookSite&, const Tensor&)>;
using TransformFn = std::function<Tensor(const HookSite&, const Tensor&)>;

struct SiteHook {
    CaptureFn capture;
    TransformFn transform;
};

class HookSet {
public:
    HookSet& capture(const HookSite& site, CaptureFn fn);
    HookSet& transform(const HookSite& site, TransformFn fn);
    // Merge; a site may hold at most one capture and one transform.
    HookSet& merge(const HookSet& other);

    const SiteHook* find(const HookSite& site) const;
    bool empty() const { return hooks_.empty(); }
    std::size_t size() const { return hooks_.size(); }
    const std::map<HookSite, SiteHook>& entries() const { return hooks_; }

private:
    std::map<HookSite, SiteHook> hooks_;
};

// One batch element for the denoiser.
struct DenoiseInput {
    const Latent* latent = nullptr;
    const TextEmbedding* embedding = nullptr;
    const HookSet* hooks = nullptr;  // may be null
};

class Backbone {
public:
    virtual ~Backbone() = default;

    virtual const BackboneDescriptor& descriptor() const = 0;

    // Precondition: prompt non-empty after trimming. Over-long prompts are
    // truncated and flagged on the result.
    virtual TextEmbedding encode_prompt(std::string_view prompt) const = 0;
    // Embedding of the empty prompt, the classic unconditional branch.
    virtual TextEmbedding null_embedding() const = 0;

    virtual Latent encode_image(const Image& image) const = 0;
    virtual Image decode_latent(const Latent& latent) const = 0;

    // Noise prediction for a batch at one timestep. Sites are visited in
    // decoder-layer order, slots f, q, k, v within a layer, batch elements in
    // order within a slot. Self-attention at layers in `cross_frame_layers`
    // attends over the keys/values of every batch element.
    virtual std::vector<Latent> predict_noise(std::span<const DenoiseInput> batch, int timestep,
                                              const std::set<int>& cross_frame_layers) const = 0;

    Latent predict_noise(const Latent& latent, int timestep, const TextEmbedding& embedding,
                         const HookSet* hooks = nullptr) const;
};

// "tiny-test" or "sd15-like". Weights for sd15-like come from `weights_path`
// or the LASER_SD15_WEIGHTS environment variable.
std::shared_ptr<const Backbone> make_backbone(std::string_view name,
                                              const std::string& weights_path = {});

std::optional<BackboneDescriptor> find_descriptor(std::string_view name);

// Applies a site hook to a native value: capture then transform, with the
// transform's output shape checked against the input.
Tensor apply_site_hook(const HookSet* hooks, const HookSite& site, Tensor native);

}  // namespace laser
