#include "laser/backbone.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "laser/errors.hpp"
#include "laser/tiny_backbone.hpp"

namespace laser {

std::string_view to_string(Slot slot) {
    switch (slot) {
        case Slot::f: return "f";
        case Slot::q: return "q";
        case Slot::k: return "k";
        case Slot::v: return "v";
    }
    return "?";
}

std::string HookSite::label() const {
    return std::to_string(decoder_layer) + "/" + std::string(to_string(slot));
}

HookSite parse_hook_site(std::string_view label) {
    const auto slash = label.find('/');
    if (slash == std::string_view::npos || slash + 2 != label.size()) {
        throw ConfigError("bad hook site label '" + std::string(label) + "'");
    }
    int layer = 0;
    try {
        layer = std::stoi(std::string(label.substr(0, slash)));
    } catch (const std::exception&) {
        throw ConfigError("bad hook site layer in '" + std::string(label) + "'");
    }
    switch (label[slash + 1]) {
        case 'f': return HookSite::feature(layer);
        case 'q': return HookSite::attention(layer, Slot::q);
        case 'k': return HookSite::attention(layer, Slot::k);
        case 'v': return HookSite::attention(layer, Slot::v);
        default: throw ConfigError("bad hook site slot in '" + std::string(label) + "'");
    }
}

std::vector<int> BackboneDescriptor::attention_layers() const {
    std::vector<int> out;
    for (const auto& l : decoder_layers) {
        if (l.has_attention) out.push_back(l.index);
    }
    return out;
}

double BackboneDescriptor::alpha_bar(int timestep) const {
    if (timestep < 0) return final_alpha_cumprod;
    if (timestep >= static_cast<int>(alphas_cumprod.size())) {
        throw ConfigError("timestep " + std::to_string(timestep) + " outside scheduler range [0, " +
                          std::to_string(alphas_cumprod.size()) + ")");
    }
    return alphas_cumprod[static_cast<std::size_t>(timestep)];
}

bool BackboneDescriptor::is_valid(const HookSite& site) const {
    if (site.decoder_layer < 1 || site.decoder_layer > num_decoder_layers()) return false;
    if (site.slot == Slot::f) return true;
    return decoder_layers[static_cast<std::size_t>(site.decoder_layer - 1)].has_attention;
}

std::vector<HookSite> BackboneDescriptor::hook_sites() const {
    std::vector<HookSite> out;
    for (const auto& l : decoder_layers) {
        out.push_back(HookSite::feature(l.index));
        if (l.has_attention) {
            for (Slot s : {Slot::q, Slot::k, Slot::v}) out.push_back(HookSite::attention(l.index, s));
        }
    }
    return out;
}

std::vector<double> scaled_linear_alphas_cumprod(int num_train_timesteps, double beta_start,
                                                 double beta_end) {
    std::vector<double> out(static_cast<std::size_t>(num_train_timesteps));
    const double a = std::sqrt(beta_start);
    const double b = std::sqrt(beta_end);
    double prod = 1.0;
    for (int i = 0; i < num_train_timesteps; ++i) {
        const double s = a + (b - a) * i / (num_train_timesteps - 1);
        prod *= 1.0 - s * s;
        out[static_cast<std::size_t>(i)] = prod;
    }
    return out;
}

BackboneDescriptor sd15_descriptor() {
    BackboneDescriptor d;
    d.name = "sd15-like";
    // up_blocks 0..3 with three resnet layers each; block 0 has no transformer
    const int res[] = {8, 16, 32, 64};
    const int ch[] = {1280, 1280, 640, 320};
    int index = 1;
    for (int block = 0; block < 4; ++block) {
        for (int r = 0; r < 3; ++r) {
            d.decoder_layers.push_back({index++, res[block], ch[block], block > 0});
        }
    }
    d.image_size = 512;
    d.downsample_factor = 8;
    d.latent_channels = 4;
    d.latent_size = 64;
    d.embed_dim = 768;
    d.num_tokens = 77;
    d.num_train_timesteps = 1000;
    d.alphas_cumprod = scaled_linear_alphas_cumprod(1000, 0.00085, 0.012);
    d.final_alpha_cumprod = d.alphas_cumprod.front();
    return d;
}

BackboneDescriptor tiny_test_descriptor() {
    BackboneDescriptor d;
    d.name = "tiny-test";
    for (int i = 1; i <= 8; ++i) {
        d.decoder_layers.push_back({i, i <= 4 ? 4 : 8, TinyBackbone::kWidth, true});
    }
    d.image_size = 32;
    d.downsample_factor = 4;
    d.latent_channels = 48;
    d.latent_size = 8;
    d.embed_dim = TinyBackbone::kEmbedDim;
    d.num_tokens = TinyBackbone::kNumTokens;
    d.num_train_timesteps = 1000;
    d.alphas_cumprod = scaled_linear_alphas_cumprod(1000, 0.00085, 0.012);
    d.final_alpha_cumprod = d.alphas_cumprod.front();
    return d;
}

std::optional<BackboneDescriptor> find_descriptor(std::string_view name) {
    if (name == "tiny-test") return tiny_test_descriptor();
    if (name == "sd15-like") return sd15_descriptor();
    return std::nullopt;
}

HookSet& HookSet::capture(const HookSite& site, CaptureFn fn) {
    auto& h = hooks_[site];
    if (h.capture) throw ConfigError("duplicate capture hook at " + site.label());
    h.capture = std::move(fn);
    return *this;
}

HookSet& HookSet::transform(const HookSite& site, TransformFn fn) {
    auto& h = hooks_[site];
    if (h.transform) throw ConfigError("duplicate transform hook at " + site.label());
    h.transform = std::move(fn);
    return *this;
}

HookSet& HookSet::merge(const HookSet& other) {
    for (const auto& [site, hook] : other.hooks_) {
        if (hook.capture) capture(site, hook.capture);
        if (hook.transform) transform(site, hook.transform);
    }
    return *this;
}

const SiteHook* HookSet::find(const HookSite& site) const {
    auto it = hooks_.find(site);
    return it == hooks_.end() ? nullptr : &it->second;
}

Tensor apply_site_hook(const HookSet* hooks, const HookSite& site, Tensor native) {
    if (!hooks) return native;
    const SiteHook* h = hooks->find(site);
    if (!h) return native;
    if (h->capture) h->capture(site, native);
    if (!h->transform) return native;
    Tensor out = h->transform(site, native);
    if (!out.same_shape(native)) {
        throw InjectionShapeError(site.label(), "transform returned " + out.shape_str() +
                                                    ", expected " + native.shape_str());
    }
    return out;
}

Latent Backbone::predict_noise(const Latent& latent, int timestep, const TextEmbedding& embedding,
                               const HookSet* hooks) const {
    const DenoiseInput in{&latent, &embedding, hooks};
    auto out = predict_noise(std::span<const DenoiseInput>(&in, 1), timestep, {});
    return std::move(out.front());
}

std::shared_ptr<const Backbone> make_backbone(std::string_view name, const std::string& weights_path) {
    if (name == "tiny-test") return std::make_shared<TinyBackbone>();
    if (name == "sd15-like") {
        std::string path = weights_path;
        if (path.empty()) {
            if (const char* env = std::getenv("LASER_SD15_WEIGHTS")) path = env;
        }
        if (path.empty() || !std::filesystem::exists(path)) {
            throw ConfigError(
                "sd15-like backbone needs weights (--weights or LASER_SD15_WEIGHTS); none found");
        }
        throw ConfigError("sd15-like weights found at " + path +
                          " but this build has no Stable Diffusion runtime; use tiny-test");
    }
    throw ConfigError("unknown backbone '" + std::string(name) + "'");
}

}  // namespace laser
