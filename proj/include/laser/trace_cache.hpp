#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "laser/ddim.hpp"

namespace laser {

// Identifies a reusable inversion: same backbone, source image, prompt, grid and sites.
struct TraceCacheKey {
    std::string backbone;
    std::string image_hash;
    std::string prompt_hash;
    int num_steps = 0;
    std::vector<HookSite> sites;

    std::string digest() const;
};

// One archive per key under `dir`: a length-prefixed JSON manifest followed by
// raw little-endian float32 arrays.
class TraceCache {
public:
    explicit TraceCache(std::filesystem::path dir);

    std::optional<InversionResult> load(const TraceCacheKey& key) const;
    void store(const TraceCacheKey& key, const InversionResult& result) const;
    std::filesystem::path path_for(const TraceCacheKey& key) const;

private:
    std::filesystem::path dir_;
};

// Inversion with optional cache lookup; `cache` may be null.
InversionResult cached_invert(const Backbone& backbone, const TraceCache* cache, const Latent& image_latent,
                              const TextEmbedding& embedding, const TimestepGrid& grid,
                              std::span<const HookSite> sites, const std::string& image_hash,
                              std::string source_id);

}  // namespace laser
