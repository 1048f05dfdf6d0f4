#include "laser/trace_cache.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include "json.hpp"

#include "laser/errors.hpp"
#include "laser/hash.hpp"

namespace laser {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'L', 'S', 'R', 'T', 'R', 'C', '0', '1'};

static_assert(std::endian::native == std::endian::little, "trace cache assumes little-endian floats");

TraceOrigin parse_origin(const std::string& s) {
    for (auto o : {TraceOrigin::inversion, TraceOrigin::endpoint_first, TraceOrigin::endpoint_last}) {
        if (to_string(o) == s) return o;
    }
    throw IoError("trace cache: unknown origin '" + s + "'");
}

void write_floats(std::ofstream& out, const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}

Tensor read_tensor(std::ifstream& in, std::vector<int> shape) {
    Tensor t(std::move(shape));
    in.read(reinterpret_cast<char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw IoError("trace cache: truncated array data");
    return t;
}

}  // namespace

std::string TraceCacheKey::digest() const {
    std::string text = backbone + "\n" + image_hash + "\n" + prompt_hash + "\n" + std::to_string(num_steps) + "\n";
    for (const auto& s : sites) text += s.label() + ";";
    return sha256_hex(text);
}

TraceCache::TraceCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path TraceCache::path_for(const TraceCacheKey& key) const {
    return dir_ / (key.digest().substr(0, 32) + ".trace");
}

void TraceCache::store(const TraceCacheKey& key, const InversionResult& result) const {
    std::filesystem::create_directories(dir_);
    const auto& trace = *result.trace;
    json manifest;
    manifest["key"] = key.digest();
    manifest["backbone"] = key.backbone;
    manifest["image_hash"] = key.image_hash;
    manifest["prompt_hash"] = key.prompt_hash;
    manifest["num_steps"] = key.num_steps;
    manifest["origin"] = std::string(to_string(trace.origin()));
    manifest["source_id"] = trace.source_id();
    manifest["timesteps"] = trace.timesteps();
    json sites = json::array();
    for (const auto& s : trace.sites()) sites.push_back(s.label());
    manifest["sites"] = sites;
    manifest["z_T"] = result.z_T.values.shape();
    json entries = json::array();
    for (const auto& [k, v] : trace.entries()) {
        entries.push_back({{"t", k.first}, {"site", k.second.label()}, {"shape", v.shape()}});
    }
    manifest["entries"] = entries;

    const std::string header = manifest.dump();
    const auto final_path = path_for(key);
    const auto tmp_path = final_path.string() + ".tmp";
    {
        std::ofstream out(tmp_path, std::ios::binary);
        if (!out) throw IoError("trace cache: cannot write " + tmp_path);
        out.write(kMagic, sizeof kMagic);
        const std::uint64_t len = header.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        write_floats(out, result.z_T.values);
        for (const auto& [k, v] : trace.entries()) write_floats(out, v);
        if (!out) throw IoError("trace cache: write failed for " + tmp_path);
    }
    std::filesystem::rename(tmp_path, final_path);
}

std::optional<InversionResult> TraceCache::load(const TraceCacheKey& key) const {
    const auto path = path_for(key);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError("trace cache: bad magic in " + path.string());
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError("trace cache: truncated manifest in " + path.string());

    json manifest;
    try {
        manifest = json::parse(header);
    } catch (const json::exception& e) {
        throw IoError("trace cache: " + std::string(e.what()));
    }
    if (manifest.at("key").get<std::string>() != key.digest()) return std::nullopt;

    std::vector<HookSite> sites;
    for (const auto& s : manifest.at("sites")) sites.push_back(parse_hook_site(s.get<std::string>()));
    InversionResult result;
    result.z_T.values = read_tensor(in, manifest.at("z_T").get<std::vector<int>>());
    result.z_T.timestep_tag = manifest.at("timesteps").back().get<int>();
    std::map<ActivationTrace::Key, Tensor> entries;
    for (const auto& e : manifest.at("entries")) {
        HookSite site = parse_hook_site(e.at("site").get<std::string>());
        entries.emplace(ActivationTrace::Key{e.at("t").get<int>(), site},
                        read_tensor(in, e.at("shape").get<std::vector<int>>()));
    }
    result.trace = ActivationTrace::seal(parse_origin(manifest.at("origin")), manifest.at("source_id"),
                                         manifest.at("timesteps").get<std::vector<int>>(), std::move(sites),
                                         std::move(entries));
    return result;
}

InversionResult cached_invert(const Backbone& backbone, const TraceCache* cache, const Latent& image_latent,
                              const TextEmbedding& embedding, const TimestepGrid& grid,
                              std::span<const HookSite> sites, const std::string& image_hash,
                              std::string source_id) {
    TraceCacheKey key{backbone.descriptor().name, image_hash, sha256_hex(embedding.values.data()), grid.num_steps(),
                      {sites.begin(), sites.end()}};
    if (cache) {
        if (auto hit = cache->load(key); hit && hit->trace->source_id() == source_id) return std::move(*hit);
    }
    auto result = ddim_invert(backbone, image_latent, embedding, grid, sites, std::move(source_id));
    if (cache) cache->store(key, result);
    return result;
}

}  // namespace laser
