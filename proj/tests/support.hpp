#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <memory>
#include <mutex>

#include "laser/backbone.hpp"
#include "laser/rng.hpp"
#include "laser/tiny_backbone.hpp"

namespace testing_support {

inline std::shared_ptr<const laser::TinyBackbone> tiny() {
    static const auto backbone = std::make_shared<const laser::TinyBackbone>();
    return backbone;
}

// Smooth random image: a few seeded sinusoids per channel, values in [0, 1].
inline laser::Image random_image(int size, std::uint64_t seed) {
    laser::NormalSampler rng(seed);
    laser::Image img(size, size);
    for (int c = 0; c < 3; ++c) {
        const double fx = 1 + 3 * rng.uniform(), fy = 1 + 3 * rng.uniform(), ph = 6.28 * rng.uniform();
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double v = 0.5 + 0.4 * std::sin(fx * x / size * 6.28 + fy * y / size * 6.28 + ph);
                img.at(x, y, c) = static_cast<float>(v + 0.05 * rng.normal());
            }
        }
    }
    for (auto& p : img.pixels) p = std::fmin(1.0f, std::fmax(0.0f, p));
    return img;
}

inline laser::Latent random_latent(const laser::BackboneDescriptor& desc, std::uint64_t seed) {
    laser::NormalSampler rng(seed);
    const auto shape = desc.latent_shape();
    return {laser::Tensor(shape, rng.normals(static_cast<std::size_t>(shape[0]) * shape[1] * shape[2])), std::nullopt};
}

// Fresh empty directory under the system temp dir, unique per process.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("laser-test-" + std::to_string(::getpid())) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::filesystem::path source_path(const std::string& relative) {
    return std::filesystem::path(LASER_SOURCE_DIR) / relative;
}

// Delegates to another backbone and records the latent each batch element
// receives at its first call for a given timestep.
class RecordingBackbone : public laser::Backbone {
public:
    explicit RecordingBackbone(std::shared_ptr<const laser::Backbone> inner) : inner_(std::move(inner)) {}

    const laser::BackboneDescriptor& descriptor() const override { return inner_->descriptor(); }
    laser::TextEmbedding encode_prompt(std::string_view p) const override { return inner_->encode_prompt(p); }
    laser::TextEmbedding null_embedding() const override { return inner_->null_embedding(); }
    laser::Latent encode_image(const laser::Image& i) const override { return inner_->encode_image(i); }
    laser::Image decode_latent(const laser::Latent& l) const override { return inner_->decode_latent(l); }
    using laser::Backbone::predict_noise;
    std::vector<laser::Latent> predict_noise(std::span<const laser::DenoiseInput> batch, int timestep,
                                             const std::set<int>& cross) const override {
        {
            std::lock_guard lock(mutex_);
            calls.push_back({timestep, {}});
            for (const auto& in : batch) calls.back().second.push_back(in.latent->values);
        }
        return inner_->predict_noise(batch, timestep, cross);
    }

    mutable std::vector<std::pair<int, std::vector<laser::Tensor>>> calls;

private:
    std::shared_ptr<const laser::Backbone> inner_;
    mutable std::mutex mutex_;
};

}  // namespace testing_support
