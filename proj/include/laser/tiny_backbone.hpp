#pragma once

#include <cstdint>
#include <vector>

#include "laser/backbone.hpp"

namespace laser {

// Small convolution + attention denoiser with frozen seeded weights and the same
// hook topology as a real latent-diffusion U-Net decoder (8 decoder layers, each a
// residual block followed by self- and cross-attention). The codec is an
// orthogonal 4x4 pixel-unshuffle, so encode/decode round-trips to float rounding.
class TinyBackbone final : public Backbone {
public:
    static constexpr int kWidth = 32;
    static constexpr int kHeads = 2;
    static constexpr int kEmbedDim = 32;
    static constexpr int kNumTokens = 16;
    static constexpr int kVocab = 2048;
    static constexpr std::uint64_t kDefaultSeed = 0x1a5e2024;
    // Declared round-trip tolerance of the codec (max abs pixel error).
    static constexpr double kCodecTolerance = 1e-5;

    static constexpr double kDataVariance = 1.0;
    static constexpr double kContentGain = 0.05;

    explicit TinyBackbone(std::uint64_t seed = kDefaultSeed, double content_gain = kContentGain);

    const BackboneDescriptor& descriptor() const override { return desc_; }
    TextEmbedding encode_prompt(std::string_view prompt) const override;
    TextEmbedding null_embedding() const override;
    Latent encode_image(const Image& image) const override;
    Image decode_latent(const Latent& latent) const override;
    using Backbone::predict_noise;
    std::vector<Latent> predict_noise(std::span<const DenoiseInput> batch, int timestep,
                                      const std::set<int>& cross_frame_layers) const override;

    // Word-level tokenizer: lowercase alphanumeric runs hashed into the vocabulary.
    static std::vector<std::string> split_words(std::string_view prompt);

private:
    struct Linear {
        int in = 0, out = 0;
        std::vector<float> w;  // [in x out] row-major
        Tensor apply(const Tensor& x) const;
    };
    struct ResBlock {
        Linear in_proj, out_proj, time_proj;
        std::vector<float> dw_kernel;  // [width x 9]
    };
    struct AttentionBlock {
        Linear q, k, v, o;
    };
    struct DecoderLayer {
        Linear skip;
        ResBlock res;
        AttentionBlock self_attn;
        AttentionBlock cross_attn;
    };

    TextEmbedding encode_tokens(const std::vector<int>& ids, std::string prompt, bool truncated) const;
    Tensor res_block(const ResBlock& block, const Tensor& x, const std::vector<float>& temb, int side) const;
    Tensor cross_attention(const AttentionBlock& block, const Tensor& x, const Tensor& context) const;
    std::vector<float> time_embedding(int timestep) const;
    void validate(std::span<const DenoiseInput> batch, int timestep) const;

    BackboneDescriptor desc_;
    double content_gain_;
    std::vector<float> codec_;      // [48 x 48] orthogonal
    std::vector<float> token_table_;  // [vocab x embed]
    std::vector<float> positions_;    // [tokens x embed]
    AttentionBlock text_mixer_;
    Linear time1_, time2_, stem_, head_;
    ResBlock enc8_, enc4_, mid_;
    AttentionBlock mid_attn_;
    std::vector<DecoderLayer> decoder_;
};

}  // namespace laser
