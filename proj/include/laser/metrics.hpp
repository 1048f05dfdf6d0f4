#pragma once

#include <span>
#include <string>
#include <vector>

#include "laser/image.hpp"

namespace laser {

// Frozen, seeded convolutional feature stack used for perceptual distance and
// image embeddings. Distances follow the LPIPS construction: channel-normalized
// activations, squared differences, spatial mean, averaged over layers and
// scaled so d lies in [0, 1].
class PerceptualNet {
public:
    static constexpr std::uint64_t kDefaultSeed = 0x1195c0de;
    static constexpr int kEmbedDim = 64;

    struct Features {
        int width = 0;
        int height = 0;
        // Per layer: [h x w x c] unit-normalized activations, and per-channel spatial means.
        std::vector<std::vector<float>> normalized;
        std::vector<std::vector<int>> dims;  // {h, w, c}
        std::vector<double> pooled;
    };

    explicit PerceptualNet(std::uint64_t seed = kDefaultSeed);

    Features features(const Image& image) const;
    double distance(const Features& a, const Features& b) const;
    double distance(const Image& a, const Image& b) const;

    // Projection of pooled activations, unnormalized.
    std::vector<double> image_embedding(const Features& f) const;
    // Mean of seeded per-word vectors in the same space.
    std::vector<double> text_embedding(const std::string& text) const;

private:
    struct Conv {
        int in = 0;
        int out = 0;
        std::vector<float> weight;  // [out][in][3][3]
        std::vector<float> bias;
    };

    std::uint64_t seed_;
    std::vector<Conv> layers_;
    std::vector<double> projection_;  // [kEmbedDim x pooled_dim]
    int pooled_dim_ = 0;
};

// Cosine similarity, 0 when either vector is zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Position of a frame on the animation: stage index and α within it.
struct FramePosition {
    int stage = 0;
    double alpha = 0.0;
};

struct MetricsReport {
    double pic = 0.0;
    double clip_text = 0.0;
    double clip_frame = 0.0;
    double lpips_total = 0.0;
    double lpips_max_endpoint = 0.0;
    double ppl = 0.0;
    double runtime_seconds = 0.0;
    int n_frames = 0;
};

double compute_pic(const PerceptualNet& net, std::span<const Image> frames, const Image& input);
double compute_lpips_total(const PerceptualNet& net, std::span<const Image> frames);
// 0 when there are no interior frames.
double compute_lpips_max_endpoint(const PerceptualNet& net, std::span<const Image> frames);
// LPIPS_T / Δα with Δα = 1 / (N - 1).
double compute_ppl(const PerceptualNet& net, std::span<const Image> frames);
double ppl_from_lpips_total(double lpips_total, std::size_t n_frames);

struct ClipScores {
    double text = 0.0;
    double frame = 0.0;  // 1 for a single frame
};

// `stage_prompts` holds P_0..P_{n_t}; each frame's text is the α-interpolation
// of its stage's two prompt embeddings.
ClipScores compute_clip_scores(const PerceptualNet& net, std::span<const Image> frames,
                               std::span<const std::string> stage_prompts,
                               std::span<const FramePosition> positions);

// Full report; `stage_prompts`/`positions` may be empty, leaving clip_text at 0.
MetricsReport evaluate_frames(const PerceptualNet& net, std::span<const Image> frames, const Image& input,
                              std::span<const std::string> stage_prompts,
                              std::span<const FramePosition> positions, double runtime_seconds);

}  // namespace laser
