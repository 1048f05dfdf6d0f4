#include <gtest/gtest.h>

#include "laser/errors.hpp"
#include "laser/metrics.hpp"
#include "support.hpp"

using namespace laser;
using testing_support::random_image;

namespace {

const PerceptualNet& net() {
    static const PerceptualNet n;
    return n;
}

Image noisy(const Image& img, double sigma, std::uint64_t seed) {
    NormalSampler rng(seed);
    Image out = img;
    for (auto& p : out.pixels) p = std::fmin(1.0f, std::fmax(0.0f, p + static_cast<float>(sigma * rng.normal())));
    return out;
}

std::vector<Image> drift(int n, std::uint64_t seed) {
    std::vector<Image> frames;
    const Image a = random_image(32, seed), b = random_image(32, seed + 1);
    for (int k = 0; k < n; ++k) {
        const double t = n == 1 ? 0.0 : static_cast<double>(k) / (n - 1);
        Image f(32, 32);
        for (std::size_t i = 0; i < f.pixels.size(); ++i) {
            f.pixels[i] = static_cast<float>((1 - t) * a.pixels[i] + t * b.pixels[i]);
        }
        frames.push_back(std::move(f));
    }
    return frames;
}

}  // namespace

TEST(Perceptual, IdentityAndSymmetry) {
    const Image a = random_image(32, 1), b = random_image(32, 2);
    EXPECT_EQ(net().distance(a, a), 0.0);
    EXPECT_EQ(net().distance(a, b), net().distance(b, a));
    EXPECT_GT(net().distance(a, b), 0.0);
    EXPECT_LE(net().distance(a, b), 1.0);
}

TEST(Perceptual, GrowsWithNoise) {
    const Image a = random_image(32, 3);
    double prev = 0.0;
    for (double sigma : {0.01, 0.05, 0.2}) {
        const double d = net().distance(a, noisy(a, sigma, 9));
        EXPECT_GT(d, prev) << sigma;
        prev = d;
    }
}

TEST(Perceptual, HandlesLargeInputs) {
    const Image big = random_image(256, 4);
    EXPECT_EQ(net().distance(big, big), 0.0);
    EXPECT_GT(net().distance(big, noisy(big, 0.1, 1)), 0.0);
}

TEST(Cosine, EdgeCases) {
    const std::vector<double> x{1, 0}, y{0, 1}, z{0, 0};
    EXPECT_NEAR(cosine_similarity(x, y), 0.0, 1e-12);
    EXPECT_NEAR(cosine_similarity(x, x), 1.0, 1e-12);
    EXPECT_EQ(cosine_similarity(x, z), 0.0);
}

TEST(Metrics, IdenticalFramesAreDegenerate) {
    const Image a = random_image(32, 5);
    const std::vector<Image> frames(12, a);
    EXPECT_DOUBLE_EQ(compute_pic(net(), frames, a), 1.0);
    EXPECT_EQ(compute_lpips_total(net(), frames), 0.0);
    EXPECT_EQ(compute_lpips_max_endpoint(net(), frames), 0.0);
    EXPECT_EQ(compute_ppl(net(), frames), 0.0);
    const auto clip = compute_clip_scores(net(), frames, {}, {});
    EXPECT_NEAR(clip.frame, 1.0, 1e-12);
}

TEST(Metrics, LpipsTotalIsSumOfAdjacentDistances) {
    const auto frames = drift(6, 10);
    double sum = 0;
    for (std::size_t k = 0; k + 1 < frames.size(); ++k) sum += net().distance(frames[k], frames[k + 1]);
    EXPECT_NEAR(compute_lpips_total(net(), frames), sum, 1e-12);
}

TEST(Metrics, LpipsMaxEndpointTakesNearerEndpoint) {
    const auto frames = drift(5, 20);
    double worst = 0;
    for (std::size_t k = 1; k + 1 < frames.size(); ++k) {
        worst = std::max(worst, std::min(net().distance(frames[k], frames.front()),
                                         net().distance(frames[k], frames.back())));
    }
    EXPECT_NEAR(compute_lpips_max_endpoint(net(), frames), worst, 1e-12);
    EXPECT_EQ(compute_lpips_max_endpoint(net(), drift(2, 20)), 0.0);
}

TEST(Metrics, PicIsMeanSimilarityToInput) {
    const auto frames = drift(4, 30);
    const Image input = random_image(32, 30);
    double sum = 0;
    for (const auto& f : frames) sum += 1.0 - net().distance(f, input);
    EXPECT_NEAR(compute_pic(net(), frames, input), sum / 4.0, 1e-12);
}

TEST(Metrics, PplScalesWithFrameCount) {
    const auto frames = drift(12, 40);
    EXPECT_NEAR(compute_ppl(net(), frames), compute_lpips_total(net(), frames) * 11.0, 1e-12);
    EXPECT_EQ(ppl_from_lpips_total(0.3, 1), 0.0);
}

TEST(Metrics, PublishedTableTriplesSatisfyPplRelation) {
    // (LPIPS_T, PPL) rows reported for 12-frame animations.
    const std::vector<std::pair<double, double>> rows{{0.489, 5.380}, {1.353, 14.879}, {0.974, 10.718}};
    for (const auto& [lt, ppl] : rows) EXPECT_NEAR(ppl_from_lpips_total(lt, 12), ppl, 0.01) << lt;
}

TEST(Metrics, ClipTextFollowsStagePrompts) {
    const auto frames = drift(3, 50);
    const std::vector<std::string> prompts{"The meadow in spring", "The meadow in winter"};
    const std::vector<FramePosition> pos{{0, 0.0}, {0, 0.5}, {0, 1.0}};
    const auto a = compute_clip_scores(net(), frames, prompts, pos);
    const auto b = compute_clip_scores(net(), frames, prompts, pos);
    EXPECT_EQ(a.text, b.text);
    EXPECT_GE(a.text, -1.0);
    EXPECT_LE(a.text, 1.0);
    EXPECT_GT(a.frame, 0.0);
    const std::vector<FramePosition> bad{{1, 0.0}, {1, 0.5}, {1, 1.0}};
    EXPECT_THROW(compute_clip_scores(net(), frames, prompts, bad), ConfigError);
}

TEST(Metrics, EvaluateFramesAssemblesReport) {
    const auto frames = drift(4, 60);
    const auto r = evaluate_frames(net(), frames, frames.front(), {}, {}, 2.5);
    EXPECT_EQ(r.n_frames, 4);
    EXPECT_EQ(r.runtime_seconds, 2.5);
    EXPECT_NEAR(r.ppl, r.lpips_total * 3.0, 1e-12);
    EXPECT_EQ(r.clip_text, 0.0);
    EXPECT_THROW(evaluate_frames(net(), std::vector<Image>{}, frames.front(), {}, {}, 0.0), Error);
}
