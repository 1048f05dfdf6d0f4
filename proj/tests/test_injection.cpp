#include <gtest/gtest.h>

#include <set>

#include "laser/attention.hpp"
#include "laser/errors.hpp"
#include "laser/generator.hpp"
#include "laser/injection.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace laser;
using testing_support::random_image;
using testing_support::tiny;

namespace {

Tensor vec(std::vector<float> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
}

Tensor random_matrix(int rows, int cols, std::uint64_t seed) {
    NormalSampler rng(seed);
    return Tensor({rows, cols}, rng.normals(static_cast<std::size_t>(rows) * cols));
}

struct StageFirings {
    std::set<int> steps;
    std::set<int> layers;
    std::set<HookSite> sites;
    std::size_t count = 0;
};

StageFirings run_stage(InjectionStrategy strategy, int n_f) {
    const auto config = GeneratorConfig::defaults(tiny()->descriptor(), 50);
    const TimestepGrid grid(50, 1000);
    HookLog log;
    generate_stage(*tiny(), 0, random_image(32, 5), "a clay figure standing", "a clay figure sitting", strategy, n_f,
                   config, &log);
    StageFirings out;
    for (const auto& f : log.firings()) {
        out.steps.insert(*grid.step_of_timestep(f.timestep));
        out.layers.insert(f.site.decoder_layer);
        out.sites.insert(f.site);
        ++out.count;
    }
    return out;
}

std::set<int> range(int a, int b) {
    std::set<int> s;
    for (int i = a; i <= b; ++i) s.insert(i);
    return s;
}

}  // namespace

TEST(Strategy, LabelsParseCaseInsensitively) {
    EXPECT_EQ(parse_strategy("kvai"), InjectionStrategy::kvai);
    EXPECT_EQ(parse_strategy("FAI"), InjectionStrategy::fai);
    EXPECT_EQ(parse_strategy("Dai"), InjectionStrategy::dai);
    EXPECT_EQ(parse_strategy("none"), InjectionStrategy::none);
    EXPECT_FALSE(parse_strategy("xyz").has_value());
    EXPECT_EQ(to_string(InjectionStrategy::kvai), "KVAI");
}

TEST(Blend, WorkedExample) {
    const Tensor out = blend_value(vec({1, 0}), vec({0, 1}), vec({2, 2}), 0.5, 0.5);
    EXPECT_FLOAT_EQ(out[0], 1.25f);
    EXPECT_FLOAT_EQ(out[1], 1.25f);
    const Tensor k = blend_key(vec({1, 0}), vec({0, 1}), vec({2, 2}), 0.5, 0.5);
    EXPECT_TRUE(bit_equal(out, k));
}

TEST(Blend, EndpointsAndPassThroughAreExact) {
    const Tensor a = random_matrix(4, 6, 1), b = random_matrix(4, 6, 2), c = random_matrix(4, 6, 3);
    EXPECT_TRUE(bit_equal(blend_value(a, b, c, 0.0, 0.0), a));
    EXPECT_TRUE(bit_equal(blend_value(a, b, c, 1.0, 0.0), b));
    for (double alpha : {0.0, 0.3, 1.0}) {
        EXPECT_TRUE(bit_equal(blend_value(a, b, c, alpha, 1.0), c));
        EXPECT_TRUE(bit_equal(blend_key(a, b, c, alpha, 1.0), c));
    }
    EXPECT_TRUE(bit_equal(decremental_blend(a, c, 1.0), c));
    EXPECT_TRUE(bit_equal(decremental_blend(a, c, 0.0), a));
}

TEST(Blend, MatchesIndependentArithmetic) {
    const Tensor a = random_matrix(3, 5, 4), b = random_matrix(3, 5, 5), c = random_matrix(3, 5, 6);
    const double alpha = 0.37, gamma = 0.61;
    const Tensor out = blend_value(a, b, c, alpha, gamma);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const long double ref = (1 - (long double)gamma) * ((1 - (long double)alpha) * a[i] + alpha * (long double)b[i]) +
                                gamma * (long double)c[i];
        EXPECT_NEAR(out[i], static_cast<double>(ref), 1e-5);
    }
}

TEST(Blend, RejectsBadWeightsAndShapes) {
    const Tensor a = random_matrix(2, 2, 1);
    EXPECT_THROW(blend_value(a, a, random_matrix(2, 3, 1), 0.5, 0.5), ShapeError);
    EXPECT_THROW(blend_value(a, a, a, 1.5, 0.5), ConfigError);
    EXPECT_THROW(blend_key(a, a, a, 0.5, -0.1), ConfigError);
}

TEST(Weights, GammaAndBeta) {
    BlendWeights w{0.8, 0.5, 1000};
    EXPECT_DOUBLE_EQ(w.beta(), 0.4);
    EXPECT_DOUBLE_EQ(w.gamma(981), 0.981);
    EXPECT_DOUBLE_EQ(w.gamma(0), 0.0);
    double prev = -1;
    for (double a : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        BlendWeights x{a, 0.8, 1000};
        EXPECT_GT(x.beta(), prev);
        prev = x.beta();
    }
}

TEST(Schedule, DefaultsAndDescription) {
    const auto& desc = sd15_descriptor();
    const auto fai = default_fai_schedule(50, desc);
    EXPECT_EQ(fai.active_steps, range(1, 25));
    EXPECT_EQ(fai.decoder_layers, range(1, desc.num_decoder_layers()));
    EXPECT_EQ(fai.feature_layer, 4);
    const auto att = default_attention_schedule(50);
    EXPECT_EQ(att.active_steps, range(6, 50));
    EXPECT_EQ(att.decoder_layers, range(3, 8));
    EXPECT_EQ(att.describe(), "steps 6-50, layers 3-8");
    EXPECT_THROW(InjectionSchedule::ranges(1, 51, 3, 8).validate(50, desc), ConfigError);
    EXPECT_THROW(InjectionSchedule::ranges(1, 5, 3, 99).validate(50, desc), ConfigError);
}

class Hooks : public ::testing::Test {
protected:
    void SetUp() override {
        const auto e = tiny()->encode_prompt("a paper boat");
        const Latent z0 = tiny()->encode_image(random_image(32, 9));
        fai_trace = ddim_invert(*tiny(), z0, e, grid, inversion_sites(InjectionStrategy::fai, fai, desc)).trace;
        att_trace = ddim_invert(*tiny(), z0, e, grid, inversion_sites(InjectionStrategy::dai, att, desc)).trace;
    }
    const BackboneDescriptor& desc = tiny()->descriptor();
    TimestepGrid grid{10, 1000};
    InjectionSchedule fai = default_fai_schedule(10, tiny()->descriptor());
    InjectionSchedule att = default_attention_schedule(10);
    std::shared_ptr<const ActivationTrace> fai_trace, att_trace;
};

TEST_F(Hooks, FaiInteriorWithoutEndpointsIsRejected) {
    EXPECT_THROW(fai_hooks(fai_trace, {}, {0.5, 0.8, 1000}, fai, grid, desc), ConfigError);
    EXPECT_NO_THROW(fai_hooks(fai_trace, {}, {0.0, 0.8, 1000}, fai, grid, desc));
    EXPECT_NO_THROW(fai_hooks(fai_trace, {}, {1.0, 0.8, 1000}, fai, grid, desc));
}

TEST_F(Hooks, FaiConfinedToActiveSteps) {
    const auto hooks = fai_hooks(fai_trace, {}, {0.0, 0.8, 1000}, fai, grid, desc);
    std::set<int> steps;
    for (const auto& [t, set] : hooks) steps.insert(*grid.step_of_timestep(t));
    EXPECT_EQ(steps, fai.active_steps);
}

TEST_F(Hooks, DaiRequiresOpenUnitW) {
    EXPECT_THROW(dai_hooks(att_trace, {0.5, 0.0, 1000}, att, grid, desc), ConfigError);
    EXPECT_THROW(dai_hooks(att_trace, {0.5, 1.0, 1000}, att, grid, desc), ConfigError);
    EXPECT_NO_THROW(dai_hooks(att_trace, {0.5, 0.8, 1000}, att, grid, desc));
}

TEST_F(Hooks, DaiBlendsSourceAndCurrent) {
    const auto hooks = dai_hooks(att_trace, {0.5, 0.8, 1000}, att, grid, desc);
    const int t = grid.timestep_of_step(*att.active_steps.begin());
    const HookSite site = HookSite::attention(5, Slot::k);
    const SiteHook* h = hooks.at(t).find(site);
    ASSERT_NE(h, nullptr);
    ASSERT_TRUE(h->transform);
    const Tensor& src = att_trace->at(t, site);
    const Tensor cur = random_matrix(src.dim(0), src.dim(1), 77);
    const Tensor out = h->transform(site, cur);
    EXPECT_LE(max_abs_diff(out, axpby(0.6, src, 0.4, cur)), 1e-6);
}

TEST_F(Hooks, KvaiInteriorWithoutEndpointsIsRejected) {
    EXPECT_THROW(kvai_hooks(att_trace, {}, {0.5, 0.8, 1000}, att, grid, desc), ConfigError);
}

TEST_F(Hooks, KvaiReplacesValueWithSource) {
    const auto hooks = kvai_hooks(att_trace, {}, {0.0, 0.8, 1000}, att, grid, desc);
    const int t = grid.timestep_of_step(*att.active_steps.rbegin());
    const HookSite site = HookSite::attention(3, Slot::v);
    const Tensor& src = att_trace->at(t, site);
    const Tensor out = hooks.at(t).find(site)->transform(site, random_matrix(src.dim(0), src.dim(1), 3));
    EXPECT_TRUE(bit_equal(out, src));
}

TEST(Confinement, KvaiFiresOnlyInsideWindow) {
    const auto f = run_stage(InjectionStrategy::kvai, 3);
    EXPECT_EQ(f.steps, range(6, 50));
    EXPECT_EQ(f.layers, range(3, 8));
    for (const auto& s : f.sites) EXPECT_NE(s.slot, Slot::f);
}

TEST(Confinement, DaiFiresOnlyInsideWindow) {
    const auto f = run_stage(InjectionStrategy::dai, 3);
    EXPECT_EQ(f.steps, range(6, 50));
    EXPECT_EQ(f.layers, range(3, 8));
}

TEST(Confinement, FaiFiresOnFirstHalf) {
    const auto f = run_stage(InjectionStrategy::fai, 3);
    EXPECT_EQ(f.steps, range(1, 25));
    EXPECT_TRUE(f.sites.count(HookSite::feature(4)));
    for (const auto& s : f.sites) {
        if (s.slot == Slot::f) EXPECT_EQ(s.decoder_layer, 4);
    }
}

TEST(Confinement, NoneFiresNothing) { EXPECT_EQ(run_stage(InjectionStrategy::none, 3).count, 0u); }

TEST(CrossFrame, IdenticalFramesReduceToPerFrameAttention) {
    const Tensor q = random_matrix(6, 8, 1), k = random_matrix(6, 8, 2), v = random_matrix(6, 8, 3);
    const std::vector<Tensor> qs{q, q, q}, ks{k, k, k}, vs{v, v, v};
    const auto out = cross_frame_attention(qs, ks, vs, 2);
    const Tensor single = scaled_dot_product_attention(q, k, v, 2);
    ASSERT_EQ(out.size(), 3u);
    for (const auto& o : out) EXPECT_LE(max_abs_diff(o, single), 1e-6);
}

TEST(CrossFrame, MatchesDenseReference) {
    const std::vector<Tensor> qs{random_matrix(5, 8, 10), random_matrix(5, 8, 11)};
    const std::vector<Tensor> ks{random_matrix(5, 8, 12), random_matrix(5, 8, 13)};
    const std::vector<Tensor> vs{random_matrix(5, 8, 14), random_matrix(5, 8, 15)};
    const auto out = cross_frame_attention(qs, ks, vs, 2);
    const Tensor K = oracle::concat_rows(ks), V = oracle::concat_rows(vs);
    for (std::size_t f = 0; f < 2; ++f) {
        const auto ref = oracle::attention(qs[f], K, V, 2);
        for (std::size_t i = 0; i < ref.out.size(); ++i) EXPECT_NEAR(out[f][i], static_cast<double>(ref.out[i]), 1e-5);
    }
}

TEST(CrossFrame, WeightsAreRowStochastic) {
    const Tensor q = random_matrix(4, 8, 20);
    const Tensor k = oracle::concat_rows({random_matrix(4, 8, 21), random_matrix(4, 8, 22)});
    const Tensor p = attention_weights(q, k, 2);
    ASSERT_EQ(p.shape(), (std::vector<int>{2, 4, 8}));
    for (int r = 0; r < 8; ++r) {
        double sum = 0;
        for (int j = 0; j < 8; ++j) sum += p[static_cast<std::size_t>(r) * 8 + j];
        EXPECT_NEAR(sum, 1.0, 1e-6);
    }
}

TEST(CrossFrame, SingleFrameIsExact) {
    const Tensor q = random_matrix(6, 8, 30), k = random_matrix(6, 8, 31), v = random_matrix(6, 8, 32);
    const std::vector<Tensor> qs{q}, ks{k}, vs{v};
    EXPECT_TRUE(bit_equal(cross_frame_attention(qs, ks, vs, 2).front(), scaled_dot_product_attention(q, k, v, 2)));
}

TEST(CrossFrame, RaggedShapesAreRejected) {
    const std::vector<Tensor> qs{random_matrix(6, 8, 1), random_matrix(6, 8, 2)};
    const std::vector<Tensor> ks{random_matrix(6, 8, 3), random_matrix(6, 4, 4)};
    const std::vector<Tensor> vs{random_matrix(6, 8, 5), random_matrix(6, 8, 6)};
    EXPECT_THROW(cross_frame_attention(qs, ks, vs, 2), ShapeError);
}
