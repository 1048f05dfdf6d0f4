#include <gtest/gtest.h>

#include "laser/ddim.hpp"
#include "laser/errors.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace laser;
using testing_support::random_image;
using testing_support::random_latent;
using testing_support::tiny;

namespace {

constexpr double kRoundTripTolerance = 1e-2;

double max_diff(const std::vector<long double>& ref, const Tensor& got) {
    long double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::fabs(ref[i] - got[i]));
    return static_cast<double>(worst);
}

}  // namespace

TEST(Grid, FiftyStepsLeadingSpacing) {
    const TimestepGrid g(50, 1000);
    ASSERT_EQ(g.num_steps(), 50);
    EXPECT_EQ(g.stride(), 20);
    EXPECT_EQ(g.sampling().front(), 981);
    EXPECT_EQ(g.sampling()[1], 961);
    EXPECT_EQ(g.sampling().back(), 1);
    EXPECT_EQ(g.inversion().front(), 1);
    EXPECT_EQ(g.timestep_of_step(6), 881);
    EXPECT_EQ(g.step_of_timestep(881), 6);
    EXPECT_FALSE(g.contains(880));
    EXPECT_EQ(g.previous(1), -1);
    EXPECT_EQ(g.previous(981), 961);
}

TEST(Grid, RejectsBadStepCounts) {
    EXPECT_THROW(TimestepGrid(0, 1000), ConfigError);
    EXPECT_THROW(TimestepGrid(1001, 1000), ConfigError);
    EXPECT_THROW(TimestepGrid(50, 1000).timestep_of_step(51), ConfigError);
}

TEST(Transition, IdentityAtEqualLevelsWithZeroNoise) {
    const Latent z = random_latent(tiny()->descriptor(), 1);
    const Latent zero{Tensor(z.values.shape(), 0.0f), std::nullopt};
    const Latent out = ddim_transition(z, zero, 0.4, 0.4);
    EXPECT_LE(max_abs_diff(out.values, z.values), 1e-6);
}

TEST(Transition, MatchesIndependentFormula) {
    const Latent z = random_latent(tiny()->descriptor(), 2);
    const Latent eps = random_latent(tiny()->descriptor(), 3);
    const auto& d = tiny()->descriptor();
    const Latent step = ddim_step(d, z, eps, 501, 481);
    EXPECT_LE(max_diff(oracle::ddim(z.values, eps.values, d.alpha_bar(501), d.alpha_bar(481)), step.values), 1e-5);
    const Latent up = ddim_inverse_step(d, z, eps, 481, 501);
    EXPECT_LE(max_diff(oracle::ddim(z.values, eps.values, d.alpha_bar(481), d.alpha_bar(501)), up.values), 1e-5);
    const Latent last = ddim_step(d, z, eps, 1, -1);
    EXPECT_LE(max_diff(oracle::ddim(z.values, eps.values, d.alpha_bar(1), d.final_alpha_cumprod), last.values), 1e-5);
}

TEST(Transition, LinearInLatentAndNoise) {
    const auto& d = tiny()->descriptor();
    const Latent z1 = random_latent(d, 4), z2 = random_latent(d, 5);
    const Latent e1 = random_latent(d, 6), e2 = random_latent(d, 7);
    const double a = 0.3, b = -1.7;
    const Latent zc{axpby(a, z1.values, b, z2.values), std::nullopt};
    const Latent ec{axpby(a, e1.values, b, e2.values), std::nullopt};
    const Latent lhs = ddim_transition(zc, ec, 0.7, 0.2);
    const Tensor rhs = axpby(a, ddim_transition(z1, e1, 0.7, 0.2).values, b, ddim_transition(z2, e2, 0.7, 0.2).values);
    EXPECT_LE(max_abs_diff(lhs.values, rhs), 1e-5);
}

TEST(Transition, InverseThenForwardWithFixedNoise) {
    const auto& d = tiny()->descriptor();
    const Latent z = random_latent(d, 8), eps = random_latent(d, 9);
    const Latent up = ddim_inverse_step(d, z, eps, 481, 501);
    const Latent back = ddim_step(d, up, eps, 501, 481);
    EXPECT_LE(max_abs_diff(back.values, z.values), 1e-5);
}

TEST(Transition, RejectsNonFinite) {
    const auto& d = tiny()->descriptor();
    Latent z = random_latent(d, 1);
    z.values[3] = NAN;
    EXPECT_THROW(ddim_transition(z, random_latent(d, 2), 0.5, 0.6), NumericError);
}

TEST(Guidance, CombineAtCanonicalScales) {
    const auto& d = tiny()->descriptor();
    const Latent u = random_latent(d, 10), c = random_latent(d, 11);
    EXPECT_TRUE(bit_equal(cfg_combine(u, c, 0.0).values, u.values));
    EXPECT_TRUE(bit_equal(cfg_combine(u, c, 1.0).values, c.values));
    const Latent g = cfg_combine(u, c, 7.5);
    for (std::size_t i = 0; i < g.values.size(); ++i) {
        const long double ref = (long double)u.values[i] + 7.5L * ((long double)c.values[i] - u.values[i]);
        EXPECT_NEAR(g.values[i], static_cast<double>(ref), 1e-4);
    }
}

TEST(Guidance, ReplaceWithSourceEqualToConditionalIsScaleOne) {
    const TimestepGrid grid(10, 1000);
    const auto e = tiny()->encode_prompt("a red barn in the snow");
    const Latent zT = initial_noise(tiny()->descriptor(), 4);
    GuidanceConfig replace{7.5, UnconditionalKind::replace_with_source, e};
    GuidanceConfig one{1.0, UnconditionalKind::null_text, std::nullopt};
    const Latent a = ddim_sample(*tiny(), zT, e, replace, grid);
    const Latent b = ddim_sample(*tiny(), zT, e, one, grid);
    EXPECT_LE(max_abs_diff(a.values, b.values), 1e-6);
}

TEST(Guidance, ValidateRejectsMissingSourceAndNegativeScale) {
    EXPECT_THROW((GuidanceConfig{7.5, UnconditionalKind::replace_with_source, std::nullopt}.validate()), ConfigError);
    EXPECT_THROW((GuidanceConfig{-1.0, UnconditionalKind::null_text, std::nullopt}.validate()), ConfigError);
}

TEST(Inversion, RoundTripReconstructsImage) {
    const TimestepGrid grid(50, 1000);
    const Image img = random_image(32, 21);
    const Latent z0 = tiny()->encode_image(img);
    const auto e = tiny()->encode_prompt("a stone bridge over a river");
    const auto inv = ddim_invert(*tiny(), z0, e, grid, {});
    const Latent rec = ddim_sample(*tiny(), inv.z_T, e, {1.0, UnconditionalKind::null_text, std::nullopt}, grid);
    EXPECT_LE(relative_error(rec.values, z0.values), kRoundTripTolerance);
    const Image back = tiny()->decode_latent(rec);
    EXPECT_LE(std::sqrt(pixel_mse(back, img)), kRoundTripTolerance);
}

TEST(Inversion, CapturesDoNotChangeTheTrajectory) {
    const TimestepGrid grid(20, 1000);
    const Latent z0 = tiny()->encode_image(random_image(32, 22));
    const auto e = tiny()->encode_prompt("a lighthouse");
    const auto plain = ddim_invert(*tiny(), z0, e, grid, {});
    const auto sites = tiny()->descriptor().hook_sites();
    const auto captured = ddim_invert(*tiny(), z0, e, grid, sites);
    EXPECT_TRUE(bit_equal(plain.z_T.values, captured.z_T.values));
    EXPECT_EQ(plain.trace->size(), 0u);
}

TEST(Inversion, TraceIsCompleteAndDeterministic) {
    const TimestepGrid grid(20, 1000);
    const Latent z0 = tiny()->encode_image(random_image(32, 23));
    const auto e = tiny()->encode_prompt("a lighthouse");
    const std::vector<HookSite> sites{HookSite::feature(4), HookSite::attention(3, Slot::k), HookSite::attention(8, Slot::v)};
    const auto a = ddim_invert(*tiny(), z0, e, grid, sites);
    const auto b = ddim_invert(*tiny(), z0, e, grid, sites);
    EXPECT_EQ(a.trace->size(), sites.size() * 20);
    for (int t : grid.sampling()) {
        for (const auto& s : sites) EXPECT_TRUE(a.trace->contains(t, s)) << t << " " << s.label();
    }
    EXPECT_TRUE(a.trace->bit_equal(*b.trace));
    EXPECT_TRUE(bit_equal(a.z_T.values, b.z_T.values));
    EXPECT_THROW(a.trace->at(20, sites[0]), ConfigError);
}

TEST(Inversion, RejectsUndeclaredSite) {
    const TimestepGrid grid(5, 1000);
    const Latent z0 = tiny()->encode_image(random_image(32, 24));
    const auto e = tiny()->encode_prompt("a lighthouse");
    const std::vector<HookSite> bad{HookSite::attention(11, Slot::q)};
    EXPECT_THROW(ddim_invert(*tiny(), z0, e, grid, bad), ConfigError);
}

TEST(Trace, SealRejectsIncompleteEntries) {
    std::map<ActivationTrace::Key, Tensor> entries;
    entries[{1, HookSite::feature(1)}] = Tensor({2, 2}, 1.0f);
    EXPECT_THROW(ActivationTrace::seal(TraceOrigin::inversion, "x", {1, 21}, {HookSite::feature(1)}, entries),
                 ConfigError);
    entries[{21, HookSite::feature(1)}] = Tensor({2, 2}, NAN);
    EXPECT_THROW(ActivationTrace::seal(TraceOrigin::inversion, "x", {1, 21}, {HookSite::feature(1)}, entries),
                 NumericError);
}

TEST(Sampling, HookOffGridIsRejected) {
    const TimestepGrid grid(10, 1000);
    const auto e = tiny()->encode_prompt("a lighthouse");
    StepHooks hooks;
    hooks[500].transform(HookSite::feature(2), [](const HookSite&, const Tensor& x) { return x; });
    EXPECT_THROW(ddim_sample(*tiny(), initial_noise(tiny()->descriptor(), 1), e, {}, grid, hooks), ConfigError);
}

TEST(Sampling, DeterministicForFixedSeed) {
    const TimestepGrid grid(10, 1000);
    const auto e = tiny()->encode_prompt("a lighthouse at dusk");
    const Latent a = ddim_sample(*tiny(), initial_noise(tiny()->descriptor(), 77), e, {}, grid);
    const Latent b = ddim_sample(*tiny(), initial_noise(tiny()->descriptor(), 77), e, {}, grid);
    EXPECT_TRUE(bit_equal(a.values, b.values));
    const Latent c = ddim_sample(*tiny(), initial_noise(tiny()->descriptor(), 78), e, {}, grid);
    EXPECT_FALSE(bit_equal(a.values, c.values));
}

TEST(Sampling, BatchElementsAreIndependentWithoutCrossFrame) {
    const TimestepGrid grid(8, 1000);
    const auto& d = tiny()->descriptor();
    const auto e1 = tiny()->encode_prompt("a lighthouse"), e2 = tiny()->encode_prompt("a windmill");
    std::vector<SampleJob> jobs{{initial_noise(d, 1), e1, tiny()->null_embedding(), {}, {}},
                                {initial_noise(d, 2), e2, tiny()->null_embedding(), {}, {}}};
    const auto batch = ddim_sample_batch(*tiny(), jobs, grid, {});
    const auto solo = ddim_sample(*tiny(), jobs[1].z_T, e2, {}, grid);
    EXPECT_LE(max_abs_diff(batch[1].values, solo.values), 1e-6);
}

TEST(Sampling, TransformsFireOnBothBranchesAndAreLogged) {
    const TimestepGrid grid(5, 1000);
    const auto e = tiny()->encode_prompt("a lighthouse");
    StepHooks hooks;
    hooks[grid.timestep_of_step(2)].transform(HookSite::attention(3, Slot::k),
                                              [](const HookSite&, const Tensor& x) { return x; });
    HookLog log;
    ddim_sample(*tiny(), initial_noise(tiny()->descriptor(), 1), e, {}, grid, hooks, &log);
    const auto f = log.firings();
    ASSERT_EQ(f.size(), 2u);
    EXPECT_NE(f[0].conditional_branch, f[1].conditional_branch);
    for (const auto& x : f) EXPECT_EQ(x.timestep, grid.timestep_of_step(2));
}
