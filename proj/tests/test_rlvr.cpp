#include <gtest/gtest.h>

#include <cmath>

#include "rdbcl/oracles.hpp"
#include "rdbcl/rlvr.hpp"

using namespace rdbcl;

namespace {

void expect_vec_near(const std::vector<double>& a, const std::vector<double>& b, double tol) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

/// Two length-1 trajectories with rho 0.5 and 2 and advantages +1 and -1.
RolloutGroup hand_group(const Sample* s) {
    RolloutGroup g;
    g.sample = s;
    g.trajectories.resize(2);
    g.trajectories[0].tokens = {1};
    g.trajectories[1].tokens = {2};
    g.rewards = {1.0, 0.0};
    g.advantages = {1.0, -1.0};
    g.logp_cur = {{std::log(0.5)}, {std::log(0.25)}};
    g.logp_ref = {{std::log(0.25)}, {std::log(0.5)}};
    return g;
}

} // namespace

TEST(Advantages, Examples) {
    expect_vec_near(group_advantages(std::vector<double>{1.7, 1.7, 1.7, 1.7}), {0, 0, 0, 0}, 0.0);
    expect_vec_near(group_advantages(std::vector<double>{1, 0}), {1, -1}, 1e-15);
    expect_vec_near(group_advantages(std::vector<double>{1, 1, 0, 0}), {1, 1, -1, -1}, 1e-15);
}

TEST(Advantages, ZeroMeanUnitStd) {
    const auto a = group_advantages(std::vector<double>{1.7, 0.3, -0.7, 1.0, 0.0, 1.7, 0.7, -0.7});
    EXPECT_NEAR(mean(a), 0.0, 1e-12);
    EXPECT_NEAR(stddev(a), 1.0, 1e-12);
}

TEST(Advantages, Errors) {
    EXPECT_THROW(group_advantages(std::vector<double>{1.0}), Error);
    EXPECT_THROW(group_advantages(std::vector<double>{1.0, NAN}), NonFiniteError);
}

TEST(Kl, Examples) {
    EXPECT_EQ(kl_per_token(-1.3, -1.3), 0.0);
    EXPECT_NEAR(kl_per_token(0.0, std::log(2.0)), 2.0 - std::log(2.0) - 1.0, 1e-15);
    EXPECT_NEAR(kl_per_token(0.0, std::log(2.0)), 0.30685, 1e-5);
    EXPECT_NEAR(kl_per_token(0.0, std::log(0.5)), 0.19315, 1e-5);
    EXPECT_THROW(kl_per_token(0.0, INFINITY), NonFiniteError);
}

TEST(Kl, NonnegativeAndGradientMatches) {
    Rng r(1);
    for (int i = 0; i < 1000; ++i) {
        const double a = -5.0 * r.uniform(), b = -5.0 * r.uniform();
        EXPECT_GE(kl_per_token(a, b), 0.0);
        const double h = 1e-6;
        const double fd = (kl_per_token(a + h, b) - kl_per_token(a - h, b)) / (2 * h);
        EXPECT_NEAR(kl_grad_wrt_logp(a, b), fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST(GrpoLoss, ZeroAdvantageAtReferenceIsZero) {
    Sample s;
    auto g = hand_group(&s);
    g.advantages = {0.0, 0.0};
    g.logp_ref = g.logp_cur;
    const auto l = grpo_loss(g, 0.15);
    EXPECT_EQ(l.loss, 0.0);
    for (const auto& w : l.token_weights)
        for (double x : w) EXPECT_EQ(x, 0.0);
}

TEST(GrpoLoss, BetaZeroIsAdvantageWeightedLogprob) {
    Sample s;
    const auto g = hand_group(&s);
    // -(1/2) [ 1 * ln 0.5 + (-1) * ln 0.25 ]
    EXPECT_NEAR(grpo_loss(g, 0.0).loss, -0.5 * (std::log(0.5) - std::log(0.25)), 1e-15);
}

TEST(GrpoLoss, EmptyTrajectoryIsFlagged) {
    Sample s;
    auto g = hand_group(&s);
    g.trajectories[1].tokens.clear();
    g.logp_cur[1].clear();
    g.logp_ref[1].clear();
    const auto l = grpo_loss(g, 0.1);
    EXPECT_EQ(l.empty_trajectories, 1);
    EXPECT_NEAR(l.loss, -0.5 * (std::log(0.5) - 0.1 * kl_per_token(std::log(0.5), std::log(0.25))), 1e-15);
    EXPECT_THROW(grpo_loss(g, -0.1), Error);
}

TEST(RdbclLoss, TwoBetaHandFixture) {
    Sample s;
    const std::vector<RolloutGroup> groups{hand_group(&s), hand_group(&s)};
    // per group: -(1/2) [ ln 2 - beta (k(0.5) + k(2)) ] with k(0.5) + k(2) = 0.5
    const double expected = -0.5 * std::log(2.0) + 0.25 * (0.15 + 0.03) / 2.0;
    EXPECT_NEAR(rdbcl_loss(groups, std::vector<double>{0.15, 0.03}), expected, 1e-15);
    EXPECT_THROW(rdbcl_loss(groups, std::vector<double>{0.15}), Error);
}

TEST(RdbclLoss, ConstantBetasReduceToStaticLoss) {
    for (std::uint64_t i = 1; i <= 5; ++i) {
        const auto fx = make_gradcheck_fixture(i);
        const std::vector<double> betas(fx.groups.size(), 0.15);
        double stat = 0.0;
        for (const auto& g : fx.groups) stat += grpo_loss(g, 0.15).loss;
        stat /= static_cast<double>(fx.groups.size());
        EXPECT_NEAR(rdbcl_loss(fx.groups, betas), stat, 1e-12);
        EXPECT_NEAR(rdbcl_loss_and_gradient(fx.policy, fx.groups, betas).loss, stat, 1e-12);
    }
}

TEST(RdbclLoss, ZeroAdvantageAtReferenceHasZeroGradient) {
    auto fx = make_gradcheck_fixture(3);
    for (auto& g : fx.groups) {
        refresh_current_logprobs(fx.policy, g);
        g.logp_ref = g.logp_cur;
        std::fill(g.advantages.begin(), g.advantages.end(), 0.0);
    }
    const auto b = rdbcl_loss_and_gradient(fx.policy, fx.groups, fx.betas);
    EXPECT_EQ(b.loss, 0.0);
    for (double x : b.gradient) EXPECT_EQ(x, 0.0);
}

TEST(RdbclLoss, GradientMatchesFiniteDifferences) {
    for (std::uint64_t i = 1; i <= 20; ++i) EXPECT_LE(gradcheck_error(make_gradcheck_fixture(i)), 1e-4) << "fixture " << i;
}

TEST(Optimizer, ZeroGradientWithoutDecayKeepsTheta) {
    OptimizerConfig c;
    c.weight_decay = 0.0;
    OptimizerState s(c, 3);
    std::vector<double> theta{1.0, -2.0, 0.5};
    const auto before = theta;
    optimizer_step(s, theta, std::vector<double>(3, 0.0));
    EXPECT_EQ(theta, before);
}

TEST(Optimizer, DescendsOnQuadratic) {
    OptimizerState s(OptimizerConfig{}, 1);
    std::vector<double> theta{1.0};
    optimizer_step(s, theta, theta);
    EXPECT_LT(0.5 * theta[0] * theta[0], 0.5);
}

TEST(Optimizer, WarmupIsLinear) {
    OptimizerConfig c;
    c.warmup_ratio = 0.01;
    c.total_steps = 1000;
    EXPECT_NEAR(scheduled_lr(c, 5), 0.5 * c.lr_max, 1e-18);
    EXPECT_NEAR(scheduled_lr(c, 10), c.lr_max, 1e-18);
    EXPECT_NEAR(scheduled_lr(c, 1000), 0.0, 1e-18);
    EXPECT_GT(scheduled_lr(c, 500), 0.0);
    EXPECT_LT(scheduled_lr(c, 500), c.lr_max);
}

TEST(Optimizer, NonFiniteGradientLeavesStateUntouched) {
    OptimizerState s(OptimizerConfig{}, 2);
    std::vector<double> theta{1.0, 2.0};
    EXPECT_THROW(optimizer_step(s, theta, std::vector<double>{0.1, NAN}), NonFiniteError);
    EXPECT_EQ(theta, (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(s.step, 0);
    EXPECT_EQ(s.m, (std::vector<double>{0.0, 0.0}));
}
