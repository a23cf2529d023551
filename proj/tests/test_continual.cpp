#include <gtest/gtest.h>

#include <cmath>

#include "rdbcl/continual.hpp"
#include "rdbcl/oracles.hpp"

using namespace rdbcl;

namespace {

struct Fixture {
    ExperimentConfig cfg;
    Stream stream;
    PolicySnapshot initial;
};

/// Small warm-started two-task setup shared by the run-level tests.
const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture x;
        x.cfg.warm_start.steps = 200;
        x.cfg.train.steps_per_task = 20;
        x.cfg.train.fisher_samples = 20;
        resolve(x.cfg);
        x.stream = generate_stream(x.cfg.stream, Rng(1, 1));
        x.initial = PolicySnapshot(warm_start(x.stream, policy_dims(x.cfg, x.stream.vocab), x.cfg.warm_start, Rng(1, 2)), 0);
        return x;
    }();
    return f;
}

} // namespace

TEST(Ewc, PenaltyExamples) {
    EwcState s;
    s.lambda = 2.0;
    s.fisher = {{1.0}};
    s.anchors = {{0.0}};
    const auto p = ewc_penalty(s, std::vector<double>{3.0});
    EXPECT_DOUBLE_EQ(p.value, 9.0);
    EXPECT_DOUBLE_EQ(p.gradient[0], 6.0);
    const auto z = ewc_penalty(s, std::vector<double>{0.0});
    EXPECT_EQ(z.value, 0.0);
    EXPECT_EQ(z.gradient[0], 0.0);
    EXPECT_THROW(ewc_penalty(s, std::vector<double>{1.0, 2.0}), Error);
}

TEST(Ewc, SumsOverAnchors) {
    EwcState s;
    s.lambda = 1.0;
    s.fisher = {{1.0, 2.0}, {0.5, 0.0}};
    s.anchors = {{0.0, 0.0}, {1.0, 1.0}};
    const auto p = ewc_penalty(s, std::vector<double>{1.0, 1.0});
    // 0.5 * (1 + 2) + 0.5 * (0 + 0)
    EXPECT_DOUBLE_EQ(p.value, 1.5);
    EXPECT_DOUBLE_EQ(p.gradient[0], 1.0);
    EXPECT_DOUBLE_EQ(p.gradient[1], 2.0);
}

TEST(Ewc, FisherIsNonnegative) {
    const auto& f = fixture();
    DecodeConfig dc = f.cfg.train.rollout;
    const auto F = estimate_fisher(f.initial.params(), f.stream.vocab, f.stream.tasks[0].train, 10, dc, Rng(3));
    ASSERT_EQ(F.size(), f.initial.params().theta.size());
    for (double x : F) EXPECT_GE(x, 0.0);
}

TEST(Lwf, BinaryKlClosedForm) {
    // uniform teacher vs (p, 1-p): sum 0.5 (ln 0.5 - ln q) = -ln 2 - (ln p + ln(1-p)) / 2
    const double p = 0.8;
    const std::vector<double> teacher{std::log(0.5), std::log(0.5)};
    const std::vector<double> student{std::log(p), std::log(1.0 - p)};
    EXPECT_NEAR(kl_divergence(teacher, student), -std::log(2.0) - 0.5 * (std::log(p) + std::log(1.0 - p)), 1e-15);
}

TEST(Lwf, PenaltyOnTwoTokenPolicy) {
    PolicyDims d;
    d.vocab = 2;
    d.embed = 2;
    d.hidden = 2;
    d.max_positions = 8;
    const auto snap = init_policy(d, Rng(1), 0.0);
    auto cur = snap;
    const double p = 0.8;
    cur.theta[d.b2_offset()] = std::log(p);
    cur.theta[d.b2_offset() + 1] = std::log(1.0 - p);
    Sample s;
    s.question = {0};
    Trajectory t;
    t.tokens = {1, 0, 1};
    const std::vector<std::pair<const Sample*, const Trajectory*>> items{{&s, &t}};
    const double kl = -std::log(2.0) - 0.5 * (std::log(p) + std::log(1.0 - p));
    EXPECT_NEAR(lwf_penalty(snap, cur, items, 0.5).value, 0.5 * kl, 1e-12);
    EXPECT_NEAR(lwf_penalty(snap, snap, items, 0.5).value, 0.0, 1e-15);
    const auto zero = lwf_penalty(snap, cur, items, 0.0);
    EXPECT_EQ(zero.value, 0.0);
    for (double g : zero.gradient) EXPECT_EQ(g, 0.0);
}

TEST(Lwf, GradientMatchesFiniteDifferences) {
    PolicyDims d;
    d.vocab = 9;
    d.embed = 4;
    d.hidden = 6;
    d.max_positions = 10;
    const auto snap = init_policy(d, Rng(2), 0.5);
    const auto cur = init_policy(d, Rng(3), 0.5);
    Sample s;
    s.question = {1, 4};
    Trajectory t1, t2;
    t1.tokens = {3, 3, 8};
    t2.tokens = {0, 7};
    const std::vector<std::pair<const Sample*, const Trajectory*>> items{{&s, &t1}, {&s, &t2}};
    const auto analytic = lwf_penalty(snap, cur, items, 0.7).gradient;
    PolicyParams work = cur;
    const ScalarFn f = [&](std::span<const double> theta) {
        std::copy(theta.begin(), theta.end(), work.theta.begin());
        return lwf_penalty(snap, work, items, 0.7).value;
    };
    EXPECT_LT(max_relative_error(analytic, finite_diff_grad(f, cur.theta, 1e-5)), 1e-6);
}

TEST(Sft, TrainingLowersOracleNll) {
    const auto& f = fixture();
    const auto& task = f.stream.tasks[0];
    std::vector<SupervisedExample> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(oracle_example(f.stream.vocab, task.train[static_cast<std::size_t>(i)]));
    const double before = nll_loss_and_gradient(f.initial.params(), batch).loss;
    TrainConfig c = f.cfg.train;
    c.method = Method::Sft;
    c.steps_per_task = 100;
    const auto trained = sft_train(f.initial.params(), f.stream, task, c, Rng(4));
    EXPECT_LT(nll_loss_and_gradient(trained, batch).loss, before);
}

TEST(Driver, ZeroStepsRowsEqualZeroShot) {
    const auto& f = fixture();
    TrainConfig c = f.cfg.train;
    c.steps_per_task = 0;
    for (Method m : {Method::Rdbcl, Method::GrpoStatic, Method::Sft}) {
        c.method = m;
        const auto run = run_task_sequence(f.stream, c, f.initial, 1);
        ASSERT_EQ(run.accuracy.size(), 2u);
        for (const auto& row : run.accuracy.a) EXPECT_EQ(row, run.accuracy.zero_shot) << to_string(m);
        for (const auto& ck : run.checkpoints) EXPECT_EQ(ck.hash(), f.initial.hash());
    }
}

TEST(Driver, OneCheckpointPerTask) {
    const auto& f = fixture();
    const auto run = run_task_sequence(f.stream, f.cfg.train, f.initial, 1);
    ASSERT_FALSE(run.failure);
    ASSERT_EQ(run.checkpoints.size(), 2u);
    for (int i = 0; i < 2; ++i) EXPECT_EQ(run.checkpoints[static_cast<std::size_t>(i)].provenance(), i + 1);
    ASSERT_EQ(run.tasks.size(), 2u);
    EXPECT_EQ(run.tasks[1].rp.size(), f.stream.tasks[1].train.size());
}

TEST(Driver, CheckpointIsolation) {
    const auto& f = fixture();
    auto one = f.stream;
    one.tasks.resize(1);
    const auto short_run = run_task_sequence(one, f.cfg.train, f.initial, 1);
    const auto full_run = run_task_sequence(f.stream, f.cfg.train, f.initial, 1);
    // checkpoint 1 is unchanged by training task 2 afterwards
    EXPECT_EQ(short_run.checkpoints[0].hash(), full_run.checkpoints[0].hash());
    const auto& dc = f.cfg.train.rollout;
    const auto& test = f.stream.tasks[0].test;
    EXPECT_EQ(evaluate_accuracy(short_run.checkpoints[0].params(), f.stream.vocab, test, dc),
              evaluate_accuracy(full_run.checkpoints[0].params(), f.stream.vocab, test, dc));
}

TEST(Driver, RdbclScoresAgainstPreviousCheckpoint) {
    const auto& f = fixture();
    const auto run = run_task_sequence(f.stream, f.cfg.train, f.initial, 1);
    const auto& t = f.stream.tasks[1];
    const auto rescored = score_samples(run.checkpoints[0], f.stream.vocab, t.spec, t.train, f.cfg.train.gate,
                                        f.cfg.train.rollout, Rng(1, 3).split(1).split(2));
    ASSERT_EQ(rescored.size(), run.tasks[1].rp.size());
    for (std::size_t i = 0; i < rescored.size(); ++i) EXPECT_EQ(rescored[i].confidence, run.tasks[1].rp[i].confidence);
}

TEST(Driver, DeterministicInSeed) {
    const auto& f = fixture();
    const auto a = trace_of(run_task_sequence(f.stream, f.cfg.train, f.initial, 7));
    const auto b = trace_of(run_task_sequence(f.stream, f.cfg.train, f.initial, 7));
    EXPECT_TRUE(bit_identical(a, b));
}

TEST(Driver, MethodEquivalencesAreBitExact) {
    const auto r = check_static_reduction(2, 200, 30);
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Driver, MethodBetas) {
    TrainConfig c;
    c.method = Method::GrpoStatic;
    c.static_k = 0.2;
    EXPECT_DOUBLE_EQ(method_beta(c, nullptr), 0.2 * c.gate.beta0);
    c.method = Method::Rdbcl;
    EXPECT_THROW(method_beta(c, nullptr), Error);
    RPScore s;
    s.beta = 0.042;
    EXPECT_EQ(method_beta(c, &s), 0.042);
    EXPECT_EQ(parse_method("grpo_static"), Method::GrpoStatic);
    EXPECT_FALSE(parse_method("bogus"));
}

TEST(Driver, RejectsInvalidConfig) {
    const auto& f = fixture();
    TrainConfig c = f.cfg.train;
    c.group_size = 1;
    EXPECT_THROW(run_task_sequence(f.stream, c, f.initial, 1), Error);
    c = f.cfg.train;
    c.passk_ks = {c.passk_n + 1};
    EXPECT_THROW(run_task_sequence(f.stream, c, f.initial, 1), Error);
}
