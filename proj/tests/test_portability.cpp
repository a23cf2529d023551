#include <gtest/gtest.h>

#include <cmath>

#include "rdbcl/oracles.hpp"
#include "rdbcl/portability.hpp"

using namespace rdbcl;

namespace {

const VocabLayout kVocab{10, 2, 3, 8};

PolicyParams zero_policy() {
    PolicyDims d;
    d.vocab = kVocab.size();
    d.embed = 4;
    d.hidden = 4;
    d.max_positions = 16;
    return init_policy(d, Rng(1), 0.0);
}

Sample question() {
    Sample s;
    s.question = {kVocab.key(0), kVocab.filler(0), kVocab.filler(2)};
    return s;
}

Trajectory formatted(std::vector<Token> reasoning, Token answer) {
    Trajectory t;
    t.tokens.push_back(kVocab.reason_open());
    t.tokens.insert(t.tokens.end(), reasoning.begin(), reasoning.end());
    t.tokens.insert(t.tokens.end(), {kVocab.reason_close(), kVocab.answer_open(), answer, kVocab.answer_close()});
    locate_spans(kVocab, t);
    return t;
}

GateConfig paper_gate() {
    GateConfig g;
    g.beta0 = 0.15;
    g.tau = 0.7;
    g.clip_min = 0.2;
    return g;
}

} // namespace

TEST(Probe, UniformSnapshotBinaryTokenIsHalf) {
    const auto p = zero_policy();
    const std::vector<Trajectory> refs{formatted({kVocab.op(1)}, kVocab.answer(4))};
    const auto r = probe_confidence(p, kVocab, question(), refs, ProbeKind::BinaryToken);
    EXPECT_NEAR(r.confidence, 0.5, 1e-15);
    EXPECT_FALSE(r.flagged);
}

TEST(Probe, UniformSnapshotLikelihoodIsOneOverV) {
    const auto p = zero_policy();
    const std::vector<Trajectory> refs{formatted({kVocab.op(1), kVocab.op(2)}, kVocab.answer(4))};
    EXPECT_NEAR(probe_confidence(p, kVocab, question(), refs, ProbeKind::Likelihood).confidence, 1.0 / kVocab.size(), 1e-12);
}

TEST(Probe, CertainSnapshotHasFullConfidence) {
    auto p = zero_policy();
    p.theta[p.dims.b2_offset() + static_cast<std::size_t>(kVocab.op(0))] = 60.0;
    DecodeConfig dc;
    dc.greedy = true;
    Rng r(2);
    const auto refs = sample_trajectories(p, kVocab, question(), 1, dc, r);
    const auto res = probe_confidence(p, kVocab, question(), refs, ProbeKind::Likelihood);
    EXPECT_NEAR(res.confidence, 1.0, 1e-12);
    EXPECT_TRUE(res.flagged);  // no reasoning span: the whole rollout is scored
}

TEST(Probe, GeometricMeanExample) {
    const std::vector<double> lp{std::log(0.8), std::log(0.5), std::log(0.2)};
    EXPECT_NEAR(geometric_mean_probability(lp), std::cbrt(0.08), 1e-15);
    EXPECT_NEAR(geometric_mean_probability(lp), 0.4309, 1e-4);
    EXPECT_THROW(geometric_mean_probability(std::vector<double>{}), Error);
}

TEST(Probe, AveragesOverRollouts) {
    auto p = zero_policy();
    Rng r(3);
    for (double& x : p.theta) x = 0.3 * r.normal();
    const std::vector<Trajectory> refs{formatted({kVocab.op(1)}, kVocab.answer(4)), formatted({kVocab.op(5), kVocab.op(2)}, kVocab.answer(1))};
    const auto all = probe_confidence(p, kVocab, question(), refs, ProbeKind::Likelihood);
    const auto a = probe_confidence(p, kVocab, question(), std::span(refs).subspan(0, 1), ProbeKind::Likelihood);
    const auto b = probe_confidence(p, kVocab, question(), std::span(refs).subspan(1, 1), ProbeKind::Likelihood);
    EXPECT_NEAR(all.confidence, 0.5 * (a.confidence + b.confidence), 1e-15);
    EXPECT_THROW(probe_confidence(p, kVocab, question(), std::vector<Trajectory>{}, ProbeKind::Likelihood), Error);
}

TEST(AnswerConfidence, UniformSnapshotIsOneOverAnswerRange) {
    const auto p = zero_policy();
    const std::vector<Trajectory> refs{formatted({kVocab.op(1)}, kVocab.answer(4))};
    EXPECT_NEAR(answer_confidence(p, kVocab, question(), refs).confidence, 1.0 / kVocab.modulus, 1e-12);
}

TEST(AnswerConfidence, SingleTokenProbability) {
    auto p = zero_policy();
    // renormalized over ten answers: 81 / (81 + 9) = 0.9
    p.theta[p.dims.b2_offset() + static_cast<std::size_t>(kVocab.answer(3))] = std::log(81.0);
    const std::vector<Trajectory> refs{formatted({kVocab.op(1)}, kVocab.answer(3))};
    EXPECT_NEAR(answer_confidence(p, kVocab, question(), refs).confidence, 0.9, 1e-12);
}

TEST(AnswerConfidence, TwoTokenSpanGeometricMean) {
    const std::vector<double> lp{std::log(0.5), std::log(0.5)};
    EXPECT_NEAR(geometric_mean_probability(lp), 0.5, 1e-15);
}

TEST(Gate, ClassifyBoundaries) {
    EXPECT_EQ(classify(0.7, 0.7), RpClass::PRP);
    EXPECT_EQ(classify(0.69, 0.7), RpClass::NRP);
    for (double c : {0.0, 0.3, 1.0}) EXPECT_EQ(classify(c, 0.0), RpClass::PRP);
}

TEST(Gate, BetaTable) {
    const auto g = paper_gate();
    EXPECT_NEAR(beta_lrc(0.8, g), 0.15, 1e-15);
    EXPECT_NEAR(beta_lrc(0.5, g), 0.075, 1e-15);
    EXPECT_NEAR(beta_lrc(0.1, g), 0.03, 1e-15);
    EXPECT_TRUE(check_beta_table().passed);
}

TEST(Gate, MonotoneAndBounded) {
    const auto g = paper_gate();
    double prev = -1.0;
    for (int i = 0; i <= 1000; ++i) {
        const double b = beta_lrc(i / 1000.0, g);
        EXPECT_GE(b, prev);
        EXPECT_GE(b, g.clip_min * g.beta0 - 1e-18);
        EXPECT_LE(b, g.beta0);
        prev = b;
    }
}

TEST(Gate, DegenerateConfigsAreStatic) {
    auto g = paper_gate();
    g.tau = 0.0;
    for (double c : {0.0, 0.2, 0.9}) EXPECT_EQ(beta_lrc(c, g), g.beta0);
    g = paper_gate();
    g.clip_min = 1.0;
    for (double c : {0.0, 0.2, 0.9}) EXPECT_EQ(beta_lrc(c, g), g.beta0);
}

TEST(Gate, Validation) {
    auto g = paper_gate();
    g.tau = 1.5;
    EXPECT_THROW(validate(g), Error);
    g = paper_gate();
    g.beta0 = 0.0;
    EXPECT_THROW(validate(g), Error);
    g = paper_gate();
    g.n_ref_rollouts = 0;
    EXPECT_THROW(validate(g), Error);
}

TEST(ScoreSamples, IndependentOfEvaluationOrder) {
    const auto st = generate_stream(designed_stream(), Rng(4, 1));
    PolicyDims d;
    d.vocab = st.vocab.size();
    d.embed = 8;
    d.hidden = 8;
    d.max_positions = 16;
    const PolicySnapshot snap(init_policy(d, Rng(5), 0.5), 0);
    const auto& task = st.tasks[1];
    std::vector<Sample> subset(task.train.begin(), task.train.begin() + 10);
    std::vector<Sample> reversed(subset.rbegin(), subset.rend());
    DecodeConfig dc;
    dc.max_len = 7;
    GateConfig g;
    g.n_ref_rollouts = 2;
    const auto a = score_samples(snap, st.vocab, task.spec, subset, g, dc, Rng(6));
    const auto b = score_samples(snap, st.vocab, task.spec, reversed, g, dc, Rng(6));
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& rb = b[a.size() - 1 - i];
        EXPECT_EQ(a[i].sample_id, rb.sample_id);
        EXPECT_EQ(a[i].confidence, rb.confidence);
        EXPECT_EQ(a[i].beta, rb.beta);
        EXPECT_GE(a[i].confidence, 0.0);
        EXPECT_LE(a[i].confidence, 1.0);
    }
}
