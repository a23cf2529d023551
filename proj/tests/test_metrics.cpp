#include <gtest/gtest.h>

#include <cmath>

#include "rdbcl/metrics.hpp"
#include "rdbcl/oracles.hpp"

using namespace rdbcl;

namespace {

AccuracyMatrix matrix(std::vector<std::vector<double>> a) {
    AccuracyMatrix m;
    m.a = std::move(a);
    return m;
}

} // namespace

TEST(ClMetrics, PaperGrpoMatrix) {
    const auto m = compute_cl_metrics(matrix({{53.75, 19.76, 31.77}, {49.93, 62.12, 18.91}, {49.57, 50.63, 36.01}}));
    EXPECT_NEAR(m.last, 45.40, 0.01);
    ASSERT_TRUE(m.bwt);
    EXPECT_NEAR(*m.bwt, -7.835, 1e-9);
    EXPECT_NEAR(m.finetune, (53.75 + 62.12 + 36.01) / 3.0, 1e-9);
}

TEST(ClMetrics, PaperRdbclMatrix) {
    const auto m = compute_cl_metrics(matrix({{54.58, 18.81, 32.53}, {52.40, 63.96, 16.79}, {50.54, 58.34, 52.50}}));
    EXPECT_NEAR(m.last, 53.79, 0.01);
    ASSERT_TRUE(m.bwt);
    EXPECT_NEAR(*m.bwt, -4.83, 0.01);
}

TEST(ClMetrics, PaperFixtureCheckPasses) {
    const auto r = check_paper_metrics();
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(ClMetrics, ConstantMatrix) {
    const auto m = compute_cl_metrics(matrix({{42, 42, 42}, {42, 42, 42}, {42, 42, 42}}));
    EXPECT_EQ(m.avg, 42.0);
    EXPECT_EQ(m.last, 42.0);
    EXPECT_EQ(m.finetune, 42.0);
    EXPECT_EQ(*m.bwt, 0.0);
}

TEST(ClMetrics, NoForgettingGivesZeroBwt) {
    const auto m = compute_cl_metrics(matrix({{60, 10, 5}, {70, 80, 20}, {60, 80, 90}}));
    EXPECT_EQ(*m.bwt, 0.0);
}

TEST(ClMetrics, SingleTaskHasNoBwt) {
    const auto m = compute_cl_metrics(matrix({{75}}));
    EXPECT_EQ(m.avg, 75.0);
    EXPECT_FALSE(m.bwt);
}

TEST(ClMetrics, PermutationConsistent) {
    // relabel tasks 1..3 by a cyclic shift of columns and of checkpoints
    const std::vector<std::vector<double>> a{{10, 20, 30}, {40, 50, 60}, {70, 80, 95}};
    const std::vector<int> perm{2, 0, 1};
    std::vector<std::vector<double>> b(3, std::vector<double>(3));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) b[perm[i]][perm[j]] = a[i][j];
    EXPECT_NEAR(compute_cl_metrics(matrix(a)).avg, compute_cl_metrics(matrix(b)).avg, 1e-12);
}

TEST(ClMetrics, Errors) {
    EXPECT_THROW(compute_cl_metrics(matrix({{1, 2}, {3}})), Error);
    EXPECT_THROW(compute_cl_metrics(matrix({{101}})), Error);
    EXPECT_THROW(compute_cl_metrics(matrix({})), Error);
}

TEST(PassAtK, Examples) {
    EXPECT_EQ(pass_at_k(8, 8, 1), 1.0);
    for (int k = 1; k <= 8; ++k) EXPECT_EQ(pass_at_k(8, 0, k), 0.0);
    EXPECT_NEAR(pass_at_k(8, 2, 4), 11.0 / 14.0, 1e-12);
    EXPECT_NEAR(pass_at_k(8, 3, 1), 3.0 / 8.0, 1e-12);
    EXPECT_THROW(pass_at_k(8, 2, 9), Error);
    EXPECT_THROW(pass_at_k(8, 9, 1), Error);
}

TEST(PassAtK, LargeNIsStable) {
    const double v = pass_at_k(2000, 3, 500);
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
    EXPECT_NEAR(v, 1.0 - (1500.0 * 1499.0 * 1498.0) / (2000.0 * 1999.0 * 1998.0), 1e-9);
}

TEST(PassAtK, MonotoneInK) {
    for (int c = 0; c <= 16; ++c) {
        double prev = -1.0;
        for (int k = 1; k <= 16; ++k) {
            const double v = pass_at_k(16, c, k);
            EXPECT_GE(v, prev);
            prev = v;
        }
    }
}

TEST(PassAtK, MatchesMonteCarlo) {
    const auto r = check_passk_mc();
    EXPECT_TRUE(r.passed) << r.detail;
    EXPECT_NEAR(pass_at_k_monte_carlo(8, 2, 4, 100000, Rng(3)), 11.0 / 14.0, 0.02);
}

TEST(PassAtK, DatasetMean) {
    const std::vector<PassKRecord> items{{8, 8}, {8, 0}};
    EXPECT_NEAR(dataset_pass_at_k(items, 1), 0.5, 1e-15);
    EXPECT_THROW(dataset_pass_at_k(std::vector<PassKRecord>{}, 1), Error);
}

TEST(Separability, AucExamples) {
    EXPECT_EQ(auc(std::vector<double>{0.9, 0.8, 0.3, 0.4}, {true, true, false, false}), 1.0);
    EXPECT_EQ(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, {true, true, false, false}), 0.0);
    EXPECT_EQ(auc(std::vector<double>{0.5, 0.5}, {true, false}), 0.5);
    EXPECT_FALSE(auc(std::vector<double>{0.5, 0.6}, {true, true}));
}

TEST(Separability, IdenticalDistributionsNearHalf) {
    Rng r(4);
    std::vector<double> s;
    std::vector<bool> l;
    for (int i = 0; i < 20000; ++i) {
        s.push_back(r.uniform());
        l.push_back(i % 2 == 0);
    }
    EXPECT_NEAR(*auc(s, l), 0.5, 0.02);
}

TEST(Separability, Histograms) {
    const auto sep = confidence_separability(std::vector<double>{0.05, 0.95, 1.0, 0.55}, {true, true, false, false}, 10);
    EXPECT_EQ(sep.positive_hist[0], 1);
    EXPECT_EQ(sep.positive_hist[9], 1);
    EXPECT_EQ(sep.negative_hist[9], 1);
    EXPECT_EQ(sep.negative_hist[5], 1);
    EXPECT_THROW(histogram(std::vector<double>{0.5}, 0), Error);
}

TEST(Drift, IdenticalCheckpointsHaveZeroDrift) {
    PolicyDims d;
    d.vocab = 10;
    d.embed = 4;
    d.hidden = 6;
    d.max_positions = 8;
    const auto p = init_policy(d, Rng(5), 0.5);
    const std::vector<std::vector<Token>> probes{{1, 2}, {3, 4, 5}};
    const auto r = representation_drift(p, p, probes);
    for (double x : r.distances) EXPECT_EQ(x, 0.0);
    EXPECT_EQ(r.mean_distance, 0.0);
    auto other = d;
    other.hidden = 7;
    EXPECT_THROW(representation_drift(p, init_policy(other, Rng(5)), probes), Error);
}

TEST(Drift, ShiftedEmbeddingRowIsLocal) {
    PolicyDims d;
    d.vocab = 10;
    d.embed = 4;
    d.hidden = 6;
    d.max_positions = 8;
    const auto a = init_policy(d, Rng(6), 0.5);
    auto b = a;
    const Token shifted = 7;
    for (int k = 0; k < d.embed; ++k) b.theta[d.tok_emb_offset() + static_cast<std::size_t>(shifted * d.embed + k)] += 0.5;
    const std::vector<std::vector<Token>> probes{{1, 2, 3}, {7, 2, 3}, {4, 5}, {1, 7}};
    const auto r = representation_drift(a, b, probes);
    EXPECT_EQ(r.distances[0], 0.0);
    EXPECT_GT(r.distances[1], 0.0);
    EXPECT_EQ(r.distances[2], 0.0);
    EXPECT_GT(r.distances[3], 0.0);
    EXPECT_EQ(r.pairwise_change[0][2], 0.0);
}
