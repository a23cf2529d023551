#include <gtest/gtest.h>

#include <cmath>

#include "rdbcl/numerics.hpp"

using namespace rdbcl;

TEST(LogSoftmax, UniformPair) {
    const auto lp = log_softmax(std::vector<double>{0.0, 0.0});
    EXPECT_NEAR(lp[0], -std::log(2.0), 1e-12);
    EXPECT_NEAR(lp[1], -std::log(2.0), 1e-12);
}

TEST(LogSoftmax, LargeLogitsDoNotOverflow) {
    const auto lp = log_softmax(std::vector<double>{1000.0, 1000.0});
    EXPECT_NEAR(lp[0], -std::log(2.0), 1e-12);
    EXPECT_NEAR(lp[1], -std::log(2.0), 1e-12);
}

TEST(LogSoftmax, HandEvaluated) {
    const auto lp = log_softmax(std::vector<double>{0.0, std::log(3.0)});
    EXPECT_NEAR(lp[0], -std::log(4.0), 1e-12);
    EXPECT_NEAR(lp[1], std::log(0.75), 1e-12);
}

TEST(LogSoftmax, ShiftInvariant) {
    Rng r(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(7), y(7);
        const double c = 100.0 * (r.uniform() - 0.5);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = 10.0 * r.normal();
            y[i] = x[i] + c;
        }
        const auto a = log_softmax(x), b = log_softmax(y);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    }
}

TEST(FiniteDiff, Quadratic) {
    const ScalarFn f = [](std::span<const double> t) { return t[0] * t[0]; };
    const auto g = finite_diff_grad(f, std::vector<double>{3.0});
    EXPECT_NEAR(g[0], 6.0, 1e-8);
}

TEST(FiniteDiff, ConstantIsZero) {
    const ScalarFn f = [](std::span<const double>) { return 4.0; };
    for (double g : finite_diff_grad(f, std::vector<double>{1.0, -2.0, 0.5})) EXPECT_EQ(g, 0.0);
}

TEST(FiniteDiff, Exponential) {
    const ScalarFn f = [](std::span<const double> t) { return std::exp(t[0]); };
    EXPECT_NEAR(finite_diff_grad(f, std::vector<double>{0.0})[0], 1.0, 1e-9);
}

TEST(FiniteDiff, RandomQuadraticsMatchAnalytic) {
    Rng r(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 4;
        std::vector<double> A(n * n), b(n), x(n);
        for (auto& v : A) v = r.normal();
        for (auto& v : b) v = r.normal();
        for (auto& v : x) v = r.normal();
        const ScalarFn f = [&](std::span<const double> t) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                s += b[i] * t[i];
                for (std::size_t j = 0; j < n; ++j) s += 0.5 * A[i * n + j] * t[i] * t[j];
            }
            return s;
        };
        const auto g = finite_diff_grad(f, x);
        for (std::size_t i = 0; i < n; ++i) {
            double exact = b[i];
            for (std::size_t j = 0; j < n; ++j) exact += 0.5 * (A[i * n + j] + A[j * n + i]) * x[j];
            EXPECT_NEAR(g[i], exact, 1e-7);
        }
    }
}

TEST(FiniteDiff, NonFiniteNamesCoordinate) {
    const ScalarFn f = [](std::span<const double> t) { return t[1] > 1.0 ? std::log(-1.0) : 0.0; };
    try {
        finite_diff_grad(f, std::vector<double>{0.0, 1.0});
        FAIL() << "expected NonFiniteError";
    } catch (const NonFiniteError& e) {
        EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos);
    }
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42, 7), b(42, 7);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SplitDoesNotAdvanceParent) {
    Rng a(1), b(1);
    (void)a.split(3).next_u64();
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_NE(Rng(1).split(1).next_u64(), Rng(1).split(2).next_u64());
}

TEST(Rng, BelowStaysInRange) {
    Rng r(3);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 5000; ++i) ++counts[r.below(5)];
    for (int c : counts) EXPECT_GT(c, 800);
    EXPECT_THROW(r.below(0), Error);
}

TEST(Rng, NormalMoments) {
    Rng r(9);
    std::vector<double> x(20000);
    for (auto& v : x) v = r.normal();
    EXPECT_NEAR(mean(x), 0.0, 0.03);
    EXPECT_NEAR(stddev(x), 1.0, 0.03);
}

TEST(DenseVector, RejectsNonFinite) {
    DenseVector v(3);
    EXPECT_THROW(v.set(0, std::nan("")), NonFiniteError);
    EXPECT_THROW(DenseVector(std::vector<double>{1.0, INFINITY}), NonFiniteError);
    v.set(1, 2.0);
    EXPECT_DOUBLE_EQ(v.dot(std::vector<double>{1.0, 1.0, 1.0}), 2.0);
}

TEST(MatrixView, Matvec) {
    std::vector<double> m{1, 2, 3, 4, 5, 6};
    std::vector<double> out(2);
    matvec(ConstMatrixView{m, 2, 3}, std::vector<double>{1, 0, -1}, std::vector<double>{0.5, 0.5}, out);
    EXPECT_DOUBLE_EQ(out[0], -1.5);
    EXPECT_DOUBLE_EQ(out[1], -1.5);
}

TEST(Stats, RelativeErrorAndHash) {
    EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-9);
    EXPECT_DOUBLE_EQ(relative_error(200.0, 100.0), 0.5);
    const std::vector<double> a{1.0, 2.0}, b{1.0, 2.0}, c{1.0, 2.0000001};
    EXPECT_EQ(hash_doubles(a), hash_doubles(b));
    EXPECT_NE(hash_doubles(a), hash_doubles(c));
}
