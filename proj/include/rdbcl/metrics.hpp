#pragma once

// Continual-learning metrics over an accuracy matrix, Pass@k, rank AUC and
// hidden-layer drift.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "rdbcl/numerics.hpp"
#include "rdbcl/policy.hpp"

namespace rdbcl {

/** a[i][j]: accuracy (percent) on task j evaluated at checkpoint i.
 *
 * `zero_shot`, when present, is the warm-start policy's row. It is reported
 * but does not enter any metric. */
struct AccuracyMatrix {
    std::vector<std::vector<double>> a;
    std::vector<double> zero_shot;

    std::size_t size() const { return a.size(); }
    double operator()(std::size_t i, std::size_t j) const { return a.at(i).at(j); }
};

inline void validate(const AccuracyMatrix& m) {
    for (const auto& row : m.a) {
        if (row.size() != m.a.size()) throw Error("accuracy matrix is not square");
        for (double x : row)
            if (!(x >= 0.0 && x <= 100.0)) throw Error("accuracy matrix entry outside [0,100]");
    }
}

struct ClMetrics {
    double avg = 0.0;
    double last = 0.0;
    double finetune = 0.0;
    std::optional<double> bwt;  ///< needs T >= 2
};

/**
 *   avg      = mean over all T x T entries
 *   last     = mean_j a[T][j]
 *   finetune = mean_j a[j][j]
 *   bwt      = 1/(T-1) sum_{j<T} (a[T][j] - a[j][j])
 */
inline ClMetrics compute_cl_metrics(const AccuracyMatrix& m) {
    validate(m);
    const std::size_t T = m.size();
    if (T == 0) throw Error("compute_cl_metrics: empty matrix");
    ClMetrics out;
    double total = 0.0;
    for (const auto& row : m.a)
        for (double x : row) total += x;
    out.avg = total / static_cast<double>(T * T);
    out.last = mean(m.a[T - 1]);
    double diag = 0.0;
    for (std::size_t j = 0; j < T; ++j) diag += m.a[j][j];
    out.finetune = diag / static_cast<double>(T);
    if (T >= 2) {
        double s = 0.0;
        for (std::size_t j = 0; j + 1 < T; ++j) s += m.a[T - 1][j] - m.a[j][j];
        out.bwt = s / static_cast<double>(T - 1);
    }
    return out;
}

/// Unbiased 1 - C(n-c, k) / C(n, k), evaluated with lgamma.
inline double pass_at_k(int n, int c, int k) {
    if (n < 1 || c < 0 || c > n) throw Error("pass_at_k: need 0 <= c <= n and n >= 1");
    if (k < 1 || k > n) throw Error("pass_at_k: need 1 <= k <= n");
    if (n - c < k) return 1.0;
    if (c == 0) return 0.0;
    auto lchoose = [](int a, int b) {
        return std::lgamma(a + 1.0) - std::lgamma(b + 1.0) - std::lgamma(a - b + 1.0);
    };
    return 1.0 - std::exp(lchoose(n - c, k) - lchoose(n, k));
}

struct PassKRecord {
    int n = 0;
    int c = 0;
};

inline double dataset_pass_at_k(std::span<const PassKRecord> items, int k) {
    if (items.empty()) throw Error("dataset_pass_at_k: no items");
    double s = 0.0;
    for (const auto& r : items) s += pass_at_k(r.n, r.c, k);
    return s / static_cast<double>(items.size());
}

/// Monte-Carlo Pass@k: draw k of n without replacement, count hits.
inline double pass_at_k_monte_carlo(int n, int c, int k, int resamples, Rng rng) {
    if (k < 1 || k > n || c < 0 || c > n) throw Error("pass_at_k_monte_carlo: bad arguments");
    std::vector<int> items(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) items[static_cast<std::size_t>(i)] = i < c ? 1 : 0;
    int hits = 0;
    for (int r = 0; r < resamples; ++r) {
        // partial Fisher-Yates over the first k slots
        bool any = false;
        for (int i = 0; i < k; ++i) {
            const auto j = static_cast<std::size_t>(i) + static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n - i)));
            std::swap(items[static_cast<std::size_t>(i)], items[j]);
            any = any || items[static_cast<std::size_t>(i)] == 1;
        }
        hits += any;
    }
    return static_cast<double>(hits) / static_cast<double>(resamples);
}

/** Rank AUC of `scores` as a predictor of `labels`; ties count one half.
 * Undefined (nullopt) when only one class is present. */
inline std::optional<double> auc(std::span<const double> scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) throw Error("auc: scores and labels differ in length");
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] ? pos : neg).push_back(scores[i]);
    if (pos.empty() || neg.empty()) return std::nullopt;
    std::sort(neg.begin(), neg.end());
    double wins = 0.0;
    for (double p : pos) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
        const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
        wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

/// Equal-width histogram of values in [0,1]; the last bin is closed.
inline std::vector<int> histogram(std::span<const double> values, int bins) {
    if (bins < 1) throw Error("histogram: bins must be >= 1");
    std::vector<int> h(static_cast<std::size_t>(bins), 0);
    for (double v : values) {
        const double c = std::clamp(v, 0.0, 1.0);
        const int b = std::min(bins - 1, static_cast<int>(c * bins));
        ++h[static_cast<std::size_t>(b)];
    }
    return h;
}

struct Separability {
    std::optional<double> auc;
    std::vector<int> positive_hist;
    std::vector<int> negative_hist;
};

inline Separability confidence_separability(std::span<const double> scores, const std::vector<bool>& labels,
                                            int bins = 10) {
    Separability s;
    s.auc = auc(scores, labels);
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] ? pos : neg).push_back(scores[i]);
    s.positive_hist = histogram(pos, bins);
    s.negative_hist = histogram(neg, bins);
    return s;
}

struct DriftResult {
    std::vector<double> distances;                   ///< per probe sample
    std::vector<std::vector<double>> pairwise_change;  ///< |D_b(i,j) - D_a(i,j)|
    double mean_distance = 0.0;
};

/// Hidden-activation shift between two checkpoints on a fixed set of prefixes.
inline DriftResult representation_drift(const PolicyParams& a, const PolicyParams& b,
                                        std::span<const std::vector<Token>> probes) {
    if (!(a.dims == b.dims)) throw Error("representation_drift: architecture mismatch");
    std::vector<std::vector<double>> ha, hb;
    for (const auto& p : probes) {
        ha.push_back(hidden_activation(a, p));
        hb.push_back(hidden_activation(b, p));
    }
    auto dist = [](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
        return std::sqrt(s);
    };
    DriftResult r;
    const std::size_t n = probes.size();
    for (std::size_t i = 0; i < n; ++i) r.distances.push_back(dist(ha[i], hb[i]));
    r.pairwise_change.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double c = std::abs(dist(hb[i], hb[j]) - dist(ha[i], ha[j]));
            r.pairwise_change[i][j] = r.pairwise_change[j][i] = c;
        }
    r.mean_distance = mean(r.distances);
    return r;
}

} // namespace rdbcl
