#pragma once

// Built-in oracle checks with frozen expected values. Shared by the verify
// subcommand, the unit tests and the acceptance binary.

#include <chrono>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rdbcl/config.hpp"
#include "rdbcl/metrics.hpp"

namespace rdbcl {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

// --- gradient oracle ----------------------------------------------------------------

struct GradcheckFixture {
    PolicyParams policy;
    std::vector<Sample> samples;  ///< one per group; groups point into this vector
    std::vector<RolloutGroup> groups;
    std::vector<double> betas;
};

/** A random small fixture: V in [8,16], d in [2,8], h in [2,16], 1-3
 * groups of 2-4 rollouts with random tokens (empty rollouts included),
 * random rewards, and a perturbed copy of the policy as reference. */
inline GradcheckFixture make_gradcheck_fixture(std::uint64_t index) {
    Rng r(index, 77);
    auto pick = [&r](int lo, int hi) { return lo + static_cast<int>(r.below(static_cast<std::uint64_t>(hi - lo + 1))); };
    GradcheckFixture f;
    PolicyDims d;
    d.vocab = pick(8, 16);
    d.embed = pick(2, 8);
    d.hidden = pick(2, 16);
    d.max_positions = 12;
    f.policy = init_policy(d, r.split(1), 0.5);
    PolicyParams ref = f.policy;
    Rng pr = r.split(2);
    for (double& x : ref.theta) x += 0.3 * pr.normal();

    const int B = pick(1, 3);
    f.samples.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        auto& s = f.samples[static_cast<std::size_t>(b)];
        s.id = static_cast<std::uint32_t>(b);
        const int q = pick(2, 4);
        for (int i = 0; i < q; ++i) s.question.push_back(pick(0, d.vocab - 1));
    }
    for (int b = 0; b < B; ++b) {
        RolloutGroup g;
        g.sample = &f.samples[static_cast<std::size_t>(b)];
        const int G = pick(2, 4);
        for (int i = 0; i < G; ++i) {
            Trajectory t;
            const int len = pick(0, 5);
            for (int k = 0; k < len; ++k) t.tokens.push_back(pick(0, d.vocab - 1));
            g.trajectories.push_back(t);
            g.rewards.push_back(static_cast<double>(pick(0, 3)) * 0.5 - 0.7);
            g.logp_ref.push_back(logprobs_under(ref, t, *g.sample));
        }
        g.advantages = group_advantages(g.rewards);
        refresh_current_logprobs(f.policy, g);
        f.groups.push_back(std::move(g));
        f.betas.push_back(0.3 * r.uniform());
    }
    return f;
}

/// Worst relative error between the analytic gradient and central differences.
inline double gradcheck_error(const GradcheckFixture& fx) {
    const auto analytic = rdbcl_loss_and_gradient(fx.policy, fx.groups, fx.betas).gradient;
    auto groups = fx.groups;
    PolicyParams p = fx.policy;
    const ScalarFn f = [&](std::span<const double> theta) {
        std::copy(theta.begin(), theta.end(), p.theta.begin());
        for (auto& g : groups) refresh_current_logprobs(p, g);
        return rdbcl_loss(groups, fx.betas);
    };
    const auto numeric = finite_diff_grad(f, fx.policy.theta, 1e-5);
    return max_relative_error(analytic, numeric);
}

inline CheckResult check_gradcheck(int fixtures = 20, double tol = 1e-4) {
    CheckResult c{"gradcheck", true, "", 0.0};
    double worst = 0.0;
    for (int i = 0; i < fixtures; ++i) {
        const double e = gradcheck_error(make_gradcheck_fixture(static_cast<std::uint64_t>(i + 1)));
        worst = std::max(worst, e);
        if (!(e <= tol)) {
            c.passed = false;
            c.detail += "fixture " + std::to_string(i + 1) + " error " + format_number(e) + "; ";
        }
    }
    c.detail += std::to_string(fixtures) + " fixtures, max relative error " + format_number(worst);
    return c;
}

// --- beta table ---------------------------------------------------------------------

struct BetaRow {
    double confidence;
    double beta;
};

/// beta0 0.15, tau 0.7, clip_min 0.2.
inline std::vector<BetaRow> beta_table_fixture() {
    return {{0.8, 0.15}, {0.7, 0.15}, {0.5, 0.075}, {0.1, 0.03}, {0.0, 0.03}};
}

inline CheckResult check_beta_table(const std::vector<BetaRow>& rows = beta_table_fixture()) {
    CheckResult c{"beta_table", true, "", 0.0};
    GateConfig g;
    g.beta0 = 0.15;
    g.tau = 0.7;
    g.clip_min = 0.2;
    for (const auto& row : rows) {
        const double b = beta_lrc(row.confidence, g);
        const bool ok = std::abs(b - row.beta) <= 1e-12;
        c.passed = c.passed && ok;
        c.detail += "C=" + format_number(row.confidence) + "->" + format_number(b) + (ok ? " " : " (expected " + format_number(row.beta) + ") ");
    }
    return c;
}

// --- paper-table metric fixtures ---------------------------------------------------

struct MetricFixture {
    std::string name;
    AccuracyMatrix matrix;  ///< a[checkpoint][task]
    double last;
    double bwt;
    double avg;  ///< the value our formula gives, asserted as is
};

/** Three-task detailed tables (rows checkpoints, columns VizWiz, ImageNet,
 * IconQA). The GRPO Avg prints as 41.32 in the source; the mean of the
 * matrix is 41.383. */
inline std::vector<MetricFixture> paper_metric_fixtures() {
    MetricFixture grpo{"grpo", {}, 45.40, -7.835, 41.383333};
    grpo.matrix.a = {{53.75, 19.76, 31.77}, {49.93, 62.12, 18.91}, {49.57, 50.63, 36.01}};
    MetricFixture rdbcl{"rdbcl", {}, 53.79, -4.83, 44.494444};
    rdbcl.matrix.a = {{54.58, 18.81, 32.53}, {52.40, 63.96, 16.79}, {50.54, 58.34, 52.50}};
    return {grpo, rdbcl};
}

inline CheckResult check_paper_metrics(const std::vector<MetricFixture>& fixtures = paper_metric_fixtures()) {
    CheckResult c{"paper_metrics", true, "", 0.0};
    for (const auto& f : fixtures) {
        try {
            const auto m = compute_cl_metrics(f.matrix);
            const bool ok = std::abs(m.last - f.last) <= 0.01 && m.bwt && std::abs(*m.bwt - f.bwt) <= 0.01 &&
                            std::abs(m.avg - f.avg) <= 0.01;
            c.passed = c.passed && ok;
            std::ostringstream os;
            os.precision(4);
            os << std::fixed << f.name << ": last " << m.last << " bwt " << m.bwt.value_or(0.0) << " avg " << m.avg
               << (ok ? "; " : " MISMATCH; ");
            c.detail += os.str();
        } catch (const Error& e) {
            c.passed = false;
            c.detail += f.name + ": " + e.what() + "; ";
        }
    }
    return c;
}

// --- pass@k ------------------------------------------------------------------------

inline CheckResult check_passk_mc(int resamples = 100000, double tol = 0.02) {
    CheckResult c{"passk_mc", true, "", 0.0};
    double worst = 0.0;
    const int n = 8;
    for (int cc = 0; cc <= n; ++cc) {
        double prev = -1.0;
        for (int k : {1, 2, 4, 8}) {
            const double exact = pass_at_k(n, cc, k);
            const double mc = pass_at_k_monte_carlo(n, cc, k, resamples, Rng(static_cast<std::uint64_t>(cc * 16 + k), 9));
            worst = std::max(worst, std::abs(exact - mc));
            if (std::abs(exact - mc) > tol || exact < prev) {
                c.passed = false;
                c.detail += "c=" + std::to_string(cc) + " k=" + std::to_string(k) + " failed; ";
            }
            prev = exact;
        }
    }
    c.detail += "max |exact - mc| " + format_number(worst);
    return c;
}

// --- reward verifier ---------------------------------------------------------------

struct RewardFixture {
    std::string name;
    std::vector<Token> trajectory;
    double expected;
};

/// Ground truth is answer(3) under a 10-digit vocabulary.
inline std::pair<VocabLayout, Sample> reward_fixture_context() {
    VocabLayout v{10, 2, 3, 8};
    Sample s;
    s.ground_truth = v.answer(3);
    return {v, s};
}

inline std::vector<RewardFixture> reward_fixtures() {
    const auto [v, s] = reward_fixture_context();
    const Token ro = v.reason_open(), rc = v.reason_close(), ao = v.answer_open(), ac = v.answer_close();
    const Token good = v.answer(3), bad = v.answer(4), op = v.op(0);
    return {
        {"perfect_correct", {ro, op, rc, ao, good, ac}, 1.7},
        {"perfect_wrong", {ro, op, rc, ao, bad, ac}, 0.7},
        {"partial_correct", {op, ro, rc, ao, good, ac}, 1.0},
        {"partial_wrong", {op, ro, rc, ao, bad, ac}, 0.0},
        {"violation_correct", {ro, op, ao, good, ac}, 0.3},
        {"violation_wrong", {op, op}, -0.7},
    };
}

inline CheckResult check_verifier_table(const std::vector<RewardFixture>& fixtures = reward_fixtures()) {
    CheckResult c{"verifier_table", true, "", 0.0};
    const auto [v, s] = reward_fixture_context();
    for (const auto& f : fixtures) {
        const double r = verify(v, f.trajectory, s).total;
        const bool ok = std::abs(r - f.expected) <= 1e-12;
        c.passed = c.passed && ok;
        c.detail += f.name + "=" + format_number(r) + (ok ? " " : " (expected " + format_number(f.expected) + ") ");
    }
    return c;
}

// --- static reduction ----------------------------------------------------------------

struct TraceSummary {
    std::vector<double> losses;
    std::uint64_t final_hash = 0;
};

inline TraceSummary trace_of(const StreamRun& run) {
    TraceSummary t;
    for (const auto& task : run.tasks)
        for (const auto& s : task.steps) t.losses.push_back(s.loss);
    if (!run.checkpoints.empty()) t.final_hash = run.checkpoints.back().hash();
    return t;
}

inline bool bit_identical(const TraceSummary& a, const TraceSummary& b) {
    if (a.final_hash != b.final_hash || a.losses.size() != b.losses.size()) return false;
    for (std::size_t i = 0; i < a.losses.size(); ++i)
        if (std::memcmp(&a.losses[i], &b.losses[i], sizeof(double)) != 0) return false;
    return true;
}

/** rdbcl with tau 0 against grpo_static with k 1 on a one-task stream.
 * Also ewc and lwf with zero weight, which reduce to the same objective. */
inline CheckResult check_static_reduction(std::uint64_t seed = 1, int warm_steps = 300, int steps = 100) {
    CheckResult c{"static_reduction", true, "", 0.0};
    ExperimentConfig cfg;
    cfg.stream.num_tasks = 1;
    cfg.warm_start.steps = warm_steps;
    cfg.train.steps_per_task = steps;
    resolve(cfg);
    const Stream st = generate_stream(cfg.stream, Rng(seed, 1));
    const PolicySnapshot init(warm_start(st, policy_dims(cfg, st.vocab), cfg.warm_start, Rng(seed, 2)), 0);
    auto run_with = [&](Method m, double tau) {
        TrainConfig t = cfg.train;
        t.method = m;
        t.gate.tau = tau;
        t.static_k = 1.0;
        t.ewc_lambda = 0.0;
        t.lwf_lambda = 0.0;
        return trace_of(run_task_sequence(st, t, init, seed));
    };
    const auto base = run_with(Method::GrpoStatic, 0.7);
    const std::vector<std::pair<std::string, TraceSummary>> others = {
        {"rdbcl(tau=0)", run_with(Method::Rdbcl, 0.0)},
        {"ewc(0)", run_with(Method::Ewc, 0.7)},
        {"lwf(0)", run_with(Method::Lwf, 0.7)},
    };
    for (const auto& [name, t] : others) {
        const bool ok = bit_identical(base, t);
        c.passed = c.passed && ok;
        c.detail += name + (ok ? " identical; " : " DIFFERS; ");
    }
    c.detail += std::to_string(base.losses.size()) + " steps";
    return c;
}

// --- registry ------------------------------------------------------------------------

struct NamedCheck {
    std::string name;
    std::function<CheckResult()> run;
};

inline std::vector<NamedCheck> builtin_checks() {
    return {
        {"gradcheck", [] { return check_gradcheck(); }},
        {"beta_table", [] { return check_beta_table(); }},
        {"paper_metrics", [] { return check_paper_metrics(); }},
        {"passk_mc", [] { return check_passk_mc(); }},
        {"verifier_table", [] { return check_verifier_table(); }},
        {"static_reduction", [] { return check_static_reduction(); }},
    };
}

/// Runs the named checks (all when `only` is empty). A check that throws fails with its message.
inline std::vector<CheckResult> run_checks(const std::vector<std::string>& only = {}) {
    const auto all = builtin_checks();
    for (const auto& n : only) {
        bool known = false;
        for (const auto& c : all) known = known || c.name == n;
        if (!known) throw ConfigError("unknown check '" + n + "'");
    }
    std::vector<CheckResult> out;
    for (const auto& c : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        CheckResult r;
        try {
            r = c.run();
        } catch (const std::exception& e) {
            r = {c.name, false, e.what(), 0.0};
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace rdbcl
