#pragma once

// Sequential training over a task stream. Every method shares the same
// rollout / batch / evaluation RNG streams, so a method whose extra terms are
// disabled (tau = 0, lambda = 0) reproduces static GRPO bit for bit.

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rdbcl/metrics.hpp"
#include "rdbcl/numerics.hpp"
#include "rdbcl/policy.hpp"
#include "rdbcl/portability.hpp"
#include "rdbcl/rlvr.hpp"
#include "rdbcl/tasks.hpp"

namespace rdbcl {

enum class Method { Rdbcl, GrpoStatic, Ewc, Lwf, Sft };

inline const char* to_string(Method m) {
    switch (m) {
    case Method::Rdbcl: return "rdbcl";
    case Method::GrpoStatic: return "grpo_static";
    case Method::Ewc: return "ewc";
    case Method::Lwf: return "lwf";
    case Method::Sft: return "sft";
    }
    return "?";
}

inline std::optional<Method> parse_method(const std::string& s) {
    for (Method m : {Method::Rdbcl, Method::GrpoStatic, Method::Ewc, Method::Lwf, Method::Sft})
        if (s == to_string(m)) return m;
    return std::nullopt;
}

struct WarmStartConfig {
    int steps = 1500;
    int batch_size = 32;
    double drill_fraction = 0.5;    ///< share of examples whose ops are random and masked out of the loss
    bool probe_supervision = false; ///< also teach PROBE -> TRUE/FALSE on correct / corrupted reasoning
    bool shuffle_positions = true;  ///< present each question under a random position order
    double ambiguous_fraction = 0.2; ///< unowned key, ops drawn uniformly and trained
    /// Per-coordinate std of the stream-key embedding rows, which stay frozen
    /// during warm start. Comparable to trained rows, so new keys are distinct inputs.
    double novel_key_scale = 1.5;
    double init_scale = 0.02;  ///< std of the initial weights
    OptimizerConfig optimizer{3e-2, 0.01, 0.9, 0.95, 1e-8, 0.0, 1500};
};

struct TrainConfig {
    Method method = Method::Rdbcl;
    GateConfig gate;
    double static_k = 1.0;
    double ewc_lambda = 0.0;
    double lwf_lambda = 0.0;
    int fisher_samples = 200;
    int group_size = 8;
    int batch_size = 8;
    DecodeConfig rollout;
    OptimizerConfig optimizer;
    int steps_per_task = 300;
    double early_stop_reward = 1.6;
    int early_stop_window = 20;
    RewardVerifier verifier;
    int passk_n = 8;
    std::vector<int> passk_ks = {1, 2, 4, 8};
};

inline void validate(const TrainConfig& c) {
    validate(c.gate);
    check_decode(c.rollout);
    if (c.group_size < 2) throw Error("train: group_size must be >= 2");
    if (c.batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (c.steps_per_task < 0) throw Error("train: steps_per_task must be >= 0");
    if (!(c.static_k >= 0.0)) throw Error("train: static_k must be >= 0");
    if (!(c.ewc_lambda >= 0.0) || !(c.lwf_lambda >= 0.0)) throw Error("train: penalty weights must be >= 0");
    if (c.fisher_samples < 1) throw Error("train: fisher_samples must be >= 1");
    if (c.passk_n < 1) throw Error("train: passk_n must be >= 1");
    for (int k : c.passk_ks)
        if (k < 1 || k > c.passk_n) throw Error("train: every pass@k k must be in [1, passk_n]");
}

// --- supervised pieces --------------------------------------------------------

/// A teacher-forced target: the loss covers `tokens[i]` where mask[i] != 0.
struct SupervisedExample {
    std::vector<Token> question;
    std::vector<Token> tokens;
    std::vector<double> mask;
};

struct SupervisedLoss {
    double loss = 0.0;
    std::vector<double> gradient;
};

/// Mean masked negative log-likelihood over all supervised tokens in the batch.
inline SupervisedLoss nll_loss_and_gradient(const PolicyParams& p, std::span<const SupervisedExample> batch) {
    SupervisedLoss out;
    out.gradient.assign(p.dims.param_count(), 0.0);
    double count = 0.0;
    for (const auto& ex : batch)
        for (double m : ex.mask) count += m;
    if (count == 0.0) return out;
    for (const auto& ex : batch) {
        const auto lp = logprobs_under(p, ex.tokens, ex.question);
        std::vector<double> w(ex.tokens.size());
        for (std::size_t t = 0; t < lp.size(); ++t) {
            out.loss -= ex.mask[t] * lp[t] / count;
            w[t] = -ex.mask[t] / count;
        }
        const auto g = backprop(p, ex.tokens, ex.question, w);
        for (std::size_t k = 0; k < g.size(); ++k) out.gradient[k] += g[k];
    }
    return out;
}

inline SupervisedExample oracle_example(const VocabLayout& v, const Sample& s) {
    SupervisedExample ex{s.question, oracle_trajectory(v, s), {}};
    ex.mask.assign(ex.tokens.size(), 1.0);
    return ex;
}

/** Random ops with the answer they actually compute; op tokens are masked so
 * only the delimiters and the answer are learned. Ties the answer to the
 * emitted reasoning. */
inline SupervisedExample drill_example(const VocabLayout& v, const StreamConfig& c, const Sample& s, Rng& rng) {
    std::vector<int> ops;
    const int len = c.rule_len_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.rule_len_max - c.rule_len_min + 1)));
    for (int i = 0; i < len; ++i) ops.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_ops))));
    SupervisedExample ex{s.question, oracle_trajectory(v, ops, v.answer(run_rule(ops, s.state, v.modulus))), {}};
    ex.mask.assign(ex.tokens.size(), 1.0);
    for (std::size_t i = 1; i <= ops.size(); ++i) ex.mask[i] = 0.0;
    return ex;
}

/// question + reasoning + PROBE -> TRUE for the oracle ops, FALSE for a corrupted op sequence.
inline SupervisedExample probe_example(const VocabLayout& v, const StreamConfig& c, const Sample& s, Rng& rng) {
    const bool positive = rng.uniform() < 0.5;
    std::vector<int> ops = s.rule;
    if (!positive) {
        const auto target = run_rule(s.rule, s.state, v.modulus);
        for (int attempt = 0; attempt < 50; ++attempt) {
            ops[rng.below(ops.size())] = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_ops)));
            if (run_rule(ops, s.state, v.modulus) != target) break;
        }
    }
    auto traj = oracle_trajectory(v, ops, v.answer(run_rule(ops, s.state, v.modulus)));
    SupervisedExample ex;
    ex.question = s.question;
    ex.question.insert(ex.question.end(), traj.begin(), traj.end());
    ex.question.push_back(v.probe());
    const bool correct = run_rule(ops, s.state, v.modulus) == run_rule(s.rule, s.state, v.modulus);
    ex.tokens = {correct ? v.true_token() : v.false_token()};
    ex.mask = {1.0};
    return ex;
}

/** Supervised warm start on the pretraining families.
 *
 * Every method of a seed starts from this same policy. */
inline PolicyParams warm_start(const Stream& st, const PolicyDims& dims, const WarmStartConfig& wc, Rng rng) {
    PolicyParams p = init_policy(dims, rng.split(0), wc.init_scale);
    const int owned = static_cast<int>(st.pretrain.spec.keys.size());
    {
        Rng kr = rng.split(2);
        const auto E = p.dims.tok_emb_offset();
        for (int k = owned; k < st.vocab.num_keys; ++k)
            for (int c = 0; c < dims.embed; ++c)
                p.theta[E + static_cast<std::size_t>(st.vocab.key(k)) * static_cast<std::size_t>(dims.embed) +
                        static_cast<std::size_t>(c)] = wc.novel_key_scale * kr.normal();
    }
    std::vector<const Sample*> pool;
    for (const auto& s : st.pretrain.train) pool.push_back(&s);
    if (pool.empty() || wc.steps <= 0) return p;
    OptimizerConfig oc = wc.optimizer;
    oc.total_steps = wc.steps;
    OptimizerState opt(oc, p.theta.size());
    Rng r = rng.split(1);
    for (int step = 0; step < wc.steps; ++step) {
        std::vector<SupervisedExample> batch;
        for (int b = 0; b < wc.batch_size; ++b) {
            Sample s = *pool[r.below(pool.size())];
            const double u = r.uniform();
            const bool ambiguous = u >= 1.0 - wc.ambiguous_fraction;
            if (ambiguous) {
                // A key no pretraining family owns, with random ops: the MLE
                // target is a flat prior over programs for unfamiliar keys.
                const int spare = st.vocab.num_keys - owned;
                for (auto& t : s.question) {
                    if (st.vocab.classify(t) != TokenClass::Key) continue;
                    t = spare > 0 ? st.vocab.key(owned + static_cast<int>(r.below(static_cast<std::uint64_t>(spare))))
                                  : st.vocab.filler(static_cast<int>(r.below(static_cast<std::uint64_t>(st.config.fillers_per_domain))));
                }
            }
            if (wc.shuffle_positions) r.shuffle(s.question);
            if (ambiguous) {
                auto ex = drill_example(st.vocab, st.config, s, r);
                std::fill(ex.mask.begin(), ex.mask.end(), 1.0);
                batch.push_back(std::move(ex));
            } else if (wc.probe_supervision && b % 4 == 3)
                batch.push_back(probe_example(st.vocab, st.config, s, r));
            else if (u < wc.drill_fraction)
                batch.push_back(drill_example(st.vocab, st.config, s, r));
            else
                batch.push_back(oracle_example(st.vocab, s));
        }
        auto l = nll_loss_and_gradient(p, batch);
        // Stream keys stay unfamiliar: their embedding rows keep the random init.
        GradientViews g(p.dims, l.gradient);
        for (int k = owned; k < st.vocab.num_keys; ++k) {
            auto row = g.tok_emb.row(static_cast<std::size_t>(st.vocab.key(k)));
            std::fill(row.begin(), row.end(), 0.0);
        }
        optimizer_step(opt, p.theta, l.gradient);
    }
    return p;
}

// --- penalties ----------------------------------------------------------------

struct Penalty {
    double value = 0.0;
    std::vector<double> gradient;
};

/// Diagonal Fisher anchors, one per completed task.
struct EwcState {
    double lambda = 0.0;
    std::vector<std::vector<double>> fisher;
    std::vector<std::vector<double>> anchors;

    bool empty() const { return anchors.empty(); }
};

/// (lambda/2) sum_anchors sum_k F_k (theta_k - theta*_k)^2 and its gradient.
inline Penalty ewc_penalty(const EwcState& s, std::span<const double> theta) {
    Penalty out;
    out.gradient.assign(theta.size(), 0.0);
    for (std::size_t a = 0; a < s.anchors.size(); ++a) {
        const auto& F = s.fisher[a];
        const auto& star = s.anchors[a];
        if (F.size() != theta.size() || star.size() != theta.size()) throw Error("ewc_penalty: dimension mismatch");
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double d = theta[k] - star[k];
            out.value += 0.5 * s.lambda * F[k] * d * d;
            out.gradient[k] += s.lambda * F[k] * d;
        }
    }
    return out;
}

/// Empirical diagonal Fisher: mean squared gradient of log pi over the policy's own rollouts.
inline std::vector<double> estimate_fisher(const PolicyParams& p, const VocabLayout& v, std::span<const Sample> samples,
                                           int n, const DecodeConfig& dc, Rng rng) {
    if (samples.empty()) throw Error("estimate_fisher: no samples");
    std::vector<double> F(p.theta.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        const Sample& s = samples[static_cast<std::size_t>(i) % samples.size()];
        const auto traj = sample_trajectories(p, v, s, 1, dc, rng).front();
        const std::vector<double> w(traj.tokens.size(), 1.0);
        const auto g = backprop(p, traj, s, w);
        for (std::size_t k = 0; k < F.size(); ++k) F[k] += g[k] * g[k] / static_cast<double>(n);
    }
    return F;
}

/// KL(p || q) over two log-distributions.
inline double kl_divergence(std::span<const double> logp, std::span<const double> logq) {
    double s = 0.0;
    for (std::size_t i = 0; i < logp.size(); ++i) s += std::exp(logp[i]) * (logp[i] - logq[i]);
    return s;
}

/** lambda * mean over positions of KL(pi_snap(.|prefix) || pi_theta(.|prefix)).
 *
 * Positions are every emitted position of the given teacher-forced
 * (question, tokens) pairs. */
inline Penalty lwf_penalty(const PolicyParams& snap, const PolicyParams& cur,
                           std::span<const std::pair<const Sample*, const Trajectory*>> items, double lambda) {
    Penalty out;
    out.gradient.assign(cur.theta.size(), 0.0);
    std::size_t positions = 0;
    for (const auto& [s, t] : items) positions += t->tokens.size();
    if (positions == 0 || lambda == 0.0) return out;
    const double scale = lambda / static_cast<double>(positions);
    for (const auto& [s, t] : items) {
        if (t->tokens.empty()) continue;
        std::vector<Token> seq(s->question.begin(), s->question.end());
        seq.insert(seq.end(), t->tokens.begin(), t->tokens.end());
        std::vector<std::vector<double>> teacher;
        PrefixState st(snap);
        for (std::size_t i = 0; i < seq.size(); ++i) {
            if (i >= s->question.size()) teacher.push_back(log_softmax(st.logits()));
            if (i + 1 < seq.size()) st.push(seq[i]);
        }
        const std::size_t q = s->question.size();
        backprop_sequence(
            cur, seq, q,
            [&](std::size_t pos, std::span<const double> lq, std::span<double> gl) {
                const auto& lp = teacher[pos - q];
                out.value += scale * kl_divergence(lp, lq);
                for (std::size_t v = 0; v < gl.size(); ++v) gl[v] = scale * (std::exp(lq[v]) - std::exp(lp[v]));
            },
            out.gradient);
    }
    return out;
}

// --- evaluation -----------------------------------------------------------------

/// Greedy single-sample accuracy in percent.
inline double evaluate_accuracy(const PolicyParams& p, const VocabLayout& v, std::span<const Sample> samples,
                                const DecodeConfig& dc, const RewardVerifier& rv = {}) {
    if (samples.empty()) return 0.0;
    DecodeConfig g = dc;
    g.greedy = true;
    Rng unused(0);
    int correct = 0;
    for (const auto& s : samples) {
        const auto t = sample_trajectories(p, v, s, 1, g, unused).front();
        correct += verify(v, t.tokens, s, rv).accuracy > 0.0;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(samples.size());
}

inline std::vector<double> evaluate_row(const PolicyParams& p, const Stream& st, const DecodeConfig& dc,
                                        const RewardVerifier& rv = {}) {
    std::vector<double> row;
    for (const auto& t : st.tasks) row.push_back(evaluate_accuracy(p, st.vocab, t.test, dc, rv));
    return row;
}

/// Mean per-token k3 KL of `cur` against `ref` on one rollout of `cur` per sample.
inline double mean_rollout_kl(const PolicyParams& cur, const PolicyParams& ref, const VocabLayout& v,
                              std::span<const Sample> samples, const DecodeConfig& dc, Rng rng) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : samples) {
        const auto t = sample_trajectories(cur, v, s, 1, dc, rng).front();
        const auto lr = logprobs_under(ref, t.tokens, s.question);
        for (std::size_t i = 0; i < lr.size(); ++i) sum += kl_per_token(t.logprobs[i], lr[i]);
        n += lr.size();
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

/// Pass@k over the test items of every task, n samples per item at the rollout decode.
inline std::map<int, double> evaluate_pass_at_k(const PolicyParams& p, const Stream& st, const TrainConfig& c, Rng rng) {
    std::vector<PassKRecord> recs;
    for (const auto& t : st.tasks)
        for (const auto& s : t.test) {
            Rng r = rng.split(s.id);
            const auto trajs = sample_trajectories(p, st.vocab, s, c.passk_n, c.rollout, r);
            int hits = 0;
            for (const auto& tr : trajs) hits += verify(st.vocab, tr.tokens, s, c.verifier).accuracy > 0.0;
            recs.push_back({c.passk_n, hits});
        }
    std::map<int, double> out;
    for (int k : c.passk_ks) out[k] = dataset_pass_at_k(recs, k);
    return out;
}

// --- the driver -------------------------------------------------------------------

struct TaskLog {
    std::vector<StepRecord> steps;
    std::vector<RPScore> rp;
    double final_kl = 0.0;   ///< checkpoint i vs checkpoint i-1 on task-i rollouts
    bool early_stopped = false;
};

struct StreamRun {
    TrainConfig config;
    std::uint64_t seed = 0;
    PolicySnapshot initial;
    std::vector<PolicySnapshot> checkpoints;
    AccuracyMatrix accuracy;
    std::vector<TaskLog> tasks;
    std::map<int, double> pass_at_k;
    std::optional<std::string> failure;  ///< set when training aborted; artifacts up to that point are kept
};

/// Per-sample KL coefficient for the current method.
inline double method_beta(const TrainConfig& c, const RPScore* score) {
    if (c.method == Method::Rdbcl) {
        if (!score) throw Error("rdbcl: missing RP score");
        return score->beta;
    }
    return c.static_k * c.gate.beta0;
}

namespace detail {

inline RolloutGroup make_group(const PolicyParams& cur, const PolicyParams& ref, const VocabLayout& v, const Sample& s,
                               const TrainConfig& c, Rng& rng) {
    RolloutGroup g;
    g.sample = &s;
    g.trajectories = sample_trajectories(cur, v, s, c.group_size, c.rollout, rng);
    for (const auto& t : g.trajectories) {
        g.rewards.push_back(verify(v, t.tokens, s, c.verifier).total);
        g.logp_cur.push_back(t.logprobs);
        g.logp_ref.push_back(logprobs_under(ref, t.tokens, s.question));
    }
    g.advantages = group_advantages(g.rewards);
    return g;
}

inline void train_grpo_task(PolicyParams& p, const PolicyParams& ref, const Stream& st, const TaskData& task,
                            const TrainConfig& c, const std::vector<RPScore>& rp, const EwcState& ewc, Rng rng,
                            TaskLog& log, int task_index) {
    const auto& v = st.vocab;
    OptimizerConfig oc = c.optimizer;
    oc.total_steps = std::max(1, c.steps_per_task);
    OptimizerState opt(oc, p.theta.size());
    Rng batch_rng = rng.split(0);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    int streak = 0;
    for (int step = 0; step < c.steps_per_task; ++step) {
        std::vector<std::size_t> idx;
        for (int b = 0; b < c.batch_size; ++b) {
            if (cursor == order.size()) {
                order.resize(task.train.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                batch_rng.shuffle(order);
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }
        Rng roll = rng.split({1, static_cast<std::uint64_t>(step)});
        std::vector<RolloutGroup> groups;
        std::vector<double> betas;
        double reward_sum = 0.0;
        for (std::size_t i : idx) {
            groups.push_back(make_group(p, ref, v, task.train[i], c, roll));
            betas.push_back(method_beta(c, rp.empty() ? nullptr : &rp[i]));
            for (double r : groups.back().rewards) reward_sum += r;
        }
        auto bl = rdbcl_loss_and_gradient(p, groups, betas);
        if (c.method == Method::Ewc && c.ewc_lambda != 0.0 && !ewc.empty()) {
            const auto pen = ewc_penalty(ewc, p.theta);
            bl.loss += pen.value;
            for (std::size_t k = 0; k < pen.gradient.size(); ++k) bl.gradient[k] += pen.gradient[k];
        }
        if (c.method == Method::Lwf && c.lwf_lambda != 0.0) {
            std::vector<std::pair<const Sample*, const Trajectory*>> items;
            for (std::size_t i : idx) items.emplace_back(&task.train[i], &rp[i].references.front());
            const auto pen = lwf_penalty(ref, p, items, c.lwf_lambda);
            bl.loss += pen.value;
            for (std::size_t k = 0; k < pen.gradient.size(); ++k) bl.gradient[k] += pen.gradient[k];
        }
        if (!std::isfinite(bl.loss)) throw NonFiniteError("non-finite loss at task " + std::to_string(task_index + 1) +
                                                          " step " + std::to_string(step + 1));
        optimizer_step(opt, p.theta, bl.gradient);
        StepRecord rec;
        rec.step = step + 1;
        rec.task_index = task_index + 1;
        rec.mean_reward = reward_sum / static_cast<double>(idx.size() * static_cast<std::size_t>(c.group_size));
        rec.mean_abs_advantage = bl.mean_abs_advantage;
        rec.mean_kl = bl.mean_kl;
        rec.mean_beta = mean(betas);
        rec.loss = bl.loss;
        log.steps.push_back(rec);
        streak = rec.mean_reward > c.early_stop_reward ? streak + 1 : 0;
        if (streak >= c.early_stop_window) {
            log.early_stopped = true;
            break;
        }
    }
}

inline void train_sft_task(PolicyParams& p, const Stream& st, const TaskData& task, const TrainConfig& c, Rng rng,
                           TaskLog& log, int task_index) {
    OptimizerConfig oc = c.optimizer;
    oc.total_steps = std::max(1, c.steps_per_task);
    OptimizerState opt(oc, p.theta.size());
    Rng batch_rng = rng.split(0);
    for (int step = 0; step < c.steps_per_task; ++step) {
        std::vector<SupervisedExample> batch;
        for (int b = 0; b < c.batch_size; ++b)
            batch.push_back(oracle_example(st.vocab, task.train[batch_rng.below(task.train.size())]));
        const auto l = nll_loss_and_gradient(p, batch);
        if (!std::isfinite(l.loss)) throw NonFiniteError("non-finite loss at task " + std::to_string(task_index + 1));
        optimizer_step(opt, p.theta, l.gradient);
        StepRecord rec;
        rec.step = step + 1;
        rec.task_index = task_index + 1;
        rec.loss = l.loss;
        log.steps.push_back(rec);
    }
}

} // namespace detail

/// Teacher-forced SFT on one task's oracle trajectories; returns the trained parameters.
inline PolicyParams sft_train(PolicyParams p, const Stream& st, const TaskData& task, const TrainConfig& c, Rng rng) {
    TaskLog log;
    detail::train_sft_task(p, st, task, c, rng, log, task.spec.task_id - 1);
    return p;
}

/** Runs one method over the whole stream.
 *
 * For task i the reference is checkpoint i-1 (the warm start for i = 1). RP
 * scores are computed once per task against that reference and cached; all
 * methods compute them so the dump is always available, but only rdbcl uses
 * them. After each task the policy is frozen and evaluated on every task. */
inline StreamRun run_task_sequence(const Stream& st, const TrainConfig& c, const PolicySnapshot& initial,
                                   std::uint64_t seed) {
    validate(c);
    StreamRun run;
    run.config = c;
    run.seed = seed;
    run.initial = initial;
    const Rng base(seed, 3);
    PolicyParams p = initial.params();
    PolicySnapshot ref = initial;
    EwcState ewc;
    ewc.lambda = c.ewc_lambda;
    run.accuracy.zero_shot = evaluate_row(p, st, c.rollout, c.verifier);
    try {
        for (int i = 0; i < st.num_tasks(); ++i) {
            const auto& task = st.tasks[static_cast<std::size_t>(i)];
            const Rng task_rng = base.split(static_cast<std::uint64_t>(i));
            TaskLog log;
            if (c.method != Method::Sft) {
                log.rp = score_samples(ref, st.vocab, task.spec, task.train, c.gate, c.rollout, task_rng.split(2));
                detail::train_grpo_task(p, ref.params(), st, task, c, log.rp, ewc, task_rng, log, i);
            } else {
                detail::train_sft_task(p, st, task, c, task_rng, log, i);
            }
            if (c.method == Method::Ewc && c.ewc_lambda != 0.0) {
                ewc.fisher.push_back(estimate_fisher(p, st.vocab, task.train, c.fisher_samples, c.rollout, task_rng.split(4)));
                ewc.anchors.push_back(p.theta);
            }
            log.final_kl = mean_rollout_kl(p, ref.params(), st.vocab, task.train, c.rollout, task_rng.split(3));
            run.checkpoints.emplace_back(p, i + 1);
            ref = run.checkpoints.back();
            run.accuracy.a.push_back(evaluate_row(p, st, c.rollout, c.verifier));
            run.tasks.push_back(std::move(log));
        }
        run.pass_at_k = evaluate_pass_at_k(p, st, c, base.split(1000));
    } catch (const NonFiniteError& e) {
        run.failure = e.what();
    }
    return run;
}

} // namespace rdbcl
