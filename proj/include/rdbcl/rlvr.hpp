#pragma once

// Group-relative policy optimization with a per-sample KL anchor.
//
// Per group (one question, G rollouts):
//   loss = -(1/G) sum_i (1/|o_i|) sum_t [ A_i * log pi(o_it) - beta * k3(o_it) ]
//   k3   = rho - log rho - 1,   rho = pi_ref / pi
// pi_old == pi, so the likelihood ratio is 1 at evaluation and carries no
// clipping. The gradient with respect to log pi(o_it) is
//   -(1/(G |o_i|)) * (A_i - beta * (1 - rho_it)).

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "rdbcl/numerics.hpp"
#include "rdbcl/policy.hpp"

namespace rdbcl {

constexpr double kAdvantageEps = 1e-6;

/// (r_i - mean) / max(std, eps) with population std; all-equal rewards give exact zeros.
inline std::vector<double> group_advantages(std::span<const double> rewards, double eps = kAdvantageEps) {
    if (rewards.size() < 2) throw Error("group_advantages: group size must be >= 2");
    require_finite(rewards, "group_advantages");
    std::vector<double> out(rewards.size(), 0.0);
    if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) return out;
    const double m = mean(rewards);
    const double s = std::max(stddev(rewards), eps);
    for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - m) / s;
    return out;
}

/// rho - log(rho) - 1 with rho = exp(logp_ref - logp_cur); >= 0, zero iff equal.
inline double kl_per_token(double logp_cur, double logp_ref) {
    if (!std::isfinite(logp_cur) || !std::isfinite(logp_ref)) throw NonFiniteError("kl_per_token: non-finite input");
    const double x = logp_ref - logp_cur;
    return std::expm1(x) - x;
}

/// d k3 / d logp_cur = 1 - rho
inline double kl_grad_wrt_logp(double logp_cur, double logp_ref) {
    return -std::expm1(logp_ref - logp_cur);
}

struct RolloutGroup {
    const Sample* sample = nullptr;
    std::vector<Trajectory> trajectories;
    std::vector<double> rewards;
    std::vector<double> advantages;                  ///< one per trajectory, broadcast over tokens
    std::vector<std::vector<double>> logp_cur;       ///< per token, under pi_theta
    std::vector<std::vector<double>> logp_ref;       ///< per token, under pi_ref

    std::size_t size() const { return trajectories.size(); }
};

struct GroupLoss {
    double loss = 0.0;
    std::vector<std::vector<double>> token_weights;  ///< dLoss / d log pi(token)
    double kl_sum = 0.0;
    std::size_t token_count = 0;
    int empty_trajectories = 0;  ///< flagged: contributed nothing
};

inline GroupLoss grpo_loss(const RolloutGroup& g, double beta) {
    if (!(beta >= 0.0)) throw Error("grpo_loss: beta must be >= 0");
    const std::size_t G = g.size();
    if (G == 0 || g.advantages.size() != G || g.logp_cur.size() != G || g.logp_ref.size() != G)
        throw Error("grpo_loss: group is not populated");
    GroupLoss out;
    out.token_weights.resize(G);
    const double invG = 1.0 / static_cast<double>(G);
    for (std::size_t i = 0; i < G; ++i) {
        const auto& cur = g.logp_cur[i];
        const auto& ref = g.logp_ref[i];
        if (cur.size() != ref.size()) throw Error("grpo_loss: log-prob length mismatch");
        out.token_weights[i].assign(cur.size(), 0.0);
        if (cur.empty()) {
            ++out.empty_trajectories;
            continue;
        }
        const double scale = invG / static_cast<double>(cur.size());
        const double A = g.advantages[i];
        double inner = 0.0;
        for (std::size_t t = 0; t < cur.size(); ++t) {
            const double kl = kl_per_token(cur[t], ref[t]);
            inner += A * cur[t] - beta * kl;
            out.kl_sum += kl;
            out.token_weights[i][t] = -scale * (A - beta * kl_grad_wrt_logp(cur[t], ref[t]));
        }
        out.loss -= scale * inner;
        out.token_count += cur.size();
    }
    return out;
}

/// Mean over samples of grpo_loss(group_k, betas[k]).
inline double rdbcl_loss(std::span<const RolloutGroup> groups, std::span<const double> betas) {
    if (groups.size() != betas.size()) throw Error("rdbcl_loss: one beta per group required");
    if (groups.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < groups.size(); ++k) total += grpo_loss(groups[k], betas[k]).loss;
    return total / static_cast<double>(groups.size());
}

struct BatchLoss {
    double loss = 0.0;
    std::vector<double> gradient;
    double mean_kl = 0.0;
    double mean_abs_advantage = 0.0;
    int empty_trajectories = 0;
};

/// rdbcl_loss and its exact gradient; samples reduce in the given order.
inline BatchLoss rdbcl_loss_and_gradient(const PolicyParams& p, std::span<const RolloutGroup> groups,
                                         std::span<const double> betas) {
    if (groups.size() != betas.size()) throw Error("rdbcl_loss: one beta per group required");
    BatchLoss out;
    out.gradient.assign(p.dims.param_count(), 0.0);
    if (groups.empty()) return out;
    const double invB = 1.0 / static_cast<double>(groups.size());
    double kl_sum = 0.0, adv_sum = 0.0;
    std::size_t tokens = 0, trajs = 0;
    for (std::size_t k = 0; k < groups.size(); ++k) {
        const auto& g = groups[k];
        const auto gl = grpo_loss(g, betas[k]);
        out.loss += invB * gl.loss;
        out.empty_trajectories += gl.empty_trajectories;
        kl_sum += gl.kl_sum;
        tokens += gl.token_count;
        for (std::size_t i = 0; i < g.size(); ++i) {
            adv_sum += std::abs(g.advantages[i]);
            ++trajs;
            if (g.trajectories[i].tokens.empty()) continue;
            std::vector<double> w = gl.token_weights[i];
            for (double& x : w) x *= invB;
            // backprop returns d(sum w log pi); the weights already carry dLoss/dlog pi.
            const auto grad = backprop(p, g.trajectories[i], *g.sample, w);
            for (std::size_t j = 0; j < grad.size(); ++j) out.gradient[j] += grad[j];
        }
    }
    out.mean_kl = tokens ? kl_sum / static_cast<double>(tokens) : 0.0;
    out.mean_abs_advantage = trajs ? adv_sum / static_cast<double>(trajs) : 0.0;
    return out;
}

/// Recomputes logp_cur for every trajectory of the group under `p`.
inline void refresh_current_logprobs(const PolicyParams& p, RolloutGroup& g) {
    g.logp_cur.clear();
    for (const auto& t : g.trajectories) g.logp_cur.push_back(logprobs_under(p, t, *g.sample));
}

// --- optimizer ----------------------------------------------------------------

struct OptimizerConfig {
    double lr_max = 3e-3;
    double warmup_ratio = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;
    int total_steps = 300;
};

/// Linear warm-up to lr_max over round(ratio * total) steps, then cosine decay to 0.
inline double scheduled_lr(const OptimizerConfig& c, long step) {
    const long total = std::max(1, c.total_steps);
    const long warm = std::lround(c.warmup_ratio * static_cast<double>(total));
    if (step <= warm && warm > 0) return c.lr_max * static_cast<double>(step) / static_cast<double>(warm);
    const long span = std::max<long>(1, total - warm);
    const double progress = std::clamp(static_cast<double>(step - warm) / static_cast<double>(span), 0.0, 1.0);
    return c.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct OptimizerState {
    OptimizerConfig config;
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;

    OptimizerState() = default;
    OptimizerState(OptimizerConfig c, std::size_t dim) : config(c), m(dim, 0.0), v(dim, 0.0) {}
};

/// AdamW with decoupled weight decay. A non-finite gradient throws and leaves theta and state untouched.
inline double optimizer_step(OptimizerState& s, std::span<double> theta, std::span<const double> grad) {
    if (grad.size() != theta.size() || s.m.size() != theta.size())
        throw Error("optimizer_step: dimension mismatch");
    require_finite(grad, "optimizer_step gradient");
    ++s.step;
    const auto& c = s.config;
    const double lr = scheduled_lr(c, s.step);
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * grad[i];
        s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        theta[i] -= lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * theta[i]);
    }
    require_finite(theta, "optimizer_step parameters");
    return lr;
}

/// One row of the per-step training log.
struct StepRecord {
    int step = 0;
    int task_index = 0;
    double mean_reward = 0.0;
    double mean_abs_advantage = 0.0;
    double mean_kl = 0.0;
    double mean_beta = 0.0;
    double loss = 0.0;
};

} // namespace rdbcl
