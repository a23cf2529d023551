#pragma once

// Reasoning-portability gate: the previous policy's confidence in its own
// reference rollouts decides how tightly each new-task sample is anchored.
//
//   g     = PRP if C >= tau else NRP
//   beta  = max(clip_min, 1{C >= tau} + C * 1{C < tau}) * beta0

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rdbcl/numerics.hpp"
#include "rdbcl/policy.hpp"
#include "rdbcl/tasks.hpp"

namespace rdbcl {

enum class ProbeKind { Likelihood, BinaryToken };
enum class ConfidenceSpan { Reasoning, Answer };
enum class RpClass { PRP, NRP };

inline const char* to_string(ProbeKind k) { return k == ProbeKind::Likelihood ? "likelihood" : "binary_token"; }
inline const char* to_string(ConfidenceSpan s) { return s == ConfidenceSpan::Reasoning ? "reasoning" : "answer"; }
inline const char* to_string(RpClass c) { return c == RpClass::PRP ? "PRP" : "NRP"; }

struct GateConfig {
    double tau = 0.7;
    double beta0 = 0.15;
    double clip_min = 0.2;
    ProbeKind probe_kind = ProbeKind::Likelihood;
    ConfidenceSpan span = ConfidenceSpan::Reasoning;
    int n_ref_rollouts = 1;
};

inline void validate(const GateConfig& g) {
    if (!(g.tau >= 0.0 && g.tau <= 1.0)) throw Error("gate: tau must be in [0,1]");
    if (!(g.clip_min >= 0.0 && g.clip_min <= 1.0)) throw Error("gate: clip_min must be in [0,1]");
    if (!(g.beta0 > 0.0)) throw Error("gate: beta0 must be > 0");
    if (g.n_ref_rollouts < 1) throw Error("gate: n_ref_rollouts must be >= 1");
}

/// PRP iff C >= tau; the boundary belongs to PRP.
inline RpClass classify(double confidence, double tau) { return confidence >= tau ? RpClass::PRP : RpClass::NRP; }

inline double beta_lrc(double confidence, const GateConfig& g) {
    const double factor = classify(confidence, g.tau) == RpClass::PRP ? 1.0 : confidence;
    return std::max(g.clip_min, factor) * g.beta0;
}

/// exp(mean log p): the geometric-mean token probability.
inline double geometric_mean_probability(std::span<const double> logprobs) {
    if (logprobs.empty()) throw Error("geometric_mean_probability: empty span");
    return std::exp(mean(logprobs));
}

struct ConfidenceResult {
    double confidence = 0.0;
    std::vector<double> per_trajectory;
    bool flagged = false;  ///< some trajectory lacked the requested span; its full sequence was scored
};

namespace detail {

inline double true_probability(const PolicyParams& p, const VocabLayout& v, std::vector<Token> seq) {
    seq.push_back(v.probe());
    const auto lp = next_log_distribution(p, seq);
    const double lt = lp[static_cast<std::size_t>(v.true_token())];
    const double lf = lp[static_cast<std::size_t>(v.false_token())];
    // TRUE vs FALSE renormalized: 1 / (1 + exp(lf - lt))
    return 1.0 / (1.0 + std::exp(lf - lt));
}

/// Answer-token log-prob renormalized over the answer range.
inline double answer_logprob(const PolicyParams& p, const VocabLayout& v, std::span<const Token> prefix, Token answer) {
    const auto lp = next_log_distribution(p, prefix);
    const auto first = static_cast<std::size_t>(v.answer(0));
    const auto range = std::span<const double>(lp).subspan(first, static_cast<std::size_t>(v.modulus));
    return lp[static_cast<std::size_t>(answer)] - log_sum_exp(range);
}

inline double clamp01(double c) { return std::clamp(c, 0.0, 1.0); }

} // namespace detail

/** Confidence of the snapshot in its own reference rollouts for one sample.
 *
 * Likelihood kind: geometric-mean token probability over the reasoning span
 * (answer span for ConfidenceSpan::Answer, renormalized over answer tokens).
 * BinaryToken kind: P(TRUE | question, rollout, PROBE) against FALSE.
 * Rollouts without the span fall back to the full sequence and set `flagged`.
 * The result is the mean over rollouts, clamped to [0,1]. */
inline ConfidenceResult probe_confidence(const PolicyParams& snap, const VocabLayout& v, const Sample& sample,
                                         std::span<const Trajectory> refs, ProbeKind kind,
                                         ConfidenceSpan span = ConfidenceSpan::Reasoning) {
    if (refs.empty()) throw Error("probe_confidence: no reference trajectories");
    ConfidenceResult out;
    for (const auto& t : refs) {
        const std::optional<TokenSpan>& s = span == ConfidenceSpan::Reasoning ? t.reasoning : t.answer;
        const bool have_span = s && s->size() > 0;
        if (!have_span) out.flagged = true;
        double c = 0.0;
        if (kind == ProbeKind::Likelihood) {
            if (span == ConfidenceSpan::Answer && have_span) {
                std::vector<Token> prefix(sample.question.begin(), sample.question.end());
                prefix.insert(prefix.end(), t.tokens.begin(), t.tokens.begin() + static_cast<std::ptrdiff_t>(s->begin));
                std::vector<double> lps;
                for (std::size_t i = s->begin; i < s->end; ++i) {
                    lps.push_back(detail::answer_logprob(snap, v, prefix, t.tokens[i]));
                    prefix.push_back(t.tokens[i]);
                }
                c = geometric_mean_probability(lps);
            } else {
                const auto lp = logprobs_under(snap, t.tokens, sample.question);
                if (lp.empty()) {
                    c = 0.0;
                } else if (have_span) {
                    c = geometric_mean_probability(std::span<const double>(lp).subspan(s->begin, s->size()));
                } else {
                    c = geometric_mean_probability(lp);
                }
            }
        } else {
            std::vector<Token> seq(sample.question.begin(), sample.question.end());
            if (span == ConfidenceSpan::Answer && have_span) {
                seq.push_back(v.answer_open());
                seq.insert(seq.end(), t.tokens.begin() + static_cast<std::ptrdiff_t>(s->begin),
                           t.tokens.begin() + static_cast<std::ptrdiff_t>(s->end));
                seq.push_back(v.answer_close());
            } else {
                seq.insert(seq.end(), t.tokens.begin(), t.tokens.end());
            }
            c = detail::true_probability(snap, v, std::move(seq));
        }
        out.per_trajectory.push_back(detail::clamp01(c));
    }
    out.confidence = detail::clamp01(mean(out.per_trajectory));
    return out;
}

/// Answer-level confidence: probe_confidence restricted to the answer span.
inline ConfidenceResult answer_confidence(const PolicyParams& snap, const VocabLayout& v, const Sample& sample,
                                          std::span<const Trajectory> refs, ProbeKind kind = ProbeKind::Likelihood) {
    return probe_confidence(snap, v, sample, refs, kind, ConfidenceSpan::Answer);
}

struct RPScore {
    std::uint32_t sample_id = 0;
    int task_id = 0;
    double confidence = 0.0;
    RpClass group = RpClass::NRP;
    double beta = 0.0;
    bool portable = false;
    bool flagged = false;
    bool reasoning_correct = false;  ///< first reference rollout's reasoning reproduces the answer
    std::vector<double> per_trajectory;
    std::vector<Trajectory> references;
};

/** Scores every sample of a task against the frozen previous policy.
 *
 * Each sample draws its N reference rollouts from its own split stream, so
 * results do not depend on evaluation order. */
inline std::vector<RPScore> score_samples(const PolicySnapshot& snap, const VocabLayout& v, const TaskSpec& spec,
                                          std::span<const Sample> samples, const GateConfig& gate,
                                          const DecodeConfig& decode, const Rng& rng) {
    validate(gate);
    std::vector<RPScore> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        Rng r = rng.split(s.id);
        RPScore score;
        score.sample_id = s.id;
        score.task_id = s.task_id;
        score.portable = s.portable;
        score.references = sample_trajectories(snap, v, s, gate.n_ref_rollouts, decode, r);
        const auto res = probe_confidence(snap.params(), v, s, score.references, gate.probe_kind, gate.span);
        score.confidence = res.confidence;
        score.per_trajectory = res.per_trajectory;
        score.flagged = res.flagged;
        score.group = classify(score.confidence, gate.tau);
        score.beta = beta_lrc(score.confidence, gate);
        score.reasoning_correct = reasoning_correct(v, score.references.front().tokens, spec, s);
        out.push_back(std::move(score));
    }
    return out;
}

} // namespace rdbcl
