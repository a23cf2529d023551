#pragma once

// Synthetic verifiable-reasoning tasks.
//
// A question is [KEY, DIGIT, FILLER...] laid out under a task-specific
// position permutation. KEY names the rule family that generated the sample,
// DIGIT shows the initial state (optionally relabeled), FILLER tokens come
// from the task's own domain alphabet. The answer is the state after the
// rule's primitive ops are applied in order, mod M. A task owns one or more
// rule families, each with its own key.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rdbcl/numerics.hpp"

namespace rdbcl {

using Token = std::int32_t;

enum class TokenClass { Digit, Key, Filler, Op, Answer, ReasonOpen, ReasonClose, AnswerOpen, AnswerClose, Probe, True, False, Invalid };

/** Disjoint token ranges, in this order:
 *  digits [M) | keys | fillers | ops | answers [M) | RO RC AO AC | PROBE TRUE FALSE */
struct VocabLayout {
    int modulus = 10;
    int num_keys = 0;
    int num_fillers = 0;
    int num_ops = 0;

    Token digit(int v) const { return v; }
    Token key(int k) const { return modulus + k; }
    Token filler(int f) const { return modulus + num_keys + f; }
    Token op(int id) const { return modulus + num_keys + num_fillers + id; }
    Token answer(int v) const { return op(num_ops) + v; }
    Token reason_open() const { return answer(modulus); }
    Token reason_close() const { return reason_open() + 1; }
    Token answer_open() const { return reason_open() + 2; }
    Token answer_close() const { return reason_open() + 3; }
    Token probe() const { return reason_open() + 4; }
    Token true_token() const { return reason_open() + 5; }
    Token false_token() const { return reason_open() + 6; }
    int size() const { return reason_open() + 7; }

    TokenClass classify(Token t) const {
        if (t < 0 || t >= size()) return TokenClass::Invalid;
        if (t < key(0)) return TokenClass::Digit;
        if (t < filler(0)) return TokenClass::Key;
        if (t < op(0)) return TokenClass::Filler;
        if (t < answer(0)) return TokenClass::Op;
        if (t < reason_open()) return TokenClass::Answer;
        switch (t - reason_open()) {
        case 0: return TokenClass::ReasonOpen;
        case 1: return TokenClass::ReasonClose;
        case 2: return TokenClass::AnswerOpen;
        case 3: return TokenClass::AnswerClose;
        case 4: return TokenClass::Probe;
        case 5: return TokenClass::True;
        default: return TokenClass::False;
        }
    }
    bool is_delimiter(Token t) const {
        const auto c = classify(t);
        return c == TokenClass::ReasonOpen || c == TokenClass::ReasonClose ||
               c == TokenClass::AnswerOpen || c == TokenClass::AnswerClose;
    }
    int op_id(Token t) const { return t - op(0); }
    int answer_value(Token t) const { return t - answer(0); }

    bool operator==(const VocabLayout&) const = default;
};

enum class OpKind { Add, Mul, Negate };

struct PrimitiveOp {
    OpKind kind;
    int k;
    const char* name;

    int apply(int state, int modulus) const {
        switch (kind) {
        case OpKind::Add: return (state + k) % modulus;
        case OpKind::Mul: return (state * k) % modulus;
        case OpKind::Negate: return (modulus - state) % modulus;
        }
        return state;
    }
};

/// Every op id maps to exactly one entry here and one reasoning token.
inline const std::array<PrimitiveOp, 8>& op_table() {
    static const std::array<PrimitiveOp, 8> table{{
        {OpKind::Add, 1, "ADD1"},
        {OpKind::Add, 2, "ADD2"},
        {OpKind::Add, 3, "ADD3"},
        {OpKind::Add, 5, "ADD5"},
        {OpKind::Mul, 2, "MUL2"},
        {OpKind::Mul, 3, "MUL3"},
        {OpKind::Mul, 7, "MUL7"},
        {OpKind::Negate, 0, "NEG"},
    }};
    return table;
}

inline int run_rule(std::span<const int> rule, int state, int modulus) {
    for (int id : rule) state = op_table().at(static_cast<std::size_t>(id)).apply(state, modulus);
    return state;
}

struct TaskSpec {
    int task_id = 0;  ///< 0 for the pretraining families, 1..T for stream tasks
    int modulus = 10;
    std::vector<int> keys;               ///< key index of each owned rule family
    std::vector<std::vector<int>> rules; ///< op ids per family, applied left to right
    int domain = 0;                      ///< filler domain index
    std::vector<int> position_perm;      ///< encoded[perm[i]] = canonical[i]
    std::vector<int> digit_relabel;      ///< shown digit for each true state
    double portable_overlap = 0.0;       ///< fraction of samples drawn from the predecessor's families
    int predecessor = -1;                ///< task id of the predecessor, -1 if none

    std::size_t num_families() const { return keys.size(); }
    bool owns_key(int key) const { return std::find(keys.begin(), keys.end(), key) != keys.end(); }

    bool operator==(const TaskSpec&) const = default;
};

struct Sample {
    std::uint32_t id = 0;
    int task_id = 0;
    std::vector<Token> question;
    Token ground_truth = 0;
    bool portable = false;
    int state = 0;          ///< decoded initial state
    std::vector<int> rule;  ///< generating rule (the key owner's rule)

    bool operator==(const Sample&) const = default;
};

struct TaskData {
    TaskSpec spec;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

struct StreamConfig {
    int num_tasks = 2;
    int modulus = 10;
    int num_ops = 8;
    int rule_len_min = 1;
    int rule_len_max = 3;
    int keys_per_task = 1;       ///< rule families per stream task
    int filler_slots = 2;
    int fillers_per_domain = 3;
    int pretrain_rules = 3;      ///< rule families in the pretraining task
    int n_train = 100;
    int n_test = 60;
    int pretrain_train = 200;
    /// Portable fraction for tasks 2..T. One value is broadcast to every transition.
    std::vector<double> overlap = {0.5};
    bool reencode = true;        ///< each task gets its own position permutation
    bool relabel_digits = false; ///< each task shows digits under its own relabeling
    int order = 1;               ///< 1: generated order, 2: reversed task order

    int question_length() const { return 2 + filler_slots; }
};

struct Stream {
    StreamConfig config;
    VocabLayout vocab;
    TaskData pretrain;            ///< warm-start families (task id 0)
    std::vector<TaskData> tasks;  ///< tasks 1..T in presentation order

    int num_tasks() const { return static_cast<int>(tasks.size()); }
    /// Rule of the family owning `key`, searched over pretraining and stream tasks.
    const std::vector<int>& rule_for_key(int key) const {
        auto find = [&](const TaskSpec& s) -> const std::vector<int>* {
            for (std::size_t f = 0; f < s.keys.size(); ++f)
                if (s.keys[f] == key) return &s.rules[f];
            return nullptr;
        };
        if (const auto* r = find(pretrain.spec)) return *r;
        for (const auto& t : tasks)
            if (const auto* r = find(t.spec)) return *r;
        throw Error("Stream::rule_for_key: unknown key");
    }
};

inline VocabLayout make_vocab(const StreamConfig& c) {
    VocabLayout v;
    v.modulus = c.modulus;
    v.num_keys = c.pretrain_rules + c.num_tasks * c.keys_per_task;
    v.num_fillers = (c.num_tasks + 1) * c.fillers_per_domain;
    v.num_ops = c.num_ops;
    return v;
}

inline void validate(const StreamConfig& c) {
    if (c.num_tasks < 1) throw Error("stream: num_tasks must be >= 1");
    if (c.modulus < 2) throw Error("stream: modulus must be >= 2");
    if (c.num_ops < 1 || c.num_ops > static_cast<int>(op_table().size()))
        throw Error("stream: vocabulary too small for requested op count (num_ops must be in [1, " +
                    std::to_string(op_table().size()) + "])");
    if (c.rule_len_min < 1 || c.rule_len_max > 4 || c.rule_len_min > c.rule_len_max)
        throw Error("stream: rule lengths must satisfy 1 <= min <= max <= 4");
    if (c.keys_per_task < 1) throw Error("stream: keys_per_task must be >= 1");
    if (c.num_tasks >= 2 && c.keys_per_task * c.rule_len_max >= c.num_ops)
        throw Error("stream: vocabulary too small for requested op count (fresh rules need ops unused by the predecessor)");
    if (c.filler_slots < 1) throw Error("stream: filler_slots must be >= 1");
    if (c.fillers_per_domain < 1) throw Error("stream: fillers_per_domain must be >= 1");
    if (std::pow(c.fillers_per_domain, c.filler_slots) < 2)
        throw Error("stream: need at least two filler combinations for a train/test split");
    if (c.pretrain_rules < 1) throw Error("stream: pretrain_rules must be >= 1");
    if (c.n_train < 1 || c.n_test < 1 || c.pretrain_train < 1) throw Error("stream: sample counts must be >= 1");
    if (c.overlap.empty() && c.num_tasks >= 2) throw Error("stream: overlap list is empty");
    if (c.overlap.size() > 1 && static_cast<int>(c.overlap.size()) != c.num_tasks - 1)
        throw Error("stream: overlap list must have one entry or num_tasks-1 entries");
    for (double f : c.overlap)
        if (!(f >= 0.0 && f <= 1.0)) throw Error("stream: overlap fraction outside [0,1]");
    if (c.order != 1 && c.order != 2) throw Error("stream: order must be 1 or 2");
}

/// Question tokens for (key, state, fillers) under a task's encoding.
inline std::vector<Token> encode_question(const VocabLayout& v, const TaskSpec& spec, int key, int state,
                                          std::span<const int> fillers) {
    std::vector<Token> canonical;
    canonical.push_back(v.key(key));
    canonical.push_back(v.digit(spec.digit_relabel.at(static_cast<std::size_t>(state))));
    for (int f : fillers) canonical.push_back(v.filler(f));
    std::vector<Token> out(canonical.size());
    for (std::size_t i = 0; i < canonical.size(); ++i)
        out.at(static_cast<std::size_t>(spec.position_perm.at(i))) = canonical[i];
    return out;
}

struct DecodedQuestion {
    int key = -1;
    int state = -1;
};

/// Recovers (key, state) from question tokens; positions do not matter since token classes are disjoint.
inline std::optional<DecodedQuestion> decode_question(const VocabLayout& v, const TaskSpec& spec,
                                                      std::span<const Token> question) {
    DecodedQuestion d;
    for (Token t : question) {
        const auto c = v.classify(t);
        if (c == TokenClass::Key) d.key = t - v.key(0);
        if (c == TokenClass::Digit) {
            const auto it = std::find(spec.digit_relabel.begin(), spec.digit_relabel.end(), t - v.digit(0));
            if (it == spec.digit_relabel.end()) return std::nullopt;
            d.state = static_cast<int>(it - spec.digit_relabel.begin());
        }
    }
    if (d.key < 0 || d.state < 0) return std::nullopt;
    return d;
}

/// [RO, ops..., RC, AO, answer, AC]
inline std::vector<Token> oracle_trajectory(const VocabLayout& v, std::span<const int> rule, Token answer) {
    std::vector<Token> out{v.reason_open()};
    for (int id : rule) out.push_back(v.op(id));
    out.push_back(v.reason_close());
    out.push_back(v.answer_open());
    out.push_back(answer);
    out.push_back(v.answer_close());
    return out;
}

inline std::vector<Token> oracle_trajectory(const VocabLayout& v, const Sample& s) {
    return oracle_trajectory(v, s.rule, s.ground_truth);
}

namespace detail {

inline std::vector<int> random_rule(Rng& rng, const StreamConfig& c, const std::set<int>& banned) {
    std::vector<int> allowed;
    for (int id = 0; id < c.num_ops; ++id)
        if (!banned.count(id)) allowed.push_back(id);
    const int len = c.rule_len_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.rule_len_max - c.rule_len_min + 1)));
    std::vector<int> rule;
    for (int i = 0; i < len; ++i) rule.push_back(allowed[rng.below(allowed.size())]);
    return rule;
}

inline std::vector<int> rule_function(std::span<const int> rule, int modulus) {
    std::vector<int> f(static_cast<std::size_t>(modulus));
    for (int s = 0; s < modulus; ++s) f[static_cast<std::size_t>(s)] = run_rule(rule, s, modulus);
    return f;
}

inline int disagreements(const std::vector<int>& a, const std::vector<int>& b) {
    int n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
    return n;
}

inline std::vector<int> identity_perm(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    return p;
}

/// All filler combinations of one domain, as absolute filler indices.
inline std::vector<std::vector<int>> filler_combos(const StreamConfig& c, int domain) {
    std::vector<std::vector<int>> combos{{}};
    for (int slot = 0; slot < c.filler_slots; ++slot) {
        std::vector<std::vector<int>> next;
        for (const auto& prefix : combos)
            for (int f = 0; f < c.fillers_per_domain; ++f) {
                auto v = prefix;
                v.push_back(domain * c.fillers_per_domain + f);
                next.push_back(std::move(v));
            }
        combos = std::move(next);
    }
    return combos;
}

struct InstancePools {
    std::vector<std::vector<int>> train;
    std::vector<std::vector<int>> test;
};

/// Splits a domain's filler combinations so no test question is ever a train question.
inline InstancePools split_instances(const StreamConfig& c, int domain, Rng rng) {
    auto combos = filler_combos(c, domain);
    rng.shuffle(combos);
    const std::size_t n_test = std::max<std::size_t>(1, combos.size() / 3);
    InstancePools p;
    p.test.assign(combos.begin(), combos.begin() + static_cast<std::ptrdiff_t>(n_test));
    p.train.assign(combos.begin() + static_cast<std::ptrdiff_t>(n_test), combos.end());
    return p;
}

inline Sample make_sample(const VocabLayout& v, const TaskSpec& encoding_owner, const TaskSpec& rule_owner,
                          std::size_t family, int state, std::span<const int> fillers, bool portable, int task_id) {
    Sample s;
    s.task_id = task_id;
    s.state = state;
    s.rule = rule_owner.rules.at(family);
    s.portable = portable;
    s.question = encode_question(v, encoding_owner, rule_owner.keys.at(family), state, fillers);
    s.ground_truth = v.answer(run_rule(s.rule, state, v.modulus));
    return s;
}

inline std::vector<Sample> draw_samples(const VocabLayout& v, const TaskSpec& spec, const TaskSpec* predecessor,
                                        const std::vector<std::vector<int>>& pool, int count, double overlap,
                                        int task_id, Rng rng) {
    const int n_portable = predecessor ? static_cast<int>(std::lround(overlap * count)) : 0;
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(count));
    // Within the portable and the fresh group, families cycle fastest and
    // states second, both from a shared offset.
    const int offset = static_cast<int>(rng.below(static_cast<std::uint64_t>(v.modulus)));
    for (int i = 0; i < count; ++i) {
        const bool portable = i < n_portable;
        const TaskSpec& owner = portable ? *predecessor : spec;
        const int j = portable ? i : i - n_portable;
        const auto F = static_cast<int>(owner.num_families());
        const int state = (offset + j / F) % v.modulus;
        const auto& fillers = pool[rng.below(pool.size())];
        out.push_back(make_sample(v, spec, owner, static_cast<std::size_t>(j % F), state, fillers, portable, task_id));
    }
    rng.shuffle(out);
    return out;
}

} // namespace detail

/** Generates the pretraining families and T stream tasks.
 *
 * Task t+1 draws round(overlap * n) samples from task t's rule families
 * (task t's keys, task t+1's domain and encoding); the rest use task t+1's
 * own fresh families, whose rules share no op with any of task t's rules.
 * Pure in (config, rng). */
inline Stream generate_stream(const StreamConfig& config, Rng rng) {
    validate(config);
    Stream st;
    st.config = config;
    st.vocab = make_vocab(config);
    const auto& v = st.vocab;
    const int M = config.modulus;
    const int qlen = config.question_length();

    auto make_encoding = [&](TaskSpec& spec, Rng r, bool shuffle_positions, bool relabel) {
        spec.position_perm = detail::identity_perm(qlen);
        if (shuffle_positions) r.split(1).shuffle(spec.position_perm);
        spec.digit_relabel = detail::identity_perm(M);
        if (relabel) r.split(2).shuffle(spec.digit_relabel);
    };

    // Draws `count` rules avoiding `banned` ops whose functions differ from
    // each other and from `avoid` on at least M/2 states where possible.
    auto draw_family = [&](Rng r, int count, const std::set<int>& banned, std::vector<std::vector<int>> avoid) {
        std::vector<std::vector<int>> rules;
        for (int f = 0; f < count; ++f) {
            std::vector<int> rule;
            for (int attempt = 0; attempt < 1000; ++attempt) {
                rule = detail::random_rule(r, config, banned);
                const auto fn = detail::rule_function(rule, M);
                const bool distinct = std::none_of(avoid.begin(), avoid.end(),
                                                   [&](const auto& g) { return detail::disagreements(fn, g) < M / 2; });
                if (distinct) break;
            }
            avoid.push_back(detail::rule_function(rule, M));
            rules.push_back(std::move(rule));
        }
        return rules;
    };

    // Pretraining families: identity encoding, domain 0.
    {
        TaskSpec& spec = st.pretrain.spec;
        spec.task_id = 0;
        spec.modulus = M;
        spec.domain = 0;
        for (int p = 0; p < config.pretrain_rules; ++p) spec.keys.push_back(p);
        spec.rules = draw_family(rng.split(1), config.pretrain_rules, {}, {});
        make_encoding(spec, rng.split(1), false, false);
    }

    // Stream task pool in generation order, each fresh w.r.t. its neighbour.
    std::vector<TaskSpec> pool;
    for (int t = 0; t < config.num_tasks; ++t) {
        TaskSpec spec;
        spec.modulus = M;
        for (int f = 0; f < config.keys_per_task; ++f) spec.keys.push_back(config.pretrain_rules + t * config.keys_per_task + f);
        spec.domain = t + 1;
        Rng r = rng.split({2, static_cast<std::uint64_t>(t)});
        std::set<int> banned;
        std::vector<std::vector<int>> avoid;
        if (t > 0) {
            for (const auto& rule : pool.back().rules) {
                banned.insert(rule.begin(), rule.end());
                avoid.push_back(detail::rule_function(rule, M));
            }
        }
        spec.rules = draw_family(r.split(0), config.keys_per_task, banned, avoid);
        make_encoding(spec, r, config.reencode, config.relabel_digits);
        pool.push_back(spec);
    }
    if (config.order == 2) std::reverse(pool.begin(), pool.end());

    for (int t = 0; t < config.num_tasks; ++t) {
        TaskSpec spec = pool[static_cast<std::size_t>(t)];
        spec.task_id = t + 1;
        if (t > 0) {
            spec.predecessor = t;
            spec.portable_overlap = config.overlap.size() == 1 ? config.overlap[0]
                                                               : config.overlap[static_cast<std::size_t>(t - 1)];
        }
        st.tasks.push_back({spec, {}, {}});
    }

    std::uint32_t next_id = 0;
    auto assign_ids = [&](std::vector<Sample>& v) {
        for (auto& s : v) s.id = next_id++;
    };
    {
        auto& td = st.pretrain;
        const auto pools = detail::split_instances(config, 0, rng.split({3, 0}));
        td.train = detail::draw_samples(v, td.spec, nullptr, pools.train, config.pretrain_train, 0.0, 0, rng.split({4, 0}));
        td.test = detail::draw_samples(v, td.spec, nullptr, pools.test, config.n_test, 0.0, 0, rng.split({4, 1}));
        assign_ids(td.train);
        assign_ids(td.test);
    }
    for (std::size_t t = 0; t < st.tasks.size(); ++t) {
        auto& td = st.tasks[t];
        const TaskSpec* pred = t > 0 ? &st.tasks[t - 1].spec : nullptr;
        const auto pools = detail::split_instances(config, td.spec.domain, rng.split({3, static_cast<std::uint64_t>(td.spec.domain)}));
        td.train = detail::draw_samples(v, td.spec, pred, pools.train, config.n_train, td.spec.portable_overlap,
                                        td.spec.task_id, rng.split({5, t, 0}));
        td.test = detail::draw_samples(v, td.spec, pred, pools.test, config.n_test, td.spec.portable_overlap,
                                       td.spec.task_id, rng.split({5, t, 1}));
        assign_ids(td.train);
        assign_ids(td.test);
    }
    return st;
}

/** Runs the reasoning span of a trajectory on the sample's decoded state.
 *
 * Returns the answer token, or nullopt ("invalid") when the reasoning
 * delimiters are missing or any enclosed token is not an op. */
inline std::optional<Token> execute_reasoning(const VocabLayout& v, std::span<const Token> trajectory,
                                              const TaskSpec& spec, const Sample& sample) {
    const auto open = std::find(trajectory.begin(), trajectory.end(), v.reason_open());
    if (open == trajectory.end()) return std::nullopt;
    const auto close = std::find(open + 1, trajectory.end(), v.reason_close());
    if (close == trajectory.end()) return std::nullopt;
    const auto decoded = decode_question(v, spec, sample.question);
    if (!decoded) return std::nullopt;
    int state = decoded->state;
    for (auto it = open + 1; it != close; ++it) {
        if (v.classify(*it) != TokenClass::Op) return std::nullopt;
        const int id = v.op_id(*it);
        if (id >= v.num_ops) return std::nullopt;
        state = op_table()[static_cast<std::size_t>(id)].apply(state, v.modulus);
    }
    return v.answer(state);
}

enum class FormatClass { Perfect, Partial, Violation };

struct RewardVerifier {
    double accuracy_value = 1.0;
    double format_perfect = 0.7;
    double format_partial = 0.0;
    double format_violation = -0.7;
};

struct Reward {
    double total = 0.0;
    double accuracy = 0.0;
    double format = 0.0;
    FormatClass format_class = FormatClass::Violation;
};

/// Perfect iff the sequence is exactly RO x* RC AO a AC with x non-delimiters and a an answer token.
inline FormatClass classify_format(const VocabLayout& v, std::span<const Token> t) {
    const auto has = [&](Token d) { return std::find(t.begin(), t.end(), d) != t.end(); };
    if (!has(v.reason_open()) || !has(v.reason_close()) || !has(v.answer_open()) || !has(v.answer_close()))
        return FormatClass::Violation;
    const std::size_t n = t.size();
    if (n < 5 || t[0] != v.reason_open()) return FormatClass::Partial;
    std::size_t i = 1;
    while (i < n && !v.is_delimiter(t[i])) ++i;
    if (i + 4 != n) return FormatClass::Partial;
    if (t[i] != v.reason_close() || t[i + 1] != v.answer_open() || t[i + 3] != v.answer_close())
        return FormatClass::Partial;
    if (v.classify(t[i + 2]) != TokenClass::Answer) return FormatClass::Partial;
    return FormatClass::Perfect;
}

/// The single answer token enclosed by the first AO ... AC pair, if any.
inline std::optional<Token> extract_answer(const VocabLayout& v, std::span<const Token> t) {
    const auto open = std::find(t.begin(), t.end(), v.answer_open());
    if (open == t.end()) return std::nullopt;
    const auto close = std::find(open + 1, t.end(), v.answer_close());
    if (close == t.end() || close - open != 2) return std::nullopt;
    if (v.classify(*(open + 1)) != TokenClass::Answer) return std::nullopt;
    return *(open + 1);
}

/// Accuracy (1.0 iff the extracted answer matches) plus format (0.7 / 0.0 / -0.7).
inline Reward verify(const VocabLayout& v, std::span<const Token> trajectory, const Sample& sample,
                     const RewardVerifier& rv = {}) {
    Reward r;
    r.format_class = classify_format(v, trajectory);
    switch (r.format_class) {
    case FormatClass::Perfect: r.format = rv.format_perfect; break;
    case FormatClass::Partial: r.format = rv.format_partial; break;
    case FormatClass::Violation: r.format = rv.format_violation; break;
    }
    const auto a = extract_answer(v, trajectory);
    r.accuracy = (a && *a == sample.ground_truth) ? rv.accuracy_value : 0.0;
    r.total = r.accuracy + r.format;
    return r;
}

/// Reasoning is correct when executing it reproduces the ground truth, whatever answer was emitted.
inline bool reasoning_correct(const VocabLayout& v, std::span<const Token> trajectory, const TaskSpec& spec,
                              const Sample& sample) {
    const auto a = execute_reasoning(v, trajectory, spec, sample);
    return a && *a == sample.ground_truth;
}

// --- line-delimited stream dump -------------------------------------------

namespace detail {

template <typename T>
std::string join(const std::vector<T>& v, char sep = ',') {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? std::string(1, sep) : "") << v[i];
    return os.str();
}

inline std::vector<int> split_ints(const std::string& s, char sep = ',') {
    std::vector<int> out;
    if (s.empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(std::stoi(item));
    return out;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, '\t')) out.push_back(item);
    return out;
}

} // namespace detail

/** Writes a stream as tab-separated records.
 *
 *   #vocab  M keys fillers ops qlen
 *   #spec   task_id keys domain rules perm relabel overlap predecessor
 *   task_id split tokens ground_truth portable
 *
 * keys and perm are comma lists; rules separates families with ';'. split
 * is one of pretrain-train, pretrain-test, train, test. */
inline void dump_stream(const Stream& st, std::ostream& os) {
    const auto& v = st.vocab;
    os << "#vocab\t" << v.modulus << '\t' << v.num_keys << '\t' << v.num_fillers << '\t' << v.num_ops << '\t'
       << st.config.question_length() << '\n';
    auto spec_line = [&](const TaskSpec& s) {
        std::ostringstream ov;
        ov.precision(17);
        ov << s.portable_overlap;
        std::string rules;
        for (std::size_t f = 0; f < s.rules.size(); ++f) rules += (f ? ";" : "") + detail::join(s.rules[f]);
        os << "#spec\t" << s.task_id << '\t' << detail::join(s.keys) << '\t' << s.domain << '\t' << rules << '\t'
           << detail::join(s.position_perm) << '\t' << detail::join(s.digit_relabel) << '\t' << ov.str() << '\t'
           << s.predecessor << '\n';
    };
    spec_line(st.pretrain.spec);
    for (const auto& t : st.tasks) spec_line(t.spec);
    auto sample_line = [&](const Sample& s, const char* split) {
        os << s.task_id << '\t' << split << '\t' << detail::join(s.question, ' ') << '\t' << s.ground_truth << '\t'
           << (s.portable ? 1 : 0) << '\n';
    };
    for (const auto& s : st.pretrain.train) sample_line(s, "pretrain-train");
    for (const auto& s : st.pretrain.test) sample_line(s, "pretrain-test");
    for (const auto& t : st.tasks) {
        for (const auto& s : t.train) sample_line(s, "train");
        for (const auto& s : t.test) sample_line(s, "test");
    }
}

/// Reads a dump produced by dump_stream. Sample state and rule are recovered from the owning spec.
inline Stream load_stream(std::istream& is) {
    Stream st;
    std::string line;
    int lineno = 0;
    bool have_vocab = false;
    bool have_pretrain = false;
    std::uint32_t next_id = 0;
    auto fail = [&](const std::string& msg) { throw Error("stream dump line " + std::to_string(lineno) + ": " + msg); };
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = detail::split_tabs(line);
        try {
            if (f[0] == "#vocab") {
                if (f.size() != 6) fail("malformed #vocab record");
                st.vocab = {std::stoi(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4])};
                st.config.modulus = st.vocab.modulus;
                st.config.num_ops = st.vocab.num_ops;
                st.config.filler_slots = std::stoi(f[5]) - 2;
                have_vocab = true;
                continue;
            }
            if (!have_vocab) fail("#vocab record must come first");
            if (f[0] == "#spec") {
                if (f.size() != 9) fail("malformed #spec record");
                TaskSpec s;
                s.task_id = std::stoi(f[1]);
                s.modulus = st.vocab.modulus;
                s.keys = detail::split_ints(f[2]);
                s.domain = std::stoi(f[3]);
                std::stringstream rs(f[4]);
                std::string item;
                while (std::getline(rs, item, ';')) s.rules.push_back(detail::split_ints(item));
                if (s.rules.size() != s.keys.size()) fail("one rule per key required");
                s.position_perm = detail::split_ints(f[5]);
                s.digit_relabel = detail::split_ints(f[6]);
                s.portable_overlap = std::stod(f[7]);
                s.predecessor = std::stoi(f[8]);
                if (s.task_id == 0) {
                    st.pretrain.spec = s;
                    have_pretrain = true;
                } else {
                    st.tasks.push_back({s, {}, {}});
                }
                continue;
            }
            if (f.size() != 5) fail("expected 5 fields in sample record");
            Sample s;
            s.id = next_id++;
            s.task_id = std::stoi(f[0]);
            for (int tok : detail::split_ints(f[2], ' ')) s.question.push_back(tok);
            s.ground_truth = std::stoi(f[3]);
            s.portable = f[4] == "1";
            const std::string& split = f[1];
            TaskData* owner = nullptr;
            if (s.task_id == 0 && have_pretrain) owner = &st.pretrain;
            for (auto& t : st.tasks)
                if (t.spec.task_id == s.task_id) owner = &t;
            if (!owner) fail("sample refers to an unknown task");
            const auto d = decode_question(st.vocab, owner->spec, s.question);
            if (!d) fail("question does not decode under its task encoding");
            s.state = d->state;
            s.rule = st.rule_for_key(d->key);
            if (split == "train" || split == "pretrain-train")
                owner->train.push_back(std::move(s));
            else if (split == "test" || split == "pretrain-test")
                owner->test.push_back(std::move(s));
            else
                fail("unknown split '" + split + "'");
        } catch (const std::invalid_argument&) {
            fail("non-numeric field");
        } catch (const std::out_of_range&) {
            fail("numeric field out of range");
        } catch (const Error&) {
            throw;
        }
    }
    st.config.num_tasks = st.num_tasks();
    st.config.pretrain_rules = static_cast<int>(st.pretrain.spec.keys.size());
    if (!st.tasks.empty()) st.config.keys_per_task = static_cast<int>(st.tasks.front().spec.keys.size());
    return st;
}

} // namespace rdbcl
