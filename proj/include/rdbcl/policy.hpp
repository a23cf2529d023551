#pragma once

// Tiny autoregressive policy: a two-layer MLP over the mean-pooled prefix
// plus the last-token embedding.
//
//   e_j    = E[tok_j] + P[j]
//   x      = (1/n) sum_{j<n} e_j + e_{n-1}
//   hidden = tanh(W1 x + b1)
//   logits = W2 hidden + b2
//
// Flattened parameter order (fixed, relied on by EWC and gradient checks):
//   E (V x d) | P (L x d) | W1 (h x d) | b1 (h) | W2 (V x h) | b2 (V), all row-major.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rdbcl/numerics.hpp"
#include "rdbcl/tasks.hpp"

namespace rdbcl {

struct PolicyDims {
    int vocab = 0;
    int embed = 8;
    int hidden = 16;
    int max_positions = 16;

    std::size_t tok_emb_offset() const { return 0; }
    std::size_t pos_emb_offset() const { return tok_emb_offset() + sz(vocab) * sz(embed); }
    std::size_t w1_offset() const { return pos_emb_offset() + sz(max_positions) * sz(embed); }
    std::size_t b1_offset() const { return w1_offset() + sz(hidden) * sz(embed); }
    std::size_t w2_offset() const { return b1_offset() + sz(hidden); }
    std::size_t b2_offset() const { return w2_offset() + sz(vocab) * sz(hidden); }
    std::size_t param_count() const { return b2_offset() + sz(vocab); }

    bool operator==(const PolicyDims&) const = default;

private:
    static std::size_t sz(int v) { return static_cast<std::size_t>(v); }
};

/// theta: the full parameter vector with its architecture.
struct PolicyParams {
    PolicyDims dims;
    std::vector<double> theta;

    ConstMatrixView tok_emb() const { return view(dims.tok_emb_offset(), dims.vocab, dims.embed); }
    ConstMatrixView pos_emb() const { return view(dims.pos_emb_offset(), dims.max_positions, dims.embed); }
    ConstMatrixView w1() const { return view(dims.w1_offset(), dims.hidden, dims.embed); }
    std::span<const double> b1() const { return std::span<const double>(theta).subspan(dims.b1_offset(), static_cast<std::size_t>(dims.hidden)); }
    ConstMatrixView w2() const { return view(dims.w2_offset(), dims.vocab, dims.hidden); }
    std::span<const double> b2() const { return std::span<const double>(theta).subspan(dims.b2_offset(), static_cast<std::size_t>(dims.vocab)); }

private:
    ConstMatrixView view(std::size_t off, int rows, int cols) const {
        const auto n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
        return {std::span<const double>(theta).subspan(off, n), static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
    }
};

/// Mutable views into a gradient buffer laid out like PolicyParams::theta.
struct GradientViews {
    MatrixView tok_emb, pos_emb, w1, w2;
    std::span<double> b1, b2;

    GradientViews(const PolicyDims& d, std::span<double> g) {
        auto mv = [&](std::size_t off, int rows, int cols) {
            const auto n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
            return MatrixView{g.subspan(off, n), static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
        };
        tok_emb = mv(d.tok_emb_offset(), d.vocab, d.embed);
        pos_emb = mv(d.pos_emb_offset(), d.max_positions, d.embed);
        w1 = mv(d.w1_offset(), d.hidden, d.embed);
        b1 = g.subspan(d.b1_offset(), static_cast<std::size_t>(d.hidden));
        w2 = mv(d.w2_offset(), d.vocab, d.hidden);
        b2 = g.subspan(d.b2_offset(), static_cast<std::size_t>(d.vocab));
    }
};

inline PolicyParams init_policy(const PolicyDims& dims, Rng rng, double scale = 0.02) {
    if (dims.vocab < 2 || dims.embed < 1 || dims.hidden < 1 || dims.max_positions < 1)
        throw Error("init_policy: invalid dimensions");
    PolicyParams p{dims, std::vector<double>(dims.param_count(), 0.0)};
    auto fill = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) p.theta[i] = scale * rng.normal();
    };
    fill(dims.tok_emb_offset(), dims.b1_offset());
    fill(dims.w2_offset(), dims.b2_offset());
    return p;
}

/// Frozen copy of a policy, tagged with the task index it was taken after.
class PolicySnapshot {
public:
    PolicySnapshot() = default;
    PolicySnapshot(PolicyParams params, int provenance)
        : params_(std::make_shared<const PolicyParams>(std::move(params))), provenance_(provenance) {}

    const PolicyParams& params() const {
        if (!params_) throw Error("PolicySnapshot: empty snapshot");
        return *params_;
    }
    int provenance() const { return provenance_; }
    std::uint64_t hash() const { return hash_doubles(params().theta); }
    explicit operator bool() const { return static_cast<bool>(params_); }

private:
    std::shared_ptr<const PolicyParams> params_;
    int provenance_ = -1;
};

struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

struct Trajectory {
    std::vector<Token> tokens;     ///< emitted tokens, question excluded
    std::vector<double> logprobs;  ///< full-softmax log-prob of each emitted token
    std::optional<TokenSpan> reasoning;  ///< tokens strictly between RO and RC
    std::optional<TokenSpan> answer;     ///< tokens strictly between AO and AC
    bool finished = false;               ///< ended on ANSWER_CLOSE
};

/// Reasoning and answer spans, present only when the format is perfect.
inline void locate_spans(const VocabLayout& v, Trajectory& t) {
    t.reasoning.reset();
    t.answer.reset();
    if (classify_format(v, t.tokens) != FormatClass::Perfect) return;
    const auto rc = static_cast<std::size_t>(std::find(t.tokens.begin(), t.tokens.end(), v.reason_close()) - t.tokens.begin());
    t.reasoning = TokenSpan{1, rc};
    t.answer = TokenSpan{rc + 2, rc + 3};
}

struct DecodeConfig {
    double temperature = 0.7;
    int top_k = 50;
    double top_p = 0.9;
    int max_len = 9;
    bool greedy = false;
};

constexpr int kMinFormatLength = 5;  // RO RC AO a AC

/** Incremental forward pass over a growing prefix.
 *
 * Keeps the running embedding sum so each next-token distribution costs
 * O(d + h d + V h). */
class PrefixState {
public:
    explicit PrefixState(const PolicyParams& p)
        : p_(&p), sum_(static_cast<std::size_t>(p.dims.embed), 0.0), last_(sum_.size()), x_(sum_.size()),
          hidden_(static_cast<std::size_t>(p.dims.hidden)), logits_(static_cast<std::size_t>(p.dims.vocab)) {}

    void push(Token t) {
        const auto& d = p_->dims;
        if (t < 0 || t >= d.vocab) throw Error("policy: out-of-vocabulary token " + std::to_string(t));
        if (n_ >= static_cast<std::size_t>(d.max_positions)) throw Error("policy: prefix exceeds max_positions");
        const auto e = p_->tok_emb().row(static_cast<std::size_t>(t));
        const auto pe = p_->pos_emb().row(n_);
        for (std::size_t k = 0; k < sum_.size(); ++k) {
            last_[k] = e[k] + pe[k];
            sum_[k] += last_[k];
        }
        ++n_;
    }
    void push(std::span<const Token> ts) {
        for (Token t : ts) push(t);
    }
    std::size_t length() const { return n_; }

    /// Logits for the next token; also fills hidden() and input().
    std::span<const double> logits() {
        if (n_ == 0) throw Error("policy: empty prefix");
        const double inv = 1.0 / static_cast<double>(n_);
        for (std::size_t k = 0; k < x_.size(); ++k) x_[k] = sum_[k] * inv + last_[k];
        matvec(p_->w1(), x_, p_->b1(), hidden_);
        for (double& h : hidden_) h = std::tanh(h);
        matvec(p_->w2(), hidden_, p_->b2(), logits_);
        return logits_;
    }
    std::span<const double> hidden() const { return hidden_; }
    std::span<const double> input() const { return x_; }

private:
    const PolicyParams* p_;
    std::vector<double> sum_, last_, x_, hidden_, logits_;
    std::size_t n_ = 0;
};

inline void check_decode(const DecodeConfig& dc) {
    if (dc.max_len < kMinFormatLength)
        throw Error("decode: max_len " + std::to_string(dc.max_len) + " is below the minimal format length 5");
    if (!dc.greedy && !(dc.temperature > 0.0)) throw Error("decode: temperature must be > 0");
    if (!(dc.top_p > 0.0 && dc.top_p <= 1.0)) throw Error("decode: top_p must be in (0, 1]");
}

/// Index drawn from logits under temperature / top-k / top-p, or argmax when greedy.
inline std::size_t choose_token(std::span<const double> logits, const DecodeConfig& dc, Rng& rng) {
    const std::size_t V = logits.size();
    if (dc.greedy) return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    std::vector<double> scaled(V);
    for (std::size_t i = 0; i < V; ++i) scaled[i] = logits[i] / dc.temperature;
    const auto probs = softmax(scaled);
    std::vector<std::size_t> order(V);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    std::size_t keep = V;
    if (dc.top_k > 0 && static_cast<std::size_t>(dc.top_k) < V) keep = static_cast<std::size_t>(dc.top_k);
    if (dc.top_p < 1.0) {
        double cum = 0.0;
        std::size_t i = 0;
        while (i < keep) {
            cum += probs[order[i]];
            ++i;
            if (cum >= dc.top_p) break;
        }
        keep = std::max<std::size_t>(1, i);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < keep; ++i) total += probs[order[i]];
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < keep; ++i) {
        u -= probs[order[i]];
        if (u < 0.0) return order[i];
    }
    return order[keep - 1];
}

/** n ancestral samples for one question.
 *
 * Generation stops at ANSWER_CLOSE or after max_len tokens. Recorded
 * log-probs come from the untruncated temperature-1 softmax, whatever
 * truncation was used to pick the token. */
inline std::vector<Trajectory> sample_trajectories(const PolicyParams& p, const VocabLayout& v, const Sample& sample,
                                                   int n, const DecodeConfig& dc, Rng& rng) {
    if (n < 1) throw Error("sample_trajectories: n must be >= 1");
    check_decode(dc);
    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(n));
    PrefixState base(p);
    base.push(sample.question);
    for (int i = 0; i < n; ++i) {
        PrefixState st = base;
        Trajectory t;
        for (int step = 0; step < dc.max_len; ++step) {
            const auto logits = st.logits();
            const std::size_t tok = choose_token(logits, dc, rng);
            const auto lp = log_softmax(logits);
            t.tokens.push_back(static_cast<Token>(tok));
            t.logprobs.push_back(lp[tok]);
            if (static_cast<Token>(tok) == v.answer_close()) {
                t.finished = true;
                break;
            }
            st.push(static_cast<Token>(tok));
        }
        locate_spans(v, t);
        out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<Trajectory> sample_trajectories(const PolicySnapshot& s, const VocabLayout& v, const Sample& sample,
                                                   int n, const DecodeConfig& dc, Rng& rng) {
    return sample_trajectories(s.params(), v, sample, n, dc, rng);
}

/// Teacher-forced log pi(token_t | question, tokens_<t) for every emitted token.
inline std::vector<double> logprobs_under(const PolicyParams& p, std::span<const Token> tokens,
                                          std::span<const Token> question) {
    PrefixState st(p);
    st.push(question);
    std::vector<double> out;
    out.reserve(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (tokens[t] < 0 || tokens[t] >= p.dims.vocab)
            throw Error("logprobs_under: out-of-vocabulary token " + std::to_string(tokens[t]));
        const auto lp = log_softmax(st.logits());
        out.push_back(lp[static_cast<std::size_t>(tokens[t])]);
        if (t + 1 < tokens.size()) st.push(tokens[t]);
    }
    return out;
}

inline std::vector<double> logprobs_under(const PolicyParams& p, const Trajectory& t, const Sample& s) {
    return logprobs_under(p, t.tokens, s.question);
}
inline std::vector<double> logprobs_under(const PolicySnapshot& snap, const Trajectory& t, const Sample& s) {
    return logprobs_under(snap.params(), t.tokens, s.question);
}

/// Full next-token log-distribution after `prefix`.
inline std::vector<double> next_log_distribution(const PolicyParams& p, std::span<const Token> prefix) {
    PrefixState st(p);
    st.push(prefix);
    return log_softmax(st.logits());
}

/// Post-activation hidden vector at the final position of `prefix`.
inline std::vector<double> hidden_activation(const PolicyParams& p, std::span<const Token> prefix) {
    PrefixState st(p);
    st.push(prefix);
    st.logits();
    const auto h = st.hidden();
    return {h.begin(), h.end()};
}

/// Called per predicted position with the log-distribution; writes dLoss/dlogits.
using LogitGradFn = std::function<void(std::size_t position, std::span<const double> logp, std::span<double> g_logits)>;

/** Accumulates into `grad` the gradient of a loss whose logit gradients are
 * supplied by `fill` at each position.
 *
 * `seq` is the full token sequence; positions first..seq.size()-1 are
 * predicted, position i from the prefix seq[0..i). */
inline void backprop_sequence(const PolicyParams& p, std::span<const Token> seq, std::size_t first,
                              const LogitGradFn& fill, std::span<double> grad) {
    const auto& d = p.dims;
    if (grad.size() != d.param_count()) throw Error("backprop: gradient buffer has wrong dimension");
    if (first == 0 || first > seq.size()) throw Error("backprop: first predicted position out of range");
    for (Token t : seq)
        if (t < 0 || t >= d.vocab) throw Error("backprop: out-of-vocabulary token " + std::to_string(t));
    if (seq.size() > static_cast<std::size_t>(d.max_positions))
        throw Error("backprop: sequence exceeds max_positions");

    GradientViews g(d, grad);
    const std::size_t E = static_cast<std::size_t>(d.embed);
    const std::size_t V = static_cast<std::size_t>(d.vocab);
    const std::size_t H = static_cast<std::size_t>(d.hidden);
    std::vector<double> g_logits(V), g_hidden(H), g_x(E);
    // pool_grad[j] accumulates sum over predicted positions i > j of g_x(i) / i.
    std::vector<double> pool_grad(seq.size() * E, 0.0);

    PrefixState st(p);
    st.push(seq.subspan(0, first));
    for (std::size_t i = first; i < seq.size(); ++i) {
        const auto logits = st.logits();
        const auto lp = log_softmax(logits);
        std::fill(g_logits.begin(), g_logits.end(), 0.0);
        fill(i, lp, g_logits);
        const bool any = std::any_of(g_logits.begin(), g_logits.end(), [](double v) { return v != 0.0; });
        if (any) {
            const auto hidden = st.hidden();
            add_outer(g.w2, g_logits, hidden);
            for (std::size_t v = 0; v < V; ++v) g.b2[v] += g_logits[v];
            std::fill(g_hidden.begin(), g_hidden.end(), 0.0);
            matvec_transposed_acc(p.w2(), g_logits, g_hidden);
            for (std::size_t k = 0; k < H; ++k) g_hidden[k] *= 1.0 - hidden[k] * hidden[k];
            add_outer(g.w1, g_hidden, st.input());
            for (std::size_t k = 0; k < H; ++k) g.b1[k] += g_hidden[k];
            std::fill(g_x.begin(), g_x.end(), 0.0);
            matvec_transposed_acc(p.w1(), g_hidden, g_x);
            // Last-token term goes straight to position i-1; the pooled term is spread later.
            const std::size_t last = i - 1;
            auto te = g.tok_emb.row(static_cast<std::size_t>(seq[last]));
            auto pe = g.pos_emb.row(last);
            const double inv = 1.0 / static_cast<double>(i);
            for (std::size_t k = 0; k < E; ++k) {
                te[k] += g_x[k];
                pe[k] += g_x[k];
                pool_grad[last * E + k] += g_x[k] * inv;
            }
        }
        if (i + 1 < seq.size()) st.push(seq[i]);
    }
    // Suffix-sum: position j receives the pooled gradient of every prediction made after it.
    std::vector<double> running(E, 0.0);
    for (std::size_t j = seq.size(); j-- > 0;) {
        for (std::size_t k = 0; k < E; ++k) running[k] += pool_grad[j * E + k];
        auto te = g.tok_emb.row(static_cast<std::size_t>(seq[j]));
        auto pe = g.pos_emb.row(j);
        for (std::size_t k = 0; k < E; ++k) {
            te[k] += running[k];
            pe[k] += running[k];
        }
    }
}

/** Gradient of sum_t weights[t] * log pi(token_t | prefix) over theta.
 *
 * Exact and in the PolicyParams flattening order. */
inline std::vector<double> backprop(const PolicyParams& p, std::span<const Token> tokens, std::span<const Token> question,
                                    std::span<const double> weights) {
    if (weights.size() != tokens.size()) throw Error("backprop: one weight per emitted token required");
    require_finite(weights, "backprop weights");
    std::vector<double> grad(p.dims.param_count(), 0.0);
    if (tokens.empty()) return grad;
    std::vector<Token> seq(question.begin(), question.end());
    seq.insert(seq.end(), tokens.begin(), tokens.end());
    const std::size_t q = question.size();
    backprop_sequence(
        p, seq, q,
        [&](std::size_t pos, std::span<const double> lp, std::span<double> gl) {
            const double w = weights[pos - q];
            if (w == 0.0) return;
            for (std::size_t v = 0; v < gl.size(); ++v) gl[v] = -w * std::exp(lp[v]);
            gl[static_cast<std::size_t>(seq[pos])] += w;
        },
        grad);
    return grad;
}

inline std::vector<double> backprop(const PolicyParams& p, const Trajectory& t, const Sample& s,
                                    std::span<const double> weights) {
    return backprop(p, t.tokens, s.question, weights);
}

// --- checkpoints ------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_uint(std::istream& is, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = is.get();
        if (c == EOF) throw Error("checkpoint: truncated file");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

constexpr char kCheckpointMagic[8] = {'R', 'D', 'B', 'C', 'L', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

} // namespace detail

/** Little-endian checkpoint: magic, version, V, d, h, L, provenance (i32),
 * parameter count (u64), then each double as its IEEE-754 bit pattern. */
inline void write_checkpoint(std::ostream& os, const PolicyParams& p, int provenance) {
    os.write(detail::kCheckpointMagic, 8);
    detail::put_u32(os, detail::kCheckpointVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(p.dims.vocab));
    detail::put_u32(os, static_cast<std::uint32_t>(p.dims.embed));
    detail::put_u32(os, static_cast<std::uint32_t>(p.dims.hidden));
    detail::put_u32(os, static_cast<std::uint32_t>(p.dims.max_positions));
    detail::put_u32(os, static_cast<std::uint32_t>(provenance));
    detail::put_u64(os, p.theta.size());
    for (double d : p.theta) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        detail::put_u64(os, bits);
    }
}

inline PolicySnapshot read_checkpoint(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || !std::equal(magic, magic + 8, detail::kCheckpointMagic)) throw Error("checkpoint: bad magic");
    if (detail::get_uint(is, 4) != detail::kCheckpointVersion) throw Error("checkpoint: unsupported version");
    PolicyParams p;
    p.dims.vocab = static_cast<int>(detail::get_uint(is, 4));
    p.dims.embed = static_cast<int>(detail::get_uint(is, 4));
    p.dims.hidden = static_cast<int>(detail::get_uint(is, 4));
    p.dims.max_positions = static_cast<int>(detail::get_uint(is, 4));
    const auto provenance = static_cast<std::int32_t>(static_cast<std::uint32_t>(detail::get_uint(is, 4)));
    const std::uint64_t n = detail::get_uint(is, 8);
    if (n != p.dims.param_count()) throw Error("checkpoint: parameter count does not match dimensions");
    p.theta.resize(n);
    for (auto& d : p.theta) {
        const std::uint64_t bits = detail::get_uint(is, 8);
        std::memcpy(&d, &bits, 8);
    }
    require_finite(p.theta, "checkpoint");
    return PolicySnapshot(std::move(p), provenance);
}

inline void save_checkpoint(const std::string& path, const PolicyParams& p, int provenance) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open checkpoint for writing: " + path);
    write_checkpoint(os, p, provenance);
}

inline PolicySnapshot load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint: " + path);
    return read_checkpoint(is);
}

} // namespace rdbcl
