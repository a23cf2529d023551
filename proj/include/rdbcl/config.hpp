#pragma once

// Experiment configuration. A YAML file with fixed sections; every key has a
// default, unknown keys are rejected with the offending line, and dotted
// `section.key=value` overrides go through the same typed setters.

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "rdbcl/continual.hpp"

namespace rdbcl {

class ConfigError : public Error {
public:
    using Error::Error;
};

/// A named set of dotted overrides applied on top of the base config.
struct Variant {
    std::string label;
    std::vector<std::pair<std::string, std::string>> set;  ///< dotted key, YAML value text
};

struct PolicyShape {
    int embed = 16;
    int hidden = 48;
    int max_positions = 16;
};

/// The designed two-task stream: two single-op families per task over fresh ops.
inline StreamConfig designed_stream() {
    StreamConfig s;
    s.keys_per_task = 2;
    s.rule_len_max = 1;
    s.pretrain_rules = 6;
    return s;
}

/// Library defaults, with decode.max_len left to resolve().
inline TrainConfig default_train() {
    TrainConfig t;
    t.rollout.max_len = 0;
    return t;
}

struct ExperimentConfig {
    std::string name = "designed";
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string output_dir;  ///< empty: <output root>/<name>
    StreamConfig stream = designed_stream();
    PolicyShape policy;
    WarmStartConfig warm_start;
    TrainConfig train = default_train();  ///< method, gate, decode, optimizer, reward, penalties
    std::vector<Variant> variants;
};

namespace detail {

inline std::string format_double(double x) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), x);
    std::string s(buf, r.ptr);
    // keep a float-looking literal so the type survives a round trip by eye
    if (s.find_first_of(".eEni") == std::string::npos) s += ".0";
    return s;
}

template <class T>
std::string format_list(const std::vector<T>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        if constexpr (std::is_floating_point_v<T>)
            s += format_double(v[i]);
        else
            s += std::to_string(v[i]);
    }
    return s + "]";
}

inline std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

inline std::string where(const YAML::Node& n) {
    const auto m = n.Mark();
    return m.is_null() ? std::string("config") : "config:" + std::to_string(m.line + 1);
}

template <class T>
T scalar_as(const YAML::Node& n, const std::string& key, const char* type) {
    if (!n.IsScalar()) throw ConfigError(where(n) + ": key '" + key + "' expects " + type);
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(where(n) + ": key '" + key + "' expects " + type + ", got '" + n.Scalar() + "'");
    }
}

template <class T>
std::vector<T> list_as(const YAML::Node& n, const std::string& key, const char* type) {
    if (n.IsScalar()) return {scalar_as<T>(n, key, type)};
    if (!n.IsSequence()) throw ConfigError(where(n) + ": key '" + key + "' expects a list of " + type);
    std::vector<T> out;
    for (const auto& e : n) out.push_back(scalar_as<T>(e, key, type));
    return out;
}

} // namespace detail

/// One schema entry: a dotted name bound to a field of a config instance.
struct ConfigField {
    std::string key;
    std::string type;
    std::function<void(const YAML::Node&)> set;
    std::function<std::string()> get;
};

/// The schema, bound to `c`. Order here is the serialization order.
inline std::vector<ConfigField> config_fields(ExperimentConfig& c) {
    std::vector<ConfigField> f;
    auto add_int = [&f](std::string k, int& x) {
        f.push_back({k, "int", [&x, k](const YAML::Node& n) { x = detail::scalar_as<int>(n, k, "an integer"); },
                     [&x] { return std::to_string(x); }});
    };
    auto add_real = [&f](std::string k, double& x) {
        f.push_back({k, "real", [&x, k](const YAML::Node& n) { x = detail::scalar_as<double>(n, k, "a number"); },
                     [&x] { return detail::format_double(x); }});
    };
    auto add_bool = [&f](std::string k, bool& x) {
        f.push_back({k, "bool", [&x, k](const YAML::Node& n) { x = detail::scalar_as<bool>(n, k, "true or false"); },
                     [&x] { return std::string(x ? "true" : "false"); }});
    };
    auto add_string = [&f](std::string k, std::string& x) {
        f.push_back({k, "string", [&x, k](const YAML::Node& n) { x = detail::scalar_as<std::string>(n, k, "a string"); },
                     [&x] { return detail::quote(x); }});
    };
    auto add_choice = [&f](std::string k, std::vector<std::string> choices, std::function<std::string()> get,
                           std::function<void(std::size_t)> put) {
        std::string type;
        for (const auto& ch : choices) type += (type.empty() ? "" : "|") + ch;
        f.push_back({k, type,
                     [k, choices, put, type](const YAML::Node& n) {
                         const auto s = detail::scalar_as<std::string>(n, k, "a string");
                         for (std::size_t i = 0; i < choices.size(); ++i)
                             if (s == choices[i]) return put(i);
                         throw ConfigError(detail::where(n) + ": key '" + k + "' must be one of " + type + ", got '" + s + "'");
                     },
                     get});
    };

    add_string("name", c.name);
    add_choice("method", {"rdbcl", "grpo_static", "ewc", "lwf", "sft"},
               [&c] { return std::string(to_string(c.train.method)); },
               [&c](std::size_t i) { c.train.method = static_cast<Method>(i); });
    f.push_back({"seeds", "list of int",
                 [&c](const YAML::Node& n) {
                     c.seeds.clear();
                     for (long long s : detail::list_as<long long>(n, "seeds", "non-negative integers")) {
                         if (s < 0) throw ConfigError(detail::where(n) + ": seeds must be non-negative");
                         c.seeds.push_back(static_cast<std::uint64_t>(s));
                     }
                 },
                 [&c] { return detail::format_list(c.seeds); }});
    add_string("output_dir", c.output_dir);

    auto& s = c.stream;
    add_int("stream.num_tasks", s.num_tasks);
    add_int("stream.modulus", s.modulus);
    add_int("stream.num_ops", s.num_ops);
    add_int("stream.rule_len_min", s.rule_len_min);
    add_int("stream.rule_len_max", s.rule_len_max);
    add_int("stream.keys_per_task", s.keys_per_task);
    add_int("stream.filler_slots", s.filler_slots);
    add_int("stream.fillers_per_domain", s.fillers_per_domain);
    add_int("stream.pretrain_rules", s.pretrain_rules);
    add_int("stream.n_train", s.n_train);
    add_int("stream.n_test", s.n_test);
    add_int("stream.pretrain_train", s.pretrain_train);
    f.push_back({"stream.overlap", "list of real",
                 [&s](const YAML::Node& n) { s.overlap = detail::list_as<double>(n, "stream.overlap", "numbers"); },
                 [&s] { return detail::format_list(s.overlap); }});
    add_bool("stream.reencode", s.reencode);
    add_bool("stream.relabel_digits", s.relabel_digits);
    add_int("stream.order", s.order);

    add_int("policy.embed", c.policy.embed);
    add_int("policy.hidden", c.policy.hidden);
    add_int("policy.max_positions", c.policy.max_positions);

    auto& w = c.warm_start;
    add_int("warm_start.steps", w.steps);
    add_int("warm_start.batch_size", w.batch_size);
    add_real("warm_start.drill_fraction", w.drill_fraction);
    add_real("warm_start.ambiguous_fraction", w.ambiguous_fraction);
    add_real("warm_start.novel_key_scale", w.novel_key_scale);
    add_real("warm_start.init_scale", w.init_scale);
    add_bool("warm_start.probe_supervision", w.probe_supervision);
    add_bool("warm_start.shuffle_positions", w.shuffle_positions);
    add_real("warm_start.lr", w.optimizer.lr_max);
    add_real("warm_start.warmup_ratio", w.optimizer.warmup_ratio);
    add_real("warm_start.weight_decay", w.optimizer.weight_decay);

    auto& t = c.train;
    add_real("gate.tau", t.gate.tau);
    add_real("gate.beta0", t.gate.beta0);
    add_real("gate.clip_min", t.gate.clip_min);
    add_choice("gate.probe_kind", {"likelihood", "binary_token"}, [&t] { return std::string(to_string(t.gate.probe_kind)); },
               [&t](std::size_t i) { t.gate.probe_kind = static_cast<ProbeKind>(i); });
    add_choice("gate.span", {"reasoning", "answer"}, [&t] { return std::string(to_string(t.gate.span)); },
               [&t](std::size_t i) { t.gate.span = static_cast<ConfidenceSpan>(i); });
    add_int("gate.n_ref_rollouts", t.gate.n_ref_rollouts);

    add_int("decode.group_size", t.group_size);
    add_real("decode.temperature", t.rollout.temperature);
    add_int("decode.top_k", t.rollout.top_k);
    add_real("decode.top_p", t.rollout.top_p);
    add_int("decode.max_len", t.rollout.max_len);

    add_real("optimizer.lr", t.optimizer.lr_max);
    add_real("optimizer.warmup_ratio", t.optimizer.warmup_ratio);
    add_real("optimizer.beta1", t.optimizer.beta1);
    add_real("optimizer.beta2", t.optimizer.beta2);
    add_real("optimizer.eps", t.optimizer.eps);
    add_real("optimizer.weight_decay", t.optimizer.weight_decay);

    add_real("train.static_k", t.static_k);
    add_real("train.ewc_lambda", t.ewc_lambda);
    add_real("train.lwf_lambda", t.lwf_lambda);
    add_int("train.fisher_samples", t.fisher_samples);
    add_int("train.batch_size", t.batch_size);
    add_int("train.steps_per_task", t.steps_per_task);
    add_real("train.early_stop_reward", t.early_stop_reward);
    add_int("train.early_stop_window", t.early_stop_window);
    add_int("train.passk_n", t.passk_n);
    f.push_back({"train.passk_ks", "list of int",
                 [&t](const YAML::Node& n) { t.passk_ks = detail::list_as<int>(n, "train.passk_ks", "integers"); },
                 [&t] { return detail::format_list(t.passk_ks); }});

    add_real("reward.accuracy", t.verifier.accuracy_value);
    add_real("reward.format_perfect", t.verifier.format_perfect);
    add_real("reward.format_partial", t.verifier.format_partial);
    add_real("reward.format_violation", t.verifier.format_violation);
    return f;
}

/// Sorted list of every accepted dotted key.
inline std::vector<std::string> config_keys() {
    ExperimentConfig c;
    std::vector<std::string> keys;
    for (const auto& f : config_fields(c)) keys.push_back(f.key);
    return keys;
}

inline bool is_config_key(const std::string& key) {
    for (const auto& k : config_keys())
        if (k == key) return true;
    return false;
}

/// Sets one dotted key from a YAML node; throws ConfigError for unknown keys or bad types.
inline void set_field(ExperimentConfig& c, const std::string& key, const YAML::Node& value) {
    for (auto& f : config_fields(c))
        if (f.key == key) return f.set(value);
    throw ConfigError(detail::where(value) + ": unknown key '" + key + "'");
}

inline YAML::Node load_value(const std::string& text, const std::string& key) {
    try {
        return YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("override '" + key + "': cannot parse value '" + text + "': " + e.msg);
    }
}

/// Applies `key=value`; the value is read as YAML, so `seeds=[1,2,3]` and `method=ewc` both work.
inline void apply_override(ExperimentConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    if (!is_config_key(key)) throw ConfigError("override: unknown key '" + key + "'");
    set_field(c, key, load_value(assignment.substr(eq + 1), key));
}

/// Applies every override of a variant to a copy of `base`.
inline ExperimentConfig apply_variant(const ExperimentConfig& base, const Variant& v) {
    ExperimentConfig c = base;
    c.variants.clear();
    for (const auto& [k, val] : v.set) {
        if (k == "seeds" || k == "name" || k == "output_dir")
            throw ConfigError("variant '" + v.label + "': key '" + k + "' cannot vary per variant");
        try {
            apply_override(c, k + "=" + val);
        } catch (const ConfigError& e) {
            throw ConfigError("variant '" + v.label + "': " + e.what());
        }
    }
    return c;
}

/// Fills derived defaults: decode.max_len 0 means rule_len_max + 6.
inline void resolve(ExperimentConfig& c) {
    if (c.train.rollout.max_len == 0) c.train.rollout.max_len = c.stream.rule_len_max + 6;
}

inline void validate_single(const ExperimentConfig& c) {
    try {
        validate(c.stream);
        validate(c.train);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (c.policy.embed < 1 || c.policy.hidden < 1) throw ConfigError("policy: embed and hidden must be >= 1");
    // question, trajectory, then one probe token
    const int need = c.stream.question_length() + c.train.rollout.max_len + 1;
    if (c.policy.max_positions < need)
        throw ConfigError("policy: max_positions " + std::to_string(c.policy.max_positions) + " is below the " +
                          std::to_string(need) + " positions a question plus max_len rollout needs");
    const auto& w = c.warm_start;
    if (w.steps < 0 || w.batch_size < 1) throw ConfigError("warm_start: steps >= 0 and batch_size >= 1 required");
    for (double x : {w.drill_fraction, w.ambiguous_fraction})
        if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("warm_start: fractions must be in [0,1]");
    if (!(w.novel_key_scale >= 0.0)) throw ConfigError("warm_start: novel_key_scale must be >= 0");
    if (!(w.init_scale > 0.0)) throw ConfigError("warm_start: init_scale must be > 0");
    if (!(w.optimizer.lr_max > 0.0) || !(c.train.optimizer.lr_max > 0.0)) throw ConfigError("learning rates must be > 0");
}

/// Validates the base config and every variant.
inline void validate(const ExperimentConfig& c) {
    if (c.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
    if (c.name.empty() || c.name.find('/') != std::string::npos) throw ConfigError("name must be non-empty without '/'");
    validate_single(c);
    std::vector<std::string> labels;
    for (const auto& v : c.variants) {
        if (v.label.empty()) throw ConfigError("variant without a label");
        if (std::find(labels.begin(), labels.end(), v.label) != labels.end())
            throw ConfigError("duplicate variant label '" + v.label + "'");
        labels.push_back(v.label);
        auto vc = apply_variant(c, v);
        resolve(vc);
        try {
            validate_single(vc);
        } catch (const ConfigError& e) {
            throw ConfigError("variant '" + v.label + "': " + e.what());
        }
    }
}

namespace detail {

inline std::string node_text(const YAML::Node& n) {
    if (n.IsScalar()) return n.Scalar();
    if (n.IsSequence()) {
        std::string s = "[";
        bool first = true;
        for (const auto& e : n) {
            if (!first) s += ", ";
            first = false;
            s += node_text(e);
        }
        return s + "]";
    }
    throw ConfigError(where(n) + ": override values must be scalars or lists");
}

inline std::vector<Variant> parse_variants(const YAML::Node& n) {
    if (!n.IsSequence()) throw ConfigError(where(n) + ": 'variants' must be a list");
    std::vector<Variant> out;
    for (const auto& item : n) {
        if (!item.IsMap()) throw ConfigError(where(item) + ": each variant is a map with 'label' and 'set'");
        Variant v;
        for (const auto& kv : item) {
            const auto k = kv.first.as<std::string>();
            if (k == "label") {
                v.label = scalar_as<std::string>(kv.second, "variants.label", "a string");
            } else if (k == "set") {
                if (!kv.second.IsMap()) throw ConfigError(where(kv.second) + ": variant 'set' must be a map");
                for (const auto& sv : kv.second) {
                    const auto key = sv.first.as<std::string>();
                    if (!is_config_key(key)) throw ConfigError(where(sv.first) + ": unknown key '" + key + "' in variant");
                    v.set.emplace_back(key, node_text(sv.second));
                }
            } else {
                throw ConfigError(where(kv.first) + ": unknown key 'variants." + k + "'");
            }
        }
        out.push_back(std::move(v));
    }
    return out;
}

inline void merge_node(ExperimentConfig& c, const YAML::Node& root) {
    if (root.IsNull()) return;
    if (!root.IsMap()) throw ConfigError(where(root) + ": top level must be a map of keys and sections");
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        if (key == "variants") {
            c.variants = parse_variants(kv.second);
        } else if (kv.second.IsMap()) {
            for (const auto& sub : kv.second) {
                const auto dotted = key + "." + sub.first.as<std::string>();
                if (!is_config_key(dotted)) throw ConfigError(where(sub.first) + ": unknown key '" + dotted + "'");
                set_field(c, dotted, sub.second);
            }
        } else {
            if (!is_config_key(key)) throw ConfigError(where(kv.first) + ": unknown key '" + key + "'");
            set_field(c, key, kv.second);
        }
    }
}

} // namespace detail

/// Merges YAML text over `base`. Nothing is validated here; call resolve and validate after overrides.
/// Error messages name `source` in place of "config".
inline ExperimentConfig merge_config_text(ExperimentConfig base, const std::string& text,
                                          const std::string& source = "config") {
    try {
        YAML::Node root;
        try {
            root = YAML::Load(text);
        } catch (const YAML::ParserException& e) {
            throw ConfigError("config:" + std::to_string(e.mark.line + 1) + ": " + e.msg);
        }
        detail::merge_node(base, root);
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        if (source != "config" && msg.rfind("config", 0) == 0) msg = source + msg.substr(6);
        throw ConfigError(msg);
    }
    return base;
}

/// Parses a complete config from text over the defaults, then resolves and validates it.
inline ExperimentConfig parse_config(const std::string& text) {
    auto c = merge_config_text(ExperimentConfig{}, text);
    resolve(c);
    validate(c);
    return c;
}

/// Serializes every field, grouped by section, in schema order.
inline std::string serialize_config(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    std::ostringstream os;
    std::string section;
    for (const auto& f : config_fields(c)) {
        const auto dot = f.key.find('.');
        const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
        const std::string leaf = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
        if (sec != section) {
            os << sec << ":\n";
            section = sec;
        }
        os << (sec.empty() ? "" : "  ") << leaf << ": " << f.get() << "\n";
    }
    if (!c.variants.empty()) {
        os << "variants:\n";
        for (const auto& v : c.variants) {
            os << "  - label: " << detail::quote(v.label) << "\n";
            os << "    set:";
            if (v.set.empty()) os << " {}";
            os << "\n";
            for (const auto& [k, val] : v.set) os << "      " << k << ": " << val << "\n";
        }
    }
    return os.str();
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return serialize_config(a) == serialize_config(b);
}

// --- conversions ------------------------------------------------------------------

inline PolicyDims policy_dims(const ExperimentConfig& c, const VocabLayout& v) {
    PolicyDims d;
    d.vocab = v.size();
    d.embed = c.policy.embed;
    d.hidden = c.policy.hidden;
    d.max_positions = c.policy.max_positions;
    return d;
}

inline std::string format_number(double x) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, r.ptr);
}

/// Short method label, e.g. grpo_static_k0.2 or ewc_l100.
inline std::string method_tag(const TrainConfig& t) {
    switch (t.method) {
    case Method::GrpoStatic: return "grpo_static_k" + format_number(t.static_k);
    case Method::Ewc: return "ewc_l" + format_number(t.ewc_lambda);
    case Method::Lwf: return "lwf_l" + format_number(t.lwf_lambda);
    default: return to_string(t.method);
    }
}

// --- presets ----------------------------------------------------------------------

namespace detail {

inline const std::map<std::string, std::string>& preset_texts() {
    static const std::map<std::string, std::string> presets = {
        {"designed", "name: designed\n"},
        {"acceptance", R"(name: acceptance
seeds: [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
variants:
  - {label: rdbcl, set: {method: rdbcl}}
  - {label: k0.2, set: {method: grpo_static, train.static_k: 0.2}}
  - {label: k0.5, set: {method: grpo_static, train.static_k: 0.5}}
  - {label: k1, set: {method: grpo_static, train.static_k: 1}}
  - {label: k2, set: {method: grpo_static, train.static_k: 2}}
  - {label: k10, set: {method: grpo_static, train.static_k: 10}}
)"},
        {"order1", R"(name: order1
stream: {num_tasks: 3, order: 1}
variants:
  - {label: rdbcl, set: {method: rdbcl}}
  - {label: grpo, set: {method: grpo_static, train.static_k: 1}}
  - {label: ewc, set: {method: ewc, train.ewc_lambda: 10}}
  - {label: lwf, set: {method: lwf, train.lwf_lambda: 0.5}}
  - {label: sft, set: {method: sft}}
)"},
        {"order2", R"(name: order2
stream: {num_tasks: 3, order: 2}
variants:
  - {label: rdbcl, set: {method: rdbcl}}
  - {label: grpo, set: {method: grpo_static, train.static_k: 1}}
  - {label: ewc, set: {method: ewc, train.ewc_lambda: 10}}
  - {label: lwf, set: {method: lwf, train.lwf_lambda: 0.5}}
  - {label: sft, set: {method: sft}}
)"},
        {"tau_sweep", R"(name: tau_sweep
variants:
  - {label: tau0.5, set: {gate.tau: 0.5}}
  - {label: tau0.6, set: {gate.tau: 0.6}}
  - {label: tau0.7, set: {gate.tau: 0.7}}
  - {label: tau0.8, set: {gate.tau: 0.8}}
)"},
        {"clip_sweep", R"(name: clip_sweep
variants:
  - {label: clip0.0, set: {gate.clip_min: 0.0}}
  - {label: clip0.1, set: {gate.clip_min: 0.1}}
  - {label: clip0.2, set: {gate.clip_min: 0.2}}
  - {label: clip0.3, set: {gate.clip_min: 0.3}}
)"},
        {"static_k_sweep", R"(name: static_k_sweep
variants:
  - {label: rdbcl, set: {method: rdbcl}}
  - {label: k0.5, set: {method: grpo_static, train.static_k: 0.5}}
  - {label: k1, set: {method: grpo_static, train.static_k: 1}}
  - {label: k2, set: {method: grpo_static, train.static_k: 2}}
)"},
        {"passk_probe", R"(name: passk_probe
train: {passk_n: 16, passk_ks: [1, 2, 4, 8, 16]}
variants:
  - {label: rdbcl, set: {method: rdbcl}}
  - {label: grpo, set: {method: grpo_static, train.static_k: 1}}
  - {label: sft, set: {method: sft}}
)"},
        {"answer_vs_reasoning", R"(name: answer_vs_reasoning
variants:
  - {label: reasoning, set: {gate.span: reasoning}}
  - {label: answer, set: {gate.span: answer}}
)"},
    };
    return presets;
}

} // namespace detail

inline std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const auto& [k, v] : detail::preset_texts()) out.push_back(k);
    return out;
}

inline std::string preset_text(const std::string& name) {
    const auto& p = detail::preset_texts();
    const auto it = p.find(name);
    if (it == p.end()) {
        std::string all;
        for (const auto& n : preset_names()) all += (all.empty() ? "" : ", ") + n;
        throw ConfigError("unknown preset '" + name + "' (known: " + all + ")");
    }
    return it->second;
}

inline ExperimentConfig preset_config(const std::string& name) { return parse_config(preset_text(name)); }

} // namespace rdbcl
