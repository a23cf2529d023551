#pragma once

// Run orchestration: run directories and their artifacts, a shared warm-start
// cache, a worker pool for sweeps, summary tables and merged reports.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "rdbcl/config.hpp"
#include "rdbcl/metrics.hpp"

namespace rdbcl {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "RDBCL_OUTPUT_ROOT";

inline fs::path default_output_root() {
    const char* e = std::getenv(kOutputRootEnv);
    return (e && *e) ? fs::path(e) : fs::path("runs");
}

inline fs::path experiment_dir(const ExperimentConfig& c) {
    return c.output_dir.empty() ? default_output_root() / c.name : fs::path(c.output_dir);
}

/// Rounded to 6 decimals so serialized numbers are byte-stable.
inline double r6(double x) {
    const double r = std::round(x * 1e6) / 1e6;
    return r == 0.0 ? 0.0 : r;
}

inline std::string fixed6(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", r6(x));
    return buf;
}

inline Json opt_json(const std::optional<double>& x) { return x ? Json(r6(*x)) : Json(nullptr); }

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::string hex8(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%08llx", static_cast<unsigned long long>(h & 0xFFFFFFFFULL));
    return buf;
}

inline std::string stream_dump_text(const Stream& st) {
    std::ostringstream os;
    dump_stream(st, os);
    return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << text;
    if (!os) throw Error("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read " + path.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

inline std::string sanitize_label(const std::string& s) {
    std::string out;
    for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '=') ? c : '_';
    return out;
}

// --- run planning ---------------------------------------------------------------------

struct RunSpec {
    std::string label;
    ExperimentConfig config;  ///< single-variant, resolved
    std::uint64_t seed = 0;
};

/// One run per seed for the base config, or per (variant, seed) when `with_variants`.
inline std::vector<RunSpec> expand_runs(const ExperimentConfig& c, bool with_variants) {
    std::vector<std::pair<std::string, ExperimentConfig>> points;
    if (with_variants && !c.variants.empty()) {
        for (const auto& v : c.variants) {
            auto vc = apply_variant(c, v);
            resolve(vc);
            points.emplace_back(v.label, std::move(vc));
        }
    } else {
        ExperimentConfig base = c;
        base.variants.clear();
        points.emplace_back(method_tag(base.train), std::move(base));
    }
    std::vector<RunSpec> out;
    for (const auto& [label, pc] : points)
        for (auto seed : c.seeds) out.push_back({label, pc, seed});
    return out;
}

// --- shared stream and warm start ------------------------------------------------------

struct Prepared {
    Stream stream;
    std::string stream_hash;
    PolicyParams warm;
};

/** Streams and warm starts depend only on (seed, stream, policy, warm_start),
 * so every method of a seed shares one. Computed once, on first request. */
class WarmStartCache {
public:
    std::shared_ptr<const Prepared> get(const ExperimentConfig& c, std::uint64_t seed) {
        const std::string key = cache_key(c, seed);
        std::promise<std::shared_ptr<const Prepared>> promise;
        std::shared_future<std::shared_ptr<const Prepared>> fut;
        bool owner = false;
        {
            std::lock_guard<std::mutex> lock(m_);
            auto it = cache_.find(key);
            if (it == cache_.end()) {
                fut = promise.get_future().share();
                cache_.emplace(key, fut);
                owner = true;
            } else {
                fut = it->second;
            }
        }
        if (owner) {
            try {
                auto p = std::make_shared<Prepared>();
                p->stream = generate_stream(c.stream, Rng(seed, 1));
                p->stream_hash = hex8(fnv1a(stream_dump_text(p->stream)));
                p->warm = warm_start(p->stream, policy_dims(c, p->stream.vocab), c.warm_start, Rng(seed, 2));
                promise.set_value(std::move(p));
            } catch (...) {
                promise.set_exception(std::current_exception());
            }
        }
        return fut.get();
    }

    static std::string cache_key(const ExperimentConfig& c, std::uint64_t seed) {
        ExperimentConfig copy = c;
        std::string key = std::to_string(seed);
        for (const auto& f : config_fields(copy))
            if (f.key.rfind("stream.", 0) == 0 || f.key.rfind("policy.", 0) == 0 || f.key.rfind("warm_start.", 0) == 0)
                key += "|" + f.key + "=" + f.get();
        return key;
    }

private:
    std::mutex m_;
    std::map<std::string, std::shared_future<std::shared_ptr<const Prepared>>> cache_;
};

// --- per-run metrics --------------------------------------------------------------------

/// Pooled confidence scores of tasks that have a trained predecessor.
struct PooledScores {
    std::vector<double> confidence;
    std::vector<bool> portable;
    std::vector<bool> reasoning_correct;
};

inline PooledScores pooled_successor_scores(const StreamRun& run) {
    PooledScores p;
    for (std::size_t i = 1; i < run.tasks.size(); ++i)
        for (const auto& s : run.tasks[i].rp) {
            p.confidence.push_back(s.confidence);
            p.portable.push_back(s.portable);
            p.reasoning_correct.push_back(s.reasoning_correct);
        }
    return p;
}

/// Prefixes used for drift: each test question followed by REASON_OPEN.
inline std::vector<std::vector<Token>> drift_probes(const Stream& st, int task_index) {
    std::vector<std::vector<Token>> out;
    for (const auto& s : st.tasks.at(static_cast<std::size_t>(task_index)).test) {
        auto q = s.question;
        q.push_back(st.vocab.reason_open());
        out.push_back(std::move(q));
    }
    return out;
}

/** Hidden-state drift of task t's probes between checkpoint t and the final
 * checkpoint, for t = 1..T-1. */
inline std::vector<double> stream_drift(const Stream& st, const StreamRun& run) {
    std::vector<double> out;
    if (run.checkpoints.size() != static_cast<std::size_t>(st.num_tasks())) return out;
    const auto& last = run.checkpoints.back().params();
    for (int t = 0; t + 1 < st.num_tasks(); ++t) {
        const auto probes = drift_probes(st, t);
        out.push_back(representation_drift(run.checkpoints[static_cast<std::size_t>(t)].params(), last, probes).mean_distance);
    }
    return out;
}

inline bool run_complete(const StreamRun& run, const Stream& st) {
    return !run.failure && run.accuracy.a.size() == static_cast<std::size_t>(st.num_tasks());
}

inline Json metrics_json(const RunSpec& spec, const Stream& st, const std::string& stream_hash, const StreamRun& run) {
    Json m;
    m["method"] = to_string(spec.config.train.method);
    m["seed"] = spec.seed;
    m["order"] = spec.config.stream.order;
    const bool complete = run_complete(run, st);
    std::optional<ClMetrics> cl;
    if (complete) cl = compute_cl_metrics(run.accuracy);
    m["avg"] = cl ? Json(r6(cl->avg)) : Json(nullptr);
    m["last"] = cl ? Json(r6(cl->last)) : Json(nullptr);
    m["finetune"] = cl ? Json(r6(cl->finetune)) : Json(nullptr);
    m["bwt"] = cl ? opt_json(cl->bwt) : Json(nullptr);
    Json pk = Json::object();
    for (const auto& [k, v] : run.pass_at_k) pk[std::to_string(k)] = r6(v);
    m["pass_at_k"] = pk;
    const auto pooled = pooled_successor_scores(run);
    m["auc"] = opt_json(auc(pooled.confidence, pooled.reasoning_correct));
    Json drift = Json::array();
    if (complete)
        for (double d : stream_drift(st, run)) drift.push_back(r6(d));
    m["drift"] = drift;
    // extras
    m["label"] = spec.label;
    m["method_tag"] = method_tag(spec.config.train);
    m["stream_hash"] = stream_hash;
    m["auc_portable"] = opt_json(auc(pooled.confidence, pooled.portable));
    m["kl_end"] = run.tasks.empty() ? Json(nullptr) : Json(r6(run.tasks.back().final_kl));
    Json kl = Json::array(), steps = Json::array(), early = Json::array();
    for (const auto& t : run.tasks) {
        kl.push_back(r6(t.final_kl));
        steps.push_back(t.steps.size());
        early.push_back(t.early_stopped);
    }
    m["final_kl"] = kl;
    m["steps"] = steps;
    m["early_stopped"] = early;
    Json zs = Json::array();
    for (double x : run.accuracy.zero_shot) zs.push_back(r6(x));
    m["zero_shot"] = zs;
    m["failure"] = run.failure ? Json(*run.failure) : Json(nullptr);
    return m;
}

inline std::string train_log_csv(const StreamRun& run) {
    std::string s = "task,step,mean_reward,mean_abs_advantage,mean_kl,mean_beta,loss\n";
    for (const auto& t : run.tasks)
        for (const auto& r : t.steps)
            s += std::to_string(r.task_index) + "," + std::to_string(r.step) + "," + fixed6(r.mean_reward) + "," +
                 fixed6(r.mean_abs_advantage) + "," + fixed6(r.mean_kl) + "," + fixed6(r.mean_beta) + "," + fixed6(r.loss) + "\n";
    return s;
}

inline std::string rp_dump_csv(const std::vector<std::vector<RPScore>>& per_task, const std::vector<int>& task_ids) {
    std::string s = "task,sample_id,confidence,group,beta,portable,reasoning_correct,flagged,per_trajectory,reference\n";
    for (std::size_t i = 0; i < per_task.size(); ++i)
        for (const auto& r : per_task[i]) {
            std::string per, ref;
            for (std::size_t k = 0; k < r.per_trajectory.size(); ++k) per += (k ? ";" : "") + fixed6(r.per_trajectory[k]);
            if (!r.references.empty())
                for (std::size_t k = 0; k < r.references.front().tokens.size(); ++k)
                    ref += (k ? " " : "") + std::to_string(r.references.front().tokens[k]);
            s += std::to_string(task_ids[i]) + "," + std::to_string(r.sample_id) + "," + fixed6(r.confidence) + "," +
                 to_string(r.group) + "," + fixed6(r.beta) + "," + (r.portable ? "1" : "0") + "," +
                 (r.reasoning_correct ? "1" : "0") + "," + (r.flagged ? "1" : "0") + "," + per + "," + ref + "\n";
        }
    return s;
}

/// Confidence histograms per task, split by portability and by reasoning correctness.
inline std::string histogram_csv(const std::vector<std::vector<RPScore>>& per_task, const std::vector<int>& task_ids,
                                 int bins = 10) {
    std::string s = "task,label,class,bin_lo,bin_hi,count\n";
    for (std::size_t i = 0; i < per_task.size(); ++i) {
        std::vector<double> c;
        std::vector<bool> port, corr;
        for (const auto& r : per_task[i]) {
            c.push_back(r.confidence);
            port.push_back(r.portable);
            corr.push_back(r.reasoning_correct);
        }
        for (const auto& [name, labels] : {std::pair{"portable", port}, std::pair{"reasoning_correct", corr}}) {
            const auto sep = confidence_separability(c, labels, bins);
            for (const auto& [cls, h] : {std::pair{"positive", sep.positive_hist}, std::pair{"negative", sep.negative_hist}})
                for (int b = 0; b < bins; ++b)
                    s += std::to_string(task_ids[i]) + "," + name + "," + cls + "," + fixed6(static_cast<double>(b) / bins) +
                         "," + fixed6(static_cast<double>(b + 1) / bins) + "," + std::to_string(h[static_cast<std::size_t>(b)]) + "\n";
        }
    }
    return s;
}

inline Json accuracy_json(const AccuracyMatrix& m) {
    Json j;
    Json zs = Json::array();
    for (double x : m.zero_shot) zs.push_back(r6(x));
    j["zero_shot"] = zs;
    Json a = Json::array();
    for (const auto& row : m.a) {
        Json r = Json::array();
        for (double x : row) r.push_back(r6(x));
        a.push_back(r);
    }
    j["a"] = a;
    return j;
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

// --- executing runs -------------------------------------------------------------------------

struct RunResult {
    std::string label;
    std::uint64_t seed = 0;
    fs::path dir;
    Json metrics;                        ///< null when the run could not start
    std::optional<std::string> failure;  ///< training failure or setup error
};

inline std::string run_dir_name(const RunSpec& spec, const std::string& stream_hash) {
    const std::string tag = method_tag(spec.config.train);
    std::string name = spec.label == tag ? tag : spec.label + "_" + tag;
    return sanitize_label(name) + "_s" + std::to_string(spec.seed) + "_" + stream_hash;
}

/** Trains one (config, seed) and writes its directory under `root`:
 * config.yaml, stream.tsv, task_<i>.ckpt (0 = warm start), train_log.csv,
 * rp_dump.csv, histograms.csv, accuracy.json, metrics.json. Artifacts up to a
 * training failure are kept. */
inline RunResult execute_run(const RunSpec& spec, const fs::path& root, WarmStartCache& cache) {
    RunResult res;
    res.label = spec.label;
    res.seed = spec.seed;
    const auto prep = cache.get(spec.config, spec.seed);
    const Stream& st = prep->stream;
    res.dir = root / run_dir_name(spec, prep->stream_hash);
    fs::create_directories(res.dir);

    ExperimentConfig single = spec.config;
    single.seeds = {spec.seed};
    single.variants.clear();
    write_text(res.dir / "config.yaml", serialize_config(single));
    write_text(res.dir / "stream.tsv", stream_dump_text(st));
    save_checkpoint((res.dir / "task_0.ckpt").string(), prep->warm, 0);

    const auto run = run_task_sequence(st, spec.config.train, PolicySnapshot(prep->warm, 0), spec.seed);
    for (const auto& c : run.checkpoints)
        save_checkpoint((res.dir / ("task_" + std::to_string(c.provenance()) + ".ckpt")).string(), c.params(), c.provenance());
    std::vector<std::vector<RPScore>> rp;
    std::vector<int> ids;
    for (std::size_t i = 0; i < run.tasks.size(); ++i) {
        rp.push_back(run.tasks[i].rp);
        ids.push_back(static_cast<int>(i) + 1);
    }
    write_text(res.dir / "train_log.csv", train_log_csv(run));
    write_text(res.dir / "rp_dump.csv", rp_dump_csv(rp, ids));
    write_text(res.dir / "histograms.csv", histogram_csv(rp, ids));
    write_text(res.dir / "accuracy.json", dump_json(accuracy_json(run.accuracy)));
    res.metrics = metrics_json(spec, st, prep->stream_hash, run);
    write_text(res.dir / "metrics.json", dump_json(res.metrics));
    res.failure = run.failure;
    return res;
}

/// Runs every spec on up to `workers` threads; results come back in spec order.
inline std::vector<RunResult> execute_runs(const std::vector<RunSpec>& specs, const fs::path& root, int workers,
                                           const std::function<void(const RunResult&)>& on_done = {}) {
    std::vector<RunResult> results(specs.size());
    WarmStartCache cache;
    std::atomic<std::size_t> next{0};
    std::mutex report_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < specs.size(); i = next++) {
            try {
                results[i] = execute_run(specs[i], root, cache);
            } catch (const std::exception& e) {
                results[i].label = specs[i].label;
                results[i].seed = specs[i].seed;
                results[i].failure = e.what();
            }
            if (on_done) {
                std::lock_guard<std::mutex> lock(report_mutex);
                on_done(results[i]);
            }
        }
    };
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(specs.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return results;
}

// --- summaries ---------------------------------------------------------------------------------

inline const std::vector<std::string>& summary_metrics() {
    static const std::vector<std::string> m = {"avg", "last", "finetune", "bwt", "auc", "auc_portable", "kl_end"};
    return m;
}

struct GroupSummary {
    std::string label;
    std::string method;
    int runs = 0;
    int failed = 0;
    std::map<std::string, std::vector<double>> values;  ///< metric -> per-seed values that are present
    std::map<int, std::vector<double>> pass_at_k;
};

inline void add_to_group(GroupSummary& g, const Json& m) {
    ++g.runs;
    if (!m.contains("failure") || !m["failure"].is_null()) ++g.failed;
    for (const auto& k : summary_metrics())
        if (m.contains(k) && m[k].is_number()) g.values[k].push_back(m[k].get<double>());
    if (m.contains("pass_at_k") && m["pass_at_k"].is_object())
        for (const auto& [k, v] : m["pass_at_k"].items())
            if (v.is_number()) g.pass_at_k[std::stoi(k)].push_back(v.get<double>());
}

/// Groups metrics by label, in order of first appearance.
inline std::vector<GroupSummary> summarize(const std::vector<Json>& metrics) {
    std::vector<GroupSummary> groups;
    for (const auto& m : metrics) {
        const std::string label = m.value("label", m.value("method", std::string("?")));
        auto it = std::find_if(groups.begin(), groups.end(), [&](const GroupSummary& g) { return g.label == label; });
        if (it == groups.end()) {
            groups.push_back({label, m.value("method", std::string("?")), 0, 0, {}, {}});
            it = groups.end() - 1;
        }
        add_to_group(*it, m);
    }
    return groups;
}

inline std::string summary_csv(const std::vector<GroupSummary>& groups) {
    std::string s = "label,method,n,failed";
    for (const auto& k : summary_metrics()) s += "," + k + "_mean," + k + "_std";
    s += "\n";
    for (const auto& g : groups) {
        s += g.label + "," + g.method + "," + std::to_string(g.runs) + "," + std::to_string(g.failed);
        for (const auto& k : summary_metrics()) {
            const auto it = g.values.find(k);
            if (it == g.values.end() || it->second.empty())
                s += ",,";
            else
                s += "," + fixed6(mean(it->second)) + "," + fixed6(stddev(it->second));
        }
        s += "\n";
    }
    return s;
}

inline std::string summary_markdown(const std::vector<GroupSummary>& groups) {
    std::string s = "| label | method | n |";
    for (const auto& k : summary_metrics()) s += " " + k + " |";
    s += "\n|---|---|---|";
    for (std::size_t i = 0; i < summary_metrics().size(); ++i) s += "---|";
    s += "\n";
    char buf[64];
    for (const auto& g : groups) {
        s += "| " + g.label + " | " + g.method + " | " + std::to_string(g.runs) + " |";
        for (const auto& k : summary_metrics()) {
            const auto it = g.values.find(k);
            if (it == g.values.end() || it->second.empty()) {
                s += " - |";
                continue;
            }
            const bool pct = k == "avg" || k == "last" || k == "finetune" || k == "bwt";
            std::snprintf(buf, sizeof(buf), pct ? " %.2f ± %.2f |" : " %.4f ± %.4f |", mean(it->second), stddev(it->second));
            s += buf;
        }
        s += "\n";
    }
    return s;
}

// --- reports ---------------------------------------------------------------------------------

struct ReportInput {
    fs::path path;
    Json metrics;
};

struct Report {
    std::vector<ReportInput> runs;
    std::vector<std::pair<std::string, std::string>> errors;  ///< path, message
    std::vector<GroupSummary> groups;
};

inline void require_metric_fields(const Json& m) {
    for (const char* k : {"method", "seed", "avg", "last", "finetune", "bwt", "pass_at_k", "auc", "drift"})
        if (!m.contains(k)) throw Error(std::string("missing field '") + k + "'");
}

/// Collects metrics.json files below each input; corrupt ones are listed as errors.
inline Report collect_report(const std::vector<fs::path>& inputs) {
    Report r;
    std::vector<fs::path> files;
    for (const auto& in : inputs) {
        std::error_code ec;
        if (fs::is_regular_file(in, ec) && in.filename() == "metrics.json") {
            files.push_back(in);
            continue;
        }
        if (!fs::is_directory(in, ec)) {
            r.errors.emplace_back(in.string(), "not a directory");
            continue;
        }
        std::vector<fs::path> found;
        for (const auto& e : fs::recursive_directory_iterator(in))
            if (e.is_regular_file() && e.path().filename() == "metrics.json") found.push_back(e.path());
        std::error_code ec2;
        // run dirs whose training never wrote metrics
        for (const auto& e : fs::recursive_directory_iterator(in))
            if (e.is_directory() && fs::exists(e.path() / "config.yaml", ec2) && !fs::exists(e.path() / "metrics.json", ec2))
                r.errors.emplace_back((e.path() / "metrics.json").string(), "missing");
        if (found.empty() && !fs::exists(in / "config.yaml", ec2)) r.errors.emplace_back(in.string(), "no metrics.json found");
        files.insert(files.end(), found.begin(), found.end());
    }
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    for (const auto& f : files) {
        try {
            Json m = Json::parse(read_text(f));
            require_metric_fields(m);
            r.runs.push_back({f, std::move(m)});
        } catch (const std::exception& e) {
            r.errors.emplace_back(f.string(), e.what());
        }
    }
    std::sort(r.errors.begin(), r.errors.end());
    std::vector<Json> ms;
    for (const auto& x : r.runs) ms.push_back(x.metrics);
    r.groups = summarize(ms);
    return r;
}

inline std::string label_of(const Json& m) { return m.value("label", m.value("method", std::string("?"))); }

/// Pass@k curve per label: mean and std over seeds.
inline std::string passk_csv(const std::vector<GroupSummary>& groups) {
    std::string s = "label,k,mean,std,n\n";
    for (const auto& g : groups)
        for (const auto& [k, v] : g.pass_at_k)
            s += g.label + "," + std::to_string(k) + "," + fixed6(mean(v)) + "," + fixed6(stddev(v)) + "," + std::to_string(v.size()) + "\n";
    return s;
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream is(read_text(p));
    std::string line;
    while (std::getline(is, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        rows.push_back(std::move(f));
    }
    return rows;
}

} // namespace detail

/** Writes report.json, report.csv, report.md, passk.csv, histograms.csv and
 * kl_dynamics.csv into `out`. Per-run CSVs that are missing are reported as
 * errors and skipped. */
inline Report write_report(const std::vector<fs::path>& inputs, const fs::path& out) {
    Report r = collect_report(inputs);
    fs::create_directories(out);

    // histograms: summed over seeds per (label, task, kind, class, bin)
    std::map<std::tuple<std::string, std::string, std::string, std::string, std::string, std::string>, long> hist;
    // KL dynamics: per (label, task, step) the mean over seeds
    std::map<std::tuple<std::string, int, int>, std::pair<std::vector<double>, std::vector<double>>> kl;
    std::vector<std::string> label_order;
    for (const auto& g : r.groups) label_order.push_back(g.label);
    for (const auto& run : r.runs) {
        const std::string label = label_of(run.metrics);
        const fs::path dir = run.path.parent_path();
        try {
            const auto rows = detail::read_csv(dir / "histograms.csv");
            for (std::size_t i = 1; i < rows.size(); ++i)
                if (rows[i].size() == 6)
                    hist[{label, rows[i][0], rows[i][1], rows[i][2], rows[i][3], rows[i][4]}] += std::stol(rows[i][5]);
        } catch (const std::exception& e) {
            r.errors.emplace_back((dir / "histograms.csv").string(), e.what());
        }
        try {
            const auto rows = detail::read_csv(dir / "train_log.csv");
            for (std::size_t i = 1; i < rows.size(); ++i)
                if (rows[i].size() == 7) {
                    auto& cell = kl[{label, std::stoi(rows[i][0]), std::stoi(rows[i][1])}];
                    cell.first.push_back(std::stod(rows[i][4]));
                    cell.second.push_back(std::stod(rows[i][2]));
                }
        } catch (const std::exception& e) {
            r.errors.emplace_back((dir / "train_log.csv").string(), e.what());
        }
    }
    auto label_rank = [&](const std::string& l) {
        return std::find(label_order.begin(), label_order.end(), l) - label_order.begin();
    };

    std::string hs = "label,task,label_kind,class,bin_lo,bin_hi,count\n";
    std::vector<std::pair<decltype(hist)::key_type, long>> hv(hist.begin(), hist.end());
    std::stable_sort(hv.begin(), hv.end(), [&](const auto& a, const auto& b) {
        return label_rank(std::get<0>(a.first)) < label_rank(std::get<0>(b.first));
    });
    for (const auto& [k, v] : hv)
        hs += std::get<0>(k) + "," + std::get<1>(k) + "," + std::get<2>(k) + "," + std::get<3>(k) + "," + std::get<4>(k) +
              "," + std::get<5>(k) + "," + std::to_string(v) + "\n";
    write_text(out / "histograms.csv", hs);

    std::string ks = "label,task,step,mean_kl,mean_reward,n\n";
    std::vector<std::pair<decltype(kl)::key_type, decltype(kl)::mapped_type>> kv(kl.begin(), kl.end());
    std::stable_sort(kv.begin(), kv.end(), [&](const auto& a, const auto& b) {
        return label_rank(std::get<0>(a.first)) < label_rank(std::get<0>(b.first));
    });
    for (const auto& [k, v] : kv)
        ks += std::get<0>(k) + "," + std::to_string(std::get<1>(k)) + "," + std::to_string(std::get<2>(k)) + "," +
              fixed6(mean(v.first)) + "," + fixed6(mean(v.second)) + "," + std::to_string(v.first.size()) + "\n";
    write_text(out / "kl_dynamics.csv", ks);

    write_text(out / "report.csv", summary_csv(r.groups));
    write_text(out / "passk.csv", passk_csv(r.groups));

    Json j;
    Json groups = Json::array();
    for (const auto& g : r.groups) {
        Json gj;
        gj["label"] = g.label;
        gj["method"] = g.method;
        gj["n"] = g.runs;
        gj["failed"] = g.failed;
        for (const auto& k : summary_metrics()) {
            const auto it = g.values.find(k);
            if (it == g.values.end() || it->second.empty()) {
                gj[k] = nullptr;
            } else {
                Json v;
                v["mean"] = r6(mean(it->second));
                v["std"] = r6(stddev(it->second));
                v["n"] = it->second.size();
                gj[k] = v;
            }
        }
        Json pk = Json::object();
        for (const auto& [k, v] : g.pass_at_k) pk[std::to_string(k)] = r6(mean(v));
        gj["pass_at_k"] = pk;
        groups.push_back(gj);
    }
    j["groups"] = groups;
    Json runs = Json::array();
    for (const auto& run : r.runs) runs.push_back(run.path.parent_path().string());
    j["runs"] = runs;
    Json errs = Json::array();
    for (const auto& [p, msg] : r.errors) errs.push_back({{"path", p}, {"error", msg}});
    j["errors"] = errs;
    write_text(out / "report.json", dump_json(j));

    std::string md = "# Report\n\n" + std::to_string(r.runs.size()) + " runs.\n\n" + summary_markdown(r.groups);
    md += "\n## Errors\n\n";
    if (r.errors.empty()) md += "none\n";
    for (const auto& [p, msg] : r.errors) md += "- `" + p + "`: " + msg + "\n";
    write_text(out / "report.md", md);
    return r;
}

// --- probe statistics from an existing checkpoint ------------------------------------------------

struct ProbeStats {
    std::vector<RPScore> scores;
    Separability portable;
    Separability reasoning;
};

/** Scores task `task` (1-based) of the stream for (config, seed) against
 * `snapshot`, drawing reference rollouts from the same streams training uses. */
inline ProbeStats probe_stats(const ExperimentConfig& c, std::uint64_t seed, const PolicySnapshot& snapshot, int task) {
    const Stream st = generate_stream(c.stream, Rng(seed, 1));
    if (task < 1 || task > st.num_tasks()) throw ConfigError("probe-stats: task must be in [1, " + std::to_string(st.num_tasks()) + "]");
    if (!(snapshot.params().dims == policy_dims(c, st.vocab))) throw Error("probe-stats: checkpoint does not match the config's policy shape");
    const auto& td = st.tasks[static_cast<std::size_t>(task - 1)];
    const Rng task_rng = Rng(seed, 3).split(static_cast<std::uint64_t>(task - 1));
    ProbeStats out;
    out.scores = score_samples(snapshot, st.vocab, td.spec, td.train, c.train.gate, c.train.rollout, task_rng.split(2));
    std::vector<double> conf;
    std::vector<bool> port, corr;
    for (const auto& s : out.scores) {
        conf.push_back(s.confidence);
        port.push_back(s.portable);
        corr.push_back(s.reasoning_correct);
    }
    out.portable = confidence_separability(conf, port);
    out.reasoning = confidence_separability(conf, corr);
    return out;
}

inline Json separability_json(const ProbeStats& p) {
    auto sep = [](const Separability& s) {
        Json j;
        j["auc"] = opt_json(s.auc);
        j["positive_hist"] = s.positive_hist;
        j["negative_hist"] = s.negative_hist;
        return j;
    };
    Json j;
    j["samples"] = p.scores.size();
    j["portable"] = sep(p.portable);
    j["reasoning_correct"] = sep(p.reasoning);
    return j;
}

} // namespace rdbcl
