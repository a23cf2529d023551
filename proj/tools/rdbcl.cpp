// Command-line front end: train, sweep, report, verify, gen-stream, probe-stats.
//
// Exit codes: 0 success, 1 config error, 2 runtime failure, 3 verify failure.

#include <iostream>

#include <CLI11.hpp>

#include "rdbcl/experiment.hpp"
#include "rdbcl/oracles.hpp"

using namespace rdbcl;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;
constexpr int kVerifyFailure = 3;

struct ConfigOptions {
    std::string config_path;
    std::string preset;
    std::vector<std::string> sets;
    std::string out;
};

void add_config_options(CLI::App* cmd, ConfigOptions& o) {
    cmd->add_option("--config", o.config_path, "YAML experiment config");
    cmd->add_option("--preset", o.preset, "named preset used as the base config");
    cmd->add_option("--set", o.sets, "override, e.g. --set gate.tau=0.6 (repeatable)");
    cmd->add_option("--out", o.out, "experiment directory (default <output root>/<name>)");
}

/// Defaults, then preset, then file, then overrides.
ExperimentConfig load_config(const ConfigOptions& o) {
    ExperimentConfig c;
    if (!o.preset.empty()) c = merge_config_text(c, preset_text(o.preset), "preset " + o.preset);
    if (!o.config_path.empty()) {
        std::string text;
        try {
            text = read_text(o.config_path);
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
        c = merge_config_text(c, text, o.config_path);
    }
    for (const auto& s : o.sets) apply_override(c, s);
    if (!o.out.empty()) c.output_dir = o.out;
    resolve(c);
    validate(c);
    return c;
}

/// Splits on commas that are not inside brackets.
std::vector<std::string> split_axis_values(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    int depth = 0;
    for (char ch : s) {
        if (ch == '[') ++depth;
        if (ch == ']') --depth;
        if (ch == ',' && depth == 0) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

/// Cartesian product of `key=v1,v2` axes as variants labelled key=value.
std::vector<Variant> axis_variants(const std::vector<std::string>& axes) {
    std::vector<Variant> grid{{"", {}}};
    for (const auto& a : axes) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("axis '" + a + "' is not key=v1,v2,...");
        const std::string key = a.substr(0, eq);
        if (!is_config_key(key)) throw ConfigError("axis over unknown key '" + key + "'");
        if (key == "seeds" || key == "name" || key == "output_dir") throw ConfigError("axis over '" + key + "' is not allowed");
        const auto values = split_axis_values(a.substr(eq + 1));
        std::vector<Variant> next;
        for (const auto& g : grid)
            for (const auto& v : values) {
                if (v.empty()) throw ConfigError("axis '" + key + "' has an empty value");
                Variant n = g;
                n.label += (n.label.empty() ? "" : ",") + key + "=" + v;
                n.set.emplace_back(key, v);
                next.push_back(n);
            }
        grid = std::move(next);
    }
    return grid;
}

void print_run(const RunResult& r) {
    std::cout << (r.failure ? "FAILED " : "done   ") << r.label << " seed " << r.seed << "  " << r.dir.string();
    if (r.failure) std::cout << "  (" << *r.failure << ")";
    std::cout << std::endl;
}

int run_specs(const ExperimentConfig& c, bool with_variants, int workers, const fs::path& root) {
    const auto specs = expand_runs(c, with_variants);
    fs::create_directories(root);
    const auto results = execute_runs(specs, root, workers, print_run);
    bool failed = false;
    std::vector<Json> ms;
    for (const auto& r : results) {
        failed = failed || r.failure.has_value();
        if (!r.metrics.is_null()) ms.push_back(r.metrics);
    }
    const auto groups = summarize(ms);
    write_text(root / "summary.csv", summary_csv(groups));
    write_text(root / "summary.md", summary_markdown(groups));
    std::cout << summary_markdown(groups);
    return failed ? kRuntimeError : kOk;
}

int cmd_train(const ConfigOptions& o, int workers) {
    auto c = load_config(o);
    if (!c.variants.empty())
        std::cout << "note: train runs the base config; use sweep for its " << c.variants.size() << " variants\n";
    return run_specs(c, false, workers, experiment_dir(c));
}

int cmd_sweep(const ConfigOptions& o, const std::vector<std::string>& axes, int workers) {
    auto c = load_config(o);
    if (!axes.empty()) {
        c.variants = axis_variants(axes);
        validate(c);
    }
    if (c.variants.empty()) throw ConfigError("sweep needs --axis or a config with variants");
    const auto root = experiment_dir(c);
    fs::create_directories(root);
    write_text(root / "sweep.yaml", serialize_config(c));
    return run_specs(c, true, workers, root);
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
    if (dirs.empty()) throw ConfigError("report needs at least one run or sweep directory");
    std::vector<fs::path> in(dirs.begin(), dirs.end());
    const fs::path dest = out.empty() ? default_output_root() / "report" : fs::path(out);
    const auto r = write_report(in, dest);
    std::cout << summary_markdown(r.groups);
    for (const auto& [p, msg] : r.errors) std::cout << "error: " << p << ": " << msg << "\n";
    std::cout << "report written to " << dest.string() << "\n";
    return r.runs.empty() ? kRuntimeError : kOk;
}

int cmd_verify(const std::vector<std::string>& only_args) {
    std::vector<std::string> only;
    for (const auto& a : only_args)
        for (const auto& s : split_axis_values(a))
            if (!s.empty()) only.push_back(s);
    const auto results = run_checks(only);
    bool ok = true;
    for (const auto& r : results) {
        ok = ok && r.passed;
        std::printf("%s %-16s %6.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    }
    return ok ? kOk : kVerifyFailure;
}

int cmd_gen_stream(const ConfigOptions& o, long long seed, const std::string& path) {
    const auto c = load_config(o);
    const std::uint64_t s = seed >= 0 ? static_cast<std::uint64_t>(seed) : c.seeds.front();
    const Stream st = generate_stream(c.stream, Rng(s, 1));
    if (path.empty() || path == "-") {
        dump_stream(st, std::cout);
    } else {
        write_text(path, stream_dump_text(st));
        std::cout << "stream (" << st.num_tasks() << " tasks, hash " << hex8(fnv1a(stream_dump_text(st))) << ") written to "
                  << path << "\n";
    }
    return kOk;
}

int cmd_probe_stats(ConfigOptions o, const std::string& run_dir, long long seed, int task, std::string checkpoint) {
    std::string out = o.out;  // here --out names the output directory
    o.out.clear();
    ExperimentConfig c;
    if (!run_dir.empty()) {
        if (!o.config_path.empty() || !o.preset.empty()) throw ConfigError("probe-stats: give --run or --config/--preset, not both");
        o.config_path = (fs::path(run_dir) / "config.yaml").string();
    }
    c = load_config(o);
    const std::uint64_t s = seed >= 0 ? static_cast<std::uint64_t>(seed) : c.seeds.front();
    if (task <= 0) task = std::min(2, c.stream.num_tasks);
    if (checkpoint.empty()) {
        if (run_dir.empty()) throw ConfigError("probe-stats: --checkpoint is required without --run");
        checkpoint = (fs::path(run_dir) / ("task_" + std::to_string(task - 1) + ".ckpt")).string();
    }
    if (out.empty())
        out = run_dir.empty() ? (default_output_root() / ("probe_task" + std::to_string(task))).string()
                              : (fs::path(run_dir) / ("probe_task" + std::to_string(task))).string();
    const auto snap = load_checkpoint(checkpoint);
    const auto ps = probe_stats(c, s, snap, task);
    fs::create_directories(out);
    write_text(fs::path(out) / "rp_dump.csv", rp_dump_csv({ps.scores}, {task}));
    write_text(fs::path(out) / "histograms.csv", histogram_csv({ps.scores}, {task}));
    write_text(fs::path(out) / "separability.json", dump_json(separability_json(ps)));
    auto show = [](const std::optional<double>& a) { return a ? fixed6(*a) : std::string("undefined"); };
    std::cout << "task " << task << ", " << ps.scores.size() << " samples: auc(portable) " << show(ps.portable.auc)
              << ", auc(reasoning correct) " << show(ps.reasoning.auc) << "\nwritten to " << out << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reasoning-portability continual RL experiments"};
    app.require_subcommand(1);

    ConfigOptions train_opts, sweep_opts, gen_opts, probe_opts;
    int workers = 1;
    std::vector<std::string> axes, only, report_dirs;
    std::string report_out, gen_path, probe_run, probe_ckpt;
    long long gen_seed = -1, probe_seed = -1;
    int probe_task = 0;

    auto* train = app.add_subcommand("train", "train every seed of a config");
    add_config_options(train, train_opts);
    train->add_option("--workers", workers, "parallel runs")->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "train every variant or axis point for every seed");
    add_config_options(sweep, sweep_opts);
    sweep->add_option("--axis", axes, "grid axis key=v1,v2,... (repeatable; replaces config variants)");
    sweep->add_option("--workers", workers, "parallel runs")->check(CLI::PositiveNumber);

    auto* report = app.add_subcommand("report", "merge metrics of run or sweep directories");
    report->add_option("dirs", report_dirs, "run or sweep directories");
    report->add_option("--out", report_out, "report directory (default <output root>/report)");

    auto* verify = app.add_subcommand("verify", "run the built-in oracle checks");
    verify->add_option("--only", only, "check names, comma separated or repeated");

    auto* gen = app.add_subcommand("gen-stream", "dump the task stream of a config");
    add_config_options(gen, gen_opts);
    gen->add_option("--seed", gen_seed, "stream seed (default: first config seed)");
    gen->add_option("--file", gen_path, "output file (default stdout)");

    auto* probe = app.add_subcommand("probe-stats", "RP dump and separability from a checkpoint");
    add_config_options(probe, probe_opts);
    probe->add_option("--run", probe_run, "run directory (reads its config.yaml and checkpoints)");
    probe->add_option("--seed", probe_seed, "stream seed (default: first config seed)");
    probe->add_option("--task", probe_task, "task to score, 1-based (default 2)");
    probe->add_option("--checkpoint", probe_ckpt, "reference checkpoint (default <run>/task_<task-1>.ckpt)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        if (*train) return cmd_train(train_opts, workers);
        if (*sweep) return cmd_sweep(sweep_opts, axes, workers);
        if (*report) return cmd_report(report_dirs, report_out);
        if (*verify) return cmd_verify(only);
        if (*gen) return cmd_gen_stream(gen_opts, gen_seed, gen_path);
        if (*probe) return cmd_probe_stats(probe_opts, probe_run, probe_seed, probe_task, probe_ckpt);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}
