#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "rdbcl/experiment.hpp"
#include "rdbcl/oracles.hpp"

using namespace rdbcl;

namespace {

const char* kTiny = R"(name: tiny
seeds: [1, 2]
warm_start: {steps: 50}
train:
  steps_per_task: 5
  fisher_samples: 10
variants:
  - {label: rdbcl, set: {method: rdbcl}}
  - {label: k0.2, set: {method: grpo_static, train.static_k: 0.2}}
)";

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        const char* exe = std::getenv("RDBCL_CLI");
        if (!exe) GTEST_SKIP() << "RDBCL_CLI not set";
        exe_ = exe;
        dir_ = fs::temp_directory_path() /
               ("rdbcl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        write_text(dir_ / "tiny.yaml", kTiny);
    }
    void TearDown() override {
        if (!dir_.empty() && !HasFailure()) fs::remove_all(dir_);
    }

    /// Runs the CLI inside the scratch dir; returns the exit code and keeps combined output.
    int run(const std::string& args) {
        const std::string cmd = "cd '" + dir_.string() + "' && RDBCL_OUTPUT_ROOT='" + (dir_ / "runs").string() + "' '" +
                                exe_ + "' " + args + " > out.txt 2>&1";
        const int status = std::system(cmd.c_str());
        output_ = read_text(dir_ / "out.txt");
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string exe_;
    fs::path dir_;
    std::string output_;
};

fs::path only_run_dir(const fs::path& root) {
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) return e.path();
    return {};
}

} // namespace

TEST_F(Cli, UnknownKeyIsConfigErrorWithLine) {
    write_text(dir_ / "bad.yaml", "name: x\ntrain:\n  bogus: 3\n");
    EXPECT_EQ(run("train --config bad.yaml"), 1);
    EXPECT_NE(output_.find("bad.yaml:3:"), std::string::npos) << output_;
    EXPECT_NE(output_.find("train.bogus"), std::string::npos) << output_;
}

TEST_F(Cli, ConfigErrorsExitOne) {
    EXPECT_EQ(run("train --preset nope"), 1);
    EXPECT_EQ(run("train --config tiny.yaml --set train.steps_per_task=abc"), 1);
    EXPECT_EQ(run("train --config missing.yaml"), 1);
    EXPECT_EQ(run("train --config tiny.yaml --set stream.overlap=[2.0]"), 1);
    EXPECT_EQ(run("sweep --config tiny.yaml --axis nosuch.key=1,2"), 1);
    EXPECT_EQ(run("verify --only nosuch"), 1);
    EXPECT_EQ(run("frobnicate"), 1);
    EXPECT_EQ(run(""), 1);
}

TEST_F(Cli, RuntimeFailureExitsTwo) {
    EXPECT_EQ(run("probe-stats --config tiny.yaml --checkpoint nope.ckpt"), 2);
    EXPECT_EQ(run("report does_not_exist"), 2);
}

TEST_F(Cli, VerifyOnlyRunsNamedCheck) {
    EXPECT_EQ(run("verify --only gradcheck"), 0) << output_;
    EXPECT_NE(output_.find("PASS gradcheck"), std::string::npos) << output_;
    EXPECT_EQ(output_.find("beta_table"), std::string::npos) << output_;
    EXPECT_EQ(run("verify --only beta_table,paper_metrics"), 0) << output_;
    EXPECT_NE(output_.find("PASS paper_metrics"), std::string::npos);
}

TEST_F(Cli, TrainIsByteDeterministic) {
    ASSERT_EQ(run("train --config tiny.yaml --out a"), 0) << output_;
    ASSERT_EQ(run("train --config tiny.yaml --out b"), 0) << output_;
    int compared = 0;
    for (const auto& e : fs::directory_iterator(dir_ / "a")) {
        if (!e.is_directory()) continue;
        const auto other = dir_ / "b" / e.path().filename();
        ASSERT_TRUE(fs::exists(other)) << other;
        for (const char* f : {"metrics.json", "accuracy.json", "train_log.csv", "rp_dump.csv", "stream.tsv", "task_2.ckpt"})
            EXPECT_EQ(read_text(e.path() / f), read_text(other / f)) << f;
        ++compared;
    }
    EXPECT_EQ(compared, 2);  // train ignores variants: one run per seed
}

TEST_F(Cli, RunDirectoryLayout) {
    ASSERT_EQ(run("train --config tiny.yaml --set seeds=[3]"), 0) << output_;
    const auto root = dir_ / "runs" / "tiny";
    const auto run_dir = only_run_dir(root);
    ASSERT_FALSE(run_dir.empty());
    EXPECT_EQ(run_dir.filename().string().rfind("rdbcl_s3_", 0), 0u) << run_dir;
    for (const char* f : {"config.yaml", "stream.tsv", "task_0.ckpt", "task_1.ckpt", "task_2.ckpt", "train_log.csv",
                          "rp_dump.csv", "histograms.csv", "accuracy.json", "metrics.json"})
        EXPECT_TRUE(fs::exists(run_dir / f)) << f;
    EXPECT_TRUE(fs::exists(root / "summary.csv"));
    const auto m = Json::parse(read_text(run_dir / "metrics.json"));
    for (const char* k : {"method", "seed", "order", "avg", "last", "finetune", "bwt", "pass_at_k", "auc", "drift"})
        EXPECT_TRUE(m.contains(k)) << k;
    EXPECT_EQ(m["seed"], 3);
    // the stored config reproduces the run's settings
    const auto stored = parse_config(read_text(run_dir / "config.yaml"));
    EXPECT_EQ(stored.train.steps_per_task, 5);
}

TEST_F(Cli, SweepAxisAndReport) {
    ASSERT_EQ(run("sweep --config tiny.yaml --set seeds=[1] --axis train.static_k=0.5,2 --set method=grpo_static"), 0)
        << output_;
    const auto root = dir_ / "runs" / "tiny";
    EXPECT_TRUE(fs::exists(root / "sweep.yaml"));
    int runs = 0;
    for (const auto& e : fs::directory_iterator(root)) runs += e.is_directory();
    EXPECT_EQ(runs, 2);

    // corrupt one metrics file: the report still succeeds and lists the error
    fs::path victim;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) victim = e.path() / "metrics.json";
    write_text(victim, "{ not json");
    ASSERT_EQ(run("report runs/tiny --out rep"), 0) << output_;
    for (const char* f : {"report.csv", "report.md", "report.json", "passk.csv", "kl_dynamics.csv", "histograms.csv"})
        EXPECT_TRUE(fs::exists(dir_ / "rep" / f)) << f;
    const auto md = read_text(dir_ / "rep" / "report.md");
    EXPECT_NE(md.find("Errors"), std::string::npos);
    EXPECT_NE(md.find(victim.parent_path().filename().string()), std::string::npos);
}

TEST_F(Cli, GenStreamIsDeterministic) {
    ASSERT_EQ(run("gen-stream --preset designed --seed 4 --file s1.tsv"), 0) << output_;
    ASSERT_EQ(run("gen-stream --preset designed --seed 4 --file s2.tsv"), 0);
    ASSERT_EQ(run("gen-stream --preset designed --seed 5 --file s3.tsv"), 0);
    EXPECT_EQ(read_text(dir_ / "s1.tsv"), read_text(dir_ / "s2.tsv"));
    EXPECT_NE(read_text(dir_ / "s1.tsv"), read_text(dir_ / "s3.tsv"));
    std::ifstream in(dir_ / "s1.tsv");
    EXPECT_EQ(load_stream(in).num_tasks(), designed_stream().num_tasks);
}

TEST_F(Cli, ProbeStatsFromRun) {
    ASSERT_EQ(run("train --config tiny.yaml --set seeds=[1] --out r"), 0) << output_;
    const auto run_dir = only_run_dir(dir_ / "r");
    ASSERT_EQ(run("probe-stats --run '" + run_dir.string() + "' --out probe"), 0) << output_;
    for (const char* f : {"rp_dump.csv", "histograms.csv", "separability.json"})
        EXPECT_TRUE(fs::exists(dir_ / "probe" / f)) << f;
}

TEST(Config, RoundTrip) {
    for (const auto& name : preset_names()) {
        const auto c = preset_config(name);
        const auto back = parse_config(serialize_config(c));
        EXPECT_TRUE(back == c) << name;
        EXPECT_EQ(serialize_config(back), serialize_config(c)) << name;
    }
}

TEST(Config, OverridesAndValidation) {
    ExperimentConfig c;
    apply_override(c, "gate.tau=0.6");
    EXPECT_EQ(c.train.gate.tau, 0.6);
    apply_override(c, "stream.overlap=[0.25, 0.75]");
    EXPECT_EQ(c.stream.overlap, (std::vector<double>{0.25, 0.75}));
    EXPECT_THROW(apply_override(c, "gate.nope=1"), ConfigError);
    EXPECT_THROW(apply_override(c, "gate.tau"), ConfigError);
    EXPECT_THROW(apply_override(c, "method=magic"), ConfigError);
    c = ExperimentConfig{};
    c.train.gate.tau = 1.5;
    EXPECT_THROW(validate(c), ConfigError);
}

TEST(Config, UnknownKeyReportsLine) {
    try {
        parse_config("name: a\nseeds: [1]\ngate:\n  tau: 0.5\n  taw: 0.5\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(":5:"), std::string::npos) << e.what();
    }
}

TEST(Config, MaxLenAutoResolves) {
    ExperimentConfig c;
    resolve(c);
    EXPECT_EQ(c.train.rollout.max_len, c.stream.rule_len_max + 6);
}

TEST(Checks, CorruptedFixtureFailsOnlyItsCheck) {
    auto rows = beta_table_fixture();
    rows[2].beta = 0.08;
    EXPECT_FALSE(check_beta_table(rows).passed);
    EXPECT_TRUE(check_beta_table().passed);
    auto fixtures = paper_metric_fixtures();
    fixtures[0].last = 46.0;
    EXPECT_FALSE(check_paper_metrics(fixtures).passed);
    EXPECT_TRUE(check_paper_metrics().passed);
    for (const auto& r : run_checks({"beta_table", "paper_metrics", "verifier_table"})) EXPECT_TRUE(r.passed) << r.name;
    EXPECT_THROW(run_checks({"nosuch"}), ConfigError);
}
