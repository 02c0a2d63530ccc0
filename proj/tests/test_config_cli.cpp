#include "support.hpp"

#include "dualrep/commands.hpp"
#include "dualrep/config.hpp"
#include "dualrep/errors.hpp"

#include <cstdlib>
#include <sstream>

using namespace dualrep;
using namespace dualrep::testing;

namespace {

std::string error_of(const std::string& yaml, const std::vector<std::string>& sets = {}) {
    try {
        parse_config(yaml, "exp.yaml", sets);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

const char* kTinyRun =
    "data:\n"
    "  num_classes: 2\n"
    "  videos_per_class: 4\n"
    "  frames_per_video: 12\n"
    "  frame_dim: 6\n"
    "  train_per_class: 3\n"
    "model:\n"
    "  hidden_dim: 6\n"
    "  feature_dim: 5\n"
    "  projection_dim: 4\n"
    "  dual_hidden_dim: 5\n"
    "loss:\n"
    "  queue_size: 16\n"
    "  lambda1: 0.1\n"
    "train:\n"
    "  epochs: 3\n"
    "  batch_size: 3\n"
    "  lr_milestones: [2]\n"
    "  clip_length: 4\n"
    "eval:\n"
    "  clips_per_video: 3\n"
    "  ks: [1, 3]\n"
    "  finetune_epochs: 2\n"
    "  finetune_batch_size: 3\n"
    "  thetas: [1, 0.001]\n"
    "  gradcheck_seeds: 1\n"
    "  oracle_instances: 3\n";

int run_cli(const std::vector<std::string>& extra, std::string* log_out = nullptr) {
    std::vector<std::string> args{"dualrep"};
    args.insert(args.end(), extra.begin(), extra.end());
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream log;
    int rc = 0;
    {
        std::streambuf* old = std::cerr.rdbuf(log.rdbuf());
        rc = cli_main(static_cast<int>(argv.size()), argv.data());
        std::cerr.rdbuf(old);
    }
    if (log_out) *log_out = log.str();
    return rc;
}

}  // namespace

TEST(Config, DefaultsMatchPaperHyperparameters) {
    ExperimentConfig c = parse_config("", "defaults");
    EXPECT_EQ(c.loss.tau, 0.07);
    EXPECT_EQ(c.loss.tau_tc, 0.5);
    EXPECT_EQ(c.loss.theta, 0.05);
    EXPECT_EQ(c.loss.lambda1, 1.0);
    EXPECT_EQ(c.loss.lambda2, 1.0);
    EXPECT_EQ(c.loss.queue_size, 16384);
    EXPECT_EQ(c.lr_milestones, (std::vector<int>{120, 160}));
    EXPECT_EQ(c.sgd_momentum, 0.9);
    EXPECT_EQ(c.ks, (std::vector<int>{1, 5, 10, 20, 50}));
}

TEST(Config, UnknownKeyNamesKeyAndLine) {
    std::string e = error_of("seed: 1\nloss:\n  tau: 0.1\n  temperature: 2\n");
    EXPECT_NE(e.find("exp.yaml:4"), std::string::npos) << e;
    EXPECT_NE(e.find("loss.temperature"), std::string::npos) << e;
    e = error_of("bogus: 1\n");
    EXPECT_NE(e.find("exp.yaml:1"), std::string::npos) << e;
    EXPECT_NE(e.find("bogus"), std::string::npos) << e;
}

TEST(Config, BadValuesAreLineAnchored) {
    std::string e = error_of("train:\n  epochs: many\n");
    EXPECT_NE(e.find("exp.yaml:2"), std::string::npos) << e;
    EXPECT_NE(e.find("train.epochs"), std::string::npos) << e;
    e = error_of("loss:\n  theta: -1\n");
    EXPECT_NE(e.find("exp.yaml:2"), std::string::npos) << e;
    EXPECT_NE(e.find("theta"), std::string::npos) << e;
    e = error_of("framework: byol\n");
    EXPECT_NE(e.find("exp.yaml:1"), std::string::npos) << e;
    e = error_of("loss: [1, 2\n");
    EXPECT_NE(e.find("exp.yaml:"), std::string::npos) << e;
    e = error_of("", {"train.lr=abc"});
    EXPECT_NE(e.find("--set train.lr"), std::string::npos) << e;
    e = error_of("", {"noequals"});
    EXPECT_NE(e.find("key=value"), std::string::npos) << e;
}

TEST(Config, OverridePrecedence) {
    ExperimentConfig def = parse_config("", "defaults");
    ExperimentConfig file = parse_config("train:\n  lr: 0.5\n  epochs: 3\n", "exp.yaml");
    EXPECT_EQ(def.lr, 0.01);
    EXPECT_EQ(file.lr, 0.5);
    EXPECT_EQ(file.epochs, 3);
    ExperimentConfig both = parse_config("train:\n  lr: 0.5\n  epochs: 3\n", "exp.yaml", {"train.lr=0.25", "loss.segments=4"});
    EXPECT_EQ(both.lr, 0.25);
    EXPECT_EQ(both.epochs, 3);
    EXPECT_EQ(both.loss.segments, 4);
    ExperimentConfig last = parse_config("", "d", {"seed=1", "seed=2"});
    EXPECT_EQ(last.seed, 2u);

    TempDir dir("precedence");
    write_text(dir / "c.yaml", "seed: 5\ntrain:\n  lr: 0.5\n");
    CliOptions opts;
    opts.subcommand = "pretrain";
    opts.config_path = (dir / "c.yaml").string();
    EXPECT_EQ(resolve_config(opts).seed, 5u);
    opts.sets = {"seed=6"};
    EXPECT_EQ(resolve_config(opts).seed, 6u);
    opts.seed = 7;
    EXPECT_EQ(resolve_config(opts).seed, 7u);
    EXPECT_EQ(resolve_config(opts).lr, 0.5);
}

TEST(Config, DumpRoundTripsEveryKey) {
    ExperimentConfig c = parse_config(kTinyRun, "tiny", {"framework=moco", "pretext=order_prediction", "augment.crop_fraction=0.5", "loss.tau=0.123456789012345"});
    std::string dumped = dump_config(c);
    ExperimentConfig back = parse_config(dumped, "dumped");
    EXPECT_EQ(dump_config(back), dumped);
    EXPECT_EQ(back.framework, Framework::MoCo);
    EXPECT_EQ(back.loss.tau, 0.123456789012345);
    for (const auto& key : config_keys()) {
        std::string leaf = key.substr(key.find('.') == std::string::npos ? 0 : key.find('.') + 1);
        EXPECT_NE(dumped.find(leaf + ":"), std::string::npos) << key;
    }
}

TEST(Config, ValidationFailsBeforeWork) {
    EXPECT_NE(error_of("data:\n  frame_dim: 0\n"), "");
    EXPECT_NE(error_of("train:\n  clip_length: 7\n"), "");
    EXPECT_NE(error_of("train:\n  batch_size: 1\n"), "");
    EXPECT_NE(error_of("loss:\n  momentum: 1.5\n"), "");
    EXPECT_NE(error_of("data:\n  frames_per_video: 10\ntrain:\n  clip_length: 8\n  stride: 2\n"), "");
}

TEST(Cli, OutputDirectoryResolution) {
    CliOptions opts;
    opts.subcommand = "retrieve";
    ExperimentConfig c;
    ::unsetenv(kOutputRootEnv);
    EXPECT_EQ(resolve_output_dir(opts, c), std::filesystem::path("runs/retrieve"));
    ::setenv(kOutputRootEnv, "/tmp/root", 1);
    EXPECT_EQ(resolve_output_dir(opts, c), std::filesystem::path("/tmp/root/retrieve"));
    c.output_dir = "cfgout";
    EXPECT_EQ(resolve_output_dir(opts, c), std::filesystem::path("cfgout"));
    opts.out = "flag";
    EXPECT_EQ(resolve_output_dir(opts, c), std::filesystem::path("flag"));
    ::unsetenv(kOutputRootEnv);
}

TEST(Cli, UnknownKeyAndSubcommandExitNonZero) {
    TempDir dir("cli_bad");
    write_text(dir / "c.yaml", "train:\n  epochz: 3\n");
    std::string log;
    EXPECT_EQ(run_cli({"pretrain", "--config", (dir / "c.yaml").string(), "--out", (dir / "o").string()}, &log),
              kExitConfig);
    EXPECT_NE(log.find("train.epochz"), std::string::npos) << log;
    EXPECT_NE(log.find("c.yaml:2"), std::string::npos) << log;
    EXPECT_EQ(run_cli({"explode"}, &log), kExitConfig);
    EXPECT_EQ(run_cli({"pretrain", "--workers", "0"}, &log), kExitConfig);
}

TEST(Cli, GradcheckAndOracleCheckPass) {
    TempDir dir("cli_checks");
    write_text(dir / "c.yaml", kTinyRun);
    std::string cfg = (dir / "c.yaml").string();
    EXPECT_EQ(run_cli({"gradcheck", "--config", cfg, "--out", (dir / "g").string()}), kExitOk);
    std::string csv = read_text(dir / "g/gradcheck.csv");
    EXPECT_EQ(csv.find(",0\n"), std::string::npos) << csv;
    EXPECT_EQ(run_cli({"oracle-check", "--config", cfg, "--out", (dir / "o").string()}), kExitOk);
    EXPECT_NE(read_text(dir / "o/oracle.csv").find("decomposition"), std::string::npos);
}

TEST(Cli, PipelineArtifactsAndDeterminism) {
    TempDir dir("cli_pipe");
    write_text(dir / "c.yaml", kTinyRun);
    std::string cfg = (dir / "c.yaml").string();
    auto out = [&](const std::string& n) { return (dir / n).string(); };
    ASSERT_EQ(run_cli({"generate-data", "--config", cfg, "--out", out("data")}), kExitOk);
    EXPECT_TRUE(std::filesystem::exists(dir / "data/dataset/frames.bin"));
    ASSERT_EQ(run_cli({"pretrain", "--config", cfg, "--seed", "3", "--out", out("p1")}), kExitOk);
    ASSERT_EQ(run_cli({"pretrain", "--config", cfg, "--seed", "3", "--out", out("p2"), "--workers", "2"}), kExitOk);
    EXPECT_EQ(file_checksum(dir / "p1/metrics.csv"), file_checksum(dir / "p2/metrics.csv"));
    ASSERT_EQ(run_cli({"pretrain", "--config", cfg, "--set", "data.path=" + out("data/dataset"), "--seed", "3",
                       "--out", out("p3")}),
              kExitOk);
    EXPECT_EQ(file_checksum(dir / "p1/metrics.csv"), file_checksum(dir / "p3/metrics.csv"));

    std::string manifest = read_text(dir / "p1/run_manifest.txt");
    EXPECT_NE(manifest.find("version=" + std::string(kVersion)), std::string::npos);
    EXPECT_NE(manifest.find("seed=3"), std::string::npos);
    EXPECT_NE(manifest.find("artifact=metrics.csv fnv1a64=" + file_checksum(dir / "p1/metrics.csv")), std::string::npos);

    const std::string ckpt = "eval.checkpoint=" + out("p1/checkpoints/final");
    for (const std::string sub : {"finetune", "retrieve", "analyze-variance"}) {
        ASSERT_EQ(run_cli({sub, "--config", cfg, "--set", ckpt, "--out", out(sub + "1")}), kExitOk) << sub;
        ASSERT_EQ(run_cli({sub, "--config", cfg, "--set", ckpt, "--out", out(sub + "2")}), kExitOk) << sub;
    }
    for (const std::string f : {"finetune1/finetune.csv", "finetune1/per_class_improvement.csv", "retrieve1/retrieval.csv",
                                "retrieve1/embeddings.tsv", "analyze-variance1/variance.csv"}) {
        std::string other = f;
        other.replace(other.find('1'), 1, "2");
        EXPECT_EQ(read_text(dir / f), read_text(dir / other)) << f;
    }
    EXPECT_EQ(read_text(dir / "retrieve1/retrieval.csv").substr(0, 17), "k,top_k_accuracy\n");
}

TEST(Cli, RerunFromSnapshotReproducesCsv) {
    TempDir dir("cli_rerun");
    write_text(dir / "c.yaml", kTinyRun);
    ASSERT_EQ(run_cli({"pretrain", "--config", (dir / "c.yaml").string(), "--set", "train.epochs=2", "--seed", "9",
                       "--out", (dir / "run").string()}),
              kExitOk);
    std::string before = read_text(dir / "run/metrics.csv");
    std::filesystem::copy_file(dir / "run/config.yaml", dir / "snapshot.yaml");
    std::filesystem::remove(dir / "run/metrics.csv");
    ASSERT_EQ(run_cli({"pretrain", "--config", (dir / "snapshot.yaml").string()}), kExitOk);
    EXPECT_EQ(read_text(dir / "run/metrics.csv"), before);
}

TEST(Cli, SweepThetaCompletesAtTinyTheta) {
    TempDir dir("cli_sweep");
    write_text(dir / "c.yaml", kTinyRun);
    ASSERT_EQ(run_cli({"sweep-theta", "--config", (dir / "c.yaml").string(), "--out", (dir / "s").string()}), kExitOk);
    std::string csv = read_text(dir / "s/theta_sweep.csv");
    EXPECT_NE(csv.find("\n0.001,"), std::string::npos) << csv;
}

TEST(Cli, DivergenceExitsWithDiagnostic) {
    TempDir dir("cli_nan");
    write_text(dir / "c.yaml", kTinyRun);
    std::string log;
    EXPECT_EQ(run_cli({"pretrain", "--config", (dir / "c.yaml").string(), "--set", "train.lr=1e300", "--out",
                       (dir / "n").string()},
                      &log),
              kExitNumeric);
    EXPECT_TRUE(std::filesystem::exists(dir / "n/diagnostic.txt"));
    EXPECT_NE(read_text(dir / "n/run_manifest.txt").find("exit_status=3"), std::string::npos);
}
