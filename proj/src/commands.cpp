#include "dualrep/commands.hpp"

#include "dualrep/analytics.hpp"
#include "dualrep/errors.hpp"
#include "dualrep/verify/gradcheck.hpp"
#include "dualrep/verify/oracles.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <sstream>

namespace dualrep {

namespace fs = std::filesystem;

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"generate-data", "pretrain",       "finetune",  "retrieve",
                                                "analyze-variance", "sweep-theta", "gradcheck", "oracle-check"};
    return names;
}

fs::path resolve_output_dir(const CliOptions& opts, const ExperimentConfig& cfg) {
    if (opts.out) return *opts.out;
    if (!cfg.output_dir.empty()) return cfg.output_dir;
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / opts.subcommand;
    return fs::path("runs") / opts.subcommand;
}

ExperimentConfig resolve_config(const CliOptions& opts) {
    ExperimentConfig cfg = opts.config_path ? load_config_file(*opts.config_path, opts.sets)
                                            : parse_config("", "defaults", opts.sets);
    if (opts.seed) cfg.seed = *opts.seed;
    return cfg;
}

Dataset prepare_dataset(const ExperimentConfig& cfg) {
    if (!cfg.data_path.empty()) return load_dataset(cfg.data_path);
    return generate_dataset(cfg.data);
}

namespace {

struct RunContext {
    const ExperimentConfig& cfg;
    fs::path out;
    int workers;
    std::ostream& log;
    std::vector<std::string> artifacts;

    void write(const std::string& name, const std::string& text) {
        write_text(out / name, text);
        artifacts.push_back(name);
    }
};

std::string fmt_discrimination(double d) { return std::isinf(d) ? "inf" : format_double(d); }

ParamSet load_encoder(const ExperimentConfig& cfg, int frame_dim) {
    if (cfg.checkpoint.empty()) {
        return init_params(cfg.train_config(1).encoder_dims(frame_dim), cfg.seed);
    }
    fs::path p = cfg.checkpoint;
    ParamSet params = fs::exists(p / "params.manifest") ? load_params(p / "params") : load_params(p);
    if (infer_dims(params, cfg.loss.segments).frame_dim != frame_dim) {
        throw ManifestError("checkpoint frame dimension does not match the dataset");
    }
    return params;
}

int cmd_generate(RunContext& ctx) {
    Dataset data = prepare_dataset(ctx.cfg);
    save_dataset(data, ctx.out / "dataset");
    ctx.artifacts.push_back("dataset/manifest.txt");
    double min_dist = INFINITY;
    for (Eigen::Index i = 0; i < data.class_centroids.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < data.class_centroids.rows(); ++j) {
            min_dist = std::min(min_dist, (data.class_centroids.row(i) - data.class_centroids.row(j)).norm());
        }
    }
    std::ostringstream s;
    s << "num_videos,num_classes,frames_per_video,frame_dim,min_class_centroid_distance\n"
      << data.videos.size() << "," << data.spec.num_classes << "," << data.spec.frames_per_video << ","
      << data.spec.frame_dim << "," << (std::isinf(min_dist) ? "inf" : format_double(min_dist)) << "\n";
    ctx.write("dataset_summary.csv", s.str());
    ctx.log << "wrote " << data.videos.size() << " videos to " << (ctx.out / "dataset").string() << "\n";
    return kExitOk;
}

int cmd_pretrain(RunContext& ctx) {
    Dataset data = prepare_dataset(ctx.cfg);
    Split split = split_per_class(data, ctx.cfg.train_per_class);
    auto res = pretrain(ctx.cfg.train_config(ctx.workers), data, split.train, ctx.out);
    ctx.artifacts.push_back("metrics.csv");
    ctx.artifacts.push_back("checkpoints/final/params.bin");
    if (!res.rows.empty()) {
        const auto& last = res.rows.back().m;
        ctx.log << "steps=" << res.state.step << " final L_total=" << format_double(last.l_total) << "\n";
    }
    return kExitOk;
}

int cmd_finetune(RunContext& ctx) {
    Dataset data = prepare_dataset(ctx.cfg);
    Split split = split_per_class(data, ctx.cfg.train_per_class);
    ParamSet params = load_encoder(ctx.cfg, data.spec.frame_dim);
    const int k = data.spec.num_classes;
    auto ft = ctx.cfg.finetune_config(ctx.workers);
    auto eval = ctx.cfg.eval_config();
    auto res = finetune_classifier(params, data, split, k, ft, eval);
    std::ostringstream s;
    s << "class,count,accuracy\n";
    for (const auto& [label, acc] : res.per_class_accuracy) {
        s << label << "," << res.per_class_count.at(label) << "," << format_double(acc) << "\n";
    }
    s << "all," << res.labels.size() << "," << format_double(res.accuracy) << "\n";
    ctx.write("finetune.csv", s.str());
    ctx.log << "finetune accuracy " << format_double(res.accuracy) << "\n";
    if (!ctx.cfg.checkpoint.empty()) {
        ParamSet scratch = init_params(ctx.cfg.train_config(1).encoder_dims(data.spec.frame_dim), ctx.cfg.seed);
        auto base = finetune_classifier(scratch, data, split, k, ft, eval);
        std::ostringstream d;
        d << "class,random_init,pretrained,delta\n";
        for (const auto& c : per_class_improvement(base.per_class_accuracy, res.per_class_accuracy)) {
            d << c.label << "," << format_double(c.before) << "," << format_double(c.after) << ","
              << format_double(c.delta) << "\n";
        }
        ctx.write("per_class_improvement.csv", d.str());
        ctx.log << "random-init accuracy " << format_double(base.accuracy) << "\n";
    }
    return kExitOk;
}

int cmd_retrieve(RunContext& ctx) {
    Dataset data = prepare_dataset(ctx.cfg);
    Split split = split_per_class(data, ctx.cfg.train_per_class);
    ParamSet params = load_encoder(ctx.cfg, data.spec.frame_dim);
    auto eval = ctx.cfg.eval_config();
    auto res = retrieval_of_encoder(params, data, split, eval);
    std::ostringstream s;
    s << "k,top_k_accuracy\n";
    for (std::size_t i = 0; i < res.ks.size(); ++i) {
        s << res.ks[i] << "," << format_double(res.accuracy[i]) << "\n";
        ctx.log << "top-" << res.ks[i] << " " << format_double(res.accuracy[i]) << "\n";
    }
    ctx.write("retrieval.csv", s.str());
    std::vector<int> all(data.videos.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    ctx.write("embeddings.tsv", embeddings_tsv(params, data, all, eval));
    return kExitOk;
}

int cmd_variance(RunContext& ctx) {
    Dataset data = prepare_dataset(ctx.cfg);
    Split split = split_per_class(data, ctx.cfg.train_per_class);
    ParamSet params = load_encoder(ctx.cfg, data.spec.frame_dim);
    auto eval = ctx.cfg.eval_config();
    std::vector<int> all(data.videos.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    std::ostringstream s;
    s << "split,videos,sigma_inter,sigma_intra,discrimination\n";
    for (const auto& [name, idx] : std::vector<std::pair<std::string, std::vector<int>>>{
             {"train", split.train}, {"test", split.test}, {"all", all}}) {
        if (idx.size() < 2) continue;
        auto rep = variance_of_encoder(params, data, idx, eval);
        s << name << "," << idx.size() << "," << format_double(rep.sigma_inter) << ","
          << format_double(rep.sigma_intra) << "," << fmt_discrimination(rep.discrimination) << "\n";
        ctx.log << name << ": inter " << format_double(rep.sigma_inter) << " intra "
                << format_double(rep.sigma_intra) << " discrimination " << fmt_discrimination(rep.discrimination)
                << "\n";
    }
    ctx.write("variance.csv", s.str());
    return kExitOk;
}

int cmd_sweep(RunContext& ctx) {
    Dataset data = prepare_dataset(ctx.cfg);
    Split split = split_per_class(data, ctx.cfg.train_per_class);
    auto rows = theta_sweep(ctx.cfg.train_config(ctx.workers), data, split, ctx.cfg.finetune_config(ctx.workers),
                            ctx.cfg.eval_config(), ctx.cfg.thetas);
    ctx.write("theta_sweep.csv", theta_sweep_csv(rows));
    bool finite = true;
    for (const auto& r : rows) {
        ctx.log << "theta " << format_double(r.theta) << ": top-1 " << format_double(r.retrieval_top1)
                << " finetune " << format_double(r.finetune_accuracy) << "\n";
        finite = finite && r.finite;
    }
    return finite ? kExitOk : kExitNumeric;
}

int cmd_gradcheck(RunContext& ctx) {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < ctx.cfg.gradcheck_seeds; ++i) seeds.push_back(ctx.cfg.seed + static_cast<std::uint64_t>(i));
    auto cases = gradcheck::run_suite(seeds);
    std::ostringstream s;
    s << "suite,seed,max_rel_error,pass\n";
    std::map<std::string, double> worst;
    bool ok = true;
    for (const auto& c : cases) {
        s << c.suite << "," << c.seed << "," << format_double(c.max_rel_error) << "," << (c.pass ? 1 : 0) << "\n";
        worst[c.suite] = std::max(worst[c.suite], c.max_rel_error);
        ok = ok && c.pass;
    }
    auto sg = gradcheck::moco_stop_gradient_check(ctx.cfg.seed);
    const bool sg_ok = sg.key_param_grad_max == 0 && sg.queue_grad_max == 0 && sg.key_param_fd_max > 0 &&
                       sg.queue_fd_max > 0;
    s << "moco_stop_gradient," << ctx.cfg.seed << "," << format_double(std::max(sg.key_param_grad_max, sg.queue_grad_max))
      << "," << (sg_ok ? 1 : 0) << "\n";
    ok = ok && sg_ok;
    ctx.write("gradcheck.csv", s.str());
    for (const auto& [name, e] : worst) {
        ctx.log << (e < gradcheck::kTolerance ? "ok   " : "FAIL ") << name << " max rel err " << format_double(e) << "\n";
    }
    ctx.log << (sg_ok ? "ok   " : "FAIL ") << "moco stop-gradient (key/queue gradients exactly zero)\n";
    ctx.log << (ok ? "all gradient checks passed" : "gradient checks FAILED") << " (tolerance "
            << format_double(gradcheck::kTolerance) << ", step " << format_double(gradcheck::kStep) << ")\n";
    return ok ? kExitOk : kExitCheckFailed;
}

int cmd_oracle(RunContext& ctx) {
    auto suites = oracle::run_oracle_suite(ctx.cfg.oracle_instances, ctx.cfg.seed);
    suites.push_back(oracle::run_decomposition_suite(ctx.cfg.oracle_instances, {1.0, 0.07}, ctx.cfg.seed + 1));
    std::ostringstream s;
    s << "suite,instances,max_error,tolerance,pass\n";
    bool ok = true;
    for (const auto& r : suites) {
        s << r.name << "," << r.instances << "," << format_double(r.max_error) << "," << format_double(r.tolerance)
          << "," << (r.pass ? 1 : 0) << "\n";
        ctx.log << (r.pass ? "ok   " : "FAIL ") << r.name << " max err " << format_double(r.max_error) << "\n";
        ok = ok && r.pass;
    }
    ctx.write("oracle.csv", s.str());
    return ok ? kExitOk : kExitCheckFailed;
}

void write_manifest(const RunContext& ctx, const CliOptions& opts, int status) {
    std::ostringstream m;
    m << "tool=dualrep\n"
      << "version=" << kVersion << "\n"
      << "subcommand=" << opts.subcommand << "\n"
      << "seed=" << ctx.cfg.seed << "\n"
      << "data_seed=" << ctx.cfg.data.seed << "\n"
      << "config=config.yaml\n"
      << "config_source=" << (opts.config_path ? *opts.config_path : std::string("defaults")) << "\n";
    for (const auto& s : opts.sets) m << "override=" << s << "\n";
    m << "workers=" << ctx.workers << "\n"
      << "rerun=dualrep " << opts.subcommand << " --config " << fs::absolute(ctx.out / "config.yaml").string() << "\n"
      << "exit_status=" << status << "\n";
    for (const auto& a : ctx.artifacts) {
        if (fs::exists(ctx.out / a)) m << "artifact=" << a << " fnv1a64=" << file_checksum(ctx.out / a) << "\n";
    }
    write_text(ctx.out / "run_manifest.txt", m.str());
}

}  // namespace

int run(const CliOptions& opts, std::ostream& log) {
    const auto& subs = subcommands();
    if (std::find(subs.begin(), subs.end(), opts.subcommand) == subs.end()) {
        log << "error: unknown subcommand '" << opts.subcommand << "'\n";
        return kExitConfig;
    }
    if (opts.workers < 1) {
        log << "error: --workers must be at least 1\n";
        return kExitConfig;
    }
    ExperimentConfig cfg;
    try {
        cfg = resolve_config(opts);
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    fs::path out = resolve_output_dir(opts, cfg);
    ExperimentConfig snapshot = cfg;
    snapshot.output_dir = fs::absolute(out).string();
    if (!snapshot.checkpoint.empty()) snapshot.checkpoint = fs::absolute(snapshot.checkpoint).string();
    if (!snapshot.data_path.empty()) snapshot.data_path = fs::absolute(snapshot.data_path).string();
    RunContext ctx{cfg, out, opts.workers, log, {}};
    int status = kExitRuntime;
    try {
        fs::create_directories(out);
        write_text(out / "config.yaml", dump_config(snapshot));
        static const std::map<std::string, int (*)(RunContext&)> table{
            {"generate-data", cmd_generate}, {"pretrain", cmd_pretrain},      {"finetune", cmd_finetune},
            {"retrieve", cmd_retrieve},      {"analyze-variance", cmd_variance}, {"sweep-theta", cmd_sweep},
            {"gradcheck", cmd_gradcheck},    {"oracle-check", cmd_oracle}};
        status = table.at(opts.subcommand)(ctx);
    } catch (const NumericError& e) {
        log << "numeric error: " << e.what() << " (see " << (out / "diagnostic.txt").string() << ")\n";
        status = kExitNumeric;
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        status = kExitConfig;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        status = kExitRuntime;
    }
    try {
        write_manifest(ctx, opts, status);
    } catch (const std::exception& e) {
        log << "error writing run manifest: " << e.what() << "\n";
        if (status == kExitOk) status = kExitRuntime;
    }
    return status;
}

int cli_main(int argc, char** argv) {
    CLI::App app{"dualrep: dual-representation self-supervised learning on synthetic video"};
    app.set_version_flag("--version", kVersion);
    CliOptions opts;
    std::string config, out;
    std::uint64_t seed = 0;
    app.add_option("subcommand", opts.subcommand, "Subcommand to run")
        ->required()
        ->check(CLI::IsMember(subcommands()));
    auto* config_opt = app.add_option("--config", config, "YAML experiment configuration");
    auto* seed_opt = app.add_option("--seed", seed, "Override the training seed");
    auto* out_opt = app.add_option("--out", out, "Output directory");
    app.add_option("--set", opts.sets, "Override a config key (key=value), repeatable")->take_all();
    app.add_option("--workers", opts.workers, "Worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);
    app.footer(std::string("Environment: ") + kOutputRootEnv + " sets the default output root.");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }
    if (*config_opt) opts.config_path = config;
    if (*seed_opt) opts.seed = seed;
    if (*out_opt) opts.out = out;
    return run(opts, std::cerr);
}

}  // namespace dualrep
