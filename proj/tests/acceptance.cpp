#include "dualrep/analytics.hpp"
#include "dualrep/commands.hpp"
#include "dualrep/config.hpp"
#include "dualrep/losses.hpp"
#include "dualrep/trainers.hpp"
#include "dualrep/verify/gradcheck.hpp"
#include "dualrep/verify/oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include <unistd.h>

using namespace dualrep;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
    std::ostringstream s;
    s.precision(4);
    s << x;
    return s.str();
}

ExperimentConfig desk_config() { return load_config_file(std::string(DUALREP_SOURCE_DIR) + "/configs/desk.yaml"); }

std::vector<int> all_ids(const Dataset& d) {
    std::vector<int> v(d.videos.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<int>(i);
    return v;
}

Outcome rank_anchor() {
    double worst = 0;
    for (double theta : {1.0, 0.5, 0.1, 0.05, 0.01, 0.001, 1e-6, 100.0}) {
        for (double s : {-1.0, 0.0, 0.37, 1.0}) worst = std::max(worst, std::abs(rank_term(s, s, theta) - std::log(2.0)));
    }
    return {worst < 1e-12, "max |rank_term(t=0) - log 2| = " + fmt(worst)};
}

Outcome gradient_suite() {
    auto t0 = std::chrono::steady_clock::now();
    auto cases = gradcheck::run_suite({0, 1, 2, 3, 4});
    double worst = 0;
    std::string worst_name;
    bool ok = true;
    for (const auto& c : cases) {
        if (c.max_rel_error >= worst) {
            worst = c.max_rel_error;
            worst_name = c.suite;
        }
        ok = ok && c.pass && c.max_rel_error < 1e-4;
    }
    double secs = seconds_since(t0);
    return {ok && secs < 60, std::to_string(cases.size()) + " cases over 5 seeds, max rel err " + fmt(worst) + " (" +
                                 worst_name + "), " + fmt(secs) + " s"};
}

Outcome oracle_suite() {
    auto t0 = std::chrono::steady_clock::now();
    auto suites = oracle::run_oracle_suite(20, 2024);
    bool ok = true;
    double worst = 0;
    for (const auto& s : suites) {
        ok = ok && s.pass && s.max_error < 1e-10 && s.instances >= 20;
        worst = std::max(worst, s.max_error);
    }
    double secs = seconds_since(t0);
    return {ok && secs < 60, std::to_string(suites.size()) + " suites x 20 instances, max err " + fmt(worst) + ", " +
                                 fmt(secs) + " s"};
}

Outcome decomposition() {
    auto r = oracle::run_decomposition_suite(20, {1.0, 0.07}, 77);
    return {r.pass && r.max_error < 1e-10, "max |lhs - rhs| = " + fmt(r.max_error) + " over 20 instances per tau"};
}

Outcome variance_oracle() {
    Rng rng(5);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        int n = uniform_int(rng, 2, 10);
        std::vector<std::vector<Vec>> groups;
        for (int k = 0; k < n; ++k) {
            std::vector<Vec> g;
            int clips = uniform_int(rng, 1, 10);
            for (int c = 0; c < clips; ++c) g.push_back(random_unit_vector(5, rng));
            groups.push_back(g);
        }
        auto r = compute_variances(groups);
        auto o = oracle::variances(groups);
        worst = std::max({worst, std::abs(r.sigma_intra - o.sigma_intra), std::abs(r.sigma_inter - o.sigma_inter)});
    }
    Vec e1 = Vec::Unit(2, 0), e2 = Vec::Unit(2, 1);
    auto hand = compute_variances({{e1, e1}, {e2, e2}});
    bool hand_ok = hand.sigma_intra == 0.0 && hand.sigma_inter == 1.0;
    return {worst < 1e-12 && hand_ok, "max oracle diff " + fmt(worst) + "; hand case intra=" + fmt(hand.sigma_intra) +
                                          " inter=" + fmt(hand.sigma_inter)};
}

struct SeedRuns {
    double intra[3]{};
    double discrimination[3]{};
    double top1_untrained = 0;
    double top1_srtc = 0;
    double finetune = 0;
    double finetune_random = 0;
    double pretrain_seconds_max = 0;
    double srtc_pipeline_seconds = 0;
};

std::vector<SeedRuns> desk_runs;

void run_desk_experiments() {
    if (!desk_runs.empty()) return;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ExperimentConfig cfg = desk_config();
        cfg.seed = seed;
        cfg.data.seed = seed;
        Dataset data = generate_dataset(cfg.data);
        Split split = split_per_class(data, cfg.train_per_class);
        EvalConfig eval = cfg.eval_config();
        SeedRuns r;
        ParamSet untrained = init_params(cfg.train_config(1).encoder_dims(data.spec.frame_dim), seed);
        r.top1_untrained = retrieval_of_encoder(untrained, data, split, eval).accuracy[0];
        r.finetune_random =
            finetune_classifier(untrained, data, split, data.spec.num_classes, cfg.finetune_config(1), eval).accuracy;
        const double weights[3][2] = {{0, 0}, {cfg.loss.lambda1, 0}, {cfg.loss.lambda1, cfg.loss.lambda2}};
        for (int mode = 0; mode < 3; ++mode) {
            TrainConfig tc = cfg.train_config(1);
            tc.hp.lambda1 = weights[mode][0];
            tc.hp.lambda2 = weights[mode][1];
            auto t0 = std::chrono::steady_clock::now();
            auto res = pretrain(tc, data, split.train);
            double secs = seconds_since(t0);
            r.pretrain_seconds_max = std::max(r.pretrain_seconds_max, secs);
            auto v = variance_of_encoder(res.state.params, data, split.test, eval);
            r.intra[mode] = v.sigma_intra;
            r.discrimination[mode] = v.discrimination;
            if (mode == 2) {
                auto t1 = std::chrono::steady_clock::now();
                r.top1_srtc = retrieval_of_encoder(res.state.params, data, split, eval).accuracy[0];
                r.finetune = finetune_classifier(res.state.params, data, split, data.spec.num_classes,
                                                 cfg.finetune_config(1), eval)
                                 .accuracy;
                r.srtc_pipeline_seconds = secs + seconds_since(t1);
            }
        }
        std::cout << "    seed " << seed << ": intra base/sr/srtc " << fmt(r.intra[0]) << "/" << fmt(r.intra[1]) << "/"
                  << fmt(r.intra[2]) << ", discrimination " << fmt(r.discrimination[0]) << "/"
                  << fmt(r.discrimination[1]) << "/" << fmt(r.discrimination[2]) << ", top-1 untrained "
                  << fmt(r.top1_untrained) << " -> srtc " << fmt(r.top1_srtc) << ", finetune random " << fmt(r.finetune_random)
                  << " -> srtc " << fmt(r.finetune) << "\n";
        desk_runs.push_back(r);
    }
}

Outcome variance_trend() {
    run_desk_experiments();
    int intra_up = 0, disc_down = 0, disc_tc_up = 0;
    double slowest = 0;
    for (const auto& r : desk_runs) {
        intra_up += r.intra[1] > r.intra[0];
        disc_down += r.discrimination[1] < r.discrimination[0];
        disc_tc_up += r.discrimination[2] > r.discrimination[1];
        slowest = std::max(slowest, r.pretrain_seconds_max);
    }
    bool ok = intra_up >= 2 && disc_down >= 2 && disc_tc_up >= 2 && slowest <= 300;
    return {ok, "seeds with intra(SR)>intra(base) " + std::to_string(intra_up) + "/3, disc(SR)<disc(base) " +
                    std::to_string(disc_down) + "/3, disc(SRTC)>disc(SR) " + std::to_string(disc_tc_up) +
                    "/3, slowest pretrain " + fmt(slowest) + " s"};
}

Outcome learning_works() {
    run_desk_experiments();
    double ft = 0, ft_random = 0, min_gain = 1;
    double slowest = 0;
    for (const auto& r : desk_runs) {
        ft += r.finetune / desk_runs.size();
        ft_random += r.finetune_random / desk_runs.size();
        min_gain = std::min(min_gain, r.top1_srtc - r.top1_untrained);
        slowest = std::max(slowest, r.srtc_pipeline_seconds);
    }
    bool ok = ft >= 0.90 && ft >= ft_random && min_gain >= 0.20 && slowest <= 600;
    return {ok, "mean finetune accuracy " + fmt(ft) + " (random init " + fmt(ft_random) + ", chance 0.25), min retrieval top-1 gain " + fmt(min_gain) +
                    ", slowest pretrain+eval " + fmt(slowest) + " s"};
}

Outcome moco_mechanics() {
    Rng rng(31);
    int mismatches = 0;
    for (int seq = 0; seq < 1000; ++seq) {
        std::size_t cap = static_cast<std::size_t>(uniform_int(rng, 1, 16));
        NegativeQueue<int> q(cap);
        std::deque<int> ref;
        int next = 0;
        int ops = uniform_int(rng, 1, 50);
        for (int op = 0; op < ops; ++op) {
            if (uniform_int(rng, 0, 2) < 2) {
                q.enqueue(next);
                ref.push_back(next++);
                if (ref.size() > cap) ref.pop_front();
            } else if (!ref.empty()) {
                mismatches += q.dequeue() != ref.front();
                ref.pop_front();
            }
        }
        mismatches += q.items() != std::vector<int>(ref.begin(), ref.end());
    }
    double key_grad = 0, queue_grad = 0, key_fd = INFINITY, queue_fd = INFINITY;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto r = gradcheck::moco_stop_gradient_check(seed);
        key_grad = std::max(key_grad, r.key_param_grad_max);
        queue_grad = std::max(queue_grad, r.queue_grad_max);
        key_fd = std::min(key_fd, r.key_param_fd_max);
        queue_fd = std::min(queue_fd, r.queue_fd_max);
    }
    EncoderDims dims;
    dims.frame_dim = 6;
    ParamSet query = init_params(dims, 1), key = init_params(dims, 2);
    double worst_ratio = 0;
    for (double m : {0.5, 0.9, 0.99, 0.999}) {
        ParamSet k = key;
        double prev = max_abs_diff(k, query);
        for (int step = 0; step < 8; ++step) {
            momentum_update(k, query, m);
            double err = max_abs_diff(k, query);
            worst_ratio = std::max(worst_ratio, std::abs(err / prev - m));
            prev = err;
        }
    }
    bool ok = mismatches == 0 && key_grad == 0 && queue_grad == 0 && key_fd > 0 && queue_fd > 0 && worst_ratio < 1e-12;
    return {ok, "FIFO mismatches " + std::to_string(mismatches) + "/1000 sequences; key/queue grads " + fmt(key_grad) +
                    "/" + fmt(queue_grad) + " while FD moves " + fmt(key_fd) + "/" + fmt(queue_fd) +
                    "; momentum ratio error " + fmt(worst_ratio)};
}

Outcome simclr_degeneracy() {
    ExperimentConfig cfg = desk_config();
    cfg.loss.lambda1 = 0;
    cfg.loss.lambda2 = 0;
    Dataset data = generate_dataset(cfg.data);
    TrainConfig tc = cfg.train_config(2);
    TrainState a = init_train_state(tc, data.spec.frame_dim);
    TrainState b = init_train_state(tc, data.spec.frame_dim);
    std::vector<const Video*> batch;
    for (int i = 0; i < tc.batch_size; ++i) batch.push_back(&data.videos[i * 5]);
    int differing = 0;
    for (int step = 0; step < 10; ++step) {
        simclr_step(a, tc, batch, tc.lr);
        oracle::contrast_only_step(b, tc, batch, tc.lr);
        for (const auto& [name, m] : a.params) {
            differing += std::memcmp(m.data(), b.params.at(name).data(), sizeof(double) * m.size()) != 0;
        }
    }
    return {differing == 0, "10 steps, parameter tensors differing bitwise: " + std::to_string(differing) +
                                ", max diff " + fmt(max_abs_diff(a.params, b.params))};
}

Outcome theta_stability() {
    ExperimentConfig cfg = desk_config();
    cfg.epochs = 150;
    Dataset data = generate_dataset(cfg.data);
    Split split = split_per_class(data, cfg.train_per_class);
    std::ostringstream detail;
    bool ok = true;
    for (double lambda1 : {cfg.loss.lambda1, 1.0}) {
        for (double theta : {1.0, 0.05, 0.01, 0.001}) {
            TrainConfig tc = cfg.train_config(1);
            tc.hp.theta = theta;
            tc.hp.lambda1 = lambda1;
            bool finite = true;
            double last = 0;
            try {
                auto res = pretrain(tc, data, split.train);
                for (const auto& row : res.rows) finite = finite && std::isfinite(row.m.l_total);
                finite = finite && params_finite(res.state.params);
                last = res.rows.back().m.l_total;
            } catch (const std::exception& e) {
                finite = false;
            }
            ok = ok && finite;
            detail << "l1=" << fmt(lambda1) << ",theta=" << fmt(theta) << (finite ? ":ok(" + fmt(last) + ") " : ":FAILED ");
        }
    }
    return {ok, detail.str()};
}

Outcome determinism() {
    fs::path root = fs::temp_directory_path() / ("dualrep_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string cfg_text =
        "data:\n  num_classes: 3\n  videos_per_class: 4\n  frames_per_video: 16\n  frame_dim: 8\n  train_per_class: 3\n"
        "model:\n  hidden_dim: 8\n  feature_dim: 6\n  projection_dim: 4\n  dual_hidden_dim: 6\n"
        "loss:\n  queue_size: 32\n  lambda1: 0.1\n"
        "train:\n  epochs: 4\n  batch_size: 3\n  clip_length: 4\n"
        "eval:\n  clips_per_video: 4\n  ks: [1, 5]\n  finetune_epochs: 3\n  finetune_batch_size: 3\n"
        "  thetas: [1, 0.05]\n  gradcheck_seeds: 1\n  oracle_instances: 4\n";
    write_text(root / "c.yaml", cfg_text);
    std::ostringstream sink;
    int compared = 0, differing = 0;
    std::string bad;
    for (const std::string& fw : {std::string("simclr"), std::string("moco")}) {
        fs::path ckpt;
        for (const auto& sub : subcommands()) {
            std::string a_text, b_text;
            for (int rep = 0; rep < 2; ++rep) {
                CliOptions opts;
                opts.subcommand = sub;
                opts.config_path = (root / "c.yaml").string();
                opts.seed = 11;
                opts.workers = rep + 1;
                opts.sets = {"framework=" + fw};
                if (!ckpt.empty()) opts.sets.push_back("eval.checkpoint=" + ckpt.string());
                opts.out = (root / (fw + "_" + sub + "_" + std::to_string(rep))).string();
                if (run(opts, sink) != kExitOk) {
                    ++differing;
                    bad += " " + sub + "(exit)";
                }
            }
            for (const auto& entry : fs::directory_iterator(root / (fw + "_" + sub + "_0"))) {
                auto ext = entry.path().extension();
                if (ext != ".csv" && ext != ".tsv") continue;
                ++compared;
                fs::path twin = root / (fw + "_" + sub + "_1") / entry.path().filename();
                if (!fs::exists(twin) || read_text(entry.path()) != read_text(twin)) {
                    ++differing;
                    bad += " " + sub + "/" + entry.path().filename().string();
                }
            }
            if (sub == "pretrain") ckpt = root / (fw + "_pretrain_0") / "checkpoints" / "final";
        }
    }
    fs::remove_all(root);
    return {differing == 0 && compared >= 16, std::to_string(compared) +
                                                  " CSV/TSV files over every subcommand, both frameworks, reruns at 1 "
                                                  "and 2 workers; differing: " +
                                                  std::to_string(differing) + bad};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> fn;
    };
    const std::vector<Criterion> criteria{
        {1, "rank-term anchor", rank_anchor},
        {2, "gradient suite", gradient_suite},
        {3, "oracle suite", oracle_suite},
        {4, "decomposition identity", decomposition},
        {5, "variance oracle", variance_oracle},
        {6, "variance trend", variance_trend},
        {7, "end-to-end learning", learning_works},
        {8, "moco mechanics", moco_mechanics},
        {9, "simclr degeneracy", simclr_degeneracy},
        {10, "theta-sweep stability", theta_stability},
        {11, "determinism", determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        auto t0 = std::chrono::steady_clock::now();
        try {
            o = c.fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << c.id << " " << c.name << ": " << o.detail << " ["
                  << fmt(seconds_since(t0)) << " s]" << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " acceptance criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
