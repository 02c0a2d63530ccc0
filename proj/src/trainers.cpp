#include "dualrep/trainers.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace dualrep {

std::string to_string(Framework f) { return f == Framework::SimCLR ? "simclr" : "moco"; }

std::string to_string(Pretext p) {
    return p == Pretext::ShuffleRank ? "shuffle_rank" : "order_prediction";
}

Framework parse_framework(const std::string& s) {
    if (s == "simclr") return Framework::SimCLR;
    if (s == "moco") return Framework::MoCo;
    throw ConfigError("unknown framework '" + s + "' (expected simclr or moco)");
}

Pretext parse_pretext(const std::string& s) {
    if (s == "shuffle_rank") return Pretext::ShuffleRank;
    if (s == "order_prediction") return Pretext::OrderPrediction;
    throw ConfigError("unknown pretext '" + s + "' (expected shuffle_rank or order_prediction)");
}

void TrainConfig::validate() const {
    hp.validate();
    augment.validate();
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (!(lr >= 0)) throw ConfigError("lr must be non-negative");
    if (!(lr_decay > 0)) throw ConfigError("lr_decay must be positive");
    if (!(sgd_momentum >= 0 && sgd_momentum < 1)) throw ConfigError("sgd_momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
    if (clip_length <= 0 || stride <= 0) throw ConfigError("clip_length and stride must be positive");
    if (clip_length % hp.segments != 0) {
        throw ConfigError("clip_length must be divisible by the segment count");
    }
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    if (workers < 1) throw ConfigError("workers must be at least 1");
    if (framework == Framework::MoCo && hp.queue_size < batch_size) {
        throw ConfigError("queue_size must be at least batch_size");
    }
}

EncoderDims TrainConfig::encoder_dims(int frame_dim) const {
    EncoderDims d = dims;
    d.frame_dim = frame_dim;
    d.segments = hp.segments;
    d.order_head = pretext == Pretext::OrderPrediction;
    return d;
}

double TrainConfig::lr_at_epoch(int epoch) const {
    double r = lr;
    for (int m : lr_milestones) {
        if (epoch >= m) r *= lr_decay;
    }
    return r;
}

void SgdOptimizer::step(ParamSet& params, ParamSet& velocity, const ParamSet& grads, double lr) const {
    check_same_manifest(params, grads);
    check_same_manifest(params, velocity);
    for (auto& [name, p] : params) {
        Mat& v = velocity.at(name);
        v = momentum_ * v + (grads.at(name) + weight_decay_ * p);
        p -= lr * v;
    }
}

TrainState init_train_state(const TrainConfig& cfg, int frame_dim) {
    cfg.validate();
    TrainState s;
    EncoderDims dims = cfg.encoder_dims(frame_dim);
    s.params = init_params(dims, cfg.seed);
    s.velocity = zeros_like(s.params);
    s.rng.seed(cfg.seed ^ 0x5DEECE66DULL);
    if (cfg.framework == Framework::MoCo) {
        s.key_params = s.params;
        Rng qrng(cfg.seed ^ 0xB5297A4DULL);
        const std::size_t cap = static_cast<std::size_t>(cfg.hp.queue_size);
        s.clip_queue = NegativeQueue<Vec>(cap);
        s.dual_queue = NegativeQueue<DualRep>(cap);
        for (std::size_t i = 0; i < cap; ++i) {
            s.clip_queue.enqueue(random_unit_vector(dims.projection_dim, qrng));
        }
        for (std::size_t i = 0; i < cap; ++i) {
            DualRep r;
            for (int k = 0; k < dims.segments; ++k) r.push_back(random_unit_vector(dims.projection_dim, qrng));
            s.dual_queue.enqueue(r);
        }
    }
    return s;
}

std::vector<VideoDraw> draw_batch(Rng& rng, const TrainConfig& cfg,
                                  const std::vector<const Video*>& batch) {
    std::vector<VideoDraw> draws;
    draws.reserve(batch.size());
    for (const Video* v : batch) {
        VideoDraw d;
        d.c1 = sample_clip(*v, cfg.clip_length, cfg.stride, rng);
        d.c2 = augment(sample_clip(*v, cfg.clip_length, cfg.stride, rng), cfg.augment, rng);
        if (cfg.pretext == Pretext::OrderPrediction) {
            // Order prediction needs every order, the unshuffled one included.
            d.tuple.c = d.c1;
            d.tuple.params = draw_augment_params(static_cast<int>(d.c1.frames.cols()), cfg.augment, rng);
            d.tuple.c_hat = apply_augment(d.c1, d.tuple.params);
            d.tuple.perm = random_permutation(cfg.hp.segments, rng);
            d.tuple.s_hat = permute_subclips(d.tuple.c_hat, cfg.hp.segments, d.tuple.perm);
        } else {
            d.tuple = make_training_tuple(d.c1, cfg.hp.segments, cfg.augment, rng);
        }
        draws.push_back(std::move(d));
    }
    return draws;
}

namespace {

struct Forward {
    ClipCache cz1, cz2;
    Vec z1, z2;
    DualCache dr1, dr2, dq, dp;
    DualRep r1, r2, q, p_raw, p;
    Permutation perm;
    Vec key;
    DualRep dual_key;
};

struct Backward {
    Vec dz1, dz2;
    DualRep dr1, dr2, dq, dp;  // dp is in canonical segment order
    bool r1 = false, r2 = false, q = false, p = false;
};

void accumulate(DualRep& acc, const DualRep& g, double w) {
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += w * g[k];
}

void add_grads(ParamSet& acc, const ParamSet& g) {
    for (auto& [name, m] : acc) m += g.at(name);
}

/// Forward, losses and backward for one batch. `state` is used for MoCo keys and queues.
StepGradients compute_step(const ParamSet& params, const TrainState* moco, const TrainConfig& cfg,
                           const std::vector<VideoDraw>& draws) {
    const std::size_t n = draws.size();
    if (n < 2) throw ConfigError("a training batch needs at least 2 videos");
    const int segs = cfg.hp.segments;
    const bool rank = cfg.pretext == Pretext::ShuffleRank;

    std::vector<Forward> fw(n);
    parallel_for(n, cfg.workers, [&](std::size_t i) {
        const auto& d = draws[i];
        Forward& f = fw[i];
        f.z1 = encode_clip(params, d.c1.frames, &f.cz1);
        f.r1 = project_dual(params, d.c1.frames, segs, &f.dr1);
        f.q = project_dual(params, d.tuple.c_hat.frames, segs, &f.dq);
        f.p_raw = project_dual(params, d.tuple.s_hat.frames, segs, &f.dp);
        f.perm = d.tuple.perm;
        f.p = unpermute_parts(f.p_raw, f.perm);
        if (moco) {
            f.key = encode_clip(moco->key_params, d.c2.frames);
            f.dual_key = project_dual(moco->key_params, d.c2.frames, segs);
        } else {
            f.z2 = encode_clip(params, d.c2.frames, &f.cz2);
            f.r2 = project_dual(params, d.c2.frames, segs, &f.dr2);
        }
    });

    StepGradients out;
    StepMetrics& m = out.metrics;
    std::vector<Backward> bw(n);
    for (std::size_t i = 0; i < n; ++i) {
        bw[i].dr1 = zeros_like(fw[i].r1);
        bw[i].dq = zeros_like(fw[i].q);
        bw[i].dp = zeros_like(fw[i].p);
        if (!moco) bw[i].dr2 = zeros_like(fw[i].r2);
    }
    const double l1 = cfg.hp.lambda1;
    const double l2 = cfg.hp.lambda2;

    if (moco) {
        std::vector<Vec> z, keys;
        std::vector<DualRep> r, dkeys;
        for (const auto& f : fw) {
            z.push_back(f.z1);
            keys.push_back(f.key);
            r.push_back(f.r1);
            dkeys.push_back(f.dual_key);
        }
        auto lc = clip_contrastive_moco(z, keys, moco->clip_queue.items(), cfg.hp.tau);
        auto ltc = tc_contrast_moco(r, dkeys, moco->dual_queue.items(), cfg.hp.tau_tc);
        m.l_c = lc.value;
        m.l_tc = ltc.value;
        for (std::size_t i = 0; i < n; ++i) {
            bw[i].dz1 = lc.grad_z[i];
            if (l2 > 0) {
                accumulate(bw[i].dr1, ltc.grad_r[i], l2);
                bw[i].r1 = true;
            }
        }
        out.keys = std::move(keys);
        out.dual_keys = std::move(dkeys);
    } else {
        std::vector<Vec> z;
        std::vector<DualRep> r;
        for (const auto& f : fw) {
            z.push_back(f.z1);
            z.push_back(f.z2);
            r.push_back(f.r1);
            r.push_back(f.r2);
        }
        const auto pairing = adjacent_pairing(static_cast<int>(2 * n));
        auto lc = clip_contrastive_simclr(z, pairing, cfg.hp.tau);
        auto ltc = tc_contrast_simclr(r, pairing, cfg.hp.tau_tc);
        m.l_c = lc.value;
        m.l_tc = ltc.value;
        for (std::size_t i = 0; i < n; ++i) {
            bw[i].dz1 = lc.grad[2 * i];
            bw[i].dz2 = lc.grad[2 * i + 1];
            if (l2 > 0) {
                accumulate(bw[i].dr1, ltc.grad[2 * i], l2);
                accumulate(bw[i].dr2, ltc.grad[2 * i + 1], l2);
                bw[i].r1 = bw[i].r2 = true;
            }
        }
    }

    std::vector<DualRep> order_dparts(n);
    double l_pretext = 0;
    if (rank) {
        std::vector<DualRep> r1s, qs, ps;
        for (const auto& f : fw) {
            r1s.push_back(f.r1);
            qs.push_back(f.q);
            ps.push_back(f.p);
        }
        auto unaug = rank_loss_unaug(r1s, ps, cfg.hp.theta);
        auto aug = rank_loss_aug(qs, ps, cfg.hp.theta);
        m.l_rank_unaug = unaug.value;
        m.l_rank_aug = aug.value;
        l_pretext = rank_loss_total(unaug.value, aug.value);
        if (l1 > 0) {
            const double w = 0.5 * l1;
            for (std::size_t i = 0; i < n; ++i) {
                accumulate(bw[i].dr1, unaug.grad_a[i], w);
                accumulate(bw[i].dq, aug.grad_a[i], w);
                accumulate(bw[i].dp, unaug.grad_b[i], w);
                accumulate(bw[i].dp, aug.grad_b[i], w);
                bw[i].r1 = bw[i].q = bw[i].p = true;
            }
        }
    } else {
        std::vector<Vec> dlogits(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto ce = order_prediction_loss(order_logits(params, fw[i].p_raw),
                                            permutation_index(fw[i].perm));
            m.l_order += ce.value / static_cast<double>(n);
            dlogits[i] = (l1 / static_cast<double>(n)) * ce.grad;
        }
        l_pretext = m.l_order;
        if (l1 > 0) {
            for (std::size_t i = 0; i < n; ++i) bw[i].p = true;
        }
        out.grads = zeros_like(params);
        if (l1 > 0) {
            // Order-head gradients are accumulated here; the part gradients join dp below.
            for (std::size_t i = 0; i < n; ++i) {
                DualRep dparts = order_logits_backward(params, fw[i].p_raw, dlogits[i], out.grads);
                order_dparts[i] = unpermute_parts(dparts, fw[i].perm);
                accumulate(bw[i].dp, order_dparts[i], 1.0);
            }
        }
    }
    m.l_total = total_loss(m.l_c, l_pretext, m.l_tc, l1, l2);

    std::vector<ParamSet> per_video(n);
    parallel_for(n, cfg.workers, [&](std::size_t i) {
        ParamSet g = zeros_like(params);
        const Forward& f = fw[i];
        const Backward& b = bw[i];
        encode_clip_backward(params, f.cz1, b.dz1, g);
        if (!moco) encode_clip_backward(params, f.cz2, b.dz2, g);
        if (b.r1) project_dual_backward(params, f.dr1, b.dr1, g);
        if (b.r2) project_dual_backward(params, f.dr2, b.dr2, g);
        if (b.q) project_dual_backward(params, f.dq, b.dq, g);
        if (b.p) {
            // Gradient w.r.t. p_raw: p_raw[j] = p[perm[j]].
            DualRep draw(b.dp.size());
            for (std::size_t j = 0; j < draw.size(); ++j) draw[j] = b.dp[f.perm[j]];
            project_dual_backward(params, f.dp, draw, g);
        }
        per_video[i] = std::move(g);
    });
    if (out.grads.empty()) out.grads = zeros_like(params);
    for (std::size_t i = 0; i < n; ++i) add_grads(out.grads, per_video[i]);
    if (moco) out.key_grads = zeros_like(moco->key_params);
    return out;
}

}  // namespace

StepGradients simclr_gradients(const ParamSet& params, const TrainConfig& cfg,
                               const std::vector<VideoDraw>& draws) {
    return compute_step(params, nullptr, cfg, draws);
}

StepGradients moco_gradients(const TrainState& state, const TrainConfig& cfg,
                             const std::vector<VideoDraw>& draws) {
    return compute_step(state.params, &state, cfg, draws);
}

StepMetrics simclr_step(TrainState& state, const TrainConfig& cfg,
                        const std::vector<const Video*>& batch, double lr) {
    if (batch.size() < 2) throw ConfigError("a training batch needs at least 2 videos");
    auto draws = draw_batch(state.rng, cfg, batch);
    auto g = simclr_gradients(state.params, cfg, draws);
    SgdOptimizer(cfg.sgd_momentum, cfg.weight_decay).step(state.params, state.velocity, g.grads, lr);
    ++state.step;
    return g.metrics;
}

StepMetrics moco_step(TrainState& state, const TrainConfig& cfg,
                      const std::vector<const Video*>& batch, double lr) {
    if (batch.size() < 2) throw ConfigError("a training batch needs at least 2 videos");
    if (state.clip_queue.capacity() < batch.size() || state.dual_queue.capacity() < batch.size()) {
        throw ConfigError("queue capacity is smaller than the batch size");
    }
    if (state.clip_queue.empty() || state.dual_queue.empty()) {
        throw ConfigError("MoCo queues are not initialized");
    }
    auto draws = draw_batch(state.rng, cfg, batch);
    auto g = moco_gradients(state, cfg, draws);
    momentum_update(state.key_params, state.params, cfg.hp.momentum);
    SgdOptimizer(cfg.sgd_momentum, cfg.weight_decay).step(state.params, state.velocity, g.grads, lr);
    state.clip_queue.enqueue_batch(g.keys);
    state.dual_queue.enqueue_batch(g.dual_keys);
    ++state.step;
    return g.metrics;
}

std::string metrics_csv_header(Pretext pretext) {
    std::string h = "step,epoch,L_c,L_rank_unaug,L_rank_aug,L_tc,L_total,lr";
    if (pretext == Pretext::OrderPrediction) h += ",L_order";
    return h;
}

std::string metrics_csv_row(const MetricsRow& row, Pretext pretext) {
    std::ostringstream s;
    s << row.step << "," << row.epoch << "," << format_double(row.m.l_c) << ","
      << format_double(row.m.l_rank_unaug) << "," << format_double(row.m.l_rank_aug) << ","
      << format_double(row.m.l_tc) << "," << format_double(row.m.l_total) << ","
      << format_double(row.lr);
    if (pretext == Pretext::OrderPrediction) s << "," << format_double(row.m.l_order);
    return s.str();
}

namespace {

template <typename T>
void append_flat(std::vector<double>& out, const T& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_params(state.params, dir / "params");
    save_params(state.velocity, dir / "velocity");
    if (!state.key_params.empty()) save_params(state.key_params, dir / "key_params");

    std::vector<double> queue;
    long dim = 0;
    long segs = 0;
    for (const auto& v : state.clip_queue.items()) {
        dim = v.size();
        append_flat(queue, v);
    }
    for (const auto& r : state.dual_queue.items()) {
        segs = static_cast<long>(r.size());
        for (const auto& p : r) {
            dim = p.size();
            append_flat(queue, p);
        }
    }
    write_f64_le(dir / "queues.bin", queue);

    std::ostringstream s;
    s << "format=dualrep-checkpoint-v1\n"
      << "step=" << state.step << "\n"
      << "epoch=" << state.epoch << "\n"
      << "queue_dim=" << dim << "\n"
      << "queue_segments=" << segs << "\n"
      << "clip_queue_capacity=" << state.clip_queue.capacity() << "\n"
      << "clip_queue_size=" << state.clip_queue.size() << "\n"
      << "clip_queue_inserted=" << state.clip_queue.inserted() << "\n"
      << "dual_queue_capacity=" << state.dual_queue.capacity() << "\n"
      << "dual_queue_size=" << state.dual_queue.size() << "\n"
      << "dual_queue_inserted=" << state.dual_queue.inserted() << "\n"
      << "rng=" << state.rng << "\n";
    write_text(dir / "state.txt", s.str());
}

TrainState load_checkpoint(const std::filesystem::path& dir) {
    std::map<std::string, std::string> kv;
    std::istringstream in(read_text(dir / "state.txt"));
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw ManifestError("checkpoint state is missing '" + k + "'");
        return it->second;
    };
    if (need("format") != "dualrep-checkpoint-v1") throw ManifestError("unknown checkpoint format");

    TrainState s;
    s.params = load_params(dir / "params");
    s.velocity = load_params(dir / "velocity");
    check_same_manifest(s.params, s.velocity);
    if (std::filesystem::exists(dir / "key_params.manifest")) {
        s.key_params = load_params(dir / "key_params");
        check_same_manifest(s.params, s.key_params);
    }
    s.step = std::stoll(need("step"));
    s.epoch = std::stoll(need("epoch"));
    std::istringstream rs(need("rng"));
    rs >> s.rng;
    if (!rs) throw ManifestError("corrupt rng state in checkpoint");

    const long dim = std::stol(need("queue_dim"));
    const long segs = std::stol(need("queue_segments"));
    const std::size_t clip_n = std::stoull(need("clip_queue_size"));
    const std::size_t dual_n = std::stoull(need("dual_queue_size"));
    auto flat = read_f64_le(dir / "queues.bin");
    if (flat.size() != clip_n * dim + dual_n * segs * dim) throw ManifestError("queues.bin size mismatch");

    std::size_t at = 0;
    std::vector<Vec> clip_items;
    for (std::size_t i = 0; i < clip_n; ++i) {
        clip_items.push_back(Eigen::Map<const Vec>(flat.data() + at, dim));
        at += dim;
    }
    std::vector<DualRep> dual_items;
    for (std::size_t i = 0; i < dual_n; ++i) {
        DualRep r;
        for (long k = 0; k < segs; ++k) {
            r.push_back(Eigen::Map<const Vec>(flat.data() + at, dim));
            at += dim;
        }
        dual_items.push_back(std::move(r));
    }
    s.clip_queue = NegativeQueue<Vec>(std::stoull(need("clip_queue_capacity")), clip_items,
                                      std::stoull(need("clip_queue_inserted")));
    s.dual_queue = NegativeQueue<DualRep>(std::stoull(need("dual_queue_capacity")), dual_items,
                                          std::stoull(need("dual_queue_inserted")));
    return s;
}

namespace {

void write_diagnostic(const std::filesystem::path& dir, const TrainState& state,
                      const MetricsRow& row) {
    std::ostringstream s;
    s << "non-finite value during pretraining\n"
      << "step=" << row.step << "\nepoch=" << row.epoch << "\nlr=" << format_double(row.lr) << "\n"
      << "L_c=" << format_double(row.m.l_c) << "\nL_rank_unaug=" << format_double(row.m.l_rank_unaug)
      << "\nL_rank_aug=" << format_double(row.m.l_rank_aug) << "\nL_tc=" << format_double(row.m.l_tc)
      << "\nL_order=" << format_double(row.m.l_order) << "\nL_total=" << format_double(row.m.l_total)
      << "\n";
    for (const auto& [name, m] : state.params) {
        s << "param " << name << " finite=" << (all_finite(m) ? 1 : 0)
          << " max_abs=" << format_double(m.size() ? m.cwiseAbs().maxCoeff() : 0.0) << "\n";
    }
    write_text(dir / "diagnostic.txt", s.str());
}

}  // namespace

PretrainResult pretrain(const TrainConfig& cfg, const Dataset& data, const std::vector<int>& train,
                        const std::optional<std::filesystem::path>& out_dir) {
    cfg.validate();
    if (train.size() < 2) throw ConfigError("pretraining needs at least 2 training videos");
    PretrainResult res;
    res.state = init_train_state(cfg, data.spec.frame_dim);
    TrainState& st = res.state;

    std::ofstream csv;
    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        csv.open(*out_dir / "metrics.csv", std::ios::binary | std::ios::trunc);
        if (!csv) throw IoError("cannot write metrics.csv");
        csv << metrics_csv_header(cfg.pretext) << "\n";
    }

    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at_epoch(epoch);
        std::vector<int> order = train;
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            std::swap(order[i], order[uniform_int(st.rng, 0, static_cast<int>(i))]);
        }
        for (std::size_t at = 0; at + 2 <= order.size(); at += bs) {
            std::vector<const Video*> batch;
            for (std::size_t k = at; k < std::min(order.size(), at + bs); ++k) {
                batch.push_back(&data.videos.at(order[k]));
            }
            MetricsRow row;
            row.step = st.step;
            row.epoch = epoch;
            row.lr = lr;
            try {
                row.m = cfg.framework == Framework::SimCLR ? simclr_step(st, cfg, batch, lr)
                                                           : moco_step(st, cfg, batch, lr);
            } catch (const NormalizationError& e) {
                row.m.l_total = std::numeric_limits<double>::quiet_NaN();
                if (out_dir) write_diagnostic(*out_dir, st, row);
                throw NumericError(std::string(e.what()) + " at step " + std::to_string(row.step));
            }
            res.rows.push_back(row);
            if (csv.is_open()) csv << metrics_csv_row(row, cfg.pretext) << "\n" << std::flush;
            if (!std::isfinite(row.m.l_total) || !params_finite(st.params)) {
                if (out_dir) write_diagnostic(*out_dir, st, row);
                throw NumericError("non-finite loss or parameters at step " + std::to_string(row.step));
            }
        }
        st.epoch = epoch + 1;
        if (out_dir && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            std::ostringstream name;
            name << "epoch_" << std::setw(4) << std::setfill('0') << (epoch + 1);
            save_checkpoint(st, *out_dir / "checkpoints" / name.str());
        }
    }
    if (out_dir) save_checkpoint(st, *out_dir / "checkpoints" / "final");
    return res;
}

}  // namespace dualrep
