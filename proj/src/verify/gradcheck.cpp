#include "dualrep/verify/gradcheck.hpp"

#include "dualrep/losses.hpp"
#include "dualrep/synthetic_video.hpp"
#include "dualrep/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>

namespace dualrep::gradcheck {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

double roundoff_floor(double value, double h) {
    return std::max(kFloor, kRoundoffMultiple * std::numeric_limits<double>::epsilon() * std::max(std::abs(value), 1.0) / h);
}

namespace {

// Central differences at h and h/2 combined to cancel the h^2 term.
template <class Shifted>
double richardson(Shifted&& f, double h) {
    const double wide = (f(h) - f(-h)) / (2 * h);
    const double narrow = (f(h / 2) - f(-h / 2)) / h;
    return (4 * narrow - wide) / 3;
}

}  // namespace

double check_params(const std::function<double(const ParamSet&)>& f, const ParamSet& at,
                    const ParamSet& analytic, double h) {
    double worst = 0;
    const double floor = roundoff_floor(f(at), h);
    ParamSet p = at;
    for (auto& [name, m] : p) {
        const Mat& g = analytic.at(name);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            double& x = m.data()[i];
            const double numeric = richardson([&](double d) {
                const double orig = x;
                x = orig + d;
                const double v = f(p);
                x = orig;
                return v;
            }, h);
            const double e = relative_error(g.data()[i], numeric, floor);
            worst = std::max(worst, std::isfinite(e) ? e : INFINITY);
        }
    }
    return worst;
}

double check_vector(const std::function<double(const Vec&)>& f, const Vec& at, const Vec& analytic,
                    double h) {
    double worst = 0;
    const double floor = roundoff_floor(f(at), h);
    Vec v = at;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double numeric = richardson([&](double d) {
            const double orig = v[i];
            v[i] = orig + d;
            const double r = f(v);
            v[i] = orig;
            return r;
        }, h);
        const double e = relative_error(analytic[i], numeric, floor);
        worst = std::max(worst, std::isfinite(e) ? e : INFINITY);
    }
    return worst;
}

namespace {

constexpr int kSegments = 2;
constexpr int kLength = 4;

struct Problem {
    int n = 0;
    Hyperparams hp;
    EncoderDims dims;
    ParamSet params;
    ParamSet key;
    std::vector<Clip> c1, c2, c_hat, s_hat;
    std::vector<Permutation> perm;
    std::vector<Vec> queue;
    std::vector<DualRep> dual_queue;
};

Problem make_problem(std::uint64_t seed) {
    Rng rng(seed * 7919 + 17);
    Problem pr;
    pr.n = 3;
    pr.dims.frame_dim = 3;
    pr.dims.hidden_dim = 4;
    pr.dims.feature_dim = 3;
    pr.dims.projection_dim = 3;
    pr.dims.dual_hidden_dim = 4;
    pr.dims.segments = kSegments;
    pr.dims.order_head = true;
    pr.hp.segments = kSegments;
    pr.params = init_params(pr.dims, seed);
    pr.key = init_params(pr.dims, seed + 1000);
    AugmentConfig aug;
    aug.jitter_scale = 0.3;
    aug.channel_scale_min = 0.8;
    aug.channel_scale_max = 1.2;
    for (int i = 0; i < pr.n; ++i) {
        Video v;
        v.id = i;
        v.frames.resize(2 * kLength, pr.dims.frame_dim);
        for (Eigen::Index t = 0; t < v.frames.rows(); ++t) {
            v.frames.row(t) = gaussian_vector(pr.dims.frame_dim, rng).transpose();
        }
        pr.c1.push_back(sample_clip(v, kLength, 1, rng));
        pr.c2.push_back(augment(sample_clip(v, kLength, 1, rng), aug, rng));
        auto params = draw_augment_params(pr.dims.frame_dim, aug, rng);
        pr.c_hat.push_back(apply_augment(pr.c1.back(), params));
        auto perm = random_permutation(kSegments, rng);  // identity allowed for order prediction
        pr.perm.push_back(perm);
        pr.s_hat.push_back(permute_subclips(pr.c_hat.back(), kSegments, perm));
    }
    for (int i = 0; i < 5; ++i) pr.queue.push_back(random_unit_vector(pr.dims.projection_dim, rng));
    for (int i = 0; i < 5; ++i) {
        DualRep r;
        for (int k = 0; k < kSegments; ++k) r.push_back(random_unit_vector(pr.dims.projection_dim, rng));
        pr.dual_queue.push_back(r);
    }
    return pr;
}

using ParamLoss = std::function<double(const ParamSet&, ParamSet*)>;

struct DualEval {
    std::vector<DualCache> cache;
    std::vector<DualRep> reps;
};

DualEval duals(const ParamSet& p, const std::vector<Clip>& clips, bool canonical,
               const std::vector<Permutation>* perms) {
    DualEval e;
    e.cache.resize(clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) {
        DualRep r = project_dual(p, clips[i].frames, kSegments, &e.cache[i]);
        e.reps.push_back(canonical ? unpermute_parts(r, (*perms)[i]) : r);
    }
    return e;
}

/// Pulls canonical-order gradients back to the encoder's output order.
DualRep to_raw_order(const DualRep& g, const Permutation& perm) {
    DualRep out(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) out[j] = g[perm[j]];
    return out;
}

std::map<std::string, ParamLoss> composed_losses(const Problem& pr) {
    std::map<std::string, ParamLoss> out;
    const int n = pr.n;
    out["loss.clip_simclr"] = [&pr, n](const ParamSet& p, ParamSet* g) {
        std::vector<ClipCache> cache(2 * n);
        std::vector<Vec> z;
        for (int i = 0; i < n; ++i) {
            z.push_back(encode_clip(p, pr.c1[i].frames, &cache[2 * i]));
            z.push_back(encode_clip(p, pr.c2[i].frames, &cache[2 * i + 1]));
        }
        auto l = clip_contrastive_simclr(z, adjacent_pairing(2 * n), pr.hp.tau);
        if (g) {
            for (int j = 0; j < 2 * n; ++j) encode_clip_backward(p, cache[j], l.grad[j], *g);
        }
        return l.value;
    };
    out["loss.clip_moco"] = [&pr, n](const ParamSet& p, ParamSet* g) {
        std::vector<ClipCache> cache(n);
        std::vector<Vec> z, k;
        for (int i = 0; i < n; ++i) {
            z.push_back(encode_clip(p, pr.c1[i].frames, &cache[i]));
            k.push_back(encode_clip(pr.key, pr.c2[i].frames));
        }
        auto l = clip_contrastive_moco(z, k, pr.queue, pr.hp.tau);
        if (g) {
            for (int i = 0; i < n; ++i) encode_clip_backward(p, cache[i], l.grad_z[i], *g);
        }
        return l.value;
    };
    auto rank_case = [&pr](bool augmented) {
        return [&pr, augmented](const ParamSet& p, ParamSet* g) {
            DualEval a = duals(p, augmented ? pr.c_hat : pr.c1, false, nullptr);
            DualEval b = duals(p, pr.s_hat, true, &pr.perm);
            auto l = augmented ? rank_loss_aug(a.reps, b.reps, pr.hp.theta)
                               : rank_loss_unaug(a.reps, b.reps, pr.hp.theta);
            if (g) {
                for (int i = 0; i < pr.n; ++i) {
                    project_dual_backward(p, a.cache[i], l.grad_a[i], *g);
                    project_dual_backward(p, b.cache[i], to_raw_order(l.grad_b[i], pr.perm[i]), *g);
                }
            }
            return l.value;
        };
    };
    out["loss.rank_unaug"] = rank_case(false);
    out["loss.rank_aug"] = rank_case(true);
    out["loss.tc_simclr"] = [&pr, n](const ParamSet& p, ParamSet* g) {
        std::vector<Clip> clips;
        for (int i = 0; i < n; ++i) {
            clips.push_back(pr.c1[i]);
            clips.push_back(pr.c2[i]);
        }
        DualEval e = duals(p, clips, false, nullptr);
        auto l = tc_contrast_simclr(e.reps, adjacent_pairing(2 * n), pr.hp.tau_tc);
        if (g) {
            for (int j = 0; j < 2 * n; ++j) project_dual_backward(p, e.cache[j], l.grad[j], *g);
        }
        return l.value;
    };
    out["loss.tc_moco"] = [&pr, n](const ParamSet& p, ParamSet* g) {
        DualEval e = duals(p, pr.c1, false, nullptr);
        std::vector<DualRep> d;
        for (int i = 0; i < n; ++i) d.push_back(project_dual(pr.key, pr.c2[i].frames, kSegments));
        auto l = tc_contrast_moco(e.reps, d, pr.dual_queue, pr.hp.tau_tc);
        if (g) {
            for (int i = 0; i < n; ++i) project_dual_backward(p, e.cache[i], l.grad_r[i], *g);
        }
        return l.value;
    };
    out["loss.order_prediction"] = [&pr, n](const ParamSet& p, ParamSet* g) {
        DualEval e = duals(p, pr.s_hat, false, nullptr);
        double total = 0;
        for (int i = 0; i < n; ++i) {
            auto ce = order_prediction_loss(order_logits(p, e.reps[i]), permutation_index(pr.perm[i]));
            total += ce.value / n;
            if (g) {
                DualRep dparts = order_logits_backward(p, e.reps[i], ce.grad / n, *g);
                project_dual_backward(p, e.cache[i], dparts, *g);
            }
        }
        return total;
    };
    return out;
}

std::map<std::string, ParamLoss> encoder_functions(const Problem& pr, std::uint64_t seed) {
    Rng rng(seed + 99);
    Vec wh = gaussian_vector(pr.dims.feature_dim, rng);
    Vec wz = gaussian_vector(pr.dims.projection_dim, rng);
    DualRep wq{gaussian_vector(pr.dims.projection_dim, rng), gaussian_vector(pr.dims.projection_dim, rng)};
    std::map<std::string, ParamLoss> out;
    out["encoder.backbone"] = [&pr, wh](const ParamSet& p, ParamSet* g) {
        BackboneCache c;
        Vec h = encode_backbone(p, pr.c1[0].frames, &c);
        if (g) backbone_backward(p, c, wh, *g);
        return wh.dot(h);
    };
    out["encoder.project_clip"] = [&pr, wz](const ParamSet& p, ParamSet* g) {
        ClipCache c;
        Vec z = encode_clip(p, pr.c1[0].frames, &c);
        if (g) encode_clip_backward(p, c, wz, *g);
        return wz.dot(z);
    };
    for (int part = 0; part < kSegments; ++part) {
        out["encoder.project_dual.part" + std::to_string(part)] = [&pr, wq, part](const ParamSet& p, ParamSet* g) {
            DualCache c;
            DualRep r = project_dual(p, pr.c1[0].frames, kSegments, &c);
            if (g) {
                DualRep d = zeros_like(r);
                d[part] = wq[part];
                project_dual_backward(p, c, d, *g);
            }
            return wq[part].dot(r[part]);
        };
    }
    return out;
}

TrainConfig step_config(const Problem& pr, Framework fw, Pretext pretext) {
    TrainConfig cfg;
    cfg.framework = fw;
    cfg.pretext = pretext;
    cfg.hp = pr.hp;
    cfg.hp.queue_size = static_cast<int>(pr.queue.size());
    cfg.dims = pr.dims;
    cfg.clip_length = kLength;
    cfg.stride = 1;
    cfg.batch_size = pr.n;
    return cfg;
}

std::vector<VideoDraw> problem_draws(const Problem& pr) {
    std::vector<VideoDraw> draws(pr.n);
    for (int i = 0; i < pr.n; ++i) {
        draws[i].c1 = pr.c1[i];
        draws[i].c2 = pr.c2[i];
        draws[i].tuple.c = pr.c1[i];
        draws[i].tuple.c_hat = pr.c_hat[i];
        draws[i].tuple.s_hat = pr.s_hat[i];
        draws[i].tuple.perm = pr.perm[i];
    }
    return draws;
}

std::map<std::string, ParamLoss> step_losses(const Problem& pr) {
    std::map<std::string, ParamLoss> out;
    auto draws = std::make_shared<std::vector<VideoDraw>>(problem_draws(pr));
    auto simclr = [&pr, draws](Pretext pretext) {
        return [&pr, draws, pretext](const ParamSet& p, ParamSet* g) {
            auto r = simclr_gradients(p, step_config(pr, Framework::SimCLR, pretext), *draws);
            if (g) axpy(*g, 1.0, r.grads);
            return r.metrics.l_total;
        };
    };
    out["step.simclr_total"] = simclr(Pretext::ShuffleRank);
    out["step.simclr_order_total"] = simclr(Pretext::OrderPrediction);
    out["step.moco_total"] = [&pr, draws](const ParamSet& p, ParamSet* g) {
        TrainState st;
        st.params = p;
        st.key_params = pr.key;
        st.clip_queue = NegativeQueue<Vec>(pr.queue.size(), pr.queue, pr.queue.size());
        st.dual_queue = NegativeQueue<DualRep>(pr.dual_queue.size(), pr.dual_queue, pr.dual_queue.size());
        auto r = moco_gradients(st, step_config(pr, Framework::MoCo, Pretext::ShuffleRank), *draws);
        if (g) axpy(*g, 1.0, r.grads);
        return r.metrics.l_total;
    };
    return out;
}

/// Feature-level checks: inputs are parametrized as normalize(v) so every probe stays unit-norm.
struct Unit {
    std::vector<Vec> z;
    std::vector<double> norms;
};

Unit unit_from_flat(const Vec& v, int count, int dim) {
    Unit u;
    for (int i = 0; i < count; ++i) {
        Vec raw = v.segment(i * dim, dim);
        u.norms.push_back(raw.norm());
        u.z.push_back(raw / raw.norm());
    }
    return u;
}

Vec flat_grad(const Unit& u, const std::vector<Vec>& dz) {
    const Eigen::Index dim = u.z.front().size();
    Vec out(static_cast<Eigen::Index>(u.z.size()) * dim);
    for (std::size_t i = 0; i < u.z.size(); ++i) {
        out.segment(static_cast<Eigen::Index>(i) * dim, dim) = normalize_backward(u.z[i], u.norms[i], dz[i]);
    }
    return out;
}

std::vector<DualRep> group(const std::vector<Vec>& flat, int segs) {
    std::vector<DualRep> out;
    for (std::size_t i = 0; i < flat.size(); i += segs) out.emplace_back(flat.begin() + i, flat.begin() + i + segs);
    return out;
}

std::vector<Vec> ungroup(const std::vector<DualRep>& reps) {
    std::vector<Vec> out;
    for (const auto& r : reps) out.insert(out.end(), r.begin(), r.end());
    return out;
}

double feature_suite(const std::string& name, std::uint64_t seed) {
    Rng rng(seed * 31 + 5);
    const int dim = 3, segs = 2, n = 3;
    const Hyperparams hp;
    std::function<double(const Vec&, Vec*)> f;
    int count = 0;
    std::vector<Vec> fixed_keys = [&] {
        std::vector<Vec> k;
        for (int i = 0; i < n * segs; ++i) k.push_back(random_unit_vector(dim, rng));
        return k;
    }();
    std::vector<Vec> queue;
    for (int i = 0; i < 4 * segs; ++i) queue.push_back(random_unit_vector(dim, rng));
    if (name == "features.clip_simclr") {
        count = 2 * n;
        f = [&](const Vec& v, Vec* g) {
            Unit u = unit_from_flat(v, count, dim);
            auto l = clip_contrastive_simclr(u.z, adjacent_pairing(count), hp.tau);
            if (g) *g = flat_grad(u, l.grad);
            return l.value;
        };
    } else if (name == "features.clip_moco") {
        count = n;
        f = [&](const Vec& v, Vec* g) {
            Unit u = unit_from_flat(v, count, dim);
            std::vector<Vec> k(fixed_keys.begin(), fixed_keys.begin() + n);
            auto l = clip_contrastive_moco(u.z, k, queue, hp.tau);
            if (g) *g = flat_grad(u, l.grad_z);
            return l.value;
        };
    } else if (name == "features.rank") {
        count = 2 * n * segs;
        f = [&](const Vec& v, Vec* g) {
            Unit u = unit_from_flat(v, count, dim);
            auto reps = group(u.z, segs);
            std::vector<DualRep> a(reps.begin(), reps.begin() + n), b(reps.begin() + n, reps.end());
            auto l = rank_loss(a, b, hp.theta);
            if (g) {
                auto ga = ungroup(l.grad_a), gb = ungroup(l.grad_b);
                ga.insert(ga.end(), gb.begin(), gb.end());
                *g = flat_grad(u, ga);
            }
            return l.value;
        };
    } else if (name == "features.tc_simclr") {
        count = 2 * n * segs;
        f = [&](const Vec& v, Vec* g) {
            Unit u = unit_from_flat(v, count, dim);
            auto l = tc_contrast_simclr(group(u.z, segs), adjacent_pairing(2 * n), hp.tau_tc);
            if (g) *g = flat_grad(u, ungroup(l.grad));
            return l.value;
        };
    } else if (name == "features.tc_moco") {
        count = n * segs;
        f = [&](const Vec& v, Vec* g) {
            Unit u = unit_from_flat(v, count, dim);
            auto l = tc_contrast_moco(group(u.z, segs), group(fixed_keys, segs), group(queue, segs), hp.tau_tc);
            if (g) *g = flat_grad(u, ungroup(l.grad_r));
            return l.value;
        };
    } else if (name == "features.order_logits") {
        Vec logits = gaussian_vector(6, rng);
        Vec analytic = order_prediction_loss(logits, 4).grad;
        return check_vector([](const Vec& x) { return order_prediction_loss(x, 4).value; }, logits, analytic);
    } else {
        throw std::invalid_argument("unknown feature suite " + name);
    }
    Vec at = gaussian_vector(count * dim, rng);
    Vec analytic;
    f(at, &analytic);
    return check_vector([&](const Vec& x) { return f(x, nullptr); }, at, analytic);
}

const std::vector<std::string> kFeatureSuites{"features.clip_simclr", "features.clip_moco",
                                              "features.rank",        "features.tc_simclr",
                                              "features.tc_moco",     "features.order_logits"};

}  // namespace

std::vector<std::string> suite_names() {
    Problem pr = make_problem(0);
    std::vector<std::string> names;
    for (const auto& [k, v] : encoder_functions(pr, 0)) names.push_back(k);
    for (const auto& [k, v] : composed_losses(pr)) names.push_back(k);
    for (const auto& [k, v] : step_losses(pr)) names.push_back(k);
    names.insert(names.end(), kFeatureSuites.begin(), kFeatureSuites.end());
    return names;
}

std::vector<CaseResult> run_suite(const std::vector<std::uint64_t>& seeds) {
    std::vector<CaseResult> out;
    for (std::uint64_t seed : seeds) {
        Problem pr = make_problem(seed);
        auto run = [&](const std::map<std::string, ParamLoss>& fns) {
            for (const auto& [name, fn] : fns) {
                ParamSet g = zeros_like(pr.params);
                fn(pr.params, &g);
                double e = check_params([&](const ParamSet& p) { return fn(p, nullptr); }, pr.params, g);
                out.push_back({name, seed, e, e < kTolerance});
            }
        };
        run(encoder_functions(pr, seed));
        run(composed_losses(pr));
        run(step_losses(pr));
        for (const auto& name : kFeatureSuites) {
            double e = feature_suite(name, seed);
            out.push_back({name, seed, e, e < kTolerance});
        }
    }
    return out;
}

StopGradientReport moco_stop_gradient_check(std::uint64_t seed) {
    Problem pr = make_problem(seed);
    StopGradientReport rep;
    TrainConfig cfg = step_config(pr, Framework::MoCo, Pretext::ShuffleRank);
    auto draws = problem_draws(pr);
    auto state_with = [&](const ParamSet& key, const std::vector<Vec>& queue) {
        TrainState st;
        st.params = pr.params;
        st.key_params = key;
        st.clip_queue = NegativeQueue<Vec>(queue.size(), queue, queue.size());
        st.dual_queue = NegativeQueue<DualRep>(pr.dual_queue.size(), pr.dual_queue, pr.dual_queue.size());
        return st;
    };
    auto loss_at = [&](const ParamSet& key, const std::vector<Vec>& queue) {
        return moco_gradients(state_with(key, queue), cfg, draws).metrics.l_total;
    };
    auto base = moco_gradients(state_with(pr.key, pr.queue), cfg, draws);
    for (const auto& [name, m] : base.key_grads) {
        if (m.size()) rep.key_param_grad_max = std::max(rep.key_param_grad_max, m.cwiseAbs().maxCoeff());
    }
    ParamSet key = pr.key;
    for (auto& [name, m] : key) {
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            const double orig = m.data()[i];
            m.data()[i] = orig + kStep;
            const double fp = loss_at(key, pr.queue);
            m.data()[i] = orig - kStep;
            const double fm = loss_at(key, pr.queue);
            m.data()[i] = orig;
            rep.key_param_fd_max = std::max(rep.key_param_fd_max, std::abs(fp - fm) / (2 * kStep));
        }
    }
    // Queue entries: loss-level gradients are reported by the loss itself.
    std::vector<Vec> z, k;
    for (int i = 0; i < pr.n; ++i) {
        z.push_back(encode_clip(pr.params, pr.c1[i].frames));
        k.push_back(encode_clip(pr.key, pr.c2[i].frames));
    }
    auto lc = clip_contrastive_moco(z, k, pr.queue, pr.hp.tau);
    for (const auto& g : lc.grad_queue) rep.queue_grad_max = std::max(rep.queue_grad_max, g.cwiseAbs().maxCoeff());
    for (const auto& g : lc.grad_keys) rep.key_param_grad_max = std::max(rep.key_param_grad_max, g.cwiseAbs().maxCoeff());
    for (std::size_t j = 0; j < pr.queue.size(); ++j) {
        for (Eigen::Index d = 0; d < pr.queue[j].size(); ++d) {
            auto qp = pr.queue, qm = pr.queue;
            qp[j][d] += kStep;
            qm[j][d] -= kStep;
            qp[j].normalize();
            qm[j].normalize();
            const double fp = clip_contrastive_moco(z, k, qp, pr.hp.tau).value;
            const double fm = clip_contrastive_moco(z, k, qm, pr.hp.tau).value;
            rep.queue_fd_max = std::max(rep.queue_fd_max, std::abs(fp - fm) / (2 * kStep));
        }
    }
    return rep;
}

}  // namespace dualrep::gradcheck
