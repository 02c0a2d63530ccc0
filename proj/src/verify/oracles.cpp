#include "dualrep/verify/oracles.hpp"

#include "dualrep/analytics.hpp"
#include "dualrep/losses.hpp"
#include "dualrep/synthetic_video.hpp"

#include <algorithm>
#include <cmath>

namespace dualrep::oracle {

using LD = long double;

namespace {

LD dot(const Vec& a, const Vec& b) {
    LD s = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += static_cast<LD>(a[i]) * b[i];
    return s;
}

LD tc(const DualRep& a, const DualRep& b) {
    LD s = 0;
    for (const auto& x : a) {
        for (const auto& y : b) s += dot(x, y);
    }
    return s / static_cast<LD>(a.size() * b.size());
}

}  // namespace

double clip_simclr(const std::vector<Vec>& z, const std::vector<int>& pairing, double tau) {
    const std::size_t m = z.size();
    LD total = 0;
    for (std::size_t i = 0; i < m; ++i) {
        LD num = std::exp(dot(z[i], z[pairing[i]]) / tau);
        LD den = 0;
        for (std::size_t k = 0; k < m; ++k) {
            if (k != i) den += std::exp(dot(z[i], z[k]) / tau);
        }
        total += -std::log(num / den);
    }
    return static_cast<double>(total / m);
}

double clip_moco(const std::vector<Vec>& z, const std::vector<Vec>& k_plus,
                 const std::vector<Vec>& queue, double tau) {
    LD total = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        LD pos = std::exp(dot(z[i], k_plus[i]) / tau);
        LD neg = 0;
        for (const auto& k : queue) neg += std::exp(dot(z[i], k) / tau);
        total += -std::log(pos / (pos + neg));
    }
    return static_cast<double>(total / z.size());
}

double rank_term(double sim_neg, double sim_pos, double theta) {
    LD t = (static_cast<LD>(sim_neg) - sim_pos) / theta;
    return static_cast<double>(std::log(1.0L + std::exp(t)));
}

double rank_loss(const std::vector<DualRep>& a, const std::vector<DualRep>& b, double theta) {
    struct Part {
        int clip;
        int seg;
        const Vec* v;
    };
    LD total = 0;
    for (std::size_t n = 0; n < a.size(); ++n) {
        std::vector<Part> parts;
        for (int s = 0; s < static_cast<int>(a[n].size()); ++s) parts.push_back({0, s, &a[n][s]});
        for (int s = 0; s < static_cast<int>(b[n].size()); ++s) parts.push_back({1, s, &b[n][s]});
        for (const auto& x : parts) {
            for (const auto& y : parts) {
                if (y.clip == x.clip || y.seg != x.seg) continue;
                for (const auto& z : parts) {
                    if (z.seg == x.seg) continue;
                    LD t = (dot(*x.v, *z.v) - dot(*x.v, *y.v)) / theta;
                    total += std::log(1.0L + std::exp(t));
                }
            }
        }
    }
    return static_cast<double>(total);
}

double rank_loss_s2_listing(const DualRep& q, const DualRep& p, double theta) {
    const Vec &q1 = q[0], &q2 = q[1], &p1 = p[0], &p2 = p[1];
    auto term = [&](const Vec& x, const Vec& y, const Vec& z) {
        return std::log(1.0L + std::exp((dot(x, z) - dot(x, y)) / theta));
    };
    LD s = 0;
    s += term(q1, p1, q2) + term(q1, p1, p2);  // q1+ = {p1}, q1- = {q2, p2}
    s += term(q2, p2, q1) + term(q2, p2, p1);  // q2+ = {p2}, q2- = {q1, p1}
    s += term(p1, q1, q2) + term(p1, q1, p2);  // p1+ = {q1}, p1- = {q2, p2}
    s += term(p2, q2, q1) + term(p2, q2, p1);  // p2+ = {q2}, p2- = {q1, p1}
    return static_cast<double>(s);
}

double tc_sim(const DualRep& a, const DualRep& b) { return static_cast<double>(tc(a, b)); }

double tc_simclr(const std::vector<DualRep>& r, const std::vector<int>& pairing, double tau_tc) {
    const std::size_t m = r.size();
    LD total = 0;
    for (std::size_t i = 0; i < m; ++i) {
        LD num = std::exp(tc(r[i], r[pairing[i]]) / tau_tc);
        LD den = 0;
        for (std::size_t k = 0; k < m; ++k) {
            if (k != i) den += std::exp(tc(r[i], r[k]) / tau_tc);
        }
        total += -std::log(num / den);
    }
    return static_cast<double>(total / m);
}

double tc_moco(const std::vector<DualRep>& r, const std::vector<DualRep>& d_plus,
               const std::vector<DualRep>& queue, double tau_tc) {
    LD total = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        LD pos = std::exp(tc(r[i], d_plus[i]) / tau_tc);
        LD neg = 0;
        for (const auto& d : queue) neg += std::exp(tc(r[i], d) / tau_tc);
        total += -std::log(pos / (pos + neg));
    }
    return static_cast<double>(total / r.size());
}

double order_cross_entropy(const Vec& logits, int true_index) {
    LD den = 0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) den += std::exp(static_cast<LD>(logits[i]));
    return static_cast<double>(-std::log(std::exp(static_cast<LD>(logits[true_index])) / den));
}

double decomposition_rhs(const std::vector<Vec>& z, const std::vector<int>& pairing, double tau) {
    const std::size_t m = z.size();
    LD first = 0, second = 0;
    for (std::size_t i = 0; i < m; ++i) {
        LD s_pos = dot(z[i], z[pairing[i]]);
        first += s_pos / tau;
        LD inner = std::exp(s_pos / tau);
        for (std::size_t k = 0; k < m; ++k) {
            if (k == i || static_cast<int>(k) == pairing[i]) continue;
            inner += std::exp(dot(z[i], z[k]) / tau);
        }
        second += std::log(inner);
    }
    return static_cast<double>(-first / m + second / m);
}

Variances variances(const std::vector<std::vector<Vec>>& groups) {
    const std::size_t n = groups.size();
    std::vector<std::vector<LD>> mu(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto dim = groups[k][0].size();
        mu[k].assign(dim, 0);
        for (const auto& z : groups[k]) {
            for (Eigen::Index d = 0; d < dim; ++d) mu[k][d] += z[d];
        }
        for (auto& x : mu[k]) x /= groups[k].size();
    }
    LD intra = 0;
    for (std::size_t k = 0; k < n; ++k) {
        LD s = 0;
        for (const auto& z : groups[k]) {
            for (Eigen::Index d = 0; d < z.size(); ++d) s += (z[d] - mu[k][d]) * (z[d] - mu[k][d]);
        }
        intra += s / groups[k].size();
    }
    LD inter = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            for (std::size_t d = 0; d < mu[i].size(); ++d) {
                inter += (mu[i][d] - mu[j][d]) * (mu[i][d] - mu[j][d]);
            }
        }
    }
    // Ordered pairs count every unordered pair twice.
    Variances v;
    v.sigma_intra = static_cast<double>(intra / n);
    v.sigma_inter = static_cast<double>(inter / 2 / (static_cast<LD>(n) * (n - 1)));
    return v;
}

void contrast_only_step(TrainState& state, const TrainConfig& cfg,
                        const std::vector<const Video*>& batch, double lr) {
    auto draws = draw_batch(state.rng, cfg, batch);
    const std::size_t n = draws.size();
    std::vector<ClipCache> c1(n), c2(n);
    std::vector<Vec> z;
    for (std::size_t i = 0; i < n; ++i) {
        z.push_back(encode_clip(state.params, draws[i].c1.frames, &c1[i]));
        z.push_back(encode_clip(state.params, draws[i].c2.frames, &c2[i]));
    }
    auto lc = clip_contrastive_simclr(z, adjacent_pairing(static_cast<int>(2 * n)), cfg.hp.tau);
    ParamSet grads = zeros_like(state.params);
    for (std::size_t i = 0; i < n; ++i) {
        ParamSet g = zeros_like(state.params);
        encode_clip_backward(state.params, c1[i], lc.grad[2 * i], g);
        encode_clip_backward(state.params, c2[i], lc.grad[2 * i + 1], g);
        for (auto& [name, m] : grads) m += g.at(name);
    }
    SgdOptimizer(cfg.sgd_momentum, cfg.weight_decay).step(state.params, state.velocity, grads, lr);
    ++state.step;
}

namespace {

std::vector<Vec> unit_vectors(int n, int dim, Rng& rng) {
    std::vector<Vec> v;
    for (int i = 0; i < n; ++i) v.push_back(random_unit_vector(dim, rng));
    return v;
}

std::vector<DualRep> dual_reps(int n, int segs, int dim, Rng& rng) {
    std::vector<DualRep> v;
    for (int i = 0; i < n; ++i) v.push_back(unit_vectors(segs, dim, rng));
    return v;
}

std::vector<int> random_pairing(int m, Rng& rng) {
    auto order = random_permutation(m, rng);
    std::vector<int> p(m);
    for (int i = 0; i < m; i += 2) {
        p[order[i]] = order[i + 1];
        p[order[i + 1]] = order[i];
    }
    return p;
}

struct Tracker {
    SuiteResult r;
    Tracker(std::string name, double tol) {
        r.name = std::move(name);
        r.tolerance = tol;
    }
    void add(double prod, double ref) {
        ++r.instances;
        double e = std::abs(prod - ref);
        if (!(e == e)) e = INFINITY;
        r.max_error = std::max(r.max_error, e);
    }
    SuiteResult done() {
        r.pass = r.max_error < r.tolerance;
        return r;
    }
};

}  // namespace

std::vector<SuiteResult> run_oracle_suite(int instances, std::uint64_t seed) {
    Rng rng(seed);
    const double tol = 1e-10;
    Tracker simclr("clip_contrastive_simclr", tol), moco("clip_contrastive_moco", tol),
        term("rank_term", tol), unaug("rank_loss_unaug", tol), aug("rank_loss_aug", tol),
        listing("rank_loss_s2_listing", tol), tcs("tc_sim", tol), tcsim("tc_contrast_simclr", tol),
        tcmoco("tc_contrast_moco", tol), order("order_prediction_loss", tol),
        total("total_loss", tol), var("compute_variances", 1e-12);
    for (int it = 0; it < instances; ++it) {
        const int dim = uniform_int(rng, 2, 6);
        {
            const int m = 2 * uniform_int(rng, 1, 4);
            auto z = unit_vectors(m, dim, rng);
            auto pairing = random_pairing(m, rng);
            const double tau = it % 2 ? 0.07 : 0.05 + uniform01(rng);
            simclr.add(clip_contrastive_simclr(z, pairing, tau).value, clip_simclr(z, pairing, tau));
        }
        {
            const int n = uniform_int(rng, 1, 8), q = uniform_int(rng, 1, 16);
            auto z = unit_vectors(n, dim, rng);
            auto k = unit_vectors(n, dim, rng);
            auto queue = unit_vectors(q, dim, rng);
            const double tau = it % 2 ? 0.07 : 0.05 + uniform01(rng);
            moco.add(clip_contrastive_moco(z, k, queue, tau).value, clip_moco(z, k, queue, tau));
        }
        {
            const double t = 6.0 * uniform01(rng) - 3.0, theta = 0.01 + uniform01(rng);
            term.add(dualrep::rank_term(t, 0.0, theta), rank_term(t, 0.0, theta));
        }
        {
            const int n = uniform_int(rng, 1, 4), segs = uniform_int(rng, 2, 4);
            const double theta = 0.05 + uniform01(rng);
            auto r = dual_reps(n, segs, dim, rng);
            auto q = dual_reps(n, segs, dim, rng);
            auto p = dual_reps(n, segs, dim, rng);
            unaug.add(rank_loss_unaug(r, p, theta).value, rank_loss(r, p, theta));
            aug.add(rank_loss_aug(q, p, theta).value, rank_loss(q, p, theta));
            auto a2 = dual_reps(1, 2, dim, rng);
            auto b2 = dual_reps(1, 2, dim, rng);
            listing.add(dualrep::rank_loss(a2, b2, theta).value, rank_loss_s2_listing(a2[0], b2[0], theta));
        }
        {
            const int segs = uniform_int(rng, 2, 4);
            auto pair = dual_reps(2, segs, dim, rng);
            tcs.add(dualrep::tc_sim(pair[0], pair[1]), tc_sim(pair[0], pair[1]));
            const int m = 2 * uniform_int(rng, 1, 4);
            auto r = dual_reps(m, segs, dim, rng);
            auto pairing = random_pairing(m, rng);
            tcsim.add(tc_contrast_simclr(r, pairing, 0.5).value, tc_simclr(r, pairing, 0.5));
            const int n = uniform_int(rng, 1, 8), q = uniform_int(rng, 1, 16);
            auto rq = dual_reps(n, segs, dim, rng);
            auto d = dual_reps(n, segs, dim, rng);
            auto queue = dual_reps(q, segs, dim, rng);
            tcmoco.add(tc_contrast_moco(rq, d, queue, 0.5).value, tc_moco(rq, d, queue, 0.5));
        }
        {
            const int segs = uniform_int(rng, 2, 4);
            Vec logits = 3.0 * gaussian_vector(factorial(segs), rng);
            const int idx = uniform_int(rng, 0, factorial(segs) - 1);
            order.add(order_prediction_loss(logits, idx).value, order_cross_entropy(logits, idx));
        }
        {
            const double a = uniform01(rng), b = uniform01(rng), c = uniform01(rng);
            const double l1 = uniform01(rng), l2 = uniform01(rng);
            total.add(total_loss(a, b, c, l1, l2),
                      static_cast<double>(static_cast<LD>(a) + static_cast<LD>(l1) * b + static_cast<LD>(l2) * c));
        }
        {
            const int videos = uniform_int(rng, 2, 10);
            std::vector<std::vector<Vec>> groups;
            for (int v = 0; v < videos; ++v) groups.push_back(unit_vectors(uniform_int(rng, 1, 10), dim, rng));
            auto rep = compute_variances(groups);
            auto ref = variances(groups);
            var.add(rep.sigma_intra, ref.sigma_intra);
            var.add(rep.sigma_inter, ref.sigma_inter);
        }
    }
    return {simclr.done(), moco.done(), term.done(), unaug.done(), aug.done(), listing.done(),
            tcs.done(), tcsim.done(), tcmoco.done(), order.done(), total.done(), var.done()};
}

SuiteResult run_decomposition_suite(int instances, const std::vector<double>& taus, std::uint64_t seed) {
    Rng rng(seed);
    Tracker t("decomposition_check", 1e-10);
    for (double tau : taus) {
        for (int it = 0; it < instances; ++it) {
            const int m = 2 * uniform_int(rng, 1, 4), dim = uniform_int(rng, 2, 6);
            auto z = unit_vectors(m, dim, rng);
            auto pairing = random_pairing(m, rng);
            auto d = decomposition_check(z, pairing, tau);
            t.add(d.residual, 0.0);
            t.add(d.rhs, decomposition_rhs(z, pairing, tau));
        }
    }
    return t.done();
}

}  // namespace dualrep::oracle
