#include "dualrep/losses.hpp"

#include "dualrep/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dualrep {

void Hyperparams::validate() const {
    if (!(tau > 0)) throw ConfigError("tau must be positive");
    if (!(tau_tc > 0)) throw ConfigError("tau_tc must be positive");
    if (!(theta > 0)) throw ConfigError("theta must be positive");
    if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw ConfigError("loss weights must be non-negative");
    if (segments < 2) throw ConfigError("segments must be at least 2");
    if (queue_size <= 0) throw ConfigError("queue_size must be positive");
    if (!(momentum >= 0 && momentum <= 1)) throw ConfigError("momentum must lie in [0, 1]");
}

void check_unit(const std::vector<Vec>& features, const char* what) {
    for (std::size_t i = 0; i < features.size(); ++i) {
        double n = features[i].norm();
        if (!(std::abs(n - 1.0) <= kUnitTolerance)) {
            throw InputError(std::string(what) + "[" + std::to_string(i) +
                             "] is not unit norm (norm " + std::to_string(n) + ")");
        }
    }
}

void check_unit(const std::vector<DualRep>& reps, const char* what) {
    for (const auto& r : reps) check_unit(r, what);
}

void check_pairing(const std::vector<int>& pairing, std::size_t n) {
    if (pairing.size() != n) throw InputError("pairing size does not match feature count");
    for (std::size_t i = 0; i < n; ++i) {
        int j = pairing[i];
        if (j < 0 || static_cast<std::size_t>(j) >= n || static_cast<std::size_t>(j) == i ||
            pairing[j] != static_cast<int>(i)) {
            throw InputError("pairing is not a fixed-point-free involution at index " +
                             std::to_string(i));
        }
    }
}

std::vector<int> adjacent_pairing(int count) {
    if (count % 2 != 0) throw InputError("adjacent pairing needs an even count");
    std::vector<int> p(count);
    for (int i = 0; i < count; ++i) p[i] = i ^ 1;
    return p;
}

namespace {

Mat stack(const std::vector<Vec>& v) {
    if (v.empty()) return Mat();
    Mat m(static_cast<Eigen::Index>(v.size()), v.front().size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i].size() != m.cols()) throw ShapeError("feature dimensions differ");
        m.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
    }
    return m;
}

std::vector<Vec> unstack(const Mat& m) {
    std::vector<Vec> v;
    v.reserve(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) v.push_back(m.row(i).transpose());
    return v;
}

std::vector<Vec> zero_vectors(std::size_t n, Eigen::Index dim) {
    return std::vector<Vec>(n, Vec::Zero(dim));
}

Vec part_mean(const DualRep& r) {
    if (r.empty()) throw ShapeError("dual representation has no parts");
    Vec m = Vec::Zero(r.front().size());
    for (const auto& p : r) {
        if (p.size() != m.size()) throw ShapeError("dual parts differ in dimension");
        m += p;
    }
    return m / static_cast<double>(r.size());
}

std::vector<Vec> part_means(const std::vector<DualRep>& reps, std::size_t segments) {
    std::vector<Vec> out;
    out.reserve(reps.size());
    for (const auto& r : reps) {
        if (r.size() != segments) throw ShapeError("segment count mismatch");
        out.push_back(part_mean(r));
    }
    return out;
}

DualRep spread_mean_grad(const Vec& dmean, std::size_t segments) {
    return DualRep(segments, dmean / static_cast<double>(segments));
}

}  // namespace

SimilarityLoss info_nce_from_similarity(const Mat& sim, const std::vector<int>& pairing, double tau) {
    const Eigen::Index m = sim.rows();
    if (m < 2 || sim.cols() != m) throw InputError("similarity matrix must be square with M >= 2");
    check_pairing(pairing, static_cast<std::size_t>(m));
    if (!(tau > 0)) throw InputError("temperature must be positive");
    SimilarityLoss out;
    out.dsim = Mat::Zero(m, m);
    const double scale = 1.0 / (static_cast<double>(m) * tau);
    for (Eigen::Index i = 0; i < m; ++i) {
        Vec logits(m - 1);
        for (Eigen::Index k = 0, c = 0; k < m; ++k) {
            if (k != i) logits[c++] = sim(i, k) / tau;
        }
        double lse = log_sum_exp(logits);
        out.value += lse - sim(i, pairing[i]) / tau;
        for (Eigen::Index k = 0; k < m; ++k) {
            if (k == i) continue;
            double p = std::exp(sim(i, k) / tau - lse);
            out.dsim(i, k) = scale * (p - (k == pairing[i] ? 1.0 : 0.0));
        }
    }
    out.value /= static_cast<double>(m);
    return out;
}

SimilarityLoss info_nce_with_positive_column(const Mat& logits_sim, double tau) {
    const Eigen::Index n = logits_sim.rows();
    if (n < 1) throw InputError("empty batch");
    if (!(tau > 0)) throw InputError("temperature must be positive");
    SimilarityLoss out;
    out.dsim = Mat::Zero(n, logits_sim.cols());
    const double scale = 1.0 / (static_cast<double>(n) * tau);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vec logits = logits_sim.row(i).transpose() / tau;
        double lse = log_sum_exp(logits);
        out.value += lse - logits[0];
        Vec p = (logits.array() - lse).exp();
        p[0] -= 1.0;
        out.dsim.row(i) = scale * p.transpose();
    }
    out.value /= static_cast<double>(n);
    return out;
}

FeatureLoss clip_contrastive_simclr(const std::vector<Vec>& features,
                                    const std::vector<int>& pairing, double tau) {
    check_unit(features, "feature");
    Mat z = stack(features);
    auto core = info_nce_from_similarity(z * z.transpose(), pairing, tau);
    FeatureLoss out;
    out.value = core.value;
    out.grad = unstack((core.dsim + core.dsim.transpose()) * z);
    return out;
}

MocoClipLoss clip_contrastive_moco(const std::vector<Vec>& z, const std::vector<Vec>& k_plus,
                                   const std::vector<Vec>& queue, double tau) {
    if (queue.empty()) throw ConfigError("MoCo loss needs a non-empty queue");
    if (z.empty()) throw InputError("empty batch");
    if (z.size() != k_plus.size()) throw ShapeError("query and key batch sizes differ");
    check_unit(z, "query");
    check_unit(k_plus, "key");
    check_unit(queue, "queue entry");
    Mat zq = stack(z);
    Mat kp = stack(k_plus);
    Mat qu = stack(queue);
    if (kp.cols() != zq.cols() || qu.cols() != zq.cols()) throw ShapeError("feature dimensions differ");
    const Eigen::Index n = zq.rows();
    Mat logits(n, 1 + qu.rows());
    logits.col(0) = (zq.array() * kp.array()).rowwise().sum();
    logits.rightCols(qu.rows()) = zq * qu.transpose();
    auto core = info_nce_with_positive_column(logits, tau);
    Mat dz = core.dsim.rightCols(qu.rows()) * qu;
    dz += (kp.array().colwise() * core.dsim.col(0).array()).matrix();
    MocoClipLoss out;
    out.value = core.value;
    out.grad_z = unstack(dz);
    out.grad_keys = zero_vectors(k_plus.size(), zq.cols());
    out.grad_queue = zero_vectors(queue.size(), zq.cols());
    return out;
}

double rank_term(double sim_neg, double sim_pos, double theta) {
    if (!(theta > 0)) throw InputError("theta must be positive");
    return softplus((sim_neg - sim_pos) / theta);
}

double rank_term_slope(double sim_neg, double sim_pos, double theta) {
    if (!(theta > 0)) throw InputError("theta must be positive");
    return sigmoid((sim_neg - sim_pos) / theta) / theta;
}

RankingSets ranking_sets(int segments) {
    if (segments < 1) throw ShapeError("segment count must be positive");
    RankingSets sets;
    sets.segments = segments;
    for (int clip = 0; clip < 2; ++clip) {
        for (int k = 0; k < segments; ++k) {
            RankingAnchor a;
            a.anchor = {clip, k};
            a.positives.push_back({1 - clip, k});
            for (int c = 0; c < 2; ++c) {
                for (int j = 0; j < segments; ++j) {
                    if (j != k) a.negatives.push_back({c, j});
                }
            }
            sets.anchors.push_back(std::move(a));
        }
    }
    return sets;
}

RankingSets build_ranking_sets(const DualRep& a, const DualRep& b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("segment count mismatch");
    return ranking_sets(static_cast<int>(a.size()));
}

RankLoss rank_loss(const std::vector<DualRep>& a, const std::vector<DualRep>& b, double theta) {
    if (a.empty()) throw InputError("empty batch");
    if (a.size() != b.size()) throw ShapeError("pair lists differ in length");
    if (!(theta > 0)) throw InputError("theta must be positive");
    check_unit(a, "dual part");
    check_unit(b, "dual part");
    RankLoss out;
    out.grad_a.reserve(a.size());
    out.grad_b.reserve(b.size());
    for (std::size_t n = 0; n < a.size(); ++n) {
        const RankingSets sets = build_ranking_sets(a[n], b[n]);
        const DualRep* reps[2] = {&a[n], &b[n]};
        DualRep grads[2] = {zeros_like(a[n]), zeros_like(b[n])};
        auto part = [&](PartRef r) -> const Vec& { return (*reps[r.clip])[r.segment]; };
        auto grad = [&](PartRef r) -> Vec& { return grads[r.clip][r.segment]; };
        for (const auto& anc : sets.anchors) {
            const Vec& x = part(anc.anchor);
            for (const auto& pos : anc.positives) {
                const Vec& y = part(pos);
                const double sp = x.dot(y);
                for (const auto& neg : anc.negatives) {
                    const Vec& z = part(neg);
                    const double sn = x.dot(z);
                    out.value += rank_term(sn, sp, theta);
                    const double g = rank_term_slope(sn, sp, theta);
                    grad(anc.anchor) += g * (z - y);
                    grad(neg) += g * x;
                    grad(pos) -= g * x;
                }
            }
        }
        out.grad_a.push_back(std::move(grads[0]));
        out.grad_b.push_back(std::move(grads[1]));
    }
    return out;
}

RankLoss rank_loss_unaug(const std::vector<DualRep>& r, const std::vector<DualRep>& p, double theta) {
    return rank_loss(r, p, theta);
}

RankLoss rank_loss_aug(const std::vector<DualRep>& q, const std::vector<DualRep>& p, double theta) {
    return rank_loss(q, p, theta);
}

double rank_loss_total(double unaug, double aug) { return 0.5 * unaug + 0.5 * aug; }

double tc_sim(const DualRep& a, const DualRep& b) {
    if (a.size() != b.size()) throw ShapeError("segment count mismatch");
    return part_mean(a).dot(part_mean(b));
}

DualLoss tc_contrast_simclr(const std::vector<DualRep>& reps, const std::vector<int>& pairing,
                            double tau_tc) {
    if (reps.empty()) throw InputError("empty batch");
    check_unit(reps, "dual part");
    const std::size_t s = reps.front().size();
    Mat m = stack(part_means(reps, s));
    auto core = info_nce_from_similarity(m * m.transpose(), pairing, tau_tc);
    Mat dm = (core.dsim + core.dsim.transpose()) * m;
    DualLoss out;
    out.value = core.value;
    for (Eigen::Index i = 0; i < dm.rows(); ++i) {
        out.grad.push_back(spread_mean_grad(dm.row(i).transpose(), s));
    }
    return out;
}

MocoDualLoss tc_contrast_moco(const std::vector<DualRep>& r, const std::vector<DualRep>& d_plus,
                              const std::vector<DualRep>& queue, double tau_tc) {
    if (queue.empty()) throw ConfigError("MoCo loss needs a non-empty queue");
    if (r.empty()) throw InputError("empty batch");
    if (r.size() != d_plus.size()) throw ShapeError("query and key batch sizes differ");
    check_unit(r, "query part");
    check_unit(d_plus, "key part");
    check_unit(queue, "queue part");
    const std::size_t s = r.front().size();
    Mat mr = stack(part_means(r, s));
    Mat md = stack(part_means(d_plus, s));
    Mat mq = stack(part_means(queue, s));
    const Eigen::Index n = mr.rows();
    Mat logits(n, 1 + mq.rows());
    logits.col(0) = (mr.array() * md.array()).rowwise().sum();
    logits.rightCols(mq.rows()) = mr * mq.transpose();
    auto core = info_nce_with_positive_column(logits, tau_tc);
    Mat dm = core.dsim.rightCols(mq.rows()) * mq;
    dm += (md.array().colwise() * core.dsim.col(0).array()).matrix();
    MocoDualLoss out;
    out.value = core.value;
    for (Eigen::Index i = 0; i < n; ++i) out.grad_r.push_back(spread_mean_grad(dm.row(i).transpose(), s));
    for (const auto& d : d_plus) out.grad_keys.push_back(zeros_like(d));
    for (const auto& q : queue) out.grad_queue.push_back(zeros_like(q));
    return out;
}

double total_loss(double l_c, double l_rank, double l_tc, double lambda1, double lambda2) {
    return l_c + lambda1 * l_rank + lambda2 * l_tc;
}

int permutation_index(const std::vector<int>& perm) {
    const int n = static_cast<int>(perm.size());
    std::vector<bool> seen(n, false);
    int index = 0;
    for (int i = 0; i < n; ++i) {
        if (perm[i] < 0 || perm[i] >= n || seen[perm[i]]) throw InputError("not a permutation");
        int smaller = 0;
        for (int v = 0; v < perm[i]; ++v) smaller += seen[v] ? 0 : 1;
        index += smaller * factorial(n - 1 - i);
        seen[perm[i]] = true;
    }
    return index;
}

std::vector<int> permutation_from_index(int index, int n) {
    if (index < 0 || index >= factorial(n)) throw InputError("permutation index out of range");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> perm;
    for (int i = n - 1; i >= 0; --i) {
        int f = factorial(i);
        perm.push_back(pool[index / f]);
        pool.erase(pool.begin() + index / f);
        index %= f;
    }
    return perm;
}

LogitLoss order_prediction_loss(const Vec& logits, int true_index) {
    if (true_index < 0 || true_index >= logits.size()) throw InputError("label out of range");
    LogitLoss out;
    double lse = log_sum_exp(logits);
    out.value = lse - logits[true_index];
    out.grad = (logits.array() - lse).exp();
    out.grad[true_index] -= 1.0;
    return out;
}

Decomposition decomposition_check(const std::vector<Vec>& features, const std::vector<int>& pairing,
                                  double tau) {
    Decomposition d;
    d.lhs = clip_contrastive_simclr(features, pairing, tau).value;
    const std::size_t m = features.size();
    double align = 0;
    double uniform = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double pos = features[i].dot(features[pairing[i]]) / tau;
        align += pos;
        std::vector<double> terms{pos};
        for (std::size_t k = 0; k < m; ++k) {
            if (k == i || static_cast<int>(k) == pairing[i]) continue;
            terms.push_back(features[i].dot(features[k]) / tau);
        }
        double mx = *std::max_element(terms.begin(), terms.end());
        double s = 0;
        for (double t : terms) s += std::exp(t - mx);
        uniform += mx + std::log(s);
    }
    d.rhs = -align / static_cast<double>(m) + uniform / static_cast<double>(m);
    d.residual = std::abs(d.lhs - d.rhs);
    return d;
}

}  // namespace dualrep
