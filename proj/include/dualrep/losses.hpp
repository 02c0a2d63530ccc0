#pragma once

#include "dualrep/encoder.hpp"
#include "dualrep/numeric.hpp"

#include <vector>

namespace dualrep {

struct Hyperparams {
    double tau = 0.07;
    double tau_tc = 0.5;
    double theta = 0.05;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    int segments = 2;
    int queue_size = 16384;
    double momentum = 0.999;

    void validate() const;
};

inline constexpr double kUnitTolerance = 1e-6;

/// Throws InputError unless every vector has unit norm within kUnitTolerance.
void check_unit(const std::vector<Vec>& features, const char* what);
void check_unit(const std::vector<DualRep>& reps, const char* what);
/// Throws InputError unless pairing is a fixed-point-free involution on [0, n).
void check_pairing(const std::vector<int>& pairing, std::size_t n);
/// 2i <-> 2i+1
std::vector<int> adjacent_pairing(int count);

struct FeatureLoss {
    double value = 0;
    std::vector<Vec> grad;
};

struct DualLoss {
    double value = 0;
    std::vector<DualRep> grad;
};

/// Keys and queue are detached: their gradients are returned as exact zeros.
struct MocoClipLoss {
    double value = 0;
    std::vector<Vec> grad_z;
    std::vector<Vec> grad_keys;
    std::vector<Vec> grad_queue;
};

struct MocoDualLoss {
    double value = 0;
    std::vector<DualRep> grad_r;
    std::vector<DualRep> grad_keys;
    std::vector<DualRep> grad_queue;
};

/// InfoNCE over a similarity matrix: mean_i [-s_{i,i+}/tau + lse_{k != i} s_ik/tau].
/// Returns the loss and dL/dsim.
struct SimilarityLoss {
    double value = 0;
    Mat dsim;
};
SimilarityLoss info_nce_from_similarity(const Mat& sim, const std::vector<int>& pairing, double tau);

/// Row i holds [s_i+, s_i1 .. s_im]; the positive is column 0.
SimilarityLoss info_nce_with_positive_column(const Mat& logits_sim, double tau);

FeatureLoss clip_contrastive_simclr(const std::vector<Vec>& features,
                                    const std::vector<int>& pairing, double tau);
MocoClipLoss clip_contrastive_moco(const std::vector<Vec>& z, const std::vector<Vec>& k_plus,
                                   const std::vector<Vec>& queue, double tau);

/// log(1 + exp((sim_neg - sim_pos)/theta)), stable for large arguments.
double rank_term(double sim_neg, double sim_pos, double theta);
/// d rank_term / d(sim_neg - sim_pos)
double rank_term_slope(double sim_neg, double sim_pos, double theta);

struct PartRef {
    int clip = 0;     // 0: first rep of the pair, 1: second
    int segment = 0;
    bool operator==(const PartRef&) const = default;
};

struct RankingAnchor {
    PartRef anchor;
    std::vector<PartRef> positives;
    std::vector<PartRef> negatives;
};

struct RankingSets {
    int segments = 0;
    std::vector<RankingAnchor> anchors;  // (a^1..a^S, b^1..b^S)
};

RankingSets ranking_sets(int segments);
RankingSets build_ranking_sets(const DualRep& a, const DualRep& b);

struct RankLoss {
    double value = 0;
    std::vector<DualRep> grad_a;
    std::vector<DualRep> grad_b;
};

/// Sum over pairs, anchors, positives and negatives of rank_term. `b` must already be in
/// canonical segment order.
RankLoss rank_loss(const std::vector<DualRep>& a, const std::vector<DualRep>& b, double theta);
/// Pairs (r, p): unaugmented clip vs shuffled-augmented clip.
RankLoss rank_loss_unaug(const std::vector<DualRep>& r, const std::vector<DualRep>& p, double theta);
/// Pairs (q, p): augmented clip vs its shuffled version.
RankLoss rank_loss_aug(const std::vector<DualRep>& q, const std::vector<DualRep>& p, double theta);
double rank_loss_total(double unaug, double aug);

/// Mean of all S^2 part dot products.
double tc_sim(const DualRep& a, const DualRep& b);
DualLoss tc_contrast_simclr(const std::vector<DualRep>& reps, const std::vector<int>& pairing,
                            double tau_tc);
MocoDualLoss tc_contrast_moco(const std::vector<DualRep>& r, const std::vector<DualRep>& d_plus,
                              const std::vector<DualRep>& queue, double tau_tc);

double total_loss(double l_c, double l_rank, double l_tc, double lambda1, double lambda2);

/// Lexicographic rank of a permutation among all n! orderings.
int permutation_index(const std::vector<int>& perm);
std::vector<int> permutation_from_index(int index, int n);

struct LogitLoss {
    double value = 0;
    Vec grad;
};
LogitLoss order_prediction_loss(const Vec& logits, int true_index);

struct Decomposition {
    double lhs = 0;
    double rhs = 0;
    double residual = 0;
};
/// lhs: clip contrastive loss; rhs: alignment term plus log of (positive + non-pair) sum.
Decomposition decomposition_check(const std::vector<Vec>& features, const std::vector<int>& pairing,
                                  double tau);

}  // namespace dualrep
