#pragma once

// Naive term-by-term re-implementations used to cross-check the production losses.
// They share no code with losses.cpp beyond Eigen vector dot products.

#include "dualrep/encoder.hpp"
#include "dualrep/numeric.hpp"
#include "dualrep/trainers.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dualrep::oracle {

double clip_simclr(const std::vector<Vec>& z, const std::vector<int>& pairing, double tau);
double clip_moco(const std::vector<Vec>& z, const std::vector<Vec>& k_plus,
                 const std::vector<Vec>& queue, double tau);
double rank_term(double sim_neg, double sim_pos, double theta);
/// Enumerates every (anchor, positive, negative) triple by predicate over all 2S parts.
double rank_loss(const std::vector<DualRep>& a, const std::vector<DualRep>& b, double theta);
/// The eight S=2 terms written out one by one.
double rank_loss_s2_listing(const DualRep& q, const DualRep& p, double theta);
double tc_sim(const DualRep& a, const DualRep& b);
double tc_simclr(const std::vector<DualRep>& r, const std::vector<int>& pairing, double tau_tc);
double tc_moco(const std::vector<DualRep>& r, const std::vector<DualRep>& d_plus,
               const std::vector<DualRep>& queue, double tau_tc);
double order_cross_entropy(const Vec& logits, int true_index);
/// Right-hand side of the decomposition with its own exponent bookkeeping.
double decomposition_rhs(const std::vector<Vec>& z, const std::vector<int>& pairing, double tau);

struct Variances {
    double sigma_inter = 0;
    double sigma_intra = 0;
};
Variances variances(const std::vector<std::vector<Vec>>& groups);

/// Contrast-only SimCLR step consuming the same random draws as simclr_step.
void contrast_only_step(TrainState& state, const TrainConfig& cfg,
                        const std::vector<const Video*>& batch, double lr);

struct SuiteResult {
    std::string name;
    int instances = 0;
    double max_error = 0;
    double tolerance = 0;
    bool pass = false;
};

/// Compares every loss against its oracle on `instances` random small problems.
std::vector<SuiteResult> run_oracle_suite(int instances, std::uint64_t seed);
/// Decomposition identity on random instances at each temperature.
SuiteResult run_decomposition_suite(int instances, const std::vector<double>& taus, std::uint64_t seed);

}  // namespace dualrep::oracle
