#pragma once

#include "dualrep/encoder.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dualrep::gradcheck {

inline constexpr double kStep = 1e-5;
inline constexpr double kTolerance = 1e-4;
/// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kFloor = 1e-8;
/// The checkers raise the floor to kRoundoffMultiple * eps * max(|f|, 1) / h, below which a central
/// difference of f is rounding noise.
inline constexpr double kRoundoffMultiple = 1e6;

double relative_error(double analytic, double numeric, double floor = kFloor);
double roundoff_floor(double value, double h);

/// Max relative error between `analytic` and central differences of f over every entry.
double check_params(const std::function<double(const ParamSet&)>& f, const ParamSet& at,
                    const ParamSet& analytic, double h = kStep);
double check_vector(const std::function<double(const Vec&)>& f, const Vec& at, const Vec& analytic,
                    double h = kStep);

struct CaseResult {
    std::string suite;
    std::uint64_t seed = 0;
    double max_rel_error = 0;
    bool pass = false;
};

/// Every loss composed through the tiny encoder, plus encoder-only and feature-level checks.
std::vector<CaseResult> run_suite(const std::vector<std::uint64_t>& seeds);
std::vector<std::string> suite_names();

/// Finite differences of the MoCo losses w.r.t. key-encoder parameters and queue entries.
struct StopGradientReport {
    double key_param_fd_max = 0;     // how much the loss moves (non-zero)
    double key_param_grad_max = 0;   // reported gradient (must be exactly zero)
    double queue_fd_max = 0;
    double queue_grad_max = 0;
};
StopGradientReport moco_stop_gradient_check(std::uint64_t seed);

}  // namespace dualrep::gradcheck
