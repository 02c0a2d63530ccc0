#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace dualrep {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Stable log(1 + exp(x)).
double softplus(double x);
/// Logistic sigmoid, derivative of softplus.
double sigmoid(double x);
double log_sum_exp(const Vec& x);
Vec softmax(const Vec& x);

/// Returns v / |v|; throws NormalizationError for a zero (or non-finite) vector.
Vec normalized(const Vec& v);
/// Backward of v -> v/|v| given the output z, the norm of v and dL/dz.
Vec normalize_backward(const Vec& z, double norm, const Vec& dz);

bool all_finite(const Mat& m);

/// Shortest round-trip decimal representation.
std::string format_double(double x);
/// Fixed 17-significant-digit representation.
std::string format_double17(double x);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
/// processed exactly once; callers write results into per-index slots.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

void write_f64_le(const std::filesystem::path& path, const std::vector<double>& data);
std::vector<double> read_f64_le(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// FNV-1a 64-bit hash of a file's bytes, hex encoded.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace dualrep
