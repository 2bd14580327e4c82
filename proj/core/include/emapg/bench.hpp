#pragma once

// Synthetic bias-variance benchmark for reverse-KL gradient estimators.
//
// Per trial: pi_ref = softmax(z_ref), pi_theta = softmax(s z) with z, z_ref
// standard normal and s calibrated so the top-32 mass of pi_theta equals m.
// Arms, all estimating grad KL(pi_theta || pi_ref) with respect to the logits:
//   sampled        K4 averaged over B on-policy samples (K = 0)
//   truncated      exact sum over the top-K tokens only, no tail
//   topk           truncated sum + canonical tail averaged over B samples
//   topk_baseline  truncated sum + K4 tail (literal Top-k KL algorithm)
//   exact          the full sum (K = V)

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace emapg {

struct SynthTaskSpec {
  std::size_t vocab = 2000;
  double target_mass = 0.8;
  std::vector<std::size_t> k_list = {4, 8, 16, 32, 64};
  std::vector<std::size_t> b_list = {1,   2,   4,    8,    16,   32,   64,
                                     128, 256, 512, 1024, 2048, 4096, 8192};
  std::size_t trials = 200;
  std::uint64_t seed = 0;
  bool baseline_arm = true;

  void validate() const;
};

struct RelRmseRecord {
  std::string estimator;
  std::size_t k = 0;
  std::size_t b = 0;
  double m = 0.0;
  std::size_t vocab = 0;
  std::size_t trials = 0;
  double rel_rmse = 0.0;
};

inline constexpr std::size_t kMassTopK = 32;

// Mass of the 32 largest entries of softmax(s z).
double top_mass(std::span<const double> z, double s);

struct Calibration {
  double scale = 0.0;
  double mass = 0.0;
  std::vector<std::pair<double, double>> trace;  // (s, M32(s)) in evaluation order
};

// Solves M32(softmax(s z)) = m by bisection on s >= 0 to within 1e-6.
Calibration calibrate_scale(double m, std::span<const double> z);

std::vector<RelRmseRecord> run_sweep(const SynthTaskSpec& spec);

// Smallest B at which topk beats truncated for (K, m); nullopt if never.
std::optional<std::size_t> critical_sample_size(std::span<const RelRmseRecord> records,
                                                std::size_t k, double m);

// Least-squares slope of log rel_rmse against log B over b in [b_min, b_max].
double log_log_slope(std::span<const RelRmseRecord> records, const std::string& estimator,
                     std::size_t k, std::size_t b_min, std::size_t b_max);

const RelRmseRecord* find_record(std::span<const RelRmseRecord> records,
                                 const std::string& estimator, std::size_t k, std::size_t b);

void write_csv(std::ostream& os, std::span<const RelRmseRecord> records);

}  // namespace emapg
