#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace laspet {

// Pearson correlation of average ranks (tied values share the mean of the
// rank positions they span). nullopt when fewer than two points or either
// side has zero rank variance.
std::optional<double> spearman(const std::vector<double>& x,
                               const std::vector<double>& y);

// Cohen's kappa over two equal-length label lists. Degenerate tables where
// chance agreement is 1 map to 1 on full agreement and 0 otherwise.
double cohen_kappa(const std::vector<int>& a, const std::vector<int>& b);

// F1 on the positive class; 1.0 when both sides are all-negative.
double binary_f1(const std::vector<bool>& pred, const std::vector<bool>& gt);

// Statistic over a multiset of patient indices (a resample draw).
using PatientStatistic = std::function<double(const std::vector<int>&)>;

// n_trials patient-level resamples with replacement. Trial t is a pure
// function of (seed, t), so trials may run in any order or concurrently and
// always fill the same slots.
std::vector<double> bootstrap_trials(int n_patients, const PatientStatistic& statistic,
                                     int n_trials, uint64_t seed);

struct BootstrapCI {
  double estimate = 0.0;  // statistic on the original cohort
  double lo = 0.0;        // 2.5th percentile of the trial statistics
  double hi = 0.0;        // 97.5th percentile
};

BootstrapCI bootstrap_ci(int n_patients, const PatientStatistic& statistic,
                         int n_trials = 10000, uint64_t seed = 0);

struct SuperiorityResult {
  double fraction = 0.0;     // share of paired trials where a > b
  bool significant = false;  // fraction >= 0.95
};

// Paired comparison over per-trial metric values.
SuperiorityResult superiority_test(const std::vector<double>& a_trials,
                                   const std::vector<double>& b_trials);

}  // namespace laspet
