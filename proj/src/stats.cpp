#include "laspet/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "laspet/rng.hpp"

namespace laspet {

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // ranks are 1-based
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& x,
                               const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  const size_t n = x.size();
  if (n < 2) return std::nullopt;
  auto rx = average_ranks(x);
  auto ry = average_ranks(y);
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

double cohen_kappa(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cohen_kappa: length mismatch");
  if (a.empty()) throw std::invalid_argument("cohen_kappa: empty lists");
  const double n = static_cast<double>(a.size());
  std::map<int, int> ca, cb;
  double agree = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ++ca[a[i]];
    ++cb[b[i]];
    if (a[i] == b[i]) agree += 1.0;
  }
  double po = agree / n;
  double pe = 0.0;
  for (const auto& [label, count] : ca) {
    auto it = cb.find(label);
    if (it != cb.end()) pe += (count / n) * (it->second / n);
  }
  if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

double binary_f1(const std::vector<bool>& pred, const std::vector<bool>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("binary_f1: length mismatch");
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && gt[i]) ++tp;
    else if (pred[i]) ++fp;
    else if (gt[i]) ++fn;
  }
  int64_t denom = 2 * tp + fp + fn;
  if (denom == 0) return 1.0;  // nothing positive anywhere, vacuous agreement
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

namespace {

// maps a raw 64-bit draw onto [0, n) without modulo bias
int draw_index(uint64_t raw, int n) {
  return static_cast<int>(
      (static_cast<unsigned __int128>(raw) * static_cast<uint64_t>(n)) >> 64);
}

}  // namespace

std::vector<double> bootstrap_trials(int n_patients, const PatientStatistic& statistic,
                                     int n_trials, uint64_t seed) {
  if (n_patients <= 0) throw std::invalid_argument("bootstrap_trials: need patients");
  if (n_trials <= 0) throw std::invalid_argument("bootstrap_trials: need trials");
  const uint64_t stream = Rng::derive(seed, "bootstrap");
  std::vector<double> out(static_cast<size_t>(n_trials), 0.0);
  std::vector<int> pick(static_cast<size_t>(n_patients), 0);
  for (int t = 0; t < n_trials; ++t) {
    uint64_t base = static_cast<uint64_t>(t) * static_cast<uint64_t>(n_patients);
    for (int i = 0; i < n_patients; ++i)
      pick[static_cast<size_t>(i)] =
          draw_index(Rng::at(stream, base + static_cast<uint64_t>(i)), n_patients);
    out[static_cast<size_t>(t)] = statistic(pick);
  }
  return out;
}

BootstrapCI bootstrap_ci(int n_patients, const PatientStatistic& statistic,
                         int n_trials, uint64_t seed) {
  std::vector<int> all(static_cast<size_t>(n_patients));
  std::iota(all.begin(), all.end(), 0);
  BootstrapCI ci;
  ci.estimate = statistic(all);

  auto trials = bootstrap_trials(n_patients, statistic, n_trials, seed);
  std::sort(trials.begin(), trials.end());
  auto nearest_rank = [&](double q) {
    auto rank = static_cast<size_t>(
        std::ceil(q * static_cast<double>(trials.size())));
    rank = std::clamp<size_t>(rank, 1, trials.size());
    return trials[rank - 1];
  };
  ci.lo = nearest_rank(0.025);
  ci.hi = nearest_rank(0.975);
  return ci;
}

SuperiorityResult superiority_test(const std::vector<double>& a_trials,
                                   const std::vector<double>& b_trials) {
  if (a_trials.size() != b_trials.size())
    throw std::invalid_argument("superiority_test: trial count mismatch");
  if (a_trials.empty()) throw std::invalid_argument("superiority_test: no trials");
  int64_t wins = 0;
  for (size_t i = 0; i < a_trials.size(); ++i)
    if (a_trials[i] > b_trials[i]) ++wins;
  SuperiorityResult r;
  r.fraction = static_cast<double>(wins) / static_cast<double>(a_trials.size());
  r.significant = r.fraction >= 0.95;
  return r;
}

}  // namespace laspet
