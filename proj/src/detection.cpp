#include "laspet/detection.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace laspet {

double DetectionCounts::precision() const {
  return tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
}

double DetectionCounts::recall() const {
  return tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
}

double DetectionCounts::f1() const {
  double p = precision(), r = recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

DetectionCounts& operator+=(DetectionCounts& a, const DetectionCounts& b) {
  a.tp += b.tp;
  a.fp += b.fp;
  a.fn += b.fn;
  return a;
}

DetectionCounts operator+(DetectionCounts a, const DetectionCounts& b) { return a += b; }

namespace {

bool suvmax_matches(double pred, double gt) {
  return std::abs(pred - gt) <= 1e-6 * std::max(std::abs(pred), std::abs(gt));
}

}  // namespace

DetectionCounts score_detection(const LesionSet& pred, const LesionSet& gt,
                                DetectionCriterion criterion, bool include_equivocal) {
  if (pred.dims != gt.dims || pred.spacing != gt.spacing || pred.origin != gt.origin)
    throw std::invalid_argument("score_detection: grid mismatch");

  const int n_pred = static_cast<int>(pred.lesions.size());
  const int n_gt = static_cast<int>(gt.lesions.size());

  int64_t numel = static_cast<int64_t>(gt.dims[0]) * gt.dims[1] * gt.dims[2];
  std::vector<int32_t> gt_at(static_cast<size_t>(numel), -1);
  for (int gi = 0; gi < n_gt; ++gi)
    for (int64_t v : gt.lesions[static_cast<size_t>(gi)].voxels)
      gt_at[static_cast<size_t>(v)] = gi;

  // shared voxel counts per (pred, gt) pair, keyed by gt index
  std::vector<std::map<int, int64_t>> overlap(static_cast<size_t>(n_pred));
  for (int pi = 0; pi < n_pred; ++pi)
    for (int64_t v : pred.lesions[static_cast<size_t>(pi)].voxels) {
      int gi = gt_at[static_cast<size_t>(v)];
      if (gi >= 0) ++overlap[static_cast<size_t>(pi)][gi];
    }

  auto counted = [&](int gi) {
    return include_equivocal || !gt.lesions[static_cast<size_t>(gi)].equivocal;
  };

  // a prediction whose entire gt contact is equivocal drops out of the counts
  std::vector<char> excluded(static_cast<size_t>(n_pred), 0);
  if (!include_equivocal)
    for (int pi = 0; pi < n_pred; ++pi) {
      const auto& ov = overlap[static_cast<size_t>(pi)];
      excluded[static_cast<size_t>(pi)] =
          !ov.empty() && std::all_of(ov.begin(), ov.end(), [&](const auto& kv) {
            return gt.lesions[static_cast<size_t>(kv.first)].equivocal;
          });
    }

  std::vector<char> pred_hit(static_cast<size_t>(n_pred), 0);
  std::vector<char> gt_hit(static_cast<size_t>(n_gt), 0);

  if (criterion == DetectionCriterion::DiceAbove50) {
    // greedy one-to-one assignment by descending dice
    std::vector<std::tuple<double, int, int>> pairs;
    for (int pi = 0; pi < n_pred; ++pi) {
      if (excluded[static_cast<size_t>(pi)]) continue;
      for (const auto& [gi, shared] : overlap[static_cast<size_t>(pi)]) {
        if (!counted(gi)) continue;
        double dice = 2.0 * static_cast<double>(shared) /
                      (static_cast<double>(pred.lesions[static_cast<size_t>(pi)].voxels.size()) +
                       static_cast<double>(gt.lesions[static_cast<size_t>(gi)].voxels.size()));
        if (dice > 0.5) pairs.emplace_back(dice, pi, gi);
      }
    }
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
      return std::tie(std::get<1>(a), std::get<2>(a)) <
             std::tie(std::get<1>(b), std::get<2>(b));
    });
    for (const auto& [dice, pi, gi] : pairs) {
      if (pred_hit[static_cast<size_t>(pi)] || gt_hit[static_cast<size_t>(gi)]) continue;
      pred_hit[static_cast<size_t>(pi)] = 1;
      gt_hit[static_cast<size_t>(gi)] = 1;
    }
  } else {
    for (int pi = 0; pi < n_pred; ++pi) {
      if (excluded[static_cast<size_t>(pi)]) continue;
      for (const auto& [gi, shared] : overlap[static_cast<size_t>(pi)]) {
        if (!counted(gi)) continue;
        if (criterion == DetectionCriterion::SuvmaxMatch &&
            !suvmax_matches(pred.lesions[static_cast<size_t>(pi)].suvmax,
                            gt.lesions[static_cast<size_t>(gi)].suvmax))
          continue;
        pred_hit[static_cast<size_t>(pi)] = 1;
        gt_hit[static_cast<size_t>(gi)] = 1;
      }
    }
  }

  DetectionCounts counts;
  for (int pi = 0; pi < n_pred; ++pi) {
    if (excluded[static_cast<size_t>(pi)]) continue;
    if (pred_hit[static_cast<size_t>(pi)])
      ++counts.tp;
    else
      ++counts.fp;
  }
  for (int gi = 0; gi < n_gt; ++gi)
    if (counted(gi) && !gt_hit[static_cast<size_t>(gi)]) ++counts.fn;
  return counts;
}

}  // namespace laspet
