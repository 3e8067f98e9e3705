#pragma once

#include "laspet/lesions.hpp"

namespace laspet {

// Overlap: a predicted component detects a gt lesion when they share at
// least one voxel. SuvmaxMatch: additionally the prediction's hottest voxel
// must attain the gt lesion's maximum intensity (relative tolerance 1e-6).
// DiceAbove50: one-to-one pairing, greedy by descending dice, pairs count
// only above 0.5.
enum class DetectionCriterion { Overlap, SuvmaxMatch, DiceAbove50 };

struct DetectionCounts {
  int tp = 0;  // predicted components that detect a counted gt lesion
  int fp = 0;  // predicted components detecting nothing
  int fn = 0;  // counted gt lesions no prediction detects

  double precision() const;  // 0 when tp + fp == 0
  double recall() const;     // 0 when tp + fn == 0
  double f1() const;         // 0 when precision + recall == 0
};

// Pools counts across patients.
DetectionCounts& operator+=(DetectionCounts& a, const DetectionCounts& b);
DetectionCounts operator+(DetectionCounts a, const DetectionCounts& b);

// Scores predicted components against gt lesions under a criterion. With
// include_equivocal=false, equivocal gt lesions are not counted and
// predictions overlapping only equivocal gt lesions are excluded from all
// counts; predictions with no gt overlap at all are false positives either
// way. Throws on grid mismatch.
DetectionCounts score_detection(const LesionSet& pred, const LesionSet& gt,
                                DetectionCriterion criterion,
                                bool include_equivocal = false);

}  // namespace laspet
