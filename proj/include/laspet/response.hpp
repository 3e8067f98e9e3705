#pragma once

#include <optional>

#include "laspet/lesions.hpp"

namespace laspet {

// Deauville bin boundaries over qPET. Defaults follow the qPET criterion;
// configurable everywhere, never baked into reports.
struct QpetThresholds {
  double t12 = 0.95;
  double t23 = 1.3;
  double t34 = 2.0;
  double t45 = 3.0;

  void validate() const;
};

struct ResponseLabel {
  int patient_ds = 1;  // 1..5
  bool binary_3plus = false;
  bool binary_4plus = false;
};

// Bins a qPET value into a Deauville score. Boundary values are assigned
// upward (q == t23 gives 3). An absent qPET (no residual lesions) is DS 1.
int qpet_to_ds(std::optional<double> q, const QpetThresholds& th = {});

// Highest lesion-level Deauville score in the set; 1 when no lesion carries
// a score.
int patient_ds(const LesionSet& lesions);

ResponseLabel make_response_label(int ds);

}  // namespace laspet
