#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "laspet/detection.hpp"
#include "laspet/metrics.hpp"
#include "laspet/phantom.hpp"
#include "laspet/response.hpp"
#include "laspet/stats.hpp"

namespace laspet {

struct EvalOptions {
  bool include_equivocal = false;
  int bootstrap_trials = 10000;
  uint64_t seed = 0;
  QpetThresholds thresholds{};
};

// Everything needed to aggregate a cohort, computed once per patient.
// Detection counts are indexed by DetectionCriterion order.
struct PatientEval {
  std::string id;
  Demographics demographics;
  std::array<DetectionCounts, 3> detection{};
  double dice1 = 0.0, dice2 = 0.0;
  double fpv1_ml = 0.0, fnv1_ml = 0.0;
  double fpv2_ml = 0.0, fnv2_ml = 0.0;
  BaselineMetrics pred_baseline, gt_baseline;
  InterimMetrics pred_interim, gt_interim;
  int pred_ds = 1, gt_ds = 1;
};

// Spearman agreement between predicted and reference values of one metric,
// over the patients where both sides define it.
struct MetricAgreement {
  std::string metric;
  int n_pairs = 0;
  BootstrapCI rho;
};

struct EvalReport {
  int schema_version = 1;
  EvalOptions options;
  std::vector<PatientEval> patients;

  std::array<DetectionCounts, 3> pooled{};  // counts summed over patients
  std::array<BootstrapCI, 3> f1{};          // pooled F1, patient-level resampling
  BootstrapCI mean_dice1, mean_dice2;
  std::vector<MetricAgreement> agreement;
  BootstrapCI kappa;  // Deauville score agreement
  BootstrapCI f1_ds3plus, f1_ds4plus;
};

// Scores one patient's predicted label volumes against the study ground
// truth: detection under all three criteria, overlap metrics for both time
// points, PET metric summaries on each side, and Deauville scores (reference
// from annotated LDS, prediction via qPET binning).
PatientEval evaluate_patient(const PatientStudy& study, const Volume3D& pred1_labels,
                             const Volume3D& pred2_labels, const EvalOptions& opt);

// Cohort aggregation: pooled detection counts, bootstrap CIs for F1 / mean
// Dice / Spearman agreement / response statistics. Resampling is at the
// patient level; Spearman over a degenerate resample counts as 0.
EvalReport aggregate_cohort(std::vector<PatientEval> patients, const EvalOptions& opt);

enum class GroupKey { Age, Sex, Weight, Dose, Scanner };

const char* group_key_name(GroupKey k);

// Stratified re-aggregation. Sex and scanner group by their string value;
// numeric keys split at the cohort median (low = below or at the median).
// Groups are ordered by label. Single-group cohorts reproduce the
// unstratified report.
std::vector<std::pair<std::string, EvalReport>> group_by_eval(
    const std::vector<PatientEval>& patients, GroupKey key, const EvalOptions& opt);

// JSON I/O (schema_version checked on read) and tabular renderings. The CSV
// is plot-ready (section,metric,estimate,lo,hi); the table formats intervals
// as "mean [lo, hi]".
std::string report_json(const EvalReport& report);
EvalReport parse_report_json(const std::string& text);
void write_report_json(const EvalReport& report, const std::string& path);
EvalReport read_report_json(const std::string& path);
std::string report_csv(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace laspet
