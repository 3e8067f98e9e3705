#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "laspet/nn/infer.hpp"
#include "laspet/nn/train.hpp"
#include "laspet/report.hpp"

namespace laspet {

// Prediction source for the synthetic cohort: ground truth passed through
// (oracle), the SUV threshold-union rule inside the body mask, or the
// trained network with sliding-window inference.
enum class SegmenterKind { Oracle, Rule, Network };

const char* segmenter_name(SegmenterKind k);

struct PipelineConfig {
  uint64_t seed = 0;
  int n_patients = 5;

  // per-patient phantoms; the seed field is ignored and derived per patient
  PhantomConfig phantom{};
  // baseline lesion count cycles through this inclusive range so rank
  // correlations over the cohort are well defined; {0,0} keeps the constant
  // count from `phantom`
  std::array<int, 2> lesion_count_range{2, 4};
  std::array<double, 3> misreg_shift_mm{0.0, 0.0, 0.0};
  std::array<double, 3> misreg_rot_deg{0.0, 0.0, 0.0};

  SegmenterKind segmenter = SegmenterKind::Oracle;
  double rule_fixed_suv = 2.5;
  double rule_relative_frac = 0.4;

  // mask propagation filter on the interim prediction; propagation goes
  // through rigid registration when register_before_mpdr is set, otherwise
  // the frames are assumed aligned
  bool use_mpdr = false;
  bool register_before_mpdr = false;

  nn::LasNetConfig net{};
  nn::OptimizerConfig optimizer{};
  double infer_overlap = 0.625;
  double prob_threshold = 0.5;
  double min_component_ml = 0.2;

  // eval.thresholds is overridden with phantom.ds_thresholds so predicted
  // and annotated Deauville scores share one rubric
  EvalOptions eval{};

  void validate() const;
};

// Thrown by run_pipeline with the failing stage attached; stages are
// "phantom", "train", "segment", "mpdr", "eval".
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string s, const std::string& msg)
      : std::runtime_error(msg), stage(std::move(s)) {}
};

struct PatientArtifacts {
  PatientStudy study;
  Volume3D pred1_labels, pred2_labels;
  PatientEval eval;
};

struct PipelineResult {
  EvalReport report;
  std::vector<PatientArtifacts> patients;
  std::optional<nn::LasNetParams> trained;  // present for the network segmenter
};

// Full synthetic experiment: generate n phantoms (optionally misregistered),
// produce predictions, optionally filter the interim prediction by mask
// propagation, then score and aggregate. Patients may be processed by a
// worker pool (LASPET_THREADS); all randomness derives from cfg.seed, so
// results are identical for any thread count.
PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace laspet
