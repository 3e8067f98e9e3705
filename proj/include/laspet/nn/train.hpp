#pragma once

#include <cstdint>
#include <vector>

#include "laspet/nn/lasnet.hpp"
#include "laspet/phantom.hpp"
#include "laspet/rng.hpp"

namespace laspet::nn {

// AdamW with decoupled weight decay; the learning rate is cosine-annealed
// from lr to 0 over the run.
struct OptimizerConfig {
  int steps = 200;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool cosine = true;
  bool augment = true;
  double lesion_center_prob = 8.0 / 9.0;
  uint64_t seed = 0;

  void validate() const;
};

// One training sample: stacked PET+CT patches [2,P,P,P] for both time points
// and binary lesion targets [1,P,P,P].
struct PatchPair {
  Tensor in1, in2, y1, y2;
};

// Draws a patch pair from a study. The patch is centered on a random lesion
// voxel (union over both time points) with probability lesion_center_prob,
// otherwise placed uniformly; corners are clamped to the volume. Both time
// points get the same crop and, when augment is set, the same random
// rotation (within ±25° per axis), axis flips, and zoom (0.8 to 1.2).
// Images are sampled trilinearly, labels nearest; without augmentation the
// crop is an exact voxel copy.
PatchPair sample_patch_pair(const PatientStudy& study, int patch, bool augment,
                            double lesion_center_prob, Rng& rng);

struct TrainResult {
  LasNetParams params;
  std::vector<double> loss_trace;  // joint loss at each step, before the update
};

// Desk-scale training loop over patches sampled from the given studies.
// Deterministic for a fixed opt.seed (init and sampling streams are derived
// from it).
TrainResult train_toy(const std::vector<PatientStudy>& studies,
                      const LasNetConfig& cfg, const OptimizerConfig& opt);

}  // namespace laspet::nn
