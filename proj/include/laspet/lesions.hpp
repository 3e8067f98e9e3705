#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "laspet/volume.hpp"

namespace laspet {

struct Lesion {
  int id = 0;
  std::vector<int64_t> voxels;  // linear indices into the reference grid
  double suvmax = 0.0;
  double suvmean = 0.0;
  double suvpeak = 0.0;
  double volume_ml = 0.0;
  std::array<double, 3> centroid_mm{0.0, 0.0, 0.0};
  bool equivocal = false;
  std::optional<int> lds;  // lesion-level Deauville score, 1..5
};

// Labeled lesion components over a shared grid. Voxel lists are disjoint
// across lesions.
struct LesionSet {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  std::vector<Lesion> lesions;

  bool empty() const { return lesions.empty(); }
  // Rebuilds the label volume (lesion ids as values, 0 background).
  Volume3D to_labels() const;
  Volume3D to_mask() const;  // binary: 1 inside any lesion
};

// Voxel is foreground iff nonzero (> 0.5 for Prob maps use binarize first).
bool is_foreground(double value);

// Thresholds a probability map at `threshold` into a binary Label volume.
Volume3D binarize(const Volume3D& prob, double threshold = 0.5);

// Segmentation rule: voxel is lesion iff it lies inside the ROI and its
// SUV exceeds 2.5 OR 40% of the maximum SUV within the ROI (union of the
// fixed and relative thresholds).
Volume3D threshold_union(const Volume3D& pet, const Volume3D& roi,
                         double fixed_suv = 2.5, double relative_frac = 0.4);

enum class Connectivity { Faces6 = 6, Full26 = 26 };

// Labels connected foreground regions 1..K. Labeling order is deterministic:
// components are numbered by their minimum linear voxel index in scan order.
Volume3D connected_components(const Volume3D& mask,
                              Connectivity conn = Connectivity::Full26);

// Drops components whose volume is strictly below min_ml and compacts the
// remaining labels.
Volume3D remove_small(const Volume3D& labels, double min_ml = 0.2);

// One lesion entry per label, with per-lesion SUV statistics when a PET
// volume is provided (suvpeak uses a 1 ml sphere around the hottest voxel).
LesionSet extract_lesions(const Volume3D& labels, const Volume3D* pet = nullptr,
                          double peak_volume_ml = 1.0);

// Global Dice over binary masks; two empty masks agree perfectly (1.0).
double dice(const Volume3D& a, const Volume3D& b);

// Component-level error volumes: FPV sums predicted components with zero
// ground-truth overlap, FNV sums ground-truth components with zero predicted
// overlap. Adding voxels inside an already-overlapped component never
// changes the other side's count.
double fpv_ml(const Volume3D& pred, const Volume3D& gt,
              Connectivity conn = Connectivity::Full26);
double fnv_ml(const Volume3D& pred, const Volume3D& gt,
              Connectivity conn = Connectivity::Full26);

}  // namespace laspet
