#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "laspet/lesions.hpp"
#include "laspet/volume.hpp"

namespace laspet {

// Patient-level summary of a baseline scan.
struct BaselineMetrics {
  double mtv_ml = 0.0;
  double tlg_ml_suv = 0.0;
  double suvmax = 0.0;
  std::optional<double> dmax_mm;     // absent when < 2 lesions
  std::optional<double> dspleen_mm;  // absent when no lesions or no spleen mask
  int n_lesions = 0;
};

// Patient-level summary of an interim scan relative to baseline.
struct InterimMetrics {
  double suvmax = 0.0;
  std::optional<double> delta_suvmax_pct;  // absent when baseline suvmax <= 0
  std::optional<double> qpet;              // absent when no residual lesions
  int n_residual = 0;
};

double mtv(const LesionSet& ls);
double tlg(const LesionSet& ls);

// Max pairwise centroid distance; absent with fewer than two lesions.
std::optional<double> dmax(const LesionSet& ls);
// Variant over extreme voxel pairs instead of centroids.
std::optional<double> dmax_voxel(const LesionSet& ls);

// Max lesion-centroid distance to the spleen mask centroid.
// Throws on an empty spleen mask; absent when the set has no lesions.
std::optional<double> dspleen(const LesionSet& ls, const Volume3D& spleen_mask);

// Percent reduction, positive when interim is lower. Requires suvmax1 > 0.
double delta_suvmax(double suvmax1, double suvmax2);

// Mean SUV over lesion voxels whose centers fall inside a sphere of
// peak_volume_ml centered at the lesion's hottest voxel.
double suvpeak(const Volume3D& pet, const std::vector<int64_t>& voxels,
               double peak_volume_ml = 1.0);

double mask_mean(const Volume3D& pet, const Volume3D& mask);

// suvpeak of the hottest residual lesion over mean liver SUV.
// Absent when residual is empty; throws on an empty liver mask.
std::optional<double> qpet(const LesionSet& residual, const Volume3D& liver_mask,
                           const Volume3D& pet2);

BaselineMetrics baseline_metrics(const LesionSet& ls,
                                 const Volume3D* spleen_mask = nullptr);
InterimMetrics interim_metrics(const LesionSet& residual, double baseline_suvmax,
                               const Volume3D& pet2,
                               const Volume3D* liver_mask = nullptr);

}  // namespace laspet
