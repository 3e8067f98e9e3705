#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "laspet/lesions.hpp"
#include "laspet/response.hpp"
#include "laspet/volume.hpp"

namespace laspet {

// Spherical organ reference region: center as a fraction of the physical
// extent, plus radius and uptake level.
struct OrganSpec {
  std::array<double, 3> center_frac{0.5, 0.5, 0.5};
  double radius_mm = 10.0;
  double suv = 1.0;
};

struct PhantomConfig {
  uint64_t seed = 0;
  std::array<int, 3> dims{48, 48, 48};
  std::array<double, 3> spacing{3.0, 3.0, 3.0};

  int n_baseline_lesions = 3;
  double residual_fraction = 0.5;  // fraction of baseline lesions persisting
  int new_lesion_count = 0;        // lesions present only at PET2
  double equivocal_fraction = 0.0;

  std::array<double, 2> lesion_radius_mm{6.0, 9.5};
  std::array<double, 2> lesion_peak_suv{2.2, 5.0};  // baseline inserted peaks
  double lesion_edge_floor = 0.7;   // falloff profile value at the support edge
  std::array<double, 2> residual_shrink{0.7, 0.9};

  double background_suv = 1.0;
  double air_suv = 0.02;
  double soft_tissue_hu = 40.0;
  double air_hu = -1000.0;
  double noise_sigma = 0.1;  // truncated at 3 sigma

  OrganSpec liver{{0.70, 0.38, 0.40}, 12.0, 2.6};
  OrganSpec spleen{{0.28, 0.36, 0.42}, 9.0, 1.9};
  OrganSpec mediastinum{{0.50, 0.62, 0.68}, 7.5, 1.6};

  // Bins for assigning residual-lesion Deauville scores from measured qPET.
  // Aligned with the organ levels above so DS3 peaks sit between the
  // mediastinum and liver and DS4+ peaks above the liver.
  QpetThresholds ds_thresholds{0.5, 2.0 / 3.0, 1.0, 1.3};

  int max_place_tries = 200;

  void validate() const;
};

struct Demographics {
  double age_years = 0.0;
  std::string sex;  // "m" or "f"
  double weight_kg = 0.0;
  double injected_dose_mbq_per_kg = 0.0;
  std::string scanner;  // "A" or "B"
};

// One synthetic longitudinal study: baseline (pet1/ct1, gt1) and interim
// (pet2/ct2, gt2) on a shared grid, organ masks on the interim frame, and
// measured per-lesion statistics as ground truth.
struct PatientStudy {
  std::string id;
  Volume3D pet1, ct1, pet2, ct2;
  LesionSet gt1, gt2;  // gt2 lesions carry lds (3..5) and equivocal flags
  Volume3D liver_mask, spleen_mask, mediastinum_mask, body_mask;
  Demographics demographics;
  PhantomConfig config;
};

// Deterministic generation for a fixed config. Throws std::runtime_error
// when lesions cannot be placed without overlap after bounded retries.
PatientStudy generate(const PhantomConfig& cfg);

// Rigidly moves the baseline volumes (content shifts by shift_mm and rotates
// by rot_deg about the volume center); gt1 is re-extracted from the moved
// label volume with ids and flags preserved. Interim volumes and the organ
// masks stay in the reference frame.
PatientStudy inject_misregistration(const PatientStudy& s,
                                    std::array<double, 3> shift_mm,
                                    std::array<double, 3> rot_deg);

}  // namespace laspet
