#pragma once

#include <array>
#include <cstdint>

#include "laspet/volume.hpp"

namespace laspet {

// Rigid sampling map: a voxel at physical position x in the output grid reads
// the source volume at R*x + t. Stored raw (no rotation-center convention) so
// composition and inversion are plain matrix algebra.
struct RigidTransform {
  std::array<std::array<double, 3>, 3> rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  std::array<double, 3> translation{0.0, 0.0, 0.0};

  static RigidTransform identity() { return RigidTransform{}; }
  // Euler rotation (XYZ order, degrees) about `center`, then shift by
  // `shift_mm`. Returns the map that moves image content that way, i.e.
  // sampling with inverse() realizes the motion.
  static RigidTransform about_center(std::array<double, 3> center,
                                     std::array<double, 3> rot_deg,
                                     std::array<double, 3> shift_mm);

  std::array<double, 3> apply(const std::array<double, 3>& p) const;
  RigidTransform inverse() const;
  // c = a.then(b) satisfies apply_transform(v, c) ==
  // apply_transform(apply_transform(v, a), b).
  RigidTransform then(const RigidTransform& b) const;

  // Rotation angle in degrees (axis-angle magnitude).
  double rotation_angle_deg() const;
  double det() const;
  void validate(double tol = 1e-6) const;
};

struct RegisterConfig {
  std::array<int, 3> pyramid{4, 2, 1};  // downsampling factors, coarse to fine
  int max_iters = 80;                   // per pyramid level
  double rot_step_deg = 2.0;            // initial parameter steps
  double trans_step_mm = 4.0;
  double tol = 1e-7;                    // relative MSE improvement floor
  double grid_span_mm = 9.0;            // translation initializer half-range
  double grid_step_mm = 3.0;
};

struct RegisterResult {
  RigidTransform transform;
  double mse = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Finds T minimizing mean squared intensity difference between
// apply_transform(moving, T) and fixed. Multi-resolution descent over 6
// parameters (Euler angles about the fixed-volume center + translation) with
// a coarse translation grid initializer. Deterministic.
RegisterResult register_rigid(const Volume3D& moving, const Volume3D& fixed,
                              const RegisterConfig& cfg = {});

// Resamples v through the map (output grid = v's grid). Outside-volume reads
// are zero. Nearest mode required for Label volumes.
Volume3D apply_transform(const Volume3D& v, const RigidTransform& t,
                         ResampleMode mode);

// Keeps the PET2 components that overlap the propagated PET1 mask by at
// least one voxel; all other components are removed. Labels are compacted.
Volume3D mpdr(const Volume3D& pred1_mask_in_pet2_frame, const Volume3D& pred2_labels);

}  // namespace laspet
