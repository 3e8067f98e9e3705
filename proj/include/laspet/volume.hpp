#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace laspet {

enum class VoxelKind : uint8_t { SUV = 0, HU = 1, Label = 2, Prob = 3 };

const char* voxel_kind_name(VoxelKind k);

// Dense scalar 3D grid with physical spacing and origin. Values are stored
// x-fastest (index = x + nx*(y + ny*z)) and kept in double for metric math;
// file storage is float32 (see mvol format below).
//
// Geometry convention: `origin` is the physical corner of the grid; the
// value of voxel (i,j,k) sits at origin + (index + 0.5) * spacing.
struct Volume3D {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  VoxelKind kind = VoxelKind::SUV;
  std::vector<double> values;

  Volume3D() = default;
  Volume3D(std::array<int, 3> d, std::array<double, 3> s, VoxelKind k,
           double fill = 0.0, std::array<double, 3> o = {0.0, 0.0, 0.0});

  int64_t numel() const {
    return static_cast<int64_t>(dims[0]) * dims[1] * dims[2];
  }
  int64_t index(int x, int y, int z) const {
    return x + static_cast<int64_t>(dims[0]) * (y + static_cast<int64_t>(dims[1]) * z);
  }
  double at(int x, int y, int z) const { return values[index(x, y, z)]; }
  double& at(int x, int y, int z) { return values[index(x, y, z)]; }
  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }
  bool same_grid(const Volume3D& o, double tol = 1e-9) const;

  double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }
  double voxel_volume_ml() const { return voxel_volume_mm3() / 1000.0; }

  // Physical position of a voxel center.
  std::array<double, 3> voxel_center(int x, int y, int z) const {
    return {origin[0] + (x + 0.5) * spacing[0], origin[1] + (y + 0.5) * spacing[1],
            origin[2] + (z + 0.5) * spacing[2]};
  }

  // Trilinear sample at a physical point; outside samples clamp to the edge.
  double sample_trilinear(const std::array<double, 3>& p) const;
  // Trilinear sample that is zero outside the grid; *inside is set to false
  // when the point falls outside (used by registration overlap masking).
  double sample_trilinear_zero(const std::array<double, 3>& p, bool* inside = nullptr) const;
  // Nearest-neighbor sample; outside samples clamp to the edge.
  double sample_nearest(const std::array<double, 3>& p) const;
  // Nearest-neighbor sample that is zero outside the grid.
  double sample_nearest_zero(const std::array<double, 3>& p) const;

  void validate() const;  // throws std::invalid_argument on broken invariants
};

// Inclusive voxel-index box.
struct BoundingBox {
  std::array<int, 3> min_voxel{0, 0, 0};
  std::array<int, 3> max_voxel{0, 0, 0};

  std::array<int, 3> size() const {
    return {max_voxel[0] - min_voxel[0] + 1, max_voxel[1] - min_voxel[1] + 1,
            max_voxel[2] - min_voxel[2] + 1};
  }
  bool contains(int x, int y, int z) const {
    return x >= min_voxel[0] && x <= max_voxel[0] && y >= min_voxel[1] &&
           y <= max_voxel[1] && z >= min_voxel[2] && z <= max_voxel[2];
  }
};

enum class ResampleMode { Trilinear, Nearest };

// Resamples to the target spacing. Output dims are ceil(dims*spacing/target)
// so the physical extent is preserved within one voxel. Label volumes must
// use nearest mode.
Volume3D resample(const Volume3D& v, std::array<double, 3> target_spacing,
                  ResampleMode mode);

// Linear rescale of [lo, hi] onto [0, 1] with clamping; output kind is Prob.
Volume3D normalize(const Volume3D& v, double lo, double hi);

// Tightest box containing every voxel with SUV strictly above the threshold;
// falls back to the whole volume when nothing exceeds it.
BoundingBox foreground_bbox(const Volume3D& pet, double suv_threshold);

// Extracts the box; spacing is kept and the origin shifts by min*spacing.
Volume3D crop(const Volume3D& v, const BoundingBox& box);

// Zero-pads on the high side up to `dims` (volumes cropped per time point are
// padded to a common shape before being paired).
Volume3D pad_to(const Volume3D& v, std::array<int, 3> dims, double fill = 0.0);

// mvol file format, little-endian:
//   magic "MVOL" | u32 version=1 | u8 kind | 3*u32 dims
//   | 3*f64 spacing | 3*f64 origin | nx*ny*nz f32 values, x-fastest
Volume3D read_mvol(const std::string& path);
void write_mvol(const Volume3D& v, const std::string& path);

}  // namespace laspet
