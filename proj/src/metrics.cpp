#include "laspet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace laspet {

double mtv(const LesionSet& ls) {
  double sum = 0.0;
  for (const Lesion& l : ls.lesions) sum += l.volume_ml;
  return sum;
}

double tlg(const LesionSet& ls) {
  double sum = 0.0;
  for (const Lesion& l : ls.lesions) sum += l.volume_ml * l.suvmean;
  return sum;
}

namespace {

double dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

std::optional<double> dmax(const LesionSet& ls) {
  if (ls.lesions.size() < 2) return std::nullopt;
  double best = 0.0;
  for (size_t i = 0; i < ls.lesions.size(); ++i)
    for (size_t j = i + 1; j < ls.lesions.size(); ++j)
      best = std::max(best, dist(ls.lesions[i].centroid_mm, ls.lesions[j].centroid_mm));
  return best;
}

std::optional<double> dmax_voxel(const LesionSet& ls) {
  if (ls.lesions.size() < 2) return std::nullopt;
  Volume3D grid(ls.dims, ls.spacing, VoxelKind::Label, 0.0, ls.origin);
  double best = 0.0;
  for (size_t i = 0; i < ls.lesions.size(); ++i)
    for (size_t j = i + 1; j < ls.lesions.size(); ++j)
      for (int64_t vi : ls.lesions[i].voxels)
        for (int64_t vj : ls.lesions[j].voxels) {
          int xi = static_cast<int>(vi % grid.dims[0]);
          int yi = static_cast<int>((vi / grid.dims[0]) % grid.dims[1]);
          int zi = static_cast<int>(vi / (static_cast<int64_t>(grid.dims[0]) * grid.dims[1]));
          int xj = static_cast<int>(vj % grid.dims[0]);
          int yj = static_cast<int>((vj / grid.dims[0]) % grid.dims[1]);
          int zj = static_cast<int>(vj / (static_cast<int64_t>(grid.dims[0]) * grid.dims[1]));
          best = std::max(best, dist(grid.voxel_center(xi, yi, zi),
                                     grid.voxel_center(xj, yj, zj)));
        }
  return best;
}

std::optional<double> dspleen(const LesionSet& ls, const Volume3D& spleen_mask) {
  std::array<double, 3> sc{0.0, 0.0, 0.0};
  int64_t n = 0;
  int64_t idx = 0;
  for (int z = 0; z < spleen_mask.dims[2]; ++z)
    for (int y = 0; y < spleen_mask.dims[1]; ++y)
      for (int x = 0; x < spleen_mask.dims[0]; ++x, ++idx)
        if (is_foreground(spleen_mask.values[static_cast<size_t>(idx)])) {
          auto c = spleen_mask.voxel_center(x, y, z);
          sc[0] += c[0];
          sc[1] += c[1];
          sc[2] += c[2];
          ++n;
        }
  if (n == 0) throw std::invalid_argument("dspleen: empty spleen mask");
  for (int a = 0; a < 3; ++a) sc[a] /= static_cast<double>(n);
  if (ls.lesions.empty()) return std::nullopt;
  double best = 0.0;
  for (const Lesion& l : ls.lesions) best = std::max(best, dist(l.centroid_mm, sc));
  return best;
}

double delta_suvmax(double suvmax1, double suvmax2) {
  if (suvmax1 <= 0.0) throw std::invalid_argument("delta_suvmax: baseline suvmax must be > 0");
  return 100.0 * (suvmax1 - suvmax2) / suvmax1;
}

double suvpeak(const Volume3D& pet, const std::vector<int64_t>& voxels,
               double peak_volume_ml) {
  if (voxels.empty()) throw std::invalid_argument("suvpeak: empty lesion");
  int64_t hottest = voxels.front();
  double hot_val = pet.values[static_cast<size_t>(hottest)];
  for (int64_t vi : voxels) {
    double v = pet.values[static_cast<size_t>(vi)];
    if (v > hot_val) {
      hot_val = v;
      hottest = vi;
    }
  }
  int hx = static_cast<int>(hottest % pet.dims[0]);
  int hy = static_cast<int>((hottest / pet.dims[0]) % pet.dims[1]);
  int hz = static_cast<int>(hottest / (static_cast<int64_t>(pet.dims[0]) * pet.dims[1]));
  auto center = pet.voxel_center(hx, hy, hz);
  const double radius =
      std::cbrt(3.0 * peak_volume_ml * 1000.0 / (4.0 * std::numbers::pi));
  double sum = 0.0;
  int64_t n = 0;
  for (int64_t vi : voxels) {
    int x = static_cast<int>(vi % pet.dims[0]);
    int y = static_cast<int>((vi / pet.dims[0]) % pet.dims[1]);
    int z = static_cast<int>(vi / (static_cast<int64_t>(pet.dims[0]) * pet.dims[1]));
    if (dist(pet.voxel_center(x, y, z), center) <= radius) {
      sum += pet.values[static_cast<size_t>(vi)];
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

double mask_mean(const Volume3D& pet, const Volume3D& mask) {
  if (!pet.same_grid(mask)) throw std::invalid_argument("mask_mean: grid mismatch");
  double sum = 0.0;
  int64_t n = 0;
  for (int64_t i = 0; i < pet.numel(); ++i)
    if (is_foreground(mask.values[static_cast<size_t>(i)])) {
      sum += pet.values[static_cast<size_t>(i)];
      ++n;
    }
  if (n == 0) throw std::invalid_argument("mask_mean: empty mask");
  return sum / static_cast<double>(n);
}

std::optional<double> qpet(const LesionSet& residual, const Volume3D& liver_mask,
                           const Volume3D& pet2) {
  const double liver = mask_mean(pet2, liver_mask);
  if (residual.empty()) return std::nullopt;
  double peak = -1e300;
  for (const Lesion& l : residual.lesions) peak = std::max(peak, l.suvpeak);
  return peak / liver;
}

BaselineMetrics baseline_metrics(const LesionSet& ls, const Volume3D* spleen_mask) {
  BaselineMetrics m;
  m.n_lesions = static_cast<int>(ls.lesions.size());
  m.mtv_ml = mtv(ls);
  m.tlg_ml_suv = tlg(ls);
  for (const Lesion& l : ls.lesions) m.suvmax = std::max(m.suvmax, l.suvmax);
  m.dmax_mm = dmax(ls);
  if (spleen_mask) m.dspleen_mm = dspleen(ls, *spleen_mask);
  return m;
}

InterimMetrics interim_metrics(const LesionSet& residual, double baseline_suvmax,
                               const Volume3D& pet2, const Volume3D* liver_mask) {
  InterimMetrics m;
  m.n_residual = static_cast<int>(residual.lesions.size());
  for (const Lesion& l : residual.lesions) m.suvmax = std::max(m.suvmax, l.suvmax);
  if (baseline_suvmax > 0.0)
    m.delta_suvmax_pct = delta_suvmax(baseline_suvmax, m.suvmax);
  if (liver_mask) m.qpet = qpet(residual, *liver_mask, pet2);
  return m;
}

}  // namespace laspet
