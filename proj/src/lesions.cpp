#include "laspet/lesions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "laspet/metrics.hpp"

namespace laspet {

bool is_foreground(double value) { return value != 0.0; }

Volume3D LesionSet::to_labels() const {
  Volume3D out(dims, spacing, VoxelKind::Label, 0.0, origin);
  for (const Lesion& l : lesions)
    for (int64_t idx : l.voxels) out.values[static_cast<size_t>(idx)] = l.id;
  return out;
}

Volume3D LesionSet::to_mask() const {
  Volume3D out = to_labels();
  for (double& v : out.values) v = v != 0.0 ? 1.0 : 0.0;
  return out;
}

Volume3D binarize(const Volume3D& prob, double threshold) {
  Volume3D out = prob;
  out.kind = VoxelKind::Label;
  for (double& v : out.values) v = v > threshold ? 1.0 : 0.0;
  return out;
}

Volume3D threshold_union(const Volume3D& pet, const Volume3D& roi,
                         double fixed_suv, double relative_frac) {
  if (pet.kind != VoxelKind::SUV)
    throw std::invalid_argument("threshold_union: PET volume expected");
  if (!pet.same_grid(roi))
    throw std::invalid_argument("threshold_union: grid mismatch");
  double roi_max = 0.0;
  bool roi_any = false;
  for (int64_t i = 0; i < pet.numel(); ++i) {
    if (is_foreground(roi.values[static_cast<size_t>(i)])) {
      roi_any = true;
      roi_max = std::max(roi_max, pet.values[static_cast<size_t>(i)]);
    }
  }
  if (!roi_any) throw std::invalid_argument("threshold_union: empty ROI");
  const double rel_cut = relative_frac * roi_max;
  Volume3D out(pet.dims, pet.spacing, VoxelKind::Label, 0.0, pet.origin);
  for (int64_t i = 0; i < pet.numel(); ++i) {
    size_t s = static_cast<size_t>(i);
    if (!is_foreground(roi.values[s])) continue;
    double suv = pet.values[s];
    if (suv > fixed_suv || suv > rel_cut) out.values[s] = 1.0;
  }
  return out;
}

namespace {

struct NeighborTable {
  std::array<std::array<int, 3>, 26> offs;
  int count = 0;
};

NeighborTable neighbors(Connectivity conn) {
  NeighborTable t;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        if (conn == Connectivity::Faces6 && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1)
          continue;
        t.offs[t.count++] = {dx, dy, dz};
      }
  return t;
}

}  // namespace

Volume3D connected_components(const Volume3D& mask, Connectivity conn) {
  Volume3D labels(mask.dims, mask.spacing, VoxelKind::Label, 0.0, mask.origin);
  const NeighborTable nbr = neighbors(conn);
  std::vector<int64_t> stack;
  int next_label = 0;
  int64_t idx = 0;
  for (int z = 0; z < mask.dims[2]; ++z)
    for (int y = 0; y < mask.dims[1]; ++y)
      for (int x = 0; x < mask.dims[0]; ++x, ++idx) {
        size_t s = static_cast<size_t>(idx);
        if (!is_foreground(mask.values[s]) || labels.values[s] != 0.0) continue;
        ++next_label;
        labels.values[s] = next_label;
        stack.assign(1, idx);
        while (!stack.empty()) {
          int64_t cur = stack.back();
          stack.pop_back();
          int cx = static_cast<int>(cur % mask.dims[0]);
          int cy = static_cast<int>((cur / mask.dims[0]) % mask.dims[1]);
          int cz = static_cast<int>(cur / (static_cast<int64_t>(mask.dims[0]) * mask.dims[1]));
          for (int n = 0; n < nbr.count; ++n) {
            int nx = cx + nbr.offs[n][0];
            int ny = cy + nbr.offs[n][1];
            int nz = cz + nbr.offs[n][2];
            if (!mask.in_bounds(nx, ny, nz)) continue;
            int64_t ni = mask.index(nx, ny, nz);
            size_t ns = static_cast<size_t>(ni);
            if (is_foreground(mask.values[ns]) && labels.values[ns] == 0.0) {
              labels.values[ns] = next_label;
              stack.push_back(ni);
            }
          }
        }
      }
  return labels;
}

Volume3D remove_small(const Volume3D& labels, double min_ml) {
  int max_label = 0;
  for (double v : labels.values) max_label = std::max(max_label, static_cast<int>(v));
  std::vector<int64_t> counts(static_cast<size_t>(max_label) + 1, 0);
  for (double v : labels.values) ++counts[static_cast<size_t>(v)];
  const double vox_ml = labels.voxel_volume_ml();
  std::vector<int> remap(static_cast<size_t>(max_label) + 1, 0);
  int next = 0;
  for (int l = 1; l <= max_label; ++l) {
    if (counts[static_cast<size_t>(l)] == 0) continue;
    if (counts[static_cast<size_t>(l)] * vox_ml < min_ml) continue;
    remap[static_cast<size_t>(l)] = ++next;
  }
  Volume3D out = labels;
  for (double& v : out.values) v = remap[static_cast<size_t>(v)];
  return out;
}

LesionSet extract_lesions(const Volume3D& labels, const Volume3D* pet,
                          double peak_volume_ml) {
  if (pet && !labels.same_grid(*pet))
    throw std::invalid_argument("extract_lesions: PET grid mismatch");
  int max_label = 0;
  for (double v : labels.values) max_label = std::max(max_label, static_cast<int>(v));

  LesionSet set;
  set.dims = labels.dims;
  set.spacing = labels.spacing;
  set.origin = labels.origin;
  if (max_label == 0) return set;

  std::vector<Lesion> lesions(static_cast<size_t>(max_label));
  for (int l = 0; l < max_label; ++l) lesions[static_cast<size_t>(l)].id = l + 1;

  int64_t idx = 0;
  for (int z = 0; z < labels.dims[2]; ++z)
    for (int y = 0; y < labels.dims[1]; ++y)
      for (int x = 0; x < labels.dims[0]; ++x, ++idx) {
        int l = static_cast<int>(labels.values[static_cast<size_t>(idx)]);
        if (l == 0) continue;
        Lesion& les = lesions[static_cast<size_t>(l - 1)];
        les.voxels.push_back(idx);
        auto c = labels.voxel_center(x, y, z);
        les.centroid_mm[0] += c[0];
        les.centroid_mm[1] += c[1];
        les.centroid_mm[2] += c[2];
      }

  const double vox_ml = labels.voxel_volume_ml();
  for (Lesion& les : lesions) {
    const double n = static_cast<double>(les.voxels.size());
    if (n > 0)
      for (int a = 0; a < 3; ++a) les.centroid_mm[a] /= n;
    les.volume_ml = n * vox_ml;
    if (pet && !les.voxels.empty()) {
      double sum = 0.0, mx = -1e300;
      for (int64_t vi : les.voxels) {
        double suv = pet->values[static_cast<size_t>(vi)];
        sum += suv;
        mx = std::max(mx, suv);
      }
      les.suvmax = mx;
      les.suvmean = sum / n;
      les.suvpeak = suvpeak(*pet, les.voxels, peak_volume_ml);
    }
  }
  // Drop labels that vanished (possible after mask edits), keep id order.
  std::erase_if(lesions, [](const Lesion& l) { return l.voxels.empty(); });
  set.lesions = std::move(lesions);
  return set;
}

double dice(const Volume3D& a, const Volume3D& b) {
  if (!a.same_grid(b)) throw std::invalid_argument("dice: grid mismatch");
  int64_t na = 0, nb = 0, inter = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    bool fa = is_foreground(a.values[static_cast<size_t>(i)]);
    bool fb = is_foreground(b.values[static_cast<size_t>(i)]);
    na += fa;
    nb += fb;
    inter += (fa && fb);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

namespace {

// Total volume of components in `src` that have no foreground overlap in
// `other`.
double unmatched_component_volume(const Volume3D& src, const Volume3D& other,
                                  Connectivity conn) {
  if (!src.same_grid(other))
    throw std::invalid_argument("fpv/fnv: grid mismatch");
  Volume3D labels = connected_components(src, conn);
  int max_label = 0;
  for (double v : labels.values) max_label = std::max(max_label, static_cast<int>(v));
  std::vector<int64_t> counts(static_cast<size_t>(max_label) + 1, 0);
  std::vector<char> overlapped(static_cast<size_t>(max_label) + 1, 0);
  for (int64_t i = 0; i < labels.numel(); ++i) {
    int l = static_cast<int>(labels.values[static_cast<size_t>(i)]);
    if (l == 0) continue;
    ++counts[static_cast<size_t>(l)];
    if (is_foreground(other.values[static_cast<size_t>(i)]))
      overlapped[static_cast<size_t>(l)] = 1;
  }
  double ml = 0.0;
  for (int l = 1; l <= max_label; ++l)
    if (!overlapped[static_cast<size_t>(l)])
      ml += counts[static_cast<size_t>(l)] * src.voxel_volume_ml();
  return ml;
}

}  // namespace

double fpv_ml(const Volume3D& pred, const Volume3D& gt, Connectivity conn) {
  return unmatched_component_volume(pred, gt, conn);
}

double fnv_ml(const Volume3D& pred, const Volume3D& gt, Connectivity conn) {
  return unmatched_component_volume(gt, pred, conn);
}

}  // namespace laspet
