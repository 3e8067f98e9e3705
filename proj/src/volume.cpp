#include "laspet/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "mvol I/O assumes a little-endian host");

namespace laspet {

const char* voxel_kind_name(VoxelKind k) {
  switch (k) {
    case VoxelKind::SUV: return "SUV";
    case VoxelKind::HU: return "HU";
    case VoxelKind::Label: return "LABEL";
    case VoxelKind::Prob: return "PROB";
  }
  return "?";
}

Volume3D::Volume3D(std::array<int, 3> d, std::array<double, 3> s, VoxelKind k,
                   double fill, std::array<double, 3> o)
    : dims(d), spacing(s), origin(o), kind(k) {
  validate();
  values.assign(static_cast<size_t>(numel()), fill);
}

void Volume3D::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw std::invalid_argument("Volume3D: dims must be >= 1");
    if (!(spacing[a] > 0.0))
      throw std::invalid_argument("Volume3D: spacing must be > 0");
  }
  if (!values.empty() && static_cast<int64_t>(values.size()) != numel())
    throw std::invalid_argument("Volume3D: values length != nx*ny*nz");
}

bool Volume3D::same_grid(const Volume3D& o, double tol) const {
  if (dims != o.dims) return false;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(spacing[a] - o.spacing[a]) > tol) return false;
    if (std::abs(origin[a] - o.origin[a]) > tol) return false;
  }
  return true;
}

namespace {

// Continuous voxel-center coordinate of a physical point.
inline std::array<double, 3> to_continuous(const Volume3D& v,
                                           const std::array<double, 3>& p) {
  return {(p[0] - v.origin[0]) / v.spacing[0] - 0.5,
          (p[1] - v.origin[1]) / v.spacing[1] - 0.5,
          (p[2] - v.origin[2]) / v.spacing[2] - 0.5};
}

inline double lerp(double a, double b, double t) { return a + (b - a) * t; }

double trilinear_clamped(const Volume3D& v, const std::array<double, 3>& u) {
  int x0 = static_cast<int>(std::floor(u[0]));
  int y0 = static_cast<int>(std::floor(u[1]));
  int z0 = static_cast<int>(std::floor(u[2]));
  double fx = u[0] - x0, fy = u[1] - y0, fz = u[2] - z0;
  auto cl = [](int i, int n) { return std::clamp(i, 0, n - 1); };
  int x1 = cl(x0 + 1, v.dims[0]), y1 = cl(y0 + 1, v.dims[1]), z1 = cl(z0 + 1, v.dims[2]);
  x0 = cl(x0, v.dims[0]);
  y0 = cl(y0, v.dims[1]);
  z0 = cl(z0, v.dims[2]);
  double c000 = v.at(x0, y0, z0), c100 = v.at(x1, y0, z0);
  double c010 = v.at(x0, y1, z0), c110 = v.at(x1, y1, z0);
  double c001 = v.at(x0, y0, z1), c101 = v.at(x1, y0, z1);
  double c011 = v.at(x0, y1, z1), c111 = v.at(x1, y1, z1);
  double c00 = lerp(c000, c100, fx), c10 = lerp(c010, c110, fx);
  double c01 = lerp(c001, c101, fx), c11 = lerp(c011, c111, fx);
  return lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz);
}

}  // namespace

double Volume3D::sample_trilinear(const std::array<double, 3>& p) const {
  return trilinear_clamped(*this, to_continuous(*this, p));
}

double Volume3D::sample_trilinear_zero(const std::array<double, 3>& p,
                                       bool* inside) const {
  auto u = to_continuous(*this, p);
  bool in = true;
  for (int a = 0; a < 3; ++a)
    in = in && u[a] >= 0.0 && u[a] <= dims[a] - 1.0;
  if (inside) *inside = in;
  if (!in) return 0.0;
  return trilinear_clamped(*this, u);
}

double Volume3D::sample_nearest(const std::array<double, 3>& p) const {
  auto u = to_continuous(*this, p);
  int x = std::clamp(static_cast<int>(std::lround(u[0])), 0, dims[0] - 1);
  int y = std::clamp(static_cast<int>(std::lround(u[1])), 0, dims[1] - 1);
  int z = std::clamp(static_cast<int>(std::lround(u[2])), 0, dims[2] - 1);
  return at(x, y, z);
}

double Volume3D::sample_nearest_zero(const std::array<double, 3>& p) const {
  auto u = to_continuous(*this, p);
  int x = static_cast<int>(std::lround(u[0]));
  int y = static_cast<int>(std::lround(u[1]));
  int z = static_cast<int>(std::lround(u[2]));
  if (!in_bounds(x, y, z)) return 0.0;
  return at(x, y, z);
}

Volume3D resample(const Volume3D& v, std::array<double, 3> target_spacing,
                  ResampleMode mode) {
  for (double s : target_spacing)
    if (!(s > 0.0)) throw std::invalid_argument("resample: target spacing must be > 0");
  if (v.kind == VoxelKind::Label && mode != ResampleMode::Nearest)
    throw std::invalid_argument("resample: label volumes require nearest mode");

  std::array<int, 3> out_dims;
  for (int a = 0; a < 3; ++a) {
    out_dims[a] = std::max<int>(
        1, static_cast<int>(std::ceil(v.dims[a] * v.spacing[a] / target_spacing[a] - 1e-9)));
  }
  Volume3D out(out_dims, target_spacing, v.kind, 0.0, v.origin);
  for (int z = 0; z < out_dims[2]; ++z)
    for (int y = 0; y < out_dims[1]; ++y)
      for (int x = 0; x < out_dims[0]; ++x) {
        auto p = out.voxel_center(x, y, z);
        out.at(x, y, z) = (mode == ResampleMode::Trilinear)
                              ? v.sample_trilinear(p)
                              : v.sample_nearest(p);
      }
  return out;
}

Volume3D normalize(const Volume3D& v, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("normalize: hi must be > lo");
  Volume3D out = v;
  out.kind = VoxelKind::Prob;
  const double inv = 1.0 / (hi - lo);
  for (double& x : out.values) x = std::clamp((x - lo) * inv, 0.0, 1.0);
  return out;
}

BoundingBox foreground_bbox(const Volume3D& pet, double suv_threshold) {
  BoundingBox box;
  bool any = false;
  std::array<int, 3> lo{pet.dims[0], pet.dims[1], pet.dims[2]};
  std::array<int, 3> hi{-1, -1, -1};
  int64_t idx = 0;
  for (int z = 0; z < pet.dims[2]; ++z)
    for (int y = 0; y < pet.dims[1]; ++y)
      for (int x = 0; x < pet.dims[0]; ++x, ++idx) {
        if (pet.values[idx] > suv_threshold) {
          any = true;
          lo[0] = std::min(lo[0], x); hi[0] = std::max(hi[0], x);
          lo[1] = std::min(lo[1], y); hi[1] = std::max(hi[1], y);
          lo[2] = std::min(lo[2], z); hi[2] = std::max(hi[2], z);
        }
      }
  if (!any) {
    // Negative scan: fall back to the whole volume instead of failing.
    box.min_voxel = {0, 0, 0};
    box.max_voxel = {pet.dims[0] - 1, pet.dims[1] - 1, pet.dims[2] - 1};
    return box;
  }
  box.min_voxel = lo;
  box.max_voxel = hi;
  return box;
}

Volume3D crop(const Volume3D& v, const BoundingBox& box) {
  for (int a = 0; a < 3; ++a) {
    if (box.min_voxel[a] < 0 || box.max_voxel[a] >= v.dims[a] ||
        box.min_voxel[a] > box.max_voxel[a])
      throw std::invalid_argument("crop: box outside volume dims");
  }
  auto sz = box.size();
  Volume3D out(sz, v.spacing, v.kind, 0.0,
               {v.origin[0] + box.min_voxel[0] * v.spacing[0],
                v.origin[1] + box.min_voxel[1] * v.spacing[1],
                v.origin[2] + box.min_voxel[2] * v.spacing[2]});
  for (int z = 0; z < sz[2]; ++z)
    for (int y = 0; y < sz[1]; ++y)
      for (int x = 0; x < sz[0]; ++x)
        out.at(x, y, z) =
            v.at(x + box.min_voxel[0], y + box.min_voxel[1], z + box.min_voxel[2]);
  return out;
}

Volume3D pad_to(const Volume3D& v, std::array<int, 3> dims, double fill) {
  for (int a = 0; a < 3; ++a)
    if (dims[a] < v.dims[a])
      throw std::invalid_argument("pad_to: target dims smaller than volume");
  Volume3D out(dims, v.spacing, v.kind, fill, v.origin);
  for (int z = 0; z < v.dims[2]; ++z)
    for (int y = 0; y < v.dims[1]; ++y)
      for (int x = 0; x < v.dims[0]; ++x) out.at(x, y, z) = v.at(x, y, z);
  return out;
}

namespace {

constexpr char kMagic[4] = {'M', 'V', 'O', 'L'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_mvol(const Volume3D& v, const std::string& path) {
  v.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_mvol: cannot open " + path);
  os.write(kMagic, 4);
  put<uint32_t>(os, kVersion);
  put<uint8_t>(os, static_cast<uint8_t>(v.kind));
  for (int a = 0; a < 3; ++a) put<uint32_t>(os, static_cast<uint32_t>(v.dims[a]));
  for (int a = 0; a < 3; ++a) put<double>(os, v.spacing[a]);
  for (int a = 0; a < 3; ++a) put<double>(os, v.origin[a]);
  for (double x : v.values) put<float>(os, static_cast<float>(x));
  if (!os) throw std::runtime_error("write_mvol: write failed for " + path);
}

Volume3D read_mvol(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_mvol: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("read_mvol: bad magic in " + path);
  uint32_t version = get<uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error("read_mvol: unsupported version in " + path);
  uint8_t kind = get<uint8_t>(is);
  if (kind > 3) throw std::runtime_error("read_mvol: bad kind in " + path);
  Volume3D v;
  v.kind = static_cast<VoxelKind>(kind);
  for (int a = 0; a < 3; ++a) v.dims[a] = static_cast<int>(get<uint32_t>(is));
  for (int a = 0; a < 3; ++a) v.spacing[a] = get<double>(is);
  for (int a = 0; a < 3; ++a) v.origin[a] = get<double>(is);
  if (!is) throw std::runtime_error("read_mvol: truncated header in " + path);
  v.validate();
  v.values.resize(static_cast<size_t>(v.numel()));
  for (double& x : v.values) x = static_cast<double>(get<float>(is));
  if (!is) throw std::runtime_error("read_mvol: truncated values in " + path);
  return v;
}

}  // namespace laspet
