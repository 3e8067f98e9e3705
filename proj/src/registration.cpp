#include "laspet/registration.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "laspet/lesions.hpp"

namespace laspet {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i][k] * b[k][j];
      c[i][j] = s;
    }
  return c;
}

Mat3 transpose(const Mat3& a) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = a[j][i];
  return t;
}

std::array<double, 3> matvec(const Mat3& a, const std::array<double, 3>& v) {
  return {a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
          a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
          a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2]};
}

Mat3 euler_xyz(double rx, double ry, double rz) {
  const double cx = std::cos(rx), sx = std::sin(rx);
  const double cy = std::cos(ry), sy = std::sin(ry);
  const double cz = std::cos(rz), sz = std::sin(rz);
  Mat3 Rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
  Mat3 Ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  Mat3 Rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
  return matmul(Rz, matmul(Ry, Rx));
}

std::array<double, 3> volume_center(const Volume3D& v) {
  return {v.origin[0] + 0.5 * v.dims[0] * v.spacing[0],
          v.origin[1] + 0.5 * v.dims[1] * v.spacing[1],
          v.origin[2] + 0.5 * v.dims[2] * v.spacing[2]};
}

constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace

RigidTransform RigidTransform::about_center(std::array<double, 3> center,
                                            std::array<double, 3> rot_deg,
                                            std::array<double, 3> shift_mm) {
  RigidTransform t;
  t.rotation = euler_xyz(rot_deg[0] * kDegToRad, rot_deg[1] * kDegToRad,
                         rot_deg[2] * kDegToRad);
  // forward motion x -> R(x - c) + c + s, stored as x -> R x + t
  auto rc = matvec(t.rotation, center);
  for (int i = 0; i < 3; ++i)
    t.translation[i] = center[i] + shift_mm[i] - rc[i];
  return t;
}

std::array<double, 3> RigidTransform::apply(const std::array<double, 3>& p) const {
  auto r = matvec(rotation, p);
  return {r[0] + translation[0], r[1] + translation[1], r[2] + translation[2]};
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = transpose(rotation);
  auto rt = matvec(inv.rotation, translation);
  inv.translation = {-rt[0], -rt[1], -rt[2]};
  return inv;
}

RigidTransform RigidTransform::then(const RigidTransform& b) const {
  // apply(v, a) then apply(., b) samples at a.R*(b.R*x + b.t) + a.t
  RigidTransform c;
  c.rotation = matmul(rotation, b.rotation);
  auto rt = matvec(rotation, b.translation);
  for (int i = 0; i < 3; ++i) c.translation[i] = rt[i] + translation[i];
  return c;
}

double RigidTransform::rotation_angle_deg() const {
  double tr = rotation[0][0] + rotation[1][1] + rotation[2][2];
  double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) / kDegToRad;
}

double RigidTransform::det() const {
  const Mat3& r = rotation;
  return r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
         r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
         r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
}

void RigidTransform::validate(double tol) const {
  if (std::abs(det() - 1.0) > tol)
    throw std::invalid_argument("RigidTransform: rotation determinant != +1");
  Mat3 should_be_id = matmul(rotation, transpose(rotation));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double want = i == j ? 1.0 : 0.0;
      if (std::abs(should_be_id[i][j] - want) > tol)
        throw std::invalid_argument("RigidTransform: rotation not orthonormal");
    }
}

Volume3D apply_transform(const Volume3D& v, const RigidTransform& t,
                         ResampleMode mode) {
  if (v.kind == VoxelKind::Label && mode != ResampleMode::Nearest)
    throw std::invalid_argument("apply_transform: labels need nearest mode");
  Volume3D out(v.dims, v.spacing, v.kind, 0.0, v.origin);
  for (int z = 0; z < v.dims[2]; ++z)
    for (int y = 0; y < v.dims[1]; ++y)
      for (int x = 0; x < v.dims[0]; ++x) {
        auto p = t.apply(out.voxel_center(x, y, z));
        double val = mode == ResampleMode::Nearest ? v.sample_nearest_zero(p)
                                                   : v.sample_trilinear_zero(p);
        out.values[out.index(x, y, z)] = val;
      }
  return out;
}

namespace {

// MSE between moving sampled through the centered 6-parameter map and fixed,
// over fixed-grid voxels.
double mse_at(const Volume3D& moving, const Volume3D& fixed,
              const std::array<double, 3>& center, const double p[6]) {
  Mat3 r = euler_xyz(p[0], p[1], p[2]);
  double acc = 0.0;
  int64_t n = 0;
  for (int z = 0; z < fixed.dims[2]; ++z)
    for (int y = 0; y < fixed.dims[1]; ++y)
      for (int x = 0; x < fixed.dims[0]; ++x) {
        auto q = fixed.voxel_center(x, y, z);
        std::array<double, 3> d{q[0] - center[0], q[1] - center[1], q[2] - center[2]};
        auto rd = matvec(r, d);
        std::array<double, 3> src{rd[0] + center[0] + p[3], rd[1] + center[1] + p[4],
                                  rd[2] + center[2] + p[5]};
        double m = moving.sample_trilinear_zero(src);
        double f = fixed.values[fixed.index(x, y, z)];
        acc += (m - f) * (m - f);
        ++n;
      }
  return acc / static_cast<double>(n);
}

Volume3D shrink(const Volume3D& v, int factor) {
  if (factor <= 1) return v;
  std::array<double, 3> sp{v.spacing[0] * factor, v.spacing[1] * factor,
                           v.spacing[2] * factor};
  return resample(v, sp, ResampleMode::Trilinear);
}

}  // namespace

RegisterResult register_rigid(const Volume3D& moving, const Volume3D& fixed,
                              const RegisterConfig& cfg) {
  if (moving.kind != fixed.kind)
    throw std::invalid_argument("register_rigid: kind mismatch");
  const auto center = volume_center(fixed);

  // both volumes are rescaled to the fixed volume's intensity range so the
  // zero fill for outside-grid reads coincides with the darkest level (HU
  // air would otherwise read as bright tissue)
  double lo = fixed.values[0], hi = fixed.values[0];
  for (double v : fixed.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo))
    throw std::invalid_argument("register_rigid: fixed volume has no contrast");
  auto rescaled = [&](const Volume3D& v) {
    Volume3D n = v;
    for (double& x : n.values) x = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
    return n;
  };
  const Volume3D moving_n = rescaled(moving);
  const Volume3D fixed_n = rescaled(fixed);

  double p[6] = {0, 0, 0, 0, 0, 0};
  RegisterResult res;
  res.converged = false;

  bool first_level = true;
  for (int factor : cfg.pyramid) {
    Volume3D mv = shrink(moving_n, factor);
    Volume3D fx = shrink(fixed_n, factor);

    if (first_level) {
      // coarse translation sweep around zero
      double best = mse_at(mv, fx, center, p);
      double best_t[3] = {0, 0, 0};
      int steps = static_cast<int>(std::floor(cfg.grid_span_mm / cfg.grid_step_mm));
      for (int iz = -steps; iz <= steps; ++iz)
        for (int iy = -steps; iy <= steps; ++iy)
          for (int ix = -steps; ix <= steps; ++ix) {
            double q[6] = {0, 0, 0, ix * cfg.grid_step_mm, iy * cfg.grid_step_mm,
                           iz * cfg.grid_step_mm};
            double e = mse_at(mv, fx, center, q);
            if (e < best) {
              best = e;
              best_t[0] = q[3];
              best_t[1] = q[4];
              best_t[2] = q[5];
            }
          }
      p[3] = best_t[0];
      p[4] = best_t[1];
      p[5] = best_t[2];
      first_level = false;
    }

    const double scale[6] = {cfg.rot_step_deg * kDegToRad, cfg.rot_step_deg * kDegToRad,
                             cfg.rot_step_deg * kDegToRad, cfg.trans_step_mm,
                             cfg.trans_step_mm, cfg.trans_step_mm};
    res.converged = false;
    double cur = mse_at(mv, fx, center, p);
    for (int it = 0; it < cfg.max_iters; ++it) {
      ++res.iterations;
      // central-difference gradient in scaled parameter space u_k = p_k/scale_k
      double gu[6];
      for (int k = 0; k < 6; ++k) {
        double h = scale[k] * 0.25;
        double q[6];
        std::copy(p, p + 6, q);
        q[k] = p[k] + h;
        double e_plus = mse_at(mv, fx, center, q);
        q[k] = p[k] - h;
        double e_minus = mse_at(mv, fx, center, q);
        gu[k] = (e_plus - e_minus) / (2.0 * h) * scale[k];
      }
      double gnorm = 0.0;
      for (int k = 0; k < 6; ++k) gnorm += gu[k] * gu[k];
      gnorm = std::sqrt(gnorm);
      if (gnorm == 0.0) {
        res.converged = true;
        break;
      }
      // backtracking line search along -gu; alpha=1 means a unit scaled step
      bool improved = false;
      double alpha = 1.0;
      for (int ls = 0; ls < 14; ++ls) {
        double q[6];
        for (int k = 0; k < 6; ++k) q[k] = p[k] - alpha * scale[k] * gu[k] / gnorm;
        double e = mse_at(mv, fx, center, q);
        if (e < cur) {
          double rel = (cur - e) / std::max(cur, 1e-300);
          std::copy(q, q + 6, p);
          cur = e;
          improved = true;
          if (rel < cfg.tol) res.converged = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!improved) {
        res.converged = true;
        break;
      }
      if (res.converged) break;
    }
    res.mse = cur;
  }

  Mat3 r = euler_xyz(p[0], p[1], p[2]);
  res.transform.rotation = r;
  auto rc = matvec(r, center);
  for (int i = 0; i < 3; ++i)
    res.transform.translation[i] = center[i] + p[3 + i] - rc[i];
  return res;
}

Volume3D mpdr(const Volume3D& pred1_mask_in_pet2_frame, const Volume3D& pred2_labels) {
  if (!pred1_mask_in_pet2_frame.same_grid(pred2_labels))
    throw std::invalid_argument("mpdr: grid mismatch");
  int max_label = 0;
  for (double v : pred2_labels.values) max_label = std::max(max_label, static_cast<int>(v));
  std::vector<char> keep(static_cast<size_t>(max_label) + 1, 0);
  for (int64_t i = 0; i < pred2_labels.numel(); ++i) {
    int l = static_cast<int>(pred2_labels.values[static_cast<size_t>(i)]);
    if (l != 0 && is_foreground(pred1_mask_in_pet2_frame.values[static_cast<size_t>(i)]))
      keep[static_cast<size_t>(l)] = 1;
  }
  std::vector<int> remap(static_cast<size_t>(max_label) + 1, 0);
  int next = 0;
  for (int l = 1; l <= max_label; ++l)
    if (keep[static_cast<size_t>(l)]) remap[static_cast<size_t>(l)] = ++next;
  Volume3D out = pred2_labels;
  for (double& v : out.values) v = remap[static_cast<size_t>(v)];
  return out;
}

}  // namespace laspet
