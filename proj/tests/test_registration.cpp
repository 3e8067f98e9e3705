#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>

#include "laspet/registration.hpp"
#include "laspet/rng.hpp"

using namespace laspet;

namespace {

// Smooth asymmetric test image: three Gaussian bumps of unequal strength.
Volume3D make_blobs() {
  Volume3D v({36, 36, 36}, {3, 3, 3}, VoxelKind::SUV, 0.0);
  struct Bump {
    std::array<double, 3> c;
    double sigma, amp;
  };
  const std::array<Bump, 3> bumps{{{{54, 42, 60}, 10.0, 1.0},
                                   {{66, 66, 48}, 8.0, 0.7},
                                   {{42, 63, 57}, 12.0, 0.5}}};
  for (int z = 0; z < v.dims[2]; ++z)
    for (int y = 0; y < v.dims[1]; ++y)
      for (int x = 0; x < v.dims[0]; ++x) {
        auto p = v.voxel_center(x, y, z);
        double val = 0.0;
        for (const auto& b : bumps) {
          double d2 = 0.0;
          for (int a = 0; a < 3; ++a) d2 += (p[a] - b.c[a]) * (p[a] - b.c[a]);
          val += b.amp * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
        }
        v.at(x, y, z) = val;
      }
  return v;
}

std::array<double, 3> volume_center(const Volume3D& v) {
  return {v.origin[0] + 0.5 * v.dims[0] * v.spacing[0],
          v.origin[1] + 0.5 * v.dims[1] * v.spacing[1],
          v.origin[2] + 0.5 * v.dims[2] * v.spacing[2]};
}

// Angle of the relative rotation and displacement difference at the volume
// center between two transforms.
double angle_between_deg(const RigidTransform& a, const RigidTransform& b) {
  return a.then(b.inverse()).rotation_angle_deg();
}

double center_displacement_mm(const RigidTransform& a, const RigidTransform& b,
                              const std::array<double, 3>& c) {
  auto pa = a.apply(c);
  auto pb = b.apply(c);
  double d2 = 0.0;
  for (int i = 0; i < 3; ++i) d2 += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  return std::sqrt(d2);
}

}  // namespace

TEST_CASE("transform algebra") {
  SUBCASE("identity maps points to themselves") {
    auto t = RigidTransform::identity();
    auto p = t.apply({12.0, -3.5, 7.25});
    CHECK(p[0] == doctest::Approx(12.0).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(-3.5).epsilon(1e-14));
    CHECK(p[2] == doctest::Approx(7.25).epsilon(1e-14));
    CHECK(t.rotation_angle_deg() == doctest::Approx(0.0));
    CHECK(t.det() == doctest::Approx(1.0));
    t.validate();
  }

  SUBCASE("pure shift about any center is a plain translation") {
    auto t = RigidTransform::about_center({50, 50, 50}, {0, 0, 0}, {6, -3, 1.5});
    auto p = t.apply({10, 20, 30});
    CHECK(p[0] == doctest::Approx(16.0));
    CHECK(p[1] == doctest::Approx(17.0));
    CHECK(p[2] == doctest::Approx(31.5));
  }

  SUBCASE("rotation about the center fixes the center") {
    std::array<double, 3> c{40, 52, 61};
    auto t = RigidTransform::about_center(c, {10, -20, 35}, {0, 0, 0});
    auto p = t.apply(c);
    for (int i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(c[i]).epsilon(1e-12));
  }

  SUBCASE("rotation angle reads back the injected angle") {
    auto t = RigidTransform::about_center({0, 0, 0}, {0, 0, 90}, {0, 0, 0});
    CHECK(t.rotation_angle_deg() == doctest::Approx(90.0).epsilon(1e-12));
    auto u = RigidTransform::about_center({5, 5, 5}, {7.5, 0, 0}, {1, 2, 3});
    CHECK(u.rotation_angle_deg() == doctest::Approx(7.5).epsilon(1e-10));
  }

  SUBCASE("inverse composes to identity") {
    auto t = RigidTransform::about_center({31, 7, -4}, {12, -8, 23}, {5, -2, 9});
    auto id = t.then(t.inverse());
    CHECK(id.rotation_angle_deg() == doctest::Approx(0.0).epsilon(1e-10));
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(id.translation[i]) < 1e-10);
  }

  SUBCASE("then() matches sequential point application") {
    Rng rng(402);
    for (int trial = 0; trial < 20; ++trial) {
      auto a = RigidTransform::about_center(
          {rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-20, 20)},
          {rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(-40, 40)},
          {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)});
      auto b = RigidTransform::about_center(
          {rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-20, 20)},
          {rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(-40, 40)},
          {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)});
      std::array<double, 3> x{rng.uniform(-50, 50), rng.uniform(-50, 50),
                              rng.uniform(-50, 50)};
      auto direct = a.then(b).apply(x);
      auto stepped = a.apply(b.apply(x));
      for (int i = 0; i < 3; ++i)
        CHECK(direct[i] == doctest::Approx(stepped[i]).epsilon(1e-12));
    }
  }

  SUBCASE("validate rejects a non-rotation") {
    RigidTransform bad;
    bad.rotation[0][0] = 2.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_CASE("identity resampling reproduces the volume") {
  Volume3D v({9, 8, 7}, {2.5, 3, 3.5}, VoxelKind::SUV, 0.0);
  Rng rng(91);
  for (double& x : v.values) x = rng.uniform(0.0, 5.0);
  auto out = apply_transform(v, RigidTransform::identity(), ResampleMode::Trilinear);
  for (size_t i = 0; i < v.values.size(); ++i)
    CHECK(out.values[i] == doctest::Approx(v.values[i]).epsilon(1e-12));
}

TEST_CASE("on-grid translation shifts content by whole voxels") {
  Volume3D v({16, 16, 16}, {3, 3, 3}, VoxelKind::SUV, 0.0);
  Rng rng(92);
  for (double& x : v.values) x = rng.uniform(0.0, 4.0);

  auto c = volume_center(v);
  auto forward = RigidTransform::about_center(c, {0, 0, 0}, {6, 0, 0});
  auto moved = apply_transform(v, forward.inverse(), ResampleMode::Trilinear);

  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        if (x >= 2)
          CHECK(moved.at(x, y, z) == doctest::Approx(v.at(x - 2, y, z)).epsilon(1e-12));
        else
          CHECK(moved.at(x, y, z) == 0.0);  // entering edge is zero filled
      }
}

TEST_CASE("label volumes move with nearest sampling only") {
  Volume3D labels({8, 8, 8}, {3, 3, 3}, VoxelKind::Label, 0.0);
  labels.at(3, 4, 5) = 2.0;
  auto c = volume_center(labels);
  auto forward = RigidTransform::about_center(c, {0, 0, 0}, {3, 0, 0});

  CHECK_THROWS_AS(apply_transform(labels, forward.inverse(), ResampleMode::Trilinear),
                  std::invalid_argument);

  auto moved = apply_transform(labels, forward.inverse(), ResampleMode::Nearest);
  CHECK(moved.at(4, 4, 5) == 2.0);
  CHECK(moved.at(3, 4, 5) == 0.0);
}

TEST_CASE("round trip through the inverse transform stays close") {
  auto v = make_blobs();
  auto c = volume_center(v);
  auto t = RigidTransform::about_center(c, {0, 8, -6}, {4.5, -3, 6});
  auto moved = apply_transform(v, t.inverse(), ResampleMode::Trilinear);
  auto back = apply_transform(moved, t, ResampleMode::Trilinear);

  // interpolation smooths twice; a wrong transform would err at the blob
  // amplitude scale (~1.0) rather than the interpolation scale
  double worst = 0.0;
  for (int z = 4; z < v.dims[2] - 4; ++z)
    for (int y = 4; y < v.dims[1] - 4; ++y)
      for (int x = 4; x < v.dims[0] - 4; ++x)
        worst = std::max(worst, std::abs(back.at(x, y, z) - v.at(x, y, z)));
  CHECK(worst < 0.08);
}

TEST_CASE("registering a volume onto itself stays at identity") {
  auto v = make_blobs();
  auto res = register_rigid(v, v);
  CHECK(res.converged);
  CHECK(res.transform.rotation_angle_deg() < 0.2);
  CHECK(center_displacement_mm(res.transform, RigidTransform::identity(),
                               volume_center(v)) < 0.3);
  CHECK(res.mse < 1e-6);
}

TEST_CASE("recovers an injected rigid misregistration") {
  auto v = make_blobs();
  auto c = volume_center(v);
  auto t_true = RigidTransform::about_center(c, {4, -6, 8}, {6, -4.5, 3});
  auto moved = apply_transform(v, t_true.inverse(), ResampleMode::Trilinear);

  auto res = register_rigid(moved, v);
  CHECK(angle_between_deg(res.transform, t_true) < 2.0);
  CHECK(center_displacement_mm(res.transform, t_true, c) < 3.0);  // one voxel
}

TEST_CASE("registration rejects mismatched kinds and flat images") {
  auto v = make_blobs();
  Volume3D hu(v.dims, v.spacing, VoxelKind::HU, 0.0);
  CHECK_THROWS_AS(register_rigid(v, hu), std::invalid_argument);
  Volume3D flat(v.dims, v.spacing, VoxelKind::SUV, 1.0);
  CHECK_THROWS_AS(register_rigid(flat, flat), std::invalid_argument);
}

TEST_CASE("mpdr keeps only components that touch the propagated mask") {
  Volume3D labels({12, 12, 12}, {3, 3, 3}, VoxelKind::Label, 0.0);
  labels.at(1, 1, 1) = 1.0;
  labels.at(2, 1, 1) = 1.0;
  labels.at(8, 8, 8) = 2.0;
  labels.at(4, 6, 2) = 3.0;

  Volume3D mask({12, 12, 12}, {3, 3, 3}, VoxelKind::Label, 0.0);
  mask.at(2, 1, 1) = 1.0;  // one voxel of component 1
  mask.at(4, 6, 2) = 1.0;  // component 3
  mask.at(10, 2, 9) = 1.0;  // background overlap changes nothing

  auto out = mpdr(mask, labels);
  CHECK(out.at(1, 1, 1) == 1.0);
  CHECK(out.at(2, 1, 1) == 1.0);
  CHECK(out.at(8, 8, 8) == 0.0);  // no overlap, removed
  CHECK(out.at(4, 6, 2) == 2.0);  // compacted label

  SUBCASE("applying the rule twice changes nothing") {
    auto again = mpdr(mask, out);
    for (size_t i = 0; i < out.values.size(); ++i)
      CHECK(again.values[i] == out.values[i]);
  }

  SUBCASE("empty mask removes everything") {
    Volume3D none({12, 12, 12}, {3, 3, 3}, VoxelKind::Label, 0.0);
    auto cleared = mpdr(none, labels);
    for (double x : cleared.values) CHECK(x == 0.0);
  }

  SUBCASE("grid mismatch throws") {
    Volume3D other({12, 12, 12}, {2, 2, 2}, VoxelKind::Label, 0.0);
    CHECK_THROWS_AS(mpdr(other, labels), std::invalid_argument);
  }
}
