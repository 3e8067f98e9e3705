#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "laspet/lesions.hpp"
#include "laspet/metrics.hpp"
#include "laspet/rng.hpp"
#include "laspet/volume.hpp"

using namespace laspet;

namespace {

Lesion lesion_at(std::array<double, 3> centroid, double volume_ml = 1.0,
                 double suvmean = 1.0, double suvmax = 1.0) {
  Lesion l;
  l.centroid_mm = centroid;
  l.volume_ml = volume_ml;
  l.suvmean = suvmean;
  l.suvmax = suvmax;
  return l;
}

}  // namespace

TEST_CASE("mtv sums lesion volumes") {
  Volume3D mask({10, 4, 4}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  for (int x = 0; x < 10; ++x) mask.at(x, 1, 1) = 1.0;
  LesionSet ls = extract_lesions(connected_components(mask));
  CHECK(mtv(ls) == doctest::Approx(0.27));  // 10 voxels of 27 mm3

  LesionSet empty;
  CHECK(mtv(empty) == 0.0);
  CHECK(tlg(empty) == 0.0);
}

TEST_CASE("tlg multiplies volume by mean uptake per lesion") {
  Volume3D mask({10, 4, 4}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  Volume3D pet({10, 4, 4}, {3.0, 3.0, 3.0}, VoxelKind::SUV);
  for (int x = 0; x < 10; ++x) {
    mask.at(x, 1, 1) = 1.0;
    pet.at(x, 1, 1) = 5.0;
  }
  LesionSet ls = extract_lesions(connected_components(mask), &pet);
  CHECK(tlg(ls) == doctest::Approx(1.35));  // 0.27 ml x SUV 5
}

TEST_CASE("tlg equals the voxelwise uptake integral") {
  Rng rng(71);
  Volume3D mask({12, 12, 12}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  Volume3D pet({12, 12, 12}, {3.0, 3.0, 3.0}, VoxelKind::SUV);
  for (double& p : pet.values) p = rng.uniform(0.5, 8.0);
  for (int z = 1; z < 4; ++z)
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 4; ++x) mask.at(x, y, z) = 1.0;
  for (int z = 7; z < 11; ++z)
    for (int y = 7; y < 10; ++y)
      for (int x = 6; x < 11; ++x) mask.at(x, y, z) = 1.0;
  LesionSet ls = extract_lesions(connected_components(mask), &pet);
  REQUIRE(ls.lesions.size() == 2);

  double oracle = 0.0;
  for (int64_t i = 0; i < mask.numel(); ++i)
    if (mask.values[i] != 0.0) oracle += pet.values[i] * mask.voxel_volume_ml();
  CHECK(tlg(ls) == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("mtv and tlg are additive over disjoint lesion subsets") {
  LesionSet full, part_a, part_b;
  Rng rng(73);
  for (int i = 0; i < 6; ++i) {
    Lesion l = lesion_at({rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(0, 50)},
                         rng.uniform(0.3, 4.0), rng.uniform(1.0, 9.0));
    full.lesions.push_back(l);
    (i % 2 == 0 ? part_a : part_b).lesions.push_back(l);
  }
  CHECK(mtv(full) == doctest::Approx(mtv(part_a) + mtv(part_b)).epsilon(1e-12));
  CHECK(tlg(full) == doctest::Approx(tlg(part_a) + tlg(part_b)).epsilon(1e-12));
}

TEST_CASE("dmax is the longest centroid pair distance") {
  LesionSet ls;
  ls.lesions.push_back(lesion_at({0, 0, 0}));
  ls.lesions.push_back(lesion_at({30, 40, 0}));
  REQUIRE(dmax(ls).has_value());
  CHECK(*dmax(ls) == doctest::Approx(50.0));  // 3-4-5 triangle

  LesionSet single;
  single.lesions.push_back(lesion_at({10, 10, 10}));
  CHECK_FALSE(dmax(single).has_value());
  CHECK_FALSE(dmax(LesionSet{}).has_value());

  LesionSet collinear;
  collinear.lesions.push_back(lesion_at({0, 0, 0}));
  collinear.lesions.push_back(lesion_at({10, 0, 0}));
  collinear.lesions.push_back(lesion_at({25, 0, 0}));
  CHECK(*dmax(collinear) == doctest::Approx(25.0));
}

TEST_CASE("dmax is invariant under rigid motion of all centroids") {
  Rng rng(79);
  LesionSet ls;
  for (int i = 0; i < 5; ++i)
    ls.lesions.push_back(
        lesion_at({rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(-40, 40)}));
  double before = *dmax(ls);

  const double th = 0.7;  // rotate about z then translate
  LesionSet moved = ls;
  for (Lesion& l : moved.lesions) {
    double x = l.centroid_mm[0], y = l.centroid_mm[1];
    l.centroid_mm[0] = std::cos(th) * x - std::sin(th) * y + 12.0;
    l.centroid_mm[1] = std::sin(th) * x + std::cos(th) * y - 5.0;
    l.centroid_mm[2] += 33.0;
  }
  CHECK(*dmax(moved) == doctest::Approx(before).epsilon(1e-9));
}

TEST_CASE("dspleen measures lesion centroid to spleen centroid") {
  Volume3D spleen({20, 20, 20}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  // 2x2x2 block at voxels 4..5 per axis: centroid at 15 mm per axis
  for (int z = 4; z < 6; ++z)
    for (int y = 4; y < 6; ++y)
      for (int x = 4; x < 6; ++x) spleen.at(x, y, z) = 1.0;

  LesionSet coincident;
  coincident.lesions.push_back(lesion_at({15, 15, 15}));
  CHECK(*dspleen(coincident, spleen) == doctest::Approx(0.0));

  LesionSet far;
  far.lesions.push_back(lesion_at({75, 15, 15}));  // 60 mm along x
  far.lesions.push_back(lesion_at({15, 15, 45}));  // 30 mm along z
  CHECK(*dspleen(far, spleen) == doctest::Approx(60.0));

  CHECK_FALSE(dspleen(LesionSet{}, spleen).has_value());

  Volume3D empty({4, 4, 4}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  CHECK_THROWS_AS(dspleen(far, empty), std::invalid_argument);
}

TEST_CASE("delta suvmax reports percent reduction") {
  CHECK(delta_suvmax(10.0, 4.0) == doctest::Approx(60.0));
  CHECK(delta_suvmax(7.3, 7.3) == doctest::Approx(0.0));
  CHECK(delta_suvmax(5.0, 0.0) == doctest::Approx(100.0));  // complete response
  CHECK(delta_suvmax(5.0, 8.0) == doctest::Approx(-60.0));  // progression is negative
  CHECK_THROWS_AS(delta_suvmax(0.0, 1.0), std::invalid_argument);

  // common rescaling of both scans cancels
  CHECK(delta_suvmax(10.0 * 3.7, 4.0 * 3.7) == doctest::Approx(60.0).epsilon(1e-12));
}

TEST_CASE("suvpeak averages a 1 ml sphere truncated to the lesion") {
  Volume3D pet({16, 16, 16}, {3.0, 3.0, 3.0}, VoxelKind::SUV);
  Volume3D mask({16, 16, 16}, {3.0, 3.0, 3.0}, VoxelKind::Label);

  SUBCASE("uniform lesion returns the uniform value") {
    for (int z = 4; z < 10; ++z)
      for (int y = 4; y < 10; ++y)
        for (int x = 4; x < 10; ++x) {
          mask.at(x, y, z) = 1.0;
          pet.at(x, y, z) = 5.0;
        }
    LesionSet ls = extract_lesions(connected_components(mask), &pet);
    CHECK(ls.lesions[0].suvpeak == doctest::Approx(5.0));
  }

  SUBCASE("lesion smaller than the sphere averages what exists") {
    mask.at(8, 8, 8) = 1.0;
    mask.at(9, 8, 8) = 1.0;
    pet.at(8, 8, 8) = 6.0;
    pet.at(9, 8, 8) = 4.0;
    LesionSet ls = extract_lesions(connected_components(mask), &pet);
    CHECK(ls.lesions[0].suvpeak == doctest::Approx(5.0));
  }

  SUBCASE("peaked lesion matches a brute-force sphere enumeration") {
    Rng rng(83);
    for (int z = 3; z < 13; ++z)
      for (int y = 3; y < 13; ++y)
        for (int x = 3; x < 13; ++x) {
          mask.at(x, y, z) = 1.0;
          double dx = x - 8.0, dy = y - 8.0, dz = z - 8.0;
          pet.at(x, y, z) =
              8.0 * std::exp(-(dx * dx + dy * dy + dz * dz) / 18.0) + rng.uniform(0.0, 0.2);
        }
    LesionSet ls = extract_lesions(connected_components(mask), &pet);

    // independent enumeration: hottest lesion voxel, then all volume voxels
    // inside the lesion and within the 1 ml radius of it
    double hot = -1.0;
    std::array<int, 3> hv{};
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
          if (mask.at(x, y, z) != 0.0 && pet.at(x, y, z) > hot) {
            hot = pet.at(x, y, z);
            hv = {x, y, z};
          }
    const double r = std::cbrt(1000.0 * 3.0 / (4.0 * 3.14159265358979323846));
    auto hc = pet.voxel_center(hv[0], hv[1], hv[2]);
    double sum = 0.0;
    int n = 0;
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          if (mask.at(x, y, z) == 0.0) continue;
          auto c = pet.voxel_center(x, y, z);
          double d = std::sqrt((c[0] - hc[0]) * (c[0] - hc[0]) +
                               (c[1] - hc[1]) * (c[1] - hc[1]) +
                               (c[2] - hc[2]) * (c[2] - hc[2]));
          if (d <= r) {
            sum += pet.at(x, y, z);
            ++n;
          }
        }
    CHECK(ls.lesions[0].suvpeak == doctest::Approx(sum / n).epsilon(1e-12));
  }
}

TEST_CASE("qpet divides the hottest residual peak by mean liver uptake") {
  Volume3D pet({10, 10, 10}, {3.0, 3.0, 3.0}, VoxelKind::SUV);
  Volume3D liver({10, 10, 10}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        liver.at(x, y, z) = 1.0;
        pet.at(x, y, z) = 2.0;
      }

  LesionSet residual;
  Lesion a;
  a.suvpeak = 2.6;
  residual.lesions.push_back(a);
  CHECK(*qpet(residual, liver, pet) == doctest::Approx(1.3));

  Lesion b;
  b.suvpeak = 2.0;
  LesionSet equal_set;
  equal_set.lesions.push_back(b);
  CHECK(*qpet(equal_set, liver, pet) == doctest::Approx(1.0));

  LesionSet two;
  Lesion c;
  c.suvpeak = 1.8;
  Lesion d;
  d.suvpeak = 2.4;
  two.lesions.push_back(c);
  two.lesions.push_back(d);
  CHECK(*qpet(two, liver, pet) == doctest::Approx(1.2));  // hottest governs

  CHECK_FALSE(qpet(LesionSet{}, liver, pet).has_value());

  Volume3D empty_liver({10, 10, 10}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  CHECK_THROWS_AS(qpet(residual, empty_liver, pet), std::invalid_argument);
}

TEST_CASE("qpet scales inversely with liver uptake") {
  Volume3D pet({6, 6, 6}, {3.0, 3.0, 3.0}, VoxelKind::SUV);
  Volume3D liver({6, 6, 6}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  Rng rng(89);
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) {
        liver.at(x, y, z) = 1.0;
        pet.at(x, y, z) = rng.uniform(1.5, 2.5);
      }
  LesionSet residual;
  Lesion l;
  l.suvpeak = 3.1;
  residual.lesions.push_back(l);
  double base = *qpet(residual, liver, pet);
  Volume3D pet_scaled = pet;
  for (double& v : pet_scaled.values) v *= 2.0;
  CHECK(*qpet(residual, liver, pet_scaled) == doctest::Approx(base / 2.0).epsilon(1e-12));
}

TEST_CASE("patient-level summaries roll lesions up") {
  Volume3D mask({12, 12, 12}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  Volume3D pet({12, 12, 12}, {3.0, 3.0, 3.0}, VoxelKind::SUV);
  for (int x = 1; x < 4; ++x) {
    mask.at(x, 2, 2) = 1.0;
    pet.at(x, 2, 2) = 4.0;
  }
  for (int x = 7; x < 11; ++x) {
    mask.at(x, 8, 8) = 1.0;
    pet.at(x, 8, 8) = 9.0;
  }
  Volume3D spleen({12, 12, 12}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  spleen.at(0, 0, 0) = 1.0;
  LesionSet ls = extract_lesions(connected_components(mask), &pet);
  BaselineMetrics bm = baseline_metrics(ls, &spleen);
  CHECK(bm.n_lesions == 2);
  CHECK(bm.suvmax == 9.0);
  CHECK(bm.mtv_ml == doctest::Approx(7 * 27.0 / 1000.0));
  CHECK(bm.dmax_mm.has_value());
  CHECK(bm.dspleen_mm.has_value());

  BaselineMetrics none = baseline_metrics(LesionSet{});
  CHECK(none.n_lesions == 0);
  CHECK(none.mtv_ml == 0.0);
  CHECK_FALSE(none.dmax_mm.has_value());
  CHECK_FALSE(none.dspleen_mm.has_value());

  Volume3D liver({12, 12, 12}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  liver.at(11, 11, 11) = 1.0;
  Volume3D pet2 = pet;
  pet2.at(11, 11, 11) = 2.0;
  InterimMetrics im = interim_metrics(ls, 9.0, pet2, &liver);
  CHECK(im.n_residual == 2);
  CHECK(im.suvmax == 9.0);
  CHECK(*im.delta_suvmax_pct == doctest::Approx(0.0));
  CHECK(im.qpet.has_value());

  InterimMetrics clear = interim_metrics(LesionSet{}, 9.0, pet2, &liver);
  CHECK(clear.n_residual == 0);
  CHECK(clear.suvmax == 0.0);
  CHECK(*clear.delta_suvmax_pct == doctest::Approx(100.0));
  CHECK_FALSE(clear.qpet.has_value());
}
