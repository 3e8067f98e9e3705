#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "laspet/rng.hpp"
#include "laspet/volume.hpp"

using namespace laspet;

namespace {

Volume3D make_volume(std::array<int, 3> dims, std::array<double, 3> spacing,
                     VoxelKind kind, uint64_t seed) {
  Volume3D v(dims, spacing, kind);
  Rng rng(seed);
  for (double& x : v.values) x = static_cast<float>(rng.uniform(0.0, 20.0));
  return v;
}

// Reference trilinear interpolant with edge clamp, written independently of
// the library: value lives at the voxel center.
double oracle_trilinear(const Volume3D& v, double px, double py, double pz) {
  double u = (px - v.origin[0]) / v.spacing[0] - 0.5;
  double w = (py - v.origin[1]) / v.spacing[1] - 0.5;
  double q = (pz - v.origin[2]) / v.spacing[2] - 0.5;
  auto clampi = [](int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); };
  int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(w)),
      z0 = static_cast<int>(std::floor(q));
  double fx = u - x0, fy = w - y0, fz = q - z0;
  double acc = 0.0;
  for (int dz = 0; dz <= 1; ++dz)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
        acc += wgt * v.at(clampi(x0 + dx, v.dims[0]), clampi(y0 + dy, v.dims[1]),
                          clampi(z0 + dz, v.dims[2]));
      }
  return acc;
}

}  // namespace

TEST_CASE("identity resample returns the same values") {
  Volume3D v = make_volume({5, 4, 3}, {3.0, 3.0, 3.0}, VoxelKind::SUV, 11);
  Volume3D r = resample(v, {3.0, 3.0, 3.0}, ResampleMode::Trilinear);
  REQUIRE(r.dims == v.dims);
  for (int64_t i = 0; i < v.numel(); ++i)
    CHECK(r.values[i] == doctest::Approx(v.values[i]).epsilon(1e-6));
}

TEST_CASE("downsampled 6mm cube resamples to 3mm against a brute-force oracle") {
  Volume3D v({2, 2, 2}, {6.0, 6.0, 6.0}, VoxelKind::SUV);
  for (int i = 0; i < 8; ++i) v.values[i] = i;
  Volume3D r = resample(v, {3.0, 3.0, 3.0}, ResampleMode::Trilinear);
  REQUIRE(r.dims == std::array<int, 3>{4, 4, 4});
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        auto c = r.voxel_center(x, y, z);
        CHECK(r.at(x, y, z) == doctest::Approx(oracle_trilinear(v, c[0], c[1], c[2]))
                                   .epsilon(1e-12));
      }
}

TEST_CASE("nearest resample cannot invent labels") {
  Volume3D v({6, 6, 6}, {2.0, 2.0, 2.0}, VoxelKind::Label);
  Rng rng(3);
  for (double& x : v.values) x = static_cast<double>(rng.uniform_int(3));
  Volume3D r = resample(v, {3.0, 3.0, 3.0}, ResampleMode::Nearest);
  std::set<double> seen(r.values.begin(), r.values.end());
  for (double s : seen) CHECK((s == 0.0 || s == 1.0 || s == 2.0));
}

TEST_CASE("label volumes reject trilinear resampling") {
  Volume3D v({2, 2, 2}, {3.0, 3.0, 3.0}, VoxelKind::Label);
  CHECK_THROWS_AS(resample(v, {1.5, 1.5, 1.5}, ResampleMode::Trilinear),
                  std::invalid_argument);
  CHECK_THROWS_AS(resample(v, {0.0, 1.0, 1.0}, ResampleMode::Nearest),
                  std::invalid_argument);
}

TEST_CASE("normalize maps the stated ranges") {
  Volume3D v({4, 1, 1}, {1.0, 1.0, 1.0}, VoxelKind::SUV);
  v.values = {15.0, -5.0, 45.0, 30.0};
  Volume3D n = normalize(v, 0.0, 30.0);
  CHECK(n.values[0] == doctest::Approx(0.5));
  CHECK(n.values[1] == 0.0);   // clamp below
  CHECK(n.values[2] == 1.0);   // clamp above
  CHECK(n.values[3] == 1.0);
  CHECK(n.kind == VoxelKind::Prob);

  Volume3D ct({2, 1, 1}, {1.0, 1.0, 1.0}, VoxelKind::HU);
  ct.values = {-150.0, 250.0};
  Volume3D nc = normalize(ct, -150.0, 250.0);
  CHECK(nc.values[0] == 0.0);
  CHECK(nc.values[1] == 1.0);

  CHECK_THROWS_AS(normalize(v, 30.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(normalize(v, 5.0, 5.0), std::invalid_argument);
}

TEST_CASE("normalize is monotone and stays in unit range") {
  Volume3D v = make_volume({40, 1, 1}, {1.0, 1.0, 1.0}, VoxelKind::SUV, 17);
  Volume3D n = normalize(v, 2.0, 12.0);
  for (int i = 0; i < 40; ++i) {
    CHECK(n.values[i] >= 0.0);
    CHECK(n.values[i] <= 1.0);
    for (int j = 0; j < 40; ++j)
      if (v.values[i] <= v.values[j]) CHECK(n.values[i] <= n.values[j]);
  }
}

TEST_CASE("foreground bbox finds the tight box, whole volume when empty") {
  Volume3D v({10, 10, 10}, {3.0, 3.0, 3.0}, VoxelKind::SUV);
  v.at(5, 5, 5) = 0.3;
  BoundingBox b = foreground_bbox(v, 0.2);
  CHECK(b.min_voxel == std::array<int, 3>{5, 5, 5});
  CHECK(b.max_voxel == std::array<int, 3>{5, 5, 5});

  v.at(5, 5, 5) = 0.0;
  BoundingBox full = foreground_bbox(v, 0.2);
  CHECK(full.min_voxel == std::array<int, 3>{0, 0, 0});
  CHECK(full.max_voxel == std::array<int, 3>{9, 9, 9});

  v.at(1, 1, 1) = 0.5;
  v.at(8, 2, 3) = 0.5;
  BoundingBox two = foreground_bbox(v, 0.2);
  CHECK(two.min_voxel == std::array<int, 3>{1, 1, 1});
  CHECK(two.max_voxel == std::array<int, 3>{8, 2, 3});
}

TEST_CASE("bbox ignores rearranged background") {
  Volume3D v({8, 8, 8}, {2.0, 2.0, 2.0}, VoxelKind::SUV);
  Rng rng(29);
  for (double& x : v.values) x = rng.uniform(0.0, 0.15);
  v.at(2, 3, 4) = 5.0;
  BoundingBox a = foreground_bbox(v, 0.2);
  // permute background values, foreground untouched
  std::swap(v.at(0, 0, 0), v.at(7, 7, 7));
  BoundingBox b = foreground_bbox(v, 0.2);
  CHECK(a.min_voxel == b.min_voxel);
  CHECK(a.max_voxel == b.max_voxel);
}

TEST_CASE("crop shifts origin and preserves spacing") {
  Volume3D v = make_volume({4, 4, 4}, {3.0, 3.0, 3.0}, VoxelKind::SUV, 5);
  Volume3D full = crop(v, BoundingBox{{0, 0, 0}, {3, 3, 3}});
  CHECK(full.values == v.values);
  CHECK(full.origin == v.origin);

  Volume3D c = crop(v, BoundingBox{{1, 1, 1}, {2, 2, 2}});
  REQUIRE(c.dims == std::array<int, 3>{2, 2, 2});
  CHECK(c.origin[0] == doctest::Approx(v.origin[0] + 3.0));
  CHECK(c.spacing == v.spacing);
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        CHECK(c.at(x, y, z) == v.at(x + 1, y + 1, z + 1));
  // cropped voxels keep their physical position
  CHECK(c.voxel_center(0, 0, 0) == v.voxel_center(1, 1, 1));

  CHECK_THROWS_AS(crop(v, BoundingBox{{0, 0, 0}, {4, 3, 3}}), std::invalid_argument);
  CHECK_THROWS_AS(crop(v, BoundingBox{{2, 0, 0}, {1, 3, 3}}), std::invalid_argument);
}

TEST_CASE("pad_to grows the high side with zeros") {
  Volume3D v = make_volume({3, 3, 3}, {3.0, 3.0, 3.0}, VoxelKind::SUV, 7);
  Volume3D p = pad_to(v, {5, 4, 3});
  REQUIRE(p.dims == std::array<int, 3>{5, 4, 3});
  CHECK(p.origin == v.origin);
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) {
        if (x < 3 && y < 3)
          CHECK(p.at(x, y, z) == v.at(x, y, z));
        else
          CHECK(p.at(x, y, z) == 0.0);
      }
  CHECK_THROWS_AS(pad_to(v, {2, 3, 3}), std::invalid_argument);
}

TEST_CASE("mvol round trip is exact for every kind") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "laspet_test_volume";
  fs::create_directories(dir);
  for (VoxelKind kind : {VoxelKind::SUV, VoxelKind::HU, VoxelKind::Label, VoxelKind::Prob}) {
    Volume3D v = make_volume({5, 3, 4}, {3.0, 2.0, 1.5}, kind,
                             100 + static_cast<uint64_t>(kind));
    if (kind == VoxelKind::Label)
      for (double& x : v.values) x = std::floor(x / 5.0);
    v.origin = {-12.5, 4.0, 7.25};
    fs::path p = dir / "roundtrip.mvol";
    write_mvol(v, p.string());
    Volume3D r = read_mvol(p.string());
    CHECK(r.kind == v.kind);
    CHECK(r.dims == v.dims);
    CHECK(r.spacing == v.spacing);
    CHECK(r.origin == v.origin);
    // values were generated f32-representable, so equality is exact
    CHECK(r.values == v.values);
  }
  fs::remove_all(dir);
}

TEST_CASE("mvol read rejects malformed files") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "laspet_test_volume_bad";
  fs::create_directories(dir);
  fs::path p = dir / "bad.mvol";

  Volume3D v = make_volume({2, 2, 2}, {1.0, 1.0, 1.0}, VoxelKind::SUV, 1);
  write_mvol(v, p.string());

  auto corrupt_at = [&](int64_t off, char c) {
    std::FILE* f = std::fopen(p.string().c_str(), "r+b");
    REQUIRE(f != nullptr);
    std::fseek(f, static_cast<long>(off), SEEK_SET);
    std::fwrite(&c, 1, 1, f);
    std::fclose(f);
  };

  corrupt_at(0, 'X');  // magic
  CHECK_THROWS_AS(read_mvol(p.string()), std::runtime_error);

  write_mvol(v, p.string());
  corrupt_at(4, 9);  // version
  CHECK_THROWS_AS(read_mvol(p.string()), std::runtime_error);

  write_mvol(v, p.string());
  corrupt_at(8, 7);  // kind
  CHECK_THROWS_AS(read_mvol(p.string()), std::runtime_error);

  write_mvol(v, p.string());
  fs::resize_file(p, fs::file_size(p) - 4);  // truncated payload
  CHECK_THROWS_AS(read_mvol(p.string()), std::runtime_error);

  CHECK_THROWS_AS(read_mvol((dir / "missing.mvol").string()), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("volume validation rejects bad geometry") {
  Volume3D v({2, 2, 2}, {1.0, 1.0, 1.0}, VoxelKind::SUV);
  CHECK_NOTHROW(v.validate());
  v.spacing[1] = 0.0;
  CHECK_THROWS_AS(v.validate(), std::invalid_argument);
  v.spacing[1] = 1.0;
  v.values.pop_back();
  CHECK_THROWS_AS(v.validate(), std::invalid_argument);
  Volume3D bad_dims;
  bad_dims.dims = {0, 1, 1};
  CHECK_THROWS_AS(bad_dims.validate(), std::invalid_argument);
}

TEST_CASE("trilinear sampling clamps at edges and matches centers") {
  Volume3D v = make_volume({4, 4, 4}, {2.0, 2.0, 2.0}, VoxelKind::SUV, 23);
  auto c = v.voxel_center(1, 2, 3);
  CHECK(v.sample_trilinear(c) == doctest::Approx(v.at(1, 2, 3)));
  // far outside: clamps to the corner voxel
  CHECK(v.sample_trilinear({-100.0, -100.0, -100.0}) == doctest::Approx(v.at(0, 0, 0)));
  bool inside = true;
  double out = v.sample_trilinear_zero({-100.0, 0.0, 0.0}, &inside);
  CHECK(out == 0.0);
  CHECK_FALSE(inside);
}
