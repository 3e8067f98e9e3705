#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "laspet/metrics.hpp"
#include "laspet/phantom.hpp"
#include "laspet/response.hpp"

using namespace laspet;

namespace {

std::set<int64_t> voxel_set(const LesionSet& ls) {
  std::set<int64_t> s;
  for (const Lesion& l : ls.lesions) s.insert(l.voxels.begin(), l.voxels.end());
  return s;
}

bool is_subset_of_one(const Lesion& child, const LesionSet& parents) {
  for (const Lesion& p : parents.lesions) {
    std::set<int64_t> ps(p.voxels.begin(), p.voxels.end());
    bool all = std::all_of(child.voxels.begin(), child.voxels.end(),
                           [&](int64_t v) { return ps.count(v) > 0; });
    if (all) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("same seed reproduces the study bit for bit") {
  PhantomConfig cfg;
  cfg.seed = 11;
  auto a = generate(cfg);
  auto b = generate(cfg);
  CHECK(a.pet1.values == b.pet1.values);
  CHECK(a.pet2.values == b.pet2.values);
  CHECK(a.ct1.values == b.ct1.values);
  REQUIRE(a.gt1.lesions.size() == b.gt1.lesions.size());
  for (size_t i = 0; i < a.gt1.lesions.size(); ++i) {
    CHECK(a.gt1.lesions[i].voxels == b.gt1.lesions[i].voxels);
    CHECK(a.gt1.lesions[i].suvpeak == b.gt1.lesions[i].suvpeak);
  }
  CHECK(a.demographics.age_years == b.demographics.age_years);

  cfg.seed = 12;
  auto c = generate(cfg);
  CHECK(a.pet1.values != c.pet1.values);
}

TEST_CASE("lesion counts follow the config") {
  PhantomConfig cfg;
  cfg.seed = 3;
  cfg.n_baseline_lesions = 3;
  cfg.residual_fraction = 0.5;  // rounds to 2 of 3
  auto s = generate(cfg);
  CHECK(s.gt1.lesions.size() == 3);
  CHECK(s.gt2.lesions.size() == 2);
  CHECK(s.id == "phantom-3");

  SUBCASE("every residual lesion shrinks inside its baseline parent") {
    for (const Lesion& l : s.gt2.lesions) {
      CHECK(is_subset_of_one(l, s.gt1));
      CHECK(l.lds.has_value());
    }
  }
}

TEST_CASE("full persistence keeps every lesion") {
  PhantomConfig cfg;
  cfg.seed = 21;
  cfg.residual_fraction = 1.0;
  auto s = generate(cfg);
  CHECK(s.gt2.lesions.size() == s.gt1.lesions.size());
  for (const Lesion& l : s.gt2.lesions) CHECK(is_subset_of_one(l, s.gt1));
}

TEST_CASE("complete regression with one new lesion") {
  PhantomConfig cfg;
  cfg.seed = 5;
  cfg.residual_fraction = 0.0;
  cfg.new_lesion_count = 1;
  auto s = generate(cfg);
  REQUIRE(s.gt2.lesions.size() == 1);

  auto baseline_voxels = voxel_set(s.gt1);
  for (int64_t v : s.gt2.lesions[0].voxels) CHECK(baseline_voxels.count(v) == 0);
}

TEST_CASE("lesion voxels stay detectable above the noisy background") {
  PhantomConfig cfg;
  cfg.seed = 17;
  cfg.new_lesion_count = 2;
  auto s = generate(cfg);
  const double floor = cfg.background_suv + 3.0 * cfg.noise_sigma;
  for (const Lesion& l : s.gt1.lesions)
    for (int64_t v : l.voxels)
      CHECK(s.pet1.values[static_cast<size_t>(v)] > floor);
  for (const Lesion& l : s.gt2.lesions)
    for (int64_t v : l.voxels)
      CHECK(s.pet2.values[static_cast<size_t>(v)] > floor);
}

TEST_CASE("every ground-truth lesion clears the small-component filter") {
  PhantomConfig cfg;
  cfg.seed = 29;
  cfg.n_baseline_lesions = 4;
  cfg.new_lesion_count = 1;
  auto s = generate(cfg);
  for (const Lesion& l : s.gt1.lesions) CHECK(l.volume_ml >= 0.3 - 1e-9);
  for (const Lesion& l : s.gt2.lesions) CHECK(l.volume_ml >= 0.3 - 1e-9);
}

TEST_CASE("interim scores agree with measured qpet") {
  PhantomConfig cfg;
  cfg.seed = 41;
  cfg.n_baseline_lesions = 4;
  cfg.residual_fraction = 1.0;
  auto s = generate(cfg);
  const double liver = mask_mean(s.pet2, s.liver_mask);
  for (const Lesion& l : s.gt2.lesions) {
    REQUIRE(l.lds.has_value());
    CHECK(*l.lds >= 3);
    CHECK(*l.lds <= 5);
    CHECK(qpet_to_ds(l.suvpeak / liver, cfg.ds_thresholds) == *l.lds);
  }
}

TEST_CASE("noiseless lesion peaks respect the organ ladder") {
  PhantomConfig cfg;
  cfg.seed = 53;
  cfg.noise_sigma = 0.0;
  cfg.n_baseline_lesions = 5;
  cfg.residual_fraction = 1.0;
  auto s = generate(cfg);
  REQUIRE(!s.gt2.lesions.empty());
  for (const Lesion& l : s.gt2.lesions) {
    if (*l.lds == 3) {
      CHECK(l.suvpeak > cfg.mediastinum.suv);
      CHECK(l.suvpeak <= cfg.liver.suv);
    } else {
      CHECK(l.suvpeak > cfg.liver.suv);
    }
  }
}

TEST_CASE("lesions avoid the organs and stay inside the body") {
  PhantomConfig cfg;
  cfg.seed = 61;
  cfg.n_baseline_lesions = 5;
  cfg.new_lesion_count = 2;
  auto s = generate(cfg);
  auto check_set = [&](const LesionSet& ls) {
    for (const Lesion& l : ls.lesions)
      for (int64_t v : l.voxels) {
        auto i = static_cast<size_t>(v);
        CHECK(s.liver_mask.values[i] == 0.0);
        CHECK(s.spleen_mask.values[i] == 0.0);
        CHECK(s.mediastinum_mask.values[i] == 0.0);
        CHECK(s.body_mask.values[i] == 1.0);
      }
  };
  check_set(s.gt1);
  check_set(s.gt2);

  SUBCASE("liver reads back its configured level through the noise") {
    CHECK(mask_mean(s.pet2, s.liver_mask) == doctest::Approx(cfg.liver.suv).epsilon(0.03));
  }
}

TEST_CASE("ct is a two-level map aligned with the body mask") {
  PhantomConfig cfg;
  cfg.seed = 71;
  auto s = generate(cfg);
  CHECK(s.ct1.kind == VoxelKind::HU);
  CHECK(s.ct1.values == s.ct2.values);
  for (size_t i = 0; i < s.ct1.values.size(); ++i) {
    double want = s.body_mask.values[i] == 1.0 ? cfg.soft_tissue_hu : cfg.air_hu;
    CHECK(s.ct1.values[i] == want);
  }
}

TEST_CASE("equivocal flags follow the configured fraction at the extremes") {
  PhantomConfig cfg;
  cfg.seed = 83;
  cfg.n_baseline_lesions = 4;
  cfg.residual_fraction = 1.0;

  auto none = generate(cfg);
  for (const Lesion& l : none.gt1.lesions) CHECK_FALSE(l.equivocal);
  for (const Lesion& l : none.gt2.lesions) CHECK_FALSE(l.equivocal);

  cfg.equivocal_fraction = 1.0;
  auto all = generate(cfg);
  for (const Lesion& l : all.gt1.lesions) CHECK(l.equivocal);
  for (const Lesion& l : all.gt2.lesions) CHECK(l.equivocal);
}

TEST_CASE("demographics land in pediatric ranges") {
  PhantomConfig cfg;
  cfg.seed = 97;
  auto s = generate(cfg);
  CHECK(s.demographics.age_years >= 3.0);
  CHECK(s.demographics.age_years <= 21.0);
  CHECK(s.demographics.weight_kg > 0.0);
  CHECK(s.demographics.injected_dose_mbq_per_kg >= 3.0);
  CHECK(s.demographics.injected_dose_mbq_per_kg <= 6.0);
  CHECK((s.demographics.sex == "m" || s.demographics.sex == "f"));
  CHECK((s.demographics.scanner == "A" || s.demographics.scanner == "B"));
}

TEST_CASE("config validation rejects bad settings") {
  PhantomConfig cfg;
  cfg.residual_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = PhantomConfig{};
  cfg.dims = {8, 48, 48};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = PhantomConfig{};
  cfg.lesion_edge_floor = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = PhantomConfig{};
  cfg.residual_shrink = {0.9, 0.7};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = PhantomConfig{};
  cfg.mediastinum.suv = 3.0;  // above the liver
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = PhantomConfig{};
  cfg.lesion_peak_suv = {0.5, 5.0};  // below background
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("zero misregistration leaves the baseline in place") {
  PhantomConfig cfg;
  cfg.seed = 7;
  auto s = generate(cfg);
  auto moved = inject_misregistration(s, {0, 0, 0}, {0, 0, 0});
  REQUIRE(moved.gt1.lesions.size() == s.gt1.lesions.size());
  for (size_t i = 0; i < s.gt1.lesions.size(); ++i)
    CHECK(moved.gt1.lesions[i].voxels == s.gt1.lesions[i].voxels);
  for (size_t i = 0; i < s.pet1.values.size(); ++i)
    CHECK(moved.pet1.values[i] == doctest::Approx(s.pet1.values[i]).epsilon(1e-12));
  CHECK(moved.pet2.values == s.pet2.values);  // interim frame untouched
}

TEST_CASE("an on-grid shift moves lesion centroids exactly") {
  PhantomConfig cfg;
  cfg.seed = 13;
  cfg.equivocal_fraction = 1.0;
  auto s = generate(cfg);
  auto moved = inject_misregistration(s, {6, 0, 0}, {0, 0, 0});

  REQUIRE(moved.gt1.lesions.size() == s.gt1.lesions.size());
  for (size_t i = 0; i < s.gt1.lesions.size(); ++i) {
    const Lesion& a = s.gt1.lesions[i];
    const Lesion& b = moved.gt1.lesions[i];
    CHECK(b.id == a.id);
    CHECK(b.voxels.size() == a.voxels.size());
    CHECK(b.centroid_mm[0] == doctest::Approx(a.centroid_mm[0] + 6.0).epsilon(1e-9));
    CHECK(b.centroid_mm[1] == doctest::Approx(a.centroid_mm[1]).epsilon(1e-9));
    CHECK(b.centroid_mm[2] == doctest::Approx(a.centroid_mm[2]).epsilon(1e-9));
    CHECK(b.equivocal);  // annotation carried through the move
  }
}
