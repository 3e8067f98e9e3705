#include "laspet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "laspet/metrics.hpp"
#include "laspet/registration.hpp"
#include "laspet/rng.hpp"

namespace laspet {

void PhantomConfig::validate() const {
  for (int d : dims)
    if (d < 16) throw std::invalid_argument("PhantomConfig: dims must be >= 16");
  for (double s : spacing)
    if (!(s > 0.0)) throw std::invalid_argument("PhantomConfig: spacing must be > 0");
  if (n_baseline_lesions < 0 || new_lesion_count < 0)
    throw std::invalid_argument("PhantomConfig: lesion counts must be >= 0");
  if (residual_fraction < 0.0 || residual_fraction > 1.0)
    throw std::invalid_argument("PhantomConfig: residual_fraction must be in [0,1]");
  if (equivocal_fraction < 0.0 || equivocal_fraction > 1.0)
    throw std::invalid_argument("PhantomConfig: equivocal_fraction must be in [0,1]");
  if (!(lesion_radius_mm[0] > 0.0 && lesion_radius_mm[1] >= lesion_radius_mm[0]))
    throw std::invalid_argument("PhantomConfig: bad lesion radius range");
  if (!(lesion_peak_suv[0] > background_suv && lesion_peak_suv[1] >= lesion_peak_suv[0]))
    throw std::invalid_argument("PhantomConfig: lesion peaks must exceed background");
  if (!(lesion_edge_floor > 0.0 && lesion_edge_floor < 1.0))
    throw std::invalid_argument("PhantomConfig: lesion_edge_floor must be in (0,1)");
  if (!(residual_shrink[0] > 0.0 && residual_shrink[1] <= 1.0 &&
        residual_shrink[0] <= residual_shrink[1]))
    throw std::invalid_argument("PhantomConfig: bad residual_shrink range");
  if (noise_sigma < 0.0)
    throw std::invalid_argument("PhantomConfig: noise_sigma must be >= 0");
  ds_thresholds.validate();
  if (!(mediastinum.suv < liver.suv))
    throw std::invalid_argument("PhantomConfig: mediastinum level must sit below liver");
}

namespace {

struct LesionGeom {
  std::array<double, 3> center_mm{};
  std::array<double, 3> radii_mm{};
  double exponent = 2.5;
  std::vector<int64_t> support;   // voxel indices with s <= 1
  std::vector<double> profile;    // falloff value per support voxel
  double amplitude = 0.0;         // inserted SUV above background at s = 0
};

double superellipsoid_s(const std::array<double, 3>& p, const LesionGeom& g) {
  double acc = 0.0;
  for (int a = 0; a < 3; ++a)
    acc += std::pow(std::abs((p[a] - g.center_mm[a]) / g.radii_mm[a]), g.exponent);
  return std::pow(acc, 1.0 / g.exponent);
}

// Fills support/profile by scanning the bounding box of the superellipsoid.
void rasterize(LesionGeom& g, const Volume3D& grid, double edge_floor) {
  g.support.clear();
  g.profile.clear();
  std::array<int, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max(0, static_cast<int>(std::floor(
                            (g.center_mm[a] - g.radii_mm[a] - grid.origin[a]) / grid.spacing[a] - 0.5)));
    hi[a] = std::min(grid.dims[a] - 1,
                     static_cast<int>(std::ceil(
                         (g.center_mm[a] + g.radii_mm[a] - grid.origin[a]) / grid.spacing[a] - 0.5)));
  }
  for (int z = lo[2]; z <= hi[2]; ++z)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int x = lo[0]; x <= hi[0]; ++x) {
        double s = superellipsoid_s(grid.voxel_center(x, y, z), g);
        if (s <= 1.0) {
          g.support.push_back(grid.index(x, y, z));
          g.profile.push_back(1.0 - (1.0 - edge_floor) * s * s);
        }
      }
}

// Mean profile over the voxels the 1 ml suvpeak sphere will average: the
// support voxels within the sphere radius of the lesion center (the hottest
// voxel sits at the snapped center).
double sphere_profile_mean(const LesionGeom& g, const Volume3D& grid) {
  const double r = std::cbrt(1000.0 * 3.0 / (4.0 * std::numbers::pi));
  double sum = 0.0;
  int64_t n = 0;
  for (size_t i = 0; i < g.support.size(); ++i) {
    int64_t vi = g.support[i];
    int x = static_cast<int>(vi % grid.dims[0]);
    int y = static_cast<int>((vi / grid.dims[0]) % grid.dims[1]);
    int z = static_cast<int>(vi / (static_cast<int64_t>(grid.dims[0]) * grid.dims[1]));
    auto c = grid.voxel_center(x, y, z);
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) d2 += (c[a] - g.center_mm[a]) * (c[a] - g.center_mm[a]);
    if (std::sqrt(d2) <= r) {
      sum += g.profile[i];
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

std::array<double, 3> physical_extent(const PhantomConfig& cfg) {
  return {cfg.dims[0] * cfg.spacing[0], cfg.dims[1] * cfg.spacing[1],
          cfg.dims[2] * cfg.spacing[2]};
}

std::array<double, 3> organ_center(const OrganSpec& o, const PhantomConfig& cfg) {
  auto ext = physical_extent(cfg);
  return {o.center_frac[0] * ext[0], o.center_frac[1] * ext[1], o.center_frac[2] * ext[2]};
}

double dist3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double d2 = 0.0;
  for (int i = 0; i < 3; ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d2);
}

// Body is an axis-aligned ellipsoid centered in the volume.
bool inside_body(const std::array<double, 3>& p, const PhantomConfig& cfg,
                 double margin_mm = 0.0) {
  auto ext = physical_extent(cfg);
  double acc = 0.0;
  for (int a = 0; a < 3; ++a) {
    double semi = 0.44 * ext[a] - margin_mm;
    acc += (p[a] - 0.5 * ext[a]) * (p[a] - 0.5 * ext[a]) / (semi * semi);
  }
  return acc <= 1.0;
}

std::array<double, 3> snap_to_voxel_center(const std::array<double, 3>& p,
                                           const Volume3D& grid) {
  std::array<double, 3> out{};
  for (int a = 0; a < 3; ++a) {
    int idx = static_cast<int>(std::round((p[a] - grid.origin[a]) / grid.spacing[a] - 0.5));
    idx = std::clamp(idx, 0, grid.dims[a] - 1);
    out[a] = grid.origin[a] + (idx + 0.5) * grid.spacing[a];
  }
  return out;
}

struct PlacementContext {
  const PhantomConfig& cfg;
  const Volume3D& grid;
  std::vector<std::array<double, 3>> organ_centers;
  std::vector<double> organ_radii;
  std::vector<const LesionGeom*> existing;

  bool collides(const std::array<double, 3>& c, double rmax) const {
    for (size_t i = 0; i < organ_centers.size(); ++i)
      if (dist3(c, organ_centers[i]) < rmax + organ_radii[i] + 2.0) return true;
    // the gap between lesion bounding spheres must exceed the voxel diagonal,
    // otherwise two lesions could land in 26-adjacent voxels and merge into
    // one connected component
    double diag = std::sqrt(grid.spacing[0] * grid.spacing[0] +
                            grid.spacing[1] * grid.spacing[1] +
                            grid.spacing[2] * grid.spacing[2]);
    for (const LesionGeom* g : existing) {
      double other = std::max({g->radii_mm[0], g->radii_mm[1], g->radii_mm[2]});
      if (dist3(c, g->center_mm) < rmax + other + diag + 1.0) return true;
    }
    return !inside_body(c, cfg, rmax + 2.0);
  }
};

LesionGeom place_lesion(Rng& rng, const PlacementContext& ctx, double edge_floor) {
  auto ext = physical_extent(ctx.cfg);
  for (int attempt = 0; attempt < ctx.cfg.max_place_tries; ++attempt) {
    LesionGeom g;
    for (int a = 0; a < 3; ++a)
      g.radii_mm[a] = rng.uniform(ctx.cfg.lesion_radius_mm[0], ctx.cfg.lesion_radius_mm[1]);
    g.exponent = rng.uniform(2.0, 3.0);
    std::array<double, 3> c{rng.uniform(0.15 * ext[0], 0.85 * ext[0]),
                            rng.uniform(0.15 * ext[1], 0.85 * ext[1]),
                            rng.uniform(0.15 * ext[2], 0.85 * ext[2])};
    c = snap_to_voxel_center(c, ctx.grid);
    double rmax = std::max({g.radii_mm[0], g.radii_mm[1], g.radii_mm[2]});
    if (ctx.collides(c, rmax)) continue;
    g.center_mm = c;
    rasterize(g, ctx.grid, edge_floor);
    // keep digitized volumes clear of the 0.2 ml small-component filter
    double vol_ml = static_cast<double>(g.support.size()) * ctx.grid.voxel_volume_ml();
    if (vol_ml < 0.3) continue;
    return g;
  }
  throw std::runtime_error("phantom: could not place a lesion without overlap");
}

void paint_sphere(Volume3D& mask, Volume3D& pet, const std::array<double, 3>& center,
                  double radius, double suv) {
  for (int z = 0; z < mask.dims[2]; ++z)
    for (int y = 0; y < mask.dims[1]; ++y)
      for (int x = 0; x < mask.dims[0]; ++x)
        if (dist3(mask.voxel_center(x, y, z), center) <= radius) {
          mask.at(x, y, z) = 1.0;
          pet.at(x, y, z) = suv;
        }
}

void add_lesion(Volume3D& pet, const LesionGeom& g) {
  for (size_t i = 0; i < g.support.size(); ++i)
    pet.values[static_cast<size_t>(g.support[i])] += g.amplitude * g.profile[i];
}

void add_truncated_noise(Volume3D& pet, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  for (double& v : pet.values) {
    double n = std::clamp(rng.normal(0.0, sigma), -3.0 * sigma, 3.0 * sigma);
    v = std::max(0.0, v + n);
  }
}

// Mid-bin qPET target for an intended Deauville score.
double ds_target_q(int ds, const QpetThresholds& th) {
  switch (ds) {
    case 3: return 0.5 * (th.t23 + th.t34);
    case 4: return 0.5 * (th.t34 + th.t45);
    case 5: return th.t45 * 1.15;
    default: throw std::logic_error("ds_target_q: residual lesions score 3..5");
  }
}

}  // namespace

PatientStudy generate(const PhantomConfig& cfg) {
  cfg.validate();
  PatientStudy study;
  study.config = cfg;
  study.id = "phantom-" + std::to_string(cfg.seed);

  const Volume3D grid(cfg.dims, cfg.spacing, VoxelKind::SUV);
  auto ext = physical_extent(cfg);

  // base volumes: two-tissue CT, organ-painted PET background
  Volume3D ct(cfg.dims, cfg.spacing, VoxelKind::HU, cfg.air_hu);
  Volume3D pet_base(cfg.dims, cfg.spacing, VoxelKind::SUV, cfg.air_suv);
  Volume3D body(cfg.dims, cfg.spacing, VoxelKind::Label, 0.0);
  for (int z = 0; z < cfg.dims[2]; ++z)
    for (int y = 0; y < cfg.dims[1]; ++y)
      for (int x = 0; x < cfg.dims[0]; ++x)
        if (inside_body(grid.voxel_center(x, y, z), cfg)) {
          body.at(x, y, z) = 1.0;
          ct.at(x, y, z) = cfg.soft_tissue_hu;
          pet_base.at(x, y, z) = cfg.background_suv;
        }

  Volume3D liver_mask(cfg.dims, cfg.spacing, VoxelKind::Label, 0.0);
  Volume3D spleen_mask(cfg.dims, cfg.spacing, VoxelKind::Label, 0.0);
  Volume3D medi_mask(cfg.dims, cfg.spacing, VoxelKind::Label, 0.0);
  paint_sphere(liver_mask, pet_base, organ_center(cfg.liver, cfg), cfg.liver.radius_mm,
               cfg.liver.suv);
  paint_sphere(spleen_mask, pet_base, organ_center(cfg.spleen, cfg), cfg.spleen.radius_mm,
               cfg.spleen.suv);
  paint_sphere(medi_mask, pet_base, organ_center(cfg.mediastinum, cfg),
               cfg.mediastinum.radius_mm, cfg.mediastinum.suv);

  // lesion placement
  Rng place_rng(Rng::derive(cfg.seed, "place"));
  PlacementContext ctx{cfg, grid, {}, {}, {}};
  for (const OrganSpec* o : {&cfg.liver, &cfg.spleen, &cfg.mediastinum}) {
    ctx.organ_centers.push_back(organ_center(*o, cfg));
    ctx.organ_radii.push_back(o->radius_mm);
  }

  std::vector<LesionGeom> baseline;
  baseline.reserve(static_cast<size_t>(cfg.n_baseline_lesions));
  for (int i = 0; i < cfg.n_baseline_lesions; ++i) {
    baseline.push_back(place_lesion(place_rng, ctx, cfg.lesion_edge_floor));
    ctx.existing.push_back(&baseline.back());
  }

  // minimum amplitude keeping every lesion voxel above background + 3 sigma
  // after +-3 sigma truncated noise, with margin
  const double a_min = (6.0 * cfg.noise_sigma + 0.05) / cfg.lesion_edge_floor;

  Rng intens_rng(Rng::derive(cfg.seed, "intensity"));
  for (LesionGeom& g : baseline) {
    double peak = intens_rng.uniform(cfg.lesion_peak_suv[0], cfg.lesion_peak_suv[1]);
    g.amplitude = std::max(peak - cfg.background_suv, a_min);
  }

  // choose persisting lesions, shrink them, then add interim-only lesions
  const int n_persist =
      static_cast<int>(std::llround(cfg.residual_fraction * cfg.n_baseline_lesions));
  std::vector<int> order(baseline.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[place_rng.uniform_int(i)]);
  order.resize(static_cast<size_t>(n_persist));
  std::sort(order.begin(), order.end());  // keep id order stable at PET2

  std::vector<LesionGeom> interim;
  interim.reserve(order.size() + static_cast<size_t>(cfg.new_lesion_count));
  std::vector<int> intended_ds;
  for (int idx : order) {
    const LesionGeom& parent = baseline[static_cast<size_t>(idx)];
    double f = place_rng.uniform(cfg.residual_shrink[0], cfg.residual_shrink[1]);
    LesionGeom g;
    // grow the shrink factor back toward 1 if digitization leaves the
    // residual below the small-component filter margin
    for (;; f = std::min(1.0, f + 0.1)) {
      g = parent;
      for (int a = 0; a < 3; ++a) g.radii_mm[a] *= f;
      rasterize(g, grid, cfg.lesion_edge_floor);
      double vol_ml = static_cast<double>(g.support.size()) * grid.voxel_volume_ml();
      if (vol_ml >= 0.3 || f >= 1.0) break;
    }
    if (g.support.empty())
      throw std::runtime_error("phantom: residual lesion shrank to nothing");
    interim.push_back(std::move(g));
  }
  for (int i = 0; i < cfg.new_lesion_count; ++i) {
    interim.push_back(place_lesion(place_rng, ctx, cfg.lesion_edge_floor));
    ctx.existing.push_back(&interim.back());
  }
  for (size_t i = 0; i < interim.size(); ++i)
    intended_ds.push_back(3 + static_cast<int>(intens_rng.uniform_int(3)));

  // solve interim amplitudes against the mid-bin qPET targets
  std::vector<double> sphere_m(interim.size());
  for (size_t i = 0; i < interim.size(); ++i) {
    sphere_m[i] = sphere_profile_mean(interim[i], grid);
    double target_peak = ds_target_q(intended_ds[i], cfg.ds_thresholds) * cfg.liver.suv;
    interim[i].amplitude =
        std::max((target_peak - cfg.background_suv) / sphere_m[i], a_min);
  }

  // assemble PET volumes and add noise
  Volume3D pet1 = pet_base;
  for (const LesionGeom& g : baseline) add_lesion(pet1, g);
  Volume3D pet2 = pet_base;
  for (const LesionGeom& g : interim) add_lesion(pet2, g);
  Rng noise1(Rng::derive(cfg.seed, "noise1"));
  Rng noise2(Rng::derive(cfg.seed, "noise2"));
  add_truncated_noise(pet1, cfg.noise_sigma, noise1);
  add_truncated_noise(pet2, cfg.noise_sigma, noise2);

  // ground-truth label volumes in placement order
  Volume3D gt1_labels(cfg.dims, cfg.spacing, VoxelKind::Label, 0.0);
  for (size_t i = 0; i < baseline.size(); ++i)
    for (int64_t vi : baseline[i].support)
      gt1_labels.values[static_cast<size_t>(vi)] = static_cast<double>(i + 1);
  Volume3D gt2_labels(cfg.dims, cfg.spacing, VoxelKind::Label, 0.0);
  for (size_t i = 0; i < interim.size(); ++i)
    for (int64_t vi : interim[i].support)
      gt2_labels.values[static_cast<size_t>(vi)] = static_cast<double>(i + 1);

  study.gt1 = extract_lesions(gt1_labels, &pet1);
  study.gt2 = extract_lesions(gt2_labels, &pet2);

  // assign the lesion Deauville scores from measured qPET; nudge amplitudes
  // when noise pushes a lesion out of its intended bin
  const double liver_meas = mask_mean(pet2, liver_mask);
  for (size_t i = 0; i < interim.size(); ++i) {
    Lesion& les = study.gt2.lesions[i];
    int assigned = 0;
    for (int tries = 0; tries < 6; ++tries) {
      double q = les.suvpeak / liver_meas;
      assigned = qpet_to_ds(q, cfg.ds_thresholds);
      if (assigned == intended_ds[i]) break;
      double target_peak = ds_target_q(intended_ds[i], cfg.ds_thresholds) * liver_meas;
      double delta_a = (target_peak - les.suvpeak) / sphere_m[i];
      for (size_t k = 0; k < interim[i].support.size(); ++k)
        pet2.values[static_cast<size_t>(interim[i].support[k])] +=
            delta_a * interim[i].profile[k];
      interim[i].amplitude += delta_a;
      // refresh this lesion's measured statistics
      LesionSet fresh = extract_lesions(gt2_labels, &pet2);
      les = fresh.lesions[i];
    }
    if (assigned != intended_ds[i])
      throw std::runtime_error("phantom: lesion qPET would not settle into its bin");
    les.lds = assigned;

    // intensity-class consistency with the organ levels
    double peak_noiseless = cfg.background_suv + interim[i].amplitude;
    bool ok = assigned == 3
                  ? (peak_noiseless > cfg.mediastinum.suv && peak_noiseless <= cfg.liver.suv)
                  : peak_noiseless > cfg.liver.suv;
    if (!ok) throw std::runtime_error("phantom: lesion intensity inconsistent with LDS");
  }

  // equivocal flags
  Rng equiv_rng(Rng::derive(cfg.seed, "equivocal"));
  for (Lesion& l : study.gt1.lesions) l.equivocal = equiv_rng.bernoulli(cfg.equivocal_fraction);
  for (Lesion& l : study.gt2.lesions) l.equivocal = equiv_rng.bernoulli(cfg.equivocal_fraction);

  // demographics for subgroup analyses
  Rng demo_rng(Rng::derive(cfg.seed, "demo"));
  study.demographics.age_years = 3.0 + demo_rng.uniform(0.0, 18.0);
  study.demographics.sex = demo_rng.bernoulli(0.5) ? "f" : "m";
  study.demographics.weight_kg = 12.0 + study.demographics.age_years * 3.0 +
                                 demo_rng.uniform(-4.0, 4.0);
  study.demographics.injected_dose_mbq_per_kg = demo_rng.uniform(3.0, 6.0);
  study.demographics.scanner = demo_rng.bernoulli(0.5) ? "B" : "A";

  study.pet1 = std::move(pet1);
  study.pet2 = std::move(pet2);
  study.ct1 = ct;
  study.ct2 = std::move(ct);
  study.liver_mask = std::move(liver_mask);
  study.spleen_mask = std::move(spleen_mask);
  study.mediastinum_mask = std::move(medi_mask);
  study.body_mask = std::move(body);
  return study;
}

PatientStudy inject_misregistration(const PatientStudy& s,
                                    std::array<double, 3> shift_mm,
                                    std::array<double, 3> rot_deg) {
  PatientStudy out = s;
  std::array<double, 3> center{
      s.pet1.origin[0] + 0.5 * s.pet1.dims[0] * s.pet1.spacing[0],
      s.pet1.origin[1] + 0.5 * s.pet1.dims[1] * s.pet1.spacing[1],
      s.pet1.origin[2] + 0.5 * s.pet1.dims[2] * s.pet1.spacing[2]};
  RigidTransform forward = RigidTransform::about_center(center, rot_deg, shift_mm);
  RigidTransform sampling = forward.inverse();
  out.pet1 = apply_transform(s.pet1, sampling, ResampleMode::Trilinear);
  out.ct1 = apply_transform(s.ct1, sampling, ResampleMode::Trilinear);
  Volume3D moved_labels =
      apply_transform(s.gt1.to_labels(), sampling, ResampleMode::Nearest);
  out.gt1 = extract_lesions(moved_labels, &out.pet1);
  // carry the annotation flags over by label id
  for (size_t i = 0; i < out.gt1.lesions.size(); ++i) {
    int id = out.gt1.lesions[i].id;
    for (const Lesion& src : s.gt1.lesions)
      if (src.id == id) {
        out.gt1.lesions[i].equivocal = src.equivocal;
        out.gt1.lesions[i].lds = src.lds;
      }
  }
  return out;
}

}  // namespace laspet
