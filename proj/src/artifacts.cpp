#include "laspet/artifacts.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace laspet {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
}

// configs are declarative; an unrecognized key is a typo, not an extension
void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* ctx) {
  if (!j.is_object()) throw std::invalid_argument(std::string(ctx) + ": expected a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw std::invalid_argument(std::string(ctx) + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->template get<T>();
}

json organ_json(const OrganSpec& o) {
  return json{{"center_frac", o.center_frac}, {"radius_mm", o.radius_mm}, {"suv", o.suv}};
}

OrganSpec organ_from(const json& j, const char* ctx) {
  check_keys(j, {"center_frac", "radius_mm", "suv"}, ctx);
  OrganSpec o;
  read_field(j, "center_frac", o.center_frac);
  read_field(j, "radius_mm", o.radius_mm);
  read_field(j, "suv", o.suv);
  return o;
}

json thresholds_json(const QpetThresholds& t) {
  return json::array({t.t12, t.t23, t.t34, t.t45});
}

QpetThresholds thresholds_from(const json& j, const char* ctx) {
  if (!j.is_array() || j.size() != 4)
    throw std::invalid_argument(std::string(ctx) + ": expected 4 threshold values");
  return QpetThresholds{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                        j[3].get<double>()};
}

json phantom_json_object(const PhantomConfig& c) {
  return json{{"seed", c.seed},
              {"dims", c.dims},
              {"spacing", c.spacing},
              {"n_baseline_lesions", c.n_baseline_lesions},
              {"residual_fraction", c.residual_fraction},
              {"new_lesion_count", c.new_lesion_count},
              {"equivocal_fraction", c.equivocal_fraction},
              {"lesion_radius_mm", c.lesion_radius_mm},
              {"lesion_peak_suv", c.lesion_peak_suv},
              {"lesion_edge_floor", c.lesion_edge_floor},
              {"residual_shrink", c.residual_shrink},
              {"background_suv", c.background_suv},
              {"air_suv", c.air_suv},
              {"soft_tissue_hu", c.soft_tissue_hu},
              {"air_hu", c.air_hu},
              {"noise_sigma", c.noise_sigma},
              {"liver", organ_json(c.liver)},
              {"spleen", organ_json(c.spleen)},
              {"mediastinum", organ_json(c.mediastinum)},
              {"ds_thresholds", thresholds_json(c.ds_thresholds)},
              {"max_place_tries", c.max_place_tries}};
}

PhantomConfig phantom_from(const json& j) {
  check_keys(j,
             {"seed", "dims", "spacing", "n_baseline_lesions", "residual_fraction",
              "new_lesion_count", "equivocal_fraction", "lesion_radius_mm", "lesion_peak_suv",
              "lesion_edge_floor", "residual_shrink", "background_suv", "air_suv",
              "soft_tissue_hu", "air_hu", "noise_sigma", "liver", "spleen", "mediastinum",
              "ds_thresholds", "max_place_tries"},
             "phantom");
  PhantomConfig c;
  read_field(j, "seed", c.seed);
  read_field(j, "dims", c.dims);
  read_field(j, "spacing", c.spacing);
  read_field(j, "n_baseline_lesions", c.n_baseline_lesions);
  read_field(j, "residual_fraction", c.residual_fraction);
  read_field(j, "new_lesion_count", c.new_lesion_count);
  read_field(j, "equivocal_fraction", c.equivocal_fraction);
  read_field(j, "lesion_radius_mm", c.lesion_radius_mm);
  read_field(j, "lesion_peak_suv", c.lesion_peak_suv);
  read_field(j, "lesion_edge_floor", c.lesion_edge_floor);
  read_field(j, "residual_shrink", c.residual_shrink);
  read_field(j, "background_suv", c.background_suv);
  read_field(j, "air_suv", c.air_suv);
  read_field(j, "soft_tissue_hu", c.soft_tissue_hu);
  read_field(j, "air_hu", c.air_hu);
  read_field(j, "noise_sigma", c.noise_sigma);
  if (auto it = j.find("liver"); it != j.end()) c.liver = organ_from(*it, "phantom.liver");
  if (auto it = j.find("spleen"); it != j.end()) c.spleen = organ_from(*it, "phantom.spleen");
  if (auto it = j.find("mediastinum"); it != j.end())
    c.mediastinum = organ_from(*it, "phantom.mediastinum");
  if (auto it = j.find("ds_thresholds"); it != j.end())
    c.ds_thresholds = thresholds_from(*it, "phantom.ds_thresholds");
  read_field(j, "max_place_tries", c.max_place_tries);
  return c;
}

SegmenterKind segmenter_from(const std::string& s) {
  for (SegmenterKind k : {SegmenterKind::Oracle, SegmenterKind::Rule, SegmenterKind::Network})
    if (s == segmenter_name(k)) return k;
  throw std::invalid_argument("segmenter: expected oracle|rule|network, got '" + s + "'");
}

json net_json(const nn::LasNetConfig& c) {
  return json{{"in_channels", c.in_channels}, {"base_dim", c.base_dim},
              {"depths", c.depths},           {"num_heads", c.num_heads},
              {"window_size", c.window_size}, {"patch_size", c.patch_size},
              {"mlp_ratio", c.mlp_ratio},     {"leaky_slope", c.leaky_slope}};
}

nn::LasNetConfig net_from(const json& j) {
  check_keys(j,
             {"in_channels", "base_dim", "depths", "num_heads", "window_size", "patch_size",
              "mlp_ratio", "leaky_slope"},
             "net");
  nn::LasNetConfig c;
  read_field(j, "in_channels", c.in_channels);
  read_field(j, "base_dim", c.base_dim);
  read_field(j, "depths", c.depths);
  read_field(j, "num_heads", c.num_heads);
  read_field(j, "window_size", c.window_size);
  read_field(j, "patch_size", c.patch_size);
  read_field(j, "mlp_ratio", c.mlp_ratio);
  read_field(j, "leaky_slope", c.leaky_slope);
  return c;
}

// optimizer and bootstrap seeds are excluded on purpose: run_pipeline derives
// them from the root seed
json optimizer_json(const nn::OptimizerConfig& c) {
  return json{{"steps", c.steps},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"cosine", c.cosine},
              {"augment", c.augment},
              {"lesion_center_prob", c.lesion_center_prob}};
}

nn::OptimizerConfig optimizer_from(const json& j) {
  check_keys(j,
             {"steps", "lr", "weight_decay", "beta1", "beta2", "eps", "cosine", "augment",
              "lesion_center_prob"},
             "optimizer");
  nn::OptimizerConfig c;
  read_field(j, "steps", c.steps);
  read_field(j, "lr", c.lr);
  read_field(j, "weight_decay", c.weight_decay);
  read_field(j, "beta1", c.beta1);
  read_field(j, "beta2", c.beta2);
  read_field(j, "eps", c.eps);
  read_field(j, "cosine", c.cosine);
  read_field(j, "augment", c.augment);
  read_field(j, "lesion_center_prob", c.lesion_center_prob);
  return c;
}

json lesion_json(const Lesion& l) {
  return json{{"id", l.id},
              {"centroid_mm", l.centroid_mm},
              {"volume_ml", l.volume_ml},
              {"suvmax", l.suvmax},
              {"suvmean", l.suvmean},
              {"suvpeak", l.suvpeak},
              {"lds", l.lds ? json(*l.lds) : json(nullptr)},
              {"equivocal", l.equivocal}};
}

json lesion_table(const LesionSet& ls) {
  json rows = json::array();
  for (const Lesion& l : ls.lesions) rows.push_back(lesion_json(l));
  return rows;
}

// annotations live in the table; geometry and statistics are rebuilt from
// the label and PET volumes
void apply_annotations(LesionSet& ls, const json& rows, const char* ctx) {
  if (rows.size() != ls.lesions.size())
    throw std::runtime_error(std::string(ctx) + ": lesion table size mismatch");
  for (const auto& row : rows) {
    int id = row.at("id").get<int>();
    Lesion* match = nullptr;
    for (Lesion& l : ls.lesions)
      if (l.id == id) match = &l;
    if (!match) throw std::runtime_error(std::string(ctx) + ": no lesion with id " +
                                         std::to_string(id));
    match->equivocal = row.at("equivocal").get<bool>();
    const json& lds = row.at("lds");
    match->lds = lds.is_null() ? std::nullopt : std::optional<int>(lds.get<int>());
  }
}

}  // namespace

std::string content_hash(const std::string& canonical_json) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical_json) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunManifest::deterministic_hash() const {
  json j{{"schema_version", schema_version},
         {"command", command},
         {"config_hash", config_hash},
         {"seed", seed},
         {"inputs", inputs},
         {"outputs", outputs},
         {"tool_version", tool_version}};
  return content_hash(j.dump());
}

std::string RunManifest::to_json() const {
  json j{{"schema_version", schema_version},
         {"command", command},
         {"config_hash", config_hash},
         {"seed", seed},
         {"inputs", inputs},
         {"outputs", outputs},
         {"tool_version", tool_version},
         {"wall_time_s", wall_time_s},
         {"manifest_hash", deterministic_hash()}};
  return j.dump(2) + "\n";
}

void write_manifest(const RunManifest& m, const std::string& path) {
  write_text(path, m.to_json());
}

std::string phantom_config_json(const PhantomConfig& cfg) {
  json j = phantom_json_object(cfg);
  j["schema_version"] = 1;
  return j.dump(2) + "\n";
}

PhantomConfig parse_phantom_config(const std::string& text) {
  json j = json::parse(text);
  if (j.contains("schema_version") && j.at("schema_version").get<int>() != 1)
    throw std::invalid_argument("phantom config: unsupported schema_version");
  j.erase("schema_version");
  return phantom_from(j);
}

std::string pipeline_config_json(const PipelineConfig& cfg) {
  json j{{"schema_version", 1},
         {"seed", cfg.seed},
         {"n_patients", cfg.n_patients},
         {"phantom", phantom_json_object(cfg.phantom)},
         {"lesion_count_range", cfg.lesion_count_range},
         {"misreg_shift_mm", cfg.misreg_shift_mm},
         {"misreg_rot_deg", cfg.misreg_rot_deg},
         {"segmenter", segmenter_name(cfg.segmenter)},
         {"rule", json{{"fixed_suv", cfg.rule_fixed_suv}, {"relative_frac", cfg.rule_relative_frac}}},
         {"mpdr", json{{"enabled", cfg.use_mpdr}, {"register_first", cfg.register_before_mpdr}}},
         {"net", net_json(cfg.net)},
         {"optimizer", optimizer_json(cfg.optimizer)},
         {"infer",
          json{{"overlap", cfg.infer_overlap},
               {"threshold", cfg.prob_threshold},
               {"min_component_ml", cfg.min_component_ml}}},
         {"eval",
          json{{"include_equivocal", cfg.eval.include_equivocal},
               {"bootstrap_trials", cfg.eval.bootstrap_trials}}}};
  return j.dump(2) + "\n";
}

PipelineConfig parse_pipeline_config(const std::string& text) {
  json j = json::parse(text);
  check_keys(j,
             {"schema_version", "seed", "n_patients", "phantom", "lesion_count_range",
              "misreg_shift_mm", "misreg_rot_deg", "segmenter", "rule", "mpdr", "net",
              "optimizer", "infer", "eval"},
             "pipeline config");
  if (j.contains("schema_version") && j.at("schema_version").get<int>() != 1)
    throw std::invalid_argument("pipeline config: unsupported schema_version");
  PipelineConfig cfg;
  read_field(j, "seed", cfg.seed);
  read_field(j, "n_patients", cfg.n_patients);
  if (auto it = j.find("phantom"); it != j.end()) cfg.phantom = phantom_from(*it);
  read_field(j, "lesion_count_range", cfg.lesion_count_range);
  read_field(j, "misreg_shift_mm", cfg.misreg_shift_mm);
  read_field(j, "misreg_rot_deg", cfg.misreg_rot_deg);
  if (auto it = j.find("segmenter"); it != j.end())
    cfg.segmenter = segmenter_from(it->get<std::string>());
  if (auto it = j.find("rule"); it != j.end()) {
    check_keys(*it, {"fixed_suv", "relative_frac"}, "rule");
    read_field(*it, "fixed_suv", cfg.rule_fixed_suv);
    read_field(*it, "relative_frac", cfg.rule_relative_frac);
  }
  if (auto it = j.find("mpdr"); it != j.end()) {
    check_keys(*it, {"enabled", "register_first"}, "mpdr");
    read_field(*it, "enabled", cfg.use_mpdr);
    read_field(*it, "register_first", cfg.register_before_mpdr);
  }
  if (auto it = j.find("net"); it != j.end()) cfg.net = net_from(*it);
  if (auto it = j.find("optimizer"); it != j.end()) cfg.optimizer = optimizer_from(*it);
  if (auto it = j.find("infer"); it != j.end()) {
    check_keys(*it, {"overlap", "threshold", "min_component_ml"}, "infer");
    read_field(*it, "overlap", cfg.infer_overlap);
    read_field(*it, "threshold", cfg.prob_threshold);
    read_field(*it, "min_component_ml", cfg.min_component_ml);
  }
  if (auto it = j.find("eval"); it != j.end()) {
    check_keys(*it, {"include_equivocal", "bootstrap_trials"}, "eval");
    read_field(*it, "include_equivocal", cfg.eval.include_equivocal);
    read_field(*it, "bootstrap_trials", cfg.eval.bootstrap_trials);
  }
  return cfg;
}

PipelineConfig read_pipeline_config(const std::string& path) {
  return parse_pipeline_config(read_text(path));
}

std::string transform_json(const RigidTransform& t) {
  json flat = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) flat.push_back(t.rotation[r][c]);
  for (int a = 0; a < 3; ++a) flat.push_back(t.translation[a]);
  return flat.dump() + "\n";
}

RigidTransform parse_transform_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.is_array() || j.size() != 12)
    throw std::invalid_argument("transform: expected a flat array of 12 numbers");
  RigidTransform t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.rotation[r][c] = j[3 * r + c].get<double>();
  for (int a = 0; a < 3; ++a) t.translation[a] = j[9 + a].get<double>();
  return t;
}

void write_study(const PatientStudy& st, const std::string& dir) {
  fs::create_directories(dir);
  auto at = [&](const char* name) { return (fs::path(dir) / name).string(); };
  write_mvol(st.pet1, at("pet1.mvol"));
  write_mvol(st.ct1, at("ct1.mvol"));
  write_mvol(st.pet2, at("pet2.mvol"));
  write_mvol(st.ct2, at("ct2.mvol"));
  write_mvol(st.gt1.to_labels(), at("gt1_labels.mvol"));
  write_mvol(st.gt2.to_labels(), at("gt2_labels.mvol"));
  write_mvol(st.liver_mask, at("liver_mask.mvol"));
  write_mvol(st.spleen_mask, at("spleen_mask.mvol"));
  write_mvol(st.mediastinum_mask, at("mediastinum_mask.mvol"));
  write_mvol(st.body_mask, at("body_mask.mvol"));

  json j{{"schema_version", 1},
         {"id", st.id},
         {"demographics",
          json{{"age_years", st.demographics.age_years},
               {"sex", st.demographics.sex},
               {"weight_kg", st.demographics.weight_kg},
               {"injected_dose_mbq_per_kg", st.demographics.injected_dose_mbq_per_kg},
               {"scanner", st.demographics.scanner}}},
         {"config", phantom_json_object(st.config)},
         {"gt1_lesions", lesion_table(st.gt1)},
         {"gt2_lesions", lesion_table(st.gt2)}};
  write_text(at("study.json"), j.dump(2) + "\n");
}

PatientStudy read_study(const std::string& dir) {
  auto at = [&](const char* name) { return (fs::path(dir) / name).string(); };
  PatientStudy st;
  st.pet1 = read_mvol(at("pet1.mvol"));
  st.ct1 = read_mvol(at("ct1.mvol"));
  st.pet2 = read_mvol(at("pet2.mvol"));
  st.ct2 = read_mvol(at("ct2.mvol"));
  st.liver_mask = read_mvol(at("liver_mask.mvol"));
  st.spleen_mask = read_mvol(at("spleen_mask.mvol"));
  st.mediastinum_mask = read_mvol(at("mediastinum_mask.mvol"));
  st.body_mask = read_mvol(at("body_mask.mvol"));
  st.gt1 = extract_lesions(read_mvol(at("gt1_labels.mvol")), &st.pet1);
  st.gt2 = extract_lesions(read_mvol(at("gt2_labels.mvol")), &st.pet2);

  json j = json::parse(read_text(at("study.json")));
  if (j.at("schema_version").get<int>() != 1)
    throw std::runtime_error("study.json: unsupported schema_version");
  st.id = j.at("id").get<std::string>();
  const json& d = j.at("demographics");
  st.demographics.age_years = d.at("age_years").get<double>();
  st.demographics.sex = d.at("sex").get<std::string>();
  st.demographics.weight_kg = d.at("weight_kg").get<double>();
  st.demographics.injected_dose_mbq_per_kg = d.at("injected_dose_mbq_per_kg").get<double>();
  st.demographics.scanner = d.at("scanner").get<std::string>();
  st.config = phantom_from(j.at("config"));
  apply_annotations(st.gt1, j.at("gt1_lesions"), "gt1_lesions");
  apply_annotations(st.gt2, j.at("gt2_lesions"), "gt2_lesions");
  return st;
}

}  // namespace laspet
