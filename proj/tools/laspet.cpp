#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "laspet/artifacts.hpp"
#include "laspet/rng.hpp"

using namespace laspet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

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

std::string options_hash(const json& opts) { return content_hash(opts.dump()); }

std::string with_manifest_hash(const std::string& report_text, const std::string& hash) {
  json j = json::parse(report_text);
  j["manifest_hash"] = hash;
  return j.dump(2) + "\n";
}

VoxelKind kind_from_name(const std::string& s) {
  for (VoxelKind k : {VoxelKind::SUV, VoxelKind::HU, VoxelKind::Label, VoxelKind::Prob})
    if (s == voxel_kind_name(k)) return k;
  throw std::runtime_error("unknown voxel kind '" + s + "'");
}

json volume_header_json(const Volume3D& v) {
  return json{{"schema_version", 1},
              {"kind", voxel_kind_name(v.kind)},
              {"dims", v.dims},
              {"spacing", v.spacing},
              {"origin", v.origin}};
}

Volume3D load_volume(const std::string& path) {
  if (fs::path(path).extension() == ".json") {
    json j = json::parse(read_text(path));
    Volume3D v;
    v.kind = kind_from_name(j.at("kind").get<std::string>());
    v.dims = j.at("dims").get<std::array<int, 3>>();
    v.spacing = j.at("spacing").get<std::array<double, 3>>();
    v.origin = j.at("origin").get<std::array<double, 3>>();
    v.values = j.at("values").get<std::vector<double>>();
    v.validate();
    return v;
  }
  return read_mvol(path);
}

void save_volume(const Volume3D& v, const std::string& path) {
  if (fs::path(path).extension() == ".json") {
    json j = volume_header_json(v);
    j["values"] = v.values;
    write_text(path, j.dump() + "\n");
    return;
  }
  write_mvol(v, path);
}

// single-file outputs get a sidecar manifest; directory outputs get
// <dir>/manifest.json
void sidecar_manifest(const char* command, const json& opts, uint64_t seed,
                      std::vector<std::string> inputs, std::vector<std::string> outputs,
                      const Timer& timer, const std::string& path) {
  RunManifest m;
  m.command = command;
  m.config_hash = options_hash(opts);
  m.seed = seed;
  m.inputs = std::move(inputs);
  m.outputs = std::move(outputs);
  m.wall_time_s = timer.seconds();
  write_manifest(m, path);
}

int criterion_index(const std::string& name) {
  if (name == "overlap") return 0;
  if (name == "suvmax") return 1;
  if (name == "dice50") return 2;
  throw std::invalid_argument("criterion must be overlap|suvmax|dice50");
}

// cohort directories hold one study subdirectory per patient
std::vector<std::string> cohort_dirs(const std::string& root) {
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "study.json"))
      dirs.push_back(entry.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("no study directories under " + root);
  return dirs;
}

int stage_exit(const std::string& stage) {
  if (stage == "phantom") return 3;
  if (stage == "train") return 4;
  if (stage == "segment") return 5;
  if (stage == "mpdr") return 6;
  if (stage == "eval") return 7;
  return 1;
}

struct PhantomArgs {
  uint64_t seed = 0;
  std::string config, out;
  int patients = 1;
  std::array<int, 2> lesion_range{0, 0};
};

int cmd_phantom(const PhantomArgs& a) {
  Timer timer;
  PhantomConfig base;
  if (!a.config.empty()) base = parse_phantom_config(read_text(a.config));
  fs::create_directories(a.out);

  std::vector<std::string> outputs;
  for (int i = 0; i < a.patients; ++i) {
    PhantomConfig pc = base;
    pc.seed = Rng::derive(a.seed, "phantom." + std::to_string(i));
    if (a.lesion_range != std::array<int, 2>{0, 0}) {
      int span = a.lesion_range[1] - a.lesion_range[0] + 1;
      pc.n_baseline_lesions = a.lesion_range[0] + i % span;
    }
    PatientStudy st = generate(pc);
    char id[16];
    std::snprintf(id, sizeof(id), "p%03d", i);
    st.id = id;
    write_study(st, (fs::path(a.out) / id).string());
    outputs.push_back(id);
    std::printf("%s: %zu baseline / %zu interim lesions\n", id, st.gt1.lesions.size(),
                st.gt2.lesions.size());
  }

  json opts{{"config", json::parse(phantom_config_json(base))},
            {"patients", a.patients},
            {"lesion_range", a.lesion_range}};
  std::vector<std::string> inputs;
  if (!a.config.empty()) inputs.push_back(a.config);
  sidecar_manifest("phantom", opts, a.seed, inputs, outputs, timer,
                   (fs::path(a.out) / "manifest.json").string());
  return 0;
}

int cmd_vol_info(const std::string& path, bool as_json) {
  Volume3D v = load_volume(path);
  double mn = 0.0, mx = 0.0, sum = 0.0;
  int64_t nonzero = 0;
  if (v.numel() > 0) {
    mn = mx = v.values[0];
    for (double x : v.values) {
      mn = std::min(mn, x);
      mx = std::max(mx, x);
      sum += x;
      if (x != 0.0) ++nonzero;
    }
  }
  double mean = v.numel() > 0 ? sum / static_cast<double>(v.numel()) : 0.0;
  if (as_json) {
    json j = volume_header_json(v);
    j["min"] = mn;
    j["max"] = mx;
    j["mean"] = mean;
    j["nonzero"] = nonzero;
    std::printf("%s\n", j.dump(2).c_str());
    return 0;
  }
  std::printf("kind    %s\n", voxel_kind_name(v.kind));
  std::printf("dims    %d x %d x %d\n", v.dims[0], v.dims[1], v.dims[2]);
  std::printf("spacing %g x %g x %g mm\n", v.spacing[0], v.spacing[1], v.spacing[2]);
  std::printf("origin  %g, %g, %g mm\n", v.origin[0], v.origin[1], v.origin[2]);
  std::printf("values  min %g  max %g  mean %g  nonzero %lld\n", mn, mx, mean,
              static_cast<long long>(nonzero));
  return 0;
}

int cmd_vol_convert(const std::string& in, const std::string& out) {
  save_volume(load_volume(in), out);
  std::printf("%s -> %s\n", in.c_str(), out.c_str());
  return 0;
}

struct SegmentArgs {
  std::string rule;
  std::string pet, roi, out;
  double fixed_suv = 2.5, relative_frac = 0.4, min_ml = 0.2;
  std::string checkpoint, pet1, ct1, pet2, ct2, out1, out2, prob1, prob2;
  double overlap = 0.625, threshold = 0.5;
};

int cmd_segment(const SegmentArgs& a) {
  Timer timer;
  if (a.rule == "threshold-union") {
    if (a.pet.empty() || a.roi.empty() || a.out.empty())
      throw std::invalid_argument("threshold-union rule needs --pet, --roi and --out");
    Volume3D labels = remove_small(
        connected_components(threshold_union(load_volume(a.pet), load_volume(a.roi),
                                             a.fixed_suv, a.relative_frac)),
        a.min_ml);
    save_volume(labels, a.out);
    json opts{{"rule", a.rule},
              {"fixed_suv", a.fixed_suv},
              {"relative_frac", a.relative_frac},
              {"min_ml", a.min_ml}};
    sidecar_manifest("segment", opts, 0, {a.pet, a.roi}, {a.out}, timer,
                     a.out + ".manifest.json");
    std::printf("%zu lesions -> %s\n", extract_lesions(labels).lesions.size(), a.out.c_str());
    return 0;
  }
  if (a.rule != "model") throw std::invalid_argument("--rule must be threshold-union|model");
  if (a.checkpoint.empty() || a.pet1.empty() || a.ct1.empty() || a.pet2.empty() ||
      a.ct2.empty() || a.out1.empty() || a.out2.empty())
    throw std::invalid_argument(
        "model rule needs --checkpoint, --pet1/--ct1/--pet2/--ct2, --out1 and --out2");
  nn::LasNetParams params = nn::load_params(a.checkpoint);
  auto [prob1, prob2] = nn::infer_volumes(load_volume(a.pet1), load_volume(a.ct1),
                                          load_volume(a.pet2), load_volume(a.ct2), params,
                                          a.overlap);
  Volume3D labels1 = remove_small(connected_components(binarize(prob1, a.threshold)), a.min_ml);
  Volume3D labels2 = remove_small(connected_components(binarize(prob2, a.threshold)), a.min_ml);
  save_volume(labels1, a.out1);
  save_volume(labels2, a.out2);
  std::vector<std::string> outputs{a.out1, a.out2};
  if (!a.prob1.empty()) {
    save_volume(prob1, a.prob1);
    outputs.push_back(a.prob1);
  }
  if (!a.prob2.empty()) {
    save_volume(prob2, a.prob2);
    outputs.push_back(a.prob2);
  }
  json opts{{"rule", a.rule},
            {"overlap", a.overlap},
            {"threshold", a.threshold},
            {"min_ml", a.min_ml}};
  sidecar_manifest("segment", opts, 0, {a.checkpoint, a.pet1, a.ct1, a.pet2, a.ct2}, outputs,
                   timer, a.out1 + ".manifest.json");
  std::printf("%zu baseline / %zu interim lesions\n", extract_lesions(labels1).lesions.size(),
              extract_lesions(labels2).lesions.size());
  return 0;
}

struct MetricsArgs {
  bool baseline = false, interim = false;
  std::string labels, pet, spleen, liver, out_json;
  double baseline_suvmax = -1.0;
  std::string baseline_json;
};

int cmd_metrics(const MetricsArgs& a) {
  if (a.baseline == a.interim)
    throw std::invalid_argument("pass exactly one of --baseline or --interim");
  Volume3D pet = load_volume(a.pet);
  LesionSet ls = extract_lesions(load_volume(a.labels), &pet);
  auto null_or = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };

  json j{{"schema_version", 1}};
  if (a.baseline) {
    Volume3D spleen;
    if (!a.spleen.empty()) spleen = load_volume(a.spleen);
    BaselineMetrics m = baseline_metrics(ls, a.spleen.empty() ? nullptr : &spleen);
    j["mtv_ml"] = m.mtv_ml;
    j["tlg_ml_suv"] = m.tlg_ml_suv;
    j["suvmax"] = m.suvmax;
    j["dmax_mm"] = null_or(m.dmax_mm);
    j["dspleen_mm"] = null_or(m.dspleen_mm);
    j["n_lesions"] = m.n_lesions;
  } else {
    double base_suvmax = a.baseline_suvmax;
    if (!a.baseline_json.empty())
      base_suvmax = json::parse(read_text(a.baseline_json)).at("suvmax").get<double>();
    if (base_suvmax < 0.0)
      throw std::invalid_argument("--interim needs --baseline-suvmax or --baseline-json");
    Volume3D liver;
    if (!a.liver.empty()) liver = load_volume(a.liver);
    InterimMetrics m =
        interim_metrics(ls, base_suvmax, pet, a.liver.empty() ? nullptr : &liver);
    j["suvmax"] = m.suvmax;
    j["delta_suvmax_pct"] = null_or(m.delta_suvmax_pct);
    j["qpet"] = null_or(m.qpet);
    j["n_residual"] = m.n_residual;
  }
  std::string text = j.dump(2) + "\n";
  std::printf("%s", text.c_str());
  if (!a.out_json.empty()) write_text(a.out_json, text);
  return 0;
}

struct RegisterArgs {
  std::string moving, fixed, out_transform;
};

int cmd_register(const RegisterArgs& a) {
  Timer timer;
  RegisterResult res = register_rigid(load_volume(a.moving), load_volume(a.fixed));
  write_text(a.out_transform, transform_json(res.transform));
  sidecar_manifest("register", json{{"moving", a.moving}, {"fixed", a.fixed}}, 0,
                   {a.moving, a.fixed}, {a.out_transform}, timer,
                   a.out_transform + ".manifest.json");
  std::printf("mse %.6g  rotation %.3f deg  shift %.3f, %.3f, %.3f mm  (%s, %d iters)\n",
              res.mse, res.transform.rotation_angle_deg(), res.transform.translation[0],
              res.transform.translation[1], res.transform.translation[2],
              res.converged ? "converged" : "not converged", res.iterations);
  return 0;
}

struct MpdrArgs {
  std::string baseline_labels, interim_labels, out, transform;
};

int cmd_mpdr(const MpdrArgs& a) {
  Timer timer;
  Volume3D propagated = load_volume(a.baseline_labels);
  if (!a.transform.empty())
    propagated = apply_transform(propagated, parse_transform_json(read_text(a.transform)),
                                 ResampleMode::Nearest);
  Volume3D interim = load_volume(a.interim_labels);
  Volume3D kept = mpdr(propagated, interim);
  save_volume(kept, a.out);
  std::vector<std::string> inputs{a.baseline_labels, a.interim_labels};
  if (!a.transform.empty()) inputs.push_back(a.transform);
  sidecar_manifest("mpdr", json{{"registered", !a.transform.empty()}}, 0, inputs, {a.out},
                   timer, a.out + ".manifest.json");
  std::printf("%zu of %zu interim lesions kept\n", extract_lesions(kept).lesions.size(),
              extract_lesions(interim).lesions.size());
  return 0;
}

struct EvalArgs {
  std::string cohort, criterion = "overlap", equivocal = "exclude";
  int bootstrap = 10000;
  uint64_t seed = 0;
  std::string out_json, out_csv, out_table;
  std::string pred1_name = "pred1_labels.mvol", pred2_name = "pred2_labels.mvol";
};

int cmd_eval(const EvalArgs& a) {
  Timer timer;
  int crit = criterion_index(a.criterion);
  std::vector<std::string> dirs = cohort_dirs(a.cohort);

  EvalOptions opt;
  opt.include_equivocal = a.equivocal == "include";
  opt.bootstrap_trials = a.bootstrap;
  opt.seed = a.seed;

  std::vector<PatientEval> rows;
  for (size_t i = 0; i < dirs.size(); ++i) {
    PatientStudy st = read_study(dirs[i]);
    if (i == 0) opt.thresholds = st.config.ds_thresholds;  // the cohort's annotation rubric
    Volume3D pred1 = read_mvol((fs::path(dirs[i]) / a.pred1_name).string());
    Volume3D pred2 = read_mvol((fs::path(dirs[i]) / a.pred2_name).string());
    rows.push_back(evaluate_patient(st, pred1, pred2, opt));
  }
  EvalReport report = aggregate_cohort(std::move(rows), opt);

  json opts{{"criterion", a.criterion},
            {"equivocal", a.equivocal},
            {"bootstrap", a.bootstrap},
            {"pred1", a.pred1_name},
            {"pred2", a.pred2_name}};
  RunManifest m;
  m.command = "eval";
  m.config_hash = options_hash(opts);
  m.seed = a.seed;
  m.inputs = dirs;
  if (!a.out_json.empty()) m.outputs.push_back(a.out_json);
  if (!a.out_csv.empty()) m.outputs.push_back(a.out_csv);
  if (!a.out_table.empty()) m.outputs.push_back(a.out_table);

  std::string hash = m.deterministic_hash();
  if (!a.out_json.empty()) write_text(a.out_json, with_manifest_hash(report_json(report), hash));
  if (!a.out_csv.empty())
    write_text(a.out_csv, report_csv(report) + "meta,manifest_hash," + hash + ",,\n");
  if (!a.out_table.empty()) write_text(a.out_table, report_table(report));
  if (!a.out_json.empty()) {
    m.wall_time_s = timer.seconds();
    write_manifest(m, a.out_json + ".manifest.json");
  }

  std::printf("patients %zu\n", report.patients.size());
  std::printf("f1[%s] %.3f [%.3f, %.3f]\n", a.criterion.c_str(), report.f1[crit].estimate,
              report.f1[crit].lo, report.f1[crit].hi);
  std::printf("kappa %.3f [%.3f, %.3f]\n", report.kappa.estimate, report.kappa.lo,
              report.kappa.hi);
  return 0;
}

struct TrainArgs {
  std::string cohort, config, out, trace;
  int steps = -1;
  double lr = -1.0;
  uint64_t seed = 0;
};

int cmd_train_toy(const TrainArgs& a) {
  Timer timer;
  PipelineConfig cfg;  // net and optimizer sections only
  if (!a.config.empty()) cfg = read_pipeline_config(a.config);
  nn::OptimizerConfig opt = cfg.optimizer;
  if (a.steps > 0) opt.steps = a.steps;
  if (a.lr > 0.0) opt.lr = a.lr;
  opt.seed = a.seed;

  std::vector<PatientStudy> studies;
  for (const std::string& dir : cohort_dirs(a.cohort)) studies.push_back(read_study(dir));
  nn::TrainResult result = nn::train_toy(studies, cfg.net, opt);
  nn::save_params(result.params, a.out);

  json opts{{"net", json::parse(pipeline_config_json(cfg)).at("net")},
            {"steps", opt.steps},
            {"lr", opt.lr}};
  std::vector<std::string> outputs{a.out};
  if (!a.trace.empty()) {
    write_text(a.trace,
               json{{"schema_version", 1}, {"loss", result.loss_trace}}.dump(2) + "\n");
    outputs.push_back(a.trace);
  }
  sidecar_manifest("train-toy", opts, a.seed, {a.cohort}, outputs, timer,
                   a.out + ".manifest.json");
  std::printf("steps %d  loss %.4f -> %.4f  (%.1fs)\n", opt.steps, result.loss_trace.front(),
              result.loss_trace.back(), timer.seconds());
  return 0;
}

struct InferArgs {
  std::string checkpoint, pet1, ct1, pet2, ct2, out_dir;
  double overlap = 0.625, threshold = 0.5, min_ml = 0.2;
};

int cmd_infer(const InferArgs& a) {
  Timer timer;
  nn::LasNetParams params = nn::load_params(a.checkpoint);
  auto [prob1, prob2] = nn::infer_volumes(load_volume(a.pet1), load_volume(a.ct1),
                                          load_volume(a.pet2), load_volume(a.ct2), params,
                                          a.overlap);
  Volume3D labels1 = remove_small(connected_components(binarize(prob1, a.threshold)), a.min_ml);
  Volume3D labels2 = remove_small(connected_components(binarize(prob2, a.threshold)), a.min_ml);
  fs::create_directories(a.out_dir);
  auto at = [&](const char* name) { return (fs::path(a.out_dir) / name).string(); };
  write_mvol(prob1, at("prob1.mvol"));
  write_mvol(prob2, at("prob2.mvol"));
  write_mvol(labels1, at("pred1_labels.mvol"));
  write_mvol(labels2, at("pred2_labels.mvol"));
  json opts{{"overlap", a.overlap}, {"threshold", a.threshold}, {"min_ml", a.min_ml}};
  sidecar_manifest("infer", opts, 0, {a.checkpoint, a.pet1, a.ct1, a.pet2, a.ct2},
                   {"prob1.mvol", "prob2.mvol", "pred1_labels.mvol", "pred2_labels.mvol"},
                   timer, at("manifest.json"));
  std::printf("%zu baseline / %zu interim lesions  (%.1fs)\n",
              extract_lesions(labels1).lesions.size(),
              extract_lesions(labels2).lesions.size(), timer.seconds());
  return 0;
}

struct PipelineArgs {
  std::string config, out, segmenter;
  uint64_t seed = 0;
  bool seed_set = false;
  int patients = -1;
};

int cmd_pipeline(const PipelineArgs& a) {
  Timer timer;
  PipelineConfig cfg;
  if (!a.config.empty()) cfg = read_pipeline_config(a.config);
  if (a.seed_set) cfg.seed = a.seed;
  if (a.patients > 0) cfg.n_patients = a.patients;
  if (!a.segmenter.empty()) {
    if (a.segmenter == "oracle") cfg.segmenter = SegmenterKind::Oracle;
    else if (a.segmenter == "rule") cfg.segmenter = SegmenterKind::Rule;
    else if (a.segmenter == "network") cfg.segmenter = SegmenterKind::Network;
    else throw std::invalid_argument("--segmenter must be oracle|rule|network");
  }

  std::string config_echo = pipeline_config_json(cfg);
  PipelineResult res = run_pipeline(cfg);

  fs::create_directories(a.out);
  auto at = [&](const std::string& name) { return (fs::path(a.out) / name).string(); };
  write_text(at("config.json"), config_echo);

  std::vector<std::string> outputs{"config.json"};
  for (const PatientArtifacts& art : res.patients) {
    write_study(art.study, at(art.study.id));
    write_mvol(art.pred1_labels, (fs::path(a.out) / art.study.id / "pred1_labels.mvol").string());
    write_mvol(art.pred2_labels, (fs::path(a.out) / art.study.id / "pred2_labels.mvol").string());
    outputs.push_back(art.study.id);
  }
  if (res.trained) {
    nn::save_params(*res.trained, at("checkpoint.lasp"));
    outputs.push_back("checkpoint.lasp");
  }
  outputs.insert(outputs.end(), {"report.json", "report.csv", "report.txt"});

  RunManifest m;
  m.command = "pipeline";
  m.config_hash = content_hash(config_echo);
  m.seed = cfg.seed;
  if (!a.config.empty()) m.inputs.push_back(a.config);
  m.outputs = outputs;
  std::string hash = m.deterministic_hash();

  write_text(at("report.json"), with_manifest_hash(report_json(res.report), hash));
  write_text(at("report.csv"), report_csv(res.report) + "meta,manifest_hash," + hash + ",,\n");
  write_text(at("report.txt"), report_table(res.report));
  m.wall_time_s = timer.seconds();
  write_manifest(m, at("manifest.json"));

  const EvalReport& r = res.report;
  std::printf("segmenter %s  patients %zu  (%.1fs)\n", segmenter_name(cfg.segmenter),
              r.patients.size(), timer.seconds());
  std::printf("f1[overlap] %.3f  f1[suvmax] %.3f  f1[dice50] %.3f\n", r.f1[0].estimate,
              r.f1[1].estimate, r.f1[2].estimate);
  std::printf("dice %.3f / %.3f  kappa %.3f\n", r.mean_dice1.estimate, r.mean_dice2.estimate,
              r.kappa.estimate);
  std::printf("report %s\n", at("report.json").c_str());
  return 0;
}

struct ReportArgs {
  std::string report, out_csv, out_table;
};

int cmd_report(const ReportArgs& a) {
  EvalReport r = read_report_json(a.report);
  std::string table = report_table(r);
  if (!a.out_csv.empty()) write_text(a.out_csv, report_csv(r));
  if (!a.out_table.empty()) write_text(a.out_table, table);
  std::printf("%s", table.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"longitudinal PET/CT lesion quantification toolkit"};
  app.set_version_flag("--version", std::string("laspet ") + kToolVersion);
  app.require_subcommand(1);

  PhantomArgs ph;
  CLI::App* phantom = app.add_subcommand("phantom", "generate synthetic patient studies");
  phantom->add_option("--seed", ph.seed, "root seed; per-patient seeds are derived");
  phantom->add_option("--config", ph.config, "phantom config JSON")->check(CLI::ExistingFile);
  phantom->add_option("--out", ph.out, "output directory")->required();
  phantom->add_option("--patients", ph.patients, "number of studies")
      ->check(CLI::PositiveNumber);
  phantom->add_option("--lesion-range", ph.lesion_range,
                      "cycle baseline lesion count through lo hi");

  CLI::App* vol = app.add_subcommand("vol", "inspect or convert volumes");
  vol->require_subcommand(1);
  std::string vol_in, vol_out;
  bool vol_json = false;
  CLI::App* vol_info = vol->add_subcommand("info", "print volume header and statistics");
  vol_info->add_option("file", vol_in, "volume (.mvol or .json)")
      ->required()
      ->check(CLI::ExistingFile);
  vol_info->add_flag("--json", vol_json, "emit JSON");
  CLI::App* vol_convert = vol->add_subcommand("convert", "convert between .mvol and .json");
  vol_convert->add_option("input", vol_in, "input volume")->required()->check(CLI::ExistingFile);
  vol_convert->add_option("output", vol_out, "output volume")->required();

  SegmentArgs sg;
  CLI::App* segment = app.add_subcommand("segment", "produce lesion label volumes");
  segment->add_option("--rule", sg.rule, "threshold-union or model")
      ->required()
      ->check(CLI::IsMember({"threshold-union", "model"}));
  segment->add_option("--pet", sg.pet, "PET volume (threshold-union)");
  segment->add_option("--roi", sg.roi, "search region mask (threshold-union)");
  segment->add_option("--out", sg.out, "output labels (threshold-union)");
  segment->add_option("--fixed-suv", sg.fixed_suv, "fixed SUV threshold");
  segment->add_option("--relative-frac", sg.relative_frac, "fraction of ROI SUVmax");
  segment->add_option("--min-ml", sg.min_ml, "drop components below this volume");
  segment->add_option("--checkpoint", sg.checkpoint, "trained parameters (model)");
  segment->add_option("--pet1", sg.pet1, "baseline PET (model)");
  segment->add_option("--ct1", sg.ct1, "baseline CT (model)");
  segment->add_option("--pet2", sg.pet2, "interim PET (model)");
  segment->add_option("--ct2", sg.ct2, "interim CT (model)");
  segment->add_option("--out1", sg.out1, "baseline labels out (model)");
  segment->add_option("--out2", sg.out2, "interim labels out (model)");
  segment->add_option("--prob1", sg.prob1, "baseline probability map out");
  segment->add_option("--prob2", sg.prob2, "interim probability map out");
  segment->add_option("--overlap", sg.overlap, "sliding-window overlap fraction");
  segment->add_option("--threshold", sg.threshold, "probability threshold");

  MetricsArgs mt;
  CLI::App* metrics = app.add_subcommand("metrics", "patient-level PET metrics from labels");
  metrics->add_flag("--baseline", mt.baseline, "baseline metric set");
  metrics->add_flag("--interim", mt.interim, "interim metric set");
  metrics->add_option("--labels", mt.labels, "lesion label volume")
      ->required()
      ->check(CLI::ExistingFile);
  metrics->add_option("--pet", mt.pet, "PET volume")->required()->check(CLI::ExistingFile);
  metrics->add_option("--spleen", mt.spleen, "spleen mask (baseline)");
  metrics->add_option("--liver", mt.liver, "liver mask (interim, enables qPET)");
  metrics->add_option("--baseline-suvmax", mt.baseline_suvmax, "baseline SUVmax (interim)");
  metrics->add_option("--baseline-json", mt.baseline_json,
                      "baseline metrics JSON to take SUVmax from");
  metrics->add_option("--json", mt.out_json, "write metrics JSON here");

  RegisterArgs rg;
  CLI::App* register_cmd = app.add_subcommand("register", "rigid registration");
  register_cmd->add_option("--moving", rg.moving, "moving volume")
      ->required()
      ->check(CLI::ExistingFile);
  register_cmd->add_option("--fixed", rg.fixed, "fixed volume")
      ->required()
      ->check(CLI::ExistingFile);
  register_cmd->add_option("--out-transform", rg.out_transform, "transform JSON out")
      ->required();

  MpdrArgs mp;
  CLI::App* mpdr_cmd = app.add_subcommand("mpdr", "filter interim lesions by baseline overlap");
  mpdr_cmd->add_option("--baseline-labels", mp.baseline_labels, "baseline prediction")
      ->required()
      ->check(CLI::ExistingFile);
  mpdr_cmd->add_option("--interim-labels", mp.interim_labels, "interim prediction")
      ->required()
      ->check(CLI::ExistingFile);
  mpdr_cmd->add_option("--out", mp.out, "filtered labels out")->required();
  mpdr_cmd->add_option("--transform", mp.transform, "propagate baseline through this transform")
      ->check(CLI::ExistingFile);

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score predictions over a cohort");
  eval_cmd->add_option("--cohort", ev.cohort, "cohort directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--criterion", ev.criterion, "headline detection criterion")
      ->check(CLI::IsMember({"overlap", "suvmax", "dice50"}));
  eval_cmd->add_option("--equivocal", ev.equivocal, "include or exclude equivocal lesions")
      ->check(CLI::IsMember({"include", "exclude"}));
  eval_cmd->add_option("--bootstrap", ev.bootstrap, "bootstrap trials")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", ev.seed, "bootstrap seed");
  eval_cmd->add_option("--json", ev.out_json, "report JSON out");
  eval_cmd->add_option("--csv", ev.out_csv, "report CSV out");
  eval_cmd->add_option("--table", ev.out_table, "report table out");
  eval_cmd->add_option("--pred1-name", ev.pred1_name, "baseline prediction file name");
  eval_cmd->add_option("--pred2-name", ev.pred2_name, "interim prediction file name");

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train-toy", "overfit the network on a small cohort");
  train->add_option("--cohort", tr.cohort, "cohort directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  train->add_option("--out", tr.out, "checkpoint out")->required();
  train->add_option("--config", tr.config, "pipeline config JSON (net/optimizer sections)")
      ->check(CLI::ExistingFile);
  train->add_option("--steps", tr.steps, "override optimizer steps");
  train->add_option("--lr", tr.lr, "override learning rate");
  train->add_option("--seed", tr.seed, "training seed");
  train->add_option("--trace", tr.trace, "loss trace JSON out");

  InferArgs in;
  CLI::App* infer = app.add_subcommand("infer", "sliding-window inference");
  infer->add_option("--checkpoint", in.checkpoint, "trained parameters")
      ->required()
      ->check(CLI::ExistingFile);
  infer->add_option("--pet1", in.pet1, "baseline PET")->required()->check(CLI::ExistingFile);
  infer->add_option("--ct1", in.ct1, "baseline CT")->required()->check(CLI::ExistingFile);
  infer->add_option("--pet2", in.pet2, "interim PET")->required()->check(CLI::ExistingFile);
  infer->add_option("--ct2", in.ct2, "interim CT")->required()->check(CLI::ExistingFile);
  infer->add_option("--out-dir", in.out_dir, "output directory")->required();
  infer->add_option("--overlap", in.overlap, "sliding-window overlap fraction");
  infer->add_option("--threshold", in.threshold, "probability threshold");
  infer->add_option("--min-ml", in.min_ml, "drop components below this volume");

  PipelineArgs pl;
  CLI::App* pipeline = app.add_subcommand("pipeline", "full synthetic experiment");
  pipeline->add_option("--config", pl.config, "pipeline config JSON")->check(CLI::ExistingFile);
  pipeline->add_option("--out", pl.out, "output directory")->required();
  CLI::Option* seed_opt = pipeline->add_option("--seed", pl.seed, "override root seed");
  pipeline->add_option("--patients", pl.patients, "override patient count");
  pipeline->add_option("--segmenter", pl.segmenter, "override segmenter")
      ->check(CLI::IsMember({"oracle", "rule", "network"}));

  ReportArgs rp;
  CLI::App* report = app.add_subcommand("report", "render a report JSON");
  report->add_option("report", rp.report, "report JSON")->required()->check(CLI::ExistingFile);
  report->add_option("--csv", rp.out_csv, "CSV out");
  report->add_option("--table", rp.out_table, "table out");

  int rc = 0;
  try {
    app.parse(argc, argv);
    if (*phantom) rc = cmd_phantom(ph);
    else if (*vol_info) rc = cmd_vol_info(vol_in, vol_json);
    else if (*vol_convert) rc = cmd_vol_convert(vol_in, vol_out);
    else if (*segment) rc = cmd_segment(sg);
    else if (*metrics) rc = cmd_metrics(mt);
    else if (*register_cmd) rc = cmd_register(rg);
    else if (*mpdr_cmd) rc = cmd_mpdr(mp);
    else if (*eval_cmd) rc = cmd_eval(ev);
    else if (*train) rc = cmd_train_toy(tr);
    else if (*infer) rc = cmd_infer(in);
    else if (*pipeline) {
      pl.seed_set = seed_opt->count() > 0;
      rc = cmd_pipeline(pl);
    } else if (*report) {
      rc = cmd_report(rp);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const StageError& e) {
    std::fprintf(stderr, "error in %s stage: %s\n", e.stage.c_str(), e.what());
    return stage_exit(e.stage);
  } catch (const json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
