#include "laspet/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "laspet/rng.hpp"

namespace laspet {

namespace {

using nlohmann::json;

constexpr std::array<const char*, 3> kCriterionNames{"overlap", "suvmax_match",
                                                     "dice_above50"};

// metric accessors for pred/gt agreement; nullopt pairs are skipped
struct MetricAccessor {
  const char* name;
  std::optional<double> (*pred)(const PatientEval&);
  std::optional<double> (*gt)(const PatientEval&);
};

constexpr std::array<MetricAccessor, 9> kAgreementMetrics{{
    {"mtv", [](const PatientEval& p) { return std::optional<double>(p.pred_baseline.mtv_ml); },
     [](const PatientEval& p) { return std::optional<double>(p.gt_baseline.mtv_ml); }},
    {"tlg", [](const PatientEval& p) { return std::optional<double>(p.pred_baseline.tlg_ml_suv); },
     [](const PatientEval& p) { return std::optional<double>(p.gt_baseline.tlg_ml_suv); }},
    {"suvmax", [](const PatientEval& p) { return std::optional<double>(p.pred_baseline.suvmax); },
     [](const PatientEval& p) { return std::optional<double>(p.gt_baseline.suvmax); }},
    {"dmax", [](const PatientEval& p) { return p.pred_baseline.dmax_mm; },
     [](const PatientEval& p) { return p.gt_baseline.dmax_mm; }},
    {"dspleen", [](const PatientEval& p) { return p.pred_baseline.dspleen_mm; },
     [](const PatientEval& p) { return p.gt_baseline.dspleen_mm; }},
    {"lesion_count",
     [](const PatientEval& p) { return std::optional<double>(p.pred_baseline.n_lesions); },
     [](const PatientEval& p) { return std::optional<double>(p.gt_baseline.n_lesions); }},
    {"suvmax_interim",
     [](const PatientEval& p) { return std::optional<double>(p.pred_interim.suvmax); },
     [](const PatientEval& p) { return std::optional<double>(p.gt_interim.suvmax); }},
    {"delta_suvmax", [](const PatientEval& p) { return p.pred_interim.delta_suvmax_pct; },
     [](const PatientEval& p) { return p.gt_interim.delta_suvmax_pct; }},
    {"qpet", [](const PatientEval& p) { return p.pred_interim.qpet; },
     [](const PatientEval& p) { return p.gt_interim.qpet; }},
}};

BootstrapCI ci_for(const std::vector<PatientEval>& patients, const EvalOptions& opt,
                   const char* tag, const std::function<double(const std::vector<int>&)>& stat) {
  return bootstrap_ci(static_cast<int>(patients.size()), stat, opt.bootstrap_trials,
                      Rng::derive(opt.seed, tag));
}

json optional_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json counts_json(const DetectionCounts& c) {
  return json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
}

DetectionCounts counts_from(const json& j) {
  DetectionCounts c;
  c.tp = j.at("tp").get<int>();
  c.fp = j.at("fp").get<int>();
  c.fn = j.at("fn").get<int>();
  return c;
}

json ci_json(const BootstrapCI& ci) {
  return json{{"estimate", ci.estimate}, {"lo", ci.lo}, {"hi", ci.hi}};
}

BootstrapCI ci_from(const json& j) {
  return BootstrapCI{j.at("estimate").get<double>(), j.at("lo").get<double>(),
                     j.at("hi").get<double>()};
}

json baseline_json(const BaselineMetrics& m) {
  return json{{"mtv_ml", m.mtv_ml},
              {"tlg_ml_suv", m.tlg_ml_suv},
              {"suvmax", m.suvmax},
              {"dmax_mm", optional_json(m.dmax_mm)},
              {"dspleen_mm", optional_json(m.dspleen_mm)},
              {"n_lesions", m.n_lesions}};
}

BaselineMetrics baseline_from(const json& j) {
  BaselineMetrics m;
  m.mtv_ml = j.at("mtv_ml").get<double>();
  m.tlg_ml_suv = j.at("tlg_ml_suv").get<double>();
  m.suvmax = j.at("suvmax").get<double>();
  m.dmax_mm = optional_from(j.at("dmax_mm"));
  m.dspleen_mm = optional_from(j.at("dspleen_mm"));
  m.n_lesions = j.at("n_lesions").get<int>();
  return m;
}

json interim_json(const InterimMetrics& m) {
  return json{{"suvmax", m.suvmax},
              {"delta_suvmax_pct", optional_json(m.delta_suvmax_pct)},
              {"qpet", optional_json(m.qpet)},
              {"n_residual", m.n_residual}};
}

InterimMetrics interim_from(const json& j) {
  InterimMetrics m;
  m.suvmax = j.at("suvmax").get<double>();
  m.delta_suvmax_pct = optional_from(j.at("delta_suvmax_pct"));
  m.qpet = optional_from(j.at("qpet"));
  m.n_residual = j.at("n_residual").get<int>();
  return m;
}

json patient_json(const PatientEval& p) {
  json det;
  for (size_t c = 0; c < 3; ++c) det[kCriterionNames[c]] = counts_json(p.detection[c]);
  return json{{"id", p.id},
              {"demographics",
               json{{"age_years", p.demographics.age_years},
                    {"sex", p.demographics.sex},
                    {"weight_kg", p.demographics.weight_kg},
                    {"injected_dose_mbq_per_kg", p.demographics.injected_dose_mbq_per_kg},
                    {"scanner", p.demographics.scanner}}},
              {"detection", det},
              {"dice1", p.dice1},
              {"dice2", p.dice2},
              {"fpv1_ml", p.fpv1_ml},
              {"fnv1_ml", p.fnv1_ml},
              {"fpv2_ml", p.fpv2_ml},
              {"fnv2_ml", p.fnv2_ml},
              {"pred_baseline", baseline_json(p.pred_baseline)},
              {"gt_baseline", baseline_json(p.gt_baseline)},
              {"pred_interim", interim_json(p.pred_interim)},
              {"gt_interim", interim_json(p.gt_interim)},
              {"pred_ds", p.pred_ds},
              {"gt_ds", p.gt_ds}};
}

PatientEval patient_from(const json& j) {
  PatientEval p;
  p.id = j.at("id").get<std::string>();
  const json& d = j.at("demographics");
  p.demographics.age_years = d.at("age_years").get<double>();
  p.demographics.sex = d.at("sex").get<std::string>();
  p.demographics.weight_kg = d.at("weight_kg").get<double>();
  p.demographics.injected_dose_mbq_per_kg = d.at("injected_dose_mbq_per_kg").get<double>();
  p.demographics.scanner = d.at("scanner").get<std::string>();
  for (size_t c = 0; c < 3; ++c)
    p.detection[c] = counts_from(j.at("detection").at(kCriterionNames[c]));
  p.dice1 = j.at("dice1").get<double>();
  p.dice2 = j.at("dice2").get<double>();
  p.fpv1_ml = j.at("fpv1_ml").get<double>();
  p.fnv1_ml = j.at("fnv1_ml").get<double>();
  p.fpv2_ml = j.at("fpv2_ml").get<double>();
  p.fnv2_ml = j.at("fnv2_ml").get<double>();
  p.pred_baseline = baseline_from(j.at("pred_baseline"));
  p.gt_baseline = baseline_from(j.at("gt_baseline"));
  p.pred_interim = interim_from(j.at("pred_interim"));
  p.gt_interim = interim_from(j.at("gt_interim"));
  p.pred_ds = j.at("pred_ds").get<int>();
  p.gt_ds = j.at("gt_ds").get<int>();
  return p;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string fmt_ci(const BootstrapCI& ci) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.3f [%.3f, %.3f]", ci.estimate, ci.lo, ci.hi);
  return buf;
}

}  // namespace

PatientEval evaluate_patient(const PatientStudy& study, const Volume3D& pred1_labels,
                             const Volume3D& pred2_labels, const EvalOptions& opt) {
  opt.thresholds.validate();
  PatientEval out;
  out.id = study.id;
  out.demographics = study.demographics;

  LesionSet pred1 = extract_lesions(pred1_labels, &study.pet1);
  LesionSet pred2 = extract_lesions(pred2_labels, &study.pet2);

  for (int c = 0; c < 3; ++c)
    out.detection[static_cast<size_t>(c)] = score_detection(
        pred2, study.gt2, static_cast<DetectionCriterion>(c), opt.include_equivocal);

  Volume3D gt1_labels = study.gt1.to_labels();
  Volume3D gt2_labels = study.gt2.to_labels();
  out.dice1 = dice(pred1_labels, gt1_labels);
  out.dice2 = dice(pred2_labels, gt2_labels);
  out.fpv1_ml = fpv_ml(pred1_labels, gt1_labels);
  out.fnv1_ml = fnv_ml(pred1_labels, gt1_labels);
  out.fpv2_ml = fpv_ml(pred2_labels, gt2_labels);
  out.fnv2_ml = fnv_ml(pred2_labels, gt2_labels);

  out.pred_baseline = baseline_metrics(pred1, &study.spleen_mask);
  out.gt_baseline = baseline_metrics(study.gt1, &study.spleen_mask);
  out.pred_interim =
      interim_metrics(pred2, out.pred_baseline.suvmax, study.pet2, &study.liver_mask);
  out.gt_interim =
      interim_metrics(study.gt2, out.gt_baseline.suvmax, study.pet2, &study.liver_mask);

  out.pred_ds = qpet_to_ds(out.pred_interim.qpet, opt.thresholds);
  out.gt_ds = patient_ds(study.gt2);
  return out;
}

EvalReport aggregate_cohort(std::vector<PatientEval> patients, const EvalOptions& opt) {
  if (patients.empty()) throw std::invalid_argument("aggregate_cohort: empty cohort");
  if (opt.bootstrap_trials <= 0)
    throw std::invalid_argument("aggregate_cohort: bootstrap_trials must be positive");

  EvalReport r;
  r.options = opt;
  r.patients = std::move(patients);
  const std::vector<PatientEval>& rows = r.patients;

  for (size_t c = 0; c < 3; ++c) {
    for (const PatientEval& p : rows) r.pooled[c] += p.detection[c];
    std::string tag = std::string("f1.") + kCriterionNames[c];
    r.f1[c] = ci_for(rows, opt, tag.c_str(), [&rows, c](const std::vector<int>& idx) {
      DetectionCounts sum;
      for (int i : idx) sum += rows[static_cast<size_t>(i)].detection[c];
      return sum.f1();
    });
  }

  r.mean_dice1 = ci_for(rows, opt, "dice1", [&rows](const std::vector<int>& idx) {
    double s = 0.0;
    for (int i : idx) s += rows[static_cast<size_t>(i)].dice1;
    return s / static_cast<double>(idx.size());
  });
  r.mean_dice2 = ci_for(rows, opt, "dice2", [&rows](const std::vector<int>& idx) {
    double s = 0.0;
    for (int i : idx) s += rows[static_cast<size_t>(i)].dice2;
    return s / static_cast<double>(idx.size());
  });

  for (const MetricAccessor& m : kAgreementMetrics) {
    MetricAgreement a;
    a.metric = m.name;
    for (const PatientEval& p : rows)
      if (m.pred(p) && m.gt(p)) ++a.n_pairs;
    std::string tag = std::string("rho.") + m.name;
    a.rho = ci_for(rows, opt, tag.c_str(), [&rows, &m](const std::vector<int>& idx) {
      std::vector<double> x, y;
      for (int i : idx) {
        const PatientEval& p = rows[static_cast<size_t>(i)];
        std::optional<double> pv = m.pred(p), gv = m.gt(p);
        if (pv && gv) {
          x.push_back(*pv);
          y.push_back(*gv);
        }
      }
      return spearman(x, y).value_or(0.0);
    });
    r.agreement.push_back(std::move(a));
  }

  r.kappa = ci_for(rows, opt, "kappa", [&rows](const std::vector<int>& idx) {
    std::vector<int> a, b;
    for (int i : idx) {
      a.push_back(rows[static_cast<size_t>(i)].pred_ds);
      b.push_back(rows[static_cast<size_t>(i)].gt_ds);
    }
    return cohen_kappa(a, b);
  });
  auto binary_stat = [&rows](int cut) {
    return [&rows, cut](const std::vector<int>& idx) {
      std::vector<bool> a, b;
      for (int i : idx) {
        a.push_back(rows[static_cast<size_t>(i)].pred_ds >= cut);
        b.push_back(rows[static_cast<size_t>(i)].gt_ds >= cut);
      }
      return binary_f1(a, b);
    };
  };
  r.f1_ds3plus = ci_for(rows, opt, "f1.ds3plus", binary_stat(3));
  r.f1_ds4plus = ci_for(rows, opt, "f1.ds4plus", binary_stat(4));
  return r;
}

const char* group_key_name(GroupKey k) {
  switch (k) {
    case GroupKey::Age: return "age";
    case GroupKey::Sex: return "sex";
    case GroupKey::Weight: return "weight";
    case GroupKey::Dose: return "dose";
    case GroupKey::Scanner: return "scanner";
  }
  throw std::invalid_argument("group_key_name: bad key");
}

std::vector<std::pair<std::string, EvalReport>> group_by_eval(
    const std::vector<PatientEval>& patients, GroupKey key, const EvalOptions& opt) {
  if (patients.empty()) throw std::invalid_argument("group_by_eval: empty cohort");

  auto numeric = [key](const PatientEval& p) {
    switch (key) {
      case GroupKey::Age: return p.demographics.age_years;
      case GroupKey::Weight: return p.demographics.weight_kg;
      case GroupKey::Dose: return p.demographics.injected_dose_mbq_per_kg;
      default: return 0.0;
    }
  };

  std::map<std::string, std::vector<PatientEval>> groups;
  if (key == GroupKey::Sex || key == GroupKey::Scanner) {
    for (const PatientEval& p : patients) {
      const std::string& label =
          key == GroupKey::Sex ? p.demographics.sex : p.demographics.scanner;
      groups[label].push_back(p);
    }
  } else {
    std::vector<double> vals;
    for (const PatientEval& p : patients) vals.push_back(numeric(p));
    std::sort(vals.begin(), vals.end());
    size_t n = vals.size();
    double median =
        n % 2 == 1 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    for (const PatientEval& p : patients)
      groups[numeric(p) <= median ? "low" : "high"].push_back(p);
  }

  std::vector<std::pair<std::string, EvalReport>> out;
  for (auto& [label, rows] : groups)
    out.emplace_back(label, aggregate_cohort(std::move(rows), opt));
  return out;
}

std::string report_json(const EvalReport& r) {
  json patients = json::array();
  for (const PatientEval& p : r.patients) patients.push_back(patient_json(p));

  json det;
  for (size_t c = 0; c < 3; ++c) {
    json entry = counts_json(r.pooled[c]);
    entry["f1"] = ci_json(r.f1[c]);
    det[kCriterionNames[c]] = std::move(entry);
  }
  json agreement = json::array();
  for (const MetricAgreement& a : r.agreement)
    agreement.push_back(
        json{{"metric", a.metric}, {"n_pairs", a.n_pairs}, {"rho", ci_json(a.rho)}});

  json doc{
      {"schema_version", r.schema_version},
      {"options",
       json{{"include_equivocal", r.options.include_equivocal},
            {"bootstrap_trials", r.options.bootstrap_trials},
            {"seed", r.options.seed},
            {"thresholds",
             json{{"t12", r.options.thresholds.t12},
                  {"t23", r.options.thresholds.t23},
                  {"t34", r.options.thresholds.t34},
                  {"t45", r.options.thresholds.t45}}}}},
      {"patients", std::move(patients)},
      {"cohort",
       json{{"detection", std::move(det)},
            {"dice", json{{"baseline", ci_json(r.mean_dice1)}, {"interim", ci_json(r.mean_dice2)}}},
            {"agreement", std::move(agreement)},
            {"response",
             json{{"kappa", ci_json(r.kappa)},
                  {"f1_ds3plus", ci_json(r.f1_ds3plus)},
                  {"f1_ds4plus", ci_json(r.f1_ds4plus)}}}}},
  };
  return doc.dump(2) + "\n";
}

EvalReport parse_report_json(const std::string& text) {
  json doc = json::parse(text);
  int version = doc.at("schema_version").get<int>();
  if (version != 1)
    throw std::runtime_error("parse_report_json: unsupported schema_version " +
                             std::to_string(version));
  EvalReport r;
  r.schema_version = version;
  const json& o = doc.at("options");
  r.options.include_equivocal = o.at("include_equivocal").get<bool>();
  r.options.bootstrap_trials = o.at("bootstrap_trials").get<int>();
  r.options.seed = o.at("seed").get<uint64_t>();
  const json& th = o.at("thresholds");
  r.options.thresholds = QpetThresholds{th.at("t12").get<double>(), th.at("t23").get<double>(),
                                        th.at("t34").get<double>(), th.at("t45").get<double>()};
  for (const json& p : doc.at("patients")) r.patients.push_back(patient_from(p));

  const json& cohort = doc.at("cohort");
  for (size_t c = 0; c < 3; ++c) {
    const json& entry = cohort.at("detection").at(kCriterionNames[c]);
    r.pooled[c] = counts_from(entry);
    r.f1[c] = ci_from(entry.at("f1"));
  }
  r.mean_dice1 = ci_from(cohort.at("dice").at("baseline"));
  r.mean_dice2 = ci_from(cohort.at("dice").at("interim"));
  for (const json& a : cohort.at("agreement"))
    r.agreement.push_back(MetricAgreement{a.at("metric").get<std::string>(),
                                          a.at("n_pairs").get<int>(), ci_from(a.at("rho"))});
  r.kappa = ci_from(cohort.at("response").at("kappa"));
  r.f1_ds3plus = ci_from(cohort.at("response").at("f1_ds3plus"));
  r.f1_ds4plus = ci_from(cohort.at("response").at("f1_ds4plus"));
  return r;
}

void write_report_json(const EvalReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_report_json: cannot open " + path);
  f << report_json(report);
  if (!f) throw std::runtime_error("write_report_json: write failed for " + path);
}

EvalReport read_report_json(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_report_json: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_report_json(ss.str());
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "section,metric,estimate,lo,hi\n";
  for (size_t c = 0; c < 3; ++c) {
    const char* name = kCriterionNames[c];
    out << "detection," << name << "_tp," << r.pooled[c].tp << ",,\n";
    out << "detection," << name << "_fp," << r.pooled[c].fp << ",,\n";
    out << "detection," << name << "_fn," << r.pooled[c].fn << ",,\n";
    out << "detection," << name << "_f1," << fmt(r.f1[c].estimate) << "," << fmt(r.f1[c].lo)
        << "," << fmt(r.f1[c].hi) << "\n";
  }
  out << "dice,baseline," << fmt(r.mean_dice1.estimate) << "," << fmt(r.mean_dice1.lo) << ","
      << fmt(r.mean_dice1.hi) << "\n";
  out << "dice,interim," << fmt(r.mean_dice2.estimate) << "," << fmt(r.mean_dice2.lo) << ","
      << fmt(r.mean_dice2.hi) << "\n";
  for (const MetricAgreement& a : r.agreement) {
    out << "agreement," << a.metric << "_n," << a.n_pairs << ",,\n";
    out << "agreement," << a.metric << "_rho," << fmt(a.rho.estimate) << "," << fmt(a.rho.lo)
        << "," << fmt(a.rho.hi) << "\n";
  }
  out << "response,kappa," << fmt(r.kappa.estimate) << "," << fmt(r.kappa.lo) << ","
      << fmt(r.kappa.hi) << "\n";
  out << "response,f1_ds3plus," << fmt(r.f1_ds3plus.estimate) << "," << fmt(r.f1_ds3plus.lo)
      << "," << fmt(r.f1_ds3plus.hi) << "\n";
  out << "response,f1_ds4plus," << fmt(r.f1_ds4plus.estimate) << "," << fmt(r.f1_ds4plus.lo)
      << "," << fmt(r.f1_ds4plus.hi) << "\n";
  return out.str();
}

std::string report_table(const EvalReport& r) {
  std::ostringstream out;
  char buf[160];
  out << "cohort: " << r.patients.size() << " patients, "
      << (r.options.include_equivocal ? "equivocal included" : "equivocal excluded") << "\n\n";
  out << "detection (interim)     tp   fp   fn  f1\n";
  constexpr std::array<const char*, 3> labels{"overlap", "suvmax match", "dice > 0.5"};
  for (size_t c = 0; c < 3; ++c) {
    std::snprintf(buf, sizeof(buf), "  %-20s %4d %4d %4d  %s\n", labels[c], r.pooled[c].tp,
                  r.pooled[c].fp, r.pooled[c].fn, fmt_ci(r.f1[c]).c_str());
    out << buf;
  }
  out << "\ndice\n";
  std::snprintf(buf, sizeof(buf), "  %-20s %s\n", "baseline", fmt_ci(r.mean_dice1).c_str());
  out << buf;
  std::snprintf(buf, sizeof(buf), "  %-20s %s\n", "interim", fmt_ci(r.mean_dice2).c_str());
  out << buf;
  out << "\nagreement (spearman rho)\n";
  for (const MetricAgreement& a : r.agreement) {
    std::snprintf(buf, sizeof(buf), "  %-20s %s  (n=%d)\n", a.metric.c_str(),
                  fmt_ci(a.rho).c_str(), a.n_pairs);
    out << buf;
  }
  out << "\nresponse\n";
  std::snprintf(buf, sizeof(buf), "  %-20s %s\n", "kappa", fmt_ci(r.kappa).c_str());
  out << buf;
  std::snprintf(buf, sizeof(buf), "  %-20s %s\n", "f1 ds>=3", fmt_ci(r.f1_ds3plus).c_str());
  out << buf;
  std::snprintf(buf, sizeof(buf), "  %-20s %s\n", "f1 ds>=4", fmt_ci(r.f1_ds4plus).c_str());
  out << buf;
  return out.str();
}

}  // namespace laspet
