#include "laspet/pipeline.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>

#include "laspet/registration.hpp"
#include "laspet/rng.hpp"

namespace laspet {

namespace {

int env_threads() {
  const char* s = std::getenv("LASPET_THREADS");
  if (!s) return 1;
  int n = std::atoi(s);
  return n > 0 ? n : 1;
}

// indexed slots keep results deterministic for any worker count
void parallel_over(int n, const std::function<void(int)>& fn) {
  int threads = std::min(env_threads(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Volume3D labels_from_prob(const Volume3D& prob, double threshold, double min_ml) {
  return remove_small(connected_components(binarize(prob, threshold)), min_ml);
}

}  // namespace

const char* segmenter_name(SegmenterKind k) {
  switch (k) {
    case SegmenterKind::Oracle: return "oracle";
    case SegmenterKind::Rule: return "rule";
    case SegmenterKind::Network: return "network";
  }
  throw std::invalid_argument("segmenter_name: bad kind");
}

void PipelineConfig::validate() const {
  if (n_patients <= 0) throw std::invalid_argument("PipelineConfig: n_patients must be positive");
  bool range_off = lesion_count_range == std::array<int, 2>{0, 0};
  if (!range_off && (lesion_count_range[0] < 1 || lesion_count_range[1] < lesion_count_range[0]))
    throw std::invalid_argument("PipelineConfig: bad lesion_count_range");
  phantom.validate();
  if (segmenter == SegmenterKind::Network) {
    net.validate();
    optimizer.validate();
  }
  if (rule_fixed_suv <= 0.0 || rule_relative_frac <= 0.0 || rule_relative_frac >= 1.0)
    throw std::invalid_argument("PipelineConfig: bad rule thresholds");
  if (infer_overlap < 0.0 || infer_overlap >= 1.0)
    throw std::invalid_argument("PipelineConfig: infer_overlap outside [0,1)");
  if (prob_threshold <= 0.0 || prob_threshold >= 1.0)
    throw std::invalid_argument("PipelineConfig: prob_threshold outside (0,1)");
  if (min_component_ml < 0.0)
    throw std::invalid_argument("PipelineConfig: negative min_component_ml");
  if (eval.bootstrap_trials <= 0)
    throw std::invalid_argument("PipelineConfig: bootstrap_trials must be positive");
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  int n = cfg.n_patients;
  bool misreg = cfg.misreg_shift_mm != std::array<double, 3>{0.0, 0.0, 0.0} ||
                cfg.misreg_rot_deg != std::array<double, 3>{0.0, 0.0, 0.0};

  std::vector<PatientStudy> studies(static_cast<size_t>(n));
  try {
    parallel_over(n, [&](int i) {
      PhantomConfig pc = cfg.phantom;
      pc.seed = Rng::derive(cfg.seed, "phantom." + std::to_string(i));
      if (cfg.lesion_count_range != std::array<int, 2>{0, 0}) {
        int span = cfg.lesion_count_range[1] - cfg.lesion_count_range[0] + 1;
        pc.n_baseline_lesions = cfg.lesion_count_range[0] + i % span;
      }
      PatientStudy st = generate(pc);
      char id[16];
      std::snprintf(id, sizeof(id), "p%03d", i);
      st.id = id;
      if (misreg) st = inject_misregistration(st, cfg.misreg_shift_mm, cfg.misreg_rot_deg);
      studies[static_cast<size_t>(i)] = std::move(st);
    });
  } catch (const std::exception& e) {
    throw StageError("phantom", e.what());
  }

  PipelineResult out;
  if (cfg.segmenter == SegmenterKind::Network) {
    try {
      nn::OptimizerConfig opt = cfg.optimizer;
      opt.seed = Rng::derive(cfg.seed, "train");
      out.trained = nn::train_toy(studies, cfg.net, opt).params;
    } catch (const std::exception& e) {
      throw StageError("train", e.what());
    }
  }

  out.patients.resize(static_cast<size_t>(n));
  EvalOptions opts = cfg.eval;
  opts.seed = Rng::derive(cfg.seed, "eval");
  opts.thresholds = cfg.phantom.ds_thresholds;

  try {
    parallel_over(n, [&](int i) {
      PatientArtifacts& art = out.patients[static_cast<size_t>(i)];
      art.study = std::move(studies[static_cast<size_t>(i)]);
      const PatientStudy& st = art.study;
      switch (cfg.segmenter) {
        case SegmenterKind::Oracle:
          art.pred1_labels = st.gt1.to_labels();
          art.pred2_labels = st.gt2.to_labels();
          break;
        case SegmenterKind::Rule:
          art.pred1_labels = remove_small(
              connected_components(threshold_union(st.pet1, st.body_mask, cfg.rule_fixed_suv,
                                                   cfg.rule_relative_frac)),
              cfg.min_component_ml);
          art.pred2_labels = remove_small(
              connected_components(threshold_union(st.pet2, st.body_mask, cfg.rule_fixed_suv,
                                                   cfg.rule_relative_frac)),
              cfg.min_component_ml);
          break;
        case SegmenterKind::Network: {
          std::pair<Volume3D, Volume3D> probs = nn::infer_volumes(
              st.pet1, st.ct1, st.pet2, st.ct2, *out.trained, cfg.infer_overlap);
          art.pred1_labels =
              labels_from_prob(probs.first, cfg.prob_threshold, cfg.min_component_ml);
          art.pred2_labels =
              labels_from_prob(probs.second, cfg.prob_threshold, cfg.min_component_ml);
          break;
        }
      }
    });
  } catch (const std::exception& e) {
    throw StageError("segment", e.what());
  }

  if (cfg.use_mpdr) {
    try {
      parallel_over(n, [&](int i) {
        PatientArtifacts& art = out.patients[static_cast<size_t>(i)];
        Volume3D propagated = art.pred1_labels;
        if (cfg.register_before_mpdr) {
          RegisterResult reg = register_rigid(art.study.pet1, art.study.pet2);
          propagated = apply_transform(art.pred1_labels, reg.transform, ResampleMode::Nearest);
        }
        art.pred2_labels = mpdr(propagated, art.pred2_labels);
      });
    } catch (const std::exception& e) {
      throw StageError("mpdr", e.what());
    }
  }

  try {
    std::vector<PatientEval> rows(static_cast<size_t>(n));
    parallel_over(n, [&](int i) {
      PatientArtifacts& art = out.patients[static_cast<size_t>(i)];
      art.eval = evaluate_patient(art.study, art.pred1_labels, art.pred2_labels, opts);
      rows[static_cast<size_t>(i)] = art.eval;
    });
    out.report = aggregate_cohort(std::move(rows), opts);
  } catch (const std::exception& e) {
    throw StageError("eval", e.what());
  }
  return out;
}

}  // namespace laspet
