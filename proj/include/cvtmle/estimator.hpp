#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cvtmle/crossfit.hpp"
#include "cvtmle/data.hpp"
#include "cvtmle/inference.hpp"
#include "cvtmle/learners.hpp"
#include "cvtmle/targeting.hpp"

namespace cvtmle {

struct EstimatorConfig {
  int K = 10;
  std::uint64_t seed = 1;
  bool stratify = true;
  std::vector<LearnerSpec> q_candidates{parse_learner("glm")};
  std::vector<LearnerSpec> g_candidates{parse_learner("glm")};
  PropensityBounds g_bounds{};
  int max_iter = kDefaultMaxIter;
  double alpha = 0.05;
};

/// Output of one full pass: initial fits, targeting run and report.
struct EstimateRun {
  CrossFittedNuisances nuisances;
  TargetingResult targeting;
  EstimateReport report;
};

inline FoldPlan plan_folds(const Dataset& data, const EstimatorConfig& cfg) {
  return cfg.stratify ? make_folds(static_cast<std::size_t>(data.n()), cfg.K, cfg.seed,
                                   std::span<const double>(data.A.data(), static_cast<std::size_t>(data.n())))
                      : make_folds(static_cast<std::size_t>(data.n()), cfg.K, cfg.seed);
}

inline CrossFittedNuisances fit_nuisances(const Dataset& data, const EstimatorConfig& cfg) {
  return crossfit_nuisances(data, plan_folds(data, cfg), cfg.q_candidates, cfg.g_candidates, cfg.g_bounds);
}

/// Targets already cross-fitted nuisances. Both variants start from identical initial fits.
inline EstimateRun target_and_report(const Dataset& data, CrossFittedNuisances nuisances, ParameterKind kind,
                                     Variant variant, const EstimatorConfig& cfg) {
  EstimateRun run;
  run.targeting = run_targeting(nuisances, data, kind, variant, cfg.max_iter);
  run.report = assemble_report(run.targeting, nuisances, data, kind, variant, cfg.alpha);
  run.nuisances = std::move(nuisances);
  return run;
}

inline EstimateRun estimate(const Dataset& data, ParameterKind kind, Variant variant, const EstimatorConfig& cfg) {
  return target_and_report(data, fit_nuisances(data, cfg), kind, variant, cfg);
}

}  // namespace cvtmle
