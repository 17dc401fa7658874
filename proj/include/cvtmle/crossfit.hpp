#pragma once

#include <utility>
#include <vector>

#include "cvtmle/data.hpp"
#include "cvtmle/learners.hpp"

namespace cvtmle {

struct PropensityBounds {
  double lo = 0.025;
  double hi = 0.975;
};

struct FoldAudit {
  int fold = 0;
  LearnerSpec q_learner;
  std::vector<double> q_cv_risks;
  bool q_ridge = false;
  LearnerSpec g_learner;
  std::vector<double> g_cv_risks;
  bool g_ridge = false;
};

/// Validation-set predictions of every fold stacked back into row order.
struct CrossFittedNuisances {
  Vector Q0_A;
  Vector Q0_1;
  Vector Q0_0;
  Vector g1;
  FoldPlan plan;
  std::vector<FoldAudit> per_fold_audit;
  std::size_t g_truncated = 0;
};

struct TruncationResult {
  Vector g1;
  std::size_t clamped = 0;
};

inline void validate_bounds(PropensityBounds b) {
  if (!(b.lo > 0.0 && b.lo <= b.hi && b.hi < 1.0))
    throw Error(ErrorKind::Config, "propensity bounds must satisfy 0 < lo <= hi < 1");
}

inline TruncationResult truncate_propensity(const Vector& g1, PropensityBounds bounds) {
  validate_bounds(bounds);
  TruncationResult r{g1, 0};
  for (Eigen::Index i = 0; i < g1.size(); ++i) {
    const double c = std::min(std::max(g1[i], bounds.lo), bounds.hi);
    if (c != g1[i]) ++r.clamped;
    r.g1[i] = c;
  }
  return r;
}

/// Outcome-model design: treatment in column 0, covariates after it.
inline Matrix outcome_design(const Vector& A, const Matrix& W) {
  Matrix X(A.size(), W.cols() + 1);
  X.col(0) = A;
  X.rightCols(W.cols()) = W;
  return X;
}

inline constexpr int kInnerFolds = 5;

/// Fits Q-bar on (A, W) and g on W from each fold's training rows and predicts
/// the fold's validation rows at the observed treatment, A = 1 and A = 0.
inline CrossFittedNuisances crossfit_nuisances(const Dataset& data, const FoldPlan& plan,
                                               const std::vector<LearnerSpec>& q_candidates,
                                               const std::vector<LearnerSpec>& g_candidates,
                                               PropensityBounds g_bounds = {}) {
  validate_bounds(g_bounds);
  const Eigen::Index n = data.n();
  if (plan.n() != static_cast<std::size_t>(n)) throw Error(ErrorKind::Config, "fold plan does not match the data");

  CrossFittedNuisances out;
  out.plan = plan;
  out.Q0_A.resize(n);
  out.Q0_1.resize(n);
  out.Q0_0.resize(n);
  Vector g_raw(n);

  const Matrix XQ = outcome_design(data.A, data.W);
  const auto validation = plan.validation_rows();
  for (int f = 0; f < plan.K; ++f) {
    const auto train = plan.training_rows(f);
    const auto& valid = validation[static_cast<std::size_t>(f)];
    const Vector A_train = data.A(train);
    const double treated = A_train.sum();
    if (treated == 0.0 || treated == static_cast<double>(A_train.size()))
      throw Error(ErrorKind::Data, "training set of fold " + std::to_string(f + 1) + " lacks a treatment arm");

    const std::size_t m = train.size();
    const int inner_k = static_cast<int>(std::min<std::size_t>(kInnerFolds, m));
    const FoldPlan inner = make_folds(m, inner_k, mix_seed(plan.seed, static_cast<std::uint64_t>(f) + 1));

    FoldAudit audit;
    audit.fold = f;
    const Matrix XQ_train = XQ(train, Eigen::all);
    const auto q_sel = select_learner(q_candidates, XQ_train, data.Y(train), inner, Loss::LogLoss);
    audit.q_learner = q_sel.chosen;
    audit.q_cv_risks = q_sel.cv_risks;
    audit.q_ridge = q_sel.fitted.ridge_fallback;

    const Matrix W_train = data.W(train, Eigen::all);
    const auto g_sel = select_learner(g_candidates, W_train, A_train, inner, Loss::LogLoss);
    audit.g_learner = g_sel.chosen;
    audit.g_cv_risks = g_sel.cv_risks;
    audit.g_ridge = g_sel.fitted.ridge_fallback;
    out.per_fold_audit.push_back(std::move(audit));

    Matrix XV = XQ(valid, Eigen::all);
    const Vector qa = predict(q_sel.fitted, XV);
    XV.col(0).setOnes();
    const Vector q1 = predict(q_sel.fitted, XV);
    XV.col(0).setZero();
    const Vector q0 = predict(q_sel.fitted, XV);
    const Vector g = predict(g_sel.fitted, data.W(valid, Eigen::all));
    for (std::size_t j = 0; j < valid.size(); ++j) {
      const Eigen::Index i = valid[j];
      const auto jj = static_cast<Eigen::Index>(j);
      out.Q0_A[i] = detail::clamp_prob(qa[jj], kProbFloor);
      out.Q0_1[i] = detail::clamp_prob(q1[jj], kProbFloor);
      out.Q0_0[i] = detail::clamp_prob(q0[jj], kProbFloor);
      g_raw[i] = g[jj];
    }
  }
  auto truncated = truncate_propensity(g_raw, g_bounds);
  out.g1 = std::move(truncated.g1);
  out.g_truncated = truncated.clamped;
  return out;
}

}  // namespace cvtmle
