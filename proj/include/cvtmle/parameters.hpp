#pragma once

#include <optional>
#include <vector>

#include "cvtmle/data.hpp"
#include "cvtmle/types.hpp"

namespace cvtmle {

/// Clever covariate evaluated at the observed treatment and at both counterfactual arms.
struct CleverCovariates {
  Vector h_A;
  Vector h_1;
  Vector h_0;
};

/// Influence-curve pieces: d_Y is the residual term (the score of the
/// fluctuation), d_W the covariate-marginal term. total = d_Y + d_W.
struct ICComponents {
  Vector d_Y;
  Vector d_W;
  Vector total;
};

inline Vector blip(const Vector& Q1, const Vector& Q0) {
  if (Q1.size() != Q0.size()) throw Error(ErrorKind::Estimation, "blip: length mismatch");
  return Q1 - Q0;
}

/// Per-fold means of x, indexed by fold.
inline std::vector<double> fold_means(const Vector& x, const FoldPlan& plan) {
  std::vector<double> sum(static_cast<std::size_t>(plan.K), 0.0);
  std::vector<double> count(static_cast<std::size_t>(plan.K), 0.0);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const auto f = static_cast<std::size_t>(plan.assignment[static_cast<std::size_t>(i)]);
    sum[f] += x[i];
    count[f] += 1.0;
  }
  for (std::size_t f = 0; f < sum.size(); ++f) sum[f] /= count[f];
  return sum;
}

/// Row-wise centering value for the blip: the full-sample mean (stacked) or
/// the mean over the row's own validation fold (foldwise).
inline Vector blip_centers(const Vector& b, Variant variant, const FoldPlan& plan) {
  if (variant == Variant::Stacked) return Vector::Constant(b.size(), b.mean());
  const auto means = fold_means(b, plan);
  Vector c(b.size());
  for (Eigen::Index i = 0; i < b.size(); ++i) c[i] = means[static_cast<std::size_t>(plan.assignment[static_cast<std::size_t>(i)])];
  return c;
}

inline CleverCovariates clever_covariates(ParameterKind kind, Variant variant, const std::optional<Vector>& b,
                                          const Vector& g1, const Vector& A, const FoldPlan& plan) {
  const Eigen::Index n = g1.size();
  if (A.size() != n || plan.n() != static_cast<std::size_t>(n))
    throw Error(ErrorKind::Estimation, "clever_covariates: length mismatch");
  if (!(g1.array() > 0.0).all() || !(g1.array() < 1.0).all())
    throw Error(ErrorKind::Estimation, "clever_covariates: propensity must lie strictly inside (0, 1)");

  CleverCovariates cc;
  switch (kind) {
    case ParameterKind::ATE:
      cc.h_1 = g1.cwiseInverse();
      cc.h_0 = -(1.0 - g1.array()).inverse().matrix();
      break;
    case ParameterKind::TSM:
      cc.h_1 = g1.cwiseInverse();
      cc.h_0 = Vector::Zero(n);
      break;
    case ParameterKind::VTE: {
      if (!b) throw Error(ErrorKind::Estimation, "clever_covariates: VTE needs the blip");
      if (b->size() != n) throw Error(ErrorKind::Estimation, "clever_covariates: blip length mismatch");
      const Vector centered = 2.0 * (*b - blip_centers(*b, variant, plan));
      cc.h_1 = centered.cwiseQuotient(g1);
      cc.h_0 = -centered.array() / (1.0 - g1.array());
      break;
    }
  }
  cc.h_A = (A.array() == 1.0).select(cc.h_1, cc.h_0);
  return cc;
}

/// Plug-in value in scaled units. Foldwise: the per-fold plug-ins averaged
/// over folds; stacked: the plug-in over the pooled sample.
inline double plugin_estimate(ParameterKind kind, Variant variant, const Vector& b, const Vector& Q1,
                              const FoldPlan& plan) {
  if (b.size() == 0) throw Error(ErrorKind::Estimation, "plugin_estimate: empty input");
  auto average = [&](const Vector& x) {
    if (variant == Variant::Stacked) return x.mean();
    const auto m = fold_means(x, plan);
    return std::accumulate(m.begin(), m.end(), 0.0) / static_cast<double>(m.size());
  };
  switch (kind) {
    case ParameterKind::ATE: return average(b);
    case ParameterKind::TSM: return average(Q1);
    case ParameterKind::VTE: {
      const Vector centered = b - blip_centers(b, variant, plan);
      return average(centered.array().square().matrix());
    }
  }
  return 0.0;
}

inline ICComponents influence_curve(ParameterKind kind, Variant variant, const CleverCovariates& cc, const Vector& Q_A,
                                    const Vector& Y, const Vector& b, const Vector& Q1, double psi,
                                    const FoldPlan& plan) {
  if (!std::isfinite(psi)) throw Error(ErrorKind::Estimation, "influence_curve: non-finite estimate");
  ICComponents ic;
  ic.d_Y = cc.h_A.cwiseProduct(Y - Q_A);
  switch (kind) {
    case ParameterKind::ATE: ic.d_W = b.array() - psi; break;
    case ParameterKind::TSM: ic.d_W = Q1.array() - psi; break;
    case ParameterKind::VTE: ic.d_W = (b - blip_centers(b, variant, plan)).array().square() - psi; break;
  }
  ic.total = ic.d_Y + ic.d_W;
  return ic;
}

}  // namespace cvtmle
