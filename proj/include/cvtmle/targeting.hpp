#pragma once

#include <string_view>
#include <vector>

#include "cvtmle/crossfit.hpp"
#include "cvtmle/parameters.hpp"

namespace cvtmle {

/// Current fluctuated outcome predictions (scaled units) with everything the
/// clever covariate needs.
struct TargetingState {
  Vector Q_A;
  Vector Q_1;
  Vector Q_0;
  Vector g1;
  ParameterKind kind = ParameterKind::ATE;
  Variant variant = Variant::Stacked;
  FoldPlan plan;
};

enum class StopReason { ToleranceMet, EpsNegligible, MaxIter };

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::ToleranceMet: return "tolerance-met";
    case StopReason::EpsNegligible: return "eps-negligible";
    case StopReason::MaxIter: return "max-iter";
  }
  return "?";
}

/// Per-iterate record. ic_mean, sigma_hat and loglik describe iterates 0..k;
/// eps[j] is the fluctuation that moved iterate j to j + 1.
struct FluctuationTrace {
  std::vector<double> eps;
  std::vector<double> ic_mean;
  std::vector<double> sigma_hat;
  std::vector<double> loglik;
  int k = 0;
  bool converged = false;
  StopReason reason = StopReason::MaxIter;
};

inline constexpr double kEpsNegligible = 1e-8;
inline constexpr int kDefaultMaxIter = 100;

/// Binomial log-likelihood sum of Y against expit(eta); Y may be fractional.
inline double fluctuation_loglik(const Vector& Y, const Vector& eta) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < Y.size(); ++i) {
    const double e = eta[i];
    s += Y[i] * e - (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e)));
  }
  return s;
}

/// Maximum-likelihood fluctuation for the no-intercept logistic model
/// logit(mu) = offset + eps * h. Newton from zero with step halving, golden
/// section on [-10, 10] if Newton does not settle.
inline double fit_epsilon(const Vector& Y, const Vector& offset, const Vector& h) {
  if (Y.size() != offset.size() || Y.size() != h.size()) throw Error(ErrorKind::Estimation, "fit_epsilon: length mismatch");
  if (!offset.allFinite()) throw Error(ErrorKind::Estimation, "fit_epsilon: non-finite offset (unclamped Q?)");
  if ((h.array() == 0.0).all()) return 0.0;

  auto loglik = [&](double eps) { return fluctuation_loglik(Y, offset + eps * h); };
  if (!std::isfinite(loglik(0.0))) throw Error(ErrorKind::Estimation, "fit_epsilon: non-finite log-likelihood");

  double eps = 0.0;
  double cur = loglik(eps);
  for (int it = 0; it < 50; ++it) {
    double score = 0.0, info = 0.0;
    for (Eigen::Index i = 0; i < Y.size(); ++i) {
      const double mu = detail::expit(offset[i] + eps * h[i]);
      score += h[i] * (Y[i] - mu);
      info += h[i] * h[i] * mu * (1.0 - mu);
    }
    if (!(info > 0.0) || !std::isfinite(score)) break;
    double step = score / info;
    if (!std::isfinite(step)) break;
    // halve until the likelihood does not drop
    int halvings = 0;
    while (halvings < 60) {
      const double cand = loglik(eps + step);
      if (std::isfinite(cand) && cand >= cur) {
        eps += step;
        cur = cand;
        break;
      }
      step *= 0.5;
      ++halvings;
    }
    if (halvings == 60) return eps;
    if (std::abs(step) <= 1e-10) return eps;
  }

  constexpr double inv_phi = 0.6180339887498949;
  double a = -10.0, b = 10.0;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = loglik(c), fd = loglik(d);
  while (b - a > 1e-12) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = loglik(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = loglik(d);
    }
  }
  const double best = 0.5 * (a + b);
  if (!std::isfinite(loglik(best))) throw Error(ErrorKind::Estimation, "fit_epsilon: non-finite log-likelihood");
  return best;
}

inline TargetingState apply_fluctuation(TargetingState state, double eps, const CleverCovariates& cc) {
  if (!std::isfinite(eps)) throw Error(ErrorKind::Estimation, "apply_fluctuation: non-finite eps");
  if (eps == 0.0) return state;
  auto update = [eps](Vector& q, const Vector& h) {
    for (Eigen::Index i = 0; i < q.size(); ++i)
      q[i] = detail::clamp_prob(detail::expit(detail::logit(q[i]) + eps * h[i]), kProbFloor);
  };
  update(state.Q_A, cc.h_A);
  update(state.Q_1, cc.h_1);
  update(state.Q_0, cc.h_0);
  return state;
}

inline bool stopping_check(const Vector& d_Y, double sigma_hat, Eigen::Index n) {
  const double m = d_Y.mean();
  if (sigma_hat == 0.0) return m == 0.0;
  return std::abs(m) <= sigma_hat / static_cast<double>(n);
}

inline double sample_sd(const Vector& x) {
  const double n = static_cast<double>(x.size());
  if (n < 2) return 0.0;
  return std::sqrt((x.array() - x.mean()).square().sum() / (n - 1.0));
}

/// Everything the current iterate implies: blip, plug-in, covariate and IC.
struct IterateSummary {
  Vector b;
  double psi = 0.0;
  CleverCovariates cc;
  ICComponents ic;
  double sigma_hat = 0.0;
};

inline IterateSummary summarize_iterate(const TargetingState& s, const Vector& Y, const Vector& A) {
  IterateSummary out;
  out.b = blip(s.Q_1, s.Q_0);
  out.psi = plugin_estimate(s.kind, s.variant, out.b, s.Q_1, s.plan);
  out.cc = clever_covariates(s.kind, s.variant, out.b, s.g1, A, s.plan);
  out.ic = influence_curve(s.kind, s.variant, out.cc, s.Q_A, Y, out.b, s.Q_1, out.psi, s.plan);
  out.sigma_hat = sample_sd(out.ic.total);
  return out;
}

inline TargetingState initial_state(const CrossFittedNuisances& nuisances, ParameterKind kind, Variant variant) {
  TargetingState s;
  s.Q_A = nuisances.Q0_A.unaryExpr([](double q) { return detail::clamp_prob(q, kProbFloor); });
  s.Q_1 = nuisances.Q0_1.unaryExpr([](double q) { return detail::clamp_prob(q, kProbFloor); });
  s.Q_0 = nuisances.Q0_0.unaryExpr([](double q) { return detail::clamp_prob(q, kProbFloor); });
  s.g1 = nuisances.g1;
  s.kind = kind;
  s.variant = variant;
  s.plan = nuisances.plan;
  return s;
}

struct TargetingResult {
  TargetingState state;
  FluctuationTrace trace;
  IterateSummary final;
};

/// Iterates covariate evaluation, the tolerance check, the pooled offset
/// logistic fit and the update until |mean(d_Y)| <= sigma_hat / n, the
/// fluctuation becomes negligible, or max_iter fluctuations have been applied.
inline TargetingResult run_targeting(const CrossFittedNuisances& nuisances, const Dataset& data, ParameterKind kind,
                                     Variant variant, int max_iter = kDefaultMaxIter) {
  if (max_iter < 1) throw Error(ErrorKind::Config, "max_iter must be >= 1");
  if (nuisances.Q0_A.size() != data.n()) throw Error(ErrorKind::Estimation, "nuisances do not match the data");
  TargetingResult r;
  r.state = initial_state(nuisances, kind, variant);
  const Eigen::Index n = data.n();
  for (int k = 0;; ++k) {
    r.final = summarize_iterate(r.state, data.Y, data.A);
    r.trace.ic_mean.push_back(r.final.ic.d_Y.mean());
    r.trace.sigma_hat.push_back(r.final.sigma_hat);
    r.trace.loglik.push_back(fluctuation_loglik(data.Y, r.state.Q_A.unaryExpr([](double q) { return detail::logit(q); })));
    r.trace.k = k;
    if (stopping_check(r.final.ic.d_Y, r.final.sigma_hat, n)) {
      r.trace.converged = true;
      r.trace.reason = StopReason::ToleranceMet;
      break;
    }
    if (k > 0 && std::abs(r.trace.eps.back()) < kEpsNegligible) {
      r.trace.converged = true;
      r.trace.reason = StopReason::EpsNegligible;
      break;
    }
    if (k == max_iter) {
      r.trace.converged = false;
      r.trace.reason = StopReason::MaxIter;
      break;
    }
    const Vector offset = r.state.Q_A.unaryExpr([](double q) { return detail::logit(q); });
    const double eps = fit_epsilon(data.Y, offset, r.final.cc.h_A);
    r.trace.eps.push_back(eps);
    r.state = apply_fluctuation(std::move(r.state), eps, r.final.cc);
  }
  return r;
}

}  // namespace cvtmle
