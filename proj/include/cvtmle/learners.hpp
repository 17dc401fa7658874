#pragma once

#include <limits>
#include <string>
#include <vector>

#include "cvtmle/data.hpp"
#include "cvtmle/types.hpp"

namespace cvtmle {

enum class Family { Binomial, Gaussian };
enum class LearnerForm { InterceptOnly, MainTerms, Polynomial, Interaction };
enum class Loss { LogLoss, SquaredError };

struct LearnerSpec {
  Family family = Family::Binomial;
  LearnerForm form = LearnerForm::MainTerms;
  int degree = 1;

  friend bool operator==(const LearnerSpec&, const LearnerSpec&) = default;
};

/// Compact names used on the command line: "mean", "glm", "glm-poly:<d>", "glm-interact".
inline LearnerSpec parse_learner(const std::string& s, Family family = Family::Binomial) {
  LearnerSpec spec;
  spec.family = family;
  if (s == "mean") {
    spec.form = LearnerForm::InterceptOnly;
  } else if (s == "glm") {
    spec.form = LearnerForm::MainTerms;
  } else if (s == "glm-interact") {
    spec.form = LearnerForm::Interaction;
  } else if (s.rfind("glm-poly:", 0) == 0) {
    spec.form = LearnerForm::Polynomial;
    const auto d = detail::parse_double(s.substr(9));
    if (!d || *d < 1 || *d != static_cast<int>(*d))
      throw Error(ErrorKind::Config, "learner '" + s + "': polynomial degree must be an integer >= 1");
    spec.degree = static_cast<int>(*d);
  } else {
    throw Error(ErrorKind::Config, "unknown learner '" + s + "' (expected mean, glm, glm-poly:<d>, glm-interact)");
  }
  return spec;
}

inline std::string to_string(const LearnerSpec& spec) {
  switch (spec.form) {
    case LearnerForm::InterceptOnly: return "mean";
    case LearnerForm::MainTerms: return "glm";
    case LearnerForm::Polynomial: return "glm-poly:" + std::to_string(spec.degree);
    case LearnerForm::Interaction: return "glm-interact";
  }
  return "?";
}

/// Maps an input row to design columns: intercept first, then the form's terms.
/// Polynomial powers above 1 are skipped for columns that were binary at fit time.
struct FeatureMap {
  LearnerSpec spec;
  Eigen::Index arity = 0;
  std::vector<bool> binary;

  Eigen::Index width() const {
    switch (spec.form) {
      case LearnerForm::InterceptOnly: return 1;
      case LearnerForm::MainTerms: return 1 + arity;
      case LearnerForm::Interaction: return 1 + arity + arity * (arity - 1) / 2;
      case LearnerForm::Polynomial: {
        Eigen::Index w = 1;
        for (Eigen::Index j = 0; j < arity; ++j) w += binary[static_cast<std::size_t>(j)] ? 1 : spec.degree;
        return w;
      }
    }
    return 1;
  }

  Matrix expand(const Matrix& X) const {
    Matrix D(X.rows(), width());
    D.col(0).setOnes();
    if (spec.form == LearnerForm::InterceptOnly) return D;
    Eigen::Index c = 1;
    for (Eigen::Index j = 0; j < arity; ++j) D.col(c++) = X.col(j);
    if (spec.form == LearnerForm::Interaction) {
      for (Eigen::Index j = 0; j < arity; ++j)
        for (Eigen::Index k = j + 1; k < arity; ++k) D.col(c++) = X.col(j).cwiseProduct(X.col(k));
    } else if (spec.form == LearnerForm::Polynomial) {
      for (Eigen::Index j = 0; j < arity; ++j) {
        if (binary[static_cast<std::size_t>(j)]) continue;
        for (int d = 2; d <= spec.degree; ++d) D.col(c++) = X.col(j).array().pow(d).matrix();
      }
    }
    return D;
  }

  static FeatureMap build(const LearnerSpec& spec, const Matrix& X) {
    FeatureMap fm{spec, X.cols(), std::vector<bool>(static_cast<std::size_t>(X.cols()), false)};
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      fm.binary[static_cast<std::size_t>(j)] = (X.col(j).array() == 0.0 || X.col(j).array() == 1.0).all();
    return fm;
  }
};

struct FittedPredictor {
  FeatureMap features;
  Vector coefficients;
  bool ridge_fallback = false;
  int iterations = 0;

  const LearnerSpec& spec() const { return features.spec; }
};

inline constexpr double kRidgePenalty = 1e-6;
inline constexpr double kIrlsTolerance = 1e-8;
inline constexpr int kIrlsMaxIter = 100;
inline constexpr double kProbFloor = 1e-6;

namespace detail {

inline double mean_binomial_loglik(const Vector& y, const Vector& eta) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    // y*eta - log(1 + e^eta), written stably
    const double e = eta[i];
    const double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    s += y[i] * e - log1pexp;
  }
  return s / static_cast<double>(y.size());
}

struct IrlsResult {
  Vector beta;
  int iterations = 0;
  bool ok = false;
};

// Newton-Raphson on the mean log-likelihood minus (penalty/2)|beta|^2, with step halving.
inline IrlsResult irls(const Matrix& D, const Vector& y, double penalty) {
  const Eigen::Index q = D.cols();
  const double m = static_cast<double>(D.rows());
  IrlsResult r;
  r.beta = Vector::Zero(q);
  const double ybar = y.mean();
  r.beta[0] = logit(clamp_prob(ybar, 1e-6));
  auto objective = [&](const Vector& b) { return mean_binomial_loglik(y, D * b) - 0.5 * penalty * b.squaredNorm(); };
  double obj = objective(r.beta);
  for (int it = 1; it <= kIrlsMaxIter; ++it) {
    r.iterations = it;
    const Vector eta = D * r.beta;
    const Vector mu = eta.unaryExpr([](double e) { return expit(e); });
    const Vector grad = D.transpose() * (y - mu) / m - penalty * r.beta;
    if (grad.norm() <= kIrlsTolerance) {
      r.ok = true;
      return r;
    }
    const Vector w = mu.array() * (1.0 - mu.array());
    Matrix H = D.transpose() * w.asDiagonal() * D / m;
    H.diagonal().array() += penalty;
    Eigen::LDLT<Matrix> ldlt(H);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 1e-14 * std::max(1.0, H.diagonal().maxCoeff())).all())
      return r;
    Vector step = ldlt.solve(grad);
    if (!step.allFinite()) return r;
    double t = 1.0;
    bool improved = false;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      const Vector cand = r.beta + t * step;
      const double o = objective(cand);
      if (std::isfinite(o) && o >= obj - 1e-15 * std::abs(obj)) {
        r.beta = cand;
        obj = o;
        improved = true;
        break;
      }
    }
    if (!improved) {
      // no ascent direction left at machine precision
      r.ok = grad.norm() <= 1e-6;
      return r;
    }
  }
  return r;
}

}  // namespace detail

/// Fits a GLM. Binomial fits accept fractional responses in [0, 1].
/// Singular or separated designs are refit with a small ridge penalty and flagged.
inline FittedPredictor fit_learner(const LearnerSpec& spec, const Matrix& X, const Vector& y) {
  const Eigen::Index m = X.rows();
  if (m == 0) throw Error(ErrorKind::Estimation, "fit_learner: empty data");
  if (y.size() != m) throw Error(ErrorKind::Estimation, "fit_learner: X and y lengths differ");
  if (spec.form == LearnerForm::Polynomial && spec.degree < 1)
    throw Error(ErrorKind::Config, "polynomial degree must be >= 1");
  FittedPredictor fp;
  fp.features = FeatureMap::build(spec, X);
  const Matrix D = fp.features.expand(X);
  const Eigen::Index q = D.cols();
  if (m <= q)
    throw Error(ErrorKind::Estimation, "fit_learner: " + std::to_string(m) + " rows for " + std::to_string(q) +
                                           " design columns");

  if (spec.family == Family::Binomial) {
    if (y.minCoeff() < 0.0 || y.maxCoeff() > 1.0)
      throw Error(ErrorKind::Estimation, "fit_learner: binomial response outside [0, 1]");
    if (y.maxCoeff() == y.minCoeff()) {
      fp.coefficients = Vector::Zero(q);
      fp.coefficients[0] = detail::logit(detail::clamp_prob(y.mean(), kProbFloor));
      return fp;
    }
    auto r = detail::irls(D, y, 0.0);
    const bool saturated = r.ok && (D * r.beta).cwiseAbs().maxCoeff() > 20.0;
    if (!r.ok || saturated) {
      r = detail::irls(D, y, kRidgePenalty);
      fp.ridge_fallback = true;
      if (!r.beta.allFinite()) throw Error(ErrorKind::Estimation, "fit_learner: ridge-regularized IRLS failed");
    }
    fp.coefficients = r.beta;
    fp.iterations = r.iterations;
    return fp;
  }

  Eigen::ColPivHouseholderQR<Matrix> qr(D);
  if (qr.rank() == q) {
    fp.coefficients = qr.solve(y);
  } else {
    Matrix G = D.transpose() * D / static_cast<double>(m);
    G.diagonal().array() += kRidgePenalty;
    fp.coefficients = G.ldlt().solve(D.transpose() * y / static_cast<double>(m));
    fp.ridge_fallback = true;
  }
  fp.iterations = 1;
  return fp;
}

inline Vector predict(const FittedPredictor& fp, const Matrix& X) {
  if (X.rows() == 0) return Vector(0);
  if (X.cols() != fp.features.arity)
    throw Error(ErrorKind::Estimation, "predict: expected " + std::to_string(fp.features.arity) + " input columns, got " +
                                           std::to_string(X.cols()));
  const Vector eta = fp.features.expand(X) * fp.coefficients;
  if (fp.spec().family == Family::Gaussian) return eta;
  return eta.unaryExpr([](double e) { return detail::clamp_prob(detail::expit(e), 1e-12); });
}

inline double empirical_risk(const Vector& y, const Vector& pred, Loss loss) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (loss == Loss::SquaredError) {
      const double r = y[i] - pred[i];
      s += r * r;
    } else {
      const double p = detail::clamp_prob(pred[i], 1e-12);
      s -= y[i] * std::log(p) + (1.0 - y[i]) * std::log1p(-p);
    }
  }
  return y.size() ? s / static_cast<double>(y.size()) : 0.0;
}

struct Selection {
  LearnerSpec chosen;
  std::size_t chosen_index = 0;
  FittedPredictor fitted;
  std::vector<double> cv_risks;  // NaN when selection was skipped (single candidate)
};

/// Discrete cross-validation selector: each candidate's risk is averaged over
/// the held-out rows of `inner_folds`; the minimum wins and is refit on all rows.
/// Ties go to the earlier candidate. A candidate that throws on any inner
/// training set gets infinite risk.
inline Selection select_learner(const std::vector<LearnerSpec>& candidates, const Matrix& X, const Vector& y,
                                const FoldPlan& inner_folds, Loss loss) {
  if (candidates.empty()) throw Error(ErrorKind::Config, "select_learner: no candidates");
  Selection sel;
  if (candidates.size() == 1) {
    sel.chosen = candidates.front();
    sel.fitted = fit_learner(sel.chosen, X, y);
    sel.cv_risks = {std::numeric_limits<double>::quiet_NaN()};
    return sel;
  }
  if (inner_folds.n() != static_cast<std::size_t>(X.rows()))
    throw Error(ErrorKind::Estimation, "select_learner: inner folds do not cover the rows");

  const auto validation = inner_folds.validation_rows();
  sel.cv_risks.assign(candidates.size(), std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    try {
      double total = 0.0;
      for (int f = 0; f < inner_folds.K; ++f) {
        const auto train = inner_folds.training_rows(f);
        const auto& valid = validation[static_cast<std::size_t>(f)];
        const Matrix Xt = X(train, Eigen::all);
        const Vector yt = y(train);
        const auto fp = fit_learner(candidates[c], Xt, yt);
        const Vector yv = y(valid);
        total += empirical_risk(yv, predict(fp, X(valid, Eigen::all)), loss) * static_cast<double>(valid.size());
      }
      sel.cv_risks[c] = total / static_cast<double>(X.rows());
    } catch (const Error&) {
      // stays infinite
    }
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c)
    if (sel.cv_risks[c] < sel.cv_risks[best]) best = c;
  if (!std::isfinite(sel.cv_risks[best])) throw Error(ErrorKind::Estimation, "select_learner: every candidate failed");
  sel.chosen_index = best;
  sel.chosen = candidates[best];
  sel.fitted = fit_learner(sel.chosen, X, y);
  return sel;
}

}  // namespace cvtmle
