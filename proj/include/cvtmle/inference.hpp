#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cvtmle/crossfit.hpp"
#include "cvtmle/data.hpp"
#include "cvtmle/targeting.hpp"

namespace cvtmle {

inline double standard_error(const Vector& ic_total) {
  const auto n = ic_total.size();
  if (n < 2) throw Error(ErrorKind::Estimation, "standard_error: need at least 2 values");
  return sample_sd(ic_total) / std::sqrt(static_cast<double>(n));
}

/// Standard normal quantile. Acklam's rational approximation (relative error
/// ~1e-9) polished with one Halley step against erfc, giving close to full
/// double precision.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::Config, "normal_quantile: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

inline std::pair<double, double> confidence_interval(double psi, double se, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::Config, "alpha must lie in (0, 1)");
  if (!(se >= 0.0)) throw Error(ErrorKind::Estimation, "confidence_interval: negative standard error");
  const double half = normal_quantile(1.0 - alpha / 2.0) * se;
  return {psi - half, psi + half};
}

struct EstimateReport {
  ParameterKind parameter = ParameterKind::ATE;
  Variant variant = Variant::Stacked;
  double psi = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double alpha = 0.05;
  int k_iterations = 0;
  bool converged = false;
  StopReason reason = StopReason::MaxIter;
  std::vector<double> eps_trace;
  double ic_mean_final = 0.0;
  double psi_scaled = 0.0;
  double se_scaled = 0.0;
  // standard error from the residual term alone, reported alongside
  double se_residual_scaled = 0.0;
  std::int64_t n = 0;
  int K = 0;
  std::uint64_t seed = 0;
  std::vector<FoldAudit> learner_audit;
  std::size_t g_truncated = 0;
  OutcomeScale scale;
  std::vector<std::string> warnings;
  nlohmann::json config;
};

inline EstimateReport assemble_report(const TargetingResult& result, const CrossFittedNuisances& nuisances,
                                      const Dataset& data, ParameterKind kind, Variant variant, double alpha) {
  EstimateReport r;
  r.parameter = kind;
  r.variant = variant;
  r.alpha = alpha;
  r.k_iterations = result.trace.k;
  r.converged = result.trace.converged;
  r.reason = result.trace.reason;
  r.eps_trace = result.trace.eps;
  r.ic_mean_final = result.final.ic.d_Y.mean();
  r.psi_scaled = plugin_estimate(kind, variant, result.final.b, result.state.Q_1, result.state.plan);
  r.se_scaled = standard_error(result.final.ic.total);
  r.se_residual_scaled = standard_error(result.final.ic.d_Y);
  r.n = data.n();
  r.K = nuisances.plan.K;
  r.seed = nuisances.plan.seed;
  r.learner_audit = nuisances.per_fold_audit;
  r.g_truncated = nuisances.g_truncated;
  r.scale = data.scale;

  r.psi = unscale_parameter(r.psi_scaled, kind, data.scale);
  r.se = se_scale_factor(kind, data.scale) * r.se_scaled;
  std::tie(r.ci_lo, r.ci_hi) = confidence_interval(r.psi, r.se, alpha);

  if (data.scale.degenerate) r.warnings.emplace_back("degenerate outcome scale: outcome is constant");
  if (r.se == 0.0) r.warnings.emplace_back("degenerate inference: influence curve is constant");
  if (!r.converged) r.warnings.emplace_back("targeting hit max-iter before meeting the tolerance");
  for (const auto& a : r.learner_audit) {
    if (a.q_ridge || a.g_ridge) {
      r.warnings.emplace_back("ridge fallback used in at least one fold");
      break;
    }
  }
  return r;
}

namespace detail {

inline nlohmann::json nullable(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double from_nullable(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline StopReason parse_reason(const std::string& s) {
  if (s == "tolerance-met") return StopReason::ToleranceMet;
  if (s == "eps-negligible") return StopReason::EpsNegligible;
  return StopReason::MaxIter;
}

}  // namespace detail

inline nlohmann::json to_json(const EstimateReport& r) {
  using nlohmann::json;
  json audit = json::array();
  for (const auto& a : r.learner_audit) {
    json qr = json::array(), gr = json::array();
    for (double v : a.q_cv_risks) qr.push_back(detail::nullable(v));
    for (double v : a.g_cv_risks) gr.push_back(detail::nullable(v));
    audit.push_back({{"fold", a.fold + 1},
                     {"q_learner", to_string(a.q_learner)},
                     {"q_cv_risks", qr},
                     {"q_ridge", a.q_ridge},
                     {"g_learner", to_string(a.g_learner)},
                     {"g_cv_risks", gr},
                     {"g_ridge", a.g_ridge}});
  }
  json j = {{"parameter", std::string(to_string(r.parameter))},
            {"variant", std::string(to_string(r.variant))},
            {"psi", r.psi},
            {"se", r.se},
            {"ci_lo", r.ci_lo},
            {"ci_hi", r.ci_hi},
            {"alpha", r.alpha},
            {"k_iterations", r.k_iterations},
            {"converged", r.converged},
            {"reason", std::string(to_string(r.reason))},
            {"eps_trace", r.eps_trace},
            {"ic_mean_final", r.ic_mean_final},
            {"psi_scaled", r.psi_scaled},
            {"se_scaled", r.se_scaled},
            {"se_residual_scaled", r.se_residual_scaled},
            {"n", r.n},
            {"K", r.K},
            {"seed", r.seed},
            {"learner_audit", audit},
            {"g_truncated", r.g_truncated},
            {"outcome_scale", {{"min", r.scale.min}, {"max", r.scale.max}, {"degenerate", r.scale.degenerate}}},
            {"warnings", r.warnings}};
  if (!r.config.is_null()) j["config"] = r.config;
  return j;
}

inline EstimateReport report_from_json(const nlohmann::json& j) {
  EstimateReport r;
  r.parameter = parse_parameter(j.at("parameter").get<std::string>());
  r.variant = parse_variant(j.at("variant").get<std::string>());
  r.psi = j.at("psi").get<double>();
  r.se = j.at("se").get<double>();
  r.ci_lo = j.at("ci_lo").get<double>();
  r.ci_hi = j.at("ci_hi").get<double>();
  r.alpha = j.at("alpha").get<double>();
  r.k_iterations = j.at("k_iterations").get<int>();
  r.converged = j.at("converged").get<bool>();
  r.reason = detail::parse_reason(j.at("reason").get<std::string>());
  r.eps_trace = j.at("eps_trace").get<std::vector<double>>();
  r.ic_mean_final = j.at("ic_mean_final").get<double>();
  r.psi_scaled = j.at("psi_scaled").get<double>();
  r.se_scaled = j.at("se_scaled").get<double>();
  r.se_residual_scaled = j.at("se_residual_scaled").get<double>();
  r.n = j.at("n").get<std::int64_t>();
  r.K = j.at("K").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& a : j.at("learner_audit")) {
    FoldAudit fa;
    fa.fold = a.at("fold").get<int>() - 1;
    fa.q_learner = parse_learner(a.at("q_learner").get<std::string>());
    fa.g_learner = parse_learner(a.at("g_learner").get<std::string>());
    for (const auto& v : a.at("q_cv_risks")) fa.q_cv_risks.push_back(detail::from_nullable(v));
    for (const auto& v : a.at("g_cv_risks")) fa.g_cv_risks.push_back(detail::from_nullable(v));
    fa.q_ridge = a.at("q_ridge").get<bool>();
    fa.g_ridge = a.at("g_ridge").get<bool>();
    r.learner_audit.push_back(std::move(fa));
  }
  r.g_truncated = j.at("g_truncated").get<std::size_t>();
  const auto& s = j.at("outcome_scale");
  r.scale = {s.at("min").get<double>(), s.at("max").get<double>(), s.at("degenerate").get<bool>()};
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  if (j.contains("config")) r.config = j.at("config");
  return r;
}

inline std::string summary_csv_header() {
  return "parameter,variant,psi,se,ci_lo,ci_hi,alpha,k_iterations,converged,reason,n,K,seed";
}

inline std::string summary_csv_row(const EstimateReport& r) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return std::string(to_string(r.parameter)) + "," + std::string(to_string(r.variant)) + "," + num(r.psi) + "," +
         num(r.se) + "," + num(r.ci_lo) + "," + num(r.ci_hi) + "," + num(r.alpha) + "," +
         std::to_string(r.k_iterations) + "," + (r.converged ? "true" : "false") + "," +
         std::string(to_string(r.reason)) + "," + std::to_string(r.n) + "," + std::to_string(r.K) + "," +
         std::to_string(r.seed);
}

}  // namespace cvtmle
