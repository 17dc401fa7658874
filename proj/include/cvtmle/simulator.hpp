#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cvtmle/estimator.hpp"
#include "cvtmle/rng.hpp"

namespace cvtmle {

struct CovariateLaw {
  enum class Type { Bernoulli, Uniform } type = Type::Bernoulli;
  double p = 0.5;  // Bernoulli success probability; unused for Uniform(0, 1)
};

/// Known-truth data-generating process with expit-linear nuisances:
///   g0(W)      = expit(g_intercept + g_w . W)
///   Q0bar(A,W) = expit(q_intercept + q_a A + q_w . W + A (q_aw . W))
struct DGPSpec {
  std::string name;
  std::vector<CovariateLaw> W;
  double g_intercept = 0.0;
  std::vector<double> g_w;
  double q_intercept = 0.0;
  double q_a = 0.0;
  std::vector<double> q_w;
  std::vector<double> q_aw;

  std::size_t p() const { return W.size(); }

  double g0(std::span<const double> w) const {
    double eta = g_intercept;
    for (std::size_t j = 0; j < w.size(); ++j) eta += g_w[j] * w[j];
    return detail::expit(eta);
  }

  double Q0bar(double a, std::span<const double> w) const {
    double eta = q_intercept + q_a * a;
    for (std::size_t j = 0; j < w.size(); ++j) eta += q_w[j] * w[j] + a * q_aw[j] * w[j];
    return detail::expit(eta);
  }

  bool discrete() const {
    return std::all_of(W.begin(), W.end(), [](const CovariateLaw& l) { return l.type == CovariateLaw::Type::Bernoulli; });
  }
};

/// Throws unless coefficients are finite, dimensions agree and g0 stays inside
/// (0.01, 0.99) on the support. Both nuisances are monotone in each W
/// coordinate, so checking the corners of [0,1]^p suffices.
inline void validate_dgp(const DGPSpec& d) {
  const std::size_t p = d.p();
  if (d.g_w.size() != p || d.q_w.size() != p || d.q_aw.size() != p)
    throw Error(ErrorKind::Config, "DGP '" + d.name + "': coefficient lengths must match the number of covariates");
  auto finite = [](const std::vector<double>& v) { return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }); };
  if (!std::isfinite(d.g_intercept) || !std::isfinite(d.q_intercept) || !std::isfinite(d.q_a) || !finite(d.g_w) ||
      !finite(d.q_w) || !finite(d.q_aw))
    throw Error(ErrorKind::Config, "DGP '" + d.name + "': non-finite coefficient");
  for (const auto& l : d.W)
    if (l.type == CovariateLaw::Type::Bernoulli && !(l.p >= 0.0 && l.p <= 1.0))
      throw Error(ErrorKind::Config, "DGP '" + d.name + "': Bernoulli probability outside [0, 1]");
  if (p > 20) throw Error(ErrorKind::Config, "DGP '" + d.name + "': at most 20 covariates supported");
  std::vector<double> w(p);
  for (std::size_t mask = 0; mask < (std::size_t{1} << p); ++mask) {
    for (std::size_t j = 0; j < p; ++j) w[j] = (mask >> j) & 1U ? 1.0 : 0.0;
    const double g = d.g0(w);
    if (!(g > 0.01 && g < 0.99)) throw Error(ErrorKind::Config, "DGP '" + d.name + "': g0 leaves (0.01, 0.99)");
  }
}

inline DGPSpec dgp_preset(const std::string& name) {
  DGPSpec d;
  d.name = name;
  if (name == "dgp-a") {
    // W ~ Bern(0.5), g0 = 0.5, Q0bar = expit(A + W - 0.5)
    d.W = {{CovariateLaw::Type::Bernoulli, 0.5}};
    d.g_w = {0.0};
    d.q_intercept = -0.5;
    d.q_a = 1.0;
    d.q_w = {1.0};
    d.q_aw = {0.0};
  } else if (name == "dgp-b") {
    // W ~ Bern(0.5), g0 = expit(W - 0.5), Q0bar = expit(A (2W - 1))
    d.W = {{CovariateLaw::Type::Bernoulli, 0.5}};
    d.g_intercept = -0.5;
    d.g_w = {1.0};
    d.q_a = -1.0;
    d.q_w = {0.0};
    d.q_aw = {2.0};
  } else if (name == "dgp-c") {
    // W ~ U(0,1), g0 = expit(0.8W - 0.4), Q0bar = expit(0.5A + W - 0.5 + 0.5AW)
    d.W = {{CovariateLaw::Type::Uniform, 0.0}};
    d.g_intercept = -0.4;
    d.g_w = {0.8};
    d.q_intercept = -0.5;
    d.q_a = 0.5;
    d.q_w = {1.0};
    d.q_aw = {0.5};
  } else {
    throw Error(ErrorKind::Config, "unknown DGP '" + name + "' (expected dgp-a, dgp-b or dgp-c)");
  }
  validate_dgp(d);
  return d;
}

/// Reads a DGP from JSON:
/// {"name": ..., "W": [{"law": "bernoulli", "p": 0.5} | {"law": "uniform"}],
///  "g": {"intercept": .., "w": [..]}, "q": {"intercept": .., "a": .., "w": [..], "aw": [..]}}
inline DGPSpec dgp_from_json(const nlohmann::json& j) {
  DGPSpec d;
  try {
    d.name = j.value("name", std::string("custom"));
    for (const auto& w : j.at("W")) {
      const auto law = w.at("law").get<std::string>();
      if (law == "bernoulli") d.W.push_back({CovariateLaw::Type::Bernoulli, w.at("p").get<double>()});
      else if (law == "uniform") d.W.push_back({CovariateLaw::Type::Uniform, 0.0});
      else throw Error(ErrorKind::Config, "unknown covariate law '" + law + "'");
    }
    const auto& g = j.at("g");
    d.g_intercept = g.value("intercept", 0.0);
    d.g_w = g.at("w").get<std::vector<double>>();
    const auto& q = j.at("q");
    d.q_intercept = q.value("intercept", 0.0);
    d.q_a = q.value("a", 0.0);
    d.q_w = q.at("w").get<std::vector<double>>();
    d.q_aw = q.value("aw", std::vector<double>(d.q_w.size(), 0.0));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed DGP spec: ") + e.what());
  }
  validate_dgp(d);
  return d;
}

/// Rows are drawn in order; within a row W, then A, then Y.
inline Dataset draw_sample(const DGPSpec& dgp, std::size_t n, CounterRng& rng) {
  if (n < 2) throw Error(ErrorKind::Config, "draw_sample: n must be at least 2");
  const auto p = static_cast<Eigen::Index>(dgp.p());
  const auto rows = static_cast<Eigen::Index>(n);
  Matrix W(rows, p);
  Vector A(rows), Y(rows);
  std::vector<double> w(dgp.p());
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < dgp.p(); ++j) {
      const auto& law = dgp.W[j];
      w[j] = law.type == CovariateLaw::Type::Bernoulli ? (rng.bernoulli(law.p) ? 1.0 : 0.0) : rng.uniform();
      W(i, static_cast<Eigen::Index>(j)) = w[j];
    }
    A[i] = rng.bernoulli(dgp.g0(w)) ? 1.0 : 0.0;
    Y[i] = rng.bernoulli(dgp.Q0bar(A[i], w)) ? 1.0 : 0.0;
  }
  // a single-arm sample is rejected here and counted as a failed replicate
  return make_dataset(std::move(W), std::move(A), std::move(Y), OutcomeScale{0.0, 1.0, false});
}

inline constexpr std::size_t kTruthPoints = 1'000'000;

namespace detail {

inline double radical_inverse(std::size_t i, std::size_t base) {
  double inv = 1.0 / static_cast<double>(base), f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % base);
    i /= base;
    f *= inv;
  }
  return r;
}

// Calls fn(w, weight) over a deterministic quadrature of the covariate law:
// exact enumeration of Bernoulli atoms crossed with a midpoint rule (one
// uniform coordinate) or a Halton set (several).
template <class Fn>
void integrate_covariates(const DGPSpec& dgp, Fn&& fn) {
  std::vector<std::size_t> bern, unif;
  for (std::size_t j = 0; j < dgp.p(); ++j)
    (dgp.W[j].type == CovariateLaw::Type::Bernoulli ? bern : unif).push_back(j);
  static constexpr std::size_t primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
  const std::size_t points = unif.empty() ? 1 : kTruthPoints;
  const double point_weight = 1.0 / static_cast<double>(points);
  std::vector<double> w(dgp.p());
  for (std::size_t mask = 0; mask < (std::size_t{1} << bern.size()); ++mask) {
    double atom = 1.0;
    for (std::size_t b = 0; b < bern.size(); ++b) {
      const bool one = (mask >> b) & 1U;
      const double pj = dgp.W[bern[b]].p;
      w[bern[b]] = one ? 1.0 : 0.0;
      atom *= one ? pj : 1.0 - pj;
    }
    if (atom == 0.0) continue;
    for (std::size_t k = 0; k < points; ++k) {
      if (unif.size() == 1) {
        w[unif[0]] = (static_cast<double>(k) + 0.5) * point_weight;
      } else {
        for (std::size_t u = 0; u < unif.size(); ++u) w[unif[u]] = radical_inverse(k + 1, primes[u]);
      }
      fn(std::span<const double>(w), atom * point_weight);
    }
  }
}

}  // namespace detail

/// Psi(P0) by deterministic integration. Exact for Bernoulli-only laws; a
/// 10^6-point midpoint rule in one uniform dimension (error far below 1e-8 for
/// these smooth integrands); a 10^6-point Halton average in higher dimensions
/// (error on the order of 1e-5 or better).
inline double true_value(const DGPSpec& dgp, ParameterKind kind) {
  double e_b = 0.0, e_b2 = 0.0, e_q1 = 0.0;
  detail::integrate_covariates(dgp, [&](std::span<const double> w, double weight) {
    const double q1 = dgp.Q0bar(1.0, w);
    const double b = q1 - dgp.Q0bar(0.0, w);
    e_b += weight * b;
    e_b2 += weight * b * b;
    e_q1 += weight * q1;
  });
  switch (kind) {
    case ParameterKind::ATE: return e_b;
    case ParameterKind::TSM: return e_q1;
    case ParameterKind::VTE: return e_b2 - e_b * e_b;
  }
  return 0.0;
}

/// One estimator run inside a Monte Carlo study.
struct ReplicateResult {
  std::size_t rep = 0;
  bool failed = false;
  std::string error;
  double psi = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool covered = false;
  int k_iterations = 0;
  bool converged = false;
  StopReason reason = StopReason::MaxIter;
  double ic_mean_final = 0.0;
  double sigma_hat_final = 0.0;
  std::size_t n = 0;
  double max_loglik_drop = 0.0;  // largest decrease between consecutive iterates
  std::vector<double> eps_trace;
  OutcomeScale scale;
};

struct MCAggregates {
  std::size_t reps = 0;
  std::size_t failures = 0;
  double truth = 0.0;
  double mean_psi = 0.0;
  double mean_bias = 0.0;
  double mc_sd = 0.0;  // divisor = successful replicates, so rmse^2 = bias^2 + mc_sd^2
  double rmse = 0.0;
  double coverage = 0.0;
  double mean_ci_width = 0.0;
  double converged_rate = 0.0;
  bool valid = true;
};

struct MCResult {
  std::string dgp;
  ParameterKind kind = ParameterKind::ATE;
  Variant variant = Variant::Stacked;
  std::size_t n = 0;
  std::uint64_t base_seed = 0;
  std::vector<ReplicateResult> replicates;
  MCAggregates aggregates;
};

inline constexpr double kMaxFailureRate = 0.05;

/// Replicate r draws from stream (base_seed, r) and folds with seed
/// mix_seed(base_seed, r); nothing depends on scheduling.
inline Dataset replicate_dataset(const DGPSpec& dgp, std::size_t n, std::uint64_t base_seed, std::size_t rep) {
  CounterRng rng(base_seed, rep);
  return draw_sample(dgp, n, rng);
}

inline EstimatorConfig replicate_config(EstimatorConfig cfg, std::uint64_t base_seed, std::size_t rep) {
  cfg.seed = mix_seed(base_seed, rep);
  return cfg;
}

inline ReplicateResult summarize_replicate(std::size_t rep, const EstimateRun& run, double truth) {
  ReplicateResult r;
  r.rep = rep;
  const auto& rep_ = run.report;
  r.psi = rep_.psi;
  r.se = rep_.se;
  r.ci_lo = rep_.ci_lo;
  r.ci_hi = rep_.ci_hi;
  r.covered = rep_.ci_lo <= truth && truth <= rep_.ci_hi;
  r.k_iterations = rep_.k_iterations;
  r.converged = rep_.converged;
  r.reason = rep_.reason;
  r.ic_mean_final = run.targeting.trace.ic_mean.back();
  r.sigma_hat_final = run.targeting.trace.sigma_hat.back();
  r.n = static_cast<std::size_t>(rep_.n);
  r.eps_trace = rep_.eps_trace;
  r.scale = rep_.scale;
  const auto& ll = run.targeting.trace.loglik;
  for (std::size_t j = 1; j < ll.size(); ++j) r.max_loglik_drop = std::max(r.max_loglik_drop, ll[j - 1] - ll[j]);
  return r;
}

inline MCAggregates aggregate(const std::vector<ReplicateResult>& reps, double truth) {
  MCAggregates a;
  a.reps = reps.size();
  a.truth = truth;
  std::size_t ok = 0;
  double sum = 0.0, width = 0.0, hits = 0.0, conv = 0.0;
  for (const auto& r : reps) {
    if (r.failed) {
      ++a.failures;
      continue;
    }
    ++ok;
    sum += r.psi;
    width += r.ci_hi - r.ci_lo;
    hits += r.covered ? 1.0 : 0.0;
    conv += r.converged ? 1.0 : 0.0;
  }
  a.valid = static_cast<double>(a.failures) <= kMaxFailureRate * static_cast<double>(a.reps);
  if (ok == 0) {
    a.valid = false;
    return a;
  }
  const double m = static_cast<double>(ok);
  a.mean_psi = sum / m;
  a.mean_bias = a.mean_psi - truth;
  double ss = 0.0;
  for (const auto& r : reps)
    if (!r.failed) ss += (r.psi - a.mean_psi) * (r.psi - a.mean_psi);
  a.mc_sd = std::sqrt(ss / m);
  a.rmse = std::sqrt(a.mean_bias * a.mean_bias + a.mc_sd * a.mc_sd);
  a.coverage = hits / m;
  a.mean_ci_width = width / m;
  a.converged_rate = conv / m;
  return a;
}

namespace detail {

// Runs body(r) for r in [0, reps) over `jobs` threads; each index is visited once.
template <class Body>
void for_each_replicate(std::size_t reps, unsigned jobs, Body&& body) {
  jobs = std::max(1U, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(reps, 1))));
  if (jobs == 1) {
    for (std::size_t r = 0; r < reps; ++r) body(r);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < jobs; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t r = t; r < reps; r += jobs) body(r);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

inline MCResult run_monte_carlo(const DGPSpec& dgp, ParameterKind kind, Variant variant, std::size_t n, std::size_t reps,
                                std::uint64_t base_seed, const EstimatorConfig& cfg, unsigned jobs = 1) {
  if (reps < 1) throw Error(ErrorKind::Config, "reps must be at least 1");
  MCResult out;
  out.dgp = dgp.name;
  out.kind = kind;
  out.variant = variant;
  out.n = n;
  out.base_seed = base_seed;
  const double truth = true_value(dgp, kind);
  out.replicates.resize(reps);
  detail::for_each_replicate(reps, jobs, [&](std::size_t r) {
    try {
      const auto data = replicate_dataset(dgp, n, base_seed, r);
      out.replicates[r] = summarize_replicate(r, estimate(data, kind, variant, replicate_config(cfg, base_seed, r)), truth);
    } catch (const std::exception& e) {
      out.replicates[r] = ReplicateResult{};
      out.replicates[r].rep = r;
      out.replicates[r].failed = true;
      out.replicates[r].error = e.what();
    }
  });
  out.aggregates = aggregate(out.replicates, truth);
  return out;
}

struct PairedSummary {
  std::size_t pairs = 0;
  double max_abs_diff = 0.0;
  double mean_diff = 0.0;  // stacked - foldwise
  double rmse_stacked = 0.0;
  double rmse_foldwise = 0.0;
  double rmse_ratio = 0.0;  // stacked / foldwise
  double coverage_stacked = 0.0;
  double coverage_foldwise = 0.0;
  double coverage_diff = 0.0;
};

struct VariantComparison {
  MCResult stacked;
  MCResult foldwise;
  PairedSummary summary;
};

/// Runs both variants on the same datasets and the same initial fits, then
/// summarizes the paired differences over replicates where both succeeded.
inline VariantComparison compare_variants(const DGPSpec& dgp, ParameterKind kind, std::size_t n, std::size_t reps,
                                          std::uint64_t base_seed, const EstimatorConfig& cfg, unsigned jobs = 1) {
  if (reps < 2) throw Error(ErrorKind::Config, "compare_variants needs at least 2 replicates");
  VariantComparison out;
  const double truth = true_value(dgp, kind);
  for (auto* m : {&out.stacked, &out.foldwise}) {
    m->dgp = dgp.name;
    m->kind = kind;
    m->n = n;
    m->base_seed = base_seed;
    m->replicates.resize(reps);
  }
  out.stacked.variant = Variant::Stacked;
  out.foldwise.variant = Variant::Foldwise;
  detail::for_each_replicate(reps, jobs, [&](std::size_t r) {
    try {
      const auto data = replicate_dataset(dgp, n, base_seed, r);
      const auto rcfg = replicate_config(cfg, base_seed, r);
      const auto nuisances = fit_nuisances(data, rcfg);
      out.stacked.replicates[r] = summarize_replicate(r, target_and_report(data, nuisances, kind, Variant::Stacked, rcfg), truth);
      out.foldwise.replicates[r] = summarize_replicate(r, target_and_report(data, nuisances, kind, Variant::Foldwise, rcfg), truth);
    } catch (const std::exception& e) {
      for (auto* m : {&out.stacked, &out.foldwise}) {
        m->replicates[r] = ReplicateResult{};
        m->replicates[r].rep = r;
        m->replicates[r].failed = true;
        m->replicates[r].error = e.what();
      }
    }
  });
  out.stacked.aggregates = aggregate(out.stacked.replicates, truth);
  out.foldwise.aggregates = aggregate(out.foldwise.replicates, truth);

  auto& s = out.summary;
  double diff_sum = 0.0, se_s = 0.0, se_f = 0.0, hit_s = 0.0, hit_f = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto& a = out.stacked.replicates[r];
    const auto& b = out.foldwise.replicates[r];
    if (a.failed || b.failed) continue;
    ++s.pairs;
    const double d = a.psi - b.psi;
    diff_sum += d;
    s.max_abs_diff = std::max(s.max_abs_diff, std::abs(d));
    se_s += (a.psi - truth) * (a.psi - truth);
    se_f += (b.psi - truth) * (b.psi - truth);
    hit_s += a.covered ? 1.0 : 0.0;
    hit_f += b.covered ? 1.0 : 0.0;
  }
  if (s.pairs > 0) {
    const double m = static_cast<double>(s.pairs);
    s.mean_diff = diff_sum / m;
    s.rmse_stacked = std::sqrt(se_s / m);
    s.rmse_foldwise = std::sqrt(se_f / m);
    s.rmse_ratio = s.rmse_foldwise > 0.0 ? s.rmse_stacked / s.rmse_foldwise : 1.0;
    s.coverage_stacked = hit_s / m;
    s.coverage_foldwise = hit_f / m;
    s.coverage_diff = s.coverage_stacked - s.coverage_foldwise;
  }
  return out;
}

inline std::string replicate_csv_header() {
  return "rep,psi,se,ci_lo,ci_hi,covered,k_iterations,converged,reason,ic_mean_final,sigma_hat_final,failed,error";
}

inline std::string replicate_csv_row(const ReplicateResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%d,%d,%d,%s,%.17g,%.17g,%d,", r.rep, r.psi, r.se, r.ci_lo,
                r.ci_hi, r.covered ? 1 : 0, r.k_iterations, r.converged ? 1 : 0, std::string(to_string(r.reason)).c_str(),
                r.ic_mean_final, r.sigma_hat_final, r.failed ? 1 : 0);
  std::string err = r.error;
  std::replace(err.begin(), err.end(), ',', ';');
  std::replace(err.begin(), err.end(), '\n', ' ');
  return buf + err;
}

inline nlohmann::json to_json(const MCAggregates& a) {
  return {{"reps", a.reps},         {"failures", a.failures}, {"truth", a.truth},
          {"mean_psi", a.mean_psi}, {"mean_bias", a.mean_bias}, {"mc_sd", a.mc_sd},
          {"rmse", a.rmse},         {"coverage", a.coverage}, {"mean_ci_width", a.mean_ci_width},
          {"converged_rate", a.converged_rate}, {"valid", a.valid}};
}

inline nlohmann::json to_json(const MCResult& m) {
  return {{"dgp", m.dgp},
          {"parameter", std::string(to_string(m.kind))},
          {"variant", std::string(to_string(m.variant))},
          {"n", m.n},
          {"base_seed", m.base_seed},
          {"aggregates", to_json(m.aggregates)}};
}

inline nlohmann::json to_json(const PairedSummary& s) {
  return {{"pairs", s.pairs},
          {"max_abs_diff", s.max_abs_diff},
          {"mean_diff", s.mean_diff},
          {"rmse_stacked", s.rmse_stacked},
          {"rmse_foldwise", s.rmse_foldwise},
          {"rmse_ratio", s.rmse_ratio},
          {"coverage_stacked", s.coverage_stacked},
          {"coverage_foldwise", s.coverage_foldwise},
          {"coverage_diff", s.coverage_diff}};
}

}  // namespace cvtmle
