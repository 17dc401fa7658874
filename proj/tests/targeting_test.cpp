#include <gtest/gtest.h>

#include "cvtmle/estimator.hpp"
#include "cvtmle/simulator.hpp"
#include "oracles.hpp"

namespace cvtmle {
namespace {

struct FluctuationInstance {
  Vector Y, offset, h;
};

FluctuationInstance random_instance(std::uint64_t seed, Eigen::Index n = 200) {
  CounterRng rng(seed, 0);
  FluctuationInstance f{Vector(n), Vector(n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q = 0.1 + 0.8 * rng.uniform();
    f.offset[i] = std::log(q / (1 - q));
    f.h[i] = (rng.bernoulli(0.5) ? 1.0 : -1.0) / (0.2 + 0.6 * rng.uniform());
    // outcome drawn away from the offset so the fluctuation is non-trivial
    f.Y[i] = rng.bernoulli(oracle::expit(f.offset[i] + 0.15 * f.h[i])) ? 1.0 : 0.0;
  }
  return f;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

TEST(FitEpsilon, MatchesGridSearch) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto f = random_instance(100 + s);
    const auto y = to_std(f.Y), off = to_std(f.offset), h = to_std(f.h);
    const double grid = oracle::grid_argmax([&](double e) { return oracle::fluct_loglik(y, off, h, e); }, -5, 5, 1e-3, 1e-6);
    EXPECT_NEAR(fit_epsilon(f.Y, f.offset, f.h), grid, 1e-5);
  }
}

TEST(FitEpsilon, ZeroCovariate) {
  const auto f = random_instance(3, 50);
  EXPECT_EQ(fit_epsilon(f.Y, f.offset, Vector::Zero(50)), 0.0);
}

// Choose Y so that the score at zero vanishes exactly: Y = expit(offset).
TEST(FitEpsilon, ScoreAlreadyZero) {
  const auto f = random_instance(4, 50);
  const Vector Y = f.offset.unaryExpr([](double o) { return detail::expit(o); });
  EXPECT_NEAR(fit_epsilon(Y, f.offset, f.h), 0.0, 1e-12);
}

TEST(FitEpsilon, NonFiniteOffsetRejected) {
  const auto f = random_instance(5, 10);
  Vector off = f.offset;
  off[3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(fit_epsilon(f.Y, off, f.h), Error);
}

TEST(FitEpsilon, ScoreIdentityAfterFit) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto f = random_instance(200 + s);
    const double eps = fit_epsilon(f.Y, f.offset, f.h);
    double score = 0.0;
    for (Eigen::Index i = 0; i < f.Y.size(); ++i) score += f.h[i] * (f.Y[i] - detail::expit(f.offset[i] + eps * f.h[i]));
    EXPECT_LE(std::abs(score / static_cast<double>(f.Y.size())), 1e-8);
  }
}

TargetingState toy_state() {
  TargetingState s;
  s.Q_A = Vector::LinSpaced(5, 0.2, 0.8);
  s.Q_1 = Vector::LinSpaced(5, 0.3, 0.7);
  s.Q_0 = Vector::LinSpaced(5, 0.1, 0.5);
  s.g1 = Vector::Constant(5, 0.5);
  return s;
}

TEST(ApplyFluctuation, ZeroIsIdentity) {
  const auto s = toy_state();
  CleverCovariates cc{Vector::Ones(5), Vector::Ones(5), -Vector::Ones(5)};
  const auto t = apply_fluctuation(s, 0.0, cc);
  EXPECT_EQ(t.Q_A, s.Q_A);
  EXPECT_EQ(t.Q_1, s.Q_1);
  EXPECT_EQ(t.Q_0, s.Q_0);
}

TEST(ApplyFluctuation, ZeroCovariateRowsUnchanged) {
  const auto s = toy_state();
  CleverCovariates cc{Vector::Ones(5), Vector::Zero(5), Vector::Ones(5)};
  const auto t = apply_fluctuation(s, 0.3, cc);
  EXPECT_EQ(t.Q_1, s.Q_1);
  EXPECT_NE(t.Q_0, s.Q_0);
}

TEST(ApplyFluctuation, InverseRestores) {
  const auto s = toy_state();
  CleverCovariates cc{Vector::LinSpaced(5, -2, 2), Vector::LinSpaced(5, 1, 3), Vector::LinSpaced(5, -3, -1)};
  const auto back = apply_fluctuation(apply_fluctuation(s, 0.7, cc), -0.7, cc);
  EXPECT_LT((back.Q_A - s.Q_A).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((back.Q_1 - s.Q_1).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((back.Q_0 - s.Q_0).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ApplyFluctuation, StaysInsideClamp) {
  const auto s = toy_state();
  CleverCovariates cc{Vector::Constant(5, 50), Vector::Constant(5, 50), Vector::Constant(5, -50)};
  const auto t = apply_fluctuation(s, 10.0, cc);
  EXPECT_TRUE((t.Q_A.array() <= 1 - 1e-6).all() && (t.Q_0.array() >= 1e-6).all());
}

// Stopping rule truth table.
TEST(StoppingCheck, Table) {
  EXPECT_TRUE(stopping_check(Vector::Zero(10), 3.0, 10));
  EXPECT_TRUE(stopping_check(Vector::Constant(50, 0.01), 1.0, 50));
  EXPECT_FALSE(stopping_check(Vector::Constant(50, 0.05), 1.0, 50));
  EXPECT_TRUE(stopping_check(Vector::Zero(4), 0.0, 4));
  EXPECT_FALSE(stopping_check(Vector::Constant(4, 1e-300), 0.0, 4));
}

TEST(RunTargeting, AlreadyAtTolerance) {
  // Outcome equal to the initial predictions: residual term identically zero.
  const auto data0 = replicate_dataset(dgp_preset("dgp-a"), 200, 1, 0);
  EstimatorConfig cfg;
  auto nu = fit_nuisances(data0, cfg);
  auto data = data0;
  data.Y = nu.Q0_A;
  const auto r = run_targeting(nu, data, ParameterKind::ATE, Variant::Stacked, 100);
  EXPECT_EQ(r.trace.k, 0);
  EXPECT_TRUE(r.trace.eps.empty());
  EXPECT_TRUE(r.trace.converged);
  EXPECT_EQ(r.trace.reason, StopReason::ToleranceMet);
}

TEST(RunTargeting, AteTraceIdenticalAcrossVariants) {
  const auto data = replicate_dataset(dgp_preset("dgp-c"), 400, 6, 0);
  EstimatorConfig cfg;
  cfg.q_candidates = {parse_learner("mean")};  // poor initial fit forces fluctuation steps
  const auto nu = fit_nuisances(data, cfg);
  const auto s = run_targeting(nu, data, ParameterKind::ATE, Variant::Stacked);
  const auto f = run_targeting(nu, data, ParameterKind::ATE, Variant::Foldwise);
  ASSERT_GT(s.trace.eps.size(), 0u);
  ASSERT_EQ(s.trace.eps.size(), f.trace.eps.size());
  for (std::size_t j = 0; j < s.trace.eps.size(); ++j) EXPECT_NEAR(s.trace.eps[j], f.trace.eps[j], 1e-12);
  EXPECT_NEAR(s.final.psi, f.final.psi, 1e-12);
}

TEST(RunTargeting, MaxIterFlagged) {
  const auto data = replicate_dataset(dgp_preset("dgp-b"), 300, 2, 0);
  EstimatorConfig cfg;
  cfg.q_candidates = {parse_learner("mean")};
  const auto nu = fit_nuisances(data, cfg);
  const auto r = run_targeting(nu, data, ParameterKind::VTE, Variant::Stacked, 1);
  if (r.trace.reason == StopReason::MaxIter) {
    EXPECT_FALSE(r.trace.converged);
    EXPECT_EQ(r.trace.k, 1);
    EXPECT_EQ(r.trace.eps.size(), 1u);
  }
  EXPECT_THROW(run_targeting(nu, data, ParameterKind::VTE, Variant::Stacked, 0), Error);
}

// Loop invariants across parameters, variants and learner sets.
TEST(RunTargeting, Invariants) {
  for (const char* dgp : {"dgp-a", "dgp-b", "dgp-c"}) {
    for (std::size_t rep = 0; rep < 4; ++rep) {
      const auto data = replicate_dataset(dgp_preset(dgp), 300, 50, rep);
      for (const char* q : {"mean", "glm"}) {
        EstimatorConfig cfg;
        cfg.q_candidates = {parse_learner(q)};
        const auto nu = fit_nuisances(data, cfg);
        for (auto kind : {ParameterKind::ATE, ParameterKind::TSM, ParameterKind::VTE}) {
          for (auto v : {Variant::Stacked, Variant::Foldwise}) {
            const auto r = run_targeting(nu, data, kind, v);
            const auto& t = r.trace;
            ASSERT_EQ(t.ic_mean.size(), static_cast<std::size_t>(t.k) + 1);
            ASSERT_EQ(t.eps.size(), static_cast<std::size_t>(t.k));
            for (std::size_t j = 1; j < t.loglik.size(); ++j) EXPECT_GE(t.loglik[j], t.loglik[j - 1] - 1e-9);
            if (t.reason == StopReason::ToleranceMet)
              EXPECT_LE(std::abs(r.final.ic.d_Y.mean()), r.final.sigma_hat / static_cast<double>(data.n()));
            EXPECT_TRUE(t.converged);
            EXPECT_TRUE((r.state.Q_1.array() > 0).all() && (r.state.Q_1.array() < 1).all());
            if (kind == ParameterKind::VTE) EXPECT_GE(r.final.psi, 0.0);
          }
        }
      }
    }
  }
}

TEST(RunTargeting, ConvergesQuicklyOnDgpA) {
  EstimatorConfig cfg;
  int ok = 0;
  for (std::size_t rep = 0; rep < 100; ++rep) {
    const auto data = replicate_dataset(dgp_preset("dgp-a"), 1000, 808, rep);
    const auto run = estimate(data, ParameterKind::ATE, Variant::Stacked, replicate_config(cfg, 808, rep));
    ok += run.report.converged && run.report.k_iterations <= 20;
  }
  EXPECT_GE(ok, 99);
}

}  // namespace
}  // namespace cvtmle
