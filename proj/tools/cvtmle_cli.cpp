// cvtmle: command-line front end for cross-validated TMLE estimation and
// Monte Carlo simulation.
//
//   cvtmle estimate --data d.csv --treatment A --outcome Y --param ate
//   cvtmle simulate --dgp dgp-a --param ate --n 1000 --reps 500 --seed 7
//
// Exit codes: 0 ok, 2 config/data error, 3 estimation failure,
// 4 more than 5% failed simulation replicates.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvtmle/cvtmle.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitEstimation = 3;
constexpr int kExitSimulation = 4;

struct CliOptions {
  std::string data;
  std::string treatment = "A";
  std::string outcome = "Y";
  std::string param = "ate";
  std::string variant = "stacked";
  int folds = 10;
  std::uint64_t seed = 1;
  bool no_stratify = false;
  std::vector<std::string> q_learners{"glm"};
  std::vector<std::string> g_learners{"glm"};
  std::vector<double> g_bounds{0.025, 0.975};
  int max_iter = cvtmle::kDefaultMaxIter;
  double alpha = 0.05;
  std::string out;
  std::string summary_csv;
  std::string dump_nuisances;
  std::string dump_trace;
  std::string dump_ic;

  std::string dgp;
  std::string dgp_file;
  std::size_t n = 1000;
  std::size_t reps = 100;
  std::string out_csv;
  bool compare_variants = false;
  unsigned jobs = 1;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw cvtmle::Error(cvtmle::ErrorKind::Config, "cannot write '" + path + "'");
  return f;
}

void emit_json(const json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    auto f = open_output(path);
    f << j.dump(2) << '\n';
  }
}

json effective_config(const std::string& command, const CliOptions& o) {
  json j = {{"command", command},
            {"param", o.param},
            {"variant", o.variant},
            {"folds", o.folds},
            {"seed", o.seed},
            {"stratify", !o.no_stratify},
            {"q_learners", o.q_learners},
            {"g_learners", o.g_learners},
            {"g_bounds", o.g_bounds},
            {"max_iter", o.max_iter},
            {"alpha", o.alpha}};
  if (command == "estimate") {
    j["data"] = o.data;
    j["treatment"] = o.treatment;
    j["outcome"] = o.outcome;
  } else {
    j["dgp"] = o.dgp.empty() ? o.dgp_file : o.dgp;
    j["n"] = o.n;
    j["reps"] = o.reps;
    j["compare_variants"] = o.compare_variants;
    j["jobs"] = o.jobs;
  }
  return j;
}

cvtmle::EstimatorConfig estimator_config(const CliOptions& o) {
  using cvtmle::Error;
  using cvtmle::ErrorKind;
  cvtmle::EstimatorConfig cfg;
  if (o.folds < 2) throw Error(ErrorKind::Config, "--folds must be at least 2");
  cfg.K = o.folds;
  cfg.seed = o.seed;
  cfg.stratify = !o.no_stratify;
  cfg.q_candidates.clear();
  cfg.g_candidates.clear();
  for (const auto& s : o.q_learners) cfg.q_candidates.push_back(cvtmle::parse_learner(s));
  for (const auto& s : o.g_learners) cfg.g_candidates.push_back(cvtmle::parse_learner(s));
  if (cfg.q_candidates.empty() || cfg.g_candidates.empty()) throw Error(ErrorKind::Config, "learner lists must not be empty");
  if (o.g_bounds.size() != 2) throw Error(ErrorKind::Config, "--g-bounds takes two values: lo,hi");
  cfg.g_bounds = {o.g_bounds[0], o.g_bounds[1]};
  cvtmle::validate_bounds(cfg.g_bounds);
  if (o.max_iter < 1) throw Error(ErrorKind::Config, "--max-iter must be at least 1");
  cfg.max_iter = o.max_iter;
  if (!(o.alpha > 0.0 && o.alpha < 1.0)) throw Error(ErrorKind::Config, "--alpha must lie in (0, 1)");
  cfg.alpha = o.alpha;
  return cfg;
}

int cmd_estimate(const CliOptions& o) {
  using namespace cvtmle;
  const auto kind = parse_parameter(o.param);
  const auto variant = parse_variant(o.variant);
  const auto cfg = estimator_config(o);
  if (o.data.empty()) throw Error(ErrorKind::Config, "--data is required");
  if (!std::filesystem::exists(o.data)) throw Error(ErrorKind::Data, "data file '" + o.data + "' not found");

  const auto data = load_csv(o.data, o.treatment, o.outcome);
  auto run = estimate(data, kind, variant, cfg);
  run.report.config = effective_config("estimate", o);
  emit_json(to_json(run.report), o.out);

  if (!o.summary_csv.empty()) {
    auto f = open_output(o.summary_csv);
    f << summary_csv_header() << '\n' << summary_csv_row(run.report) << '\n';
  }
  if (!o.dump_nuisances.empty()) {
    auto f = open_output(o.dump_nuisances);
    const auto& nu = run.nuisances;
    f << "row,fold,Q0_A,Q0_1,Q0_0,g1\n";
    for (Eigen::Index i = 0; i < data.n(); ++i)
      f << i + 1 << ',' << nu.plan.assignment[static_cast<std::size_t>(i)] + 1 << ',' << num(nu.Q0_A[i]) << ','
        << num(nu.Q0_1[i]) << ',' << num(nu.Q0_0[i]) << ',' << num(nu.g1[i]) << '\n';
  }
  if (!o.dump_trace.empty()) {
    auto f = open_output(o.dump_trace);
    const auto& t = run.targeting.trace;
    f << "k,eps,ic_mean,sigma_hat,loglik\n";
    for (std::size_t k = 0; k < t.ic_mean.size(); ++k)
      f << k << ',' << num(k == 0 ? 0.0 : t.eps[k - 1]) << ',' << num(t.ic_mean[k]) << ',' << num(t.sigma_hat[k]) << ','
        << num(t.loglik[k]) << '\n';
  }
  if (!o.dump_ic.empty()) {
    auto f = open_output(o.dump_ic);
    const auto& ic = run.targeting.final.ic;
    f << "row,d_Y,d_W,total\n";
    for (Eigen::Index i = 0; i < ic.total.size(); ++i)
      f << i + 1 << ',' << num(ic.d_Y[i]) << ',' << num(ic.d_W[i]) << ',' << num(ic.total[i]) << '\n';
  }
  return kExitOk;
}

int cmd_simulate(const CliOptions& o) {
  using namespace cvtmle;
  const auto kind = parse_parameter(o.param);
  const auto variant = parse_variant(o.variant);
  const auto cfg = estimator_config(o);
  DGPSpec dgp;
  if (!o.dgp_file.empty()) {
    std::ifstream in(o.dgp_file);
    if (!in) throw Error(ErrorKind::Config, "cannot open DGP file '" + o.dgp_file + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Config, std::string("DGP file is not valid JSON: ") + e.what());
    }
    dgp = dgp_from_json(j);
  } else {
    if (o.dgp.empty()) throw Error(ErrorKind::Config, "--dgp or --dgp-file is required");
    dgp = dgp_preset(o.dgp);
  }
  if (o.n < 2) throw Error(ErrorKind::Config, "--n must be at least 2");
  if (o.reps < 1) throw Error(ErrorKind::Config, "--reps must be at least 1");
  if (static_cast<std::size_t>(cfg.K) > o.n) throw Error(ErrorKind::Config, "--folds exceeds --n");
  if (o.compare_variants && o.reps < 2) throw Error(ErrorKind::Config, "--compare-variants needs --reps >= 2");

  const auto config_echo = effective_config("simulate", o);
  if (o.compare_variants) {
    const auto cmp = compare_variants(dgp, kind, o.n, o.reps, o.seed, cfg, o.jobs);
    json j = {{"dgp", dgp.name},
              {"parameter", std::string(to_string(kind))},
              {"n", o.n},
              {"base_seed", o.seed},
              {"summary", to_json(cmp.summary)},
              {"stacked", to_json(cmp.stacked.aggregates)},
              {"foldwise", to_json(cmp.foldwise.aggregates)},
              {"config", config_echo}};
    emit_json(j, o.out);
    if (!o.out_csv.empty()) {
      auto f = open_output(o.out_csv);
      f << "rep,psi_stacked,psi_foldwise,diff,covered_stacked,covered_foldwise,failed\n";
      for (std::size_t r = 0; r < o.reps; ++r) {
        const auto& a = cmp.stacked.replicates[r];
        const auto& b = cmp.foldwise.replicates[r];
        f << r << ',' << num(a.psi) << ',' << num(b.psi) << ',' << num(a.psi - b.psi) << ',' << a.covered << ','
          << b.covered << ',' << (a.failed || b.failed) << '\n';
      }
    }
    const bool ok = cmp.stacked.aggregates.valid && cmp.foldwise.aggregates.valid;
    return ok ? kExitOk : kExitSimulation;
  }

  const auto mc = run_monte_carlo(dgp, kind, variant, o.n, o.reps, o.seed, cfg, o.jobs);
  json j = to_json(mc);
  j["config"] = config_echo;
  emit_json(j, o.out);
  if (!o.out_csv.empty()) {
    auto f = open_output(o.out_csv);
    f << replicate_csv_header() << '\n';
    for (const auto& r : mc.replicates) f << replicate_csv_row(r) << '\n';
  }
  return mc.aggregates.valid ? kExitOk : kExitSimulation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-validated targeted maximum likelihood estimation (ATE, TSM, VTE)", "cvtmle"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_config("--config", "", "Flat key = value file mirroring the long flag names");

  CliOptions o;
  app.add_option("--param", o.param, "Parameter: ate, tsm or vte")->capture_default_str();
  app.add_option("--variant", o.variant, "Targeting variant: stacked or foldwise")->capture_default_str();
  app.add_option("--folds", o.folds, "Number of cross-validation folds K")->capture_default_str();
  app.add_option("--seed", o.seed, "Seed for fold assignment (estimate) or base seed (simulate)")
      ->envname("CVTMLE_SEED")
      ->capture_default_str();
  app.add_flag("--no-stratify", o.no_stratify, "Do not stratify folds by treatment arm");
  app.add_option("--q-learners", o.q_learners, "Outcome-model candidates (mean, glm, glm-poly:<d>, glm-interact)")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--g-learners", o.g_learners, "Propensity-model candidates")->delimiter(',')->capture_default_str();
  app.add_option("--g-bounds", o.g_bounds, "Propensity truncation bounds lo,hi")->delimiter(',')->expected(2)->capture_default_str();
  app.add_option("--max-iter", o.max_iter, "Maximum number of fluctuation steps")->capture_default_str();
  app.add_option("--alpha", o.alpha, "Confidence level is 1 - alpha")->capture_default_str();
  app.add_option("--out", o.out, "Write the JSON report here instead of stdout");

  auto* est = app.add_subcommand("estimate", "Estimate a parameter from a CSV file (requires --data)");
  app.add_subcommand("simulate", "Monte Carlo study on a known data-generating process (requires --dgp or --dgp-file)");

  app.add_option("--data", o.data, "Input CSV with a header row (estimate)");
  app.add_option("--treatment", o.treatment, "Treatment column name")->capture_default_str();
  app.add_option("--outcome", o.outcome, "Outcome column name")->capture_default_str();
  app.add_option("--summary-csv", o.summary_csv, "Write a one-line CSV summary");
  app.add_option("--dump-nuisances", o.dump_nuisances, "Write stacked initial predictions as CSV");
  app.add_option("--dump-trace", o.dump_trace, "Write the targeting trace as CSV");
  app.add_option("--dump-ic", o.dump_ic, "Write influence-curve components as CSV");

  auto* dgp_opt = app.add_option("--dgp", o.dgp, "Simulation preset: dgp-a, dgp-b or dgp-c");
  app.add_option("--dgp-file", o.dgp_file, "JSON DGP specification")->excludes(dgp_opt);
  app.add_option("--n", o.n, "Sample size per replicate")->capture_default_str();
  app.add_option("--reps", o.reps, "Number of replicates")->capture_default_str();
  app.add_option("--out-csv", o.out_csv, "Per-replicate CSV");
  app.add_flag("--compare-variants", o.compare_variants, "Run stacked and foldwise on shared datasets");
  app.add_option("--jobs", o.jobs, "Worker threads for replicates")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "cvtmle: " << e.what() << "\n" << "usage: cvtmle {estimate|simulate} [options]; see --help\n";
    return kExitConfig;
  }

  if (*est && o.data.empty()) {
    std::cerr << "cvtmle: --data is required for estimate\n" << "usage: cvtmle estimate --data FILE [options]; see --help\n";
    return kExitConfig;
  }

  try {
    if (*est) return cmd_estimate(o);
    return cmd_simulate(o);
  } catch (const cvtmle::Error& e) {
    std::cerr << "cvtmle: " << e.what() << '\n';
    return e.kind() == cvtmle::ErrorKind::Estimation ? kExitEstimation : kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "cvtmle: " << e.what() << '\n';
    return kExitEstimation;
  }
}
