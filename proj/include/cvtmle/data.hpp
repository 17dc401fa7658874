#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cvtmle/rng.hpp"
#include "cvtmle/types.hpp"

namespace cvtmle {

struct OutcomeScale {
  double min = 0.0;
  double max = 1.0;
  bool degenerate = false;

  double range() const { return max - min; }
};

/// Observed data O = (W, A, Y). Y is the outcome mapped onto [0, 1];
/// y_raw keeps the original units for reporting.
struct Dataset {
  Matrix W;
  Vector A;
  Vector y_raw;
  Vector Y;
  OutcomeScale scale;
  std::vector<std::string> covariate_names;

  Eigen::Index n() const { return A.size(); }
  Eigen::Index p() const { return W.cols(); }
};

/// Cross-validation split. `assignment[i]` is the 0-based validation fold of row i.
struct FoldPlan {
  int K = 0;
  std::vector<int> assignment;
  std::uint64_t seed = 0;
  bool stratified = false;

  std::size_t n() const { return assignment.size(); }

  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(K), 0);
    for (int f : assignment) ++sizes[static_cast<std::size_t>(f)];
    return sizes;
  }

  std::vector<std::vector<Eigen::Index>> validation_rows() const {
    std::vector<std::vector<Eigen::Index>> rows(static_cast<std::size_t>(K));
    for (std::size_t i = 0; i < assignment.size(); ++i)
      rows[static_cast<std::size_t>(assignment[i])].push_back(static_cast<Eigen::Index>(i));
    return rows;
  }

  std::vector<Eigen::Index> training_rows(int fold) const {
    std::vector<Eigen::Index> rows;
    rows.reserve(assignment.size());
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != fold) rows.push_back(static_cast<Eigen::Index>(i));
    return rows;
  }

  bool equal_fold_sizes() const {
    const auto s = fold_sizes();
    return std::adjacent_find(s.begin(), s.end(), std::not_equal_to<>()) == s.end();
  }
};

/// Min-max scale computed from the sample.
inline OutcomeScale observed_scale(const Vector& y_raw) {
  OutcomeScale s;
  s.min = y_raw.minCoeff();
  s.max = y_raw.maxCoeff();
  s.degenerate = !(s.max > s.min);
  return s;
}

/// Validates the invariants and scales the outcome. When `scale` is absent the
/// observed min/max are used.
inline Dataset make_dataset(Matrix W, Vector A, Vector y_raw, std::optional<OutcomeScale> scale = std::nullopt,
                            std::vector<std::string> covariate_names = {}) {
  const Eigen::Index n = A.size();
  if (n < 2) throw Error(ErrorKind::Data, "need at least 2 observations, got " + std::to_string(n));
  if (y_raw.size() != n || W.rows() != n) throw Error(ErrorKind::Data, "W, A and Y must have the same number of rows");
  bool seen0 = false, seen1 = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (A[i] == 0.0) seen0 = true;
    else if (A[i] == 1.0) seen1 = true;
    else throw Error(ErrorKind::Data, "treatment not binary at row " + std::to_string(i + 1));
    if (!std::isfinite(y_raw[i])) throw Error(ErrorKind::Data, "non-finite outcome at row " + std::to_string(i + 1));
  }
  if (!seen0 || !seen1) throw Error(ErrorKind::Data, "treatment column must contain both 0 and 1");
  if (!W.allFinite()) throw Error(ErrorKind::Data, "non-finite covariate value");

  Dataset d;
  d.scale = scale ? *scale : observed_scale(y_raw);
  if (d.scale.max < d.scale.min) throw Error(ErrorKind::Data, "outcome scale max < min");
  d.scale.degenerate = !(d.scale.max > d.scale.min);
  if (d.scale.degenerate) {
    d.Y = Vector::Constant(n, 0.5);
  } else {
    d.Y = (y_raw.array() - d.scale.min) / d.scale.range();
    if (d.Y.minCoeff() < 0.0 || d.Y.maxCoeff() > 1.0)
      throw Error(ErrorKind::Data, "outcome outside the declared scale");
  }
  d.W = std::move(W);
  d.A = std::move(A);
  d.y_raw = std::move(y_raw);
  if (covariate_names.empty())
    for (Eigen::Index j = 0; j < d.W.cols(); ++j) covariate_names.push_back("W" + std::to_string(j + 1));
  d.covariate_names = std::move(covariate_names);
  return d;
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  s = s.substr(b, e - b);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a header-led CSV. The treatment and outcome columns are picked by
/// name; every other column is a covariate. Row order is preserved.
inline Dataset load_csv(const std::string& path, const std::string& treatment_col, const std::string& outcome_col) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Data, "cannot open data file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Data, "data file '" + path + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);

  std::optional<std::size_t> a_col, y_col;
  std::vector<std::size_t> w_cols;
  std::vector<std::string> w_names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == treatment_col) a_col = j;
    else if (header[j] == outcome_col) y_col = j;
    else {
      w_cols.push_back(j);
      w_names.push_back(header[j]);
    }
  }
  if (!a_col) throw Error(ErrorKind::Data, "missing column '" + treatment_col + "' (treatment)");
  if (!y_col) throw Error(ErrorKind::Data, "missing column '" + outcome_col + "' (outcome)");

  std::vector<double> a, y, w;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw Error(ErrorKind::Data, "row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                                       " fields, found " + std::to_string(cells.size()));
    auto cell = [&](std::size_t j) {
      const auto v = detail::parse_double(cells[j]);
      if (!v || !std::isfinite(*v))
        throw Error(ErrorKind::Data, "row " + std::to_string(row) + ", column '" + header[j] + "': non-numeric value '" +
                                         cells[j] + "'");
      return *v;
    };
    const double av = cell(*a_col);
    if (av != 0.0 && av != 1.0)
      throw Error(ErrorKind::Data, "row " + std::to_string(row) + ", column '" + treatment_col +
                                       "': treatment not binary (value " + cells[*a_col] + ")");
    a.push_back(av);
    y.push_back(cell(*y_col));
    for (std::size_t j : w_cols) w.push_back(cell(j));
  }
  const auto n = static_cast<Eigen::Index>(a.size());
  if (n < 2) throw Error(ErrorKind::Data, "need at least 2 observations, got " + std::to_string(n));
  const auto p = static_cast<Eigen::Index>(w_cols.size());
  Matrix W = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w.data(), n, p);
  return make_dataset(std::move(W), Eigen::Map<Vector>(a.data(), n), Eigen::Map<Vector>(y.data(), n), std::nullopt,
                      std::move(w_names));
}

/// Balanced, seeded partition of 0..n-1 into K validation folds. With
/// stratification each stratum is shuffled and dealt round-robin, continuing
/// the deal across strata so the overall sizes also differ by at most one.
inline FoldPlan make_folds(std::size_t n, int K, std::uint64_t seed,
                           std::optional<std::span<const double>> stratify_by = std::nullopt) {
  if (K < 2) throw Error(ErrorKind::Config, "fold count K must be at least 2, got " + std::to_string(K));
  if (static_cast<std::size_t>(K) > n)
    throw Error(ErrorKind::Config, "fold count K=" + std::to_string(K) + " exceeds n=" + std::to_string(n));
  if (stratify_by && stratify_by->size() != n) throw Error(ErrorKind::Config, "stratification vector length != n");

  std::vector<std::vector<std::size_t>> strata(stratify_by ? 2 : 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t s = 0;
    if (stratify_by) {
      const double v = (*stratify_by)[i];
      if (v != 0.0 && v != 1.0) throw Error(ErrorKind::Config, "stratification vector must be binary");
      s = v == 1.0 ? 1 : 0;
    }
    strata[s].push_back(i);
  }
  for (std::size_t s = 0; s < strata.size(); ++s) {
    // A single-member stratum sits wholly in one validation fold, so that
    // fold's training set would have no member of it.
    if (strata[s].size() == 1)
      throw Error(ErrorKind::Data, "stratum " + std::to_string(s) + " has a single row; its validation fold's training set would lose that arm");
  }

  FoldPlan plan;
  plan.K = K;
  plan.seed = seed;
  plan.stratified = stratify_by.has_value();
  plan.assignment.assign(n, 0);
  CounterRng rng(seed, 0x666f6c6473ULL);
  std::size_t deal = 0;
  for (auto& stratum : strata) {
    for (std::size_t i = stratum.size(); i > 1; --i) std::swap(stratum[i - 1], stratum[rng.below(i)]);
    for (std::size_t idx : stratum) plan.assignment[idx] = static_cast<int>(deal++ % static_cast<std::size_t>(K));
  }
  return plan;
}

inline double unscale_parameter(double psi_scaled, ParameterKind kind, const OutcomeScale& scale) {
  if (scale.degenerate) return kind == ParameterKind::TSM ? scale.min : 0.0;
  const double r = scale.range();
  switch (kind) {
    case ParameterKind::ATE: return psi_scaled * r;
    case ParameterKind::VTE: return psi_scaled * r * r;
    case ParameterKind::TSM: return scale.min + psi_scaled * r;
  }
  return psi_scaled;
}

inline double scale_parameter(double psi, ParameterKind kind, const OutcomeScale& scale) {
  if (scale.degenerate) return kind == ParameterKind::TSM ? 0.5 : 0.0;
  const double r = scale.range();
  switch (kind) {
    case ParameterKind::ATE: return psi / r;
    case ParameterKind::VTE: return psi / (r * r);
    case ParameterKind::TSM: return (psi - scale.min) / r;
  }
  return psi;
}

/// Multiplier taking a scaled-unit standard error to original units.
inline double se_scale_factor(ParameterKind kind, const OutcomeScale& scale) {
  if (scale.degenerate) return 0.0;
  return kind == ParameterKind::VTE ? scale.range() * scale.range() : scale.range();
}

}  // namespace cvtmle
