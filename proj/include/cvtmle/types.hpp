#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace cvtmle {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ParameterKind { ATE, TSM, VTE };

// stacked: one targeting pass over the concatenated validation predictions,
// empirical means taken over the whole sample.
// foldwise: empirical means inside the clever covariate and the plug-in are
// taken per validation fold, then averaged.
enum class Variant { Stacked, Foldwise };

/// Error categories map onto CLI exit codes (config/data -> 2, estimation -> 3).
enum class ErrorKind { Config, Data, Estimation };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ParameterKind k) {
  switch (k) {
    case ParameterKind::ATE: return "ate";
    case ParameterKind::TSM: return "tsm";
    case ParameterKind::VTE: return "vte";
  }
  return "?";
}

inline std::string_view to_string(Variant v) {
  return v == Variant::Stacked ? "stacked" : "foldwise";
}

inline ParameterKind parse_parameter(std::string_view s) {
  if (s == "ate" || s == "ATE") return ParameterKind::ATE;
  if (s == "tsm" || s == "TSM") return ParameterKind::TSM;
  if (s == "vte" || s == "VTE") return ParameterKind::VTE;
  throw Error(ErrorKind::Config, "unknown parameter '" + std::string(s) + "' (expected ate, tsm or vte)");
}

inline Variant parse_variant(std::string_view s) {
  if (s == "stacked") return Variant::Stacked;
  if (s == "foldwise") return Variant::Foldwise;
  throw Error(ErrorKind::Config, "unknown variant '" + std::string(s) + "' (expected stacked or foldwise)");
}

namespace detail {

inline double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double clamp_prob(double p, double eps = 1e-6) {
  return std::min(std::max(p, eps), 1.0 - eps);
}

}  // namespace detail
}  // namespace cvtmle
