#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "cvtmle/data.hpp"
#include "oracles.hpp"

namespace cvtmle {
namespace {

class CsvFile {
 public:
  explicit CsvFile(const std::string& contents) {
    path_ = std::filesystem::temp_directory_path() /
            ("cvtmle_data_test_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + ".csv");
    std::ofstream(path_) << contents;
  }
  ~CsvFile() { std::filesystem::remove(path_); }
  std::string path() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

std::string error_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

TEST(LoadCsv, BoundedOutcomeIsIdentityScaled) {
  CsvFile f("W1,A,Y\n0.5,0,0\n1.5,1,1\n2.5,0,1\n3.5,1,0\n");
  const auto d = load_csv(f.path(), "A", "Y");
  EXPECT_EQ(d.n(), 4);
  EXPECT_EQ(d.p(), 1);
  EXPECT_EQ(d.scale.min, 0.0);
  EXPECT_EQ(d.scale.max, 1.0);
  EXPECT_FALSE(d.scale.degenerate);
  EXPECT_EQ(d.Y, d.y_raw);
  EXPECT_DOUBLE_EQ(d.W(2, 0), 2.5);
  EXPECT_EQ(d.covariate_names, std::vector<std::string>{"W1"});
}

TEST(LoadCsv, MinMaxScaling) {
  CsvFile f("Y,A\n10,0\n20,1\n30,0\n");
  const auto d = load_csv(f.path(), "A", "Y");
  EXPECT_EQ(d.scale.min, 10.0);
  EXPECT_EQ(d.scale.max, 30.0);
  EXPECT_DOUBLE_EQ(d.Y[0], 0.0);
  EXPECT_DOUBLE_EQ(d.Y[1], 0.5);
  EXPECT_DOUBLE_EQ(d.Y[2], 1.0);
  EXPECT_EQ(d.p(), 0);
}

TEST(LoadCsv, NonBinaryTreatmentNamesRow) {
  CsvFile f("A,Y,W\n0,1,0.2\n1,0,0.3\n2,1,0.4\n");
  const auto msg = error_message([&] { load_csv(f.path(), "A", "Y"); });
  EXPECT_NE(msg.find("treatment not binary"), std::string::npos) << msg;
  EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
}

TEST(LoadCsv, MissingColumn) {
  CsvFile f("A,Y\n0,1\n1,0\n");
  const auto msg = error_message([&] { load_csv(f.path(), "T", "Y"); });
  EXPECT_NE(msg.find("missing column 'T'"), std::string::npos) << msg;
}

TEST(LoadCsv, NonNumericCellNamesRowAndColumn) {
  CsvFile f("A,Y,age\n0,1,30\n1,0,abc\n");
  const auto msg = error_message([&] { load_csv(f.path(), "A", "Y"); });
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'age'"), std::string::npos) << msg;
}

TEST(LoadCsv, TooFewRows) {
  CsvFile f("A,Y\n1,0\n");
  const auto msg = error_message([&] { load_csv(f.path(), "A", "Y"); });
  EXPECT_NE(msg.find("at least 2"), std::string::npos) << msg;
}

TEST(LoadCsv, SingleArmRejected) {
  CsvFile f("A,Y\n1,0\n1,1\n");
  EXPECT_THROW(load_csv(f.path(), "A", "Y"), Error);
}

TEST(LoadCsv, DegenerateOutcome) {
  CsvFile f("A,Y\n0,3\n1,3\n0,3\n");
  const auto d = load_csv(f.path(), "A", "Y");
  EXPECT_TRUE(d.scale.degenerate);
  EXPECT_TRUE((d.Y.array() == 0.5).all());
}

TEST(LoadCsv, CrlfAndQuotedHeader) {
  CsvFile f("\"A\",\"Y\",\"W\"\r\n0,1,2\r\n1,0,3\r\n");
  const auto d = load_csv(f.path(), "A", "Y");
  EXPECT_EQ(d.n(), 2);
  EXPECT_DOUBLE_EQ(d.W(1, 0), 3.0);
}

TEST(MakeFolds, LeaveOneOutSizes) {
  const auto plan = make_folds(10, 10, 3);
  for (auto s : plan.fold_sizes()) EXPECT_EQ(s, 1u);
}

TEST(MakeFolds, UnevenSizes) {
  const auto plan = make_folds(25, 10, 3);
  auto sizes = plan.fold_sizes();
  EXPECT_EQ(std::count(sizes.begin(), sizes.end(), 3u), 5);
  EXPECT_EQ(std::count(sizes.begin(), sizes.end(), 2u), 5);
}

TEST(MakeFolds, Deterministic) {
  EXPECT_EQ(make_folds(100, 7, 11).assignment, make_folds(100, 7, 11).assignment);
  EXPECT_NE(make_folds(100, 7, 11).assignment, make_folds(100, 7, 12).assignment);
}

TEST(MakeFolds, InvalidK) {
  EXPECT_THROW(make_folds(5, 6, 1), Error);
  EXPECT_THROW(make_folds(5, 1, 1), Error);
}

TEST(MakeFolds, SingletonStratumRejected) {
  std::vector<double> a(10, 0.0);
  a[4] = 1.0;
  EXPECT_THROW(make_folds(10, 5, 1, std::span<const double>(a)), Error);
}

// Partition and balance, overall and within strata, over a sweep of shapes.
TEST(MakeFolds, PartitionProperty) {
  for (std::size_t n : {7u, 20u, 33u, 101u}) {
    for (int K : {2, 3, 5, 7}) {
      for (std::uint64_t seed : {1u, 2u, 99u}) {
        std::vector<double> strata(n);
        for (std::size_t i = 0; i < n; ++i) strata[i] = (i * 7 + seed) % 3 == 0 ? 1.0 : 0.0;
        for (bool stratify : {false, true}) {
          const auto plan = stratify ? make_folds(n, K, seed, std::span<const double>(strata)) : make_folds(n, K, seed);
          ASSERT_EQ(plan.n(), n);
          const auto sizes = plan.fold_sizes();
          EXPECT_EQ(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}), n);
          EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1u);
          for (auto s : sizes) EXPECT_GT(s, 0u);
          std::set<Eigen::Index> seen;
          for (const auto& rows : plan.validation_rows()) seen.insert(rows.begin(), rows.end());
          EXPECT_EQ(seen.size(), n);
          if (stratify) {
            for (double level : {0.0, 1.0}) {
              std::vector<int> per_fold(static_cast<std::size_t>(K), 0);
              for (std::size_t i = 0; i < n; ++i)
                if (strata[i] == level) ++per_fold[static_cast<std::size_t>(plan.assignment[i])];
              EXPECT_LE(*std::max_element(per_fold.begin(), per_fold.end()) - *std::min_element(per_fold.begin(), per_fold.end()), 1);
            }
          }
        }
      }
    }
  }
}

TEST(UnscaleParameter, Examples) {
  EXPECT_DOUBLE_EQ(unscale_parameter(0.5, ParameterKind::ATE, {0.0, 1.0, false}), 0.5);
  EXPECT_DOUBLE_EQ(unscale_parameter(0.25, ParameterKind::TSM, {2.0, 6.0, false}), 3.0);
  EXPECT_NEAR(unscale_parameter(0.1, ParameterKind::VTE, {0.0, 10.0, false}), 10.0, 1e-12);
}

// Variance of a 3-point sample on [0,1] vs. the same sample mapped to [0,10].
TEST(UnscaleParameter, VteMatchesDirectVarianceOfRescaledSample) {
  const std::vector<double> scaled{0.0, 0.3, 1.0};
  std::vector<double> raw;
  for (double v : scaled) raw.push_back(v * 10.0);
  const double v_scaled = oracle::population_variance(scaled);
  const double v_raw = oracle::population_variance(raw);
  EXPECT_NEAR(unscale_parameter(v_scaled, ParameterKind::VTE, {0.0, 10.0, false}), v_raw, 1e-12);
}

TEST(UnscaleParameter, Degenerate) {
  const OutcomeScale s{4.0, 4.0, true};
  EXPECT_EQ(unscale_parameter(0.3, ParameterKind::ATE, s), 0.0);
  EXPECT_EQ(unscale_parameter(0.3, ParameterKind::VTE, s), 0.0);
  EXPECT_EQ(unscale_parameter(0.3, ParameterKind::TSM, s), 4.0);
}

TEST(UnscaleParameter, RoundTrip) {
  CounterRng rng(17, 0);
  for (int t = 0; t < 500; ++t) {
    const double lo = -50.0 + 100.0 * rng.uniform();
    const OutcomeScale s{lo, lo + 0.01 + 40.0 * rng.uniform(), false};
    const double psi = -3.0 + 6.0 * rng.uniform();
    for (auto k : {ParameterKind::ATE, ParameterKind::TSM, ParameterKind::VTE}) {
      EXPECT_NEAR(unscale_parameter(scale_parameter(psi, k, s), k, s), psi, 1e-12 * std::max(1.0, std::abs(psi) + std::abs(lo)));
      EXPECT_NEAR(scale_parameter(unscale_parameter(psi, k, s), k, s), psi, 1e-12);
    }
  }
}

}  // namespace
}  // namespace cvtmle
