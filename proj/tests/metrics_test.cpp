#include "cpgen/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "cpgen/rng.hpp"
#include "oracles.hpp"

namespace {

using cpgen::Dataset;
using cpgen::NestedFamily;
using cpgen::Params;

Params interval_params(const Eigen::VectorXd& th_lo, double b_lo, const Eigen::VectorXd& th_hi, double b_hi,
                       double t) {
  Params p;
  const auto d = th_lo.size();
  p.theta.resize(2 * d + 2);
  p.theta.segment(0, d) = th_lo;
  p.theta(d) = b_lo;
  p.theta.segment(d + 1, d) = th_hi;
  p.theta(2 * d + 1) = b_hi;
  p.t = t;
  return p;
}

Dataset interval_dataset(const std::vector<std::pair<double, double>>& rows_x, const std::vector<double>& ys) {
  Dataset d;
  d.feature_names = {"a", "b"};
  d.label_names = {"y"};
  d.features.resize(static_cast<Eigen::Index>(rows_x.size()), 2);
  d.labels.resize(static_cast<Eigen::Index>(ys.size()), 1);
  for (std::size_t i = 0; i < rows_x.size(); ++i) {
    d.features(static_cast<Eigen::Index>(i), 0) = rows_x[i].first;
    d.features(static_cast<Eigen::Index>(i), 1) = rows_x[i].second;
    d.labels(static_cast<Eigen::Index>(i), 0) = ys[i];
  }
  return d;
}

TEST(Coverage, FullCoverageIsOne) {
  const auto fam = NestedFamily::hypercube(1);
  Dataset d;
  d.feature_names = {"f"};
  d.label_names = {"y"};
  d.features = Eigen::MatrixXd::Zero(5, 1);
  d.labels = Eigen::MatrixXd::Constant(5, 1, 0.1);
  EXPECT_DOUBLE_EQ(cpgen::coverage(fam, {Eigen::VectorXd::Zero(0), 1.0}, d), 1.0);
}

TEST(Coverage, PointIntervalCoversHalf) {
  const auto fam = NestedFamily::interval_linear(2);
  const Params p = interval_params(Eigen::Vector2d::Zero(), 0.0, Eigen::Vector2d::Zero(), 0.0, 0.0);
  const Dataset d = interval_dataset({{0, 0}, {0, 0}}, {0.0, 1.0});  // [0,0] covers y=0, misses y=1
  EXPECT_DOUBLE_EQ(cpgen::coverage(fam, p, d), 0.5);
}

TEST(Coverage, MatchesIndependentRowLoopAndComplementsExactly) {
  cpgen::Rng rng(5);
  std::vector<std::pair<double, double>> xs;
  std::vector<double> ys;
  for (int i = 0; i < 37; ++i) {
    xs.push_back({rng.normal(), rng.normal()});
    ys.push_back(rng.normal());
  }
  const Dataset d = interval_dataset(xs, ys);
  const auto fam = NestedFamily::interval_linear(2);
  const Params p = interval_params(Eigen::Vector2d(0.3, -0.2), -0.8, Eigen::Vector2d(0.1, 0.4), 0.6, 0.2);

  double miss = 0.0;
  for (int i = 0; i < d.n(); ++i)
    if (cpgen::margin(fam, p, d.features.row(i).transpose(), d.labels.row(i).transpose()) < 0.0) miss += 1.0;
  const double cov = cpgen::coverage(fam, p, d);
  EXPECT_DOUBLE_EQ(cov, 1.0 - miss / static_cast<double>(d.n()));
  EXPECT_EQ(cov + cpgen::miscoverage(fam, p, d), 1.0);  // exact complement
}

TEST(EfficiencyStats, BoxVolumeIsExampleIndependent) {
  const auto fam = NestedFamily::box(2);
  Params p;
  p.theta.resize(2);
  p.theta << std::log(1.0), std::log(2.0);
  p.t = 1.0;
  Dataset d;
  d.feature_names = {"f0", "f1"};
  d.label_names = {"y0", "y1"};
  d.features = Eigen::MatrixXd::Random(9, 2);
  d.labels = Eigen::MatrixXd::Random(9, 2);
  const auto [mean, sd] = cpgen::efficiency_stats(fam, p, d);
  EXPECT_DOUBLE_EQ(mean, 8.0);
  EXPECT_DOUBLE_EQ(sd, 0.0);
}

TEST(EfficiencyStats, MeanOfVaryingLengths) {
  const auto fam = NestedFamily::interval_linear(2);
  // lo = 0, hi = second feature, t = 0: lengths are the feature values
  const Params p = interval_params(Eigen::Vector2d::Zero(), 0.0, Eigen::Vector2d(0.0, 1.0), 0.0, 0.0);
  const Dataset d = interval_dataset({{0, 1}, {0, 3}}, {0.5, 0.5});
  const auto [mean, sd] = cpgen::efficiency_stats(fam, p, d);
  EXPECT_DOUBLE_EQ(mean, 2.0);
  EXPECT_DOUBLE_EQ(sd, 1.0);
}

TEST(EfficiencyStats, LabelCardinalityMatchesCountOracle) {
  const auto fam = NestedFamily::label_ensemble(2, 4);
  Params p;
  p.theta = Eigen::Vector2d(0.7, -0.3);
  p.t = 0.2;
  Dataset d;
  for (int k = 0; k < 2; ++k)
    for (int l = 0; l < 4; ++l) d.feature_names.push_back("p" + std::to_string(k) + "_c" + std::to_string(l));
  d.label_names = {"y"};
  cpgen::Rng rng(6);
  d.features.resize(25, 8);
  d.labels.resize(25, 1);
  for (int i = 0; i < 25; ++i) {
    for (int k = 0; k < 2; ++k) {
      double total = 0;
      for (int l = 0; l < 4; ++l) {
        d.features(i, 4 * k + l) = rng.gamma(0.6);
        total += d.features(i, 4 * k + l);
      }
      for (int l = 0; l < 4; ++l) d.features(i, 4 * k + l) /= total;
    }
    d.labels(i, 0) = static_cast<double>(rng.integer(4));
  }
  const auto [mean, sd] = cpgen::efficiency_stats(fam, p, d);
  // count-based oracle: mixture weights by direct softmax, count p >= t per row
  const double w0 = std::exp(0.7) / (std::exp(0.7) + std::exp(-0.3));
  double total_count = 0.0;
  for (int i = 0; i < 25; ++i) {
    int count = 0;
    for (int l = 0; l < 4; ++l) {
      const double prob = w0 * d.features(i, l) + (1.0 - w0) * d.features(i, 4 + l);
      if (prob >= p.t) ++count;
    }
    total_count += count;
  }
  EXPECT_NEAR(mean, total_count / 25.0, 1e-12);
  EXPECT_GE(sd, 0.0);
}

TEST(Pinball, ExactPredictionsGiveZero) {
  Eigen::VectorXd y(3);
  y << -1.0, 0.0, 2.5;
  EXPECT_DOUBLE_EQ(cpgen::pinball_loss(y, y, y, 0.2), 0.0);
}

TEST(Pinball, SingleRowBranches) {
  Eigen::VectorXd lo(1), hi(1), y(1);
  lo << -1.0;
  hi << 1.0;
  y << 0.0;
  // lo - y = -1 -> -0.1 * (-1) = 0.1 ; hi - y = 1 -> (1 - 0.9) * 1 = 0.1
  EXPECT_NEAR(cpgen::pinball_loss(lo, hi, y, 0.2), 0.2, 1e-15);
}

TEST(Pinball, SwappedSignBranch) {
  Eigen::VectorXd lo(1), hi(1), y(1);
  lo << 1.0;
  hi << 1.0;
  y << 0.0;
  // lo - y = 1 -> (1 - 0.1) * 1 = 0.9 ; hi - y = 1 -> 0.1
  EXPECT_NEAR(cpgen::pinball_loss(lo, hi, y, 0.2), 1.0, 1e-15);
}

TEST(Pinball, MisalignedArraysThrow) {
  Eigen::VectorXd a(2), b(3);
  a << 0, 0;
  b << 0, 0, 0;
  EXPECT_THROW(cpgen::pinball_loss(a, a, b, 0.2), std::invalid_argument);
}

TEST(Corr, ConstantLengthIsDegenerate) {
  const auto fam = NestedFamily::hypercube(1);
  Dataset d;
  d.feature_names = {"f"};
  d.label_names = {"y"};
  d.features = Eigen::MatrixXd::Zero(10, 1);
  d.labels = Eigen::MatrixXd::Random(10, 1);
  const auto r = cpgen::size_coverage_corr(fam, {Eigen::VectorXd::Zero(0), 0.5}, d);
  EXPECT_TRUE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.value, 0.0);
}

TEST(Corr, PlantedTwoClustersBothSignsGiveOne) {
  const auto fam = NestedFamily::interval_linear(2);
  // length = second feature + 2t; longer rows covered, shorter rows missed
  const Params p = interval_params(Eigen::Vector2d::Zero(), 0.0, Eigen::Vector2d(0.0, 1.0), 0.0, 0.0);
  std::vector<std::pair<double, double>> xs;
  std::vector<double> ys_pos, ys_neg;
  for (int i = 0; i < 20; ++i) {
    const bool wide = i % 2 == 0;
    xs.push_back({0.0, wide ? 3.0 : 1.0});
    ys_pos.push_back(wide ? 1.5 : 5.0);  // wide intervals cover, narrow miss
    ys_neg.push_back(wide ? 5.0 : 0.5);  // narrow intervals cover, wide miss
  }
  const auto r_pos = cpgen::size_coverage_corr(fam, p, interval_dataset(xs, ys_pos));
  const auto r_neg = cpgen::size_coverage_corr(fam, p, interval_dataset(xs, ys_neg));
  EXPECT_NEAR(r_pos.value, 1.0, 1e-12);
  EXPECT_NEAR(r_neg.value, 1.0, 1e-12);  // |corr| invariant to relabeling V -> 1 - V
  EXPECT_FALSE(r_pos.degenerate);
}

TEST(Corr, RequiresThreeRows) {
  const auto fam = NestedFamily::hypercube(1);
  Dataset d;
  d.feature_names = {"f"};
  d.label_names = {"y"};
  d.features = Eigen::MatrixXd::Zero(2, 1);
  d.labels = Eigen::MatrixXd::Zero(2, 1);
  EXPECT_THROW(cpgen::size_coverage_corr(fam, {Eigen::VectorXd::Zero(0), 0.5}, d), std::invalid_argument);
}

Dataset dependence_dataset(int n, bool dependent, std::uint64_t seed) {
  // interval length tracks the width feature; when dependent, coverage does too
  Dataset d;
  d.feature_names = {"a", "w"};
  d.label_names = {"y"};
  d.features.resize(n, 2);
  d.labels.resize(n, 1);
  cpgen::Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const double w = rng.uniform(0.5, 3.0);
    d.features(i, 0) = 0.0;
    d.features(i, 1) = w;
    if (dependent)
      d.labels(i, 0) = (w > 1.75) ? 0.1 : 10.0;  // wide intervals always cover, narrow never
    else
      d.labels(i, 0) = (rng.uniform() < 0.7) ? 0.1 : 10.0;  // coverage independent of width
  }
  return d;
}

TEST(Hsic, DependentPairDominatesIndependentPair) {
  const auto fam = NestedFamily::interval_linear(2);
  const Params p = interval_params(Eigen::Vector2d::Zero(), 0.0, Eigen::Vector2d(0.0, 1.0), 0.0, 0.0);
  const double h_dep = cpgen::hsic(fam, p, dependence_dataset(2000, true, 11)).value;
  const double h_ind = cpgen::hsic(fam, p, dependence_dataset(2000, false, 12)).value;
  EXPECT_GE(h_dep, 10.0 * h_ind);
}

TEST(Hsic, ConstantLengthVanishes) {
  const auto fam = NestedFamily::hypercube(1);
  Dataset d;
  d.feature_names = {"f"};
  d.label_names = {"y"};
  d.features = Eigen::MatrixXd::Zero(50, 1);
  d.labels = Eigen::MatrixXd::Random(50, 1);
  const auto r = cpgen::hsic(fam, {Eigen::VectorXd::Zero(0), 0.5}, d);
  EXPECT_NEAR(r.value, 0.0, 1e-12);
}

TEST(Hsic, PermutingLabelsShrinksDependence) {
  const auto fam = NestedFamily::interval_linear(2);
  const Params p = interval_params(Eigen::Vector2d::Zero(), 0.0, Eigen::Vector2d(0.0, 1.0), 0.0, 0.0);
  Dataset d = dependence_dataset(200, true, 13);
  const double h0 = cpgen::hsic(fam, p, d).value;
  cpgen::Rng rng(14);
  double shuffled_mean = 0.0;
  const int shuffles = 100;
  std::vector<std::size_t> perm(200);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (int s = 0; s < shuffles; ++s) {
    rng.shuffle(perm);
    Dataset shuffled = d;
    for (int i = 0; i < 200; ++i) shuffled.labels.row(i) = d.labels.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
    shuffled_mean += cpgen::hsic(fam, p, shuffled).value;
  }
  shuffled_mean /= shuffles;
  EXPECT_LT(shuffled_mean, 0.25 * h0);
}

TEST(Hsic, FixedBandwidthOverride) {
  const auto fam = NestedFamily::interval_linear(2);
  const Params p = interval_params(Eigen::Vector2d::Zero(), 0.0, Eigen::Vector2d(0.0, 1.0), 0.0, 0.0);
  const Dataset d = dependence_dataset(100, true, 15);
  const auto r = cpgen::hsic(fam, p, d, std::make_pair(2.0, 0.5));
  EXPECT_DOUBLE_EQ(r.bandwidth_size, 2.0);
  EXPECT_DOUBLE_EQ(r.bandwidth_cov, 0.5);
  EXPECT_GE(r.value, -1e-12);
}

TEST(Report, JsonIsByteDeterministicAndRoundTrips) {
  cpgen::Report r;
  r.method = "cp_gen_recal";
  r.seed = 3;
  r.alpha = 0.1;
  r.n_test = 100;
  r.coverage = 0.91;
  r.mean_efficiency = 1.25;
  r.std_efficiency = 0.5;
  r.efficiency_kind = "length";
  r.pinball = 0.0625;
  r.corr_lv = 0.03;
  r.hsic_lv = 1e-5;
  r.splits_used = {"cal", "recal"};
  r.config_fingerprint = "abc123";
  r.model = {{"kind", "interval_linear"}};
  const std::string a = cpgen::report_to_json(r).dump(2);
  const std::string b = cpgen::report_to_json(r).dump(2);
  EXPECT_EQ(a, b);
  const cpgen::Report back = cpgen::report_from_json(nlohmann::json::parse(a));
  EXPECT_EQ(back.method, r.method);
  EXPECT_EQ(back.coverage, r.coverage);
  ASSERT_TRUE(back.pinball.has_value());
  EXPECT_EQ(*back.pinball, *r.pinball);
  EXPECT_FALSE(back.surrogate_efficiency.has_value());
}

}  // namespace
