#include "cpgen/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "cpgen/conformal.hpp"
#include "cpgen/rng.hpp"
#include "oracles.hpp"

namespace {

using cpgen::Dataset;
using cpgen::NestedFamily;
using cpgen::Params;
using cpgen::RankRule;
using cpgen::SolverConfig;

Dataset box_dataset(int n, const Eigen::VectorXd& scales, std::uint64_t seed) {
  Dataset d;
  const int dim = static_cast<int>(scales.size());
  for (int j = 0; j < dim; ++j) d.feature_names.push_back("f_" + std::to_string(j));
  for (int j = 0; j < dim; ++j) d.label_names.push_back("y_" + std::to_string(j));
  d.features = Eigen::MatrixXd::Zero(n, dim);
  d.labels.resize(n, dim);
  cpgen::Rng rng(seed);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) d.labels(i, j) = scales(j) * rng.normal();
  return d;
}

// features are all zero, so interval scores reduce to |y|
Dataset scalar_dataset(const std::vector<double>& labels) {
  Dataset d;
  d.feature_names = {"f_lo", "f_hi"};
  d.label_names = {"y"};
  d.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), 2);
  d.labels.resize(static_cast<Eigen::Index>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) d.labels(static_cast<Eigen::Index>(i), 0) = labels[i];
  return d;
}

TEST(SolverConfig, PerFamilyDefaults) {
  EXPECT_DOUBLE_EQ(cpgen::default_solver_config(cpgen::FamilyKind::IntervalLinear, 0.1, 0).lr_lambda, 0.1);
  EXPECT_DOUBLE_EQ(cpgen::default_solver_config(cpgen::FamilyKind::Box, 0.1, 0).lr_lambda, 0.01);
  const auto label_cfg = cpgen::default_solver_config(cpgen::FamilyKind::LabelEnsemble, 0.1, 0);
  EXPECT_DOUBLE_EQ(label_cfg.lr_lambda, 1e-4);
  EXPECT_EQ(label_cfg.iterate_selection, cpgen::IterateSelection::BestEffOnCal);
  EXPECT_DOUBLE_EQ(label_cfg.lambda_init, 1.0);
}

TEST(SolveCpGen, BoxLearnsAnisotropicScalesFromUniformInit) {
  const Eigen::Vector2d scales(0.5, 5.0);  // coordinate 2 is 10x coordinate 1
  const Dataset cal = box_dataset(1500, scales, 7);
  SolverConfig cfg = cpgen::default_solver_config(cpgen::FamilyKind::Box, 0.1, 7);
  cfg.epochs = 1000;
  cfg.batch_size = 256;

  Params init;
  init.theta = Eigen::Vector2d::Zero();  // uniform box, ratio 1
  init.t = 1.0;
  const auto result = cpgen::solve_cp_gen(NestedFamily::box(2), cal, cfg, init);
  const double ratio = std::exp(result.params.theta(1) - result.params.theta(0));
  EXPECT_GE(ratio, 5.0);
  EXPECT_LE(ratio, 20.0);

  // oracle: ratio of per-coordinate (1-alpha) residual quantiles
  std::vector<double> r0, r1;
  for (int i = 0; i < cal.n(); ++i) {
    r0.push_back(std::abs(cal.labels(i, 0)));
    r1.push_back(std::abs(cal.labels(i, 1)));
  }
  const double oracle_ratio =
      oracle::rank_quantile(r1, 0.1, false) / oracle::rank_quantile(r0, 0.1, false);
  EXPECT_NEAR(oracle_ratio, 10.0, 2.0);
}

TEST(SolveCpGen, LambdaClimbsWhileInfeasible) {
  const Dataset cal = box_dataset(256, Eigen::Vector2d(1.0, 1.0), 3);
  SolverConfig cfg = cpgen::default_solver_config(cpgen::FamilyKind::Box, 0.1, 3);
  cfg.epochs = 1;
  cfg.batch_size = 64;
  Params init;
  init.theta = Eigen::Vector2d::Constant(std::log(1e-3));  // covers almost nothing
  init.t = 1.0;
  const auto result = cpgen::solve_cp_gen(NestedFamily::box(2), cal, cfg, init);
  ASSERT_EQ(result.trace.epochs.size(), 1u);
  EXPECT_GT(result.trace.epochs[0].lambda, cfg.lambda_init);
}

TEST(SolveCpGen, FrozenThetaTracksBruteForceOracle) {
  cpgen::Rng rng(19);
  std::vector<double> labels(500);
  for (auto& y : labels) y = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.0, 100.0);
  const Dataset cal = scalar_dataset(labels);

  SolverConfig cfg = cpgen::default_solver_config(cpgen::FamilyKind::IntervalLinear, 0.02, 19);
  cfg.epochs = 400;
  cfg.batch_size = 100;
  cfg.freeze_theta = true;
  const auto result = cpgen::solve_cp_gen(NestedFamily::interval_linear(2), cal, cfg);

  std::vector<double> scores;
  double lo = 1e300, hi = -1e300;
  for (double y : labels) {
    scores.push_back(std::abs(y));
    lo = std::min(lo, std::abs(y));
    hi = std::max(hi, std::abs(y));
  }
  const double oracle_t = cpgen::brute_force_1d(scores, 0.02);
  EXPECT_LE(std::abs(result.params.t - oracle_t), 0.05 * (hi - lo));
}

TEST(SolveCpGen, NRuleReconformalizedCoverageMeetsRankBound) {
  const Dataset cal = box_dataset(300, Eigen::Vector2d(1.0, 2.0), 23);
  SolverConfig cfg = cpgen::default_solver_config(cpgen::FamilyKind::Box, 0.1, 23);
  cfg.epochs = 60;
  const auto result = cpgen::solve_cp_gen(NestedFamily::box(2), cal, cfg);
  const auto fam = NestedFamily::box(2);
  const double t = cpgen::reconformalize(fam, result.params.theta, cal, cfg.alpha, RankRule::NRule);
  int covered_count = 0;
  for (int i = 0; i < cal.n(); ++i)
    if (cpgen::covered(fam, {result.params.theta, t}, cal.features.row(i).transpose(),
                       cal.labels.row(i).transpose()))
      ++covered_count;
  const int k = cpgen::conformal_rank(static_cast<int>(cal.n()), cfg.alpha, RankRule::NRule);
  EXPECT_GE(covered_count, k);  // exact rank arithmetic: count(score <= kth score) >= k
  // miscoverage <= alpha + 1/n on the conformalizing split
  EXPECT_LE(1.0 - static_cast<double>(covered_count) / static_cast<double>(cal.n()),
            cfg.alpha + 1.0 / static_cast<double>(cal.n()));
}

TEST(SolveCpGen, DeterministicBitwise) {
  const Dataset cal = box_dataset(200, Eigen::Vector2d(1.0, 3.0), 31);
  SolverConfig cfg = cpgen::default_solver_config(cpgen::FamilyKind::Box, 0.1, 31);
  cfg.epochs = 40;
  const auto a = cpgen::solve_cp_gen(NestedFamily::box(2), cal, cfg);
  const auto b = cpgen::solve_cp_gen(NestedFamily::box(2), cal, cfg);
  ASSERT_EQ(a.trace.epochs.size(), b.trace.epochs.size());
  for (std::size_t e = 0; e < a.trace.epochs.size(); ++e) {
    EXPECT_EQ(a.trace.epochs[e].hinge_loss, b.trace.epochs[e].hinge_loss);
    EXPECT_EQ(a.trace.epochs[e].miscoverage, b.trace.epochs[e].miscoverage);
    EXPECT_EQ(a.trace.epochs[e].efficiency, b.trace.epochs[e].efficiency);
    EXPECT_EQ(a.trace.epochs[e].lambda, b.trace.epochs[e].lambda);
  }
  EXPECT_EQ(a.params.t, b.params.t);
  for (Eigen::Index i = 0; i < a.params.theta.size(); ++i) EXPECT_EQ(a.params.theta(i), b.params.theta(i));

  SolverConfig other = cfg;
  other.seed = 32;
  const auto c = cpgen::solve_cp_gen(NestedFamily::box(2), cal, other);
  EXPECT_NE(a.params.theta(0), c.params.theta(0));
}

TEST(SolveCpGen, LambdaStaysNonnegative) {
  const Dataset cal = box_dataset(200, Eigen::Vector2d(1.0, 1.0), 37);
  SolverConfig cfg = cpgen::default_solver_config(cpgen::FamilyKind::Box, 0.2, 37);
  cfg.epochs = 50;
  cfg.lambda_init = 0.0;
  const auto result = cpgen::solve_cp_gen(NestedFamily::box(2), cal, cfg);
  for (const auto& rec : result.trace.epochs) EXPECT_GE(rec.lambda, 0.0);
}

TEST(SolveCpGen, DivergenceKeepsLastFiniteIterate) {
  const Dataset cal = box_dataset(100, Eigen::Vector2d(1.0, 1.0), 41);
  SolverConfig cfg = cpgen::default_solver_config(cpgen::FamilyKind::Box, 0.1, 41);
  cfg.epochs = 200;
  cfg.lr_params = 1e12;  // force blow-up
  cfg.lambda_init = 1e6;
  Params bad_init;
  bad_init.theta = Eigen::Vector2d::Constant(std::log(1e-3));  // heavily infeasible
  bad_init.t = 1.0;
  const auto result = cpgen::solve_cp_gen(NestedFamily::box(2), cal, cfg, bad_init);
  EXPECT_TRUE(result.trace.diverged);
  EXPECT_FALSE(result.trace.note.empty());
  EXPECT_TRUE(result.params.theta.allFinite());
  EXPECT_TRUE(std::isfinite(result.params.t));
}

TEST(SolveCpGenRecal, SingleRecalPointSetsItsScore) {
  const Dataset cal = box_dataset(200, Eigen::Vector2d(1.0, 2.0), 43);
  const Dataset recal = box_dataset(1, Eigen::Vector2d(1.0, 2.0), 44);
  SolverConfig cfg = cpgen::default_solver_config(cpgen::FamilyKind::Box, 0.5, 43);
  cfg.epochs = 30;
  const auto model = cpgen::solve_cp_gen_recal(NestedFamily::box(2), cal, recal, cfg);
  const double expected = cpgen::conformal_score(model.family, model.params.theta,
                                                 recal.features.row(0).transpose(), recal.labels.row(0).transpose());
  EXPECT_DOUBLE_EQ(model.params.t, expected);
  EXPECT_EQ(model.splits_used, (std::vector<std::string>{"cal", "recal"}));
  EXPECT_FALSE(model.cal_fingerprint.empty());
  EXPECT_FALSE(model.recal_fingerprint.empty());
}

TEST(SolveCpGenRecal, IdenticalCalRecalMatchesDirectConformalization) {
  const Dataset cal = box_dataset(150, Eigen::Vector2d(0.5, 1.5), 47);
  SolverConfig cfg = cpgen::default_solver_config(cpgen::FamilyKind::Box, 0.1, 47);
  cfg.epochs = 25;
  const auto model = cpgen::solve_cp_gen_recal(NestedFamily::box(2), cal, cal, cfg);
  const std::vector<double> scores = cpgen::conformal_scores(model.family, model.params.theta, cal);
  EXPECT_DOUBLE_EQ(model.params.t, cpgen::conformalize(scores, cfg.alpha, RankRule::NPlusOneRule).t_hat);
}

TEST(SolveCpGenRecal, CoverageAcrossResamples) {
  // recal exchangeable with test: mean coverage across seeds clears 1 - alpha
  const double alpha = 0.2;
  double mean_cov = 0.0;
  const int seeds = 30;
  for (int s = 0; s < seeds; ++s) {
    const Dataset cal = box_dataset(150, Eigen::Vector2d(1.0, 4.0), 1000 + static_cast<std::uint64_t>(3 * s));
    const Dataset recal = box_dataset(150, Eigen::Vector2d(1.0, 4.0), 1001 + static_cast<std::uint64_t>(3 * s));
    const Dataset test = box_dataset(400, Eigen::Vector2d(1.0, 4.0), 1002 + static_cast<std::uint64_t>(3 * s));
    SolverConfig cfg = cpgen::default_solver_config(cpgen::FamilyKind::Box, alpha, static_cast<std::uint64_t>(s));
    cfg.epochs = 30;
    const auto model = cpgen::solve_cp_gen_recal(NestedFamily::box(2), cal, recal, cfg);
    double hit = 0;
    for (int i = 0; i < test.n(); ++i)
      if (cpgen::covered(model.family, model.params, test.features.row(i).transpose(),
                         test.labels.row(i).transpose()))
        hit += 1;
    mean_cov += hit / static_cast<double>(test.n());
  }
  mean_cov /= seeds;
  const double mc_err = std::sqrt(alpha * (1 - alpha) / (seeds * 400.0));
  EXPECT_GE(mean_cov, 1.0 - alpha - 2.0 * mc_err);
}

TEST(BruteForce1d, RankExample) {
  std::vector<double> scores;
  for (int i = 1; i <= 10; ++i) scores.push_back(static_cast<double>(i));
  EXPECT_DOUBLE_EQ(cpgen::brute_force_1d(scores, 0.1), 9.0);
}

TEST(BruteForce1d, AllEqualScores) {
  EXPECT_DOUBLE_EQ(cpgen::brute_force_1d({3.5, 3.5, 3.5, 3.5}, 0.25), 3.5);
}

TEST(GridSearch, SizeOneGridIsVanillaConformalization) {
  const Dataset cal = box_dataset(100, Eigen::Vector2d(1.0, 2.0), 53);
  const auto fam = NestedFamily::box(2);
  const Eigen::VectorXd theta = Eigen::Vector2d(0.1, 0.9);
  const auto result = cpgen::grid_search_finite(fam, {theta}, cal, 0.1);
  const std::vector<double> scores = cpgen::conformal_scores(fam, theta, cal);
  EXPECT_DOUBLE_EQ(result.best.t, cpgen::conformalize(scores, 0.1, RankRule::NRule).t_hat);
  EXPECT_EQ(result.best_index, 0);
}

TEST(GridSearch, ScaledBoxThetaTiesGoFirst) {
  const Dataset cal = box_dataset(120, Eigen::Vector2d(1.0, 3.0), 59);
  const auto fam = NestedFamily::box(2);
  const Eigen::VectorXd u = Eigen::Vector2d(0.2, 0.7);
  const Eigen::VectorXd u2 = u.array() + std::log(2.0);  // doubled half-widths
  const auto result = cpgen::grid_search_finite(fam, {u, u2}, cal, 0.1);
  ASSERT_EQ(result.table.size(), 2u);
  // rescaling theta is absorbed by t: identical boxes, equal volumes, tie -> first
  EXPECT_DOUBLE_EQ(result.table[0].mean_efficiency, result.table[1].mean_efficiency);
  EXPECT_EQ(result.best_index, 0);
}

TEST(GridSearch, PlantedNarrowThetaWins) {
  // features (m, s); candidate B adapts the interval to the scale column and
  // is strictly shorter at equal empirical coverage
  auto make_theta = [](double lo_m, double lo_s, double hi_m, double hi_s) {
    Eigen::VectorXd th(6);
    th << lo_m, lo_s, 0.0, hi_m, hi_s, 0.0;
    return th;
  };
  const Eigen::VectorXd flat = make_theta(1.0, 0.0, 1.0, 0.0);      // lo = hi = m
  const Eigen::VectorXd adaptive = make_theta(1.0, -1.0, 1.0, 1.0); // m -/+ s
  const Eigen::VectorXd inverted = make_theta(1.0, 1.0, 1.0, -1.0); // degenerate for large s

  int adaptive_wins = 0;
  for (int rep = 0; rep < 100; ++rep) {
    cpgen::Rng rng(2000 + static_cast<std::uint64_t>(rep));
    Dataset cal;
    cal.feature_names = {"m", "s"};
    cal.label_names = {"y"};
    cal.features.resize(300, 2);
    cal.labels.resize(300, 1);
    for (int i = 0; i < 300; ++i) {
      const double m = rng.normal();
      const double s = rng.uniform() < 0.5 ? 0.5 : 1.5;
      cal.features(i, 0) = m;
      cal.features(i, 1) = s;
      cal.labels(i, 0) = m + 0.5 * s * rng.normal();
    }
    const auto result =
        cpgen::grid_search_finite(NestedFamily::interval_linear(2), {flat, adaptive, inverted}, cal, 0.1);
    if (result.best_index == 1) ++adaptive_wins;
  }
  EXPECT_GE(adaptive_wins, 95);
}

TEST(GridSearch, OutputIsExhaustiveMinimum) {
  const Dataset cal = box_dataset(100, Eigen::Vector2d(1.0, 2.0), 61);
  std::vector<Eigen::VectorXd> grid;
  cpgen::Rng rng(62);
  for (int g = 0; g < 12; ++g) {
    Eigen::VectorXd th(2);
    th << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    grid.push_back(th);
  }
  const auto result = cpgen::grid_search_finite(NestedFamily::box(2), grid, cal, 0.1);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& row : result.table) best = std::min(best, row.mean_efficiency);
  EXPECT_DOUBLE_EQ(result.table[static_cast<std::size_t>(result.best_index)].mean_efficiency, best);
}

TEST(SolveTrace, CsvExport) {
  const Dataset cal = box_dataset(64, Eigen::Vector2d(1.0, 1.0), 67);
  SolverConfig cfg = cpgen::default_solver_config(cpgen::FamilyKind::Box, 0.1, 67);
  cfg.epochs = 5;
  const auto result = cpgen::solve_cp_gen(NestedFamily::box(2), cal, cfg);
  const auto path = std::filesystem::path(::testing::TempDir()) / "trace.csv";
  result.trace.write_csv(path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,hinge_loss,miscoverage,efficiency,lambda");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 5);
}

}  // namespace
