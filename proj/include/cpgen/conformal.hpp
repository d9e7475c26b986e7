#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpgen/dataset.hpp"
#include "cpgen/families.hpp"

namespace cpgen {

// Split-conformal quantile selection and the non-ERM baselines built on it.
//
// Two rank conventions are explicit: the n-rule picks the ceil((1-alpha)n)-th
// smallest calibration score and is used only where the constrained-ERM
// equivalence is exercised; the n+1-rule picks the ceil((1-alpha)(n+1))-th
// smallest and backs every coverage guarantee. Ties are resolved by multiset
// order (duplicates counted).

enum class RankRule { NRule, NPlusOneRule };

struct ConformalResult {
  double t_hat = 0.0;
  int rank_used = 0;
  int n = 0;
  double alpha = 0.0;
  RankRule convention = RankRule::NPlusOneRule;
};

inline int conformal_rank(int n, double alpha, RankRule rule) {
  if (n < 1) throw std::invalid_argument("conformalize: scores must be nonempty");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("conformalize: alpha must lie in (0,1)");
  const int m = (rule == RankRule::NPlusOneRule) ? n + 1 : n;
  int k = static_cast<int>(std::ceil((1.0 - alpha) * static_cast<double>(m)));
  k = std::max(k, 1);
  if (k > n)
    throw std::runtime_error("conformalize: alpha too small for n (rank " + std::to_string(k) + " > n = " +
                             std::to_string(n) + ")");
  return k;
}

inline ConformalResult conformalize(std::vector<double> scores, double alpha, RankRule rule) {
  const int n = static_cast<int>(scores.size());
  const int k = conformal_rank(n, alpha, rule);
  std::nth_element(scores.begin(), scores.begin() + (k - 1), scores.end());
  return ConformalResult{scores[static_cast<std::size_t>(k - 1)], k, n, alpha, rule};
}

// k-th largest instead of k-th smallest; used by families whose sets grow as
// t decreases (LabelEnsemble).
inline ConformalResult conformalize_upper(std::vector<double> scores, double alpha, RankRule rule) {
  for (double& s : scores) s = -s;
  ConformalResult r = conformalize(std::move(scores), alpha, rule);
  r.t_hat = -r.t_hat;
  return r;
}

inline std::vector<double> conformal_scores(const NestedFamily& fam, const Eigen::VectorXd& theta,
                                            const Dataset& data) {
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(data.n()));
  for (Eigen::Index i = 0; i < data.n(); ++i)
    scores.push_back(conformal_score(fam, theta, data.features.row(i).transpose(), data.labels.row(i).transpose()));
  return scores;
}

// Reconformalize t with theta frozen: the n+1-rule quantile of the conformal
// scores on the recalibration set, oriented by the family's nesting direction.
inline double reconformalize(const NestedFamily& fam, const Eigen::VectorXd& theta, const Dataset& recal,
                             double alpha, RankRule rule = RankRule::NPlusOneRule) {
  const std::vector<double> scores = conformal_scores(fam, theta, recal);
  return fam.coverage_increases_with_t() ? conformalize(scores, alpha, rule).t_hat
                                         : conformalize_upper(scores, alpha, rule).t_hat;
}

// ---------------------------------------------------------------------------
// Baselines.

// Conformalized Quantile Regression: symmetric width adjustment of a frozen
// two-sided quantile predictor [f_lo - t, f_hi + t].
inline PredictionSetModel cqr_fit(const Eigen::MatrixXd& quantile_preds, const Eigen::VectorXd& labels,
                                  double alpha) {
  if (quantile_preds.cols() != 2) throw std::invalid_argument("cqr_fit: quantile_preds must have two columns");
  if (quantile_preds.rows() != labels.size())
    throw std::invalid_argument("cqr_fit: predictions and labels disagree on row count");
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(labels.size()));
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    scores.push_back(std::max(quantile_preds(i, 0) - labels(i), labels(i) - quantile_preds(i, 1)));
  const double t_hat = conformalize(scores, alpha, RankRule::NPlusOneRule).t_hat;

  PredictionSetModel model;
  model.family = NestedFamily::interval_linear(2);
  model.params.theta = Eigen::VectorXd::Zero(model.family.theta_dim());
  model.params.theta(NestedFamily::kLoCol) = 1.0;                       // th_lo = e_lo
  model.params.theta(2 + 1 + NestedFamily::kHiCol) = 1.0;               // th_hi = e_hi
  model.params.t = t_hat;
  model.method = "cqr";
  return model;
}

// Per-coordinate conformalization at level 1 - alpha/d_out (union bound).
inline Eigen::VectorXd coordwise_box(const Eigen::MatrixXd& residuals, double alpha) {
  const int d = static_cast<int>(residuals.cols());
  const int n = static_cast<int>(residuals.rows());
  if (n < 1 || d < 1) throw std::invalid_argument("coordwise_box: residual matrix must be nonempty");
  const double a = alpha / d;
  // smallest n with ceil((1 - a)(n + 1)) <= n, for the error message
  auto feasible = [&](int m) {
    return static_cast<int>(std::ceil((1.0 - a) * static_cast<double>(m + 1))) <= m;
  };
  if (!feasible(n)) {
    int n_min = std::max(1, static_cast<int>(std::ceil(1.0 / a - 1.0 - 1e-12)));
    while (!feasible(n_min)) ++n_min;
    throw std::runtime_error("coordwise_box: rank overflow at level 1 - alpha/d_out = " + std::to_string(1.0 - a) +
                             " with n = " + std::to_string(n) + "; needs n >= " + std::to_string(n_min));
  }
  Eigen::VectorXd u(d);
  for (int i = 0; i < d; ++i) {
    std::vector<double> abs_res;
    abs_res.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) abs_res.push_back(std::abs(residuals(j, i)));
    u(i) = conformalize(abs_res, a, RankRule::NPlusOneRule).t_hat;
  }
  return u;
}

struct CoordwiseRecalResult {
  Eigen::VectorXd u;  // shape from the calibration set
  double t = 0.0;     // proportional rescale from the recalibration set
};

// Shape from coordinate-wise conformalization on cal, then one proportional
// rescale t conformalized on recal: final box prod_i [f_i - t u_i, f_i + t u_i].
inline CoordwiseRecalResult coordwise_recal_box(const Eigen::MatrixXd& cal_residuals,
                                                const Eigen::MatrixXd& recal_residuals, double alpha) {
  if (recal_residuals.rows() < 1) throw std::invalid_argument("coordwise_recal_box: empty recalibration set");
  if (cal_residuals.cols() != recal_residuals.cols())
    throw std::invalid_argument("coordwise_recal_box: residual dimensions disagree");
  CoordwiseRecalResult out;
  out.u = coordwise_box(cal_residuals, alpha);
  std::vector<double> ratios;
  ratios.reserve(static_cast<std::size_t>(recal_residuals.rows()));
  for (Eigen::Index j = 0; j < recal_residuals.rows(); ++j) {
    double r = 0.0;
    for (Eigen::Index i = 0; i < recal_residuals.cols(); ++i)
      r = std::max(r, std::abs(recal_residuals(j, i)) / out.u(i));
    ratios.push_back(r);
  }
  out.t = conformalize(ratios, alpha, RankRule::NPlusOneRule).t_hat;
  return out;
}

// Vanilla conformalization of the max-norm score; hypercube of side 2t.
inline double maxscore_box(const Eigen::MatrixXd& residuals, double alpha) {
  if (residuals.rows() < 1) throw std::invalid_argument("maxscore_box: residual matrix must be nonempty");
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(residuals.rows()));
  for (Eigen::Index j = 0; j < residuals.rows(); ++j) scores.push_back(residuals.row(j).cwiseAbs().maxCoeff());
  return conformalize(scores, alpha, RankRule::NPlusOneRule).t_hat;
}

}  // namespace cpgen
