#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpgen/conformal.hpp"
#include "cpgen/dataset.hpp"
#include "cpgen/families.hpp"
#include "cpgen/rng.hpp"

namespace cpgen {

// Solvers for the constrained ERM
//
//     min_{theta,t} L_eff(C_{theta,t})  s.t.  L_coverage(C_{theta,t}) <= alpha + eps0
//
// via primal-dual SGDA on the hinge-surrogate Lagrangian
//
//     min_{theta,t} max_{lambda>=0} L_eff + lambda [ L_hinge - (alpha + eps0) ]_+ ,
//
// plus a brute-force one-parameter oracle and a finite-class grid solver.

enum class IterateSelection { Last, BestEffOnCal };

struct SolverConfig {
  double alpha = 0.1;
  double eps0 = 0.0;  // constraint relaxation; 0 in practice
  double lr_params = 0.01;
  double lr_lambda = 0.1;
  int epochs = 1000;
  int batch_size = 256;
  std::uint64_t seed = 0;
  double lambda_init = 1.0;
  double lambda_max = 1e6;
  IterateSelection iterate_selection = IterateSelection::Last;
  double q = 0.5;            // LqSize exponent, forwarded to the family
  bool freeze_theta = false; // optimize t only (used by the 1-D oracle comparisons)

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("solver: alpha must lie in (0,1)");
    if (eps0 < 0.0) throw std::invalid_argument("solver: eps0 must be >= 0");
    if (!(lr_params > 0.0) || !(lr_lambda > 0.0)) throw std::invalid_argument("solver: learning rates must be positive");
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("solver: epochs and batch_size must be >= 1");
    if (lambda_init < 0.0) throw std::invalid_argument("solver: lambda_init must be >= 0");
  }
};

// Per-family optimizer defaults: lr_lambda 0.1 (IntervalLinear), 0.01 (Box),
// 1e-4 (LabelEnsemble, which also selects the best-size iterate on cal).
inline SolverConfig default_solver_config(FamilyKind kind, double alpha, std::uint64_t seed) {
  SolverConfig c;
  c.alpha = alpha;
  c.seed = seed;
  switch (kind) {
    case FamilyKind::IntervalLinear:
    case FamilyKind::Hypercube:
      c.lr_lambda = 0.1;
      break;
    case FamilyKind::Box:
      c.lr_lambda = 0.01;
      break;
    case FamilyKind::LabelEnsemble:
      c.lr_lambda = 1e-4;
      c.iterate_selection = IterateSelection::BestEffOnCal;
      break;
  }
  return c;
}

struct SolveEpochRecord {
  double hinge_loss = 0.0;   // empirical hinge loss on cal
  double miscoverage = 0.0;  // empirical 0-1 miscoverage on cal
  double efficiency = 0.0;   // empirical efficiency loss on cal
  double lambda = 0.0;       // dual variable at epoch end
};

struct SolveTrace {
  std::vector<SolveEpochRecord> epochs;
  bool diverged = false;
  std::string note;

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("trace: cannot write " + path.string());
    out << "epoch,hinge_loss,miscoverage,efficiency,lambda\n";
    for (std::size_t e = 0; e < epochs.size(); ++e)
      out << e << "," << format_double(epochs[e].hinge_loss) << "," << format_double(epochs[e].miscoverage) << ","
          << format_double(epochs[e].efficiency) << "," << format_double(epochs[e].lambda) << "\n";
  }
};

struct SolveResult {
  Params params;
  SolveTrace trace;
};

namespace detail {

// Initialization at the family's identity point, with t from an n-rule
// conformalization at theta-init so the start is (near-)feasible.
inline Params initial_params(const NestedFamily& fam, const Dataset& cal, double alpha) {
  Params p;
  p.theta = Eigen::VectorXd::Zero(fam.theta_dim());
  switch (fam.kind) {
    case FamilyKind::IntervalLinear:
      p.theta(NestedFamily::kLoCol) = 1.0;
      p.theta(fam.feature_dim + 1 + NestedFamily::kHiCol) = 1.0;
      break;
    case FamilyKind::Box: {
      for (int i = 0; i < fam.output_dim; ++i) {
        std::vector<double> abs_res;
        abs_res.reserve(static_cast<std::size_t>(cal.n()));
        for (Eigen::Index j = 0; j < cal.n(); ++j)
          abs_res.push_back(std::abs(cal.labels(j, i) - cal.features(j, i)));
        const double u = conformalize(abs_res, alpha, RankRule::NRule).t_hat;
        p.theta(i) = std::log(std::max(u, 1e-9));
      }
      break;
    }
    case FamilyKind::LabelEnsemble:
    case FamilyKind::Hypercube:
      break;  // uniform logits / no theta
  }
  const std::vector<double> scores = conformal_scores(fam, p.theta, cal);
  const double t0 = fam.coverage_increases_with_t() ? conformalize(scores, alpha, RankRule::NRule).t_hat
                                                    : conformalize_upper(scores, alpha, RankRule::NRule).t_hat;
  // the log parametrization needs t > 0; reconformalization restores coverage
  // no matter where t starts
  p.t = std::max(t0, 1e-6);
  return p;
}

inline double mean_reported_size(const NestedFamily& fam, const Params& params, const Dataset& data) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) s += reported_size(fam, params, data.features.row(i).transpose());
  return s / static_cast<double>(data.n());
}

}  // namespace detail

// Stochastic gradient descent-ascent on the surrogate Lagrangian. Simultaneous
// updates; fresh seeded shuffle per epoch; lambda clipped to [0, lambda_max];
// deterministic given (inputs, config, seed). Non-finite iterates abort with
// the last finite iterate and a note in the trace.
inline SolveResult solve_cp_gen(const NestedFamily& fam, const Dataset& cal, const SolverConfig& config,
                                const std::optional<Params>& init = std::nullopt) {
  config.validate();
  validate(cal);
  NestedFamily family = fam;
  family.q = config.q;

  Params p = init ? *init : detail::initial_params(family, cal, config.alpha);
  if (p.theta.size() != family.theta_dim()) throw std::invalid_argument("solve_cp_gen: init theta dimension mismatch");
  if (!(p.t > 0.0)) throw std::invalid_argument("solve_cp_gen: initial t must be positive (log parametrization)");

  const int td = family.theta_dim();
  const auto n = cal.n();
  double tau = std::log(p.t);
  double lambda = config.lambda_init;
  const double level = config.alpha + config.eps0;

  Rng rng(config.seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  SolveResult result;
  result.trace.epochs.reserve(static_cast<std::size_t>(config.epochs));

  Eigen::VectorXd theta_snap = p.theta;
  double tau_snap = tau, lambda_snap = lambda;

  double best_size = std::numeric_limits<double>::infinity();
  Params best_params;

  for (int epoch = 0; epoch < config.epochs && !result.trace.diverged; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double bsz = static_cast<double>(stop - start);
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(td + 1);
      double hinge_sum = 0.0;
      const Params cur{p.theta, std::exp(tau)};
      for (std::size_t b = start; b < stop; ++b) {
        const auto i = static_cast<Eigen::Index>(order[b]);
        const auto x = cal.features.row(i).transpose();
        const auto y = cal.labels.row(i).transpose();
        grad += grad_lagrangian(family, cur, x, y, lambda, level);
        hinge_sum += hinge(margin(family, cur, x, y));
      }
      grad /= bsz;
      const double penalty = std::max(hinge_sum / bsz - level, 0.0);
      if (!config.freeze_theta && td > 0) p.theta -= config.lr_params * grad.head(td);
      tau -= config.lr_params * grad(td);
      lambda = std::clamp(lambda + config.lr_lambda * penalty, 0.0, config.lambda_max);
      if (!p.theta.allFinite() || !std::isfinite(tau) || !std::isfinite(std::exp(tau)) || !std::isfinite(lambda)) {
        p.theta = theta_snap;
        tau = tau_snap;
        lambda = lambda_snap;
        result.trace.diverged = true;
        result.trace.note = "non-finite iterate at epoch " + std::to_string(epoch) + "; kept last finite iterate";
        break;
      }
      theta_snap = p.theta;
      tau_snap = tau;
      lambda_snap = lambda;
    }

    SolveEpochRecord rec;
    rec.lambda = lambda;
    const Params cur{p.theta, std::exp(tau)};
    double covered_count = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto x = cal.features.row(i).transpose();
      const auto y = cal.labels.row(i).transpose();
      const double m = margin(family, cur, x, y);
      rec.hinge_loss += hinge(m);
      if (m >= 0.0) covered_count += 1.0;
      rec.efficiency += efficiency(family, cur, x, y);
    }
    rec.hinge_loss /= static_cast<double>(n);
    rec.efficiency /= static_cast<double>(n);
    rec.miscoverage = 1.0 - covered_count / static_cast<double>(n);
    result.trace.epochs.push_back(rec);

    if (config.iterate_selection == IterateSelection::BestEffOnCal) {
      Params sel{p.theta, reconformalize(family, p.theta, cal, config.alpha)};
      const double size = detail::mean_reported_size(family, sel, cal);
      if (size < best_size) {
        best_size = size;
        best_params = sel;
      }
    }
  }

  if (config.iterate_selection == IterateSelection::BestEffOnCal && best_params.theta.size() == td)
    result.params = best_params;
  else
    result.params = Params{p.theta, std::exp(tau)};
  return result;
}

// CP-Gen on cal for theta, then t reconformalized on the disjoint recal set
// (the returned t from the solve is discarded).
inline PredictionSetModel solve_cp_gen_recal(const NestedFamily& fam, const Dataset& cal, const Dataset& recal,
                                             const SolverConfig& config, SolveTrace* trace_out = nullptr) {
  validate(recal);
  SolveResult solved = solve_cp_gen(fam, cal, config);
  if (trace_out) *trace_out = solved.trace;
  NestedFamily family = fam;
  family.q = config.q;
  PredictionSetModel model;
  model.family = family;
  model.params.theta = solved.params.theta;
  model.params.t = reconformalize(family, solved.params.theta, recal, config.alpha);
  model.method = "cp_gen_recal";
  model.splits_used = {"cal", "recal"};
  model.seed = config.seed;
  model.cal_fingerprint = dataset_fingerprint(cal);
  model.recal_fingerprint = dataset_fingerprint(recal);
  return model;
}

// One-parameter constrained ERM by exhaustive scan: the smallest candidate
// t in {scores} U {0} whose empirical coverage reaches 1 - alpha. No quantile
// shortcut; this is the independent route the conformalization must match.
inline double brute_force_1d(const std::vector<double>& scores, double alpha) {
  if (scores.empty()) throw std::invalid_argument("brute_force_1d: scores must be nonempty");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("brute_force_1d: alpha must lie in (0,1)");
  std::vector<double> candidates = scores;
  candidates.push_back(0.0);
  std::sort(candidates.begin(), candidates.end());
  const double n = static_cast<double>(scores.size());
  for (double t : candidates) {
    double count = 0.0;
    for (double s : scores)
      if (s <= t) count += 1.0;
    if (count / n >= 1.0 - alpha) return t;
  }
  throw std::logic_error("brute_force_1d: no feasible candidate (unreachable for alpha < 1)");
}

struct GridRow {
  int index = 0;
  double t = 0.0;
  double mean_efficiency = 0.0;
};

struct GridResult {
  Params best;
  int best_index = 0;
  std::vector<GridRow> table;
};

// Finite-class solver: conformalize t per grid point (n-rule), pick the theta
// with the smallest empirical efficiency on cal; ties go to the first.
inline GridResult grid_search_finite(const NestedFamily& fam, const std::vector<Eigen::VectorXd>& theta_grid,
                                     const Dataset& cal, double alpha) {
  if (theta_grid.empty()) throw std::invalid_argument("grid_search_finite: grid must be nonempty");
  validate(cal);
  GridResult out;
  double best_eff = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < theta_grid.size(); ++g) {
    const std::vector<double> scores = conformal_scores(fam, theta_grid[g], cal);
    const double t = fam.coverage_increases_with_t()
                         ? conformalize(scores, alpha, RankRule::NRule).t_hat
                         : conformalize_upper(scores, alpha, RankRule::NRule).t_hat;
    const Params p{theta_grid[g], t};
    double eff = 0.0;
    for (Eigen::Index i = 0; i < cal.n(); ++i)
      eff += efficiency(fam, p, cal.features.row(i).transpose(), cal.labels.row(i).transpose());
    eff /= static_cast<double>(cal.n());
    out.table.push_back(GridRow{static_cast<int>(g), t, eff});
    if (eff < best_eff) {
      best_eff = eff;
      out.best = p;
      out.best_index = static_cast<int>(g);
    }
  }
  return out;
}

}  // namespace cpgen
