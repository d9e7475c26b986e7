// scratch probe (not part of the build normally)
#include <cstdio>
#include <vector>
#include "cpgen/solver.hpp"
#include "cpgen/rng.hpp"

using namespace cpgen;

Dataset scalar_dataset(const std::vector<double>& labels) {
  Dataset d;
  d.feature_names = {"f_lo", "f_hi"};
  d.label_names = {"y"};
  d.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), 2);
  d.labels.resize(static_cast<Eigen::Index>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) d.labels(static_cast<Eigen::Index>(i), 0) = labels[i];
  return d;
}

int main(int argc, char** argv) {
  const double lr = argc > 1 ? atof(argv[1]) : 1e-3;
  const double lrl = argc > 2 ? atof(argv[2]) : 0.1;
  const int epochs = argc > 3 ? atoi(argv[3]) : 500;
  const double alpha = argc > 4 ? atof(argv[4]) : 0.02;

  for (std::uint64_t seed : {19ull, 20ull, 21ull, 22ull, 23ull}) {
    Rng rng(seed);
    std::vector<double> labels(500);
    for (auto& y : labels) {
      const double sgn = rng.uniform() < 0.5 ? -1.0 : 1.0;
      if (rng.uniform() < 0.98)
        y = sgn * rng.uniform(0.0, 96.9);   // bulk
      else
        y = sgn * rng.uniform(98.0, 98.5);  // top cluster
    }
    const Dataset cal = scalar_dataset(labels);
    SolverConfig cfg = default_solver_config(FamilyKind::IntervalLinear, alpha, seed);
    cfg.epochs = epochs;
    cfg.batch_size = 100;
    cfg.freeze_theta = true;
    cfg.lr_params = lr;
    cfg.lr_lambda = lrl;
    const auto result = solve_cp_gen(NestedFamily::interval_linear(2), cal, cfg);
    std::vector<double> scores;
    double lo = 1e300, hi = -1e300;
    for (double y : labels) {
      scores.push_back(std::abs(y));
      lo = std::min(lo, std::abs(y));
      hi = std::max(hi, std::abs(y));
    }
    const double oracle = brute_force_1d(scores, alpha);
    std::printf("seed %llu: t_sgda=%.3f oracle=%.3f gap=%.3f tol=%.3f lambda_end=%.1f diverged=%d\n",
                (unsigned long long)seed, result.params.t, oracle, std::abs(result.params.t - oracle),
                0.05 * (hi - lo), result.trace.epochs.back().lambda, (int)result.trace.diverged);
  }
  return 0;
}
