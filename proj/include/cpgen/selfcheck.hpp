#pragma once

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "cpgen/conformal.hpp"
#include "cpgen/families.hpp"
#include "cpgen/rng.hpp"
#include "cpgen/solver.hpp"

namespace cpgen {

// Runtime invariant/oracle suites behind the CLI `check` subcommand: nested-set
// and score-consistency properties, the constrained-ERM equivalence of the
// quantile rule, efficiency monotonicity, and finite-difference gradient
// checks. Self-contained oracles; nothing here reuses the code paths under test
// beyond the public API.

namespace selfcheck {

struct Suite {
  int failures = 0;
  void report(const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << "\n";
    if (!ok) ++failures;
  }
};

struct RandomInstance {
  NestedFamily family;
  Params params;
  Eigen::VectorXd x, y;
};

inline RandomInstance random_instance(Rng& rng) {
  RandomInstance inst;
  switch (rng.integer(4)) {
    case 0: {
      const int d = 2 + static_cast<int>(rng.integer(4));
      inst.family = NestedFamily::interval_linear(d);
      inst.params.theta = Eigen::VectorXd::Zero(inst.family.theta_dim());
      for (int i = 0; i < inst.params.theta.size(); ++i) inst.params.theta(i) = rng.normal();
      inst.params.t = rng.uniform(-1.0, 3.0);
      inst.x = Eigen::VectorXd::Zero(d);
      for (int i = 0; i < d; ++i) inst.x(i) = rng.normal();
      inst.y = Eigen::VectorXd::Constant(1, rng.normal() * 2.0);
      break;
    }
    case 1: {
      const int d = 1 + static_cast<int>(rng.integer(5));
      inst.family = NestedFamily::box(d);
      inst.params.theta = Eigen::VectorXd::Zero(d);
      for (int i = 0; i < d; ++i) inst.params.theta(i) = rng.uniform(-1.0, 1.0);
      inst.params.t = rng.uniform(0.05, 3.0);
      inst.x = Eigen::VectorXd::Zero(d);
      inst.y = Eigen::VectorXd::Zero(d);
      for (int i = 0; i < d; ++i) {
        inst.x(i) = rng.normal();
        inst.y(i) = inst.x(i) + rng.normal();
      }
      break;
    }
    case 2: {
      const int K = 2 + static_cast<int>(rng.integer(3));
      const int L = 3 + static_cast<int>(rng.integer(5));
      inst.family = NestedFamily::label_ensemble(K, L);
      inst.params.theta = Eigen::VectorXd::Zero(K);
      for (int k = 0; k < K; ++k) inst.params.theta(k) = rng.normal();
      inst.params.t = rng.uniform(0.02, 0.9);
      inst.x = Eigen::VectorXd::Zero(K * L);
      for (int k = 0; k < K; ++k) {
        double total = 0.0;
        for (int l = 0; l < L; ++l) {
          inst.x(k * L + l) = rng.gamma(0.8);
          total += inst.x(k * L + l);
        }
        for (int l = 0; l < L; ++l) inst.x(k * L + l) /= total;
      }
      inst.y = Eigen::VectorXd::Constant(1, static_cast<double>(rng.integer(static_cast<std::uint64_t>(L))));
      break;
    }
    default: {
      const int d = 1 + static_cast<int>(rng.integer(5));
      inst.family = NestedFamily::hypercube(d);
      inst.params.theta = Eigen::VectorXd::Zero(0);
      inst.params.t = rng.uniform(0.05, 3.0);
      inst.x = Eigen::VectorXd::Zero(d);
      inst.y = Eigen::VectorXd::Zero(d);
      for (int i = 0; i < d; ++i) {
        inst.x(i) = rng.normal();
        inst.y(i) = inst.x(i) + rng.normal();
      }
      break;
    }
  }
  return inst;
}

// member(theta, t) => member(theta, t') for t' further along the family's
// nesting direction.
inline bool check_nestedness(int cases, std::uint64_t seed) {
  Rng rng(seed);
  for (int c = 0; c < cases; ++c) {
    RandomInstance inst = random_instance(rng);
    const double a = rng.uniform(0.01, 3.0);
    const double b = a + rng.uniform(0.01, 2.0);
    const bool up = inst.family.coverage_increases_with_t();
    Params inner = inst.params, outer = inst.params;
    inner.t = up ? a : b;  // smaller set
    outer.t = up ? b : a;  // larger set
    if (covered(inst.family, inner, inst.x, inst.y) && !covered(inst.family, outer, inst.x, inst.y)) return false;
  }
  return true;
}

// member(theta, t) <=> t is on the covering side of the conformal score;
// tested off the boundary.
inline bool check_score_consistency(int cases, std::uint64_t seed) {
  Rng rng(seed);
  for (int c = 0; c < cases; ++c) {
    RandomInstance inst = random_instance(rng);
    const double score = conformal_score(inst.family, inst.params.theta, inst.x, inst.y);
    const double m = margin(inst.family, {inst.params.theta, score}, inst.x, inst.y);
    if (std::abs(m) > 1e-12) return false;
    double t = inst.params.t;
    if (std::abs(t - score) <= 1e-9) t = score + 0.37;  // move off the boundary
    const bool is_member = covered(inst.family, {inst.params.theta, t}, inst.x, inst.y);
    const bool should = inst.family.coverage_increases_with_t() ? (t >= score) : (t <= score);
    if (is_member != should) return false;
  }
  return true;
}

inline bool check_monotone_efficiency(int cases, std::uint64_t seed) {
  Rng rng(seed);
  for (int c = 0; c < cases; ++c) {
    RandomInstance inst = random_instance(rng);
    double prev = -1.0;
    for (int g = 0; g <= 10; ++g) {
      const double t_nest = 0.05 + 0.3 * g;
      Params p = inst.params;
      p.t = inst.family.coverage_increases_with_t() ? t_nest : 1.0 / t_nest;  // grow the set
      const double e = efficiency(inst.family, p, inst.x, inst.y);
      if (e < prev - 1e-12) return false;
      prev = e;
    }
  }
  return true;
}

// Central finite differences against grad_lagrangian on smooth-region
// instances; relative error <= tol on each instance.
inline bool check_gradients(int per_family, double tol, std::uint64_t seed, double step = 1e-5) {
  Rng rng(seed);
  for (int kind = 0; kind < 4; ++kind) {
    int done = 0, attempts = 0;
    while (done < per_family && attempts < per_family * 200) {
      ++attempts;
      Rng probe(seed + static_cast<std::uint64_t>(kind * 100000 + attempts));
      RandomInstance inst;
      do {
        inst = random_instance(probe);
      } while (static_cast<int>(inst.family.kind) != kind);
      const double lambda = probe.uniform(0.1, 3.0);

      // gradients live in (theta, log t); keep away from the hinge/max kinks
      if (inst.params.t <= 0.05) continue;
      const double m = margin(inst.family, inst.params, inst.x, inst.y);
      if (std::abs(m - 1.0) < 0.05) continue;
      if (inst.family.kind == FamilyKind::IntervalLinear) {
        const double len = efficiency(inst.family, inst.params, inst.x, inst.y);
        if (len < 0.05) continue;
        const detail::IntervalView v(inst.params.theta, inst.family.feature_dim);
        const double a = v.th_lo.dot(inst.x) + v.b_lo - inst.y(0);
        const double b = inst.y(0) - v.th_hi.dot(inst.x) - v.b_hi;
        if (std::abs(a - b) < 0.05) continue;  // max kink
      }
      if (inst.family.kind == FamilyKind::Box) {
        Eigen::VectorXd r = ((inst.y - inst.x).cwiseAbs().array() * (-inst.params.theta.array()).exp()).matrix();
        double top = -1, second = -1;
        for (int i = 0; i < r.size(); ++i) {
          if (r(i) > top) {
            second = top;
            top = r(i);
          } else if (r(i) > second) {
            second = r(i);
          }
        }
        if (r.size() > 1 && top - second < 0.05) continue;
      }
      if (inst.family.kind == FamilyKind::LabelEnsemble) {
        const Eigen::VectorXd w = detail::softmax(inst.params.theta);
        const Eigen::VectorXd p = detail::mixture_probs(inst.family, w, inst.x);
        bool near_kink = false;
        for (int l = 0; l < inst.family.num_classes; ++l)
          if (std::abs(p(l) - inst.params.t) < 0.02) near_kink = true;
        if (near_kink) continue;
      }

      const Eigen::VectorXd g = grad_lagrangian(inst.family, inst.params, inst.x, inst.y, lambda, 0.1);
      const int dim = static_cast<int>(g.size());
      Eigen::VectorXd fd(dim);
      const double tau = std::log(inst.params.t);
      auto value_at = [&](const Eigen::VectorXd& theta, double tau_v) {
        const Params p{theta, std::exp(tau_v)};
        return efficiency(inst.family, p, inst.x, inst.y) + lambda * hinge(margin(inst.family, p, inst.x, inst.y));
      };
      for (int i = 0; i < dim - 1; ++i) {
        Eigen::VectorXd tp = inst.params.theta, tm = inst.params.theta;
        tp(i) += step;
        tm(i) -= step;
        fd(i) = (value_at(tp, tau) - value_at(tm, tau)) / (2.0 * step);
      }
      fd(dim - 1) = (value_at(inst.params.theta, tau + step) - value_at(inst.params.theta, tau - step)) / (2.0 * step);
      const double rel = (g - fd).norm() / std::max(fd.norm(), 1e-8);
      if (rel > tol) return false;
      ++done;
    }
    if (done < per_family) return false;  // could not find enough smooth instances
  }
  return true;
}

// conformalize under the n-rule must equal the brute-force constrained ERM.
inline bool check_erm_equivalence(int cases, std::uint64_t seed) {
  Rng rng(seed);
  for (int c = 0; c < cases; ++c) {
    const int n = 5 + static_cast<int>(rng.integer(196));
    const double alpha = rng.uniform(0.05, 0.5);
    std::vector<double> scores(static_cast<std::size_t>(n));
    const bool with_ties = rng.uniform() < 0.5;
    for (auto& s : scores) {
      s = rng.normal() * rng.uniform(0.5, 20.0);
      if (with_ties) s = std::round(s * 10.0) / 10.0;
    }
    const double via_rank = conformalize(scores, alpha, RankRule::NRule).t_hat;
    const double via_scan = brute_force_1d(scores, alpha);
    if (via_rank != via_scan) return false;
  }
  return true;
}

inline int run_all() {
  Suite suite;
  suite.report("nestedness (1000 cases)", check_nestedness(1000, 101));
  suite.report("score consistency (1000 cases)", check_score_consistency(1000, 202));
  suite.report("monotone efficiency (200 cases)", check_monotone_efficiency(200, 303));
  suite.report("gradients vs central differences (50 per family)", check_gradients(50, 1e-4, 404));
  suite.report("quantile rule == brute-force constrained ERM (1000 cases)", check_erm_equivalence(1000, 505));
  return suite.failures;
}

}  // namespace selfcheck
}  // namespace cpgen
