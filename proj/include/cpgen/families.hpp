#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace cpgen {

// Nested prediction-set families C_{theta,t}. Every family exposes a margin
// (covered iff margin >= 0, closed-set convention), a conformal score (the
// critical t at which membership flips), an efficiency loss, and analytic
// gradients in the unconstrained parametrization (theta-logits, log t).
//
//   IntervalLinear  [th_lo.x + b_lo - t, th_hi.x + b_hi + t]      eff = length
//   Box             prod_i [f_i - t*u_i, f_i + t*u_i], u = e^th   eff = volume
//   LabelEnsemble   {y : sum_k softmax(th)_k p_k(y|x) >= t}       eff = Lq^q
//   Hypercube       prod_i [f_i - t, f_i + t]  (no theta)         eff = (2t)^d
//
// Membership grows with t for every family except LabelEnsemble, whose sets
// grow as the probability threshold t decreases. Conformalization and the
// nestedness properties are oriented per family via coverage_increases_with_t.

enum class FamilyKind { IntervalLinear, Box, LabelEnsemble, Hypercube };
enum class EfficiencyKind { Length, Volume, LqSize };

inline std::string family_kind_name(FamilyKind k) {
  switch (k) {
    case FamilyKind::IntervalLinear: return "interval_linear";
    case FamilyKind::Box: return "box";
    case FamilyKind::LabelEnsemble: return "label_ensemble";
    case FamilyKind::Hypercube: return "hypercube";
  }
  throw std::logic_error("family_kind_name: unknown kind");
}

inline FamilyKind family_kind_from_name(const std::string& name) {
  if (name == "interval_linear") return FamilyKind::IntervalLinear;
  if (name == "box") return FamilyKind::Box;
  if (name == "label_ensemble") return FamilyKind::LabelEnsemble;
  if (name == "hypercube") return FamilyKind::Hypercube;
  throw std::invalid_argument("unknown family kind '" + name + "'");
}

inline std::string efficiency_kind_name(EfficiencyKind k) {
  switch (k) {
    case EfficiencyKind::Length: return "length";
    case EfficiencyKind::Volume: return "volume";
    case EfficiencyKind::LqSize: return "lq_size";
  }
  throw std::logic_error("efficiency_kind_name: unknown kind");
}

struct NestedFamily {
  FamilyKind kind = FamilyKind::IntervalLinear;
  int feature_dim = 0;   // d for IntervalLinear, d_out for Box/Hypercube, K*L for LabelEnsemble
  int output_dim = 1;    // label dimension (1 for regression/classification index)
  int num_models = 0;    // K (LabelEnsemble)
  int num_classes = 0;   // L (LabelEnsemble)
  double q = 0.5;        // LqSize exponent

  // IntervalLinear convention: features carry the frozen base predictions in
  // columns (kLoCol, kHiCol); the solver's identity initialization selects them.
  static constexpr int kLoCol = 0;
  static constexpr int kHiCol = 1;

  int theta_dim() const {
    switch (kind) {
      case FamilyKind::IntervalLinear: return 2 * feature_dim + 2;
      case FamilyKind::Box: return output_dim;
      case FamilyKind::LabelEnsemble: return num_models;
      case FamilyKind::Hypercube: return 0;
    }
    throw std::logic_error("theta_dim: unknown kind");
  }

  EfficiencyKind efficiency_kind() const {
    switch (kind) {
      case FamilyKind::IntervalLinear: return EfficiencyKind::Length;
      case FamilyKind::Box: return EfficiencyKind::Volume;
      case FamilyKind::LabelEnsemble: return EfficiencyKind::LqSize;
      case FamilyKind::Hypercube: return EfficiencyKind::Volume;
    }
    throw std::logic_error("efficiency_kind: unknown kind");
  }

  bool coverage_increases_with_t() const { return kind != FamilyKind::LabelEnsemble; }

  static NestedFamily interval_linear(int d) {
    if (d < 1) throw std::invalid_argument("interval_linear: d must be >= 1");
    NestedFamily f;
    f.kind = FamilyKind::IntervalLinear;
    f.feature_dim = d;
    f.output_dim = 1;
    return f;
  }
  static NestedFamily box(int d_out) {
    if (d_out < 1) throw std::invalid_argument("box: d_out must be >= 1");
    NestedFamily f;
    f.kind = FamilyKind::Box;
    f.feature_dim = d_out;
    f.output_dim = d_out;
    return f;
  }
  static NestedFamily label_ensemble(int num_models, int num_classes, double q = 0.5) {
    if (num_models < 1 || num_classes < 2)
      throw std::invalid_argument("label_ensemble: needs K >= 1 models and L >= 2 classes");
    if (!(q > 0.0)) throw std::invalid_argument("label_ensemble: q must be positive");
    NestedFamily f;
    f.kind = FamilyKind::LabelEnsemble;
    f.feature_dim = num_models * num_classes;
    f.output_dim = 1;
    f.num_models = num_models;
    f.num_classes = num_classes;
    f.q = q;
    return f;
  }
  static NestedFamily hypercube(int d_out) {
    if (d_out < 1) throw std::invalid_argument("hypercube: d_out must be >= 1");
    NestedFamily f;
    f.kind = FamilyKind::Hypercube;
    f.feature_dim = d_out;
    f.output_dim = d_out;
    return f;
  }
};

// Parameters in the family's unconstrained parametrization: theta is raw
// weights (IntervalLinear), log half-widths (Box), or ensemble logits
// (LabelEnsemble); t is stored raw (reconformalized t may be <= 0 for
// IntervalLinear). The solver optimizes (theta, log t).
struct Params {
  Eigen::VectorXd theta;
  double t = 0.0;
};

inline double hinge(double z) { return z < 1.0 ? 1.0 - z : 0.0; }

namespace detail {

inline void check_dims(const NestedFamily& fam, const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (x.size() != fam.feature_dim)
    throw std::invalid_argument("family: feature dimension mismatch (got " + std::to_string(x.size()) +
                                ", expected " + std::to_string(fam.feature_dim) + ")");
  if (y.size() != fam.output_dim)
    throw std::invalid_argument("family: label dimension mismatch (got " + std::to_string(y.size()) +
                                ", expected " + std::to_string(fam.output_dim) + ")");
}

inline void check_theta(const NestedFamily& fam, const Eigen::VectorXd& theta) {
  if (theta.size() != fam.theta_dim())
    throw std::invalid_argument("family: theta dimension mismatch (got " + std::to_string(theta.size()) +
                                ", expected " + std::to_string(fam.theta_dim()) + ")");
}

struct IntervalView {
  Eigen::Map<const Eigen::VectorXd> th_lo, th_hi;
  double b_lo, b_hi;
  explicit IntervalView(const Eigen::VectorXd& theta, int d)
      : th_lo(theta.data(), d), th_hi(theta.data() + d + 1, d), b_lo(theta(d)), b_hi(theta(2 * d + 1)) {}
};

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd w = (logits.array() - logits.maxCoeff()).exp();
  return w / w.sum();
}

// Mixture probabilities p_theta(l|x) for all classes; x holds the K blocks of
// per-class probabilities [model k][class l].
inline Eigen::VectorXd mixture_probs(const NestedFamily& fam, const Eigen::VectorXd& weights,
                                     const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(fam.num_classes);
  for (int k = 0; k < fam.num_models; ++k)
    p += weights(k) * x.segment(k * fam.num_classes, fam.num_classes);
  return p;
}

inline int class_index(const NestedFamily& fam, double label) {
  const int y = static_cast<int>(std::llround(label));
  if (y < 0 || y >= fam.num_classes)
    throw std::invalid_argument("label_ensemble: class index " + std::to_string(y) + " outside [0, L)");
  return y;
}

}  // namespace detail

// Critical threshold t_theta(x, y) at which membership flips: the smallest
// covering t for families where coverage grows with t, the largest for
// LabelEnsemble (where it equals p_theta(y|x)).
inline double conformal_score(const NestedFamily& fam, const Eigen::VectorXd& theta,
                              const Eigen::Ref<const Eigen::VectorXd>& x,
                              const Eigen::Ref<const Eigen::VectorXd>& y) {
  detail::check_dims(fam, x, y);
  detail::check_theta(fam, theta);
  switch (fam.kind) {
    case FamilyKind::IntervalLinear: {
      const detail::IntervalView v(theta, fam.feature_dim);
      const double lo = v.th_lo.dot(x) + v.b_lo;
      const double hi = v.th_hi.dot(x) + v.b_hi;
      return std::max(lo - y(0), y(0) - hi);
    }
    case FamilyKind::Box: {
      double s = 0.0;
      for (int i = 0; i < fam.output_dim; ++i)
        s = std::max(s, std::abs(y(i) - x(i)) * std::exp(-theta(i)));
      return s;
    }
    case FamilyKind::LabelEnsemble: {
      const Eigen::VectorXd w = detail::softmax(theta);
      const Eigen::VectorXd p = detail::mixture_probs(fam, w, x);
      return p(detail::class_index(fam, y(0)));
    }
    case FamilyKind::Hypercube:
      return (y - x).cwiseAbs().maxCoeff();
  }
  throw std::logic_error("conformal_score: unknown kind");
}

// Covered iff margin >= 0.
inline double margin(const NestedFamily& fam, const Params& params,
                     const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& y) {
  const double s = conformal_score(fam, params.theta, x, y);
  switch (fam.kind) {
    case FamilyKind::IntervalLinear:
    case FamilyKind::Hypercube:
      return params.t - s;
    case FamilyKind::Box:
      // s = max_i |y_i - f_i| / e^{theta_i}; box half-widths are t * e^{theta_i}
      if (params.t > 0.0) return 1.0 - s / params.t;
      return s == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
    case FamilyKind::LabelEnsemble:
      return s - params.t;
  }
  throw std::logic_error("margin: unknown kind");
}

inline bool covered(const NestedFamily& fam, const Params& params,
                    const Eigen::Ref<const Eigen::VectorXd>& x,
                    const Eigen::Ref<const Eigen::VectorXd>& y) {
  return margin(fam, params, x, y) >= 0.0;
}

// Training efficiency loss l_eff (the quantity the solver minimizes).
inline double efficiency(const NestedFamily& fam, const Params& params,
                         const Eigen::Ref<const Eigen::VectorXd>& x,
                         const Eigen::Ref<const Eigen::VectorXd>& y) {
  detail::check_dims(fam, x, y);
  detail::check_theta(fam, params.theta);
  switch (fam.kind) {
    case FamilyKind::IntervalLinear: {
      const detail::IntervalView v(params.theta, fam.feature_dim);
      const double lo = v.th_lo.dot(x) + v.b_lo;
      const double hi = v.th_hi.dot(x) + v.b_hi;
      // degenerate intervals (upper < lower) are empty; length clamps to 0
      return std::max(hi - lo + 2.0 * params.t, 0.0);
    }
    case FamilyKind::Box: {
      const double t = std::max(params.t, 0.0);
      double vol = 1.0;
      for (int i = 0; i < fam.output_dim; ++i) vol *= 2.0 * t * std::exp(params.theta(i));
      return vol;
    }
    case FamilyKind::LabelEnsemble: {
      const Eigen::VectorXd w = detail::softmax(params.theta);
      const Eigen::VectorXd p = detail::mixture_probs(fam, w, x);
      double s = 0.0;
      for (int l = 0; l < fam.num_classes; ++l) {
        const double gap = p(l) - params.t;
        if (gap > 0.0) s += std::pow(gap, fam.q);
      }
      return s;
    }
    case FamilyKind::Hypercube:
      return std::pow(2.0 * std::max(params.t, 0.0), fam.output_dim);
  }
  throw std::logic_error("efficiency: unknown kind");
}

// Reported set size used in evaluation: identical to the efficiency loss for
// interval/box families, but the integer cardinality (not the Lq surrogate)
// for LabelEnsemble. Label-independent.
inline double reported_size(const NestedFamily& fam, const Params& params,
                            const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (fam.kind == FamilyKind::LabelEnsemble) {
    const Eigen::VectorXd w = detail::softmax(params.theta);
    const Eigen::VectorXd p = detail::mixture_probs(fam, w, x);
    int count = 0;
    for (int l = 0; l < fam.num_classes; ++l)
      if (p(l) >= params.t) ++count;
    return static_cast<double>(count);
  }
  const Eigen::VectorXd dummy = Eigen::VectorXd::Zero(fam.output_dim);
  return efficiency(fam, params, x, dummy);
}

// Gradient of the per-example Lagrangian  l_eff + lambda * hinge(margin)  in
// the unconstrained coordinates [theta..., log t]. alpha enters the Lagrangian
// only as the constant -lambda*alpha offset, so it does not appear in the
// gradient. Subgradient 0 is used at the kinks of max/hinge/clamp.
inline Eigen::VectorXd grad_lagrangian(const NestedFamily& fam, const Params& params,
                                       const Eigen::Ref<const Eigen::VectorXd>& x,
                                       const Eigen::Ref<const Eigen::VectorXd>& y, double lambda,
                                       double /*alpha*/) {
  detail::check_dims(fam, x, y);
  detail::check_theta(fam, params.theta);
  if (lambda < 0.0) throw std::invalid_argument("grad_lagrangian: lambda must be >= 0");
  const int td = fam.theta_dim();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(td + 1);
  const double t = params.t;
  const double m = margin(fam, params, x, y);
  const double hprime = (m < 1.0) ? -1.0 : 0.0;  // d hinge / d margin, 0 at the kink

  switch (fam.kind) {
    case FamilyKind::IntervalLinear: {
      const int d = fam.feature_dim;
      const detail::IntervalView v(params.theta, d);
      const double lo = v.th_lo.dot(x) + v.b_lo;
      const double hi = v.th_hi.dot(x) + v.b_hi;
      // efficiency: max(hi - lo + 2t, 0)
      if (hi - lo + 2.0 * t > 0.0) {
        g.segment(0, d) = -x;
        g(d) = -1.0;
        g.segment(d + 1, d) = x;
        g(2 * d + 1) = 1.0;
        g(td) = 2.0 * t;  // d/d log t
      }
      // hinge(margin), margin = t - max(lo - y, y - hi)
      if (lambda > 0.0 && hprime != 0.0) {
        const double a = lo - y(0), b = y(0) - hi;
        Eigen::VectorXd dm = Eigen::VectorXd::Zero(td + 1);
        dm(td) = t;
        if (a > b) {
          dm.segment(0, d) = -x;
          dm(d) = -1.0;
        } else if (b > a) {
          dm.segment(d + 1, d) = x;
          dm(2 * d + 1) = 1.0;
        }  // exact tie: max kink, subgradient 0 for the theta part
        g += lambda * hprime * dm;
      }
      return g;
    }
    case FamilyKind::Box: {
      const int d = fam.output_dim;
      // efficiency: prod_i 2 t e^{theta_i}
      const double vol = efficiency(fam, params, x, y);
      g.segment(0, d).array() = vol;
      g(td) = d * vol;
      if (lambda > 0.0 && hprime != 0.0 && t > 0.0) {
        // margin = 1 - S/t with S = max_i |y_i - f_i| e^{-theta_i}
        int argmax = -1, ties = 0;
        double s = -1.0;
        for (int i = 0; i < d; ++i) {
          const double ri = std::abs(y(i) - x(i)) * std::exp(-params.theta(i));
          if (ri > s) {
            s = ri;
            argmax = i;
            ties = 1;
          } else if (ri == s) {
            ++ties;
          }
        }
        Eigen::VectorXd dm = Eigen::VectorXd::Zero(td + 1);
        dm(td) = s / t;  // smooth in log t regardless of ties
        if (ties == 1 && s > 0.0) dm(argmax) = s / t;
        g += lambda * hprime * dm;
      }
      return g;
    }
    case FamilyKind::LabelEnsemble: {
      const int K = fam.num_models;
      const Eigen::VectorXd w = detail::softmax(params.theta);
      const Eigen::VectorXd p = detail::mixture_probs(fam, w, x);
      // dp(l)/dlogit_j = w_j (P_j(l) - p(l))
      for (int l = 0; l < fam.num_classes; ++l) {
        const double gap = p(l) - t;
        if (gap > 0.0) {
          const double c = fam.q * std::pow(gap, fam.q - 1.0);
          for (int j = 0; j < K; ++j) g(j) += c * w(j) * (x(j * fam.num_classes + l) - p(l));
          g(td) += c * (-t);  // d(p - t)/d log t = -t
        }
      }
      if (lambda > 0.0 && hprime != 0.0) {
        const int yc = detail::class_index(fam, y(0));
        for (int j = 0; j < K; ++j)
          g(j) += lambda * hprime * w(j) * (x(j * fam.num_classes + yc) - p(yc));
        g(td) += lambda * hprime * (-t);
      }
      return g;
    }
    case FamilyKind::Hypercube: {
      const int d = fam.output_dim;
      if (t > 0.0) g(td) = d * std::pow(2.0 * t, d);
      if (lambda > 0.0 && hprime != 0.0) g(td) += lambda * hprime * t;  // margin = t - ||r||_inf
      return g;
    }
  }
  throw std::logic_error("grad_lagrangian: unknown kind");
}

// ---------------------------------------------------------------------------
// Fitted model with provenance.

struct PredictionSetModel {
  NestedFamily family;
  Params params;
  std::string method;
  std::vector<std::string> splits_used;
  std::uint64_t seed = 0;
  std::string cal_fingerprint, recal_fingerprint;
};

inline nlohmann::json family_to_json(const NestedFamily& fam) {
  nlohmann::json j;
  j["kind"] = family_kind_name(fam.kind);
  j["feature_dim"] = fam.feature_dim;
  j["output_dim"] = fam.output_dim;
  j["num_models"] = fam.num_models;
  j["num_classes"] = fam.num_classes;
  j["q"] = fam.q;
  return j;
}

inline NestedFamily family_from_json(const nlohmann::json& j) {
  NestedFamily fam;
  fam.kind = family_kind_from_name(j.at("kind").get<std::string>());
  fam.feature_dim = j.at("feature_dim").get<int>();
  fam.output_dim = j.at("output_dim").get<int>();
  fam.num_models = j.at("num_models").get<int>();
  fam.num_classes = j.at("num_classes").get<int>();
  fam.q = j.at("q").get<double>();
  return fam;
}

inline nlohmann::json params_to_json(const NestedFamily& fam, const Params& params) {
  nlohmann::json j = family_to_json(fam);
  j["theta_logits"] = std::vector<double>(params.theta.data(), params.theta.data() + params.theta.size());
  j["t"] = params.t;
  return j;
}

inline std::pair<NestedFamily, Params> params_from_json(const nlohmann::json& j) {
  NestedFamily fam = family_from_json(j);
  Params p;
  const auto theta = j.at("theta_logits").get<std::vector<double>>();
  p.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
  p.t = j.at("t").get<double>();
  detail::check_theta(fam, p.theta);
  return {fam, p};
}

}  // namespace cpgen
