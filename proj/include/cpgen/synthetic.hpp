#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpgen/dataset.hpp"
#include "cpgen/rng.hpp"
#include "json.hpp"

namespace cpgen {

// Desk-scale synthetic tasks standing in for the real datasets. Coefficient
// vectors (beta, gamma, the multi-output map B) come from a fixed internal
// stream so the population is a function of the spec alone; the user seed
// drives only the sampling.
//
//   heteroscedastic_regression   y = beta.x + (1 + |gamma.x|) * eps
//       features [f_lo, f_hi, m_hat, s_hat]: a frozen base quantile pair at
//       the configured tail levels plus the conditional mean/scale estimates.
//   correlated_multioutput       y = B x + diag(scales) * Sigma^{1/2} eps
//       features = B x (the base predictions); equicorrelated noise blocks.
//   softmax_labels               per-example class distribution pi ~ Dirichlet,
//       y ~ pi; K predictors emit softmax(signal_k * log pi + noise_k * eta).

struct SyntheticSpec {
  std::string kind;  // heteroscedastic_regression | correlated_multioutput | softmax_labels
  int n = 0;
  std::uint64_t seed = 0;

  // heteroscedastic_regression
  int latent_dim = 3;
  double noise_scale = 0.35;
  double noise_skew = 0.0;  // 0: gaussian; >0: standardized lognormal with this sigma
  double base_lo_level = 0.05;
  double base_hi_level = 0.95;
  double base_quantile_scale = 1.0;

  // correlated_multioutput
  int d_out = 2;
  std::vector<double> scales;  // per-coordinate noise scales; default all 1
  std::vector<double> rho;     // equicorrelation per block; scalar list broadcast
  int block_size = 0;          // 0: one block spanning all coordinates

  // softmax_labels
  int num_classes = 10;
  int num_models = 3;
  double concentration = 0.7;
  std::vector<double> signal;  // per-model log-probability weight; default [1.0, 0.4, ...]
  std::vector<double> noise;   // per-model logit noise sigma; default [0.1, 1.2, ...]

  void validate() const {
    if (kind != "heteroscedastic_regression" && kind != "correlated_multioutput" && kind != "softmax_labels")
      throw std::invalid_argument("synthetic: unknown kind '" + kind + "'");
    if (n < 1) throw std::invalid_argument("synthetic: n must be >= 1");
    if (kind == "heteroscedastic_regression") {
      if (latent_dim < 1) throw std::invalid_argument("synthetic: latent_dim must be >= 1");
      if (noise_scale < 0.0 || noise_skew < 0.0) throw std::invalid_argument("synthetic: noise parameters must be >= 0");
      if (!(base_lo_level > 0.0 && base_lo_level < base_hi_level && base_hi_level < 1.0))
        throw std::invalid_argument("synthetic: base quantile levels must satisfy 0 < lo < hi < 1");
    } else if (kind == "correlated_multioutput") {
      if (latent_dim < 1 || d_out < 1) throw std::invalid_argument("synthetic: dimensions must be >= 1");
      if (!scales.empty() && static_cast<int>(scales.size()) != d_out)
        throw std::invalid_argument("synthetic: scales must have d_out entries");
      for (double s : scales)
        if (!(s > 0.0)) throw std::invalid_argument("synthetic: scales must be positive");
      for (double r : rho)
        if (r < 0.0 || r >= 1.0) throw std::invalid_argument("synthetic: rho must lie in [0,1)");
      if (block_size < 0) throw std::invalid_argument("synthetic: block_size must be >= 0");
    } else {
      if (num_classes < 2 || num_models < 1) throw std::invalid_argument("synthetic: needs L >= 2, K >= 1");
      if (!(concentration > 0.0)) throw std::invalid_argument("synthetic: concentration must be positive");
      if (!signal.empty() && static_cast<int>(signal.size()) != num_models)
        throw std::invalid_argument("synthetic: signal must have K entries");
      if (!noise.empty() && static_cast<int>(noise.size()) != num_models)
        throw std::invalid_argument("synthetic: noise must have K entries");
    }
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                                const std::string& context) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw std::invalid_argument(context + ": unknown key '" + it.key() + "'");
  }
}

// Coefficients from a fixed stream keyed by dimension; independent of the
// user-facing seed so the population does not drift across seeds.
inline Eigen::VectorXd fixed_unit_vector(int dim, std::uint64_t stream, double norm) {
  Rng rng(0x9e3779b97f4a7c15ull ^ (stream * 0xd1342543de82ef95ull + static_cast<std::uint64_t>(dim)));
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.uniform(-1.0, 1.0);
  const double len = v.norm();
  return v * (norm / (len > 0 ? len : 1.0));
}

// Quantile of the standardized noise: standard normal for skew = 0, otherwise
// lognormal(sigma = skew) shifted/scaled to mean 0, std 1.
inline double noise_quantile(double skew, double level) {
  const double z = inverse_normal_cdf(level);
  if (skew == 0.0) return z;
  const double m0 = std::exp(skew * skew / 2.0);
  const double s0 = std::sqrt((std::exp(skew * skew) - 1.0) * std::exp(skew * skew));
  return (std::exp(skew * z) - m0) / s0;
}

inline double noise_draw(double skew, Rng& rng) {
  const double z = rng.normal();
  if (skew == 0.0) return z;
  const double m0 = std::exp(skew * skew / 2.0);
  const double s0 = std::sqrt((std::exp(skew * skew) - 1.0) * std::exp(skew * skew));
  return (std::exp(skew * z) - m0) / s0;
}

inline Dataset gen_heteroscedastic(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  const Eigen::VectorXd beta = fixed_unit_vector(spec.latent_dim, 11, 1.0);
  const Eigen::VectorXd gamma = fixed_unit_vector(spec.latent_dim, 23, 1.5);
  const double q_lo = noise_quantile(spec.noise_skew, spec.base_lo_level) * spec.base_quantile_scale;
  const double q_hi = noise_quantile(spec.noise_skew, spec.base_hi_level) * spec.base_quantile_scale;

  Dataset data;
  data.feature_names = {"f_lo", "f_hi", "m_hat", "s_hat"};
  data.label_names = {"y"};
  data.features.resize(spec.n, 4);
  data.labels.resize(spec.n, 1);
  Eigen::VectorXd x(spec.latent_dim);
  for (int i = 0; i < spec.n; ++i) {
    for (int j = 0; j < spec.latent_dim; ++j) x(j) = rng.normal();
    const double m = beta.dot(x);
    const double s = spec.noise_scale * (1.0 + std::abs(gamma.dot(x)));
    data.features(i, 0) = m + s * q_lo;
    data.features(i, 1) = m + s * q_hi;
    data.features(i, 2) = m;
    data.features(i, 3) = s;
    data.labels(i, 0) = m + s * detail::noise_draw(spec.noise_skew, rng);
  }
  return data;
}

inline Dataset gen_multioutput(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  Eigen::MatrixXd map(spec.d_out, spec.latent_dim);
  for (int i = 0; i < spec.d_out; ++i)
    map.row(i) = fixed_unit_vector(spec.latent_dim, 37 + static_cast<std::uint64_t>(i), 1.0).transpose();
  const std::vector<double> scales = spec.scales.empty() ? std::vector<double>(spec.d_out, 1.0) : spec.scales;

  const int bsize = spec.block_size > 0 ? spec.block_size : spec.d_out;
  const int nblocks = (spec.d_out + bsize - 1) / bsize;
  std::vector<double> rho(nblocks, 0.0);
  if (spec.rho.size() == 1)
    std::fill(rho.begin(), rho.end(), spec.rho[0]);
  else if (!spec.rho.empty()) {
    if (static_cast<int>(spec.rho.size()) != nblocks)
      throw std::invalid_argument("synthetic: rho must have one entry per block (" + std::to_string(nblocks) + ")");
    rho = spec.rho;
  }
  std::vector<Eigen::MatrixXd> chol(static_cast<std::size_t>(nblocks));
  for (int b = 0; b < nblocks; ++b) {
    const int width = std::min(bsize, spec.d_out - b * bsize);
    Eigen::MatrixXd corr = Eigen::MatrixXd::Constant(width, width, rho[static_cast<std::size_t>(b)]);
    corr.diagonal().setOnes();
    chol[static_cast<std::size_t>(b)] = Eigen::LLT<Eigen::MatrixXd>(corr).matrixL();
  }

  Dataset data;
  for (int i = 0; i < spec.d_out; ++i) data.feature_names.push_back("f_" + std::to_string(i));
  for (int i = 0; i < spec.d_out; ++i) data.label_names.push_back("y_" + std::to_string(i));
  data.features.resize(spec.n, spec.d_out);
  data.labels.resize(spec.n, spec.d_out);
  Eigen::VectorXd x(spec.latent_dim), eta(spec.d_out);
  for (int r = 0; r < spec.n; ++r) {
    for (int j = 0; j < spec.latent_dim; ++j) x(j) = rng.normal();
    for (int j = 0; j < spec.d_out; ++j) eta(j) = rng.normal();
    const Eigen::VectorXd f = map * x;
    for (int b = 0; b < nblocks; ++b) {
      const int off = b * bsize;
      const int width = std::min(bsize, spec.d_out - off);
      eta.segment(off, width) = chol[static_cast<std::size_t>(b)] * eta.segment(off, width);
    }
    for (int j = 0; j < spec.d_out; ++j) {
      data.features(r, j) = f(j);
      data.labels(r, j) = f(j) + scales[static_cast<std::size_t>(j)] * eta(j);
    }
  }
  return data;
}

inline Dataset gen_softmax_labels(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  std::vector<double> signal = spec.signal;
  std::vector<double> noise = spec.noise;
  if (signal.empty()) {
    signal.assign(static_cast<std::size_t>(spec.num_models), 0.4);
    signal[0] = 1.0;
  }
  if (noise.empty()) {
    noise.assign(static_cast<std::size_t>(spec.num_models), 1.2);
    noise[0] = 0.1;
  }

  const int K = spec.num_models, L = spec.num_classes;
  Dataset data;
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < L; ++l) data.feature_names.push_back("p" + std::to_string(k) + "_c" + std::to_string(l));
  data.label_names = {"y"};
  data.features.resize(spec.n, K * L);
  data.labels.resize(spec.n, 1);

  std::vector<double> pi(static_cast<std::size_t>(L));
  Eigen::VectorXd logits(L);
  for (int r = 0; r < spec.n; ++r) {
    double total = 0.0;
    for (int l = 0; l < L; ++l) {
      pi[static_cast<std::size_t>(l)] = rng.gamma(spec.concentration);
      total += pi[static_cast<std::size_t>(l)];
    }
    for (int l = 0; l < L; ++l) pi[static_cast<std::size_t>(l)] /= total;

    double u = rng.uniform();
    int y = L - 1;
    double acc = 0.0;
    for (int l = 0; l < L; ++l) {
      acc += pi[static_cast<std::size_t>(l)];
      if (u < acc) {
        y = l;
        break;
      }
    }
    data.labels(r, 0) = static_cast<double>(y);

    for (int k = 0; k < K; ++k) {
      for (int l = 0; l < L; ++l)
        logits(l) = signal[static_cast<std::size_t>(k)] * std::log(pi[static_cast<std::size_t>(l)] + 1e-12) +
                    noise[static_cast<std::size_t>(k)] * rng.normal();
      logits.array() -= logits.maxCoeff();
      Eigen::VectorXd p = logits.array().exp();
      p /= p.sum();
      for (int l = 0; l < L; ++l) data.features(r, k * L + l) = p(l);
    }
  }
  return data;
}

}  // namespace detail

inline Dataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  if (spec.kind == "heteroscedastic_regression") return detail::gen_heteroscedastic(spec);
  if (spec.kind == "correlated_multioutput") return detail::gen_multioutput(spec);
  return detail::gen_softmax_labels(spec);
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j,
      {"kind", "n", "seed", "latent_dim", "noise_scale", "noise_skew", "base_lo_level", "base_hi_level",
       "base_quantile_scale", "d_out", "scales", "rho", "block_size", "num_classes", "num_models", "concentration",
       "signal", "noise"},
      "synthetic spec");
  SyntheticSpec s;
  s.kind = j.at("kind").get<std::string>();
  s.n = j.at("n").get<int>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("latent_dim")) s.latent_dim = j.at("latent_dim").get<int>();
  if (j.contains("noise_scale")) s.noise_scale = j.at("noise_scale").get<double>();
  if (j.contains("noise_skew")) s.noise_skew = j.at("noise_skew").get<double>();
  if (j.contains("base_lo_level")) s.base_lo_level = j.at("base_lo_level").get<double>();
  if (j.contains("base_hi_level")) s.base_hi_level = j.at("base_hi_level").get<double>();
  if (j.contains("base_quantile_scale")) s.base_quantile_scale = j.at("base_quantile_scale").get<double>();
  if (j.contains("d_out")) s.d_out = j.at("d_out").get<int>();
  if (j.contains("scales")) s.scales = j.at("scales").get<std::vector<double>>();
  if (j.contains("rho")) {
    if (j.at("rho").is_number())
      s.rho = {j.at("rho").get<double>()};
    else
      s.rho = j.at("rho").get<std::vector<double>>();
  }
  if (j.contains("block_size")) s.block_size = j.at("block_size").get<int>();
  if (j.contains("num_classes")) s.num_classes = j.at("num_classes").get<int>();
  if (j.contains("num_models")) s.num_models = j.at("num_models").get<int>();
  if (j.contains("concentration")) s.concentration = j.at("concentration").get<double>();
  if (j.contains("signal")) s.signal = j.at("signal").get<std::vector<double>>();
  if (j.contains("noise")) s.noise = j.at("noise").get<std::vector<double>>();
  s.validate();
  return s;
}

inline nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
  nlohmann::json j;
  j["kind"] = s.kind;
  j["n"] = s.n;
  j["seed"] = s.seed;
  if (s.kind == "heteroscedastic_regression") {
    j["latent_dim"] = s.latent_dim;
    j["noise_scale"] = s.noise_scale;
    j["noise_skew"] = s.noise_skew;
    j["base_lo_level"] = s.base_lo_level;
    j["base_hi_level"] = s.base_hi_level;
    j["base_quantile_scale"] = s.base_quantile_scale;
  } else if (s.kind == "correlated_multioutput") {
    j["latent_dim"] = s.latent_dim;
    j["d_out"] = s.d_out;
    j["scales"] = s.scales;
    j["rho"] = s.rho;
    j["block_size"] = s.block_size;
  } else {
    j["num_classes"] = s.num_classes;
    j["num_models"] = s.num_models;
    j["concentration"] = s.concentration;
    j["signal"] = s.signal;
    j["noise"] = s.noise;
  }
  return j;
}

}  // namespace cpgen
