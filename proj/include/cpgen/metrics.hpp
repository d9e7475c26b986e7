#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cpgen/dataset.hpp"
#include "cpgen/families.hpp"
#include "json.hpp"

namespace cpgen {

// Evaluation of fitted prediction-set models: coverage, efficiency statistics,
// pinball loss of the underlying quantile pair, and the conditional-coverage
// proxies Corr and HSIC between set size and the coverage indicator.

inline double coverage(const NestedFamily& fam, const Params& params, const Dataset& data) {
  validate(data);
  double count = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i)
    if (covered(fam, params, data.features.row(i).transpose(), data.labels.row(i).transpose())) count += 1.0;
  return count / static_cast<double>(data.n());
}

inline double miscoverage(const NestedFamily& fam, const Params& params, const Dataset& data) {
  return 1.0 - coverage(fam, params, data);  // complements coverage exactly
}

// (mean, population std) of the reported set size; cardinality for label
// ensembles, length/volume otherwise.
inline std::pair<double, double> efficiency_stats(const NestedFamily& fam, const Params& params,
                                                  const Dataset& data) {
  validate(data);
  const auto n = data.n();
  std::vector<double> sizes(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    sizes[static_cast<std::size_t>(i)] = reported_size(fam, params, data.features.row(i).transpose());
  double mean = 0.0;
  for (double s : sizes) mean += s;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double s : sizes) var += (s - mean) * (s - mean);
  var /= static_cast<double>(n);
  return {mean, std::sqrt(std::max(var, 0.0))};
}

// Summed pinball loss of level alpha/2 for the lower and 1 - alpha/2 for the
// upper quantile prediction, averaged over rows.
inline double pinball_loss(const Eigen::VectorXd& lo_preds, const Eigen::VectorXd& hi_preds,
                           const Eigen::VectorXd& labels, double alpha) {
  if (lo_preds.size() != labels.size() || hi_preds.size() != labels.size())
    throw std::invalid_argument("pinball_loss: arrays must be aligned");
  if (labels.size() < 1) throw std::invalid_argument("pinball_loss: empty input");
  auto pinball = [](double beta, double t) { return t < 0.0 ? -beta * t : (1.0 - beta) * t; };
  double total = 0.0;
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    total += pinball(alpha / 2.0, lo_preds(i) - labels(i)) + pinball(1.0 - alpha / 2.0, hi_preds(i) - labels(i));
  return total / static_cast<double>(labels.size());
}

struct CorrResult {
  double value = 0.0;
  bool degenerate = false;
};

namespace detail {

inline void size_and_coverage(const NestedFamily& fam, const Params& params, const Dataset& data,
                              std::vector<double>& size, std::vector<double>& cov) {
  const auto n = data.n();
  size.resize(static_cast<std::size_t>(n));
  cov.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    size[static_cast<std::size_t>(i)] = reported_size(fam, params, data.features.row(i).transpose());
    cov[static_cast<std::size_t>(i)] =
        covered(fam, params, data.features.row(i).transpose(), data.labels.row(i).transpose()) ? 1.0 : 0.0;
  }
}

inline double mean_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  return m / static_cast<double>(v.size());
}

}  // namespace detail

// |Pearson correlation| between set size L and coverage indicator V. Zero
// variance in either variable returns 0 with the degeneracy flag set instead
// of propagating NaN into seed aggregates.
inline CorrResult size_coverage_corr(const NestedFamily& fam, const Params& params, const Dataset& data) {
  validate(data);
  if (data.n() < 3) throw std::invalid_argument("size_coverage_corr: needs n >= 3");
  std::vector<double> size, cov;
  detail::size_and_coverage(fam, params, data, size, cov);
  const double ml = detail::mean_of(size), mv = detail::mean_of(cov);
  double sll = 0.0, svv = 0.0, slv = 0.0;
  for (std::size_t i = 0; i < size.size(); ++i) {
    const double dl = size[i] - ml, dv = cov[i] - mv;
    sll += dl * dl;
    svv += dv * dv;
    slv += dl * dv;
  }
  const double n = static_cast<double>(size.size());
  const double sd_l = std::sqrt(std::max(sll / n, 0.0));
  const double sd_v = std::sqrt(std::max(svv / n, 0.0));
  if (sd_l <= 1e-12 * (1.0 + std::abs(ml)) || sd_v <= 1e-12 * (1.0 + std::abs(mv))) return {0.0, true};
  return {std::abs(slv / n / (sd_l * sd_v)), false};
}

struct HsicResult {
  double value = 0.0;
  double bandwidth_size = 1.0;
  double bandwidth_cov = 1.0;
};

namespace detail {

// Median pairwise absolute distance on a deterministic subsample of at most
// 2000 rows; falls back to 1 when the median is 0 (e.g. a binary variable
// whose majority class dominates the pairs).
inline double median_bandwidth(const std::vector<double>& v) {
  const std::size_t m = std::min<std::size_t>(v.size(), 2000);
  std::vector<double> dists;
  dists.reserve(m * (m - 1) / 2);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) dists.push_back(std::abs(v[i] - v[j]));
  if (dists.empty()) return 1.0;
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
  const double med = dists[mid];
  return med > 0.0 ? med : 1.0;
}

}  // namespace detail

// Biased V-statistic HSIC estimate between set size and coverage indicator
// with Gaussian kernels (median-heuristic bandwidths). Streaming evaluation:
// tr(KHLH)/n^2 via pair sums, O(n) memory, deterministic summation order.
inline HsicResult hsic(const NestedFamily& fam, const Params& params, const Dataset& data,
                       std::optional<std::pair<double, double>> kernel_bandwidths = std::nullopt) {
  validate(data);
  if (data.n() < 5) throw std::invalid_argument("hsic: needs n >= 5");
  std::vector<double> size, cov;
  detail::size_and_coverage(fam, params, data, size, cov);

  HsicResult out;
  if (kernel_bandwidths) {
    out.bandwidth_size = kernel_bandwidths->first;
    out.bandwidth_cov = kernel_bandwidths->second;
  } else {
    out.bandwidth_size = detail::median_bandwidth(size);
    out.bandwidth_cov = detail::median_bandwidth(cov);
  }
  const double inv2sl = 1.0 / (2.0 * out.bandwidth_size * out.bandwidth_size);
  const double inv2sv = 1.0 / (2.0 * out.bandwidth_cov * out.bandwidth_cov);

  const std::size_t n = size.size();
  std::vector<double> row_k(n, 0.0), row_l(n, 0.0);
  double sum_kl = 0.0, sum_k = 0.0, sum_l = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double rk = 0.0, rl = 0.0, rkl = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double dk = size[i] - size[j];
      const double dl = cov[i] - cov[j];
      const double k = std::exp(-dk * dk * inv2sl);
      const double l = std::exp(-dl * dl * inv2sv);
      rk += k;
      rl += l;
      rkl += k * l;
    }
    row_k[i] = rk;
    row_l[i] = rl;
    sum_k += rk;
    sum_l += rl;
    sum_kl += rkl;
  }
  const double dn = static_cast<double>(n);
  double cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) cross += row_k[i] * row_l[i];
  out.value = sum_kl / (dn * dn) - 2.0 * cross / (dn * dn * dn) + sum_k * sum_l / (dn * dn * dn * dn);
  return out;
}

// ---------------------------------------------------------------------------
// Per-run report. A pure function of (model, data, config): identical inputs
// produce byte-identical JSON.

struct Report {
  std::string method;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  int n_test = 0;
  double coverage = 0.0;
  double mean_efficiency = 0.0;
  double std_efficiency = 0.0;
  std::string efficiency_kind;
  std::optional<double> surrogate_efficiency;  // LabelEnsemble: mean Lq^q loss, logged next to the cardinality
  std::optional<double> pinball;
  double corr_lv = 0.0;
  bool corr_degenerate = false;
  double hsic_lv = 0.0;
  double hsic_bandwidth_size = 1.0;
  double hsic_bandwidth_cov = 1.0;
  std::vector<std::string> splits_used;
  std::string standardization = "none";  // none | train | full
  std::string config_fingerprint;
  nlohmann::json model;  // serialized family + params + provenance
};

inline nlohmann::json report_to_json(const Report& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["alpha"] = r.alpha;
  j["n_test"] = r.n_test;
  j["coverage"] = r.coverage;
  j["mean_efficiency"] = r.mean_efficiency;
  j["std_efficiency"] = r.std_efficiency;
  j["efficiency_kind"] = r.efficiency_kind;
  if (r.surrogate_efficiency) j["surrogate_efficiency"] = *r.surrogate_efficiency;
  if (r.pinball) j["pinball"] = *r.pinball;
  j["corr_lv"] = r.corr_lv;
  j["corr_degenerate"] = r.corr_degenerate;
  j["hsic_lv"] = r.hsic_lv;
  j["hsic_bandwidth_size"] = r.hsic_bandwidth_size;
  j["hsic_bandwidth_cov"] = r.hsic_bandwidth_cov;
  j["splits_used"] = r.splits_used;
  j["standardization"] = r.standardization;
  j["config_fingerprint"] = r.config_fingerprint;
  j["model"] = r.model;
  return j;
}

inline Report report_from_json(const nlohmann::json& j) {
  Report r;
  r.method = j.at("method").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.alpha = j.at("alpha").get<double>();
  r.n_test = j.at("n_test").get<int>();
  r.coverage = j.at("coverage").get<double>();
  r.mean_efficiency = j.at("mean_efficiency").get<double>();
  r.std_efficiency = j.at("std_efficiency").get<double>();
  r.efficiency_kind = j.at("efficiency_kind").get<std::string>();
  if (j.contains("surrogate_efficiency")) r.surrogate_efficiency = j.at("surrogate_efficiency").get<double>();
  if (j.contains("pinball")) r.pinball = j.at("pinball").get<double>();
  r.corr_lv = j.at("corr_lv").get<double>();
  r.corr_degenerate = j.at("corr_degenerate").get<bool>();
  r.hsic_lv = j.at("hsic_lv").get<double>();
  r.hsic_bandwidth_size = j.at("hsic_bandwidth_size").get<double>();
  r.hsic_bandwidth_cov = j.at("hsic_bandwidth_cov").get<double>();
  r.splits_used = j.at("splits_used").get<std::vector<std::string>>();
  r.standardization = j.at("standardization").get<std::string>();
  r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  r.model = j.at("model");
  return r;
}

}  // namespace cpgen
