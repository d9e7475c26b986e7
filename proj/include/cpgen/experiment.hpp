#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpgen/conformal.hpp"
#include "cpgen/dataset.hpp"
#include "cpgen/families.hpp"
#include "cpgen/metrics.hpp"
#include "cpgen/solver.hpp"
#include "cpgen/synthetic.hpp"
#include "json.hpp"

namespace cpgen {

// Configuration-driven experiment runner: per-seed split -> method fits on
// their stated data budgets -> test-set evaluation -> report JSON per
// (seed, method) cell plus per-seed and aggregate CSVs. Identical configs
// produce byte-identical outputs (no timestamps in any payload).

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct CsvDataSpec {
  std::string path;
  CsvSchema schema;
  bool standardize = false;
  int num_models = 0;   // label_sets layout: features are K blocks of L probabilities
  int num_classes = 0;
};

struct ExperimentConfig {
  std::string task;  // interval_finetune | multioutput_box | label_sets
  std::optional<SyntheticSpec> synthetic;
  std::optional<CsvDataSpec> csv;
  double alpha = 0.1;
  std::vector<std::string> methods;
  nlohmann::json solver_overrides = nlohmann::json::object();
  std::vector<std::uint64_t> seeds;
  std::array<double, 4> split_fractions{0.7, 0.1, 0.1, 0.1};
  std::string output_dir;
};

namespace detail {

inline const std::vector<std::string>& methods_for_task(const std::string& task) {
  static const std::vector<std::string> interval{"cqr", "cp_gen", "cp_gen_recal"};
  static const std::vector<std::string> box{"coord_wise", "coord_wise_recal", "max_score", "cp_gen", "cp_gen_recal"};
  static const std::vector<std::string> labels{"uniform_ensemble", "best_single", "cp_gen", "cp_gen_recal"};
  if (task == "interval_finetune") return interval;
  if (task == "multioutput_box") return box;
  if (task == "label_sets") return labels;
  throw ConfigError("config: unknown task '" + task + "'");
}

inline SolverConfig resolve_solver(const ExperimentConfig& cfg, FamilyKind kind, std::uint64_t seed) {
  SolverConfig s = default_solver_config(kind, cfg.alpha, seed);
  const nlohmann::json& j = cfg.solver_overrides;
  reject_unknown_keys(j,
                      {"eps0", "lr_params", "lr_lambda", "epochs", "batch_size", "lambda_init", "lambda_max",
                       "iterate_selection", "q"},
                      "config.solver");
  if (j.contains("eps0")) s.eps0 = j.at("eps0").get<double>();
  if (j.contains("lr_params")) s.lr_params = j.at("lr_params").get<double>();
  if (j.contains("lr_lambda")) s.lr_lambda = j.at("lr_lambda").get<double>();
  if (j.contains("epochs")) s.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) s.batch_size = j.at("batch_size").get<int>();
  if (j.contains("lambda_init")) s.lambda_init = j.at("lambda_init").get<double>();
  if (j.contains("lambda_max")) s.lambda_max = j.at("lambda_max").get<double>();
  if (j.contains("iterate_selection")) {
    const auto sel = j.at("iterate_selection").get<std::string>();
    if (sel == "last")
      s.iterate_selection = IterateSelection::Last;
    else if (sel == "best_eff_on_cal")
      s.iterate_selection = IterateSelection::BestEffOnCal;
    else
      throw ConfigError("config.solver: unknown iterate_selection '" + sel + "'");
  }
  if (j.contains("q")) s.q = j.at("q").get<double>();
  s.validate();
  return s;
}

inline Dataset concat_rows(const Dataset& a, const Dataset& b) {
  Dataset out;
  out.feature_names = a.feature_names;
  out.label_names = a.label_names;
  out.features.resize(a.n() + b.n(), a.feature_dim());
  out.labels.resize(a.n() + b.n(), a.label_dim());
  out.features << a.features, b.features;
  out.labels << a.labels, b.labels;
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    detail::reject_unknown_keys(
        j, {"task", "data", "alpha", "methods", "solver", "seeds", "split_fractions", "output_dir"}, "config");
    cfg.task = j.at("task").get<std::string>();
    const auto& allowed = detail::methods_for_task(cfg.task);

    const nlohmann::json& data = j.at("data");
    detail::reject_unknown_keys(data, {"synthetic", "csv"}, "config.data");
    if (data.contains("synthetic") == data.contains("csv"))
      throw ConfigError("config.data: exactly one of 'synthetic' or 'csv' is required");
    if (data.contains("synthetic")) {
      cfg.synthetic = synthetic_spec_from_json(data.at("synthetic"));
    } else {
      const nlohmann::json& c = data.at("csv");
      detail::reject_unknown_keys(c, {"path", "features", "labels", "standardize", "num_models", "num_classes"},
                                  "config.data.csv");
      CsvDataSpec spec;
      spec.path = c.at("path").get<std::string>();
      spec.schema.feature_columns = c.at("features").get<std::vector<std::string>>();
      spec.schema.label_columns = c.at("labels").get<std::vector<std::string>>();
      if (c.contains("standardize")) spec.standardize = c.at("standardize").get<bool>();
      if (c.contains("num_models")) spec.num_models = c.at("num_models").get<int>();
      if (c.contains("num_classes")) spec.num_classes = c.at("num_classes").get<int>();
      if (cfg.task == "label_sets") {
        if (spec.num_models < 1 || spec.num_classes < 2)
          throw ConfigError("config.data.csv: label_sets needs num_models and num_classes");
        if (spec.standardize) throw ConfigError("config.data.csv: probabilities must not be standardized");
      }
      cfg.csv = spec;
    }

    if (j.contains("alpha")) cfg.alpha = j.at("alpha").get<double>();
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("config: alpha must lie in (0,1)");

    cfg.methods = j.at("methods").get<std::vector<std::string>>();
    if (cfg.methods.empty()) throw ConfigError("config: methods must be nonempty");
    for (const auto& m : cfg.methods)
      if (std::find(allowed.begin(), allowed.end(), m) == allowed.end())
        throw ConfigError("config: method '" + m + "' is not valid for task '" + cfg.task + "'");

    if (j.contains("solver")) {
      cfg.solver_overrides = j.at("solver");
      detail::reject_unknown_keys(cfg.solver_overrides,
                                  {"eps0", "lr_params", "lr_lambda", "epochs", "batch_size", "lambda_init",
                                   "lambda_max", "iterate_selection", "q"},
                                  "config.solver");
    }

    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw ConfigError("config: seeds must be nonempty");

    if (j.contains("split_fractions")) {
      const auto f = j.at("split_fractions").get<std::vector<double>>();
      if (f.size() != 4) throw ConfigError("config: split_fractions must have 4 entries (train, cal, recal, test)");
      std::copy(f.begin(), f.end(), cfg.split_fractions.begin());
    }

    cfg.output_dir = j.at("output_dir").get<std::string>();
    if (cfg.output_dir.empty()) throw ConfigError("config: output_dir must be set");
  } catch (const ConfigError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

namespace detail {

inline nlohmann::json config_echo_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["task"] = cfg.task;
  if (cfg.synthetic) j["data"]["synthetic"] = synthetic_spec_to_json(*cfg.synthetic);
  if (cfg.csv) {
    j["data"]["csv"]["path"] = cfg.csv->path;
    j["data"]["csv"]["features"] = cfg.csv->schema.feature_columns;
    j["data"]["csv"]["labels"] = cfg.csv->schema.label_columns;
    j["data"]["csv"]["standardize"] = cfg.csv->standardize;
    j["data"]["csv"]["num_models"] = cfg.csv->num_models;
    j["data"]["csv"]["num_classes"] = cfg.csv->num_classes;
  }
  j["alpha"] = cfg.alpha;
  j["methods"] = cfg.methods;
  j["solver_overrides"] = cfg.solver_overrides;
  j["seeds"] = cfg.seeds;
  j["split_fractions"] = cfg.split_fractions;
  j["output_dir"] = cfg.output_dir;
  // resolved solver choices that the spec leaves open, recorded per run
  j["solver_resolved"]["update_order"] = "simultaneous";
  j["solver_resolved"]["lambda_projection"] = "clip to [0, lambda_max]";
  return j;
}

// output_dir is bookkeeping, not experiment identity: the same scientific
// config run into two directories fingerprints identically.
inline std::string config_fingerprint(const nlohmann::json& echo) {
  nlohmann::json canonical = echo;
  canonical.erase("output_dir");
  const std::string s = canonical.dump();
  const std::uint64_t h = fnv1a(s.data(), s.size());
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Standardization for CSV data: stats from the train split when present,
// else from the full data. Label scaling is applied to the task's base
// prediction columns so baselines keep label-space semantics.
inline std::string standardize_splits(SplitSets& s, const Dataset& full, const std::string& task) {
  const bool use_train = !s.train_idx.empty();
  ScalingParams p = scaling_from(use_train ? s.train : full);
  if (task == "interval_finetune") {
    for (int c : {0, 1}) {
      p.feature_mean(c) = p.label_mean(0);
      p.feature_std(c) = p.label_std(0);
    }
  } else if (task == "multioutput_box") {
    p.feature_mean = p.label_mean;
    p.feature_std = p.label_std;
  }
  if (!s.train_idx.empty()) s.train = apply_scaling(s.train, p);
  s.cal = apply_scaling(s.cal, p);
  s.recal = apply_scaling(s.recal, p);
  s.test = apply_scaling(s.test, p);
  return use_train ? "train" : "full";
}

struct FittedCell {
  PredictionSetModel model;
  std::optional<SolveTrace> trace;
};

inline Eigen::MatrixXd residuals_of(const Dataset& d) { return d.labels - d.features; }

inline PredictionSetModel lift_cqr(double t_hat, int d) {
  PredictionSetModel model;
  model.family = NestedFamily::interval_linear(d);
  model.params.theta = Eigen::VectorXd::Zero(model.family.theta_dim());
  model.params.theta(NestedFamily::kLoCol) = 1.0;
  model.params.theta(d + 1 + NestedFamily::kHiCol) = 1.0;
  model.params.t = t_hat;
  model.method = "cqr";
  return model;
}

inline FittedCell fit_method(const ExperimentConfig& cfg, const std::string& method, const SplitSets& splits,
                             std::uint64_t seed) {
  FittedCell cell;
  const double alpha = cfg.alpha;

  if (cfg.task == "interval_finetune") {
    const int d = static_cast<int>(splits.cal.feature_dim());
    if (d < 2) throw std::runtime_error("interval_finetune: features must carry (f_lo, f_hi) in columns 0,1");
    const NestedFamily family = NestedFamily::interval_linear(d);
    if (method == "cqr") {
      const PredictionSetModel two_col =
          cqr_fit(splits.recal.features.leftCols(2), splits.recal.labels.col(0), alpha);
      cell.model = lift_cqr(two_col.params.t, d);
      cell.model.splits_used = {"recal"};
      cell.model.recal_fingerprint = dataset_fingerprint(splits.recal);
    } else if (method == "cp_gen") {
      const SolverConfig sc = resolve_solver(cfg, family.kind, seed);
      SolveResult solved = solve_cp_gen(family, splits.cal, sc);
      cell.trace = solved.trace;
      cell.model.family = family;
      cell.model.params.theta = solved.params.theta;
      cell.model.params.t = reconformalize(family, solved.params.theta, splits.cal, alpha);
      cell.model.method = method;
      cell.model.splits_used = {"cal"};
      cell.model.cal_fingerprint = dataset_fingerprint(splits.cal);
    } else if (method == "cp_gen_recal") {
      const SolverConfig sc = resolve_solver(cfg, family.kind, seed);
      SolveTrace trace;
      cell.model = solve_cp_gen_recal(family, splits.cal, splits.recal, sc, &trace);
      cell.trace = trace;
    } else {
      throw std::runtime_error("unknown interval method '" + method + "'");
    }
  } else if (cfg.task == "multioutput_box") {
    const int d_out = static_cast<int>(splits.cal.label_dim());
    if (splits.cal.feature_dim() != d_out)
      throw std::runtime_error("multioutput_box: features must be the d_out base predictions");
    const NestedFamily family = NestedFamily::box(d_out);
    if (method == "coord_wise") {
      const Dataset both = concat_rows(splits.cal, splits.recal);
      const Eigen::VectorXd u = coordwise_box(residuals_of(both), alpha);
      cell.model.family = family;
      cell.model.params.theta = u.array().log();
      cell.model.params.t = 1.0;
      cell.model.method = method;
      cell.model.splits_used = {"cal", "recal"};
    } else if (method == "coord_wise_recal") {
      const CoordwiseRecalResult r = coordwise_recal_box(residuals_of(splits.cal), residuals_of(splits.recal), alpha);
      cell.model.family = family;
      cell.model.params.theta = r.u.array().log();
      cell.model.params.t = r.t;
      cell.model.method = method;
      cell.model.splits_used = {"cal", "recal"};
    } else if (method == "max_score") {
      const Dataset both = concat_rows(splits.cal, splits.recal);
      cell.model.family = NestedFamily::hypercube(d_out);
      cell.model.params.theta = Eigen::VectorXd::Zero(0);
      cell.model.params.t = maxscore_box(residuals_of(both), alpha);
      cell.model.method = method;
      cell.model.splits_used = {"cal", "recal"};
    } else if (method == "cp_gen") {
      const SolverConfig sc = resolve_solver(cfg, family.kind, seed);
      SolveResult solved = solve_cp_gen(family, splits.cal, sc);
      cell.trace = solved.trace;
      cell.model.family = family;
      cell.model.params.theta = solved.params.theta;
      cell.model.params.t = reconformalize(family, solved.params.theta, splits.cal, alpha);
      cell.model.method = method;
      cell.model.splits_used = {"cal"};
      cell.model.cal_fingerprint = dataset_fingerprint(splits.cal);
    } else if (method == "cp_gen_recal") {
      const SolverConfig sc = resolve_solver(cfg, family.kind, seed);
      SolveTrace trace;
      cell.model = solve_cp_gen_recal(family, splits.cal, splits.recal, sc, &trace);
      cell.trace = trace;
    } else {
      throw std::runtime_error("unknown multioutput method '" + method + "'");
    }
  } else {  // label_sets
    int K = 0, L = 0;
    if (cfg.synthetic) {
      K = cfg.synthetic->num_models;
      L = cfg.synthetic->num_classes;
    } else {
      K = cfg.csv->num_models;
      L = cfg.csv->num_classes;
    }
    if (splits.cal.feature_dim() != K * L)
      throw std::runtime_error("label_sets: features must be K*L per-class probabilities");
    const SolverConfig sc = resolve_solver(cfg, FamilyKind::LabelEnsemble, seed);
    const NestedFamily family = NestedFamily::label_ensemble(K, L, sc.q);
    if (method == "uniform_ensemble") {
      const Dataset both = concat_rows(splits.cal, splits.recal);
      cell.model.family = family;
      cell.model.params.theta = Eigen::VectorXd::Zero(K);
      cell.model.params.t = reconformalize(family, cell.model.params.theta, both, alpha);
      cell.model.method = method;
      cell.model.splits_used = {"cal", "recal"};
    } else if (method == "best_single") {
      const Dataset both = concat_rows(splits.cal, splits.recal);
      double best_size = std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        Params p;
        p.theta = Eigen::VectorXd::Zero(K);
        p.theta(k) = 50.0;  // softmax puts all weight on model k
        p.t = reconformalize(family, p.theta, both, alpha);
        const double size = detail::mean_reported_size(family, p, both);
        if (size < best_size) {
          best_size = size;
          cell.model.params = p;
        }
      }
      cell.model.family = family;
      cell.model.method = method;
      cell.model.splits_used = {"cal", "recal"};
    } else if (method == "cp_gen") {
      SolveResult solved = solve_cp_gen(family, splits.cal, sc);
      cell.trace = solved.trace;
      cell.model.family = family;
      cell.model.params.theta = solved.params.theta;
      cell.model.params.t = reconformalize(family, solved.params.theta, splits.cal, alpha);
      cell.model.method = method;
      cell.model.splits_used = {"cal"};
      cell.model.cal_fingerprint = dataset_fingerprint(splits.cal);
    } else if (method == "cp_gen_recal") {
      SolveTrace trace;
      cell.model = solve_cp_gen_recal(family, splits.cal, splits.recal, sc, &trace);
      cell.trace = trace;
    } else {
      throw std::runtime_error("unknown label_sets method '" + method + "'");
    }
  }
  cell.model.method = method;
  cell.model.seed = seed;
  return cell;
}

inline Report evaluate_cell(const ExperimentConfig& cfg, const FittedCell& cell, const SplitSets& splits,
                            std::uint64_t seed, const std::string& standardization, const std::string& fingerprint) {
  const NestedFamily& fam = cell.model.family;
  const Params& params = cell.model.params;
  const Dataset& test = splits.test;

  Report r;
  r.method = cell.model.method;
  r.seed = seed;
  r.alpha = cfg.alpha;
  r.n_test = static_cast<int>(test.n());
  r.coverage = coverage(fam, params, test);
  const auto [eff_mean, eff_std] = efficiency_stats(fam, params, test);
  r.mean_efficiency = eff_mean;
  r.std_efficiency = eff_std;
  r.efficiency_kind = efficiency_kind_name(fam.efficiency_kind());
  if (fam.kind == FamilyKind::LabelEnsemble) {
    double surrogate = 0.0;
    for (Eigen::Index i = 0; i < test.n(); ++i)
      surrogate += efficiency(fam, params, test.features.row(i).transpose(), test.labels.row(i).transpose());
    r.surrogate_efficiency = surrogate / static_cast<double>(test.n());
  }
  if (cfg.task == "interval_finetune") {
    Eigen::VectorXd lo(test.n()), hi(test.n());
    if (cell.model.method == "cqr") {
      lo = test.features.col(0);
      hi = test.features.col(1);
    } else {
      const detail::IntervalView v(params.theta, static_cast<int>(test.feature_dim()));
      lo = (test.features * v.th_lo).array() + v.b_lo;
      hi = (test.features * v.th_hi).array() + v.b_hi;
    }
    r.pinball = pinball_loss(lo, hi, test.labels.col(0), cfg.alpha);
  }
  const CorrResult corr = size_coverage_corr(fam, params, test);
  r.corr_lv = corr.value;
  r.corr_degenerate = corr.degenerate;
  const HsicResult h = hsic(fam, params, test);
  r.hsic_lv = h.value;
  r.hsic_bandwidth_size = h.bandwidth_size;
  r.hsic_bandwidth_cov = h.bandwidth_cov;
  r.splits_used = cell.model.splits_used;
  r.standardization = standardization;
  r.config_fingerprint = fingerprint;
  r.model = params_to_json(fam, params);
  r.model["method"] = cell.model.method;
  r.model["seed"] = seed;
  r.model["splits_used"] = cell.model.splits_used;
  if (!cell.model.cal_fingerprint.empty()) r.model["cal_fingerprint"] = cell.model.cal_fingerprint;
  if (!cell.model.recal_fingerprint.empty()) r.model["recal_fingerprint"] = cell.model.recal_fingerprint;
  return r;
}

struct CellFailure {
  std::uint64_t seed = 0;
  std::string method;
  std::string error;
};

inline std::string csv_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

inline void write_per_seed_csv(const std::vector<Report>& reports, const std::vector<CellFailure>& failures,
                               const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "seed,method,status,coverage,mean_efficiency,std_efficiency,pinball,corr_lv,hsic_lv,error\n";
  for (std::uint64_t seed : cfg.seeds) {
    for (const auto& m : cfg.methods) {
      const auto rep = std::find_if(reports.begin(), reports.end(),
                                    [&](const Report& r) { return r.seed == seed && r.method == m; });
      if (rep != reports.end()) {
        out << seed << "," << m << ",ok," << format_double(rep->coverage) << ","
            << format_double(rep->mean_efficiency) << "," << format_double(rep->std_efficiency) << ","
            << csv_field(rep->pinball) << "," << format_double(rep->corr_lv) << "," << format_double(rep->hsic_lv)
            << ",\n";
      } else {
        const auto fail = std::find_if(failures.begin(), failures.end(),
                                       [&](const CellFailure& f) { return f.seed == seed && f.method == m; });
        std::string err = fail != failures.end() ? fail->error : "missing";
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out << seed << "," << m << ",failed,,,,,,," << err << "\n";
      }
    }
  }
}

inline void write_aggregate_csv(const std::vector<Report>& reports, const std::vector<CellFailure>& failures,
                                const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "method,n_seeds_ok,n_failed,coverage_mean,coverage_std,efficiency_mean,efficiency_std,"
         "pinball_mean,pinball_std,corr_mean,corr_std,hsic_mean,hsic_std\n";
  for (const auto& m : cfg.methods) {
    std::vector<double> cov, eff, pin, corr, hs;
    int n_failed = 0;
    for (const auto& f : failures)
      if (f.method == m) ++n_failed;
    for (const auto& r : reports)
      if (r.method == m) {
        cov.push_back(r.coverage);
        eff.push_back(r.mean_efficiency);
        if (r.pinball) pin.push_back(*r.pinball);
        corr.push_back(r.corr_lv);
        hs.push_back(r.hsic_lv);
      }
    auto stats = [](const std::vector<double>& v) -> std::pair<std::string, std::string> {
      if (v.empty()) return {"", ""};
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      var /= static_cast<double>(v.size());
      return {format_double(mean), format_double(std::sqrt(std::max(var, 0.0)))};
    };
    const auto [cm, cs] = stats(cov);
    const auto [em, es] = stats(eff);
    const auto [pm, ps] = stats(pin);
    const auto [rm, rs] = stats(corr);
    const auto [hm, hsd] = stats(hs);
    out << m << "," << cov.size() << "," << n_failed << "," << cm << "," << cs << "," << em << "," << es << ","
        << pm << "," << ps << "," << rm << "," << rs << "," << hm << "," << hsd << "\n";
  }
}

}  // namespace detail

struct RunOutcome {
  std::vector<Report> reports;
  std::vector<detail::CellFailure> failures;
};

inline RunOutcome run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path out_dir(cfg.output_dir);
  fs::create_directories(out_dir);
  fs::create_directories(out_dir / "traces");

  const nlohmann::json echo = detail::config_echo_json(cfg);
  const std::string fingerprint = detail::config_fingerprint(echo);
  {
    std::ofstream f(out_dir / "config_echo.json");
    f << echo.dump(2) << "\n";
  }

  std::optional<Dataset> csv_data;
  if (cfg.csv) csv_data = load_csv(cfg.csv->path, cfg.csv->schema);

  RunOutcome outcome;
  for (std::uint64_t seed : cfg.seeds) {
    Dataset data;
    if (cfg.synthetic) {
      SyntheticSpec spec = *cfg.synthetic;
      spec.seed = seed;  // data and split both follow the experiment seed
      data = gen_synthetic(spec);
    } else {
      data = *csv_data;
    }
    SplitSets splits = split(data, cfg.split_fractions, seed);
    std::string standardization = "none";
    if (cfg.csv && cfg.csv->standardize) standardization = detail::standardize_splits(splits, data, cfg.task);

    const fs::path seed_dir = out_dir / ("seed_" + std::to_string(seed));
    fs::create_directories(seed_dir);
    {
      std::ofstream f(seed_dir / "splits.json");
      f << split_index_json(splits).dump() << "\n";
    }

    for (const auto& method : cfg.methods) {
      try {
        const detail::FittedCell cell = detail::fit_method(cfg, method, splits, seed);
        const Report report = detail::evaluate_cell(cfg, cell, splits, seed, standardization, fingerprint);
        {
          std::ofstream f(seed_dir / (method + ".report.json"));
          f << report_to_json(report).dump(2) << "\n";
        }
        if (cell.trace)
          cell.trace->write_csv(out_dir / "traces" / ("seed_" + std::to_string(seed) + "_" + method + ".csv"));
        outcome.reports.push_back(report);
      } catch (const std::exception& e) {
        outcome.failures.push_back(detail::CellFailure{seed, method, e.what()});
      }
    }
  }

  detail::write_per_seed_csv(outcome.reports, outcome.failures, cfg, out_dir / "per_seed.csv");
  detail::write_aggregate_csv(outcome.reports, outcome.failures, cfg, out_dir / "aggregate.csv");
  if (!outcome.failures.empty()) {
    nlohmann::json jf = nlohmann::json::array();
    for (const auto& f : outcome.failures)
      jf.push_back({{"seed", f.seed}, {"method", f.method}, {"error", f.error}});
    std::ofstream f(out_dir / "failures.json");
    f << jf.dump(2) << "\n";
  }
  return outcome;
}

// Re-aggregate existing per-seed reports (the `report` subcommand).
inline void aggregate_reports_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const nlohmann::json echo = [&] {
    std::ifstream f(dir / "config_echo.json");
    if (!f) throw std::runtime_error("report: missing config_echo.json in " + dir.string());
    nlohmann::json j;
    f >> j;
    return j;
  }();
  ExperimentConfig cfg;
  cfg.task = echo.at("task").get<std::string>();
  cfg.methods = echo.at("methods").get<std::vector<std::string>>();
  cfg.seeds = echo.at("seeds").get<std::vector<std::uint64_t>>();

  std::vector<Report> reports;
  for (std::uint64_t seed : cfg.seeds) {
    for (const auto& m : cfg.methods) {
      const fs::path p = dir / ("seed_" + std::to_string(seed)) / (m + ".report.json");
      if (!fs::exists(p)) continue;
      std::ifstream f(p);
      nlohmann::json j;
      f >> j;
      reports.push_back(report_from_json(j));
    }
  }
  std::vector<detail::CellFailure> failures;
  if (fs::exists(dir / "failures.json")) {
    std::ifstream f(dir / "failures.json");
    nlohmann::json j;
    f >> j;
    for (const auto& e : j)
      failures.push_back(detail::CellFailure{e.at("seed").get<std::uint64_t>(), e.at("method").get<std::string>(),
                                             e.at("error").get<std::string>()});
  }
  detail::write_per_seed_csv(reports, failures, cfg, dir / "per_seed.csv");
  detail::write_aggregate_csv(reports, failures, cfg, dir / "aggregate.csv");
}

}  // namespace cpgen
