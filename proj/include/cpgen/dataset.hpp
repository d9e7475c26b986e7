#pragma once

#include <Eigen/Dense>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cpgen/rng.hpp"
#include "json.hpp"

namespace cpgen {

// Row-major table of base-model outputs and labels. For classification tasks
// labels is an n x 1 matrix of class indices stored as doubles.
struct Dataset {
  Eigen::MatrixXd features;  // n x d
  Eigen::MatrixXd labels;    // n x d_out
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }
  Eigen::Index label_dim() const { return labels.cols(); }

  Dataset rows(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.feature_names = feature_names;
    out.label_names = label_names;
    out.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
    out.labels.resize(static_cast<Eigen::Index>(idx.size()), labels.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(idx[r]));
      out.labels.row(static_cast<Eigen::Index>(r)) = labels.row(static_cast<Eigen::Index>(idx[r]));
    }
    return out;
  }

  Dataset select_features(const std::vector<int>& cols) const {
    Dataset out;
    out.labels = labels;
    out.label_names = label_names;
    out.features.resize(features.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      out.features.col(static_cast<Eigen::Index>(c)) = features.col(cols[c]);
      out.feature_names.push_back(c < static_cast<std::size_t>(feature_names.size()) && cols[c] < static_cast<int>(feature_names.size())
                                      ? feature_names[static_cast<std::size_t>(cols[c])]
                                      : "f" + std::to_string(cols[c]));
    }
    return out;
  }
};

inline void validate(const Dataset& data) {
  if (data.features.rows() < 1) throw std::invalid_argument("dataset: needs at least one row");
  if (data.features.rows() != data.labels.rows())
    throw std::invalid_argument("dataset: features and labels disagree on row count");
  if (data.features.cols() < 1 || data.labels.cols() < 1)
    throw std::invalid_argument("dataset: feature and label dimensions must be >= 1");
  if (!data.features.allFinite() || !data.labels.allFinite())
    throw std::invalid_argument("dataset: contains NaN or Inf entries");
}

inline std::string dataset_fingerprint(const Dataset& data) {
  std::uint64_t h = fnv1a(data.features.data(), sizeof(double) * static_cast<std::size_t>(data.features.size()));
  h = fnv1a(data.labels.data(), sizeof(double) * static_cast<std::size_t>(data.labels.size()), h);
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// CSV ingestion. UTF-8, header row required, numeric cells only; a malformed
// row rejects the whole load.

struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::vector<std::string> label_columns;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

inline double parse_cell(const std::string& cell, std::size_t line_no) {
  std::size_t b = cell.find_first_not_of(" \t");
  if (b == std::string::npos)
    throw std::runtime_error("csv: empty cell at line " + std::to_string(line_no));
  std::size_t e = cell.find_last_not_of(" \t");
  double value = 0.0;
  const char* first = cell.data() + b;
  const char* last = cell.data() + e + 1;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last)
    throw std::runtime_error("csv: non-numeric cell '" + cell + "' at line " + std::to_string(line_no));
  return value;
}

}  // namespace detail

inline Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: missing header row in " + path.string());
  const std::vector<std::string> header = detail::split_csv_line(line);

  auto column_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      std::string h = header[i];
      const std::size_t b = h.find_first_not_of(" \t");
      const std::size_t e = h.find_last_not_of(" \t");
      if (b != std::string::npos) h = h.substr(b, e - b + 1);
      if (h == name) return i;
    }
    throw std::runtime_error("csv: schema column '" + name + "' not found in header of " + path.string());
  };

  std::vector<std::size_t> fcols, lcols;
  for (const auto& name : schema.feature_columns) fcols.push_back(column_of(name));
  for (const auto& name : schema.label_columns) lcols.push_back(column_of(name));
  if (fcols.empty() || lcols.empty())
    throw std::runtime_error("csv: schema must name at least one feature and one label column");

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("csv: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                               " cells, header has " + std::to_string(header.size()));
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) row[i] = detail::parse_cell(cells[i], line_no);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("csv: no data rows in " + path.string());

  Dataset data;
  data.feature_names = schema.feature_columns;
  data.label_names = schema.label_columns;
  data.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(fcols.size()));
  data.labels.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(lcols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < fcols.size(); ++c)
      data.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][fcols[c]];
    for (std::size_t c = 0; c < lcols.size(); ++c)
      data.labels(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][lcols[c]];
  }
  validate(data);  // rejects NaN/Inf cells that parsed as such
  return data;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path.string());
  for (std::size_t i = 0; i < data.feature_names.size(); ++i) out << (i ? "," : "") << data.feature_names[i];
  for (const auto& name : data.label_names) out << "," << name;
  out << "\n";
  for (Eigen::Index r = 0; r < data.n(); ++r) {
    for (Eigen::Index c = 0; c < data.feature_dim(); ++c) out << (c ? "," : "") << format_double(data.features(r, c));
    for (Eigen::Index c = 0; c < data.label_dim(); ++c) out << "," << format_double(data.labels(r, c));
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Standardization. Population-std convention (divide by n). Zero-variance
// columns keep their std stored as 1 and are flagged so the caller can warn.

struct ScalingParams {
  Eigen::VectorXd feature_mean, feature_std;
  Eigen::VectorXd label_mean, label_std;
  std::vector<int> constant_feature_columns;
  std::vector<int> constant_label_columns;
};

namespace detail {

inline void column_stats(const Eigen::MatrixXd& m, Eigen::VectorXd& mean, Eigen::VectorXd& std_out,
                         std::vector<int>& constant_cols) {
  const auto n = static_cast<double>(m.rows());
  mean = m.colwise().mean();
  std_out.resize(m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double var = (m.col(c).array() - mean(c)).square().sum() / n;
    double sd = std::sqrt(std::max(var, 0.0));
    if (sd <= 1e-12 * (1.0 + std::abs(mean(c)))) {
      constant_cols.push_back(static_cast<int>(c));
      sd = 1.0;
    }
    std_out(c) = sd;
  }
}

}  // namespace detail

inline ScalingParams scaling_from(const Dataset& data) {
  if (data.n() < 2) throw std::invalid_argument("standardize: needs at least two rows");
  ScalingParams p;
  detail::column_stats(data.features, p.feature_mean, p.feature_std, p.constant_feature_columns);
  detail::column_stats(data.labels, p.label_mean, p.label_std, p.constant_label_columns);
  return p;
}

inline Dataset apply_scaling(const Dataset& data, const ScalingParams& p) {
  Dataset out = data;
  out.features = (data.features.rowwise() - p.feature_mean.transpose()).array().rowwise() /
                 p.feature_std.transpose().array();
  out.labels = (data.labels.rowwise() - p.label_mean.transpose()).array().rowwise() /
               p.label_std.transpose().array();
  return out;
}

inline Dataset invert_scaling(const Dataset& data, const ScalingParams& p) {
  Dataset out = data;
  out.features = (data.features.array().rowwise() * p.feature_std.transpose().array()).matrix().rowwise() +
                 p.feature_mean.transpose();
  out.labels = (data.labels.array().rowwise() * p.label_std.transpose().array()).matrix().rowwise() +
               p.label_mean.transpose();
  return out;
}

inline std::pair<Dataset, ScalingParams> standardize(const Dataset& data) {
  ScalingParams p = scaling_from(data);
  return {apply_scaling(data, p), p};
}

// ---------------------------------------------------------------------------
// Seeded splitting into (train, cal, recal, test). Sizes are floor(f_i * n)
// with the remainder assigned to test, so calibration sets used for coverage
// guarantees are never inflated.

struct SplitSets {
  Dataset train, cal, recal, test;
  std::vector<std::size_t> train_idx, cal_idx, recal_idx, test_idx;
  std::uint64_t seed = 0;
  std::array<double, 4> fractions{};  // (train, cal, recal, test)
};

inline SplitSets split(const Dataset& data, const std::array<double, 4>& fractions, std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("split: fractions must be nonnegative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");

  const auto n = static_cast<std::size_t>(data.n());
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);

  std::array<std::size_t, 4> sizes{};
  for (int i = 0; i < 3; ++i) sizes[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::floor(fractions[static_cast<std::size_t>(i)] * static_cast<double>(n)));
  const std::size_t used = sizes[0] + sizes[1] + sizes[2];
  if (used > n) throw std::invalid_argument("split: fractions overflow row count");
  sizes[3] = n - used;  // floor(f_test * n) plus the remainder
  for (int i = 0; i < 4; ++i) {
    if (fractions[static_cast<std::size_t>(i)] > 0.0 && sizes[static_cast<std::size_t>(i)] == 0)
      throw std::invalid_argument("split: nonzero fraction received zero rows (n too small)");
  }

  SplitSets out;
  out.seed = seed;
  out.fractions = fractions;
  auto cursor = perm.begin();
  auto take = [&](std::size_t count) {
    std::vector<std::size_t> idx(cursor, cursor + static_cast<std::ptrdiff_t>(count));
    cursor += static_cast<std::ptrdiff_t>(count);
    return idx;
  };
  out.train_idx = take(sizes[0]);
  out.cal_idx = take(sizes[1]);
  out.recal_idx = take(sizes[2]);
  out.test_idx = take(sizes[3]);
  if (!out.train_idx.empty()) out.train = data.rows(out.train_idx);
  out.cal = data.rows(out.cal_idx);
  out.recal = data.rows(out.recal_idx);
  out.test = data.rows(out.test_idx);
  return out;
}

inline nlohmann::json split_index_json(const SplitSets& s) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["fractions"] = s.fractions;
  j["train"] = s.train_idx;
  j["cal"] = s.cal_idx;
  j["recal"] = s.recal_idx;
  j["test"] = s.test_idx;
  return j;
}

}  // namespace cpgen
