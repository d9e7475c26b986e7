// cpgen CLI: synthetic data generation, config-driven experiment runs,
// report aggregation, and the built-in invariant suites.
//
// Exit codes: 0 success, 1 validation error (bad config/arguments),
// 2 runtime failure (a method cell failed, IO error, or a check suite failed).

#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cpgen/experiment.hpp"
#include "cpgen/selfcheck.hpp"
#include "cpgen/synthetic.hpp"
#include "json.hpp"

namespace {

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cpgen::ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw cpgen::ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return j;
}

int cmd_gen(const std::string& config_path, const std::string& output, std::optional<std::uint64_t> seed_override) {
  nlohmann::json j = load_json(config_path);
  cpgen::SyntheticSpec spec = cpgen::synthetic_spec_from_json(j);
  if (seed_override) spec.seed = *seed_override;
  const cpgen::Dataset data = cpgen::gen_synthetic(spec);
  cpgen::write_csv(data, output);
  std::cout << "wrote " << data.n() << " rows (" << data.feature_dim() << " features, " << data.label_dim()
            << " labels) to " << output << "\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& output_override,
            std::optional<std::uint64_t> seed_override) {
  cpgen::ExperimentConfig cfg = cpgen::parse_experiment_config(load_json(config_path));
  if (!output_override.empty()) cfg.output_dir = output_override;
  if (seed_override) cfg.seeds = {*seed_override};
  const cpgen::RunOutcome outcome = cpgen::run_experiment(cfg);
  std::cout << outcome.reports.size() << " (seed, method) cells finished, " << outcome.failures.size()
            << " failed; outputs in " << cfg.output_dir << "\n";
  for (const auto& f : outcome.failures)
    std::cerr << "failed: seed " << f.seed << ", method " << f.method << ": " << f.error << "\n";
  return outcome.failures.empty() ? 0 : 2;
}

int cmd_report(const std::string& dir) {
  cpgen::aggregate_reports_dir(dir);
  std::cout << "re-aggregated reports in " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prediction sets with valid coverage and optimized efficiency"};
  app.require_subcommand(1);

  std::string config_path, output;
  std::uint64_t seed_value = 0;
  bool seed_set = false;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset to CSV");
  gen->add_option("--config", config_path, "synthetic spec JSON")->required();
  gen->add_option("--output", output, "output CSV path")->required();
  gen->add_option("--seed-override", seed_value, "replace the spec's seed")->each([&](const std::string&) {
    seed_set = true;
  });

  auto* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("--config", config_path, "experiment config JSON")->required();
  run->add_option("--output", output, "override the config's output_dir");
  run->add_option("--seed-override", seed_value, "run a single seed instead of the config's list")
      ->each([&](const std::string&) { seed_set = true; });

  auto* report = app.add_subcommand("report", "re-aggregate existing reports in an output directory");
  report->add_option("--output", output, "experiment output directory")->required();

  auto* check = app.add_subcommand("check", "run the invariant/oracle suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const std::optional<std::uint64_t> seed_override =
        seed_set ? std::optional<std::uint64_t>(seed_value) : std::nullopt;
    if (gen->parsed()) return cmd_gen(config_path, output, seed_override);
    if (run->parsed()) return cmd_run(config_path, output, seed_override);
    if (report->parsed()) return cmd_report(output);
    if (check->parsed()) {
      const int failures = cpgen::selfcheck::run_all();
      if (failures) std::cerr << failures << " check suite(s) failed\n";
      return failures ? 2 : 0;
    }
  } catch (const cpgen::ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
