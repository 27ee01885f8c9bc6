#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "iwvi/config.hpp"
#include "iwvi/experiments.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitDataset = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Importance-weighted variational inference experiments"};
  app.set_version_flag("--version", iwvi::library_version());

  std::string experiment;
  std::string config_path;
  std::string M_list;
  std::string family;
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  app.add_option("experiment", experiment, "oneD, dirichlet, clutter or logreg")
      ->required()
      ->check(CLI::IsMember({"oneD", "dirichlet", "clutter", "logreg"}));
  app.add_option("--config", config_path, "JSON config file")->required();
  auto* M_opt = app.add_option("--M", M_list, "comma-separated M values, e.g. 1,5,20");
  auto* family_opt = app.add_option("--family", family, "gaussian, student_t or both");
  auto* seed_opt = app.add_option("--seed", seed, "base seed");
  app.add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  iwvi::ExperimentConfig config;
  try {
    iwvi::ConfigOverrides overrides;
    overrides.experiment = experiment;
    if (*M_opt) overrides.M_set = iwvi::parse_int_list(M_list);
    if (*family_opt) overrides.family = family;
    if (*seed_opt) overrides.seed = seed;
    config = iwvi::load_config(config_path, overrides);
  } catch (const iwvi::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  if (!config.dataset_path.empty() && !std::filesystem::exists(config.dataset_path)) {
    std::cerr << "error: dataset file not found: " << config.dataset_path << '\n';
    return kExitDataset;
  }

  try {
    const iwvi::RunOutput out = iwvi::run_to_directory(config, out_dir);
    std::cerr << "wrote " << out.n_rows << " rows to " << out.csv_path.string() << " in " << out.wall_seconds
              << " s\n";
  } catch (const iwvi::DatasetMissing& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDataset;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
