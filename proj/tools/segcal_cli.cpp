// Experiment runner for the segmentation-calibration loss library.
//
//   segcal run <spec-file>     execute every run in a spec file
//   segcal preset <name>       run a built-in experiment preset
//   segcal report <dir>        rebuild the comparison tables for a directory

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "segcal/experiment.hpp"

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> train_fraction;
  std::optional<std::string> out;
  int jobs = 1;
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--seed", ov.seed, "Override the seed of every run");
  cmd->add_option("--epochs", ov.epochs, "Override the epoch count of every run");
  cmd->add_option("--train-fraction", ov.train_fraction,
                  "Override the training-set fraction of every run");
  cmd->add_option("--jobs", ov.jobs, "Number of runs to execute in parallel")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--out", ov.out, "Output directory");
}

int execute(segcal::ExperimentSpec spec, const Overrides& ov) {
  if (ov.seed) segcal::override_seed(spec, *ov.seed);
  if (ov.epochs) segcal::override_epochs(spec, *ov.epochs);
  if (ov.train_fraction) segcal::override_train_fraction(spec, *ov.train_fraction);
  if (ov.out) spec.output_dir = *ov.out;

  const segcal::ExperimentResult result = segcal::run_experiment(spec, ov.jobs, &std::cout);
  for (const auto& outcome : result.outcomes)
    if (!outcome.ok)
      std::cerr << "run '" << outcome.name << "' diverged: " << outcome.error << "\n";
  std::cout << "report written to " << result.output_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration-aware segmentation losses: experiment runner"};
  app.require_subcommand(1);

  std::string spec_path;
  Overrides run_ov;
  CLI::App* run_cmd = app.add_subcommand("run", "Execute every run in a spec file");
  run_cmd->add_option("spec", spec_path, "Spec file (key=value sections or JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  add_override_flags(run_cmd, run_ov);

  std::string preset_name;
  Overrides preset_ov;
  CLI::App* preset_cmd = app.add_subcommand("preset", "Run a built-in experiment preset");
  preset_cmd->add_option("name", preset_name,
                         "paper-defaults, priors, penalties, target-space, sigma-sweep, "
                         "lambda-sweep or data-fraction")
      ->required();
  add_override_flags(preset_cmd, preset_ov);

  std::string report_dir;
  CLI::App* report_cmd = app.add_subcommand("report", "Rebuild comparison tables for a directory");
  report_cmd->add_option("dir", report_dir, "Experiment output directory")
      ->required()
      ->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return execute(segcal::parse_spec_file(spec_path), run_ov);
    if (preset_cmd->parsed()) return execute(segcal::experiment_preset(preset_name), preset_ov);
    if (report_cmd->parsed()) {
      const auto issues = segcal::write_report(report_dir);
      for (const auto& issue : issues)
        std::cerr << "skipped " << issue.run_dir << ": " << issue.reason << "\n";
      std::cout << "report written to " << report_dir << "\n";
      return 0;
    }
  } catch (const segcal::invalid_input& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
