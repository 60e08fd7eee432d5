// Command-line front end for the experiment pipeline.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fdlin/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kDesignFailure = 3, kIoError = 4 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> jobs;
};

fdlin::experiment::ExperimentConfig resolve(const Options& o) {
  auto cfg = fdlin::experiment::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.output = *o.out;
  if (o.jobs) cfg.jobs = *o.jobs;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-dependent ADC linearizer design and evaluation"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "experiment config (TOML, or JSON by extension)")->required();
    sub->add_option("--seed", opt.seed, "override the base seed");
    sub->add_option("--out", opt.out, "override the output directory");
    sub->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber);
  };
  auto* generate = app.add_subcommand("generate", "draw and calibrate the distortion model, write the signal manifest");
  auto* design = app.add_subcommand("design", "design one linearizer per grid point");
  auto* evaluate = app.add_subcommand("evaluate", "evaluate designed linearizers, write results.csv");
  auto* robustness = app.add_subcommand("robustness", "null-subcarrier, bandpass-noise and b_max perturbation checks");
  auto* complexity = app.add_subcommand("complexity", "print multiplication/addition counts for the grid");
  auto* sweep = app.add_subcommand("sweep", "generate, design and evaluate");
  for (auto* sub : {generate, design, evaluate, robustness, complexity, sweep}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  using namespace fdlin::experiment;
  try {
    const auto cfg = resolve(opt);
    std::size_t failures = 0;
    if (generate->parsed()) cmd_generate(cfg, std::cerr);
    if (design->parsed()) failures = cmd_design(cfg, std::cerr);
    if (evaluate->parsed()) cmd_evaluate(cfg, std::cerr);
    if (robustness->parsed()) cmd_robustness(cfg, std::cerr);
    if (complexity->parsed()) cmd_complexity(cfg, std::cout);
    if (sweep->parsed()) {
      cmd_generate(cfg, std::cerr);
      failures = cmd_design(cfg, std::cerr);
      cmd_evaluate(cfg, std::cerr);
    }
    return failures ? kDesignFailure : kOk;
  } catch (const fdlin::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const fdlin::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIoError;
  } catch (const fdlin::DesignError& e) {
    std::cerr << "design failure: " << e.what() << "\n";
    return kDesignFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
