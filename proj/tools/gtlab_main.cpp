// Command-line front end for the gradient tracking laboratory: generate
// instances, analyze the closed loop, simulate the distributed iteration,
// sweep stepsizes and run the cross-module verification suite, all driven
// by a single JSON config for reproducibility.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gtlab/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "experiment config (JSON)")
      ->required();
  sub->add_option("--seed", args.seed,
                  "override the random-problem seed in the config");
  sub->add_option("--out", args.out_dir, "override the output directory");
}

int dispatch(const std::string& name, const CommonArgs& args) {
  using namespace gtlab::experiment;
  ExperimentConfig cfg = load_config(args.config_path);
  apply_overrides(cfg, CliOverrides{args.seed, args.out_dir});
  if (name == "gen") return cmd_gen(cfg, std::cout);
  if (name == "analyze") return cmd_analyze(cfg, std::cout);
  if (name == "simulate") return cmd_simulate(cfg, std::cout);
  if (name == "sweep") return cmd_sweep(cfg, std::cout);
  return cmd_verify(cfg, std::cout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gtlab: gradient tracking laboratory for distributed "
               "quadratic optimization"};
  app.require_subcommand(1);

  CommonArgs args;
  const char* subcommands[] = {"gen", "analyze", "simulate", "sweep",
                               "verify"};
  const char* descriptions[] = {
      "generate and write problem + weight files",
      "closed-loop stability, reachability and regulator report",
      "run the distributed iteration and write trajectory CSVs",
      "critical-stepsize bisection and admissibility grid",
      "cross-module property suite on the configured instance"};
  for (int i = 0; i < 5; ++i)
    add_common(app.add_subcommand(subcommands[i], descriptions[i]), args);

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return dispatch(name, args);
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return gtlab::experiment::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
