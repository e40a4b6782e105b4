#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gtlab/closedloop.hpp"
#include "gtlab/netgraph.hpp"
#include "gtlab/quadprob.hpp"
#include "gtlab/simulator.hpp"

namespace gtlab::experiment {

// Exit-code contract shared by all subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitAnalysis = 3;
inline constexpr int kExitDivergence = 4;

struct GraphSpec {
  bool use_preset = false;
  std::string preset;
  int n = 0;
  std::vector<std::pair<int, int>> edges;  // 0-based after parsing
};

struct WeightSpec {
  enum class Rule { kMetropolis, kNormalized, kRowOnly };
  Rule rule = Rule::kMetropolis;
  Eigen::MatrixXd raw;  // required for kNormalized and kRowOnly
};

struct ProblemSpec {
  enum class Source { kRandom, kFile, kExplicit };
  Source source = Source::kRandom;
  int N = 0, d = 0, p = 0;
  std::uint64_t seed = 0;
  std::string file;
  std::vector<Eigen::MatrixXd> C_list, Gamma_list;
  Eigen::VectorXd theta0;
};

struct GainSpec {
  enum class Kind { kGamma, kLambda, kKzZero };
  Kind kind = Kind::kGamma;
  double gamma = 0.0;
  Eigen::VectorXd lambda;
  double beta = 0.5;
};

struct InitCfg {
  enum class X0 { kZeros, kRandom, kGiven };
  X0 x0 = X0::kZeros;
  std::uint64_t x0_seed = 0;
  Eigen::VectorXd x0_value;
  enum class Tracker { kZZero, kZGiven, kSGradient, kSGiven };
  Tracker tracker = Tracker::kZZero;
  Eigen::VectorXd tracker_value;
  bool perturb_scalar = false;
  double perturb_value = 0.0;
  Eigen::VectorXd perturb_vector;
};

struct HorizonCfg {
  int t_max = 1000;
  double stop_tol = 1e-9;
};

struct SweepCfg {
  std::vector<double> grid;  // empty: derived from gamma_star
  double bracket_hi = 1.0;
};

struct VerifyCfg {
  std::vector<std::uint64_t> extra_seeds = {11, 22, 33};
};

struct ExperimentConfig {
  GraphSpec graph;
  WeightSpec weights;
  ProblemSpec problem;
  std::optional<GainSpec> gains;
  InitCfg init;
  HorizonCfg horizon;
  SweepCfg sweep;
  VerifyCfg verify;
  std::string out_dir = "out";
};

// Strict parse: unknown keys anywhere are rejected. Throws
// std::invalid_argument on any structural or type problem.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct CliOverrides {
  std::optional<std::uint64_t> seed;  // replaces problem.random.seed
  std::optional<std::string> out_dir;
};

void apply_overrides(ExperimentConfig& cfg, const CliOverrides& overrides);

// Weights, lifted weights at the problem dimension, and the problem itself.
struct BuiltInstance {
  netgraph::WeightPair weights;
  netgraph::LiftedWeights lifted;
  quadprob::QuadraticProblem problem;
};

BuiltInstance build_instance(const ExperimentConfig& cfg);
closedloop::GainSet build_gain_set(const GainSpec& spec,
                                   const netgraph::LiftedWeights& lifted,
                                   const quadprob::QuadraticProblem& problem);
simulator::Stepsize build_stepsize(const GainSpec& spec, int N, int d);
simulator::InitSpec build_init(const InitCfg& cfg, int N, int d);

// Subcommands. Each writes a deterministic report to `out` (and report/CSV
// files under cfg.out_dir) and returns its exit code.
int cmd_gen(const ExperimentConfig& cfg, std::ostream& out);
int cmd_analyze(const ExperimentConfig& cfg, std::ostream& out);
int cmd_simulate(const ExperimentConfig& cfg, std::ostream& out);
int cmd_sweep(const ExperimentConfig& cfg, std::ostream& out);
int cmd_verify(const ExperimentConfig& cfg, std::ostream& out);

}  // namespace gtlab::experiment
