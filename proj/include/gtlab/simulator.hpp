#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gtlab/netgraph.hpp"
#include "gtlab/quadprob.hpp"

namespace gtlab::simulator {

// Scalar stepsize γ or per-entry positive diagonal Λ of size Nd.
class Stepsize {
 public:
  static Stepsize scalar(double gamma);
  static Stepsize diagonal(Eigen::VectorXd entries);
  // Accepts a length-N vector (one stepsize per agent, replicated across the
  // d components) or a full length-Nd vector.
  static Stepsize from_vector(const Eigen::VectorXd& v, int N, int d);

  bool is_scalar() const { return scalar_; }
  double scalar_value() const;
  // Materialized diagonal of Λ, length Nd.
  Eigen::VectorXd entries(int N, int d) const;

 private:
  bool scalar_ = true;
  double gamma_ = 0.0;
  Eigen::VectorXd diag_;
};

// Stacked simulation state. `tracker` holds s or z depending on which
// iteration form is being stepped; z = s − ∇F(x) ties the two together.
struct SimState {
  Eigen::VectorXd x;        // Nd
  Eigen::VectorXd tracker;  // Nd
};

enum class StepForm { kZ, kS };

// Uniform ±level perturbation applied per received component; level 0 is a
// strict no-op (no draws consumed).
class MessageNoise {
 public:
  MessageNoise(double level, std::uint64_t seed) : level_(level), rng_(seed) {}
  double level() const { return level_; }
  void apply(Eigen::VectorXd& v) {
    if (level_ == 0.0) return;
    std::uniform_real_distribution<double> u(-level_, level_);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += u(rng_);
  }

 private:
  double level_;
  std::mt19937_64 rng_;
};

// Everything agent i can read in one round: its own block plus the messages
// received from neighbors (weights and state blocks, self entry included,
// in sorted neighbor order). Agent updates take only this view, so locality
// is structural rather than a convention.
struct AgentView {
  int agent = 0;
  Eigen::VectorXd x_self, tracker_self;
  std::vector<double> w_row;    // a_ij over neighbors(i)
  std::vector<double> w_col;    // ã_ij over neighbors(i)
  std::vector<Eigen::VectorXd> x_in, tracker_in, y_in;
};

// Noise, when present, is applied to blocks received from j ≠ i.
AgentView make_view(const quadprob::QuadraticProblem& prob,
                    const netgraph::WeightPair& weights, const SimState& state,
                    int agent, MessageNoise* noise = nullptr);

struct AgentUpdate {
  Eigen::VectorXd x_next, tracker_next;
};

// x_i⁺ = Σ a_ij x_j − Λ_i s_i;  s_i⁺ = Σ ã_ij s_j + ∇f_i(x_i⁺) − ∇f_i(x_i)
AgentUpdate agent_step_s(const quadprob::QuadraticProblem& prob,
                         const AgentView& view, const Eigen::VectorXd& step_i);
// x_i⁺ = Σ a_ij x_j − Λ_i (z_i + ∇f_i(x_i));
// z_i⁺ = Σ ã_ij z_j + Σ ã_ij ∇f_j(x_j) − ∇f_i(x_i)
AgentUpdate agent_step_z(const quadprob::QuadraticProblem& prob,
                         const AgentView& view, const Eigen::VectorXd& step_i);

// Synchronous round: every agent reads views of the state at t, writes into
// t+1. The result is independent of agent processing order.
SimState step_s_form(const quadprob::QuadraticProblem& prob,
                     const netgraph::WeightPair& weights, const Stepsize& step,
                     const SimState& state, MessageNoise* noise = nullptr);
SimState step_z_form(const quadprob::QuadraticProblem& prob,
                     const netgraph::WeightPair& weights, const Stepsize& step,
                     const SimState& state, MessageNoise* noise = nullptr);

// Initial condition specification. Exactly one tracker convention applies:
// a z-value (default zero, the initialization that reaches the optimum) or
// an s-value (default s_i(0) = ∇f_i(x_i(0)), the same thing in the other
// coordinates). The optional perturbation is added to z(0) for biased-start
// experiments.
struct InitSpec {
  enum class X0Mode { kZeros, kRandom, kGiven };
  enum class TrackerMode { kZZero, kZGiven, kSGradient, kSGiven };

  X0Mode x0_mode = X0Mode::kZeros;
  std::uint64_t x0_seed = 0;
  Eigen::VectorXd x0_value;

  TrackerMode tracker_mode = TrackerMode::kZZero;
  Eigen::VectorXd tracker_value;

  Eigen::VectorXd z_perturbation;  // empty = none

  // z-form state; s-form callers convert via s = z + ∇F(x).
  SimState materialize(const quadprob::QuadraticProblem& prob) const;
};

enum class RunStatus { kConverged, kHorizonReached, kDiverged };

// Time-indexed record of a run. Row t of each matrix is the stacked value
// at step t. Error series use the Euclidean norm per agent block and the
// max over agents; algebraic residuals use the max-abs norm.
struct Trajectory {
  int N = 0, d = 0;
  RunStatus status = RunStatus::kHorizonReached;
  std::string diagnostic;
  Eigen::MatrixXd x, z, s, y;  // (T+1) × Nd
  std::vector<double> consensus_error;        // max_i |x_i − x̄|
  std::vector<double> optimality_error;       // max_i |x_i − θ*|
  std::vector<double> conservation_residual;  // |Σ(s−y)(t) − Σ(s−y)(0)|∞
  std::vector<double> tracker_mean_error;     // |Σs/N − Σy/N|∞
  std::vector<double> tracker_norm;           // max_i |s_i|

  int steps() const { return static_cast<int>(x.rows()) - 1; }
};

// Iterate until t_max or optimality_error < stop_tol (stop_tol ≤ 0 disables
// the convergence stop). Aborts with status kDiverged once the state ∞-norm
// exceeds 1e12. The z form is the reference path; the s series of a z run
// is reconstructed as z + ∇F(x) and vice versa.
Trajectory run(const quadprob::QuadraticProblem& prob,
               const netgraph::WeightPair& weights, const Stepsize& step,
               const InitSpec& init, int t_max, double stop_tol,
               StepForm form = StepForm::kZ);

// Dense closed-loop iteration [x; z]⁺ = F [x; z] + G θ₀ with the same
// recording, stop and guard rules as run(). Independent of the per-agent
// message path, so the two can be checked against each other.
Trajectory run_dense(const quadprob::QuadraticProblem& prob,
                     const Eigen::MatrixXd& F, const Eigen::MatrixXd& G,
                     const InitSpec& init, int t_max, double stop_tol);

// |[Σ s_i − Σ ∇f_i(x_i)](t) − [same](0)|∞ ; t must index a recorded step.
double conservation_residual_at(const Trajectory& traj, int t);

// Max over the trailing `tail_fraction` of recorded steps of max_i |s_i(t)|.
double tracker_limit_check(const Trajectory& traj, double tail_fraction);

// run() with i.i.d. uniform ±noise_level injected into every exchanged
// message block; level 0 reproduces run() bit for bit.
Trajectory noise_probe(const quadprob::QuadraticProblem& prob,
                       const netgraph::WeightPair& weights,
                       const Stepsize& step, const InitSpec& init,
                       double noise_level, int t_max, std::uint64_t seed);

// Least-squares slope of ln(series) over samples with
// floor_value < series[t] < ceiling_value; returns e^slope (NaN if fewer
// than two usable points).
double fit_decay_rate(const std::vector<double>& series, double floor_value,
                      double ceiling_value);

// Long format: t,agent,x_1..x_d,z_1..z_d,s_1..s_d,y_1..y_d (agent 1-based).
void write_trajectory_csv(const std::filesystem::path& path,
                          const Trajectory& traj, bool header_only = false);
// t,consensus_error,optimality_error,conservation_residual,tracker_norm
void write_summary_csv(const std::filesystem::path& path,
                       const Trajectory& traj, bool header_only = false);

}  // namespace gtlab::simulator
