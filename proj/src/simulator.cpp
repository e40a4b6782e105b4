#include "gtlab/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "gtlab/textio.hpp"

namespace gtlab::simulator {

namespace {

constexpr double kDivergenceGuard = 1e12;

Eigen::VectorXd stack_gradients(const quadprob::QuadraticProblem& prob,
                                const Eigen::VectorXd& x) {
  return prob.stacked_output(x);
}

}  // namespace

Stepsize Stepsize::scalar(double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("stepsize must be positive");
  Stepsize s;
  s.scalar_ = true;
  s.gamma_ = gamma;
  return s;
}

Stepsize Stepsize::diagonal(Eigen::VectorXd entries) {
  if (entries.size() == 0 || !(entries.minCoeff() > 0.0))
    throw std::invalid_argument("stepsize entries must be positive");
  Stepsize s;
  s.scalar_ = false;
  s.diag_ = std::move(entries);
  return s;
}

Stepsize Stepsize::from_vector(const Eigen::VectorXd& v, int N, int d) {
  if (v.size() == N && d > 1) {
    Eigen::VectorXd full(N * d);
    for (int i = 0; i < N; ++i) full.segment(i * d, d).setConstant(v(i));
    return diagonal(full);
  }
  if (v.size() == static_cast<Eigen::Index>(N) * d) return diagonal(v);
  throw std::invalid_argument("stepsize vector must have N or N*d entries");
}

double Stepsize::scalar_value() const {
  if (!scalar_) throw std::logic_error("stepsize is diagonal, not scalar");
  return gamma_;
}

Eigen::VectorXd Stepsize::entries(int N, int d) const {
  if (scalar_) return Eigen::VectorXd::Constant(N * d, gamma_);
  if (diag_.size() != static_cast<Eigen::Index>(N) * d)
    throw std::invalid_argument("diagonal stepsize has wrong length");
  return diag_;
}

AgentView make_view(const quadprob::QuadraticProblem& prob,
                    const netgraph::WeightPair& weights, const SimState& state,
                    int agent, MessageNoise* noise) {
  const int d = prob.dim();
  const auto& nbrs = weights.graph.neighbors(agent);
  AgentView view;
  view.agent = agent;
  view.x_self = state.x.segment(agent * d, d);
  view.tracker_self = state.tracker.segment(agent * d, d);
  view.w_row.reserve(nbrs.size());
  view.w_col.reserve(nbrs.size());
  for (int j : nbrs) {
    view.w_row.push_back(weights.A(agent, j));
    view.w_col.push_back(weights.A_tilde(agent, j));
    Eigen::VectorXd xj = state.x.segment(j * d, d);
    Eigen::VectorXd tj = state.tracker.segment(j * d, d);
    Eigen::VectorXd yj = prob.local_gradient(j, xj);
    if (noise != nullptr && j != agent) {
      noise->apply(xj);
      noise->apply(tj);
      noise->apply(yj);
    }
    view.x_in.push_back(std::move(xj));
    view.tracker_in.push_back(std::move(tj));
    view.y_in.push_back(std::move(yj));
  }
  return view;
}

AgentUpdate agent_step_s(const quadprob::QuadraticProblem& prob,
                         const AgentView& view, const Eigen::VectorXd& step_i) {
  const int d = prob.dim();
  Eigen::VectorXd x_mix = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd s_mix = Eigen::VectorXd::Zero(d);
  for (std::size_t k = 0; k < view.x_in.size(); ++k) {
    x_mix += view.w_row[k] * view.x_in[k];
    s_mix += view.w_col[k] * view.tracker_in[k];
  }
  AgentUpdate up;
  up.x_next = x_mix - step_i.cwiseProduct(view.tracker_self);
  up.tracker_next = s_mix + prob.local_gradient(view.agent, up.x_next) -
                    prob.local_gradient(view.agent, view.x_self);
  return up;
}

AgentUpdate agent_step_z(const quadprob::QuadraticProblem& prob,
                         const AgentView& view, const Eigen::VectorXd& step_i) {
  const int d = prob.dim();
  Eigen::VectorXd x_mix = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd zy_mix = Eigen::VectorXd::Zero(d);
  for (std::size_t k = 0; k < view.x_in.size(); ++k) {
    x_mix += view.w_row[k] * view.x_in[k];
    zy_mix += view.w_col[k] * (view.tracker_in[k] + view.y_in[k]);
  }
  const Eigen::VectorXd own_y =
      prob.local_gradient(view.agent, view.x_self);
  AgentUpdate up;
  up.x_next = x_mix - step_i.cwiseProduct(view.tracker_self + own_y);
  up.tracker_next = zy_mix - own_y;
  return up;
}

namespace {

SimState step_round(const quadprob::QuadraticProblem& prob,
                    const netgraph::WeightPair& weights, const Stepsize& step,
                    const SimState& state, StepForm form, MessageNoise* noise) {
  const int N = prob.agents();
  const int d = prob.dim();
  if (weights.graph.size() != N)
    throw std::invalid_argument("weights do not match problem size");
  if (state.x.size() != N * d || state.tracker.size() != N * d)
    throw std::invalid_argument("state has wrong dimension");
  const Eigen::VectorXd lam = step.entries(N, d);
  SimState next;
  next.x.resize(N * d);
  next.tracker.resize(N * d);
  // Read phase against `state`, write phase into `next`; agent order is
  // immaterial apart from the noise draw sequence.
  for (int i = 0; i < N; ++i) {
    const AgentView view = make_view(prob, weights, state, i, noise);
    const Eigen::VectorXd step_i = lam.segment(i * d, d);
    const AgentUpdate up = (form == StepForm::kS)
                               ? agent_step_s(prob, view, step_i)
                               : agent_step_z(prob, view, step_i);
    next.x.segment(i * d, d) = up.x_next;
    next.tracker.segment(i * d, d) = up.tracker_next;
  }
  return next;
}

// Shared recording for the per-agent and dense paths. States come in the
// z convention (the s series is reconstructed), except that an s-form run
// passes its stored s values through directly.
class Recorder {
 public:
  Recorder(const quadprob::QuadraticProblem& prob, int t_max)
      : N_(prob.agents()),
        d_(prob.dim()),
        theta_star_(prob.optimal_solution()) {
    traj_.N = N_;
    traj_.d = d_;
    const int nd = N_ * d_;
    traj_.x.resize(t_max + 1, nd);
    traj_.z.resize(t_max + 1, nd);
    traj_.s.resize(t_max + 1, nd);
    traj_.y.resize(t_max + 1, nd);
  }

  void record(int t, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
              const Eigen::VectorXd& z, const Eigen::VectorXd& s) {
    traj_.x.row(t) = x.transpose();
    traj_.z.row(t) = z.transpose();
    traj_.s.row(t) = s.transpose();
    traj_.y.row(t) = y.transpose();

    Eigen::VectorXd xbar = Eigen::VectorXd::Zero(d_);
    for (int i = 0; i < N_; ++i) xbar += x.segment(i * d_, d_);
    xbar /= N_;
    double cons = 0.0, opt = 0.0, trk = 0.0;
    Eigen::VectorXd sum_sy = Eigen::VectorXd::Zero(d_);
    for (int i = 0; i < N_; ++i) {
      cons = std::max(cons, (x.segment(i * d_, d_) - xbar).norm());
      opt = std::max(opt, (x.segment(i * d_, d_) - theta_star_).norm());
      trk = std::max(trk, s.segment(i * d_, d_).norm());
      sum_sy += s.segment(i * d_, d_) - y.segment(i * d_, d_);
    }
    if (t == 0) conservation_base_ = sum_sy;
    traj_.consensus_error.push_back(cons);
    traj_.optimality_error.push_back(opt);
    traj_.conservation_residual.push_back(
        (sum_sy - conservation_base_).cwiseAbs().maxCoeff());
    traj_.tracker_mean_error.push_back(sum_sy.cwiseAbs().maxCoeff() / N_);
    traj_.tracker_norm.push_back(trk);
    rows_ = t + 1;
  }

  double last_optimality_error() const {
    return traj_.optimality_error.back();
  }

  Trajectory take(RunStatus status, std::string diagnostic) {
    traj_.status = status;
    traj_.diagnostic = std::move(diagnostic);
    const int nd = N_ * d_;
    traj_.x.conservativeResize(rows_, nd);
    traj_.z.conservativeResize(rows_, nd);
    traj_.s.conservativeResize(rows_, nd);
    traj_.y.conservativeResize(rows_, nd);
    return std::move(traj_);
  }

 private:
  int N_, d_;
  Eigen::VectorXd theta_star_;
  Eigen::VectorXd conservation_base_;
  Trajectory traj_;
  int rows_ = 0;
};

bool diverged(const Eigen::VectorXd& x, const Eigen::VectorXd& tracker) {
  const double norm_now =
      std::max(x.cwiseAbs().maxCoeff(), tracker.cwiseAbs().maxCoeff());
  return !std::isfinite(norm_now) || norm_now > kDivergenceGuard;
}

std::string divergence_note(int t) {
  return "state norm exceeded 1e12 at t = " + std::to_string(t) +
         "; last good step t = " + std::to_string(t - 1);
}

Trajectory run_impl(const quadprob::QuadraticProblem& prob,
                    const netgraph::WeightPair& weights, const Stepsize& step,
                    const InitSpec& init, int t_max, double stop_tol,
                    StepForm form, MessageNoise* noise) {
  if (t_max < 0) throw std::invalid_argument("t_max must be >= 0");
  Recorder rec(prob, t_max);

  SimState state = init.materialize(prob);  // z convention
  if (form == StepForm::kS)
    state.tracker += stack_gradients(prob, state.x);

  auto record_state = [&](int t, const SimState& st) {
    const Eigen::VectorXd y = stack_gradients(prob, st.x);
    if (form == StepForm::kS)
      rec.record(t, st.x, y, st.tracker - y, st.tracker);
    else
      rec.record(t, st.x, y, st.tracker, st.tracker + y);
  };

  record_state(0, state);
  for (int t = 1; t <= t_max; ++t) {
    state = step_round(prob, weights, step, state, form, noise);
    record_state(t, state);
    if (diverged(state.x, state.tracker))
      return rec.take(RunStatus::kDiverged, divergence_note(t));
    if (stop_tol > 0.0 && rec.last_optimality_error() < stop_tol)
      return rec.take(RunStatus::kConverged, "");
  }
  return rec.take(RunStatus::kHorizonReached, "");
}

}  // namespace

Trajectory run_dense(const quadprob::QuadraticProblem& prob,
                     const Eigen::MatrixXd& F, const Eigen::MatrixXd& G,
                     const InitSpec& init, int t_max, double stop_tol) {
  if (t_max < 0) throw std::invalid_argument("t_max must be >= 0");
  const int nd = prob.agents() * prob.dim();
  if (F.rows() != 2 * nd || F.cols() != 2 * nd || G.rows() != 2 * nd ||
      G.cols() != prob.offset_dim())
    throw std::invalid_argument("closed-loop matrices have wrong dimensions");
  Recorder rec(prob, t_max);

  const SimState init_state = init.materialize(prob);
  Eigen::VectorXd state(2 * nd);
  state << init_state.x, init_state.tracker;
  const Eigen::VectorXd drive = G * prob.theta0();

  auto record_state = [&](int t) {
    const Eigen::VectorXd x = state.head(nd);
    const Eigen::VectorXd z = state.tail(nd);
    const Eigen::VectorXd y = stack_gradients(prob, x);
    rec.record(t, x, y, z, z + y);
  };

  record_state(0);
  for (int t = 1; t <= t_max; ++t) {
    state = (F * state + drive).eval();
    record_state(t);
    if (diverged(state.head(nd), state.tail(nd)))
      return rec.take(RunStatus::kDiverged, divergence_note(t));
    if (stop_tol > 0.0 && rec.last_optimality_error() < stop_tol)
      return rec.take(RunStatus::kConverged, "");
  }
  return rec.take(RunStatus::kHorizonReached, "");
}

SimState step_s_form(const quadprob::QuadraticProblem& prob,
                     const netgraph::WeightPair& weights, const Stepsize& step,
                     const SimState& state, MessageNoise* noise) {
  return step_round(prob, weights, step, state, StepForm::kS, noise);
}

SimState step_z_form(const quadprob::QuadraticProblem& prob,
                     const netgraph::WeightPair& weights, const Stepsize& step,
                     const SimState& state, MessageNoise* noise) {
  return step_round(prob, weights, step, state, StepForm::kZ, noise);
}

SimState InitSpec::materialize(const quadprob::QuadraticProblem& prob) const {
  const int nd = prob.agents() * prob.dim();
  SimState st;
  switch (x0_mode) {
    case X0Mode::kZeros:
      st.x = Eigen::VectorXd::Zero(nd);
      break;
    case X0Mode::kRandom: {
      std::mt19937_64 rng(x0_seed);
      std::normal_distribution<double> gauss(0.0, 1.0);
      st.x.resize(nd);
      for (int i = 0; i < nd; ++i) st.x(i) = gauss(rng);
      break;
    }
    case X0Mode::kGiven:
      if (x0_value.size() != nd)
        throw std::invalid_argument("x0 has wrong dimension");
      st.x = x0_value;
      break;
  }
  switch (tracker_mode) {
    case TrackerMode::kZZero:
      st.tracker = Eigen::VectorXd::Zero(nd);
      break;
    case TrackerMode::kZGiven:
      if (tracker_value.size() != nd)
        throw std::invalid_argument("z0 has wrong dimension");
      st.tracker = tracker_value;
      break;
    case TrackerMode::kSGradient:
      // s_i(0) = ∇f_i(x_i(0))  ⇔  z(0) = 0
      st.tracker = Eigen::VectorXd::Zero(nd);
      break;
    case TrackerMode::kSGiven:
      if (tracker_value.size() != nd)
        throw std::invalid_argument("s0 has wrong dimension");
      st.tracker = tracker_value - prob.stacked_output(st.x);
      break;
  }
  if (z_perturbation.size() != 0) {
    if (z_perturbation.size() != nd)
      throw std::invalid_argument("perturbation has wrong dimension");
    st.tracker += z_perturbation;
  }
  return st;
}

Trajectory run(const quadprob::QuadraticProblem& prob,
               const netgraph::WeightPair& weights, const Stepsize& step,
               const InitSpec& init, int t_max, double stop_tol,
               StepForm form) {
  return run_impl(prob, weights, step, init, t_max, stop_tol, form, nullptr);
}

double conservation_residual_at(const Trajectory& traj, int t) {
  if (t < 1 || t > traj.steps())
    throw std::invalid_argument("step index out of range");
  return traj.conservation_residual[t];
}

double tracker_limit_check(const Trajectory& traj, double tail_fraction) {
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0))
    throw std::invalid_argument("tail_fraction must lie in (0, 1]");
  const int total = traj.steps() + 1;
  const int start =
      std::max(0, total - std::max(1, static_cast<int>(tail_fraction * total)));
  double worst = 0.0;
  for (int t = start; t < total; ++t)
    worst = std::max(worst, traj.tracker_norm[t]);
  return worst;
}

Trajectory noise_probe(const quadprob::QuadraticProblem& prob,
                       const netgraph::WeightPair& weights,
                       const Stepsize& step, const InitSpec& init,
                       double noise_level, int t_max, std::uint64_t seed) {
  if (noise_level < 0.0)
    throw std::invalid_argument("noise level must be >= 0");
  MessageNoise noise(noise_level, seed);
  return run_impl(prob, weights, step, init, t_max, /*stop_tol=*/0.0,
                  StepForm::kZ, noise_level > 0.0 ? &noise : nullptr);
}

double fit_decay_rate(const std::vector<double>& series, double floor_value,
                      double ceiling_value) {
  double sum_t = 0, sum_y = 0, sum_tt = 0, sum_ty = 0;
  int count = 0;
  for (std::size_t t = 0; t < series.size(); ++t) {
    if (series[t] > floor_value && series[t] < ceiling_value) {
      const double y = std::log(series[t]);
      sum_t += t;
      sum_y += y;
      sum_tt += static_cast<double>(t) * t;
      sum_ty += t * y;
      ++count;
    }
  }
  if (count < 2) return std::numeric_limits<double>::quiet_NaN();
  const double denom = count * sum_tt - sum_t * sum_t;
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::exp((count * sum_ty - sum_t * sum_y) / denom);
}

void write_trajectory_csv(const std::filesystem::path& path,
                          const Trajectory& traj, bool header_only) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "t,agent";
  for (const char* name : {"x", "z", "s", "y"})
    for (int k = 1; k <= traj.d; ++k) out << ',' << name << '_' << k;
  out << '\n';
  if (!header_only) {
    for (int t = 0; t <= traj.steps(); ++t) {
      for (int i = 0; i < traj.N; ++i) {
        out << t << ',' << i + 1;
        for (const Eigen::MatrixXd* m : {&traj.x, &traj.z, &traj.s, &traj.y})
          for (int k = 0; k < traj.d; ++k)
            out << ',' << textio::fmt17((*m)(t, i * traj.d + k));
        out << '\n';
      }
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_summary_csv(const std::filesystem::path& path,
                       const Trajectory& traj, bool header_only) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "t,consensus_error,optimality_error,conservation_residual,"
         "tracker_norm\n";
  if (!header_only) {
    for (int t = 0; t <= traj.steps(); ++t) {
      out << t << ',' << textio::fmt17(traj.consensus_error[t]) << ','
          << textio::fmt17(traj.optimality_error[t]) << ','
          << textio::fmt17(traj.conservation_residual[t]) << ','
          << textio::fmt17(traj.tracker_norm[t]) << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace gtlab::simulator
