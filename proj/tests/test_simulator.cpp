#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "gtlab/closedloop.hpp"
#include "gtlab/lingebra.hpp"
#include "gtlab/netgraph.hpp"
#include "gtlab/quadprob.hpp"
#include "gtlab/simulator.hpp"

using namespace gtlab;
using simulator::InitSpec;
using simulator::SimState;
using simulator::StepForm;
using simulator::Stepsize;

namespace {

Eigen::MatrixXd scalar_matrix(double v) {
  Eigen::MatrixXd m(1, 1);
  m << v;
  return m;
}

Eigen::VectorXd scalar_vector(double v) {
  Eigen::VectorXd x(1);
  x << v;
  return x;
}

// C = (1, 1), Γ = (2, 0), θ₀ = 1 on the two-agent complete graph: θ* = 1.
struct TwoAgent {
  quadprob::QuadraticProblem prob = quadprob::make_problem(
      {scalar_matrix(1), scalar_matrix(1)},
      {scalar_matrix(2), scalar_matrix(0)}, scalar_vector(1));
  netgraph::WeightPair weights =
      netgraph::metropolis_weights(netgraph::preset_graph("complete", 2));
};

struct Instance {
  netgraph::WeightPair weights;
  netgraph::LiftedWeights lifted;
  quadprob::QuadraticProblem problem;
};

Instance random_instance(int N, int d, int p, std::uint64_t seed) {
  const netgraph::Graph g = netgraph::random_connected_graph(N, 0.4, seed);
  Instance inst{netgraph::normalized_weight_pair(
                    g, netgraph::random_positive_raw(g, seed + 7)),
                {},
                quadprob::random_problem(N, d, p, seed + 1000)};
  inst.lifted = netgraph::lift(inst.weights, d);
  return inst;
}

double trajectory_gap(const simulator::Trajectory& a,
                      const simulator::Trajectory& b) {
  REQUIRE(a.x.rows() == b.x.rows());
  return std::max((a.x - b.x).cwiseAbs().maxCoeff(),
                  (a.z - b.z).cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("single agent reduces to gradient descent with a delayed tracker") {
  const double c = 1.5, gamma = 0.2, theta0 = 3.0;
  const auto prob = quadprob::make_problem({scalar_matrix(c)},
                                           {scalar_matrix(1)},
                                           scalar_vector(theta0));
  const auto w = netgraph::metropolis_weights(netgraph::build_graph(1, {}));
  SimState st;
  st.x = scalar_vector(10.0);
  st.tracker = prob.local_gradient(0, st.x);  // s(0) = ∇f(x(0))
  double x_hand = 10.0;
  for (int t = 0; t < 30; ++t) {
    st = simulator::step_s_form(prob, w, Stepsize::scalar(gamma), st);
    // Hand iteration: x⁺ = x − γ∇f(x) once the tracker has locked on.
    x_hand = x_hand - gamma * c * (x_hand - theta0);
    CHECK(std::abs(st.x(0) - x_hand) <= 1e-12 * std::abs(x_hand) + 1e-12);
    CHECK(std::abs(st.tracker(0) - prob.local_gradient(0, st.x)(0)) <= 1e-12);
  }
}

TEST_CASE("single agent at its optimum keeps a vanishing tracker") {
  const auto prob = quadprob::make_problem({scalar_matrix(2)},
                                           {scalar_matrix(1)},
                                           scalar_vector(3));
  const auto w = netgraph::metropolis_weights(netgraph::build_graph(1, {}));
  InitSpec init;
  init.x0_mode = InitSpec::X0Mode::kGiven;
  init.x0_value = prob.optimal_solution();
  const auto traj =
      simulator::run(prob, w, Stepsize::scalar(0.2), init, 50, 0.0);
  CHECK(simulator::tracker_limit_check(traj, 1.0) <= 1e-14);
  CHECK(traj.optimality_error.back() <= 1e-14);
}

TEST_CASE("consensual state with a zero tracker is a fixed point") {
  const auto inst = random_instance(4, 2, 2, 21);
  const int nd = 8;
  SimState st;
  st.x.resize(nd);
  for (int i = 0; i < 4; ++i)
    st.x.segment(i * 2, 2) = Eigen::Vector2d(0.3, -1.1);
  st.tracker = Eigen::VectorXd::Zero(nd);
  const SimState next =
      simulator::step_s_form(inst.problem, inst.weights,
                             Stepsize::scalar(0.1), st);
  CHECK((next.x - st.x).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(next.tracker.cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("z-form fixed points: shared-center case and general equilibrium") {
  // When every local cost is centered on the same point, each local
  // gradient vanishes at θ*, so z ≡ 0 at consensus is a fixed point.
  const auto shared = quadprob::make_problem(
      {scalar_matrix(2), scalar_matrix(1), scalar_matrix(3)},
      {scalar_matrix(1), scalar_matrix(1), scalar_matrix(1)},
      scalar_vector(4));
  const auto w3 =
      netgraph::metropolis_weights(netgraph::preset_graph("path", 3));
  SimState st;
  st.x = Eigen::VectorXd::Constant(3, 4.0);  // θ* = 4
  st.tracker = Eigen::VectorXd::Zero(3);
  const SimState next =
      simulator::step_z_form(shared, w3, Stepsize::scalar(0.1), st);
  CHECK((next.x - st.x).cwiseAbs().maxCoeff() <= 1e-13);
  CHECK(next.tracker.cwiseAbs().maxCoeff() <= 1e-13);

  // In general the tracker offset at equilibrium is −∇F, i.e. s_eq = 0.
  const auto inst = random_instance(3, 2, 2, 22);
  const auto cl = closedloop::assemble(
      inst.problem, closedloop::gt_gains(inst.lifted, 0.01));
  const auto eq = closedloop::equilibrium(closedloop::solve_regulator(cl),
                                          inst.problem.theta0());
  SimState st_eq{eq.x_eq, eq.z_eq};
  const SimState next_eq = simulator::step_z_form(
      inst.problem, inst.weights, Stepsize::scalar(0.01), st_eq);
  CHECK((next_eq.x - st_eq.x).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((next_eq.tracker - st_eq.tracker).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((eq.z_eq + inst.problem.stacked_output(eq.x_eq)).cwiseAbs().maxCoeff()
        <= 1e-12);
}

TEST_CASE("tracker sums are conserved step by step") {
  const auto inst = random_instance(5, 1, 2, 23);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SimState st;
  st.x.resize(5);
  st.tracker.resize(5);
  for (int i = 0; i < 5; ++i) {
    st.x(i) = gauss(rng);
    st.tracker(i) = gauss(rng);  // arbitrary tracker: identity still holds
  }
  auto invariant = [&](const SimState& s) {
    double acc = 0.0;
    for (int i = 0; i < 5; ++i)
      acc += s.tracker(i) - inst.problem.local_gradient(
                                i, s.x.segment(i, 1))(0);
    return acc;
  };
  const double before = invariant(st);
  for (int t = 0; t < 50; ++t) {
    st = simulator::step_s_form(inst.problem, inst.weights,
                                Stepsize::scalar(0.05), st);
    CHECK(std::abs(invariant(st) - before) <= 1e-12);
  }
}

TEST_CASE("s-form and z-form runs are the same trajectory") {
  for (std::uint64_t seed : {24u, 25u}) {
    const auto inst = random_instance(4, 2, 2, seed);
    const double gamma =
        0.4 * closedloop::find_critical_stepsize(inst.problem, inst.lifted, 1.0)
                  .gamma_star;
    InitSpec init;
    init.x0_mode = InitSpec::X0Mode::kRandom;
    init.x0_seed = seed;
    const auto ts = simulator::run(inst.problem, inst.weights,
                                   Stepsize::scalar(gamma), init, 1000, 0.0,
                                   StepForm::kS);
    const auto tz = simulator::run(inst.problem, inst.weights,
                                   Stepsize::scalar(gamma), init, 1000, 0.0,
                                   StepForm::kZ);
    CHECK(trajectory_gap(ts, tz) <= 1e-12);
    CHECK((ts.s - tz.s).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("distributed iteration equals the dense closed-loop iteration") {
  for (std::uint64_t seed : {26u, 27u}) {
    const auto inst = random_instance(4, 2, 3, seed);
    const double gamma =
        0.4 * closedloop::find_critical_stepsize(inst.problem, inst.lifted, 1.0)
                  .gamma_star;
    InitSpec init;
    init.x0_mode = InitSpec::X0Mode::kRandom;
    init.x0_seed = seed;
    const auto cl = closedloop::assemble(
        inst.problem, closedloop::gt_gains(inst.lifted, gamma));
    const auto tz = simulator::run(inst.problem, inst.weights,
                                   Stepsize::scalar(gamma), init, 1000, 0.0);
    const auto td =
        simulator::run_dense(inst.problem, cl.F, cl.G, init, 1000, 0.0);
    CHECK(trajectory_gap(tz, td) <= 1e-12);
  }
}

TEST_CASE("per-agent diagonal stepsizes drive the matching closed loop") {
  const auto inst = random_instance(3, 2, 2, 28);
  Eigen::VectorXd per_agent(3);
  per_agent << 0.03, 0.05, 0.04;
  const Stepsize step = Stepsize::from_vector(per_agent, 3, 2);
  const auto gains =
      closedloop::gt_gains_diag(inst.lifted, step.entries(3, 2));
  const auto cl = closedloop::assemble(inst.problem, gains);
  InitSpec init;
  init.x0_mode = InitSpec::X0Mode::kRandom;
  init.x0_seed = 3;
  const auto tz =
      simulator::run(inst.problem, inst.weights, step, init, 500, 0.0);
  const auto td = simulator::run_dense(inst.problem, cl.F, cl.G, init, 500, 0.0);
  CHECK(trajectory_gap(tz, td) <= 1e-12);
}

TEST_CASE("two-agent run converges with the correct initialization") {
  TwoAgent ta;
  InitSpec init;  // x0 = 0, z0 = 0
  const auto traj = simulator::run(ta.prob, ta.weights, Stepsize::scalar(0.1),
                                   init, 2000, 1e-10);
  CHECK(traj.status == simulator::RunStatus::kConverged);
  CHECK(traj.steps() <= 2000);
  CHECK(traj.optimality_error.back() <= 1e-8);
  CHECK(simulator::tracker_limit_check(traj, 0.1) <= 1e-8);
}

TEST_CASE("biased initialization settles on a biased consensus") {
  TwoAgent ta;
  InitSpec init;
  init.tracker_mode = InitSpec::TrackerMode::kZGiven;
  Eigen::VectorXd z0(2);
  z0 << 0.1, 0.1;
  init.tracker_value = z0;
  const auto traj = simulator::run(ta.prob, ta.weights, Stepsize::scalar(0.1),
                                   init, 10000, 0.0);
  const int T = traj.steps();
  CHECK(traj.optimality_error[T] > 1e-3);
  CHECK(traj.consensus_error[T] <= 1e-10);
  // Conservation pins the gradient sum to the initial tracker offset while
  // the trackers themselves die out.
  const double grad_mean = traj.y.row(T).sum() / 2.0;
  CHECK(grad_mean == doctest::Approx(-z0.sum() / 2.0).epsilon(1e-9));
  CHECK(std::abs(traj.s.row(T).sum() / 2.0) <= 1e-10);
  // The residual itself stays pinned: the identity is init-independent.
  double worst = 0.0;
  for (int t = 1; t <= T; ++t)
    worst = std::max(worst, simulator::conservation_residual_at(traj, t));
  CHECK(worst <= 1e-12);
  const auto traj_s = simulator::run(ta.prob, ta.weights,
                                     Stepsize::scalar(0.1), init, 10000, 0.0,
                                     StepForm::kS);
  worst = 0.0;
  for (double r : traj_s.conservation_residual) worst = std::max(worst, r);
  CHECK(worst <= 1e-12);
}

TEST_CASE("unstable stepsize triggers the divergence guard") {
  const auto prob = quadprob::make_problem({scalar_matrix(1)},
                                           {scalar_matrix(1)},
                                           scalar_vector(1));
  const auto w = netgraph::metropolis_weights(netgraph::build_graph(1, {}));
  InitSpec init;
  init.x0_mode = InitSpec::X0Mode::kGiven;
  init.x0_value = scalar_vector(2.0);
  const auto traj =
      simulator::run(prob, w, Stepsize::scalar(5.0), init, 10000, 1e-10);
  CHECK(traj.status == simulator::RunStatus::kDiverged);
  CHECK(traj.diagnostic.find("1e12") != std::string::npos);
  CHECK(traj.steps() < 100);
}

TEST_CASE("conservation residual bounds checking") {
  TwoAgent ta;
  const auto traj = simulator::run(ta.prob, ta.weights, Stepsize::scalar(0.1),
                                   InitSpec{}, 10, 0.0);
  CHECK_NOTHROW(simulator::conservation_residual_at(traj, 1));
  CHECK_NOTHROW(simulator::conservation_residual_at(traj, 10));
  CHECK_THROWS_AS(simulator::conservation_residual_at(traj, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(simulator::conservation_residual_at(traj, 11),
                  std::invalid_argument);
}

TEST_CASE("round result does not depend on agent processing order") {
  const auto inst = random_instance(5, 2, 2, 31);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SimState st;
  st.x.resize(10);
  st.tracker.resize(10);
  for (int k = 0; k < 10; ++k) {
    st.x(k) = gauss(rng);
    st.tracker(k) = gauss(rng);
  }
  const Stepsize step = Stepsize::scalar(0.05);
  const SimState reference =
      simulator::step_s_form(inst.problem, inst.weights, step, st);

  // Recompute each agent in reverse order from pre-collected views.
  std::vector<simulator::AgentView> views;
  for (int i = 0; i < 5; ++i)
    views.push_back(simulator::make_view(inst.problem, inst.weights, st, i));
  SimState shuffled;
  shuffled.x.resize(10);
  shuffled.tracker.resize(10);
  const Eigen::VectorXd lam = step.entries(5, 2);
  for (int i = 4; i >= 0; --i) {
    const auto up = simulator::agent_step_s(inst.problem, views[i],
                                            lam.segment(i * 2, 2));
    shuffled.x.segment(i * 2, 2) = up.x_next;
    shuffled.tracker.segment(i * 2, 2) = up.tracker_next;
  }
  CHECK(shuffled.x == reference.x);
  CHECK(shuffled.tracker == reference.tracker);
}

TEST_CASE("agent updates read only neighbor state") {
  const auto inst = random_instance(6, 1, 1, 32);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SimState st;
  st.x.resize(6);
  st.tracker.resize(6);
  for (int k = 0; k < 6; ++k) {
    st.x(k) = gauss(rng);
    st.tracker(k) = gauss(rng);
  }
  const Eigen::VectorXd lam = Eigen::VectorXd::Constant(6, 0.05);
  for (int i = 0; i < 6; ++i) {
    SimState corrupted = st;
    for (int j = 0; j < 6; ++j) {
      if (!inst.weights.graph.adjacent(i, j)) {
        corrupted.x(j) = 1e6;
        corrupted.tracker(j) = -1e6;
      }
    }
    const auto view_clean =
        simulator::make_view(inst.problem, inst.weights, st, i);
    const auto view_corrupt =
        simulator::make_view(inst.problem, inst.weights, corrupted, i);
    const auto up_clean =
        simulator::agent_step_z(inst.problem, view_clean, lam.segment(i, 1));
    const auto up_corrupt =
        simulator::agent_step_z(inst.problem, view_corrupt, lam.segment(i, 1));
    CHECK(up_clean.x_next == up_corrupt.x_next);
    CHECK(up_clean.tracker_next == up_corrupt.tracker_next);
  }
}

TEST_CASE("convergence rate matches the slow closed-loop mode") {
  const auto inst = random_instance(4, 2, 2, 33);
  const auto search =
      closedloop::find_critical_stepsize(inst.problem, inst.lifted, 1.0);
  const double gamma = std::min(0.5 * search.gamma_star, 0.1);
  InitSpec init;
  init.x0_mode = InitSpec::X0Mode::kRandom;
  init.x0_seed = 33;
  const auto traj = simulator::run(inst.problem, inst.weights,
                                   Stepsize::scalar(gamma), init, 10000, 1e-9);
  REQUIRE(traj.status == simulator::RunStatus::kConverged);
  const auto stab = closedloop::analyze_stability(closedloop::assemble(
      inst.problem, closedloop::gt_gains(inst.lifted, gamma)));
  const double rho_fit =
      simulator::fit_decay_rate(traj.optimality_error, 1e-7, 1e-1);
  CHECK(std::abs(rho_fit - stab.full.largest_subunit_modulus()) <= 0.05);
}

TEST_CASE("noise probe at level zero reproduces the clean run") {
  TwoAgent ta;
  InitSpec init;
  init.x0_mode = InitSpec::X0Mode::kRandom;
  init.x0_seed = 4;
  const auto clean = simulator::run(ta.prob, ta.weights,
                                    Stepsize::scalar(0.1), init, 200, 0.0);
  const auto probed = simulator::noise_probe(ta.prob, ta.weights,
                                             Stepsize::scalar(0.1), init, 0.0,
                                             200, 99);
  CHECK(clean.x == probed.x);
  CHECK(clean.z == probed.z);
}

TEST_CASE("small message noise leaves a small error floor") {
  TwoAgent ta;
  const auto traj = simulator::noise_probe(ta.prob, ta.weights,
                                           Stepsize::scalar(0.1), InitSpec{},
                                           1e-6, 4000, 123);
  CHECK(traj.status == simulator::RunStatus::kHorizonReached);
  double tail = 0.0;
  for (int t = traj.steps() - 400; t <= traj.steps(); ++t)
    tail = std::max(tail, traj.optimality_error[t]);
  CHECK(tail <= 1e-4);
  CHECK(tail > 0.0);
  // Noise also breaks the conservation identity, slowly.
  CHECK(traj.conservation_residual.back() > 0.0);
}

TEST_CASE("large message noise is survivable or guarded, report only") {
  TwoAgent ta;
  const auto traj = simulator::noise_probe(ta.prob, ta.weights,
                                           Stepsize::scalar(0.1), InitSpec{},
                                           1.0, 500, 7);
  CHECK((traj.status == simulator::RunStatus::kHorizonReached ||
         traj.status == simulator::RunStatus::kDiverged));
}

TEST_CASE("csv writers produce the documented layout") {
  const auto inst = random_instance(2, 2, 1, 34);
  const auto traj = simulator::run(inst.problem, inst.weights,
                                   Stepsize::scalar(0.05), InitSpec{}, 3, 0.0);
  const auto dir = std::filesystem::temp_directory_path();
  const auto tpath = dir / "gtlab_traj_test.csv";
  const auto spath = dir / "gtlab_summary_test.csv";
  simulator::write_trajectory_csv(tpath, traj);
  simulator::write_summary_csv(spath, traj);

  std::ifstream tin(tpath);
  std::string header;
  std::getline(tin, header);
  CHECK(header == "t,agent,x_1,x_2,z_1,z_2,s_1,s_2,y_1,y_2");
  int rows = 0;
  for (std::string line; std::getline(tin, line);) ++rows;
  CHECK(rows == 4 * 2);  // (T+1) × N

  std::ifstream sin(spath);
  std::getline(sin, header);
  CHECK(header ==
        "t,consensus_error,optimality_error,conservation_residual,"
        "tracker_norm");
  rows = 0;
  for (std::string line; std::getline(sin, line);) ++rows;
  CHECK(rows == 4);

  // Header-only mode.
  simulator::write_trajectory_csv(tpath, traj, /*header_only=*/true);
  std::ifstream hin(tpath);
  rows = 0;
  for (std::string line; std::getline(hin, line);) ++rows;
  CHECK(rows == 1);
  std::filesystem::remove(tpath);
  std::filesystem::remove(spath);
}

TEST_CASE("init spec validation") {
  const auto inst = random_instance(2, 1, 1, 35);
  InitSpec init;
  init.x0_mode = InitSpec::X0Mode::kGiven;
  init.x0_value = Eigen::VectorXd::Ones(3);  // wrong size
  CHECK_THROWS_AS(init.materialize(inst.problem), std::invalid_argument);

  InitSpec s_given;
  s_given.tracker_mode = InitSpec::TrackerMode::kSGiven;
  s_given.tracker_value = Eigen::VectorXd::Ones(2);
  const SimState st = s_given.materialize(inst.problem);
  // z = s − ∇F(x) at x = 0.
  const Eigen::VectorXd expected =
      Eigen::VectorXd::Ones(2) -
      inst.problem.stacked_output(Eigen::VectorXd::Zero(2));
  CHECK((st.tracker - expected).cwiseAbs().maxCoeff() <= 1e-15);

  CHECK_THROWS_AS(Stepsize::scalar(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(Stepsize::from_vector(Eigen::VectorXd::Ones(5), 2, 2),
                  std::invalid_argument);
}

TEST_CASE("probe and window arguments are validated") {
  TwoAgent ta;
  const auto traj = simulator::run(ta.prob, ta.weights, Stepsize::scalar(0.1),
                                   InitSpec{}, 5, 0.0);
  CHECK_THROWS_AS(simulator::tracker_limit_check(traj, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(simulator::tracker_limit_check(traj, 1.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(simulator::noise_probe(ta.prob, ta.weights,
                                         Stepsize::scalar(0.1), InitSpec{},
                                         -0.1, 5, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(simulator::run(ta.prob, ta.weights, Stepsize::scalar(0.1),
                                 InitSpec{}, -1, 0.0),
                  std::invalid_argument);
}
