#include "gtlab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gtlab/lingebra.hpp"
#include "gtlab/textio.hpp"

namespace gtlab::experiment {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw std::invalid_argument("'" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) known = true;
    if (!known)
      throw std::invalid_argument("unknown key '" + it.key() + "' in " +
                                  where);
  }
}

int get_int(const json& j, const std::string& what) {
  if (!j.is_number_integer())
    throw std::invalid_argument("'" + what + "' must be an integer");
  return j.get<int>();
}

std::uint64_t get_seed(const json& j, const std::string& what) {
  if (!j.is_number_integer() || j.get<long long>() < 0)
    throw std::invalid_argument("'" + what +
                                "' must be a nonnegative integer");
  return j.get<std::uint64_t>();
}

double get_number(const json& j, const std::string& what) {
  if (!j.is_number())
    throw std::invalid_argument("'" + what + "' must be a number");
  return j.get<double>();
}

Eigen::VectorXd get_vector(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty())
    throw std::invalid_argument("'" + what + "' must be a non-empty array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i)
    v(i) = get_number(j[i], what + " entry");
  return v;
}

Eigen::MatrixXd get_matrix(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty())
    throw std::invalid_argument("'" + what + "' must be an array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0)
    throw std::invalid_argument("'" + what + "' rows must be non-empty arrays");
  Eigen::MatrixXd m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw std::invalid_argument("'" + what + "' rows have unequal lengths");
    for (std::size_t c = 0; c < cols; ++c)
      m(r, c) = get_number(j[r][c], what + " entry");
  }
  return m;
}

GraphSpec parse_graph(const json& j) {
  check_keys(j, "graph", {"preset", "n", "edges"});
  if (!j.contains("n")) throw std::invalid_argument("graph needs 'n'");
  GraphSpec g;
  g.n = get_int(j["n"], "graph.n");
  if (j.contains("preset") && j.contains("edges"))
    throw std::invalid_argument("graph takes 'preset' or 'edges', not both");
  if (j.contains("preset")) {
    g.use_preset = true;
    g.preset = j["preset"].get<std::string>();
  } else if (j.contains("edges")) {
    for (const auto& e : j["edges"]) {
      if (!e.is_array() || e.size() != 2)
        throw std::invalid_argument("graph edges must be [i, j] pairs");
      // 1-based in files, 0-based internally.
      g.edges.emplace_back(get_int(e[0], "edge endpoint") - 1,
                           get_int(e[1], "edge endpoint") - 1);
    }
  }
  return g;
}

WeightSpec parse_weights(const json& j) {
  check_keys(j, "weights", {"rule", "raw"});
  if (!j.contains("rule")) throw std::invalid_argument("weights needs 'rule'");
  WeightSpec w;
  const std::string rule = j["rule"].get<std::string>();
  if (rule == "metropolis") {
    w.rule = WeightSpec::Rule::kMetropolis;
    if (j.contains("raw"))
      throw std::invalid_argument("'raw' is not used by the metropolis rule");
  } else if (rule == "normalized" || rule == "row_only") {
    w.rule = rule == "normalized" ? WeightSpec::Rule::kNormalized
                                  : WeightSpec::Rule::kRowOnly;
    if (!j.contains("raw"))
      throw std::invalid_argument("rule '" + rule + "' needs 'raw'");
    w.raw = get_matrix(j["raw"], "weights.raw");
  } else {
    throw std::invalid_argument("unknown weight rule '" + rule + "'");
  }
  return w;
}

ProblemSpec parse_problem(const json& j) {
  check_keys(j, "problem", {"random", "file", "explicit"});
  if (j.size() != 1)
    throw std::invalid_argument(
        "problem needs exactly one of 'random', 'file', 'explicit'");
  ProblemSpec p;
  if (j.contains("random")) {
    const json& r = j["random"];
    check_keys(r, "problem.random", {"N", "d", "p", "seed"});
    for (const char* k : {"N", "d", "p", "seed"})
      if (!r.contains(k))
        throw std::invalid_argument(std::string("problem.random needs '") + k +
                                    "'");
    p.source = ProblemSpec::Source::kRandom;
    p.N = get_int(r["N"], "problem.random.N");
    p.d = get_int(r["d"], "problem.random.d");
    p.p = get_int(r["p"], "problem.random.p");
    p.seed = get_seed(r["seed"], "problem.random.seed");
  } else if (j.contains("file")) {
    p.source = ProblemSpec::Source::kFile;
    p.file = j["file"].get<std::string>();
  } else {
    const json& e = j["explicit"];
    check_keys(e, "problem.explicit", {"C", "Gamma", "theta0"});
    for (const char* k : {"C", "Gamma", "theta0"})
      if (!e.contains(k))
        throw std::invalid_argument(std::string("problem.explicit needs '") +
                                    k + "'");
    p.source = ProblemSpec::Source::kExplicit;
    if (!e["C"].is_array() || !e["Gamma"].is_array() ||
        e["C"].size() != e["Gamma"].size() || e["C"].empty())
      throw std::invalid_argument(
          "problem.explicit C and Gamma must be equal-length matrix lists");
    for (std::size_t i = 0; i < e["C"].size(); ++i) {
      p.C_list.push_back(get_matrix(e["C"][i], "problem.explicit.C"));
      p.Gamma_list.push_back(get_matrix(e["Gamma"][i],
                                        "problem.explicit.Gamma"));
    }
    p.theta0 = get_vector(e["theta0"], "problem.explicit.theta0");
  }
  return p;
}

GainSpec parse_gains(const json& j) {
  check_keys(j, "gains", {"gamma", "lambda", "kz_zero"});
  if (j.size() != 1)
    throw std::invalid_argument(
        "gains needs exactly one of 'gamma', 'lambda', 'kz_zero'");
  GainSpec g;
  if (j.contains("gamma")) {
    g.kind = GainSpec::Kind::kGamma;
    g.gamma = get_number(j["gamma"], "gains.gamma");
  } else if (j.contains("lambda")) {
    g.kind = GainSpec::Kind::kLambda;
    g.lambda = get_vector(j["lambda"], "gains.lambda");
  } else {
    g.kind = GainSpec::Kind::kKzZero;
    check_keys(j["kz_zero"], "gains.kz_zero", {"beta"});
    if (j["kz_zero"].contains("beta"))
      g.beta = get_number(j["kz_zero"]["beta"], "gains.kz_zero.beta");
  }
  return g;
}

InitCfg parse_init(const json& j) {
  check_keys(j, "init", {"x0", "z0", "s0", "perturbation"});
  InitCfg c;
  if (j.contains("x0")) {
    const json& x0 = j["x0"];
    if (x0.is_string() && x0.get<std::string>() == "zeros") {
      c.x0 = InitCfg::X0::kZeros;
    } else if (x0.is_object()) {
      check_keys(x0, "init.x0", {"random"});
      if (!x0.contains("random"))
        throw std::invalid_argument("init.x0 object needs 'random'");
      c.x0 = InitCfg::X0::kRandom;
      c.x0_seed = get_seed(x0["random"], "init.x0.random");
    } else if (x0.is_array()) {
      c.x0 = InitCfg::X0::kGiven;
      c.x0_value = get_vector(x0, "init.x0");
    } else {
      throw std::invalid_argument(
          "init.x0 must be \"zeros\", {\"random\": seed} or an array");
    }
  }
  if (j.contains("z0") && j.contains("s0"))
    throw std::invalid_argument("init takes 'z0' or 's0', not both");
  if (j.contains("z0")) {
    c.tracker = InitCfg::Tracker::kZGiven;
    c.tracker_value = get_vector(j["z0"], "init.z0");
  } else if (j.contains("s0")) {
    const json& s0 = j["s0"];
    if (s0.is_string() && s0.get<std::string>() == "gradient") {
      c.tracker = InitCfg::Tracker::kSGradient;
    } else {
      c.tracker = InitCfg::Tracker::kSGiven;
      c.tracker_value = get_vector(s0, "init.s0");
    }
  }
  if (j.contains("perturbation")) {
    const json& pert = j["perturbation"];
    if (pert.is_number()) {
      c.perturb_scalar = true;
      c.perturb_value = pert.get<double>();
    } else {
      c.perturb_vector = get_vector(pert, "init.perturbation");
    }
  }
  return c;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") +
                                e.what());
  }
  check_keys(j, "config",
             {"graph", "weights", "problem", "gains", "init", "horizon",
              "sweep", "verify", "output"});
  for (const char* k : {"graph", "weights", "problem"})
    if (!j.contains(k))
      throw std::invalid_argument(std::string("config needs '") + k + "'");

  ExperimentConfig cfg;
  cfg.graph = parse_graph(j["graph"]);
  cfg.weights = parse_weights(j["weights"]);
  cfg.problem = parse_problem(j["problem"]);
  if (j.contains("gains")) cfg.gains = parse_gains(j["gains"]);
  if (j.contains("init")) cfg.init = parse_init(j["init"]);
  if (j.contains("horizon")) {
    check_keys(j["horizon"], "horizon", {"t_max", "stop_tol"});
    if (j["horizon"].contains("t_max")) {
      cfg.horizon.t_max = get_int(j["horizon"]["t_max"], "horizon.t_max");
      if (cfg.horizon.t_max < 0)
        throw std::invalid_argument("horizon.t_max must be >= 0");
    }
    if (j["horizon"].contains("stop_tol"))
      cfg.horizon.stop_tol =
          get_number(j["horizon"]["stop_tol"], "horizon.stop_tol");
  }
  if (j.contains("sweep")) {
    check_keys(j["sweep"], "sweep", {"grid", "bracket_hi"});
    if (j["sweep"].contains("grid")) {
      const Eigen::VectorXd g = get_vector(j["sweep"]["grid"], "sweep.grid");
      cfg.sweep.grid.assign(g.data(), g.data() + g.size());
    }
    if (j["sweep"].contains("bracket_hi"))
      cfg.sweep.bracket_hi =
          get_number(j["sweep"]["bracket_hi"], "sweep.bracket_hi");
  }
  if (j.contains("verify")) {
    check_keys(j["verify"], "verify", {"extra_seeds"});
    if (j["verify"].contains("extra_seeds")) {
      cfg.verify.extra_seeds.clear();
      for (const auto& s : j["verify"]["extra_seeds"])
        cfg.verify.extra_seeds.push_back(get_seed(s, "verify.extra_seeds"));
    }
  }
  if (j.contains("output")) {
    check_keys(j["output"], "output", {"dir"});
    if (j["output"].contains("dir"))
      cfg.out_dir = j["output"]["dir"].get<std::string>();
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void apply_overrides(ExperimentConfig& cfg, const CliOverrides& overrides) {
  if (overrides.seed) {
    if (cfg.problem.source != ProblemSpec::Source::kRandom)
      throw std::invalid_argument(
          "--seed requires a problem of kind 'random'");
    cfg.problem.seed = *overrides.seed;
  }
  if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;
}

BuiltInstance build_instance(const ExperimentConfig& cfg) {
  const netgraph::Graph g =
      cfg.graph.use_preset ? netgraph::preset_graph(cfg.graph.preset,
                                                    cfg.graph.n)
                           : netgraph::build_graph(cfg.graph.n,
                                                   cfg.graph.edges);

  quadprob::QuadraticProblem prob = [&] {
    switch (cfg.problem.source) {
      case ProblemSpec::Source::kRandom:
        return quadprob::random_problem(cfg.problem.N, cfg.problem.d,
                                        cfg.problem.p, cfg.problem.seed);
      case ProblemSpec::Source::kFile:
        return quadprob::load_problem(cfg.problem.file);
      case ProblemSpec::Source::kExplicit:
      default:
        return quadprob::make_problem(cfg.problem.C_list,
                                      cfg.problem.Gamma_list,
                                      cfg.problem.theta0);
    }
  }();
  if (prob.agents() != g.size())
    throw std::invalid_argument("graph size does not match problem agents");

  netgraph::WeightPair w = [&] {
    switch (cfg.weights.rule) {
      case WeightSpec::Rule::kMetropolis:
        return netgraph::metropolis_weights(g);
      case WeightSpec::Rule::kNormalized:
        return netgraph::normalized_weight_pair(g, cfg.weights.raw);
      case WeightSpec::Rule::kRowOnly:
      default: {
        // Row-normalized matrix in both slots: deliberately breaks column
        // stochasticity of the tracker-mixing matrix.
        if (cfg.weights.raw.rows() != g.size() ||
            cfg.weights.raw.cols() != g.size())
          throw std::invalid_argument("weights.raw has wrong dimensions");
        const Eigen::VectorXd row_sums = cfg.weights.raw.rowwise().sum();
        if (!(row_sums.minCoeff() > 0.0))
          throw std::invalid_argument("raw weight matrix has a zero row");
        const Eigen::MatrixXd A =
            cfg.weights.raw.array().colwise() / row_sums.array();
        return netgraph::unchecked_weight_pair(g, A, A);
      }
    }
  }();

  BuiltInstance inst{std::move(w), {}, std::move(prob)};
  inst.lifted = netgraph::lift(inst.weights, inst.problem.dim());
  return inst;
}

closedloop::GainSet build_gain_set(const GainSpec& spec,
                                   const netgraph::LiftedWeights& lifted,
                                   const quadprob::QuadraticProblem& problem) {
  switch (spec.kind) {
    case GainSpec::Kind::kGamma:
      return closedloop::gt_gains(lifted, spec.gamma);
    case GainSpec::Kind::kLambda:
      return closedloop::gt_gains_diag(
          lifted, simulator::Stepsize::from_vector(spec.lambda, lifted.N,
                                                   lifted.d)
                      .entries(lifted.N, lifted.d));
    case GainSpec::Kind::kKzZero:
    default:
      return closedloop::unequal_gain_counterexample(problem, lifted,
                                                     spec.beta)
          .gains;
  }
}

simulator::Stepsize build_stepsize(const GainSpec& spec, int N, int d) {
  switch (spec.kind) {
    case GainSpec::Kind::kGamma:
      return simulator::Stepsize::scalar(spec.gamma);
    case GainSpec::Kind::kLambda:
      return simulator::Stepsize::from_vector(spec.lambda, N, d);
    case GainSpec::Kind::kKzZero:
    default:
      throw std::invalid_argument(
          "kz_zero gains do not define a distributed stepsize; "
          "the closed loop is simulated in dense form");
  }
}

simulator::InitSpec build_init(const InitCfg& cfg, int N, int d) {
  const int nd = N * d;
  simulator::InitSpec init;
  switch (cfg.x0) {
    case InitCfg::X0::kZeros:
      init.x0_mode = simulator::InitSpec::X0Mode::kZeros;
      break;
    case InitCfg::X0::kRandom:
      init.x0_mode = simulator::InitSpec::X0Mode::kRandom;
      init.x0_seed = cfg.x0_seed;
      break;
    case InitCfg::X0::kGiven:
      init.x0_mode = simulator::InitSpec::X0Mode::kGiven;
      init.x0_value = cfg.x0_value;
      break;
  }
  switch (cfg.tracker) {
    case InitCfg::Tracker::kZZero:
      init.tracker_mode = simulator::InitSpec::TrackerMode::kZZero;
      break;
    case InitCfg::Tracker::kZGiven:
      init.tracker_mode = simulator::InitSpec::TrackerMode::kZGiven;
      init.tracker_value = cfg.tracker_value;
      break;
    case InitCfg::Tracker::kSGradient:
      init.tracker_mode = simulator::InitSpec::TrackerMode::kSGradient;
      break;
    case InitCfg::Tracker::kSGiven:
      init.tracker_mode = simulator::InitSpec::TrackerMode::kSGiven;
      init.tracker_value = cfg.tracker_value;
      break;
  }
  if (cfg.perturb_scalar)
    init.z_perturbation = Eigen::VectorXd::Constant(nd, cfg.perturb_value);
  else if (cfg.perturb_vector.size() != 0)
    init.z_perturbation = cfg.perturb_vector;
  return init;
}

namespace {

// Deterministic key = value report; every float goes through fmt17.
class Report {
 public:
  void section(const std::string& name) { body_ += "[" + name + "]\n"; }
  void kv(const std::string& k, const std::string& v) {
    body_ += k + " = " + v + "\n";
  }
  void kv(const std::string& k, const char* v) { kv(k, std::string(v)); }
  void kv(const std::string& k, double v) { kv(k, textio::fmt17(v)); }
  void kv(const std::string& k, int v) { kv(k, std::to_string(v)); }
  void kv(const std::string& k, std::size_t v) { kv(k, std::to_string(v)); }
  void kv(const std::string& k, bool v) { kv(k, v ? "true" : "false"); }
  const std::string& text() const { return body_; }

 private:
  std::string body_;
};

std::string classify(const std::complex<double>& lam, double tol) {
  const double m = std::abs(lam);
  if (m < 1.0 - tol) return "inside";
  if (m > 1.0 + tol) return "outside";
  return "on_circle";
}

void spectrum_rows(Report& rep, const std::string& prefix,
                   const lingebra::Spectrum& spec) {
  rep.kv(prefix + "_count", static_cast<int>(spec.eigenvalues.size()));
  for (Eigen::Index i = 0; i < spec.eigenvalues.size(); ++i) {
    const std::complex<double> lam = spec.eigenvalues(i);
    rep.kv(prefix + "_" + std::to_string(i),
           textio::fmt17(lam.real()) + " " + textio::fmt17(lam.imag()) + " " +
               textio::fmt17(std::abs(lam)) + " " +
               classify(lam, spec.tol));
  }
}

void emit(const ExperimentConfig& cfg, const std::string& filename,
          const std::string& text, std::ostream& out) {
  out << text;
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream f(std::filesystem::path(cfg.out_dir) / filename);
  if (!f) throw std::runtime_error("cannot write report under " + cfg.out_dir);
  f << text;
}

void problem_section(Report& rep, const quadprob::QuadraticProblem& prob) {
  rep.section("problem");
  rep.kv("N", prob.agents());
  rep.kv("d", prob.dim());
  rep.kv("p", prob.offset_dim());
  rep.kv("theta_star", textio::fmt_row(prob.optimal_solution()));
  for (int r = 0; r < prob.dim(); ++r)
    rep.kv("sigma_row_" + std::to_string(r),
           textio::fmt_row(prob.Sigma().row(r).transpose()));
}

void gains_section(Report& rep, const GainSpec& spec) {
  rep.section("gains");
  switch (spec.kind) {
    case GainSpec::Kind::kGamma:
      rep.kv("kind", "gamma");
      rep.kv("gamma", spec.gamma);
      break;
    case GainSpec::Kind::kLambda:
      rep.kv("kind", "lambda");
      rep.kv("lambda", textio::fmt_row(spec.lambda));
      break;
    case GainSpec::Kind::kKzZero:
      rep.kv("kind", "kz_zero");
      rep.kv("beta", spec.beta);
      break;
  }
}

const GainSpec& require_gains(const ExperimentConfig& cfg) {
  if (!cfg.gains)
    throw std::invalid_argument("this command requires a 'gains' section");
  return *cfg.gains;
}

std::string status_name(simulator::RunStatus status) {
  switch (status) {
    case simulator::RunStatus::kConverged:
      return "converged";
    case simulator::RunStatus::kHorizonReached:
      return "horizon_reached";
    case simulator::RunStatus::kDiverged:
      return "diverged";
  }
  return "unknown";
}

}  // namespace

int cmd_gen(const ExperimentConfig& cfg, std::ostream& out) {
  const BuiltInstance inst = build_instance(cfg);
  std::filesystem::create_directories(cfg.out_dir);
  const auto prob_path = std::filesystem::path(cfg.out_dir) / "problem.txt";
  const auto weight_path = std::filesystem::path(cfg.out_dir) / "weights.txt";
  quadprob::save_problem(prob_path, inst.problem);
  netgraph::save_weights(weight_path, inst.weights);

  // Round-trip sanity: the written files must reproduce the instance
  // bit for bit.
  const quadprob::QuadraticProblem reloaded = quadprob::load_problem(prob_path);
  for (int i = 0; i < inst.problem.agents(); ++i) {
    if (reloaded.C(i) != inst.problem.C(i) ||
        reloaded.Gamma(i) != inst.problem.Gamma(i))
      throw std::runtime_error("problem file round-trip mismatch");
  }
  if (netgraph::load_weights(weight_path).A != inst.weights.A)
    throw std::runtime_error("weights file round-trip mismatch");

  Report rep;
  rep.section("gen");
  rep.kv("problem_file", prob_path.string());
  rep.kv("weights_file", weight_path.string());
  rep.kv("roundtrip", "exact");
  problem_section(rep, inst.problem);
  emit(cfg, "gen_report.txt", rep.text(), out);
  return kExitOk;
}

int cmd_analyze(const ExperimentConfig& cfg, std::ostream& out) {
  const GainSpec& gain_spec = require_gains(cfg);
  const BuiltInstance inst = build_instance(cfg);
  Report rep;
  problem_section(rep, inst.problem);
  gains_section(rep, gain_spec);
  int exit_code = kExitOk;

  if (gain_spec.kind == GainSpec::Kind::kKzZero) {
    const closedloop::UnequalGainReport probe =
        closedloop::unequal_gain_counterexample(inst.problem, inst.lifted,
                                                gain_spec.beta);
    const closedloop::ClosedLoopSystem cl =
        closedloop::assemble(inst.problem, probe.gains);
    const closedloop::StabilityReport stab = closedloop::analyze_stability(cl);
    rep.section("stability");
    spectrum_rows(rep, "eig", stab.full);
    rep.kv("unit_cluster_count", stab.unit_cluster_count);
    rep.kv("v_invariant", stab.v_invariant);
    rep.kv("internally_stable", stab.internally_stable);
    rep.kv("externally_antistable", stab.externally_antistable);
    rep.kv("admissible", stab.admissible);
    rep.section("regulator");
    rep.kv("feasible", false);
    rep.kv("beta_used", probe.beta);
    rep.kv("least_squares_residual", probe.least_squares_residual);
    rep.kv("contrast_residual_equal_gains", probe.contrast_residual);
    exit_code = kExitAnalysis;
    rep.section("result");
    rep.kv("regulator_infeasible", true);
    rep.kv("exit", exit_code);
    emit(cfg, "analysis.txt", rep.text(), out);
    return exit_code;
  }

  const closedloop::GainSet gains =
      build_gain_set(gain_spec, inst.lifted, inst.problem);
  const closedloop::ClosedLoopSystem cl =
      closedloop::assemble(inst.problem, gains);
  const closedloop::StabilityReport stab = closedloop::analyze_stability(cl);
  const closedloop::RegulatorSolution reg = closedloop::solve_regulator(cl);

  rep.section("stability");
  spectrum_rows(rep, "eig", stab.full);
  rep.kv("unit_cluster_count", stab.unit_cluster_count);
  rep.kv("invariance_residual", stab.invariance_residual);
  rep.kv("external_identity_gap", stab.external_identity_gap);
  rep.kv("v_invariant", stab.v_invariant);
  rep.kv("internally_stable", stab.internally_stable);
  rep.kv("externally_antistable", stab.externally_antistable);
  rep.kv("admissible", stab.admissible);

  const lingebra::SubspaceBasis reach =
      lingebra::reachable_subspace(cl.F0, cl.B0);
  const lingebra::SubspaceBasis pbh =
      lingebra::pbh_unreachable_left_kernel(cl.F0, cl.B0);
  const Eigen::MatrixXd proj_gap =
      cl.T2.columns -
      pbh.columns * (pbh.columns.transpose() * cl.T2.columns);
  rep.section("reachability");
  rep.kv("state_dim", cl.n());
  rep.kv("reachable_dim", reach.dim());
  rep.kv("unreachable_dim", cl.n() - reach.dim());
  rep.kv("pbh_kernel_dim", pbh.dim());
  rep.kv("pbh_alignment_gap", lingebra::max_abs(proj_gap));

  rep.section("regulator");
  rep.kv("feasible", true);
  rep.kv("residual_fixed_point", reg.residual_fixed_point);
  rep.kv("residual_output", reg.residual_output);
  rep.kv("residual_complement", reg.residual_complement);
  rep.kv("p_norm", reg.p_norm);

  rep.section("stepsize");
  try {
    const closedloop::StepsizeSearch search = closedloop::find_critical_stepsize(
        inst.problem, inst.lifted, cfg.sweep.bracket_hi);
    rep.kv("gamma_star", search.gamma_star);
    rep.kv("hit_bracket", search.hit_bracket);
    rep.kv("monotone_pattern", search.monotone_pattern);
  } catch (const std::runtime_error& e) {
    rep.kv("gamma_star", "none");
    rep.kv("error", e.what());
  }

  const double worst_residual =
      std::max({reg.residual_fixed_point, reg.residual_output,
                reg.residual_complement, reg.p_norm});
  const bool residuals_pass = worst_residual <= 1e-10;
  if (!stab.admissible || !residuals_pass) exit_code = kExitAnalysis;
  rep.section("result");
  rep.kv("admissible", stab.admissible);
  rep.kv("residuals_pass", residuals_pass);
  rep.kv("exit", exit_code);
  emit(cfg, "analysis.txt", rep.text(), out);
  return exit_code;
}

int cmd_simulate(const ExperimentConfig& cfg, std::ostream& out) {
  const GainSpec& gain_spec = require_gains(cfg);
  const BuiltInstance inst = build_instance(cfg);
  const simulator::InitSpec init =
      build_init(cfg.init, inst.problem.agents(), inst.problem.dim());

  simulator::Trajectory traj;
  if (gain_spec.kind == GainSpec::Kind::kKzZero) {
    const closedloop::GainSet gains =
        build_gain_set(gain_spec, inst.lifted, inst.problem);
    const closedloop::ClosedLoopSystem cl =
        closedloop::assemble(inst.problem, gains);
    traj = simulator::run_dense(inst.problem, cl.F, cl.G, init,
                                cfg.horizon.t_max, cfg.horizon.stop_tol);
  } else {
    const simulator::Stepsize step =
        build_stepsize(gain_spec, inst.problem.agents(), inst.problem.dim());
    traj = simulator::run(inst.problem, inst.weights, step, init,
                          cfg.horizon.t_max, cfg.horizon.stop_tol);
  }

  std::filesystem::create_directories(cfg.out_dir);
  const auto traj_path = std::filesystem::path(cfg.out_dir) / "trajectory.csv";
  const auto summary_path = std::filesystem::path(cfg.out_dir) / "summary.csv";
  const bool header_only = cfg.horizon.t_max == 0;
  simulator::write_trajectory_csv(traj_path, traj, header_only);
  simulator::write_summary_csv(summary_path, traj, header_only);

  const bool diverged = traj.status == simulator::RunStatus::kDiverged;
  const bool biased = !diverged && traj.optimality_error.back() > 1e-3;
  Report rep;
  rep.section("simulate");
  rep.kv("steps", traj.steps());
  rep.kv("status", status_name(traj.status));
  if (!traj.diagnostic.empty()) rep.kv("diagnostic", traj.diagnostic);
  rep.kv("final_consensus_error", traj.consensus_error.back());
  rep.kv("final_optimality_error", traj.optimality_error.back());
  rep.kv("final_conservation_residual", traj.conservation_residual.back());
  rep.kv("final_tracker_norm", traj.tracker_norm.back());
  rep.kv("biased", biased);
  rep.kv("trajectory_csv", traj_path.string());
  rep.kv("summary_csv", summary_path.string());
  const int exit_code = diverged ? kExitDivergence : kExitOk;
  rep.kv("exit", exit_code);
  emit(cfg, "simulate_report.txt", rep.text(), out);
  return exit_code;
}

int cmd_sweep(const ExperimentConfig& cfg, std::ostream& out) {
  const BuiltInstance inst = build_instance(cfg);
  Report rep;
  problem_section(rep, inst.problem);

  closedloop::StepsizeSearch search;
  rep.section("stepsize");
  try {
    search = closedloop::find_critical_stepsize(inst.problem, inst.lifted,
                                                cfg.sweep.bracket_hi);
  } catch (const std::runtime_error& e) {
    rep.kv("gamma_star", "none");
    rep.kv("error", e.what());
    rep.section("result");
    rep.kv("exit", kExitAnalysis);
    emit(cfg, "sweep_report.txt", rep.text(), out);
    return kExitAnalysis;
  }
  rep.kv("gamma_star", search.gamma_star);
  rep.kv("hit_bracket", search.hit_bracket);
  rep.kv("monotone_pattern", search.monotone_pattern);
  rep.kv("samples", search.samples.size());
  for (std::size_t i = 0; i < search.samples.size(); ++i)
    rep.kv("sample_" + std::to_string(i),
           textio::fmt17(search.samples[i].first) + " " +
               (search.samples[i].second ? "admissible" : "inadmissible"));

  std::vector<double> grid = cfg.sweep.grid;
  if (grid.empty()) {
    for (double m : {0.25, 0.5, 0.75, 0.9, 1.0, 1.1, 1.25, 1.5})
      grid.push_back(m * search.gamma_star);
  }

  const simulator::InitSpec init =
      build_init(cfg.init, inst.problem.agents(), inst.problem.dim());
  rep.section("sweep");
  rep.kv("rows", grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double gamma = grid[i];
    std::string row = textio::fmt17(gamma);
    if (!(gamma > 0.0)) {
      rep.kv("row_" + std::to_string(i), row + " invalid");
      continue;
    }
    const closedloop::ClosedLoopSystem cl = closedloop::assemble(
        inst.problem, closedloop::gt_gains(inst.lifted, gamma));
    const closedloop::StabilityReport stab = closedloop::analyze_stability(cl);
    // Spectral radius with the d structural unit eigenvalues excluded.
    double rest_radius = 0.0;
    for (Eigen::Index k = 0; k < stab.full.eigenvalues.size(); ++k) {
      const std::complex<double> lam = stab.full.eigenvalues(k);
      if (std::abs(lam - std::complex<double>(1.0, 0.0)) >
          closedloop::StabilityReport::kUnitClusterRadius)
        rest_radius = std::max(rest_radius, std::abs(lam));
    }
    const simulator::Trajectory traj = simulator::run(
        inst.problem, inst.weights, simulator::Stepsize::scalar(gamma), init,
        cfg.horizon.t_max, cfg.horizon.stop_tol);
    const std::string err =
        traj.status == simulator::RunStatus::kDiverged
            ? "diverged"
            : textio::fmt17(traj.optimality_error.back());
    row += " " + textio::fmt17(rest_radius) + " " +
           (stab.admissible ? "admissible" : "inadmissible") + " " + err;
    rep.kv("row_" + std::to_string(i), row);
  }
  rep.section("result");
  rep.kv("exit", kExitOk);
  emit(cfg, "sweep_report.txt", rep.text(), out);
  return kExitOk;
}

namespace {

struct PropertyOutcome {
  std::string name;
  std::string status;  // PASS | FAIL | EXPECTED-INFEASIBLE
  std::string detail;
};

double trajectory_gap(const simulator::Trajectory& a,
                      const simulator::Trajectory& b) {
  const Eigen::Index rows = std::min(a.x.rows(), b.x.rows());
  double gap = 0.0;
  gap = std::max(gap, lingebra::max_abs(a.x.topRows(rows) - b.x.topRows(rows)));
  gap = std::max(gap, lingebra::max_abs(a.z.topRows(rows) - b.z.topRows(rows)));
  return gap;
}

std::vector<PropertyOutcome> verify_instance(
    const BuiltInstance& inst, const GainSpec& gain_spec, int t_max) {
  std::vector<PropertyOutcome> results;
  const int N = inst.problem.agents();
  const int d = inst.problem.dim();
  const bool gt_family = gain_spec.kind != GainSpec::Kind::kKzZero;

  // Trajectory-level checks need a stepsize that keeps the loop stable;
  // scale the configured one below the bisected threshold when needed.
  double gamma_cap = 0.01;
  try {
    gamma_cap = 0.5 * closedloop::find_critical_stepsize(inst.problem,
                                                         inst.lifted, 1.0)
                          .gamma_star;
  } catch (const std::runtime_error&) {
    // No admissible stepsize interval (e.g. a deliberately broken weight
    // pair); probe the trajectories with a small fixed value instead.
  }
  Eigen::VectorXd step_entries =
      gt_family ? build_stepsize(gain_spec, N, d).entries(N, d)
                : Eigen::VectorXd::Constant(N * d, gamma_cap);
  if (step_entries.maxCoeff() > gamma_cap)
    step_entries *= gamma_cap / step_entries.maxCoeff();
  const simulator::Stepsize step = simulator::Stepsize::diagonal(step_entries);
  const simulator::InitSpec init;  // zeros / z(0) = 0
  const int horizon = std::min(t_max, 300);

  const simulator::Trajectory traj_s =
      simulator::run(inst.problem, inst.weights, step, init, horizon, 0.0,
                     simulator::StepForm::kS);
  const simulator::Trajectory traj_z =
      simulator::run(inst.problem, inst.weights, step, init, horizon, 0.0,
                     simulator::StepForm::kZ);

  {
    PropertyOutcome p{"form_equivalence", "PASS", ""};
    const double gap = trajectory_gap(traj_s, traj_z);
    p.detail = "max_state_gap=" + textio::fmt17(gap);
    if (traj_s.status == simulator::RunStatus::kDiverged ||
        traj_z.status == simulator::RunStatus::kDiverged)
      p.status = "FAIL", p.detail += " (diverged)";
    else if (gap > 1e-12)
      p.status = "FAIL";
    results.push_back(p);
  }

  {
    PropertyOutcome p{"conservation", "PASS", ""};
    double worst = 0.0;
    for (double r : traj_s.conservation_residual) worst = std::max(worst, r);
    p.detail = "max_residual=" + textio::fmt17(worst);
    if (traj_s.status == simulator::RunStatus::kDiverged)
      p.status = "FAIL", p.detail += " (diverged)";
    else if (worst > 1e-12)
      p.status = "FAIL";
    results.push_back(p);
  }

  // Matrix-form check uses gains that match the stepsize actually stepped;
  // the structural and regulator checks use the configured gains.
  const closedloop::ClosedLoopSystem cl_sim = closedloop::assemble(
      inst.problem, closedloop::gt_gains_diag(inst.lifted, step_entries));
  const closedloop::GainSet gains =
      gt_family ? build_gain_set(gain_spec, inst.lifted, inst.problem)
                : closedloop::gt_gains(inst.lifted, gamma_cap);
  const closedloop::ClosedLoopSystem cl =
      closedloop::assemble(inst.problem, gains);

  {
    PropertyOutcome p{"matrix_form_equivalence", "PASS", ""};
    const simulator::Trajectory traj_dense = simulator::run_dense(
        inst.problem, cl_sim.F, cl_sim.G, init, horizon, 0.0);
    const double gap = trajectory_gap(traj_z, traj_dense);
    p.detail = "max_state_gap=" + textio::fmt17(gap);
    if (gap > 1e-12) p.status = "FAIL";
    results.push_back(p);
  }

  {
    PropertyOutcome p{"invariant_subspace", "PASS", ""};
    const closedloop::StabilityReport stab = closedloop::analyze_stability(cl);
    const lingebra::SubspaceBasis pbh =
        lingebra::pbh_unreachable_left_kernel(cl.F0, cl.B0);
    const double alignment = lingebra::max_abs(
        cl.T2.columns - pbh.columns * (pbh.columns.transpose() * cl.T2.columns));
    p.detail = "invariance_residual=" +
               textio::fmt17(stab.invariance_residual) +
               " external_identity_gap=" +
               textio::fmt17(stab.external_identity_gap) + " pbh_dim=" +
               std::to_string(pbh.dim());
    if (!stab.v_invariant || stab.external_identity_gap > 1e-12 ||
        pbh.dim() != d || alignment > 1e-9)
      p.status = "FAIL";
    results.push_back(p);
  }

  {
    PropertyOutcome p{"regulator_equations", "PASS", ""};
    if (gt_family) {
      const closedloop::RegulatorSolution reg = closedloop::solve_regulator(cl);
      const double worst =
          std::max({reg.residual_fixed_point, reg.residual_output,
                    reg.residual_complement, reg.p_norm});
      p.detail = "max_residual=" + textio::fmt17(worst);
      if (worst > 1e-10) p.status = "FAIL";
    } else {
      const closedloop::UnequalGainReport probe =
          closedloop::unequal_gain_counterexample(inst.problem, inst.lifted,
                                                  gain_spec.beta);
      p.detail = "least_squares_residual=" +
                 textio::fmt17(probe.least_squares_residual);
      p.status = (probe.internally_stable &&
                  probe.least_squares_residual > 1e-3)
                     ? "EXPECTED-INFEASIBLE"
                     : "FAIL";
    }
    results.push_back(p);
  }
  return results;
}

}  // namespace

int cmd_verify(const ExperimentConfig& cfg, std::ostream& out) {
  const GainSpec& gain_spec = require_gains(cfg);
  Report rep;
  rep.section("verify");
  int failures = 0;

  auto run_suite = [&](const std::string& label, const BuiltInstance& inst,
                       const GainSpec& spec) {
    rep.kv("instance", label);
    for (const PropertyOutcome& p :
         verify_instance(inst, spec, cfg.horizon.t_max)) {
      rep.kv("property " + p.name, p.status + " " + p.detail);
      if (p.status == "FAIL") ++failures;
    }
  };

  run_suite("configured", build_instance(cfg), gain_spec);

  for (std::uint64_t seed : cfg.verify.extra_seeds) {
    const int N = 3 + static_cast<int>(seed % 3);
    const int d = 1 + static_cast<int>(seed % 2);
    const int p = 1 + static_cast<int>(seed % 3);
    const netgraph::Graph g = netgraph::random_connected_graph(N, 0.4, seed);
    BuiltInstance inst{
        netgraph::normalized_weight_pair(
            g, netgraph::random_positive_raw(g, seed + 7)),
        {},
        quadprob::random_problem(N, d, p, seed + 1000)};
    inst.lifted = netgraph::lift(inst.weights, d);
    GainSpec spec;
    spec.kind = GainSpec::Kind::kGamma;
    spec.gamma = 0.05;
    run_suite("seed-" + std::to_string(seed), inst, spec);
  }

  rep.section("result");
  rep.kv("failures", failures);
  const int exit_code = failures == 0 ? kExitOk : kExitAnalysis;
  rep.kv("exit", exit_code);
  emit(cfg, "verify_report.txt", rep.text(), out);
  return exit_code;
}

}  // namespace gtlab::experiment
