#include "gtlab/closedloop.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gtlab::closedloop {

namespace {

GainSet gt_structure(const netgraph::LiftedWeights& lifted) {
  GainSet g;
  g.N = lifted.N;
  g.d = lifted.d;
  const Eigen::Index nd = lifted.bold_A.rows();
  g.Phi = lifted.bold_A_tilde;
  g.B_x = Eigen::MatrixXd::Zero(nd, nd);
  g.B_y = lifted.bold_A_tilde - Eigen::MatrixXd::Identity(nd, nd);
  g.K_x = lifted.bold_A;
  return g;
}

}  // namespace

GainSet gt_gains(const netgraph::LiftedWeights& lifted, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("stepsize must be positive");
  GainSet g = gt_structure(lifted);
  g.provenance = GainProvenance::kGradientTracking;
  const Eigen::Index nd = g.K_x.rows();
  g.K_y = -gamma * Eigen::MatrixXd::Identity(nd, nd);
  g.K_z = g.K_y;
  return g;
}

GainSet gt_gains_diag(const netgraph::LiftedWeights& lifted,
                      const Eigen::VectorXd& lambda) {
  const Eigen::Index nd = lifted.bold_A.rows();
  if (lambda.size() != nd)
    throw std::invalid_argument("lambda must have N*d entries");
  if (!(lambda.minCoeff() > 0.0))
    throw std::invalid_argument("lambda entries must be positive");
  GainSet g = gt_structure(lifted);
  g.provenance = GainProvenance::kGradientTrackingDiag;
  g.K_y = (-lambda).asDiagonal();
  g.K_z = g.K_y;
  return g;
}

GainSet custom_gains(const netgraph::LiftedWeights& lifted,
                     Eigen::MatrixXd K_y, Eigen::MatrixXd K_z) {
  const Eigen::Index nd = lifted.bold_A.rows();
  if (K_y.rows() != nd || K_y.cols() != nd || K_z.rows() != nd ||
      K_z.cols() != nd)
    throw std::invalid_argument("gain matrices must be Nd x Nd");
  GainSet g = gt_structure(lifted);
  g.provenance = GainProvenance::kCustom;
  g.K_y = std::move(K_y);
  g.K_z = std::move(K_z);
  return g;
}

ClosedLoopSystem assemble(const quadprob::QuadraticProblem& prob,
                          const GainSet& gains) {
  if (gains.N != prob.agents() || gains.d != prob.dim())
    throw std::invalid_argument("gain set does not match problem dimensions");
  const int nd = gains.N * gains.d;
  const int n = 2 * nd;
  const Eigen::MatrixXd& C = prob.block_C();
  const Eigen::MatrixXd& Q = prob.stacked_Q();

  ClosedLoopSystem cl(prob, gains);

  cl.F = Eigen::MatrixXd(n, n);
  cl.F.topLeftCorner(nd, nd) = gains.K_x + gains.K_y * C;
  cl.F.topRightCorner(nd, nd) = gains.K_z;
  cl.F.bottomLeftCorner(nd, nd) = gains.B_x + gains.B_y * C;
  cl.F.bottomRightCorner(nd, nd) = gains.Phi;

  cl.G = Eigen::MatrixXd(n, prob.offset_dim());
  cl.G.topRows(nd) = gains.K_y * Q;
  cl.G.bottomRows(nd) = gains.B_y * Q;

  cl.F0 = cl.F;
  cl.F0.topLeftCorner(nd, nd) = gains.K_x;
  cl.F0.topRightCorner(nd, nd).setZero();
  cl.B0 = Eigen::MatrixXd::Zero(n, nd);
  cl.B0.topRows(nd) = Eigen::MatrixXd::Identity(nd, nd);

  const lingebra::SubspaceBasis R =
      lingebra::ones_complement(gains.N, gains.d);
  cl.T1.columns = Eigen::MatrixXd::Zero(n, nd + R.dim());
  cl.T1.columns.topLeftCorner(nd, nd) = Eigen::MatrixXd::Identity(nd, nd);
  cl.T1.columns.bottomRightCorner(nd, R.dim()) = R.columns;
  cl.T2.columns = Eigen::MatrixXd::Zero(n, gains.d);
  cl.T2.columns.bottomRows(nd) =
      netgraph::stacked_identity(gains.N, gains.d) / std::sqrt(gains.N);
  return cl;
}

StabilityReport analyze_stability(const ClosedLoopSystem& cl) {
  StabilityReport rep;
  const lingebra::SimilarityBlocks blocks =
      lingebra::similarity_blocks(cl.F, cl.T1, cl.T2);
  rep.full = lingebra::spectrum(cl.F);
  rep.internal_block = lingebra::spectrum(blocks.F_I);
  rep.invariance_residual = blocks.residual;
  rep.external_identity_gap = lingebra::max_abs(
      blocks.F_E - Eigen::MatrixXd::Identity(cl.gains.d, cl.gains.d));
  rep.v_invariant = rep.invariance_residual <= StabilityReport::kInvarianceTol;
  rep.internally_stable =
      rep.internal_block.spectral_radius() < 1.0 - rep.internal_block.tol;
  // No eigenvalue of the complement block inside the open unit disc.
  double min_ext = 2.0;
  const lingebra::Spectrum ext = lingebra::spectrum(blocks.F_E);
  for (Eigen::Index i = 0; i < ext.eigenvalues.size(); ++i)
    min_ext = std::min(min_ext, std::abs(ext.eigenvalues(i)));
  rep.externally_antistable =
      cl.gains.d == 0 || min_ext >= 1.0 - StabilityReport::kInvarianceTol;

  int cluster = 0;
  bool rest_inside = true;
  for (Eigen::Index i = 0; i < rep.full.eigenvalues.size(); ++i) {
    const std::complex<double> lam = rep.full.eigenvalues(i);
    if (std::abs(lam - std::complex<double>(1.0, 0.0)) <=
        StabilityReport::kUnitClusterRadius) {
      ++cluster;
    } else if (!(std::abs(lam) < 1.0 - rep.full.tol)) {
      rest_inside = false;
    }
  }
  rep.unit_cluster_count = cluster;
  rep.admissible = (cluster == cl.gains.d) && rest_inside;
  return rep;
}

RegulatorSolution solve_regulator(const ClosedLoopSystem& cl) {
  if (!cl.gains.gains_equal())
    throw std::invalid_argument(
        "regulator solution requires K_z = K_y; for mismatched gains see "
        "unequal_gain_counterexample");
  const int nd = cl.state_dim();
  const int p = cl.problem.offset_dim();
  const Eigen::MatrixXd bold_ones =
      netgraph::stacked_identity(cl.gains.N, cl.gains.d);

  RegulatorSolution sol;
  sol.Pi_x = bold_ones * cl.problem.Sigma();
  sol.Pi_z = -(cl.problem.block_C() * sol.Pi_x + cl.problem.stacked_Q());
  sol.Pi = Eigen::MatrixXd(2 * nd, p);
  sol.Pi.topRows(nd) = sol.Pi_x;
  sol.Pi.bottomRows(nd) = sol.Pi_z;
  sol.P = cl.T2.columns * (cl.T2.columns.transpose() * sol.Pi);

  sol.residual_fixed_point =
      lingebra::max_abs(sol.Pi - cl.F * sol.Pi - cl.G);
  sol.residual_output = lingebra::max_abs(sol.Pi_x - bold_ones *
                                                        cl.problem.Sigma());
  sol.residual_complement =
      lingebra::max_abs(cl.T2.columns.transpose() * (sol.Pi - sol.P));
  sol.p_norm = lingebra::max_abs(sol.P);
  return sol;
}

EquilibriumPoint equilibrium(const RegulatorSolution& reg,
                             const Eigen::VectorXd& theta0) {
  if (theta0.size() != reg.Pi_x.cols())
    throw std::invalid_argument("theta0 has wrong dimension");
  return EquilibriumPoint{reg.Pi_x * theta0, reg.Pi_z * theta0};
}

StepsizeSearch find_critical_stepsize(const quadprob::QuadraticProblem& prob,
                                      const netgraph::LiftedWeights& lifted,
                                      double bracket_hi) {
  constexpr double kGammaLo = 1e-6;
  constexpr double kBisectTol = 1e-6;
  constexpr int kGridPoints = 25;
  if (!(bracket_hi > kGammaLo))
    throw std::invalid_argument("bracket_hi must exceed 1e-6");

  auto admissible_at = [&](double gamma) {
    return analyze_stability(assemble(prob, gt_gains(lifted, gamma)))
        .admissible;
  };

  if (!admissible_at(kGammaLo))
    throw std::runtime_error(
        "not admissible at gamma = 1e-6; no stable stepsize interval found");

  StepsizeSearch out;
  const double log_lo = std::log(kGammaLo);
  const double log_hi = std::log(bracket_hi);
  for (int k = 0; k < kGridPoints; ++k) {
    const double g =
        std::exp(log_lo + (log_hi - log_lo) * k / (kGridPoints - 1));
    out.samples.emplace_back(g, admissible_at(g));
  }
  // Admissible prefix followed by an inadmissible suffix?
  bool seen_false = false;
  for (const auto& [g, ok] : out.samples) {
    if (!ok) seen_false = true;
    else if (seen_false) out.monotone_pattern = false;
  }

  if (out.samples.back().second) {
    out.gamma_star = bracket_hi;
    out.hit_bracket = true;
    return out;
  }

  // Bisect across the first admissible-to-inadmissible transition.
  double lo = kGammaLo, hi = bracket_hi;
  for (const auto& [g, ok] : out.samples) {
    if (ok) {
      lo = g;
    } else {
      hi = g;
      break;
    }
  }
  while (hi - lo > kBisectTol) {
    const double mid = 0.5 * (lo + hi);
    if (admissible_at(mid))
      lo = mid;
    else
      hi = mid;
  }
  out.gamma_star = lo;
  return out;
}

UnequalGainReport unequal_gain_counterexample(
    const quadprob::QuadraticProblem& prob,
    const netgraph::LiftedWeights& lifted, double beta) {
  if (!(beta > 0.0 && beta < 1.0))
    throw std::invalid_argument("beta must lie in (0, 1)");
  const int nd = lifted.N * lifted.d;

  // Shrink beta until A⊗I − βI is Schur (the shift can only fail through
  // eigenvalues of A near −1).
  const lingebra::Spectrum specA = lingebra::spectrum(lifted.bold_A);
  auto shifted_ok = [&](double b) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < specA.eigenvalues.size(); ++i)
      worst = std::max(worst,
                       std::abs(specA.eigenvalues(i) -
                                std::complex<double>(b, 0.0)));
    return worst < 1.0 - 1e-9;
  };
  double b = beta;
  for (int tries = 0; tries < 40 && !shifted_ok(b); ++tries) b *= 0.5;
  if (!shifted_ok(b))
    throw std::runtime_error("could not find a Schur-shifting beta");

  // K_y = −β C⁻¹ (block diagonal), K_z = 0, so the x-block of F is A⊗I − βI.
  Eigen::MatrixXd K_y = Eigen::MatrixXd::Zero(nd, nd);
  const int d = lifted.d;
  for (int i = 0; i < lifted.N; ++i) {
    const Eigen::MatrixXd Ci = prob.C(i);
    K_y.block(i * d, i * d, d, d) =
        -b * Eigen::LLT<Eigen::MatrixXd>(Ci).solve(
                 Eigen::MatrixXd::Identity(d, d));
  }
  const GainSet gains =
      custom_gains(lifted, K_y, Eigen::MatrixXd::Zero(nd, nd));
  const ClosedLoopSystem cl = assemble(prob, gains);
  const StabilityReport stab = analyze_stability(cl);

  UnequalGainReport rep;
  rep.gains = gains;
  rep.beta = b;
  rep.internally_stable = stab.internally_stable;
  rep.invariance_residual = stab.invariance_residual;

  // Minimum-norm least squares over the stacked steady-state equations
  //   (I − F) Π = G,  [I 0] Π = (1⊗I) Σ.
  const int n = cl.n();
  const int p = prob.offset_dim();
  Eigen::MatrixXd M(n + nd, n);
  M.topRows(n) = Eigen::MatrixXd::Identity(n, n) - cl.F;
  M.bottomRows(nd).setZero();
  M.block(n, 0, nd, nd) = Eigen::MatrixXd::Identity(nd, nd);
  Eigen::MatrixXd rhs(n + nd, p);
  rhs.topRows(n) = cl.G;
  rhs.bottomRows(nd) =
      netgraph::stacked_identity(lifted.N, lifted.d) * prob.Sigma();
  const Eigen::MatrixXd Pi_ls =
      M.completeOrthogonalDecomposition().solve(rhs);
  rep.least_squares_residual = (M * Pi_ls - rhs).norm();

  // Same K_y with the equal-gain constraint restored solves exactly.
  const ClosedLoopSystem repaired =
      assemble(prob, custom_gains(lifted, K_y, K_y));
  const RegulatorSolution reg = solve_regulator(repaired);
  rep.contrast_residual =
      std::max({reg.residual_fixed_point, reg.residual_output,
                reg.residual_complement});
  return rep;
}

}  // namespace gtlab::closedloop
