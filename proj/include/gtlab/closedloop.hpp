#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gtlab/lingebra.hpp"
#include "gtlab/netgraph.hpp"
#include "gtlab/quadprob.hpp"

namespace gtlab::closedloop {

enum class GainProvenance { kGradientTracking, kGradientTrackingDiag, kCustom };

// Matrices of the sparse dynamic output-feedback controller
//   z⁺ = Φ z + B_x x + B_y y,   u = K_x x + K_y y + K_z z,
// with controller dimension fixed to the plant dimension (n_z = d). All
// constructors pin the gradient-tracking structure Φ = Ã⊗I, B_x = 0,
// B_y = Ã⊗I − I, K_x = A⊗I; the stepsize lives in K_y and K_z.
struct GainSet {
  int N = 0;
  int d = 0;
  GainProvenance provenance = GainProvenance::kCustom;
  Eigen::MatrixXd Phi, B_x, B_y, K_x, K_y, K_z;  // each Nd × Nd

  bool gains_equal(double tol = 1e-12) const {
    return lingebra::max_abs(K_y - K_z) <= tol;
  }
};

// K_y = K_z = −γ I.
GainSet gt_gains(const netgraph::LiftedWeights& lifted, double gamma);
// K_y = K_z = −Λ with Λ = diag(lambda), lambda > 0 entrywise, length Nd.
GainSet gt_gains_diag(const netgraph::LiftedWeights& lifted,
                      const Eigen::VectorXd& lambda);
// Free K_y, K_z on top of the gradient-tracking structure; escape hatch for
// gain-mismatch experiments.
GainSet custom_gains(const netgraph::LiftedWeights& lifted,
                     Eigen::MatrixXd K_y, Eigen::MatrixXd K_z);

// Closed loop [x; z]⁺ = F [x; z] + G θ₀ together with its open-loop split
// F = F0 + B0 [K_y C, K_z] and the structured orthonormal transformation
// T = [T1 T2]: T1 = blkdiag(I, R) spans the reachable subspace of (F0, B0),
// T2 = [0; 1⊗I]/√N its orthogonal complement.
struct ClosedLoopSystem {
  ClosedLoopSystem(quadprob::QuadraticProblem p, GainSet g)
      : problem(std::move(p)), gains(std::move(g)) {}

  quadprob::QuadraticProblem problem;
  GainSet gains;
  Eigen::MatrixXd F;   // 2Nd × 2Nd
  Eigen::MatrixXd G;   // 2Nd × p
  Eigen::MatrixXd F0;  // 2Nd × 2Nd
  Eigen::MatrixXd B0;  // 2Nd × Nd
  lingebra::SubspaceBasis T1;
  lingebra::SubspaceBasis T2;

  int state_dim() const { return gains.N * gains.d; }  // Nd
  int n() const { return 2 * state_dim(); }
};

ClosedLoopSystem assemble(const quadprob::QuadraticProblem& prob,
                          const GainSet& gains);

// Spectral classification of the closed loop. Admissibility asks for exactly
// d eigenvalues clustered at the value 1 and all remaining eigenvalues
// strictly inside the unit disc; eigenvalues that sit on the circle away
// from 1 are reported but never accepted.
struct StabilityReport {
  static constexpr double kUnitClusterRadius = 1e-7;
  static constexpr double kInvarianceTol = 1e-9;

  lingebra::Spectrum full;            // σ(F)
  lingebra::Spectrum internal_block;  // σ(T1ᵀ F T1)
  double invariance_residual = 0.0;   // max|T2ᵀ F T1|
  double external_identity_gap = 0.0; // max|T2ᵀ F T2 − I|
  int unit_cluster_count = 0;         // #{ |λ − 1| ≤ kUnitClusterRadius }
  bool v_invariant = false;
  bool internally_stable = false;
  bool externally_antistable = false;
  bool admissible = false;
};

StabilityReport analyze_stability(const ClosedLoopSystem& cl);

// Closed-form steady-state maps: Π_x = (1⊗I)Σ and Π_z = −(C(1⊗I)Σ + Q),
// valid whenever K_z = K_y; P is the complement component T2 T2ᵀ Π, which
// the gradient-tracking structure forces to zero.
struct RegulatorSolution {
  Eigen::MatrixXd Pi;                 // 2Nd × p
  Eigen::MatrixXd Pi_x, Pi_z;         // Nd × p
  Eigen::MatrixXd P;                  // 2Nd × p
  double residual_fixed_point = 0.0;  // max|Π − FΠ − G|
  double residual_output = 0.0;       // max|(1⊗I)Σ − [I 0]Π|
  double residual_complement = 0.0;   // max|T2ᵀ(Π − P)|
  double p_norm = 0.0;                // max|P|
};

// Throws when K_z ≠ K_y: the steady-state equations are then not
// guaranteed solvable (see unequal_gain_counterexample).
RegulatorSolution solve_regulator(const ClosedLoopSystem& cl);

struct EquilibriumPoint {
  Eigen::VectorXd x_eq;  // = (1⊗I) θ*
  Eigen::VectorXd z_eq;
};

EquilibriumPoint equilibrium(const RegulatorSolution& reg,
                             const Eigen::VectorXd& theta0);

// Bisection for the largest admissible scalar stepsize. A log grid is
// sampled first so a non-interval admissibility pattern is visible in the
// result rather than silently bisected over.
struct StepsizeSearch {
  double gamma_star = 0.0;
  bool hit_bracket = false;     // bracket_hi itself admissible
  bool monotone_pattern = true; // samples are admissible-prefix shaped
  std::vector<std::pair<double, bool>> samples;
};

StepsizeSearch find_critical_stepsize(const quadprob::QuadraticProblem& prob,
                                      const netgraph::LiftedWeights& lifted,
                                      double bracket_hi);

// Internal stability alone does not produce an optimal equilibrium: with
// K_z = 0 and K_y = −β C⁻¹ (so the x-block becomes A⊗I − βI, Schur for
// suitable β) the steady-state linear system has no solution. The report
// carries the minimum-norm least-squares residual as evidence, plus the
// residual of the repaired K_z = K_y variant for contrast.
struct UnequalGainReport {
  GainSet gains;
  double beta = 0.0;
  bool internally_stable = false;
  double invariance_residual = 0.0;
  double least_squares_residual = 0.0;  // Frobenius
  double contrast_residual = 0.0;       // max-abs, K_z = K_y restored
};

UnequalGainReport unequal_gain_counterexample(
    const quadprob::QuadraticProblem& prob,
    const netgraph::LiftedWeights& lifted, double beta = 0.5);

}  // namespace gtlab::closedloop
