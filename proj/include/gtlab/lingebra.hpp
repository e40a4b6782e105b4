#pragma once

#include <Eigen/Dense>

namespace gtlab::lingebra {

inline double max_abs(const Eigen::MatrixXd& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

// Eigenvalues of a square real matrix, sorted by (|λ| desc, re desc,
// im desc), classified against the unit circle with tolerance tol.
struct Spectrum {
  Eigen::VectorXcd eigenvalues;
  double tol = 1e-9;

  int count_inside() const;     // |λ| < 1 − tol
  int count_on_circle() const;  // | |λ| − 1 | ≤ tol
  int count_outside() const;    // |λ| > 1 + tol
  double spectral_radius() const;
  // Largest |λ| among eigenvalues strictly inside; 0 when none.
  double largest_subunit_modulus() const;
};

Spectrum spectrum(const Eigen::MatrixXd& M, double tol = 1e-9);

// max |λ| < 1 − tol
bool is_schur(const Eigen::MatrixXd& M, double tol = 1e-9);

struct SubspaceBasis {
  Eigen::MatrixXd columns;  // orthonormal
  int dim() const { return static_cast<int>(columns.cols()); }
  int ambient() const { return static_cast<int>(columns.rows()); }
};

// R ∈ R^{Nd×(N−1)d} with RᵀR = I and Rᵀ(1_N ⊗ I_d) = 0; empty for N = 1.
SubspaceBasis ones_complement(int N, int d);

// Orthonormal basis of the smallest F0-invariant subspace containing
// img B0. Krylov image iteration with re-orthonormalization at each step.
SubspaceBasis reachable_subspace(const Eigen::MatrixXd& F0,
                                 const Eigen::MatrixXd& B0,
                                 double rank_tol = 1e-9);

// Orthonormal basis of the left kernel of [F0 − I, B0]: the directions in
// which the pair fails the eigenvalue-1 stabilizability rank test.
SubspaceBasis pbh_unreachable_left_kernel(const Eigen::MatrixXd& F0,
                                          const Eigen::MatrixXd& B0,
                                          double tol = 1e-9);

// Orthonormal basis of ker M (right null space), via SVD.
SubspaceBasis kernel_basis(const Eigen::MatrixXd& M, double tol = 1e-9);

// Blocks of Tᵀ F T for T = [T1 T2] orthonormal. residual = max|T2ᵀ F T1|,
// which vanishes exactly when span T1 is F-invariant.
struct SimilarityBlocks {
  Eigen::MatrixXd F_I;  // T1ᵀ F T1
  Eigen::MatrixXd F_J;  // T1ᵀ F T2
  Eigen::MatrixXd F_E;  // T2ᵀ F T2
  double residual = 0.0;
};

SimilarityBlocks similarity_blocks(const Eigen::MatrixXd& F,
                                   const SubspaceBasis& T1,
                                   const SubspaceBasis& T2);

// Solve A X = B for square A; rejects systems with SVD condition number
// at or above 1e12.
Eigen::MatrixXd solve_linear(const Eigen::MatrixXd& A,
                             const Eigen::MatrixXd& B);

}  // namespace gtlab::lingebra
