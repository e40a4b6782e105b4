#include "gtlab/lingebra.hpp"

#include <algorithm>
#include <stdexcept>

namespace gtlab::lingebra {

namespace {

// Orthonormal column basis of img M at the given relative rank tolerance.
Eigen::MatrixXd orth(const Eigen::MatrixXd& M, double rank_tol) {
  if (M.cols() == 0) return Eigen::MatrixXd(M.rows(), 0);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
  qr.setThreshold(rank_tol);
  const Eigen::Index rank = qr.rank();
  Eigen::MatrixXd Q =
      qr.householderQ() * Eigen::MatrixXd::Identity(M.rows(), rank);
  return Q;
}

}  // namespace

int Spectrum::count_inside() const {
  int n = 0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    if (std::abs(eigenvalues(i)) < 1.0 - tol) ++n;
  return n;
}

int Spectrum::count_on_circle() const {
  int n = 0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    if (std::abs(std::abs(eigenvalues(i)) - 1.0) <= tol) ++n;
  return n;
}

int Spectrum::count_outside() const {
  int n = 0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    if (std::abs(eigenvalues(i)) > 1.0 + tol) ++n;
  return n;
}

double Spectrum::spectral_radius() const {
  double r = 0.0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    r = std::max(r, std::abs(eigenvalues(i)));
  return r;
}

double Spectrum::largest_subunit_modulus() const {
  double r = 0.0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
    const double m = std::abs(eigenvalues(i));
    if (m < 1.0 - tol) r = std::max(r, m);
  }
  return r;
}

Spectrum spectrum(const Eigen::MatrixXd& M, double tol) {
  if (M.rows() != M.cols())
    throw std::invalid_argument("spectrum requires a square matrix");
  if (!M.allFinite())
    throw std::invalid_argument("spectrum requires finite entries");
  Spectrum s;
  s.tol = tol;
  if (M.rows() == 0) {
    s.eigenvalues = Eigen::VectorXcd(0);
    return s;
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(M, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigenvalue iteration failed to converge");
  s.eigenvalues = es.eigenvalues();
  std::vector<std::complex<double>> v(s.eigenvalues.data(),
                                      s.eigenvalues.data() +
                                          s.eigenvalues.size());
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    const double ma = std::abs(a), mb = std::abs(b);
    if (ma != mb) return ma > mb;
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
  });
  for (std::size_t i = 0; i < v.size(); ++i) s.eigenvalues(i) = v[i];
  return s;
}

bool is_schur(const Eigen::MatrixXd& M, double tol) {
  return spectrum(M, tol).spectral_radius() < 1.0 - tol;
}

SubspaceBasis ones_complement(int N, int d) {
  if (N < 1 || d < 1)
    throw std::invalid_argument("ones_complement requires N, d >= 1");
  if (N == 1) return SubspaceBasis{Eigen::MatrixXd(d, 0)};
  // Householder complement of the ones vector, then block lift.
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(N, 1);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(ones);
  Eigen::MatrixXd Qfull =
      qr.householderQ() * Eigen::MatrixXd::Identity(N, N);
  Eigen::MatrixXd U = Qfull.rightCols(N - 1);  // Uᵀ1 = 0, UᵀU = I
  SubspaceBasis out;
  out.columns = Eigen::MatrixXd::Zero(N * d, (N - 1) * d);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N - 1; ++j)
      for (int r = 0; r < d; ++r) out.columns(i * d + r, j * d + r) = U(i, j);
  return out;
}

SubspaceBasis reachable_subspace(const Eigen::MatrixXd& F0,
                                 const Eigen::MatrixXd& B0, double rank_tol) {
  if (F0.rows() != F0.cols())
    throw std::invalid_argument("F0 must be square");
  if (B0.rows() != F0.rows())
    throw std::invalid_argument("F0 and B0 row counts differ");
  const Eigen::Index n = F0.rows();
  Eigen::MatrixXd V = orth(B0, rank_tol);
  for (Eigen::Index it = 0; it < n; ++it) {
    if (V.cols() >= n) break;
    Eigen::MatrixXd W(n, V.cols() * 2);
    W << V, F0 * V;
    Eigen::MatrixXd Vn = orth(W, rank_tol);
    if (Vn.cols() == V.cols()) break;
    V = std::move(Vn);
  }
  return SubspaceBasis{std::move(V)};
}

SubspaceBasis pbh_unreachable_left_kernel(const Eigen::MatrixXd& F0,
                                          const Eigen::MatrixXd& B0,
                                          double tol) {
  if (F0.rows() != F0.cols())
    throw std::invalid_argument("F0 must be square");
  if (B0.rows() != F0.rows())
    throw std::invalid_argument("F0 and B0 row counts differ");
  const Eigen::Index n = F0.rows();
  Eigen::MatrixXd pencil(n, n + B0.cols());
  pencil << F0 - Eigen::MatrixXd::Identity(n, n), B0;
  return kernel_basis(pencil.transpose(), tol);
}

SubspaceBasis kernel_basis(const Eigen::MatrixXd& M, double tol) {
  if (M.rows() == 0 || M.cols() == 0)
    return SubspaceBasis{Eigen::MatrixXd::Identity(M.cols(), M.cols())};
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cutoff = tol * std::max(sv(0), 1.0);
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++rank;
  return SubspaceBasis{svd.matrixV().rightCols(M.cols() - rank)};
}

SimilarityBlocks similarity_blocks(const Eigen::MatrixXd& F,
                                   const SubspaceBasis& T1,
                                   const SubspaceBasis& T2) {
  const Eigen::Index n = F.rows();
  if (F.cols() != n) throw std::invalid_argument("F must be square");
  if (T1.ambient() != n || T2.ambient() != n)
    throw std::invalid_argument("basis ambient dimension mismatch");
  if (T1.dim() + T2.dim() != n)
    throw std::invalid_argument("[T1 T2] must be square");
  Eigen::MatrixXd T(n, n);
  T << T1.columns, T2.columns;
  if (max_abs(T.transpose() * T - Eigen::MatrixXd::Identity(n, n)) > 1e-10)
    throw std::invalid_argument("[T1 T2] is not orthonormal");
  SimilarityBlocks out;
  out.F_I = T1.columns.transpose() * F * T1.columns;
  out.F_J = T1.columns.transpose() * F * T2.columns;
  out.F_E = T2.columns.transpose() * F * T2.columns;
  out.residual = max_abs(T2.columns.transpose() * F * T1.columns);
  return out;
}

Eigen::MatrixXd solve_linear(const Eigen::MatrixXd& A,
                             const Eigen::MatrixXd& B) {
  if (A.rows() != A.cols())
    throw std::invalid_argument("solve_linear requires a square matrix");
  if (B.rows() != A.rows())
    throw std::invalid_argument("right-hand side has wrong row count");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  if (smin == 0.0 || sv(0) / smin >= 1e12)
    throw std::invalid_argument("matrix is singular to working tolerance");
  return svd.solve(B);
}

}  // namespace gtlab::lingebra
