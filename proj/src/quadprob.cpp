#include "gtlab/quadprob.hpp"

#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

#include "gtlab/textio.hpp"

namespace gtlab::quadprob {

QuadraticProblem QuadraticProblem::make(std::vector<Eigen::MatrixXd> C_list,
                                        std::vector<Eigen::MatrixXd> Gamma_list,
                                        Eigen::VectorXd theta0) {
  if (C_list.empty()) throw std::invalid_argument("need at least one agent");
  if (C_list.size() != Gamma_list.size())
    throw std::invalid_argument("C_list and Gamma_list sizes differ");

  const int N = static_cast<int>(C_list.size());
  const int d = static_cast<int>(C_list[0].rows());
  const int p = static_cast<int>(theta0.size());
  if (d < 1 || p < 1) throw std::invalid_argument("dimensions must be >= 1");

  for (int i = 0; i < N; ++i) {
    const auto& C = C_list[i];
    if (C.rows() != d || C.cols() != d)
      throw std::invalid_argument("C_" + std::to_string(i) +
                                  " has inconsistent dimensions");
    if ((C - C.transpose()).cwiseAbs().maxCoeff() > kSymTol)
      throw std::invalid_argument("C_" + std::to_string(i) +
                                  " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("eigendecomposition of C failed");
    if (es.eigenvalues().minCoeff() <= kSpdTol)
      throw std::invalid_argument("C_" + std::to_string(i) +
                                  " is not positive definite");
    if (Gamma_list[i].rows() != d || Gamma_list[i].cols() != p)
      throw std::invalid_argument("Gamma_" + std::to_string(i) +
                                  " has inconsistent dimensions");
  }

  QuadraticProblem prob;
  prob.N_ = N;
  prob.d_ = d;
  prob.p_ = p;
  prob.C_list_ = std::move(C_list);
  prob.Gamma_list_ = std::move(Gamma_list);
  prob.theta0_ = std::move(theta0);

  prob.Q_list_.reserve(N);
  Eigen::MatrixXd C_sum = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd CG_sum = Eigen::MatrixXd::Zero(d, p);
  prob.block_C_ = Eigen::MatrixXd::Zero(N * d, N * d);
  prob.stacked_Q_ = Eigen::MatrixXd::Zero(N * d, p);
  for (int i = 0; i < N; ++i) {
    const Eigen::MatrixXd CG = prob.C_list_[i] * prob.Gamma_list_[i];
    prob.Q_list_.push_back(-CG);
    C_sum += prob.C_list_[i];
    CG_sum += CG;
    prob.block_C_.block(i * d, i * d, d, d) = prob.C_list_[i];
    prob.stacked_Q_.block(i * d, 0, d, p) = prob.Q_list_[i];
  }
  // C_sum is SPD (sum of SPD matrices), so Cholesky is safe here.
  prob.sigma_ = Eigen::LLT<Eigen::MatrixXd>(C_sum).solve(CG_sum);
  return prob;
}

const Eigen::MatrixXd& QuadraticProblem::C(int i) const {
  if (i < 0 || i >= N_) throw std::invalid_argument("agent index out of range");
  return C_list_[i];
}

const Eigen::MatrixXd& QuadraticProblem::Gamma(int i) const {
  if (i < 0 || i >= N_) throw std::invalid_argument("agent index out of range");
  return Gamma_list_[i];
}

const Eigen::MatrixXd& QuadraticProblem::Q(int i) const {
  if (i < 0 || i >= N_) throw std::invalid_argument("agent index out of range");
  return Q_list_[i];
}

Eigen::VectorXd QuadraticProblem::local_gradient(
    int i, const Eigen::VectorXd& x_i) const {
  if (i < 0 || i >= N_) throw std::invalid_argument("agent index out of range");
  if (x_i.size() != d_)
    throw std::invalid_argument("local state has wrong dimension");
  return C_list_[i] * x_i + Q_list_[i] * theta0_;
}

Eigen::VectorXd QuadraticProblem::stacked_output(
    const Eigen::VectorXd& x) const {
  if (x.size() != static_cast<Eigen::Index>(N_) * d_)
    throw std::invalid_argument("stacked state has wrong dimension");
  Eigen::VectorXd y(N_ * d_);
  for (int i = 0; i < N_; ++i)
    y.segment(i * d_, d_) = local_gradient(i, x.segment(i * d_, d_));
  return y;
}

double QuadraticProblem::total_cost(const Eigen::VectorXd& theta) const {
  if (theta.size() != d_)
    throw std::invalid_argument("theta has wrong dimension");
  double cost = 0.0;
  for (int i = 0; i < N_; ++i) {
    const Eigen::VectorXd r = theta - Gamma_list_[i] * theta0_;
    cost += 0.5 * r.dot(C_list_[i] * r);
  }
  return cost;
}

QuadraticProblem make_problem(std::vector<Eigen::MatrixXd> C_list,
                              std::vector<Eigen::MatrixXd> Gamma_list,
                              Eigen::VectorXd theta0) {
  return QuadraticProblem::make(std::move(C_list), std::move(Gamma_list),
                                std::move(theta0));
}

QuadraticProblem random_problem(int N, int d, int p, std::uint64_t seed) {
  if (N < 1 || d < 1 || p < 1)
    throw std::invalid_argument("sizes must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto randn = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = gauss(rng);
    return m;
  };
  std::vector<Eigen::MatrixXd> C_list, Gamma_list;
  C_list.reserve(N);
  Gamma_list.reserve(N);
  for (int i = 0; i < N; ++i) {
    const Eigen::MatrixXd M = randn(d, d);
    Eigen::MatrixXd C = M * M.transpose() +
                        static_cast<double>(d) * Eigen::MatrixXd::Identity(d, d);
    // Symmetrize away the rounding asymmetry of M Mᵀ.
    C = 0.5 * (C + C.transpose()).eval();
    C_list.push_back(std::move(C));
    Gamma_list.push_back(randn(d, p));
  }
  Eigen::VectorXd theta0 = randn(p, 1).col(0);
  return QuadraticProblem::make(std::move(C_list), std::move(Gamma_list),
                                std::move(theta0));
}

void save_problem(const std::filesystem::path& path,
                  const QuadraticProblem& prob) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "gtlab-problem v1\n";
  out << "N " << prob.agents() << " d " << prob.dim() << " p "
      << prob.offset_dim() << "\n";
  out << "theta0 " << textio::fmt_row(prob.theta0()) << "\n";
  for (int i = 0; i < prob.agents(); ++i) {
    out << "C " << i << "\n";
    for (int r = 0; r < prob.dim(); ++r)
      out << textio::fmt_row(prob.C(i).row(r).transpose()) << "\n";
    out << "Gamma " << i << "\n";
    for (int r = 0; r < prob.dim(); ++r)
      out << textio::fmt_row(prob.Gamma(i).row(r).transpose()) << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

QuadraticProblem load_problem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  textio::expect_token(in, "gtlab-problem");
  textio::expect_token(in, "v1");
  textio::expect_token(in, "N");
  const int N = textio::read_int(in, "agent count");
  textio::expect_token(in, "d");
  const int d = textio::read_int(in, "dimension");
  textio::expect_token(in, "p");
  const int p = textio::read_int(in, "offset dimension");
  textio::expect_token(in, "theta0");
  Eigen::VectorXd theta0 = textio::read_matrix(in, p, 1, "theta0").col(0);
  std::vector<Eigen::MatrixXd> C_list, Gamma_list;
  for (int i = 0; i < N; ++i) {
    textio::expect_token(in, "C");
    if (textio::read_int(in, "agent tag") != i)
      throw std::invalid_argument("problem file: agent blocks out of order");
    C_list.push_back(textio::read_matrix(in, d, d, "C entries"));
    textio::expect_token(in, "Gamma");
    if (textio::read_int(in, "agent tag") != i)
      throw std::invalid_argument("problem file: agent blocks out of order");
    Gamma_list.push_back(textio::read_matrix(in, d, p, "Gamma entries"));
  }
  return QuadraticProblem::make(std::move(C_list), std::move(Gamma_list),
                                std::move(theta0));
}

}  // namespace gtlab::quadprob
