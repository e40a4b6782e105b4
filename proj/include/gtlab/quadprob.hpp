#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

namespace gtlab::quadprob {

// Ensemble of N local quadratic costs
//   f_i(θ) = ½ (θ − Γ_i θ₀)ᵀ C_i (θ − Γ_i θ₀),  C_i symmetric positive
// definite, together with the derived objects for the stacked affine output
// map y = C x + Q θ₀ and the unique global minimizer θ* = Σ θ₀.
//
// θ₀ is stored with the problem but is harness-side knowledge: simulated
// agents only ever observe gradient values y_i, never C_j (j ≠ i), Q_i or θ₀.
class QuadraticProblem {
 public:
  // Minimum eigenvalue required of each C_i.
  static constexpr double kSpdTol = 1e-10;
  // Symmetry tolerance on each C_i.
  static constexpr double kSymTol = 1e-12;

  static QuadraticProblem make(std::vector<Eigen::MatrixXd> C_list,
                               std::vector<Eigen::MatrixXd> Gamma_list,
                               Eigen::VectorXd theta0);

  int agents() const { return N_; }
  int dim() const { return d_; }
  int offset_dim() const { return p_; }

  const Eigen::MatrixXd& C(int i) const;
  const Eigen::MatrixXd& Gamma(int i) const;
  // Q_i = −C_i Γ_i
  const Eigen::MatrixXd& Q(int i) const;
  const Eigen::VectorXd& theta0() const { return theta0_; }
  // Σ = (Σ_i C_i)⁻¹ Σ_i C_i Γ_i, d × p
  const Eigen::MatrixXd& Sigma() const { return sigma_; }
  // diag(C_1 .. C_N), Nd × Nd
  const Eigen::MatrixXd& block_C() const { return block_C_; }
  // col(Q_1 .. Q_N), Nd × p
  const Eigen::MatrixXd& stacked_Q() const { return stacked_Q_; }

  // θ* = Σ θ₀
  Eigen::VectorXd optimal_solution() const { return sigma_ * theta0_; }
  // ∇f_i(x_i) = C_i x_i + Q_i θ₀
  Eigen::VectorXd local_gradient(int i, const Eigen::VectorXd& x_i) const;
  // Stacked gradients C x + Q θ₀ for x ∈ R^{Nd}.
  Eigen::VectorXd stacked_output(const Eigen::VectorXd& x) const;
  // Σ_i f_i(θ)
  double total_cost(const Eigen::VectorXd& theta) const;

 private:
  QuadraticProblem() = default;

  int N_ = 0, d_ = 0, p_ = 0;
  std::vector<Eigen::MatrixXd> C_list_, Gamma_list_, Q_list_;
  Eigen::VectorXd theta0_;
  Eigen::MatrixXd sigma_, block_C_, stacked_Q_;
};

QuadraticProblem make_problem(std::vector<Eigen::MatrixXd> C_list,
                              std::vector<Eigen::MatrixXd> Gamma_list,
                              Eigen::VectorXd theta0);

// C_i = M_i M_iᵀ + d·I with M_i standard normal (unconditionally positive
// definite); Γ_i and θ₀ standard normal. Deterministic in the seed.
QuadraticProblem random_problem(int N, int d, int p, std::uint64_t seed);

// Structured text, full double round-trip.
void save_problem(const std::filesystem::path& path,
                  const QuadraticProblem& prob);
QuadraticProblem load_problem(const std::filesystem::path& path);

}  // namespace gtlab::quadprob
