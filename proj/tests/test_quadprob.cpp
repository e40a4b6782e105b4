#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gtlab/quadprob.hpp"

using namespace gtlab;
using quadprob::QuadraticProblem;

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

// N = 1, C = Γ = [1], θ₀ = 5.
QuadraticProblem identity_problem() {
  return quadprob::make_problem({scalar_matrix(1)}, {scalar_matrix(1)},
                                scalar_vector(5));
}

// N = 2, C = (2, 1), Γ = (1, 0), θ₀ = 3.
QuadraticProblem two_agent_problem() {
  return quadprob::make_problem({scalar_matrix(2), scalar_matrix(1)},
                                {scalar_matrix(1), scalar_matrix(0)},
                                scalar_vector(3));
}

// Independent scalar minimizer: golden-section search on the summed cost.
double golden_minimize(const QuadraticProblem& prob, double lo, double hi) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  while (b - a > 1e-12) {
    const double c = b - phi * (b - a);
    const double d = a + phi * (b - a);
    if (prob.total_cost(scalar_vector(c)) < prob.total_cost(scalar_vector(d)))
      b = d;
    else
      a = c;
  }
  return 0.5 * (a + b);
}

}  // namespace

TEST_CASE("identity problem has sigma 1 and optimum 5") {
  const auto prob = identity_problem();
  CHECK(prob.Sigma()(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(prob.optimal_solution()(0) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(prob.total_cost(scalar_vector(5)) == doctest::Approx(0.0));
}

TEST_CASE("two-agent problem minimizer matches a scalar search oracle") {
  const auto prob = two_agent_problem();
  const double oracle = golden_minimize(prob, -10.0, 10.0);
  CHECK(oracle == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(prob.Sigma()(0, 0) == doctest::Approx(2.0 / 3).epsilon(1e-14));
  CHECK(prob.optimal_solution()(0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("two-agent cost at the optimum is 3") {
  // ½(2−3)²·2 + ½·2²·1 = 1 + 2
  const auto prob = two_agent_problem();
  CHECK(prob.total_cost(scalar_vector(2)) == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("validation rejects bad cost matrices") {
  Eigen::MatrixXd non_sym(2, 2);
  non_sym << 1, 2,
             0, 1;
  CHECK_THROWS_AS(
      quadprob::make_problem({non_sym}, {Eigen::MatrixXd::Identity(2, 2)},
                             Eigen::VectorXd::Ones(2)),
      std::invalid_argument);

  Eigen::MatrixXd non_pd(2, 2);
  non_pd << 1, 0,
            0, -1;
  CHECK_THROWS_AS(
      quadprob::make_problem({non_pd}, {Eigen::MatrixXd::Identity(2, 2)},
                             Eigen::VectorXd::Ones(2)),
      std::invalid_argument);

  CHECK_THROWS_AS(
      quadprob::make_problem({scalar_matrix(1), scalar_matrix(1)},
                             {scalar_matrix(1)}, scalar_vector(1)),
      std::invalid_argument);
}

TEST_CASE("local gradient: direct substitution and own-center zero") {
  const auto prob = two_agent_problem();
  // C = 2, Γ = 1, θ₀ = 3, x = 5: 2·5 − 2·3 = 4.
  CHECK(prob.local_gradient(0, scalar_vector(5))(0) ==
        doctest::Approx(4.0).epsilon(1e-14));
  // Each f_i vanishes at its own center Γ_i θ₀.
  for (int i = 0; i < prob.agents(); ++i) {
    const Eigen::VectorXd center = prob.Gamma(i) * prob.theta0();
    CHECK(prob.local_gradient(i, center).cwiseAbs().maxCoeff() <= 1e-14);
  }
  CHECK_THROWS_AS(prob.local_gradient(2, scalar_vector(0)),
                  std::invalid_argument);
}

TEST_CASE("local gradient matches central finite differences") {
  const auto prob = quadprob::random_problem(3, 2, 2, 77);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double h = 1e-5;
  for (int i = 0; i < prob.agents(); ++i) {
    Eigen::VectorXd x(prob.dim());
    for (int k = 0; k < prob.dim(); ++k) x(k) = gauss(rng);
    // f_i alone, via the total cost of a single-agent copy.
    const auto single = quadprob::make_problem({prob.C(i)}, {prob.Gamma(i)},
                                               prob.theta0());
    const Eigen::VectorXd grad = prob.local_gradient(i, x);
    for (int k = 0; k < prob.dim(); ++k) {
      Eigen::VectorXd xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      const double fd =
          (single.total_cost(xp) - single.total_cost(xm)) / (2 * h);
      CHECK(std::abs(grad(k) - fd) <= 1e-6);
    }
  }
}

TEST_CASE("stacked output agrees with per-agent gradients") {
  const auto prob = quadprob::random_problem(4, 2, 3, 11);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd x(prob.agents() * prob.dim());
  for (int k = 0; k < x.size(); ++k) x(k) = gauss(rng);
  const Eigen::VectorXd y = prob.stacked_output(x);
  for (int i = 0; i < prob.agents(); ++i) {
    const Eigen::VectorXd yi =
        prob.local_gradient(i, x.segment(i * prob.dim(), prob.dim()));
    CHECK((y.segment(i * prob.dim(), prob.dim()) - yi).cwiseAbs().maxCoeff() <=
          1e-14);
  }
  // Block form C x + Q θ₀.
  const Eigen::VectorXd block =
      prob.block_C() * x + prob.stacked_Q() * prob.theta0();
  CHECK((y - block).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("summed gradients vanish at the consensual optimum") {
  const auto prob = quadprob::random_problem(5, 2, 2, 12);
  const Eigen::VectorXd theta_star = prob.optimal_solution();
  Eigen::VectorXd x(prob.agents() * prob.dim());
  for (int i = 0; i < prob.agents(); ++i)
    x.segment(i * prob.dim(), prob.dim()) = theta_star;
  const Eigen::VectorXd y = prob.stacked_output(x);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(prob.dim());
  for (int i = 0; i < prob.agents(); ++i)
    sum += y.segment(i * prob.dim(), prob.dim());
  CHECK(sum.cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("optimum minimizes the total cost over random points") {
  const auto prob = quadprob::random_problem(3, 3, 2, 13);
  const double best = prob.total_cost(prob.optimal_solution());
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd theta(prob.dim());
    for (int k = 0; k < prob.dim(); ++k) theta(k) = gauss(rng);
    CHECK(best <= prob.total_cost(theta) + 1e-12);
  }
}

TEST_CASE("sigma satisfies its defining linear system") {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    const auto prob = quadprob::random_problem(4, 2, 3, seed);
    Eigen::MatrixXd C_sum = Eigen::MatrixXd::Zero(prob.dim(), prob.dim());
    Eigen::MatrixXd CG_sum =
        Eigen::MatrixXd::Zero(prob.dim(), prob.offset_dim());
    for (int i = 0; i < prob.agents(); ++i) {
      C_sum += prob.C(i);
      CG_sum += prob.C(i) * prob.Gamma(i);
    }
    CHECK((C_sum * prob.Sigma() - CG_sum).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("stationary point is unique and equals the optimum") {
  const auto prob = quadprob::random_problem(4, 2, 2, 31);
  Eigen::MatrixXd C_sum = Eigen::MatrixXd::Zero(prob.dim(), prob.dim());
  Eigen::VectorXd Q_sum = Eigen::VectorXd::Zero(prob.dim());
  for (int i = 0; i < prob.agents(); ++i) {
    C_sum += prob.C(i);
    Q_sum += prob.Q(i) * prob.theta0();
  }
  const Eigen::VectorXd stationary = C_sum.llt().solve(-Q_sum);
  CHECK((stationary - prob.optimal_solution()).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("random problems are deterministic in the seed and well posed") {
  const auto a = quadprob::random_problem(3, 2, 2, 99);
  const auto b = quadprob::random_problem(3, 2, 2, 99);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.C(i) == b.C(i));
    CHECK(a.Gamma(i) == b.Gamma(i));
  }
  CHECK(a.theta0() == b.theta0());
  const auto c = quadprob::random_problem(3, 2, 2, 100);
  CHECK(a.theta0() != c.theta0());
}

TEST_CASE("generated cost matrices keep the diagonal shift margin") {
  for (std::uint64_t seed : {41u, 42u, 43u, 44u}) {
    const int d = 2 + static_cast<int>(seed % 2);
    const auto prob = quadprob::random_problem(3, d, 2, seed);
    for (int i = 0; i < prob.agents(); ++i) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(prob.C(i));
      CHECK(es.eigenvalues().minCoeff() > 0.5 * d);
    }
  }
}

TEST_CASE("problem file loader rejects malformed input") {
  const auto path =
      std::filesystem::temp_directory_path() / "gtlab_bad_problem.txt";
  {
    std::ofstream out(path);
    out << "gtlab-problem v1\nN 1 d 1 p 1\ntheta0 not-a-number\n";
  }
  CHECK_THROWS_AS(quadprob::load_problem(path), std::invalid_argument);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(quadprob::load_problem(path), std::runtime_error);
}

TEST_CASE("problem files round-trip bit for bit") {
  const auto prob = quadprob::random_problem(3, 2, 2, 55);
  const auto path =
      std::filesystem::temp_directory_path() / "gtlab_test_problem.txt";
  quadprob::save_problem(path, prob);
  const auto loaded = quadprob::load_problem(path);
  CHECK(loaded.agents() == prob.agents());
  for (int i = 0; i < prob.agents(); ++i) {
    CHECK(loaded.C(i) == prob.C(i));
    CHECK(loaded.Gamma(i) == prob.Gamma(i));
  }
  CHECK(loaded.theta0() == prob.theta0());
  std::filesystem::remove(path);
}
