#include "gtlab/netgraph.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <random>
#include <set>
#include <stdexcept>

#include "gtlab/textio.hpp"

namespace gtlab::netgraph {

namespace {

constexpr double kStochasticTol = 1e-12;

void check_stochasticity(const WeightPair& w) {
  const int n = w.graph.size();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  const double row_err = (w.A * ones - ones).cwiseAbs().maxCoeff();
  const double col_err =
      (w.A_tilde.transpose() * ones - ones).cwiseAbs().maxCoeff();
  if (row_err > kStochasticTol)
    throw std::runtime_error("weight matrix A is not row stochastic");
  if (col_err > kStochasticTol)
    throw std::runtime_error("weight matrix A_tilde is not column stochastic");
}

void check_sparsity(const Graph& g, const Eigen::MatrixXd& m,
                    const std::string& name) {
  const int n = g.size();
  if (m.rows() != n || m.cols() != n)
    throw std::invalid_argument(name + " has wrong dimensions");
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const bool on_pattern = g.adjacent(i, j);
      if (on_pattern && !(m(i, j) > 0.0))
        throw std::invalid_argument(name + " must be positive on edge (" +
                                    std::to_string(i) + "," +
                                    std::to_string(j) + ")");
      if (!on_pattern && m(i, j) != 0.0)
        throw std::invalid_argument(name + " must be zero off the sparsity "
                                    "pattern at (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
    }
  }
}

}  // namespace

Graph::Graph(int n_nodes, const std::vector<std::pair<int, int>>& edges)
    : n_(n_nodes) {
  if (n_nodes < 1) throw std::invalid_argument("graph needs at least one node");
  std::vector<std::set<int>> adj(n_nodes);
  for (int i = 0; i < n_nodes; ++i) adj[i].insert(i);
  for (const auto& [a, b] : edges) {
    if (a < 0 || a >= n_nodes || b < 0 || b >= n_nodes)
      throw std::invalid_argument("edge (" + std::to_string(a) + "," +
                                  std::to_string(b) + ") out of range");
    adj[a].insert(b);
    adj[b].insert(a);
  }
  nbrs_.reserve(n_nodes);
  for (auto& s : adj) nbrs_.emplace_back(s.begin(), s.end());
}

const std::vector<int>& Graph::neighbors(int i) const {
  if (i < 0 || i >= n_) throw std::invalid_argument("node index out of range");
  return nbrs_[i];
}

bool Graph::adjacent(int i, int j) const {
  const auto& ni = neighbors(i);
  return std::binary_search(ni.begin(), ni.end(), j);
}

int Graph::degree(int i) const {
  return static_cast<int>(neighbors(i).size()) - 1;
}

std::vector<std::pair<int, int>> Graph::edge_list() const {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < n_; ++i)
    for (int j : nbrs_[i])
      if (j > i) out.emplace_back(i, j);
  return out;
}

Graph build_graph(int n_nodes, const std::vector<std::pair<int, int>>& edges) {
  return Graph(n_nodes, edges);
}

bool is_connected(const Graph& g) {
  const int n = g.size();
  std::vector<bool> seen(n, false);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = true;
  int visited = 1;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int v : g.neighbors(u)) {
      if (!seen[v]) {
        seen[v] = true;
        ++visited;
        frontier.push(v);
      }
    }
  }
  return visited == n;
}

Graph preset_graph(const std::string& name, int n) {
  if (n < 1) throw std::invalid_argument("preset graph needs n >= 1");
  std::vector<std::pair<int, int>> edges;
  if (name == "path") {
    for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  } else if (name == "cycle") {
    for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
    if (n > 2) edges.emplace_back(n - 1, 0);
  } else if (name == "complete") {
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) edges.emplace_back(i, j);
  } else if (name == "star") {
    for (int i = 1; i < n; ++i) edges.emplace_back(0, i);
  } else {
    throw std::invalid_argument("unknown graph preset '" + name + "'");
  }
  return Graph(n, edges);
}

Graph random_connected_graph(int n, double extra_edge_prob,
                             std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("graph needs at least one node");
  std::mt19937_64 rng(seed);
  std::vector<std::pair<int, int>> edges;
  for (int i = 1; i < n; ++i) {
    std::uniform_int_distribution<int> parent(0, i - 1);
    edges.emplace_back(parent(rng), i);
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (coin(rng) < extra_edge_prob) edges.emplace_back(i, j);
  return Graph(n, edges);
}

Eigen::MatrixXd random_positive_raw(const Graph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  const int n = g.size();
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j : g.neighbors(i)) raw(i, j) = u(rng);
  return raw;
}

WeightPair metropolis_weights(const Graph& g) {
  if (!is_connected(g))
    throw std::invalid_argument("metropolis_weights requires a connected graph");
  const int n = g.size();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double off = 0.0;
    for (int j : g.neighbors(i)) {
      if (j == i) continue;
      A(i, j) = 1.0 / (1.0 + std::max(g.degree(i), g.degree(j)));
      off += A(i, j);
    }
    A(i, i) = 1.0 - off;
  }
  WeightPair w{g, A, A};
  check_stochasticity(w);
  return w;
}

WeightPair normalized_weight_pair(const Graph& g, const Eigen::MatrixXd& raw) {
  if (!is_connected(g))
    throw std::invalid_argument(
        "normalized_weight_pair requires a connected graph");
  check_sparsity(g, raw, "raw weight matrix");
  const int n = g.size();
  const Eigen::VectorXd row_sums = raw.rowwise().sum();
  const Eigen::VectorXd col_sums = raw.colwise().sum();
  for (int i = 0; i < n; ++i) {
    if (!(row_sums(i) > 0.0))
      throw std::invalid_argument("raw weight matrix has a zero row");
    if (!(col_sums(i) > 0.0))
      throw std::invalid_argument("raw weight matrix has a zero column");
  }
  Eigen::MatrixXd A = raw.array().colwise() / row_sums.array();
  Eigen::MatrixXd At = raw.array().rowwise() / col_sums.transpose().array();
  WeightPair w{g, std::move(A), std::move(At)};
  check_stochasticity(w);
  return w;
}

WeightPair unchecked_weight_pair(Graph g, Eigen::MatrixXd A,
                                 Eigen::MatrixXd A_tilde) {
  check_sparsity(g, A, "A");
  check_sparsity(g, A_tilde, "A_tilde");
  return WeightPair{std::move(g), std::move(A), std::move(A_tilde)};
}

Eigen::MatrixXd kron_identity(const Eigen::MatrixXd& M, int d) {
  if (d < 1) throw std::invalid_argument("lift dimension must be >= 1");
  Eigen::MatrixXd out =
      Eigen::MatrixXd::Zero(M.rows() * d, M.cols() * d);
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      for (int r = 0; r < d; ++r) out(i * d + r, j * d + r) = M(i, j);
  return out;
}

Eigen::MatrixXd stacked_identity(int N, int d) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N * d, d);
  for (int i = 0; i < N; ++i)
    out.block(i * d, 0, d, d) = Eigen::MatrixXd::Identity(d, d);
  return out;
}

LiftedWeights lift(const WeightPair& w, int d) {
  LiftedWeights out;
  out.N = w.graph.size();
  out.d = d;
  out.bold_A = kron_identity(w.A, d);
  out.bold_A_tilde = kron_identity(w.A_tilde, d);
  out.bold_ones = stacked_identity(out.N, d);
  return out;
}

void save_weights(const std::filesystem::path& path, const WeightPair& w) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  const int n = w.graph.size();
  const auto edges = w.graph.edge_list();
  out << "gtlab-weights v1\n";
  out << "n " << n << "\n";
  out << "edges " << edges.size() << "\n";
  for (const auto& [i, j] : edges) out << i + 1 << " " << j + 1 << "\n";
  out << "A\n";
  for (int i = 0; i < n; ++i)
    out << textio::fmt_row(w.A.row(i).transpose()) << "\n";
  out << "A_tilde\n";
  for (int i = 0; i < n; ++i)
    out << textio::fmt_row(w.A_tilde.row(i).transpose()) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

WeightPair load_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  textio::expect_token(in, "gtlab-weights");
  textio::expect_token(in, "v1");
  textio::expect_token(in, "n");
  const int n = textio::read_int(in, "node count");
  textio::expect_token(in, "edges");
  const int m = textio::read_int(in, "edge count");
  std::vector<std::pair<int, int>> edges;
  edges.reserve(m);
  for (int k = 0; k < m; ++k) {
    const int i = textio::read_int(in, "edge endpoint");
    const int j = textio::read_int(in, "edge endpoint");
    edges.emplace_back(i - 1, j - 1);
  }
  Graph g(n, edges);
  textio::expect_token(in, "A");
  Eigen::MatrixXd A = textio::read_matrix(in, n, n, "A entries");
  textio::expect_token(in, "A_tilde");
  Eigen::MatrixXd At = textio::read_matrix(in, n, n, "A_tilde entries");
  WeightPair w{std::move(g), std::move(A), std::move(At)};
  check_stochasticity(w);
  return w;
}

}  // namespace gtlab::netgraph
