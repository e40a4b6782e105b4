#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gtlab::netgraph {

// Undirected communication graph over nodes 0..n-1. Construction applies
// symmetric closure, deduplicates edges and inserts a self-loop at every
// node, so each node always appears in its own neighbor set.
class Graph {
 public:
  Graph(int n_nodes, const std::vector<std::pair<int, int>>& edges);

  int size() const { return n_; }
  // Sorted neighbor list of node i, self included.
  const std::vector<int>& neighbors(int i) const;
  bool adjacent(int i, int j) const;
  // Degree excluding the self-loop.
  int degree(int i) const;
  // Off-diagonal edges as (i, j) with i < j, sorted.
  std::vector<std::pair<int, int>> edge_list() const;

 private:
  int n_ = 0;
  std::vector<std::vector<int>> nbrs_;
};

Graph build_graph(int n_nodes, const std::vector<std::pair<int, int>>& edges);

bool is_connected(const Graph& g);

// Named shapes: "path", "cycle", "complete", "star" (center node 0).
Graph preset_graph(const std::string& name, int n);

// Uniform random spanning tree plus independent extra edges; deterministic
// in the seed.
Graph random_connected_graph(int n, double extra_edge_prob, std::uint64_t seed);

// Uniform(0.5, 1.5) entries on the sparsity pattern, zero elsewhere;
// deterministic in the seed. Raw material for normalized_weight_pair.
Eigen::MatrixXd random_positive_raw(const Graph& g, std::uint64_t seed);

// Row-stochastic A paired with column-stochastic A_tilde, both positive
// exactly on the graph sparsity (self-loops included).
struct WeightPair {
  Graph graph;
  Eigen::MatrixXd A;
  Eigen::MatrixXd A_tilde;
};

// a_ij = 1/(1 + max(deg_i, deg_j)) off-diagonal, diagonal fills the row to
// one. Symmetric, hence doubly stochastic; A_tilde = A. Degrees exclude the
// self-loop. Requires a connected graph.
WeightPair metropolis_weights(const Graph& g);

// A = row-wise normalization of raw, A_tilde = column-wise normalization.
// raw must be positive exactly on the sparsity pattern.
WeightPair normalized_weight_pair(const Graph& g, const Eigen::MatrixXd& raw);

// Skips the stochasticity checks. Only for experiments that deliberately
// break the weight-matrix contract; everything downstream assumes nothing.
WeightPair unchecked_weight_pair(Graph g, Eigen::MatrixXd A,
                                 Eigen::MatrixXd A_tilde);

// Block (Kronecker) lift of a weight pair to d-dimensional agent states.
struct LiftedWeights {
  int N = 0;
  int d = 0;
  Eigen::MatrixXd bold_A;        // A ⊗ I_d
  Eigen::MatrixXd bold_A_tilde;  // A_tilde ⊗ I_d
  Eigen::MatrixXd bold_ones;     // 1_N ⊗ I_d, (N d) × d
};

LiftedWeights lift(const WeightPair& w, int d);

Eigen::MatrixXd kron_identity(const Eigen::MatrixXd& M, int d);
// 1_N ⊗ I_d
Eigen::MatrixXd stacked_identity(int N, int d);

void save_weights(const std::filesystem::path& path, const WeightPair& w);
WeightPair load_weights(const std::filesystem::path& path);

}  // namespace gtlab::netgraph
