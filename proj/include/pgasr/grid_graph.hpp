#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pgasr::graph {

enum class Neighborhood { four, eight };

std::string to_string(Neighborhood n);
Neighborhood parse_neighborhood(const std::string& text);

// Compressed sparse row matrix in float32, used to propagate features over
// nodes inside the autodiff tape.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col_idx;
  std::vector<float> values;

  static SparseMatrix from_dense(const Eigen::MatrixXd& dense, double drop_tol = 0.0);
  SparseMatrix transposed() const;
  std::size_t nnz() const { return values.size(); }
};

// Region grid plus the undirected adjacency matrix over its M = H*W cells.
// Immutable after construction.
class UrbanGraph {
 public:
  static UrbanGraph grid(int height, int width, Neighborhood neighborhood = Neighborhood::eight);

  // Non-grid topology supplied as a dense M x M matrix. The matrix must be
  // symmetric, non-negative, zero on the diagonal and free of isolated nodes.
  static UrbanGraph from_adjacency(const Eigen::MatrixXd& adjacency, int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }
  int node_count() const { return height_ * width_; }
  std::optional<Neighborhood> neighborhood() const { return neighborhood_; }

  const Eigen::MatrixXd& adjacency() const { return adjacency_; }
  const Eigen::MatrixXd& row_normalized_adjacency() const { return row_normalized_; }

  std::size_t edge_count() const;
  double degree(int node) const;

  // Relabels node i as perm[i]: A' = P A P^T.
  UrbanGraph permuted(const std::vector<int>& perm) const;

 private:
  UrbanGraph(int height, int width, std::optional<Neighborhood> neighborhood,
             Eigen::MatrixXd adjacency);

  int height_;
  int width_;
  std::optional<Neighborhood> neighborhood_;
  Eigen::MatrixXd adjacency_;
  Eigen::MatrixXd row_normalized_;
};

struct LaplacianOptions {
  // Fixed upper bound of the normalized Laplacian spectrum. Ignored when
  // power_iteration is set.
  double lambda_max = 2.0;
  bool power_iteration = false;
  int power_iterations = 500;
};

// L~ = 2 L / lambda_max - I with L = I - D^-1/2 A D^-1/2, together with the
// Chebyshev order used by every spectral convolution built on it.
struct GraphOperator {
  Eigen::MatrixXd scaled_laplacian;
  SparseMatrix sparse;
  int chebyshev_order = 1;
  double lambda_max = 2.0;

  int node_count() const { return static_cast<int>(scaled_laplacian.rows()); }
};

GraphOperator scaled_laplacian(const UrbanGraph& graph, int chebyshev_order,
                               const LaplacianOptions& options = {});

// Dense permutation helper shared by tests and the graph module.
Eigen::MatrixXd permute_symmetric(const Eigen::MatrixXd& m, const std::vector<int>& perm);

}  // namespace pgasr::graph
