#include "pgasr/grid_graph.hpp"

#include <cmath>
#include <numeric>

#include "pgasr/error.hpp"

namespace pgasr::graph {

std::string to_string(Neighborhood n) { return n == Neighborhood::four ? "four" : "eight"; }

Neighborhood parse_neighborhood(const std::string& text) {
  if (text == "four" || text == "4") return Neighborhood::four;
  if (text == "eight" || text == "8") return Neighborhood::eight;
  throw ConfigError("unknown neighborhood '" + text + "' (expected four or eight)");
}

SparseMatrix SparseMatrix::from_dense(const Eigen::MatrixXd& dense, double drop_tol) {
  SparseMatrix s;
  s.rows = static_cast<std::size_t>(dense.rows());
  s.cols = static_cast<std::size_t>(dense.cols());
  s.row_ptr.reserve(s.rows + 1);
  s.row_ptr.push_back(0);
  for (Eigen::Index i = 0; i < dense.rows(); ++i) {
    for (Eigen::Index j = 0; j < dense.cols(); ++j) {
      const double v = dense(i, j);
      if (std::abs(v) > drop_tol) {
        s.col_idx.push_back(static_cast<std::size_t>(j));
        s.values.push_back(static_cast<float>(v));
      }
    }
    s.row_ptr.push_back(s.col_idx.size());
  }
  return s;
}

SparseMatrix SparseMatrix::transposed() const {
  SparseMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.row_ptr.assign(cols + 1, 0);
  for (std::size_t c : col_idx) ++t.row_ptr[c + 1];
  std::partial_sum(t.row_ptr.begin(), t.row_ptr.end(), t.row_ptr.begin());
  t.col_idx.resize(nnz());
  t.values.resize(nnz());
  std::vector<std::size_t> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
      const std::size_t dst = cursor[col_idx[k]]++;
      t.col_idx[dst] = i;
      t.values[dst] = values[k];
    }
  }
  return t;
}

namespace {

void validate_adjacency(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw ConfigError("adjacency matrix must be square");
  if (a.rows() < 2) throw ConfigError("graph needs at least two nodes");
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (a(i, i) != 0.0) throw ConfigError("adjacency has a self-loop at node " + std::to_string(i));
    double deg = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (!std::isfinite(a(i, j)) || a(i, j) < 0.0)
        throw ConfigError("adjacency entries must be finite and non-negative");
      if (std::abs(a(i, j) - a(j, i)) > 1e-9) throw ConfigError("adjacency matrix is not symmetric");
      deg += a(i, j);
    }
    if (deg <= 0.0) throw ConfigError("node " + std::to_string(i) + " has degree 0");
  }
}

}  // namespace

UrbanGraph::UrbanGraph(int height, int width, std::optional<Neighborhood> neighborhood,
                       Eigen::MatrixXd adjacency)
    : height_(height), width_(width), neighborhood_(neighborhood), adjacency_(std::move(adjacency)) {
  const Eigen::VectorXd deg = adjacency_.rowwise().sum();
  row_normalized_ = adjacency_;
  for (Eigen::Index i = 0; i < row_normalized_.rows(); ++i) {
    if (deg(i) > 0.0) row_normalized_.row(i) /= deg(i);
  }
}

UrbanGraph UrbanGraph::grid(int height, int width, Neighborhood neighborhood) {
  if (height < 1 || width < 1) throw ConfigError("grid dimensions must be positive");
  if (height * width < 2) throw ConfigError("grid needs at least two cells to have edges");
  const int m = height * width;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          if (neighborhood == Neighborhood::four && dr != 0 && dc != 0) continue;
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || rr >= height || cc < 0 || cc >= width) continue;
          a(r * width + c, rr * width + cc) = 1.0;
        }
      }
    }
  }
  return UrbanGraph(height, width, neighborhood, std::move(a));
}

UrbanGraph UrbanGraph::from_adjacency(const Eigen::MatrixXd& adjacency, int height, int width) {
  if (height < 1 || width < 1 || static_cast<Eigen::Index>(height) * width != adjacency.rows())
    throw ConfigError("adjacency size does not match grid " + std::to_string(height) + "x" +
                      std::to_string(width));
  validate_adjacency(adjacency);
  return UrbanGraph(height, width, std::nullopt, adjacency);
}

std::size_t UrbanGraph::edge_count() const {
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < adjacency_.rows(); ++i)
    for (Eigen::Index j = i + 1; j < adjacency_.cols(); ++j)
      if (adjacency_(i, j) != 0.0) ++n;
  return n;
}

double UrbanGraph::degree(int node) const { return adjacency_.row(node).sum(); }

Eigen::MatrixXd permute_symmetric(const Eigen::MatrixXd& m, const std::vector<int>& perm) {
  if (static_cast<Eigen::Index>(perm.size()) != m.rows()) throw ConfigError("permutation size mismatch");
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(perm[i], perm[j]) = m(i, j);
  return out;
}

UrbanGraph UrbanGraph::permuted(const std::vector<int>& perm) const {
  std::vector<int> seen(perm.size(), 0);
  for (int p : perm) {
    if (p < 0 || p >= node_count() || seen[p]++) throw ConfigError("invalid permutation");
  }
  return UrbanGraph(height_, width_, neighborhood_, permute_symmetric(adjacency_, perm));
}

namespace {

double power_iteration_lambda_max(const Eigen::MatrixXd& lap, int iterations) {
  const Eigen::Index m = lap.rows();
  Eigen::VectorXd v(m);
  for (Eigen::Index i = 0; i < m; ++i) v(i) = 1.0 + 0.5 * std::sin(1.0 + static_cast<double>(i));
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd w = lap * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    lambda = v.dot(w);
    v = w / norm;
  }
  return lambda;
}

}  // namespace

GraphOperator scaled_laplacian(const UrbanGraph& graph, int chebyshev_order,
                               const LaplacianOptions& options) {
  if (chebyshev_order < 1) throw ConfigError("chebyshev order must be >= 1");
  const Eigen::MatrixXd& a = graph.adjacency();
  const Eigen::Index m = a.rows();
  Eigen::VectorXd inv_sqrt_deg(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double d = a.row(i).sum();
    if (d <= 0.0) throw ConfigError("node " + std::to_string(i) + " is disconnected (degree 0)");
    inv_sqrt_deg(i) = 1.0 / std::sqrt(d);
  }
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(m, m);
  const Eigen::MatrixXd lap =
      identity - inv_sqrt_deg.asDiagonal() * a * inv_sqrt_deg.asDiagonal();

  double lambda_max = options.lambda_max;
  if (options.power_iteration) lambda_max = power_iteration_lambda_max(lap, options.power_iterations);
  if (!(lambda_max > 0.0)) throw ConfigError("lambda_max must be positive");

  GraphOperator op;
  op.scaled_laplacian = (2.0 / lambda_max) * lap - identity;
  // Exact symmetry regardless of rounding in the products above.
  op.scaled_laplacian = 0.5 * (op.scaled_laplacian + op.scaled_laplacian.transpose()).eval();
  op.sparse = SparseMatrix::from_dense(op.scaled_laplacian, 1e-12);
  op.chebyshev_order = chebyshev_order;
  op.lambda_max = lambda_max;
  return op;
}

}  // namespace pgasr::graph
