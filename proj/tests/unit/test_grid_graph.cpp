#include <Eigen/Eigenvalues>
#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "pgasr/error.hpp"
#include "pgasr/grid_graph.hpp"

using namespace pgasr;
using namespace pgasr::graph;

TEST_CASE("2x2 four-neighborhood grid has degree 2 everywhere and 4 edges") {
  const auto g = UrbanGraph::grid(2, 2, Neighborhood::four);
  CHECK(g.node_count() == 4);
  CHECK(g.edge_count() == 4);
  for (int i = 0; i < 4; ++i) CHECK(g.degree(i) == doctest::Approx(2.0));
}

TEST_CASE("1x2 grid is a single edge") {
  const auto g = UrbanGraph::grid(1, 2, Neighborhood::four);
  Eigen::MatrixXd expected(2, 2);
  expected << 0, 1, 1, 0;
  CHECK(g.adjacency().isApprox(expected));
  CHECK(g.edge_count() == 1);
}

TEST_CASE("16x8 grid matches the 128-region layout") {
  const auto g = UrbanGraph::grid(16, 8, Neighborhood::four);
  CHECK(g.node_count() == 128);
  CHECK(g.edge_count() == static_cast<std::size_t>(2 * 16 * 8 - 16 - 8));
}

TEST_CASE("four-neighborhood edge count is 2HW - H - W for many shapes") {
  for (int h = 1; h <= 6; ++h)
    for (int w = 1; w <= 6; ++w) {
      if (h * w < 2) continue;
      CHECK(UrbanGraph::grid(h, w, Neighborhood::four).edge_count() == static_cast<std::size_t>(2 * h * w - h - w));
    }
}

TEST_CASE("eight-neighborhood adds the diagonals") {
  // Lattice pairs plus 2 (H-1)(W-1) diagonals.
  for (int h = 2; h <= 5; ++h)
    for (int w = 2; w <= 5; ++w)
      CHECK(UrbanGraph::grid(h, w).edge_count() ==
            static_cast<std::size_t>(2 * h * w - h - w + 2 * (h - 1) * (w - 1)));
  const auto g = UrbanGraph::grid(3, 3);
  CHECK(g.degree(4) == doctest::Approx(8.0));
  CHECK(g.degree(0) == doctest::Approx(3.0));
  CHECK(g.neighborhood() == Neighborhood::eight);
}

TEST_CASE("adjacency invariants: symmetric, zero diagonal, degree >= 1, rows of the normalized matrix sum to 1") {
  for (auto n : {Neighborhood::four, Neighborhood::eight}) {
    const auto g = UrbanGraph::grid(4, 5, n);
    const auto& a = g.adjacency();
    CHECK((a - a.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.diagonal().cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.minCoeff() >= 0.0);
    for (int i = 0; i < g.node_count(); ++i) CHECK(g.degree(i) >= 1.0);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(g.node_count());
    CHECK((g.row_normalized_adjacency() * ones - ones).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("grid rejects fewer than two cells") {
  CHECK_THROWS_AS(UrbanGraph::grid(1, 1), ConfigError);
  CHECK_THROWS_AS(UrbanGraph::grid(0, 3), ConfigError);
}

TEST_CASE("neighborhood parsing") {
  CHECK(parse_neighborhood("four") == Neighborhood::four);
  CHECK(parse_neighborhood("eight") == Neighborhood::eight);
  CHECK(to_string(Neighborhood::four) == "four");
  CHECK_THROWS_AS(parse_neighborhood("six"), ConfigError);
}

TEST_CASE("2-node path: scaled Laplacian is [[0,-1],[-1,0]]") {
  const auto g = UrbanGraph::grid(1, 2, Neighborhood::four);
  const auto op = scaled_laplacian(g, 2);
  Eigen::MatrixXd expected(2, 2);
  expected << 0, -1, -1, 0;
  CHECK((op.scaled_laplacian - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(op.chebyshev_order == 2);
}

TEST_CASE("scaled Laplacian maps the degree-weighted constant direction to its negative") {
  // With lambda_max = 2, L~ = -D^-1/2 A D^-1/2; on a regular graph the constant
  // vector is an eigenvector of L with eigenvalue 0, so L~ 1 = -1.
  const auto g = UrbanGraph::grid(1, 2, Neighborhood::four);
  const auto op = scaled_laplacian(g, 1);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(2);
  CHECK((op.scaled_laplacian * ones + ones).cwiseAbs().maxCoeff() < 1e-12);
  // Irregular grid: the eigenvector is D^1/2 1.
  const auto g2 = UrbanGraph::grid(3, 4);
  const auto op2 = scaled_laplacian(g2, 1);
  Eigen::VectorXd v(g2.node_count());
  for (int i = 0; i < g2.node_count(); ++i) v[i] = std::sqrt(g2.degree(i));
  CHECK((op2.scaled_laplacian * v + v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scaled Laplacian is symmetric with spectrum in [-1, 1]") {
  for (auto n : {Neighborhood::four, Neighborhood::eight}) {
    const auto op = scaled_laplacian(UrbanGraph::grid(5, 4, n), 3);
    const auto& l = op.scaled_laplacian;
    CHECK((l - l.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l);
    CHECK(es.eigenvalues().minCoeff() >= -1.0 - 1e-4);
    CHECK(es.eigenvalues().maxCoeff() <= 1.0 + 1e-4);
  }
}

TEST_CASE("power-iteration lambda_max keeps the spectrum within [-1, 1]") {
  LaplacianOptions opts;
  opts.power_iteration = true;
  const auto op = scaled_laplacian(UrbanGraph::grid(4, 4, Neighborhood::four), 2, opts);
  CHECK(op.lambda_max <= 2.0 + 1e-9);
  CHECK(op.lambda_max > 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(op.scaled_laplacian);
  CHECK(es.eigenvalues().maxCoeff() <= 1.0 + 1e-4);
  CHECK(es.eigenvalues().minCoeff() >= -1.0 - 1e-4);
}

TEST_CASE("custom adjacency validation") {
  Eigen::MatrixXd a(3, 3);
  a << 0, 1, 0, 1, 0, 1, 0, 1, 0;
  const auto g = UrbanGraph::from_adjacency(a, 1, 3);
  CHECK(g.edge_count() == 2);
  CHECK_FALSE(g.neighborhood().has_value());

  Eigen::MatrixXd asym = a;
  asym(0, 1) = 2;
  CHECK_THROWS_AS(UrbanGraph::from_adjacency(asym, 1, 3), ConfigError);
  Eigen::MatrixXd loop = a;
  loop(1, 1) = 1;
  CHECK_THROWS_AS(UrbanGraph::from_adjacency(loop, 1, 3), ConfigError);
  Eigen::MatrixXd isolated = Eigen::MatrixXd::Zero(3, 3);
  isolated(0, 1) = isolated(1, 0) = 1;
  CHECK_THROWS_AS(UrbanGraph::from_adjacency(isolated, 1, 3), ConfigError);
  Eigen::MatrixXd negative = a;
  negative(0, 1) = negative(1, 0) = -1;
  CHECK_THROWS_AS(UrbanGraph::from_adjacency(negative, 1, 3), ConfigError);
  CHECK_THROWS_AS(UrbanGraph::from_adjacency(a, 2, 2), ConfigError);
}

TEST_CASE("permutation consistency: build-then-permute equals permute-then-build") {
  const auto g = UrbanGraph::grid(3, 3);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 rng(5);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto gp = g.permuted(perm);
  const Eigen::MatrixXd direct = permute_symmetric(g.adjacency(), perm);
  CHECK((gp.adjacency() - direct).cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) CHECK(gp.adjacency()(perm[i], perm[j]) == g.adjacency()(i, j));
  const auto lp = scaled_laplacian(gp, 2).scaled_laplacian;
  const auto l = scaled_laplacian(g, 2).scaled_laplacian;
  CHECK((lp - permute_symmetric(l, perm)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sparse CSR round trip") {
  Eigen::MatrixXd d(2, 3);
  d << 1, 0, 2, 0, 0, 3;
  const auto s = SparseMatrix::from_dense(d);
  CHECK(s.nnz() == 3);
  CHECK(s.row_ptr == std::vector<std::size_t>{0, 2, 3});
  const auto t = s.transposed();
  CHECK(t.rows == 3);
  CHECK(t.cols == 2);
  CHECK(t.nnz() == 3);
}
