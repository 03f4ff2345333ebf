#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ppmd/snapshot.hpp"

namespace ppmd {

struct Edge {
  Eigen::Index a = 0;
  Eigen::Index b = 0;
  double weight = 0.0;
};

/// Undirected graph over sample points; each edge is stored once with a < b.
struct WeightedGraph {
  Eigen::Index node_count = 0;
  std::vector<Edge> edges;
  int k_used = 0;
};

struct TransitionMatrix {
  Matrix P;            // row-stochastic
  Vector degrees;      // row sums of the affinity that produced P
  double bandwidth = 0.0;
  int power = 1;

  /// P^t for the stored power.
  Matrix powered() const {
    Matrix out = Matrix::Identity(P.rows(), P.cols());
    for (int i = 0; i < power; ++i) out = out * P;
    return out;
  }

  /// D^{1/2} P D^{-1/2}; symmetric whenever P came from a symmetric affinity.
  Matrix symmetric_form() const {
    const Vector sq = degrees.cwiseSqrt();
    Matrix S = sq.asDiagonal() * P * sq.cwiseInverse().asDiagonal();
    return 0.5 * (S + S.transpose());
  }
};

struct EmbeddingMatrix {
  Matrix coords;        // r_nl x n_s
  Vector eigenvalues;   // the r_nl retained eigenvalues of P, descending
  int power = 1;
};

inline int default_neighbor_count(Eigen::Index n_samples) {
  return std::max(2, static_cast<int>(std::ceil(std::log(static_cast<double>(n_samples)))));
}

inline Matrix pairwise_distances(const Matrix& points) {
  const Eigen::Index n = points.cols();
  Matrix dist = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double d = (points.col(i) - points.col(j)).norm();
      dist(i, j) = d;
      dist(j, i) = d;
    }
  return dist;
}

namespace detail {

inline bool is_connected(Eigen::Index n, const std::vector<Edge>& edges) {
  std::vector<std::vector<Eigen::Index>> adj(static_cast<std::size_t>(n));
  for (const auto& e : edges) {
    adj[static_cast<std::size_t>(e.a)].push_back(e.b);
    adj[static_cast<std::size_t>(e.b)].push_back(e.a);
  }
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::vector<Eigen::Index> stack{0};
  seen[0] = 1;
  Eigen::Index visited = 1;
  while (!stack.empty()) {
    const auto v = stack.back();
    stack.pop_back();
    for (auto w : adj[static_cast<std::size_t>(v)])
      if (!seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = 1;
        ++visited;
        stack.push_back(w);
      }
  }
  return visited == n;
}

// k nearest of `row` excluding itself, ties broken by index.
inline std::vector<Eigen::Index> nearest(const Matrix& dist, Eigen::Index row, int k) {
  std::vector<Eigen::Index> order;
  for (Eigen::Index j = 0; j < dist.cols(); ++j)
    if (j != row) order.push_back(j);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return dist(row, a) < dist(row, b); });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

inline std::vector<Edge> knn_edges(const Matrix& dist, int k) {
  const Eigen::Index n = dist.rows();
  std::vector<std::vector<char>> present(static_cast<std::size_t>(n),
                                         std::vector<char>(static_cast<std::size_t>(n), 0));
  for (Eigen::Index i = 0; i < n; ++i)
    for (auto j : nearest(dist, i, k)) {
      present[static_cast<std::size_t>(std::min(i, j))][static_cast<std::size_t>(std::max(i, j))] = 1;
    }
  std::vector<Edge> edges;
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a + 1; b < n; ++b)
      if (present[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]) edges.push_back({a, b, dist(a, b)});
  return edges;
}

}  // namespace detail

/// Symmetrized k-NN graph on the columns of `points`; k grows until connected.
inline WeightedGraph knn_graph(const Matrix& points, int k) {
  const Eigen::Index n = points.cols();
  require(n >= 2, ErrorCode::InsufficientSamples, "knn graph needs at least two points");
  require(k >= 1 && k < n, ErrorCode::InvalidArgument, "k must satisfy 1 <= k < n_s");
  const Matrix dist = pairwise_distances(points);
  require(dist.maxCoeff() > 0.0, ErrorCode::DegeneratePoints, "all points are identical");

  WeightedGraph graph;
  graph.node_count = n;
  for (int kk = k; kk < n; ++kk) {
    graph.edges = detail::knn_edges(dist, kk);
    graph.k_used = kk;
    if (detail::is_connected(n, graph.edges)) break;
  }
  return graph;
}

/// All-pairs shortest paths by Floyd-Warshall relaxation over fixed pivot order.
inline Matrix geodesic_distances(const WeightedGraph& graph) {
  const Eigen::Index n = graph.node_count;
  constexpr double inf = std::numeric_limits<double>::infinity();
  Matrix d = Matrix::Constant(n, n, inf);
  d.diagonal().setZero();
  for (const auto& e : graph.edges) {
    d(e.a, e.b) = std::min(d(e.a, e.b), e.weight);
    d(e.b, e.a) = d(e.a, e.b);
  }
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double dkj = d(k, j);
      if (dkj == inf) continue;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double via = d(i, k) + dkj;
        if (via < d(i, j)) d(i, j) = via;
      }
    }
  require(d.allFinite(), ErrorCode::DisconnectedGraph, "graph is not connected");
  return d;
}

/// sqrt of the median squared off-diagonal distance.
inline double select_bandwidth(const Matrix& distances) {
  const Eigen::Index n = distances.rows();
  require(n >= 2, ErrorCode::InsufficientSamples, "bandwidth needs at least two samples");
  std::vector<double> sq;
  std::vector<double> positive;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = distances(i, j) * distances(i, j);
      sq.push_back(v);
      if (v > 0.0) positive.push_back(v);
    }
  require(!positive.empty(), ErrorCode::AllZeroDistances, "all pairwise distances are zero");
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  };
  double m = median(sq);
  // Mostly-duplicate samples: fall back to the positive part.
  if (!(m > 0.0)) m = median(positive);
  return std::sqrt(m);
}

inline Matrix affinity(const Matrix& distances, double bandwidth) {
  require(bandwidth > 0.0, ErrorCode::InvalidArgument, "bandwidth must be positive");
  const double inv = 1.0 / (bandwidth * bandwidth);
  return (-distances.array().square() * inv).exp().matrix();
}

inline TransitionMatrix markov_normalize(const Matrix& A, double bandwidth = 0.0, int power = 1) {
  require(power >= 1, ErrorCode::InvalidArgument, "diffusion power must be >= 1");
  TransitionMatrix T;
  T.degrees = A.rowwise().sum();
  require((T.degrees.array() > 0.0).all(), ErrorCode::ZeroRow, "affinity has a zero row");
  T.P = T.degrees.cwiseInverse().asDiagonal() * A;
  T.bandwidth = bandwidth;
  T.power = power;
  return T;
}

/// Eigenpairs of P in descending order, eigenvectors mapped back from the symmetric form.
struct MarkovSpectrum {
  Vector eigenvalues;
  Matrix eigenvectors;  // columns, unnormalized right eigenvectors of P
};

inline MarkovSpectrum markov_spectrum(const TransitionMatrix& T) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(T.symmetric_form());
  require(solver.info() == Eigen::Success, ErrorCode::EigSolveFailure, "symmetric eigensolve failed");
  MarkovSpectrum out;
  out.eigenvalues = solver.eigenvalues().reverse();
  out.eigenvectors = T.degrees.cwiseSqrt().cwiseInverse().asDiagonal() * solver.eigenvectors().rowwise().reverse();
  return out;
}

inline void fix_sign(Eigen::Ref<Vector> v) {
  const double vmax = v.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (std::abs(v[i]) >= vmax * (1.0 - 1e-12)) {
      if (v[i] < 0.0) v *= -1.0;
      return;
    }
}

/// Diffusion coordinates lambda_k^t phi_k for k = 2..r_nl+1 (constant mode dropped).
inline EmbeddingMatrix spectral_embedding(const TransitionMatrix& T, int r_nl, int t) {
  const Eigen::Index n = T.P.rows();
  require(r_nl >= 1 && r_nl <= n - 1, ErrorCode::RankTooLarge, "embedding dimension must be in [1, n_s-1]");
  require(t >= 1, ErrorCode::InvalidArgument, "diffusion power must be >= 1");
  const MarkovSpectrum spec = markov_spectrum(T);
  EmbeddingMatrix emb;
  emb.power = t;
  emb.coords.resize(r_nl, n);
  emb.eigenvalues.resize(r_nl);
  for (int k = 0; k < r_nl; ++k) {
    Vector v = spec.eigenvectors.col(k + 1);
    v.normalize();
    fix_sign(v);
    const double lam = spec.eigenvalues[k + 1];
    emb.eigenvalues[k] = lam;
    emb.coords.row(k) = std::pow(lam, t) * v.transpose();
  }
  return emb;
}

struct ManifoldOptions {
  int r_nl = 2;
  std::optional<int> k_neighbors;   // default: max(2, ceil(log n_s))
  int diffusion_power = 1;
  std::optional<double> bandwidth;  // default: median heuristic
};

struct ManifoldResult {
  EmbeddingMatrix embedding;
  Matrix geodesics;
  TransitionMatrix transition;
  int k_used = 0;
};

/// Full chain from sample columns to diffusion coordinates.
inline ManifoldResult embed_points(const Matrix& points, const ManifoldOptions& opt) {
  const Eigen::Index n = points.cols();
  const int k = opt.k_neighbors.value_or(
      std::min(default_neighbor_count(n), static_cast<int>(n - 1)));
  ManifoldResult out;
  const WeightedGraph graph = knn_graph(points, k);
  out.k_used = graph.k_used;
  out.geodesics = geodesic_distances(graph);
  const double eps = opt.bandwidth.value_or(select_bandwidth(out.geodesics));
  out.transition = markov_normalize(affinity(out.geodesics, eps), eps, opt.diffusion_power);
  out.embedding = spectral_embedding(out.transition, opt.r_nl, opt.diffusion_power);
  return out;
}

}  // namespace ppmd
