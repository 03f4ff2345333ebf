#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ppmd/kernel_regression.hpp"
#include "ppmd/lifting.hpp"
#include "ppmd/linear_reduction.hpp"
#include "ppmd/manifold.hpp"
#include "ppmd/snapshot.hpp"

namespace ppmd {

inline constexpr double kHarmonicFloor = 1e-10;

struct LinearDynamics {
  Matrix A;
  double ridge = 0.0;
  double spectral_radius = 0.0;
};

inline LinearDynamics fit_linear_dynamics(const Matrix& Z, double ridge) {
  require(Z.cols() >= 2, ErrorCode::InsufficientSamples, "linear dynamics need at least two snapshots");
  const Eigen::Index m = Z.cols();
  const Matrix Z1 = Z.leftCols(m - 1), Z2 = Z.rightCols(m - 1);
  LinearDynamics dyn;
  dyn.ridge = ridge;
  dyn.A = detail::solve_regularized(Z1 * Z1.transpose(), Z1 * Z2.transpose(), ridge).transpose();
  dyn.spectral_radius = dyn.A.eigenvalues().cwiseAbs().maxCoeff();
  return dyn;
}

/// Columns A z0, A^2 z0, ..., A^k z0.
inline Matrix propagate_linear(const LinearDynamics& dyn, const Vector& z0, int steps) {
  require(steps >= 1, ErrorCode::InvalidArgument, "at least one step required");
  require(z0.size() == dyn.A.cols(), ErrorCode::ShapeMismatch, "initial state has wrong dimension");
  Matrix out(z0.size(), steps);
  Vector z = z0;
  for (int j = 0; j < steps; ++j) {
    z = dyn.A * z;
    out.col(j) = z;
  }
  return out;
}

/// Eigenvectors of the Markov matrix built on geodesic distances between embedding points.
struct GeometricHarmonics {
  Matrix points;     // r x m
  Matrix geodesics;  // m x m
  int k_used = 0;
  double bandwidth = 0.0;
  Vector degrees;
  Vector eigenvalues;  // zeta_j, descending
  Matrix vectors;      // u_j as columns, normalized so u_j^T D u_j = 1
};

inline GeometricHarmonics build_harmonics(const Matrix& points, std::optional<double> bandwidth = std::nullopt,
                                          std::optional<int> k_neighbors = std::nullopt) {
  const Eigen::Index m = points.cols();
  require(m >= 2, ErrorCode::InsufficientSamples, "harmonics need at least two points");
  GeometricHarmonics h;
  h.points = points;
  const int k = k_neighbors.value_or(std::min(default_neighbor_count(m), static_cast<int>(m - 1)));
  const WeightedGraph graph = knn_graph(points, k);
  h.k_used = graph.k_used;
  h.geodesics = geodesic_distances(graph);
  h.bandwidth = bandwidth.value_or(select_bandwidth(h.geodesics));
  const TransitionMatrix T = markov_normalize(affinity(h.geodesics, h.bandwidth), h.bandwidth);
  h.degrees = T.degrees;
  const MarkovSpectrum spec = markov_spectrum(T);
  h.eigenvalues = spec.eigenvalues;
  h.vectors = spec.eigenvectors;
  for (Eigen::Index j = 0; j < m; ++j) fix_sign(h.vectors.col(j));
  return h;
}

/// Gaussian kernel between a new point and each training point along graph geodesics.
/// The new point is attached to its k+1 nearest training points.
inline Vector harmonic_kernel_row(const GeometricHarmonics& h, const Vector& phi) {
  require(phi.size() == h.points.rows(), ErrorCode::ShapeMismatch, "point dimension mismatch");
  const Eigen::Index m = h.points.cols();
  const Vector direct = (h.points.colwise() - phi).colwise().norm().transpose();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return direct[a] < direct[b]; });
  order.resize(static_cast<std::size_t>(std::min<Eigen::Index>(h.k_used + 1, m)));
  Vector row(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (auto l : order) best = std::min(best, direct[l] + h.geodesics(l, i));
    row[i] = std::exp(-best * best / (h.bandwidth * h.bandwidth));
  }
  return row;
}

/// Nystrom value of harmonic j at phi. The degree-normalized form reproduces u_j at training points;
/// `normalized = false` gives the unnormalized kernel sum.
inline double nystrom_extend(const GeometricHarmonics& h, const Vector& phi, Eigen::Index j, bool normalized = true,
                             double floor = kHarmonicFloor) {
  require(j >= 0 && j < h.eigenvalues.size(), ErrorCode::InvalidArgument, "harmonic index out of range");
  const double zeta = h.eigenvalues[j];
  require(zeta > floor, ErrorCode::HarmonicCutoff, "harmonic eigenvalue below cutoff");
  Vector k = harmonic_kernel_row(h, phi);
  if (normalized) k /= k.sum();
  return k.dot(h.vectors.col(j)) / zeta;
}

struct ManifoldDynamics {
  GeometricHarmonics harmonics;
  Matrix omega;         // r x r one-step regression
  Matrix coefficients;  // r x m, column j is d_j
  Eigen::Index retained = 0;
  double ridge = 0.0;
  double floor = kHarmonicFloor;
};

struct ManifoldDynamicsOptions {
  std::optional<double> bandwidth;
  std::optional<int> k_neighbors;
  double floor = kHarmonicFloor;
  std::optional<Eigen::Index> max_harmonics;
};

inline ManifoldDynamics fit_manifold_dynamics(const Matrix& Phi, double ridge, const ManifoldDynamicsOptions& opt = {}) {
  const Eigen::Index m = Phi.cols();
  require(m >= 3, ErrorCode::InsufficientSamples, "manifold dynamics need at least three snapshots");
  require(((Phi.colwise() - Phi.col(0)).cwiseAbs().maxCoeff()) > 0.0, ErrorCode::DegenerateEmbedding,
          "embedding sequence is constant");
  ManifoldDynamics dyn;
  dyn.ridge = ridge;
  dyn.floor = opt.floor;
  dyn.harmonics = build_harmonics(Phi, opt.bandwidth, opt.k_neighbors);

  const Matrix P1 = Phi.leftCols(m - 1), P2 = Phi.rightCols(m - 1);
  dyn.omega = detail::solve_regularized(P1 * P1.transpose(), P1 * P2.transpose(), ridge).transpose();

  // Expansion of the one-step map, sampled on the training points, in the D-orthonormal harmonics.
  const Matrix F = dyn.omega * Phi;
  dyn.coefficients = F * dyn.harmonics.degrees.asDiagonal() * dyn.harmonics.vectors;

  const Eigen::Index cap = opt.max_harmonics.value_or(m);
  while (dyn.retained < std::min(cap, m) && dyn.harmonics.eigenvalues[dyn.retained] > opt.floor) ++dyn.retained;
  return dyn;
}

inline double nystrom_extend(const ManifoldDynamics& dyn, const Vector& phi, Eigen::Index j, bool normalized = true) {
  return nystrom_extend(dyn.harmonics, phi, j, normalized, dyn.floor);
}

/// One explicit step: sum over retained harmonics of d_j U_j(phi).
inline Vector step_nonlinear(const ManifoldDynamics& dyn, const Vector& phi) {
  Vector k = harmonic_kernel_row(dyn.harmonics, phi);
  k /= k.sum();
  Vector out = Vector::Zero(dyn.omega.rows());
  for (Eigen::Index j = 0; j < dyn.retained; ++j)
    out += dyn.coefficients.col(j) * (k.dot(dyn.harmonics.vectors.col(j)) / dyn.harmonics.eigenvalues[j]);
  return out;
}

/// destandardize(Psi z + lifting(phi)).
inline Vector pmd_reconstruct(const Matrix& modes, const Vector& z, const LiftingOperator& lifting, const Vector& phi,
                              const ScalingStats& stats) {
  require(modes.cols() == z.size(), ErrorCode::ShapeMismatch, "latent dimension does not match modes");
  return destandardize(modes * z + apply_lifting(lifting, phi), stats);
}

struct TemporalPmdConfig {
  TruncationCriterion truncation = EnergyTolerance{1e-3};
  int r_nl = 2;
  std::optional<int> k_neighbors;
  int diffusion_power = 1;
  std::optional<double> bandwidth;
  double linear_ridge = 1e-8;
  double manifold_ridge = 1e-8;
  double harmonic_floor = kHarmonicFloor;
  PolyKernelParams lifting{1, 0.0, 1e-8};
};

/// Time-stepping predictor trained on one trajectory (columns ordered in time).
struct TemporalPmdModel {
  ScalingStats stats;
  LinearBasis basis;
  LiftingOperator lifting;
  LinearDynamics linear;
  ManifoldDynamics manifold;
  Vector last_z;
  Vector last_phi;
};

inline TemporalPmdModel train_temporal(const Matrix& snapshots, const TemporalPmdConfig& cfg) {
  require(snapshots.cols() >= 3, ErrorCode::InsufficientSamples, "temporal model needs at least three snapshots");
  TemporalPmdModel model;
  auto [Ubar, stats] = standardize(snapshots);
  model.stats = std::move(stats);
  model.basis = truncated_svd(Ubar, cfg.truncation);
  const Matrix Z = linear_coordinates(model.basis);
  const Matrix R = residual_matrix(Ubar, model.basis);

  ManifoldOptions mopt;
  mopt.r_nl = cfg.r_nl;
  mopt.k_neighbors = cfg.k_neighbors;
  mopt.diffusion_power = cfg.diffusion_power;
  mopt.bandwidth = cfg.bandwidth;
  const Matrix Phi = embed_points(R, mopt).embedding.coords;

  model.lifting = fit_lifting(Phi, R, cfg.lifting);
  model.linear = fit_linear_dynamics(Z, cfg.linear_ridge);
  ManifoldDynamicsOptions dopt;
  dopt.floor = cfg.harmonic_floor;
  model.manifold = fit_manifold_dynamics(Phi, cfg.manifold_ridge, dopt);
  model.last_z = Z.col(Z.cols() - 1);
  model.last_phi = Phi.col(Phi.cols() - 1);
  return model;
}

/// Full states for the `steps` time levels after the last training snapshot.
inline Matrix forecast_temporal(const TemporalPmdModel& model, int steps) {
  const Matrix zs = propagate_linear(model.linear, model.last_z, steps);
  Matrix out(model.basis.left_modes.rows(), steps);
  Vector phi = model.last_phi;
  for (int j = 0; j < steps; ++j) {
    phi = step_nonlinear(model.manifold, phi);
    out.col(j) = pmd_reconstruct(model.basis.left_modes, zs.col(j), model.lifting, phi, model.stats);
  }
  return out;
}

}  // namespace ppmd
