#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "ppmd/linear_reduction.hpp"
#include "ppmd/snapshot.hpp"

namespace ppmd {

// ---------------------------------------------------------------------------
// POD + Gaussian-process regression baseline
// ---------------------------------------------------------------------------

/// Exact GP regressor over a scalar input with constant prior mean and squared-exponential kernel.
struct ScalarGp {
  std::vector<double> inputs;
  Vector alpha;  // (K + jitter I)^{-1} (y - mean)
  double mean = 0.0;
  double signal_variance = 0.0;
  double length_scale = 1.0;
  double jitter = 1e-8;

  double kernel(double a, double b) const {
    const double r = (a - b) / length_scale;
    return signal_variance * std::exp(-0.5 * r * r);
  }

  double predict(double x) const {
    double s = mean;
    for (std::size_t i = 0; i < inputs.size(); ++i) s += kernel(x, inputs[i]) * alpha[static_cast<Eigen::Index>(i)];
    return s;
  }
};

inline double median_pairwise_gap(const std::vector<double>& x) {
  std::vector<double> gaps;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) gaps.push_back(std::abs(x[i] - x[j]));
  std::sort(gaps.begin(), gaps.end());
  const std::size_t h = gaps.size() / 2;
  return gaps.size() % 2 ? gaps[h] : 0.5 * (gaps[h - 1] + gaps[h]);
}

namespace detail {

inline Matrix gp_gram(const ScalarGp& gp) {
  const auto n = static_cast<Eigen::Index>(gp.inputs.size());
  Matrix K(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      K(i, j) = gp.kernel(gp.inputs[static_cast<std::size_t>(i)], gp.inputs[static_cast<std::size_t>(j)]);
  K.diagonal().array() += gp.jitter;
  return K;
}

// Solves for alpha in place; returns the log marginal likelihood.
inline double gp_solve(ScalarGp& gp, const Vector& y) {
  const Vector centered = y.array() - gp.mean;
  if (gp.signal_variance <= 0.0) {
    gp.alpha = Vector::Zero(y.size());
    return 0.0;
  }
  const Eigen::LLT<Matrix> llt(gp_gram(gp));
  require(llt.info() == Eigen::Success, ErrorCode::SingularSystem, "GP covariance is not positive definite");
  gp.alpha = llt.solve(centered);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * centered.dot(gp.alpha) - 0.5 * logdet -
         0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi);
}

}  // namespace detail

struct GprOptions {
  double jitter = 1e-8;
  bool optimize_length_scale = false;
  std::vector<double> length_scale_factors{0.125, 0.25, 0.5, 1.0, 2.0, 4.0};
};

/// GP fit with length scale = median pairwise gap and signal variance = variance of y.
inline ScalarGp fit_scalar_gp(const std::vector<double>& x, const Vector& y, const GprOptions& opt = {}) {
  require(x.size() == static_cast<std::size_t>(y.size()) && x.size() >= 2, ErrorCode::LengthMismatch,
          "GP needs matching inputs and outputs");
  ScalarGp gp;
  gp.inputs = x;
  gp.mean = y.mean();
  gp.signal_variance = (y.array() - gp.mean).square().mean();
  gp.jitter = opt.jitter;
  const double base = median_pairwise_gap(x);
  gp.length_scale = base;
  double best = detail::gp_solve(gp, y);
  if (opt.optimize_length_scale && gp.signal_variance > 0.0) {
    double best_scale = base;
    for (double f : opt.length_scale_factors) {
      ScalarGp trial = gp;
      trial.length_scale = base * f;
      const double ll = detail::gp_solve(trial, y);
      if (ll > best) {
        best = ll;
        best_scale = trial.length_scale;
      }
    }
    gp.length_scale = best_scale;
    detail::gp_solve(gp, y);
  }
  return gp;
}

struct PodGprModel {
  ScalingStats stats;
  LinearBasis basis;  // rank 0 when the standardized data vanish
  std::vector<ScalarGp> regressors;
  std::vector<double> train_params;
};

inline PodGprModel pod_gpr_train(const SnapshotMatrix& snapshots, Eigen::Index rank, const GprOptions& opt = {}) {
  snapshots.validate();
  require(snapshots.cols() >= 3, ErrorCode::InsufficientSamples, "POD+GPR needs at least three samples");
  PodGprModel model;
  model.train_params = snapshots.params;
  auto [Ubar, stats] = standardize(snapshots);
  model.stats = std::move(stats);
  if (Ubar.cwiseAbs().maxCoeff() == 0.0) {
    model.basis.left_modes = Matrix::Zero(Ubar.rows(), 0);
    model.basis.right_modes = Matrix::Zero(Ubar.cols(), 0);
    model.basis.singular_values = Vector::Zero(0);
    return model;
  }
  model.basis = truncated_svd(Ubar, ExplicitRank{rank});
  const Matrix Z = linear_coordinates(model.basis);
  for (Eigen::Index k = 0; k < Z.rows(); ++k)
    model.regressors.push_back(fit_scalar_gp(snapshots.params, Z.row(k).transpose(), opt));
  return model;
}

inline Vector pod_gpr_coefficients(const PodGprModel& model, double mu) {
  Vector z(static_cast<Eigen::Index>(model.regressors.size()));
  for (std::size_t k = 0; k < model.regressors.size(); ++k) z[static_cast<Eigen::Index>(k)] = model.regressors[k].predict(mu);
  return z;
}

inline Vector pod_gpr_predict(const PodGprModel& model, double mu) {
  return destandardize(model.basis.left_modes * pod_gpr_coefficients(model, mu), model.stats);
}

// ---------------------------------------------------------------------------
// Manufactured snapshot families
// ---------------------------------------------------------------------------

enum class Family { Separable, Traveling };

inline std::string to_string(Family f) { return f == Family::Separable ? "separable" : "traveling"; }

struct SyntheticFamily {
  Family family = Family::Separable;
  std::size_t n_spatial = 40;
  std::size_t n_time = 10;
};

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  if (n > 1) out.back() = b;
  return out;
}

/// Separable:  mu sin(pi x) cos(t) + sin(3 mu) cos(pi x) sin(t)
/// Traveling:  exp(-(x - mu - 0.1 t)^2 / 0.02)
/// on uniform x, t grids over [0, 1]; a single time level sits at t = 0.
inline SnapshotMatrix generate_synthetic(const SyntheticFamily& fam, const std::vector<double>& params) {
  require(fam.n_spatial >= 2 && fam.n_time >= 1, ErrorCode::BadGrid,
          "need >= 2 spatial points and >= 1 time level");
  require(params.size() >= 2, ErrorCode::BadGrid, "need at least two parameter values");
  for (std::size_t i = 1; i < params.size(); ++i)
    require(params[i - 1] < params[i], ErrorCode::BadGrid, "parameter values must be strictly ascending");
  const auto xs = linspace(0.0, 1.0, fam.n_spatial);
  const auto ts = linspace(0.0, 1.0, fam.n_time);
  constexpr double pi = std::numbers::pi;

  SnapshotMatrix out;
  out.n_spatial = fam.n_spatial;
  out.n_time = fam.n_time;
  out.params = params;
  out.data.resize(static_cast<Eigen::Index>(fam.n_spatial * fam.n_time), static_cast<Eigen::Index>(params.size()));
  for (std::size_t c = 0; c < params.size(); ++c) {
    const double mu = params[c];
    for (std::size_t j = 0; j < fam.n_time; ++j)
      for (std::size_t i = 0; i < fam.n_spatial; ++i) {
        const double x = xs[i], t = ts[j];
        double v;
        if (fam.family == Family::Separable) {
          v = mu * std::sin(pi * x) * std::cos(t) + std::sin(3.0 * mu) * std::cos(pi * x) * std::sin(t);
        } else {
          const double s = x - mu - 0.1 * t;
          v = std::exp(-s * s / 0.02);
        }
        out.data(static_cast<Eigen::Index>(j * fam.n_spatial + i), static_cast<Eigen::Index>(c)) = v;
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sample-covariance convergence experiment
// ---------------------------------------------------------------------------

struct CovarianceExperiment {
  Eigen::Index dim = 20;
  std::vector<Eigen::Index> sample_sizes{100, 200, 400, 800, 1600, 3200, 6400};
  int trials = 20;
  std::uint64_t seed = 0;
  double amplitude = 1.0;  // scales every state; 0 gives a degenerate distribution
};

struct CovarianceRateResult {
  std::vector<double> mean_errors;  // per sample size
  double slope = 0.0;
};

/// Least-squares slope of log(mean operator-norm error) against log(n_s).
/// States are u = amplitude * diag(k^{-1/2}) xi with xi_k uniform on [-sqrt3, sqrt3],
/// so the exact second-moment matrix is amplitude^2 diag(1/k).
inline CovarianceRateResult covariance_rate_experiment(const CovarianceExperiment& exp) {
  require(exp.sample_sizes.size() >= 2, ErrorCode::InvalidArgument, "need at least two sample sizes");
  require(exp.trials >= 1 && exp.dim >= 1, ErrorCode::InvalidArgument, "need positive trials and dimension");
  Vector sd(exp.dim), truth(exp.dim);
  for (Eigen::Index k = 0; k < exp.dim; ++k) {
    sd[k] = exp.amplitude / std::sqrt(static_cast<double>(k + 1));
    truth[k] = sd[k] * sd[k];
  }
  const double half_width = std::sqrt(3.0);

  CovarianceRateResult res;
  for (std::size_t s = 0; s < exp.sample_sizes.size(); ++s) {
    const Eigen::Index n = exp.sample_sizes[s];
    require(n >= 1, ErrorCode::InvalidArgument, "sample sizes must be positive");
    double total = 0.0;
    for (int trial = 0; trial < exp.trials; ++trial) {
      std::seed_seq seq{exp.seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(trial)};
      std::mt19937_64 rng(seq);
      std::uniform_real_distribution<double> xi(-half_width, half_width);
      Matrix U(exp.dim, n);
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index k = 0; k < exp.dim; ++k) U(k, j) = sd[k] * xi(rng);
      Matrix diff = (U * U.transpose()) / static_cast<double>(n);
      diff.diagonal() -= truth;
      Eigen::SelfAdjointEigenSolver<Matrix> es(diff, Eigen::EigenvaluesOnly);
      total += es.eigenvalues().cwiseAbs().maxCoeff();
    }
    res.mean_errors.push_back(total / exp.trials);
  }

  const auto m = static_cast<double>(res.mean_errors.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t s = 0; s < res.mean_errors.size(); ++s) {
    const double x = std::log(static_cast<double>(exp.sample_sizes[s]));
    const double y = std::log(res.mean_errors[s]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  res.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  require(std::isfinite(res.slope), ErrorCode::NaNSlope, "error curve is degenerate; slope undefined");
  return res;
}

}  // namespace ppmd
