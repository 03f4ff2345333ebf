#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ppmd/kernel_regression.hpp"
#include "ppmd/lifting.hpp"
#include "ppmd/linear_reduction.hpp"
#include "ppmd/manifold.hpp"
#include "ppmd/snapshot.hpp"
#include "ppmd/spline.hpp"

namespace ppmd {

/// Residuals smaller than this fraction of the standardized data are treated as exactly linear.
inline constexpr double kNegligibleResidual = 1e-12;

struct PpmdConfig {
  TruncationCriterion truncation = EnergyTolerance{1e-3};
  int r_nl = 2;
  std::optional<int> k_neighbors;
  int diffusion_power = 1;
  std::optional<double> bandwidth;

  int forecast_steps = 0;
  PolyKernelParams latent_krr{2, 1.0, 1e-6};
  std::optional<TuningGrid> tuning = TuningGrid{};
  int refresh_period = 5;

  SplineCvConfig spline;
  double predicted_weight = 0.5;

  PolyKernelParams lifting{2, 1.0, 1e-8};
};

struct TrainingDiagnostics {
  double residual_fraction = 0.0;  // ||R||_F / ||U_bar||_F
  double energy_fraction = 0.0;
  int k_used = 0;
  double bandwidth = 0.0;
  bool linear_only = false;  // residual negligible, embedding skipped
};

struct PpmdModel {
  ScalingStats stats;
  LinearBasis basis;
  LiftingOperator lifting;
  ContinuousLatentMap z_map;
  ContinuousLatentMap phi_map;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> train_params;
  std::uint64_t data_hash = 0;
  std::string provenance;
  TrainingDiagnostics diagnostics;
};

/// FNV-1a over the raw bytes of the snapshot payload and parameter grid.
inline std::uint64_t snapshot_hash(const SnapshotMatrix& s) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, p + i, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFu;
        h *= 1099511628211ULL;
      }
    }
  };
  mix(s.data.data(), static_cast<std::size_t>(s.data.size()));
  mix(s.params.data(), s.params.size());
  return h;
}

/// Parameter values for forecast columns, continuing at the mean training spacing.
inline std::vector<double> extend_parameters(const std::vector<double>& params, int steps) {
  std::vector<double> out = params;
  const double spacing = (params.back() - params.front()) / static_cast<double>(params.size() - 1);
  for (int k = 1; k <= steps; ++k) out.push_back(params.back() + k * spacing);
  return out;
}

/// 1 for training samples, gamma for forecast samples.
inline Vector sample_weights(std::size_t original, std::size_t predicted, double gamma) {
  Vector w = Vector::Ones(static_cast<Eigen::Index>(original + predicted));
  w.tail(static_cast<Eigen::Index>(predicted)).setConstant(gamma);
  return w;
}

inline PpmdModel train(const SnapshotMatrix& snapshots, const PpmdConfig& cfg) {
  snapshots.validate();
  const auto n_s = static_cast<Eigen::Index>(snapshots.cols());
  require(n_s >= std::max(4, cfg.spline.folds), ErrorCode::InsufficientSamples,
          "need at least max(4, folds) parameter samples");
  require(cfg.forecast_steps >= 0, ErrorCode::InvalidArgument, "forecast steps must be nonnegative");
  require(cfg.predicted_weight > 0.0 && cfg.predicted_weight <= 1.0, ErrorCode::InvalidArgument,
          "predicted-sample weight must lie in (0, 1]");

  PpmdModel model;
  model.train_params = snapshots.params;
  model.data_hash = snapshot_hash(snapshots);

  auto [Ubar, stats] = standardize(snapshots);
  model.stats = std::move(stats);
  model.basis = truncated_svd(Ubar, cfg.truncation);
  const Matrix Z = linear_coordinates(model.basis);
  const Matrix R = residual_matrix(Ubar, model.basis);

  auto& diag = model.diagnostics;
  diag.energy_fraction = model.basis.energy_fraction;
  diag.residual_fraction = R.norm() / Ubar.norm();

  Matrix Phi = Matrix::Zero(cfg.r_nl, n_s);
  require(cfg.r_nl >= 1 && cfg.r_nl <= n_s - 1, ErrorCode::RankTooLarge,
          "embedding dimension must be in [1, n_s-1]");
  if (diag.residual_fraction > kNegligibleResidual) {
    ManifoldOptions mopt;
    mopt.r_nl = cfg.r_nl;
    mopt.k_neighbors = cfg.k_neighbors;
    mopt.diffusion_power = cfg.diffusion_power;
    mopt.bandwidth = cfg.bandwidth;
    const ManifoldResult mr = embed_points(R, mopt);
    Phi = mr.embedding.coords;
    diag.k_used = mr.k_used;
    diag.bandwidth = mr.transition.bandwidth;
  } else {
    diag.linear_only = true;
  }
  model.lifting = fit_lifting(Phi, R, cfg.lifting);

  const int q = cfg.forecast_steps;
  const Matrix Zext = recursive_forecast(Z, q, cfg.latent_krr, cfg.refresh_period, cfg.tuning).extended;
  const Matrix Phiext = recursive_forecast(Phi, q, cfg.latent_krr, cfg.refresh_period, cfg.tuning).extended;
  const std::vector<double> locations = extend_parameters(snapshots.params, q);
  const Vector weights = sample_weights(snapshots.cols(), static_cast<std::size_t>(q), cfg.predicted_weight);

  model.z_map = fit_latent_maps(Zext, locations, weights, cfg.spline);
  model.phi_map = fit_latent_maps(Phiext, locations, weights, cfg.spline);
  model.lo = locations.front();
  model.hi = locations.back();
  return model;
}

/// Full state at parameter mu: destandardize(Psi z(mu) + lifting(phi(mu))).
inline Vector predict(const PpmdModel& model, double mu, bool extrapolate = false) {
  require(extrapolate || (mu >= model.lo && mu <= model.hi), ErrorCode::OutOfDomain,
          "parameter " + std::to_string(mu) + " outside the trained domain");
  const Vector z = model.z_map.evaluate(mu, extrapolate);
  const Vector phi = model.phi_map.evaluate(mu, extrapolate);
  return destandardize(model.basis.left_modes * z + apply_lifting(model.lifting, phi), model.stats);
}

struct MetricsRow {
  std::string type;  // Reconstruction (training parameter) or Prediction
  double parameter = 0.0;
  Eigen::Index rank = 0;
  std::string method;
  double mse = 0.0;
  double rel = 0.0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
};

inline double mean_squared_error(const Vector& predicted, const Vector& truth) {
  require(predicted.size() == truth.size(), ErrorCode::LengthMismatch, "state lengths differ");
  return (predicted - truth).squaredNorm() / static_cast<double>(truth.size());
}

inline double relative_error(const Vector& predicted, const Vector& truth) {
  require(predicted.size() == truth.size(), ErrorCode::LengthMismatch, "state lengths differ");
  const double denom = truth.norm();
  return denom > 0.0 ? (predicted - truth).norm() / denom : (predicted - truth).norm();
}

/// Scores any parameter-to-state predictor on the columns of `test`.
inline MetricsReport evaluate_predictor(const std::function<Vector(double)>& predictor, const SnapshotMatrix& test,
                                        const std::vector<double>& train_params, const std::string& method,
                                        Eigen::Index rank) {
  MetricsReport report;
  for (std::size_t i = 0; i < test.cols(); ++i) {
    const double mu = test.params[i];
    const Vector truth = test.data.col(static_cast<Eigen::Index>(i));
    const Vector guess = predictor(mu);
    const bool seen = std::find(train_params.begin(), train_params.end(), mu) != train_params.end();
    report.rows.push_back({seen ? "Reconstruction" : "Prediction", mu, rank, method,
                           mean_squared_error(guess, truth), relative_error(guess, truth)});
  }
  return report;
}

inline MetricsReport evaluate(const PpmdModel& model, const SnapshotMatrix& test, bool extrapolate = false) {
  return evaluate_predictor([&](double mu) { return predict(model, mu, extrapolate); }, test, model.train_params,
                            "PPMD", model.basis.rank());
}

}  // namespace ppmd
