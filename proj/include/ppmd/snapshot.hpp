#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ppmd/error.hpp"

namespace ppmd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Scale used for rows whose spread across parameter columns vanishes.
inline constexpr double kSigmaFloor = 1e-12;

/// States of one simulation run at a fixed parameter value, ordered in time.
struct Trajectory {
  double parameter = 0.0;
  std::vector<Vector> states;
};

/// Column i holds the time-major concatenation of the trajectory at params[i].
struct SnapshotMatrix {
  Matrix data;
  std::vector<double> params;
  std::size_t n_spatial = 0;
  std::size_t n_time = 0;

  std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(data.cols()); }

  /// Throws if the shape bookkeeping or parameter ordering is inconsistent.
  void validate() const {
    require(n_spatial * n_time == rows(), ErrorCode::MismatchedShape,
            "rows must equal n_spatial * n_time");
    require(params.size() == cols(), ErrorCode::MismatchedShape,
            "one parameter value per column required");
    for (std::size_t i = 1; i < params.size(); ++i)
      require(params[i - 1] < params[i], ErrorCode::UnsortedParams,
              "parameter values must be strictly ascending");
  }

  /// Splits column `col` back into its n_time state vectors.
  Trajectory unstack(std::size_t col) const {
    Trajectory traj;
    traj.parameter = params.at(col);
    traj.states.reserve(n_time);
    for (std::size_t j = 0; j < n_time; ++j)
      traj.states.push_back(data.col(static_cast<Eigen::Index>(col))
                                .segment(static_cast<Eigen::Index>(j * n_spatial),
                                         static_cast<Eigen::Index>(n_spatial)));
    return traj;
  }
};

struct ScalingStats {
  Vector mean;
  Vector scale;
};

inline SnapshotMatrix assemble_parametric_snapshots(std::vector<Trajectory> trajectories) {
  require(trajectories.size() >= 2, ErrorCode::InsufficientSamples,
          "at least two trajectories are required");
  const std::size_t m = trajectories.front().states.size();
  require(m >= 1, ErrorCode::MismatchedShape, "trajectory has no states");
  const auto n = static_cast<std::size_t>(trajectories.front().states.front().size());
  for (const auto& traj : trajectories) {
    require(traj.states.size() == m, ErrorCode::MismatchedShape,
            "trajectories differ in number of time steps");
    for (const auto& s : traj.states)
      require(static_cast<std::size_t>(s.size()) == n, ErrorCode::MismatchedShape,
              "trajectories differ in state length");
  }
  std::stable_sort(trajectories.begin(), trajectories.end(),
                   [](const Trajectory& a, const Trajectory& b) { return a.parameter < b.parameter; });
  for (std::size_t i = 1; i < trajectories.size(); ++i)
    require(trajectories[i - 1].parameter != trajectories[i].parameter,
            ErrorCode::DuplicateParameter, "parameter values must be pairwise distinct");

  SnapshotMatrix out;
  out.n_spatial = n;
  out.n_time = m;
  out.data.resize(static_cast<Eigen::Index>(n * m), static_cast<Eigen::Index>(trajectories.size()));
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    out.params.push_back(trajectories[i].parameter);
    for (std::size_t j = 0; j < m; ++j)
      out.data.col(static_cast<Eigen::Index>(i))
          .segment(static_cast<Eigen::Index>(j * n), static_cast<Eigen::Index>(n)) =
          trajectories[i].states[j];
  }
  return out;
}

/// Per-row standardization across parameter columns (population std, floored).
inline std::pair<Matrix, ScalingStats> standardize(const Matrix& data) {
  require(data.cols() >= 2, ErrorCode::InsufficientSamples, "standardize needs at least two columns");
  ScalingStats stats;
  stats.mean = data.rowwise().mean();
  Matrix centered = data.colwise() - stats.mean;
  stats.scale = (centered.rowwise().squaredNorm() / static_cast<double>(data.cols())).cwiseSqrt();
  for (Eigen::Index i = 0; i < stats.scale.size(); ++i)
    if (!(stats.scale[i] >= kSigmaFloor)) stats.scale[i] = kSigmaFloor;
  Matrix standardized = centered.array().colwise() / stats.scale.array();
  return {std::move(standardized), std::move(stats)};
}

inline std::pair<Matrix, ScalingStats> standardize(const SnapshotMatrix& snapshots) {
  return standardize(snapshots.data);
}

inline Vector destandardize(const Vector& column, const ScalingStats& stats) {
  require(column.size() == stats.mean.size() && column.size() == stats.scale.size(),
          ErrorCode::LengthMismatch, "column length does not match scaling stats");
  return column.cwiseProduct(stats.scale) + stats.mean;
}

/// Applies the stored standardization to a column measured in solution units.
inline Vector apply_standardization(const Vector& column, const ScalingStats& stats) {
  require(column.size() == stats.mean.size(), ErrorCode::LengthMismatch,
          "column length does not match scaling stats");
  return (column - stats.mean).cwiseQuotient(stats.scale);
}

}  // namespace ppmd
