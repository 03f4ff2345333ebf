#pragma once

#include <cstddef>
#include <optional>
#include <variant>

#include <Eigen/SVD>

#include "ppmd/snapshot.hpp"

namespace ppmd {

/// Truncated SVD factors of a standardized snapshot matrix.
struct LinearBasis {
  Matrix left_modes;        // N x r
  Vector singular_values;   // r, descending
  Matrix right_modes;       // n_s x r
  double energy_fraction = 1.0;

  Eigen::Index rank() const { return singular_values.size(); }
};

struct EnergyTolerance {
  double epsilon = 1e-3;
};
struct ExplicitRank {
  Eigen::Index rank = 1;
};
using TruncationCriterion = std::variant<EnergyTolerance, ExplicitRank>;

namespace detail {

// Singular values closer than this (relative to the largest) count as tied.
inline constexpr double kTieTolerance = 1e-10;

inline Eigen::Index energy_rank(const Vector& sv, double epsilon) {
  const double total = sv.squaredNorm();
  const double target = (1.0 - epsilon) * total;
  double captured = 0.0;
  Eigen::Index r = 0;
  while (r < sv.size()) {
    captured += sv[r] * sv[r];
    ++r;
    if (captured >= target) break;
  }
  // Keep the whole block of values tied with the last retained one.
  const double tol = kTieTolerance * sv[0];
  while (r < sv.size() && std::abs(sv[r] - sv[r - 1]) <= tol) ++r;
  return r;
}

}  // namespace detail

inline LinearBasis truncated_svd(const Matrix& matrix, const TruncationCriterion& criterion) {
  require(matrix.size() > 0 && matrix.cwiseAbs().maxCoeff() > 0.0, ErrorCode::ZeroMatrix,
          "cannot decompose a zero matrix");
  const Eigen::Index max_rank = std::min(matrix.rows(), matrix.cols());
  if (const auto* explicit_rank = std::get_if<ExplicitRank>(&criterion)) {
    require(explicit_rank->rank >= 1 && explicit_rank->rank <= max_rank, ErrorCode::RankTooLarge,
            "explicit rank must lie in [1, min(N, n_s)]");
  } else {
    const double eps = std::get<EnergyTolerance>(criterion).epsilon;
    require(eps > 0.0 && eps < 1.0, ErrorCode::InvalidArgument, "energy tolerance must lie in (0,1)");
  }

  Eigen::JacobiSVD<Matrix> svd(matrix, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();

  const Eigen::Index r = std::holds_alternative<ExplicitRank>(criterion)
                             ? std::get<ExplicitRank>(criterion).rank
                             : detail::energy_rank(sv, std::get<EnergyTolerance>(criterion).epsilon);

  LinearBasis basis;
  basis.left_modes = svd.matrixU().leftCols(r);
  basis.right_modes = svd.matrixV().leftCols(r);
  basis.singular_values = sv.head(r);
  basis.energy_fraction = sv.head(r).squaredNorm() / sv.squaredNorm();

  // Deterministic signs: largest-magnitude entry of each left mode is positive.
  for (Eigen::Index k = 0; k < r; ++k) {
    Eigen::Index imax = 0;
    basis.left_modes.col(k).cwiseAbs().maxCoeff(&imax);
    if (basis.left_modes(imax, k) < 0.0) {
      basis.left_modes.col(k) *= -1.0;
      basis.right_modes.col(k) *= -1.0;
    }
  }
  return basis;
}

/// Z = Lambda Theta^T, the r x n_s linear latent coordinates.
inline Matrix linear_coordinates(const LinearBasis& basis) {
  return basis.singular_values.asDiagonal() * basis.right_modes.transpose();
}

/// Component of the data orthogonal to the retained right singular subspace.
inline Matrix residual_matrix(const Matrix& matrix, const LinearBasis& basis) {
  require(matrix.cols() == basis.right_modes.rows() && matrix.rows() == basis.left_modes.rows(),
          ErrorCode::ShapeMismatch, "basis does not match matrix shape");
  return matrix - (matrix * basis.right_modes) * basis.right_modes.transpose();
}

}  // namespace ppmd
