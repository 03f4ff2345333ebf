#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "ppmd/snapshot.hpp"

namespace ppmd {

struct PolyKernelParams {
  int degree = 2;
  double offset = 1.0;
  double ridge = 1e-8;
};

inline bool operator==(const PolyKernelParams& a, const PolyKernelParams& b) {
  return a.degree == b.degree && a.offset == b.offset && a.ridge == b.ridge;
}

/// Dual-form polynomial kernel ridge regressor.
struct KrrModel {
  Matrix train_inputs;  // r x n
  Matrix dual;          // r_out x n
  PolyKernelParams params;
};

/// Gram block (X^T Y + c)^d.
inline Matrix poly_kernel(const Matrix& X, const Matrix& Y, double offset, int degree) {
  require(X.rows() == Y.rows(), ErrorCode::ShapeMismatch, "kernel inputs differ in dimension");
  require(degree >= 1, ErrorCode::InvalidArgument, "polynomial degree must be >= 1");
  const Eigen::ArrayXXd base = ((X.transpose() * Y).array() + offset);
  Eigen::ArrayXXd out = base;
  for (int p = 1; p < degree; ++p) out *= base;
  return out.matrix();
}

namespace detail {

// Solves (G + ridge I) X = rhs for symmetric PSD G.
inline Matrix solve_regularized(const Matrix& G, const Matrix& rhs, double ridge) {
  require(ridge >= 0.0, ErrorCode::InvalidArgument, "ridge must be nonnegative");
  Matrix A = G;
  A.diagonal().array() += ridge;
  if (ridge > 0.0) {
    Eigen::LDLT<Matrix> ldlt(A);
    if (ldlt.info() == Eigen::Success) {
      Matrix x = ldlt.solve(rhs);
      if (x.allFinite()) return x;
    }
  }
  Eigen::FullPivLU<Matrix> lu(A);
  if (!lu.isInvertible()) {
    const double rcond = lu.rcond();
    fail(ErrorCode::SingularSystem,
         "regularized Gram matrix is singular (condition estimate " + std::to_string(1.0 / rcond) + ")");
  }
  return lu.solve(rhs);
}

}  // namespace detail

inline KrrModel krr_fit(const Matrix& inputs, const Matrix& targets, const PolyKernelParams& params) {
  require(inputs.cols() >= 1, ErrorCode::InsufficientSamples, "no training samples");
  require(inputs.cols() == targets.cols(), ErrorCode::ShapeMismatch,
          "inputs and targets differ in sample count");
  const Matrix G = poly_kernel(inputs, inputs, params.offset, params.degree);
  KrrModel model;
  model.train_inputs = inputs;
  model.params = params;
  model.dual = detail::solve_regularized(G, targets.transpose(), params.ridge).transpose();
  return model;
}

inline Matrix krr_predict(const KrrModel& model, const Matrix& query) {
  require(query.rows() == model.train_inputs.rows(), ErrorCode::ShapeMismatch,
          "query dimension does not match training inputs");
  return model.dual * poly_kernel(model.train_inputs, query, model.params.offset, model.params.degree);
}

/// Relative residual of (G + ridge I) dual^T = targets^T.
inline double normal_equation_residual(const KrrModel& model, const Matrix& targets) {
  Matrix A = poly_kernel(model.train_inputs, model.train_inputs, model.params.offset, model.params.degree);
  A.diagonal().array() += model.params.ridge;
  const double scale = A.norm() * model.dual.norm() + targets.norm();
  return scale > 0.0 ? (model.dual * A - targets).norm() / scale : 0.0;
}

struct TuningGrid {
  std::vector<int> degrees{1, 2, 3};
  std::vector<double> offsets{0.0, 1.0};
  std::vector<double> ridges{1e-8, 1e-6, 1e-4, 1e-2};
};

/// Mean squared one-step error with each interior transition pair held out in turn.
inline double loo_one_step_error(const Matrix& latent, const PolyKernelParams& params) {
  const Eigen::Index pairs = latent.cols() - 1;
  double total = 0.0;
  int count = 0;
  for (Eigen::Index hold = 1; hold + 1 < pairs; ++hold) {
    Matrix in(latent.rows(), pairs - 1), out(latent.rows(), pairs - 1);
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < pairs; ++j) {
      if (j == hold) continue;
      in.col(c) = latent.col(j);
      out.col(c) = latent.col(j + 1);
      ++c;
    }
    try {
      const KrrModel m = krr_fit(in, out, params);
      total += (krr_predict(m, latent.col(hold)) - latent.col(hold + 1)).squaredNorm();
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
    ++count;
  }
  return total / (static_cast<double>(count) * static_cast<double>(latent.rows()));
}

/// Grid point with smallest LOO error; near-ties prefer smaller degree, then larger ridge.
inline PolyKernelParams tune_hyperparameters(const Matrix& latent, const TuningGrid& grid) {
  require(!grid.degrees.empty() && !grid.offsets.empty() && !grid.ridges.empty(), ErrorCode::EmptyGrid,
          "tuning grid is empty");
  require(latent.cols() >= 4, ErrorCode::InsufficientSamples, "tuning needs at least four columns");
  struct Scored {
    PolyKernelParams p;
    double err;
  };
  std::vector<Scored> scored;
  double best = std::numeric_limits<double>::infinity();
  for (int d : grid.degrees)
    for (double c : grid.offsets)
      for (double lam : grid.ridges) {
        const PolyKernelParams p{d, c, lam};
        const double e = loo_one_step_error(latent, p);
        scored.push_back({p, e});
        best = std::min(best, e);
      }
  const double scale = latent.squaredNorm() / static_cast<double>(latent.size());
  const double tol = 1e-10 * (scale > 0.0 ? scale : 1.0) + 1e-9 * best;
  std::optional<Scored> pick;
  for (const auto& s : scored) {
    if (!(s.err <= best + tol)) continue;
    if (!pick) {
      pick = s;
      continue;
    }
    const auto& q = pick->p;
    const bool better = s.p.degree < q.degree ||
                        (s.p.degree == q.degree && s.p.ridge > q.ridge) ||
                        (s.p.degree == q.degree && s.p.ridge == q.ridge && s.p.offset < q.offset);
    if (better) pick = s;
  }
  require(pick.has_value(), ErrorCode::SingularSystem, "no grid point produced a finite LOO error");
  return pick->p;
}

struct ForecastResult {
  Matrix extended;                              // r x (n_s + steps)
  std::vector<PolyKernelParams> step_params;    // hyperparameters used at each step
};

/// Fit-predict-append loop; hyperparameters retuned every `refresh_period` steps when a grid is given.
inline ForecastResult recursive_forecast(const Matrix& latent, int steps, PolyKernelParams params,
                                         int refresh_period = 0,
                                         const std::optional<TuningGrid>& grid = std::nullopt) {
  require(steps >= 0, ErrorCode::InvalidArgument, "steps must be nonnegative");
  ForecastResult out;
  out.extended = latent;
  if (steps == 0) return out;
  require(latent.cols() >= 3, ErrorCode::InsufficientSamples, "forecasting needs at least three columns");
  out.extended.conservativeResize(Eigen::NoChange, latent.cols() + steps);
  for (int s = 0; s < steps; ++s) {
    const Eigen::Index n = latent.cols() + s;
    const auto current = out.extended.leftCols(n);
    if (grid && refresh_period > 0 && s % refresh_period == 0) params = tune_hyperparameters(current, *grid);
    const KrrModel m = krr_fit(current.leftCols(n - 1), current.rightCols(n - 1), params);
    out.extended.col(n) = krr_predict(m, current.col(n - 1));
    out.step_params.push_back(params);
  }
  return out;
}

}  // namespace ppmd
