#pragma once

#include "ppmd/kernel_regression.hpp"

namespace ppmd {

/// Polynomial-kernel map from embedding coordinates back to full residual fields.
struct LiftingOperator {
  Matrix train_embeddings;  // r_nl x n_s
  Matrix dual;              // N x n_s
  PolyKernelParams params{2, 1.0, 1e-8};
};

inline LiftingOperator fit_lifting(const Matrix& embeddings, const Matrix& residuals, const PolyKernelParams& params) {
  require(embeddings.cols() == residuals.cols(), ErrorCode::ShapeMismatch,
          "embedding and residual sample counts differ");
  const KrrModel m = krr_fit(embeddings, residuals, params);
  return {m.train_inputs, m.dual, m.params};
}

inline Vector apply_lifting(const LiftingOperator& op, const Vector& phi) {
  require(phi.size() == op.train_embeddings.rows(), ErrorCode::ShapeMismatch,
          "embedding dimension does not match lifting operator");
  return op.dual * poly_kernel(op.train_embeddings, phi, op.params.offset, op.params.degree);
}

/// Lifted residuals for every column of `phis`.
inline Matrix apply_lifting_columns(const LiftingOperator& op, const Matrix& phis) {
  require(phis.rows() == op.train_embeddings.rows(), ErrorCode::ShapeMismatch,
          "embedding dimension does not match lifting operator");
  return op.dual * poly_kernel(op.train_embeddings, phis, op.params.offset, op.params.degree);
}

/// Ridge objective ||W M - R||_F^2 + lambda tr(W M W^T), the feature-space form of the lifting fit.
inline double lifting_objective(const LiftingOperator& op, const Matrix& dual, const Matrix& residuals) {
  const Matrix M = poly_kernel(op.train_embeddings, op.train_embeddings, op.params.offset, op.params.degree);
  return (dual * M - residuals).squaredNorm() + op.params.ridge * (dual * M * dual.transpose()).trace();
}

}  // namespace ppmd
