#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "ppmd/snapshot.hpp"

namespace ppmd {

inline constexpr int kSplineDegree = 3;

enum class KnotStrategy { AtSamples, Uniform };

struct KnotOptions {
  KnotStrategy strategy = KnotStrategy::AtSamples;
  int breakpoints = 0;  // used by Uniform; includes both ends
};

/// Clamped cubic B-spline basis with its design and curvature-penalty matrices.
struct SplineBasis {
  std::vector<double> knots;
  std::vector<double> locations;
  Matrix design;   // N_p x M
  Matrix penalty;  // M x M, R_mn = int B_m'' B_n''
  Matrix penalty_root;  // L with L^T L = R
  Matrix affine;        // M x 2 coefficients of 1 and x: the null space of the penalty
  double lo = 0.0;
  double hi = 0.0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(knots.size()) - kSplineDegree - 1; }
};

namespace bspline {

/// Index j with knots[j] <= x < knots[j+1], clamped to the last nonempty span at the right end.
inline std::size_t find_span(const std::vector<double>& knots, double x) {
  const std::size_t n = knots.size() - kSplineDegree - 1;  // number of basis functions
  if (x >= knots[n]) {
    std::size_t j = n - 1;
    while (j > kSplineDegree && knots[j] == knots[j + 1]) --j;
    return j;
  }
  if (x <= knots[kSplineDegree]) return kSplineDegree;
  auto it = std::upper_bound(knots.begin() + kSplineDegree, knots.begin() + static_cast<long>(n) + 1, x);
  return static_cast<std::size_t>(it - knots.begin()) - 1;
}

/// Values and derivatives (rows 0..nd) of the degree+1 nonzero basis functions on `span`.
inline Eigen::MatrixXd span_derivatives(const std::vector<double>& U, std::size_t span, double x, int nd) {
  constexpr int p = kSplineDegree;
  Eigen::Matrix<double, p + 1, p + 1> ndu;
  std::array<double, p + 1> left{}, right{};
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - U[span + 1 - static_cast<std::size_t>(j)];
    right[j] = U[span + static_cast<std::size_t>(j)] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }
  Eigen::MatrixXd ders = Eigen::MatrixXd::Zero(nd + 1, p + 1);
  for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);
  Eigen::Matrix<double, 2, p + 1> a;
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a(0, 0) = 1.0;
    for (int k = 1; k <= nd; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  int factor = p;
  for (int k = 1; k <= nd; ++k) {
    ders.row(k) *= factor;
    factor *= (p - k);
  }
  return ders;
}

/// Row vector of all M basis values (order 0) or derivatives at x.
inline Vector basis_row(const std::vector<double>& knots, double x, int order = 0) {
  const Eigen::Index m = static_cast<Eigen::Index>(knots.size()) - kSplineDegree - 1;
  Vector row = Vector::Zero(m);
  const std::size_t span = find_span(knots, x);
  const Eigen::MatrixXd d = span_derivatives(knots, span, x, order);
  for (int j = 0; j <= kSplineDegree; ++j)
    row[static_cast<Eigen::Index>(span) - kSplineDegree + j] = d(order, j);
  return row;
}

}  // namespace bspline

inline std::vector<double> clamped_knots(const std::vector<double>& breakpoints) {
  std::vector<double> knots;
  for (int i = 0; i < kSplineDegree; ++i) knots.push_back(breakpoints.front());
  knots.insert(knots.end(), breakpoints.begin(), breakpoints.end());
  for (int i = 0; i < kSplineDegree; ++i) knots.push_back(breakpoints.back());
  return knots;
}

/// Square-root factor L of the curvature penalty, R = L^T L.
/// B'' is piecewise linear, so three Simpson nodes per knot interval integrate (B_m'' B_n'') exactly.
inline Matrix curvature_penalty_root(const std::vector<double>& knots) {
  const Eigen::Index m = static_cast<Eigen::Index>(knots.size()) - kSplineDegree - 1;
  std::vector<std::pair<std::size_t, double>> spans;
  for (std::size_t span = kSplineDegree; span + 1 < knots.size() - kSplineDegree; ++span)
    if (knots[span + 1] > knots[span]) spans.emplace_back(span, knots[span + 1] - knots[span]);
  Matrix L = Matrix::Zero(static_cast<Eigen::Index>(3 * spans.size()), m);
  Eigen::Index row = 0;
  for (const auto& [span, h] : spans) {
    const double a = knots[span];
    const std::array<double, 3> nodes{a, a + 0.5 * h, a + h};
    const std::array<double, 3> quad{h / 6.0, 4.0 * h / 6.0, h / 6.0};
    for (int q = 0; q < 3; ++q, ++row) {
      const Eigen::MatrixXd d = bspline::span_derivatives(knots, span, nodes[static_cast<std::size_t>(q)], 2);
      L.block(row, static_cast<Eigen::Index>(span) - kSplineDegree, 1, kSplineDegree + 1) =
          std::sqrt(quad[static_cast<std::size_t>(q)]) * d.row(2);
    }
  }
  return L;
}

/// Columns reproduce 1 and x: x = sum_i xi_i B_i(x) with Greville abscissae xi_i.
inline Matrix affine_coefficients(const std::vector<double>& knots) {
  const Eigen::Index m = static_cast<Eigen::Index>(knots.size()) - kSplineDegree - 1;
  Matrix n(m, 2);
  for (Eigen::Index i = 0; i < m; ++i) {
    double g = 0.0;
    for (int k = 1; k <= kSplineDegree; ++k) g += knots[static_cast<std::size_t>(i + k)];
    n(i, 0) = 1.0;
    n(i, 1) = g / kSplineDegree;
  }
  return n;
}

inline Matrix curvature_penalty(const std::vector<double>& knots) {
  const Matrix L = curvature_penalty_root(knots);
  return L.transpose() * L;
}

inline SplineBasis build_basis(const std::vector<double>& locations, const KnotOptions& opt = {}) {
  for (std::size_t i = 1; i < locations.size(); ++i)
    require(locations[i - 1] <= locations[i], ErrorCode::NonMonotoneKnots,
            "sample locations must be nondecreasing");
  std::vector<double> unique = locations;
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  require(unique.size() >= 4, ErrorCode::TooFewPoints, "cubic smoothing needs at least four distinct locations");

  std::vector<double> breaks;
  if (opt.strategy == KnotStrategy::AtSamples) {
    breaks = unique;
  } else {
    require(opt.breakpoints >= 2, ErrorCode::InvalidArgument, "uniform knots need at least two breakpoints");
    for (int i = 0; i < opt.breakpoints; ++i)
      breaks.push_back(unique.front() +
                       (unique.back() - unique.front()) * static_cast<double>(i) / (opt.breakpoints - 1));
    breaks.back() = unique.back();
  }

  SplineBasis basis;
  basis.knots = clamped_knots(breaks);
  basis.locations = locations;
  basis.lo = unique.front();
  basis.hi = unique.back();
  basis.design.resize(static_cast<Eigen::Index>(locations.size()), basis.size());
  for (std::size_t i = 0; i < locations.size(); ++i)
    basis.design.row(static_cast<Eigen::Index>(i)) = bspline::basis_row(basis.knots, locations[i]).transpose();
  basis.penalty_root = curvature_penalty_root(basis.knots);
  basis.penalty = basis.penalty_root.transpose() * basis.penalty_root;
  basis.affine = affine_coefficients(basis.knots);
  return basis;
}

struct SplineFit {
  std::shared_ptr<const SplineBasis> basis;
  Vector coeffs;
  Vector weights;
  double alpha = 0.0;
  double condition = 1.0;  // of B^T W B + alpha R
};

namespace detail {

inline double spd_condition(const Matrix& A) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(A, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

// Minimizer of (y - Bc)^T W (y - Bc) + alpha c^T R c with R = L^T L.
// alpha > 0 splits c = N a + P b with N spanning the penalty null space (affine functions) and P
// its orthogonal complement, eliminates a, and solves the stacked least-squares form for b by QR.
// alpha = 0 with a rank-deficient design takes the minimum-curvature member of the solution set.
inline Vector solve_penalized(const Matrix& B, const Vector& y, const Vector& w, const Matrix& L, const Matrix& N,
                              double alpha, double* condition = nullptr) {
  require(alpha >= 0.0, ErrorCode::InvalidArgument, "smoothing weight must be nonnegative");
  require((w.array() > 0.0).all(), ErrorCode::InvalidArgument, "sample weights must be positive");
  const Vector sw = w.cwiseSqrt();
  const Matrix Bw = sw.asDiagonal() * B;
  const Vector yw = sw.cwiseProduct(y);
  const Matrix R = L.transpose() * L;
  const double cond = spd_condition(Bw.transpose() * Bw + alpha * R);
  if (condition) *condition = cond;

  if (alpha > 0.0) {
    const Eigen::Index m = B.cols(), k = N.cols();
    const Eigen::HouseholderQR<Matrix> nqr(N);
    const Matrix Q = nqr.householderQ();
    const Matrix Nq = Q.leftCols(k), P = Q.rightCols(m - k);
    const Matrix A = Bw * Nq;
    const Eigen::ColPivHouseholderQR<Matrix> aqr(A);
    if (aqr.rank() < k) fail(ErrorCode::SingularSystem, "data do not determine the affine part of the spline");
    const Matrix QA = Matrix(aqr.householderQ()).leftCols(k);
    const Matrix BP = Bw * P;
    Matrix stacked(Bw.rows() + L.rows(), m - k);
    stacked << BP - QA * (QA.transpose() * BP), std::sqrt(alpha) * (L * P);
    Vector rhs = Vector::Zero(stacked.rows());
    rhs.head(Bw.rows()) = yw - QA * (QA.transpose() * yw);
    Eigen::ColPivHouseholderQR<Matrix> qr(stacked);
    qr.setThreshold(1e-13);
    if (qr.rank() < m - k)
      fail(ErrorCode::SingularSystem,
           "penalized normal equations are singular (condition " + std::to_string(cond) + ")");
    const Vector b = qr.solve(rhs);
    const Vector a = aqr.solve(Vector(yw - BP * b));
    return Nq * a + P * b;
  }

  Eigen::JacobiSVD<Matrix> svd(Bw, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  const double tol = s.size() ? s[0] * 1e-10 * static_cast<double>(std::max(Bw.rows(), Bw.cols())) : 0.0;
  Eigen::Index rank = 0;
  while (rank < s.size() && s[rank] > tol) ++rank;
  const Matrix V = svd.matrixV();
  Vector c = V.leftCols(rank) *
             (s.head(rank).cwiseInverse().asDiagonal() * (svd.matrixU().leftCols(rank).transpose() * yw));
  const Eigen::Index nnull = B.cols() - rank;
  if (nnull > 0) {
    const Matrix Q = V.rightCols(nnull);
    const Matrix QRQ = Q.transpose() * R * Q;
    const double qcond = spd_condition(QRQ);
    if (!(qcond < 1e14))
      fail(ErrorCode::SingularSystem,
           "interpolation problem is not well posed (penalty condition " + std::to_string(qcond) + ")");
    c += Q * QRQ.ldlt().solve(-(Q.transpose() * R * c));
  }
  return c;
}

}  // namespace detail

inline SplineFit fit_smoothing_spline(std::shared_ptr<const SplineBasis> basis, const Vector& y, const Vector& weights,
                                      double alpha) {
  require(y.size() == basis->design.rows() && weights.size() == y.size(), ErrorCode::LengthMismatch,
          "data and weights must match the basis sample count");
  SplineFit fit;
  fit.coeffs = detail::solve_penalized(basis->design, y, weights, basis->penalty_root, basis->affine, alpha, &fit.condition);
  fit.basis = std::move(basis);
  fit.weights = weights;
  fit.alpha = alpha;
  return fit;
}

/// Spline value at x; outside [lo, hi] either throws or extends linearly from the nearest end.
inline double spline_value(const std::vector<double>& knots, const Vector& coeffs, double x, bool extrapolate = false) {
  const double lo = knots.front(), hi = knots.back();
  if (x >= lo && x <= hi) return bspline::basis_row(knots, x).dot(coeffs);
  require(extrapolate, ErrorCode::OutOfDomain,
          "parameter " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  const double edge = x < lo ? lo : hi;
  const double value = bspline::basis_row(knots, edge).dot(coeffs);
  const double slope = bspline::basis_row(knots, edge, 1).dot(coeffs);
  return value + slope * (x - edge);
}

inline double evaluate_spline(const SplineFit& fit, double x, bool extrapolate = false) {
  return spline_value(fit.basis->knots, fit.coeffs, x, extrapolate);
}

/// Roughness c^T R c of a fitted spline.
inline double penalty_energy(const SplineFit& fit) { return (fit.basis->penalty_root * fit.coeffs).squaredNorm(); }

inline std::vector<double> log_spaced(double lo_exp, double hi_exp, int count) {
  std::vector<double> out;
  for (int i = 0; i < count; ++i)
    out.push_back(std::pow(10.0, count == 1 ? lo_exp : lo_exp + (hi_exp - lo_exp) * i / (count - 1)));
  return out;
}

struct SplineCvConfig {
  std::vector<double> alphas = log_spaced(-8.0, 4.0, 13);
  int folds = 5;
  std::uint64_t seed = 0;
  KnotOptions knots;
};

struct CvResult {
  double alpha = 0.0;
  std::size_t index = 0;
  std::vector<double> scores;  // CV(alpha_l), same order as the grid
  SplineFit fit;
};

/// Fold label per sample; each weight class is shuffled and dealt round-robin so classes spread across folds.
inline std::vector<int> stratified_folds(const Vector& weights, int folds, std::uint64_t seed) {
  std::map<double, std::vector<std::size_t>, std::greater<>> classes;
  for (Eigen::Index i = 0; i < weights.size(); ++i) classes[weights[i]].push_back(static_cast<std::size_t>(i));
  std::mt19937_64 rng(seed);
  std::vector<int> label(static_cast<std::size_t>(weights.size()), 0);
  int next = 0;
  for (auto& [w, idx] : classes) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (auto i : idx) {
      label[i] = next;
      next = (next + 1) % folds;
    }
  }
  return label;
}

inline CvResult cross_validate(std::shared_ptr<const SplineBasis> basis, const Vector& y, const Vector& weights,
                               const std::vector<double>& alphas, int folds, std::uint64_t seed = 0) {
  require(!alphas.empty(), ErrorCode::EmptyGrid, "smoothing grid is empty");
  const Eigen::Index n = y.size();
  require(n == basis->design.rows() && weights.size() == n, ErrorCode::LengthMismatch,
          "data and weights must match the basis sample count");
  require(folds >= 2, ErrorCode::InvalidArgument, "at least two folds required");
  require(folds <= n, ErrorCode::FoldTooSmall, "more folds than samples");

  const std::vector<int> label = stratified_folds(weights, folds, seed);
  CvResult out;
  out.scores.assign(alphas.size(), 0.0);
  for (int k = 0; k < folds; ++k) {
    std::vector<Eigen::Index> train, valid;
    for (Eigen::Index i = 0; i < n; ++i) (label[static_cast<std::size_t>(i)] == k ? valid : train).push_back(i);
    std::vector<double> train_locs;
    for (auto i : train) train_locs.push_back(basis->locations[static_cast<std::size_t>(i)]);
    train_locs.erase(std::unique(train_locs.begin(), train_locs.end()), train_locs.end());
    require(train_locs.size() >= 2, ErrorCode::FoldTooSmall, "training fold spans fewer than two locations");

    const Matrix Bt = basis->design(train, Eigen::all);
    const Vector yt = y(train), wt = weights(train);
    const Matrix Bv = basis->design(valid, Eigen::all);
    const Vector yv = y(valid), wv = weights(valid);
    for (std::size_t l = 0; l < alphas.size(); ++l) {
      const Vector c = detail::solve_penalized(Bt, yt, wt, basis->penalty_root, basis->affine, alphas[l]);
      const Vector r = yv - Bv * c;
      out.scores[l] += (wv.array() * r.array().square()).sum() / wv.sum() / folds;
    }
  }

  const double best = *std::min_element(out.scores.begin(), out.scores.end());
  const double scale = (weights.array() * y.array().square()).sum() / weights.sum();
  const double tol = 1e-9 * best + 1e-14 * (scale > 0.0 ? scale : 1.0);
  bool found = false;
  for (std::size_t l = 0; l < alphas.size(); ++l)
    if (out.scores[l] <= best + tol && (!found || alphas[l] > out.alpha)) {
      out.alpha = alphas[l];
      out.index = l;
      found = true;
    }
  out.fit = fit_smoothing_spline(std::move(basis), y, weights, out.alpha);
  return out;
}

/// Per-coordinate smoothing splines over a shared knot vector.
struct ContinuousLatentMap {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> knots;
  Matrix coeffs;  // dim x M
  Vector alphas;  // selected smoothing weight per coordinate

  Eigen::Index dim() const { return coeffs.rows(); }

  Vector evaluate(double x, bool extrapolate = false) const {
    Vector out(dim());
    if (!(x >= lo && x <= hi)) {
      require(extrapolate, ErrorCode::OutOfDomain,
              "parameter " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    for (Eigen::Index k = 0; k < dim(); ++k) out[k] = spline_value(knots, coeffs.row(k).transpose(), x, extrapolate);
    return out;
  }
};

inline ContinuousLatentMap fit_latent_maps(const Matrix& latent, const std::vector<double>& locations,
                                           const Vector& weights, const SplineCvConfig& cfg) {
  require(static_cast<std::size_t>(latent.cols()) == locations.size(), ErrorCode::LengthMismatch,
          "one location per latent column required");
  auto basis = std::make_shared<const SplineBasis>(build_basis(locations, cfg.knots));
  ContinuousLatentMap map;
  map.lo = basis->lo;
  map.hi = basis->hi;
  map.knots = basis->knots;
  map.coeffs.resize(latent.rows(), basis->size());
  map.alphas.resize(latent.rows());
  for (Eigen::Index k = 0; k < latent.rows(); ++k) {
    const CvResult cv = cross_validate(basis, latent.row(k).transpose(), weights, cfg.alphas, cfg.folds, cfg.seed);
    map.coeffs.row(k) = cv.fit.coeffs.transpose();
    map.alphas[k] = cv.alpha;
  }
  return map;
}

}  // namespace ppmd
