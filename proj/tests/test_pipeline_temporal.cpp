#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "ppmd/baseline.hpp"
#include "ppmd/io.hpp"
#include "ppmd/pipeline.hpp"
#include "ppmd/temporal_pmd.hpp"

using namespace ppmd;

namespace {

SnapshotMatrix separable(std::size_t count = 30) { return generate_synthetic({}, linspace(0.5, 1.5, count)); }

PpmdConfig tight_config(Eigen::Index rank, int r_nl) {
  PpmdConfig c;
  c.truncation = ExplicitRank{rank};
  c.r_nl = r_nl;
  c.latent_krr = {2, 1.0, 1e-10};
  c.lifting = {2, 1.0, 1e-10};
  c.spline.alphas = {1e-10};
  return c;
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parametric pipeline
// ---------------------------------------------------------------------------

TEST(Pipeline, SeparableFamilyIsLinear) {
  const auto s = separable();
  const auto m = train(s, tight_config(2, 1));
  EXPECT_LE(m.diagnostics.residual_fraction, 1e-8);
  EXPECT_TRUE(m.diagnostics.linear_only);
  EXPECT_EQ(m.z_map.dim(), 2);
  EXPECT_EQ(m.phi_map.dim(), 1);
  EXPECT_EQ(m.lo, 0.5);
  EXPECT_EQ(m.hi, 1.5);
}

TEST(Pipeline, WeightsAllOneWithoutForecast) {
  EXPECT_EQ(sample_weights(7, 0, 0.5), Vector::Ones(7));
  const Vector w = sample_weights(3, 2, 0.25);
  EXPECT_EQ(w, (Vector(5) << 1, 1, 1, 0.25, 0.25).finished());
}

TEST(Pipeline, TooFewSamples) {
  const auto s = generate_synthetic({}, {0.1, 0.2, 0.3});
  try {
    train(s, PpmdConfig{});
    ADD_FAILURE() << "expected InsufficientSamples";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSamples);
  }
}

TEST(Pipeline, DecompositionIdentity) {
  SyntheticFamily fam{Family::Traveling, 30, 4};
  const auto s = generate_synthetic(fam, linspace(0.2, 0.6, 20));
  auto [U, st] = standardize(s);
  for (Eigen::Index r : {1, 3, 6}) {
    const auto b = truncated_svd(U, ExplicitRank{r});
    const Matrix rebuilt = b.left_modes * linear_coordinates(b) + residual_matrix(U, b);
    EXPECT_LE((rebuilt - U).norm(), 1e-9 * U.norm());
  }
}

TEST(Pipeline, PredictsTrainingColumns) {
  const auto s = separable();
  const auto m = train(s, tight_config(2, 1));
  for (std::size_t j = 0; j < s.cols(); ++j)
    EXPECT_LE(relative_error(predict(m, s.params[j]), s.data.col(static_cast<Eigen::Index>(j))), 1e-3);
}

TEST(Pipeline, ZeroResidualPredictionIsLinearPart) {
  const auto s = separable();
  const auto m = train(s, tight_config(2, 2));
  for (double mu : {0.55, 0.9, 1.33}) {
    const Vector linear = destandardize(m.basis.left_modes * m.z_map.evaluate(mu), m.stats);
    EXPECT_LE((predict(m, mu) - linear).norm(), 1e-6 * linear.norm());
  }
}

TEST(Pipeline, DomainContract) {
  const auto s = separable(10);
  const auto m = train(s, tight_config(2, 1));
  EXPECT_THROW(predict(m, 1.6), Error);
  EXPECT_NO_THROW(predict(m, 1.6, true));
}

TEST(Pipeline, ForecastExtendsDomain) {
  auto c = tight_config(2, 1);
  c.forecast_steps = 3;
  const auto s = separable(12);
  const auto m = train(s, c);
  const double spacing = 1.0 / 11.0;
  EXPECT_NEAR(m.hi, 1.5 + 3 * spacing, 1e-12);
  EXPECT_NO_THROW(predict(m, 1.5 + 2 * spacing));
  EXPECT_EQ(extend_parameters({0.0, 1.0, 3.0}, 2), (std::vector<double>{0.0, 1.0, 3.0, 4.5, 6.0}));
}

TEST(Pipeline, ReconstructionErrorMonotoneInRank) {
  const auto s = separable();
  double prev = std::numeric_limits<double>::infinity();
  for (Eigen::Index r : {1, 2, 3}) {
    const auto m = train(s, tight_config(r, 1));
    double worst = 0;
    for (std::size_t j = 0; j < s.cols(); ++j)
      worst = std::max(worst, relative_error(predict(m, s.params[j]), s.data.col(static_cast<Eigen::Index>(j))));
    EXPECT_LE(worst, prev * (1 + 1e-6) + 1e-9);
    prev = worst;
  }
}

TEST(Pipeline, PredictDeterministicAcrossSerialization) {
  SyntheticFamily fam{Family::Traveling, 20, 3};
  const auto s = generate_synthetic(fam, linspace(0.2, 0.6, 12));
  auto c = tight_config(2, 3);
  c.forecast_steps = 2;
  const auto m = train(s, c);
  const auto back = io::ppmd_from_archive(io::Archive::decode(io::to_archive(m).encode()));
  for (double mu : {0.2, 0.31, 0.6, 0.64}) EXPECT_EQ(predict(m, mu), predict(back, mu));
  EXPECT_EQ(back.data_hash, m.data_hash);
  EXPECT_EQ(back.diagnostics.linear_only, m.diagnostics.linear_only);
}

TEST(Metrics, IdentityAndOffset) {
  const Vector u = Vector::LinSpaced(10, 1.0, 2.0);
  EXPECT_EQ(mean_squared_error(u, u), 0.0);
  EXPECT_EQ(relative_error(u, u), 0.0);
  EXPECT_NEAR(mean_squared_error(u.array() + 0.1, u), 0.01, 1e-15);
  EXPECT_NEAR(relative_error(u.array() + 0.1, u), 0.1 * std::sqrt(10.0) / u.norm(), 1e-15);
}

TEST(Metrics, ReportRowShape) {
  const auto s = separable(12);
  const auto m = train(s, tight_config(2, 1));
  SnapshotMatrix test = generate_synthetic({}, {s.params[3], s.params[3] + 0.03});
  const auto rep = evaluate(m, test);
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[0].type, "Reconstruction");
  EXPECT_EQ(rep.rows[1].type, "Prediction");
  EXPECT_EQ(rep.rows[1].method, "PPMD");
  EXPECT_EQ(rep.rows[1].rank, 2);
  for (const auto& r : rep.rows) {
    EXPECT_GE(r.mse, 0.0);
    EXPECT_GE(r.rel, 0.0);
  }
  const std::string csv = io::metrics_csv(rep.rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "type,parameter,rank,method,mse,rel");
}

// ---------------------------------------------------------------------------
// Temporal PMD
// ---------------------------------------------------------------------------

TEST(LinearDynamics, ScalarClosedForms) {
  EXPECT_NEAR(fit_linear_dynamics(row({1, 2, 4}), 0.0).A(0, 0), 2.0, 1e-14);
  for (double a : {0.5, 1.3, -0.7})
    for (double lam : {0.0, 0.1, 5.0}) {
      const double want = a * (1 + a * a) / (1 + a * a + lam);
      EXPECT_NEAR(fit_linear_dynamics(row({1, a, a * a}), lam).A(0, 0), want, 1e-13);
    }
  EXPECT_LE(std::abs(fit_linear_dynamics(row({1, 2, 4}), 1e14).A(0, 0)), 1e-12);
}

TEST(LinearDynamics, Propagation) {
  LinearDynamics dyn{Matrix::Constant(1, 1, 2.0), 0.0, 2.0};
  EXPECT_EQ(propagate_linear(dyn, Vector::Ones(1), 3), row({2, 4, 8}));
  LinearDynamics id{Matrix::Identity(3, 3), 0.0, 1.0};
  const Vector z0 = Vector::LinSpaced(3, 1, 3);
  const Matrix p = propagate_linear(id, z0, 4);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(p.col(j), z0);
  std::mt19937_64 rng(1);
  LinearDynamics rnd{0.5 * oracle::random_matrix(rng, 4, 4), 0.0, 0.0};
  const Vector v = oracle::random_matrix(rng, 4, 1).col(0);
  Matrix power = Matrix::Identity(4, 4);
  const Matrix out = propagate_linear(rnd, v, 5);
  for (int j = 0; j < 5; ++j) {
    power = rnd.A * power;
    EXPECT_LE((out.col(j) - power * v).norm(), 1e-12 * (1 + v.norm()));
  }
}

TEST(Harmonics, MarkovRowsAndSpectrum) {
  std::mt19937_64 rng(2);
  const Matrix pts = oracle::random_matrix(rng, 2, 15);
  const auto h = build_harmonics(pts);
  const Matrix P = h.degrees.cwiseInverse().asDiagonal() * affinity(h.geodesics, h.bandwidth);
  EXPECT_LE((P.rowwise().sum().array() - 1).abs().maxCoeff(), 1e-12);
  EXPECT_NEAR(h.eigenvalues[0], 1.0, 1e-10);
  EXPECT_LE(h.eigenvalues.maxCoeff(), 1 + 1e-10);
  // D-orthonormality.
  EXPECT_LE((h.vectors.transpose() * h.degrees.asDiagonal() * h.vectors - Matrix::Identity(15, 15)).norm(), 1e-9);
}

TEST(Harmonics, NystromReproducesTrainingValues) {
  std::mt19937_64 rng(3);
  const Matrix pts = oracle::random_matrix(rng, 3, 12);
  const auto h = build_harmonics(pts);
  for (Eigen::Index j = 0; j < 12; ++j) {
    if (h.eigenvalues[j] <= kHarmonicFloor) {
      EXPECT_THROW(nystrom_extend(h, pts.col(0), j), Error);
      continue;
    }
    for (Eigen::Index i = 0; i < 12; ++i)
      EXPECT_NEAR(nystrom_extend(h, pts.col(i), j), h.vectors(i, j), 1e-9 * (1 + h.vectors.col(j).cwiseAbs().maxCoeff()));
  }
  // The literal (unnormalized) sum is off by the degree at training points.
  EXPECT_NEAR(nystrom_extend(h, pts.col(2), 0, false), h.degrees[2] * h.vectors(2, 0), 1e-9);
}

TEST(Harmonics, SymmetricMidpoint) {
  Matrix pts(2, 2);
  pts << 0, 1, 0, 1;
  const auto h = build_harmonics(pts);
  const Vector mid = pts.rowwise().mean();
  for (Eigen::Index j = 0; j < 2; ++j)
    EXPECT_NEAR(nystrom_extend(h, mid, j), 0.5 * (h.vectors(0, j) + h.vectors(1, j)) / h.eigenvalues[j], 1e-12);
  EXPECT_NEAR(nystrom_extend(h, mid, 0), 0.5 * (h.vectors(0, 0) + h.vectors(1, 0)), 1e-12);
}

TEST(ManifoldDynamics, DegenerateAndCutoff) {
  EXPECT_THROW(fit_manifold_dynamics(Matrix::Ones(2, 5), 0.0), Error);
  std::mt19937_64 rng(4);
  const Matrix phi = oracle::random_matrix(rng, 2, 6);
  ManifoldDynamicsOptions opt;
  opt.floor = 2.0;  // nothing survives
  const auto dyn = fit_manifold_dynamics(phi, 1e-8, opt);
  EXPECT_EQ(dyn.retained, 0);
  EXPECT_THROW(nystrom_extend(dyn, phi.col(0), 0), Error);
}

TEST(ManifoldDynamics, HarmonicCompleteness) {
  std::mt19937_64 rng(5);
  const Matrix phi = oracle::random_matrix(rng, 2, 8);
  ManifoldDynamicsOptions opt;
  opt.floor = -2.0;  // keep every harmonic, including negative ones
  const auto dyn = fit_manifold_dynamics(phi, 1e-8, opt);
  ASSERT_EQ(dyn.retained, 8);
  const Matrix F = dyn.omega * phi;
  const Matrix sum = dyn.coefficients * dyn.harmonics.vectors.transpose();
  EXPECT_LE((sum - F).norm(), 1e-9 * F.norm());
  for (Eigen::Index i = 0; i < 8; ++i)
    EXPECT_LE((step_nonlinear(dyn, phi.col(i)) - F.col(i)).norm(), 1e-8 * (1 + F.col(i).norm()));
  auto zeroed = dyn;
  zeroed.coefficients.setZero();
  EXPECT_EQ(step_nonlinear(zeroed, phi.col(3)), Vector::Zero(2));
}

TEST(ManifoldDynamics, GeometricSequenceOneStep) {
  const double a = 0.9;
  Matrix phi(1, 25);
  for (int k = 0; k < 25; ++k) phi(0, k) = std::pow(a, k);
  const auto dyn = fit_manifold_dynamics(phi, 1e-10);
  EXPECT_NEAR(dyn.omega(0, 0), a, 1e-8);
  for (int k : {3, 10, 20}) {
    const double p = phi(0, k);
    EXPECT_NEAR(step_nonlinear(dyn, phi.col(k))[0], a * p, 0.05 * a * p);
  }
}

TEST(TemporalPmd, ReconstructAndForecast) {
  SyntheticFamily fam{Family::Traveling, 60, 1};
  const auto traj = generate_synthetic(fam, linspace(0.1, 0.5, 30));
  TemporalPmdConfig cfg;
  cfg.truncation = ExplicitRank{3};
  cfg.r_nl = 2;
  const auto model = train_temporal(traj.data.leftCols(25), cfg);
  const Matrix f = forecast_temporal(model, 3);
  EXPECT_EQ(f.cols(), 3);
  EXPECT_TRUE(f.allFinite());
  // Zero latent state and zero lifting input reproduce the mean.
  LiftingOperator zero = model.lifting;
  zero.dual.setZero();
  EXPECT_LE((pmd_reconstruct(model.basis.left_modes, Vector::Zero(3), zero, model.last_phi, model.stats) -
             model.stats.mean).norm(),
            1e-12);
  const auto back = io::temporal_from_archive(io::Archive::decode(io::to_archive(model).encode()));
  EXPECT_EQ(forecast_temporal(back, 3), f);
}

TEST(TemporalPmd, TrainingSnapshotsReconstructed) {
  SyntheticFamily fam{Family::Traveling, 40, 1};
  const auto traj = generate_synthetic(fam, linspace(0.1, 0.5, 12));
  TemporalPmdConfig cfg;
  cfg.truncation = ExplicitRank{2};
  cfg.r_nl = 11;
  cfg.lifting = {1, 1.0, 1e-12};
  auto [U, st] = standardize(traj.data);
  const auto model = train_temporal(traj.data, cfg);
  const Matrix Z = linear_coordinates(model.basis);
  ManifoldOptions mo;
  mo.r_nl = cfg.r_nl;
  const Matrix Phi = embed_points(residual_matrix(U, model.basis), mo).embedding.coords;
  for (Eigen::Index j = 0; j < 12; ++j) {
    const Vector u = pmd_reconstruct(model.basis.left_modes, Z.col(j), model.lifting, Phi.col(j), model.stats);
    EXPECT_LE(relative_error(u, traj.data.col(j)), 1e-6);
  }
}
