#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sys/wait.h>

#include "oracles.hpp"
#include "ppmd/baseline.hpp"
#include "ppmd/config.hpp"
#include "ppmd/io.hpp"

using namespace ppmd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ppmd_tests";
  fs::create_directories(dir);
  return dir / name;
}

template <class F>
void expect_error(ErrorCode code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

double random_double(std::mt19937_64& rng) {
  switch (rng() % 6) {
    case 0: return 0.0;
    case 1: return -0.0;
    case 2: return std::numeric_limits<double>::denorm_min() * static_cast<double>(rng() % 1000 + 1) * ((rng() & 1) ? 1 : -1);
    case 3: return std::numeric_limits<double>::max() * ((rng() & 1) ? 1 : -1);
    default: {
      std::uint64_t bits = rng();
      double v;
      std::memcpy(&v, &bits, sizeof v);
      return std::isfinite(v) ? v : 1.5;
    }
  }
}

SnapshotMatrix random_snapshots(std::mt19937_64& rng) {
  SnapshotMatrix s;
  s.n_spatial = 1 + rng() % 4;
  s.n_time = 1 + rng() % 3;
  const std::size_t cols = 1 + rng() % 5;
  s.data.resize(static_cast<Eigen::Index>(s.n_spatial * s.n_time), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < s.data.size(); ++i) s.data.data()[i] = random_double(rng);
  double p = -10.0 + std::ldexp(static_cast<double>(rng() % 1000), -7);
  for (std::size_t j = 0; j < cols; ++j) {
    s.params.push_back(p);
    p = std::nextafter(p, 1e300) + static_cast<double>(rng() % 3);
  }
  return s;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PPMD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

// ---------------------------------------------------------------------------
// POD + GPR and synthetic families
// ---------------------------------------------------------------------------

TEST(Gp, MatchesDirectSolve) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 10);
    std::vector<double> x = linspace(0.0, 1.0 + static_cast<double>(rng() % 3), static_cast<std::size_t>(n));
    const Vector y = oracle::random_matrix(rng, n, 1).col(0);
    GprOptions opt;
    opt.jitter = 1e-3;
    const auto gp = fit_scalar_gp(x, y, opt);
    for (double q : {-0.5, 0.3, 0.77, 2.4}) {
      const double want = oracle::gp_direct(x, y, y.mean(), gp.signal_variance, gp.length_scale, 1e-3, q);
      EXPECT_NEAR(gp.predict(q), want, 1e-9 * (1 + std::abs(want)));
    }
  }
}

TEST(Gp, HyperparameterHeuristics) {
  EXPECT_DOUBLE_EQ(median_pairwise_gap({0.0, 1.0, 3.0}), 2.0);
  Vector y(4);
  y << 1, 2, 3, 6;
  const auto gp = fit_scalar_gp({0, 1, 2, 3}, y);
  EXPECT_DOUBLE_EQ(gp.mean, 3.0);
  EXPECT_DOUBLE_EQ(gp.signal_variance, 3.5);
  GprOptions opt;
  opt.optimize_length_scale = true;
  EXPECT_GT(fit_scalar_gp({0, 1, 2, 3}, y, opt).length_scale, 0.0);
}

TEST(PodGpr, ConstantSnapshotsPredictConstant) {
  SnapshotMatrix s;
  s.n_spatial = 3;
  s.n_time = 1;
  s.params = {0, 1, 2, 3};
  s.data = Matrix::Constant(3, 4, 2.5);
  const auto m = pod_gpr_train(s, 2);
  EXPECT_EQ(m.basis.rank(), 0);
  for (double mu : {-4.0, 0.5, 9.0}) EXPECT_LE((pod_gpr_predict(m, mu).array() - 2.5).abs().maxCoeff(), 1e-12);
}

TEST(PodGpr, InterpolatesTrainingCoefficients) {
  const auto s = generate_synthetic({}, linspace(0.5, 1.5, 12));
  GprOptions opt;
  opt.jitter = 1e-12;
  const auto m = pod_gpr_train(s, 2, opt);
  const Matrix Z = linear_coordinates(m.basis);
  for (std::size_t j = 0; j < 12; ++j) {
    const Vector z = pod_gpr_coefficients(m, s.params[j]);
    EXPECT_LE((z - Z.col(static_cast<Eigen::Index>(j))).norm(), 1e-6 * (1 + Z.col(static_cast<Eigen::Index>(j)).norm()));
  }
}

TEST(PodGpr, SeparableTrainingAccuracy) {
  const auto s = generate_synthetic({}, linspace(0.5, 1.5, 30));
  // The default 1e-8 nugget limits how closely training columns are reproduced.
  const auto m = pod_gpr_train(s, 2);
  for (std::size_t j = 0; j < s.cols(); ++j)
    EXPECT_LE(relative_error(pod_gpr_predict(m, s.params[j]), s.data.col(static_cast<Eigen::Index>(j))), 1e-5);
}

TEST(PodGpr, RevertsToMeanFarAway) {
  const auto s = generate_synthetic({}, linspace(0.5, 1.5, 10));
  const auto m = pod_gpr_train(s, 2);
  double prev = std::numeric_limits<double>::infinity();
  for (double far : {5.0, 20.0, 100.0}) {
    Vector means(2);
    for (int k = 0; k < 2; ++k) means[k] = m.regressors[static_cast<std::size_t>(k)].mean;
    const double gap = (pod_gpr_coefficients(m, far) - means).norm();
    EXPECT_LE(gap, prev);
    prev = gap;
  }
  EXPECT_LE(prev, 1e-12);
}

TEST(Synthetic, FamilyProperties) {
  const auto zero = generate_synthetic({}, {0.0, 1.0});
  EXPECT_EQ(zero.data.col(0).cwiseAbs().maxCoeff(), 0.0);
  const auto s = generate_synthetic({}, linspace(0.1, 2.0, 20));
  const Vector sv = Eigen::JacobiSVD<Matrix>(s.data).singularValues();
  EXPECT_LE(sv[2], 1e-10 * sv[0]);
  // Peak at x = mu + 0.1 t: n_spatial = 11 gives x = 0.1 i, n_time = 2 gives t in {0, 1}.
  const auto w = generate_synthetic({Family::Traveling, 11, 2}, {0.3, 0.4});
  EXPECT_NEAR(w.data(3, 0), 1.0, 1e-12);       // t = 0, x = 0.3
  EXPECT_NEAR(w.data(11 + 5, 1), 1.0, 1e-12);  // t = 1, x = 0.5
  EXPECT_THROW(generate_synthetic({Family::Separable, 1, 3}, {0, 1}), Error);
  EXPECT_THROW(generate_synthetic({}, {1.0, 0.5}), Error);
}

TEST(CovarianceRate, SlopeAndDegenerate) {
  CovarianceExperiment exp;
  exp.sample_sizes = {50, 400};
  exp.trials = 1;
  EXPECT_TRUE(std::isfinite(covariance_rate_experiment(exp).slope));
  exp.amplitude = 0.0;
  expect_error(ErrorCode::NaNSlope, [&] { covariance_rate_experiment(exp); });
  exp.sample_sizes = {50};
  expect_error(ErrorCode::InvalidArgument, [&] { covariance_rate_experiment(exp); });
}

// ---------------------------------------------------------------------------
// Snapshot files
// ---------------------------------------------------------------------------

TEST(Pmds, HeaderLayoutAndSize) {
  SnapshotMatrix s;
  s.n_spatial = 2;
  s.n_time = 1;
  s.params = {0.25, 0.5};
  s.data.resize(2, 2);
  s.data << 1, 2, 3, 4;
  const std::string bytes = io::encode_snapshots(s);
  EXPECT_EQ(bytes.size(), io::kSnapshotHeaderBytes + 2 * 8 + 4 * 8);
  EXPECT_EQ(bytes.substr(0, 4), "PMDS");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);  // rows, little endian
  double first;
  std::memcpy(&first, bytes.data() + 40, 8);
  EXPECT_EQ(first, 0.25);
  std::memcpy(&first, bytes.data() + 56 + 8, 8);
  EXPECT_EQ(first, 3.0);  // column-major: (1,0) follows (0,0)
}

TEST(Pmds, RoundTripBitExactProperty) {
  std::mt19937_64 rng(2);
  const auto path = scratch("roundtrip.pmds");
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_snapshots(rng);
    io::write_snapshot_file(path, s);
    const auto back = io::read_snapshot_file(path);
    ASSERT_TRUE(bitwise_equal(back.data, s.data));
    ASSERT_EQ(std::memcmp(back.params.data(), s.params.data(), 8 * s.params.size()), 0);
    ASSERT_EQ(back.n_spatial, s.n_spatial);
    ASSERT_EQ(back.n_time, s.n_time);
  }
}

TEST(Pmds, CorruptFiles) {
  const auto s = generate_synthetic({}, {0.1, 0.2, 0.3});
  std::string bytes = io::encode_snapshots(s);
  std::string bad = bytes;
  bad[0] = 'X';
  expect_error(ErrorCode::BadMagic, [&] { io::decode_snapshots(bad); });
  bad = bytes;
  bad[4] = 2;
  expect_error(ErrorCode::BadVersion, [&] { io::decode_snapshots(bad); });
  expect_error(ErrorCode::TruncatedFile, [&] { io::decode_snapshots(bytes.substr(0, bytes.size() - 3)); });
  expect_error(ErrorCode::TruncatedFile, [&] { io::decode_snapshots(bytes.substr(0, 20)); });
  bad = bytes;
  const double swapped = 0.05;
  std::memcpy(bad.data() + 48, &swapped, 8);  // second parameter now below the first
  expect_error(ErrorCode::UnsortedParams, [&] { io::decode_snapshots(bad); });
  expect_error(ErrorCode::Io, [&] { io::write_snapshot_file("/nonexistent-dir/x.pmds", s); });
  expect_error(ErrorCode::Io, [&] { io::read_snapshot_file("/nonexistent-dir/x.pmds"); });
}

TEST(Csv, MatchesBinary) {
  std::mt19937_64 rng(3);
  const auto bin = scratch("eq.pmds"), csv = scratch("eq.csv");
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_snapshots(rng);
    io::write_snapshot_file(bin, s);
    io::write_snapshot_csv(csv, s);
    const auto a = io::read_snapshots(bin), b = io::read_snapshot_csv(csv, s.n_time);
    ASSERT_TRUE(bitwise_equal(a.data, b.data));
    ASSERT_EQ(a.params, b.params);
    ASSERT_EQ(a.n_spatial, b.n_spatial);
  }
  std::ofstream(csv) << "mu,0,1\n0.5,1,2\n0.25,3,4\n";
  expect_error(ErrorCode::UnsortedParams, [&] { io::read_snapshot_csv(csv); });
  std::ofstream(csv) << "mu,0,1\n0.5,1\n";
  expect_error(ErrorCode::MismatchedShape, [&] { io::read_snapshot_csv(csv); });
}

TEST(Archive, RoundTripAndErrors) {
  io::Archive a;
  a.put("m", (Matrix(2, 3) << 1, -0.0, 3, std::numeric_limits<double>::denorm_min(), 5, 6).finished());
  a.put_text("kind", "ppmd");
  const auto b = io::Archive::decode(a.encode());
  EXPECT_TRUE(bitwise_equal(b.matrix("m"), a.matrix("m")));
  EXPECT_EQ(b.text("kind"), "ppmd");
  expect_error(ErrorCode::TruncatedFile, [&] { b.matrix("missing"); });
  std::string bytes = a.encode();
  expect_error(ErrorCode::TruncatedFile, [&] { io::Archive::decode(bytes.substr(0, bytes.size() - 1)); });
  bytes[1] = 'Q';
  expect_error(ErrorCode::BadMagic, [&] { io::Archive::decode(bytes); });
  expect_error(ErrorCode::BadMagic, [&] { io::pod_gpr_from_archive(b); });
}

TEST(Archive, PodGprRoundTrip) {
  const auto s = generate_synthetic({}, linspace(0.5, 1.5, 8));
  const auto m = pod_gpr_train(s, 2);
  const auto back = io::pod_gpr_from_archive(io::Archive::decode(io::to_archive(m).encode()));
  for (double mu : {0.5, 0.73, 1.5}) EXPECT_EQ(pod_gpr_predict(back, mu), pod_gpr_predict(m, mu));
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST(Config, ParsesAndRejectsUnknownKeys) {
  const auto c = parse_run_config(nlohmann::json::parse(R"({
    "method": "pod_gpr", "truncation": {"rank": 3}, "r_nl": 4, "k_neighbors": 5,
    "spline": {"alphas": [1e-6, 1e-2], "folds": 4, "knots": {"strategy": "uniform", "breakpoints": 7}},
    "tuning": null, "lifting": {"degree": 3, "offset": 0.5, "ridge": 1e-9}, "gpr": {"rank": 3}
  })"));
  EXPECT_EQ(c.method, Method::PodGpr);
  EXPECT_EQ(std::get<ExplicitRank>(c.ppmd.truncation).rank, 3);
  EXPECT_EQ(c.ppmd.k_neighbors, 5);
  EXPECT_FALSE(c.ppmd.tuning.has_value());
  EXPECT_EQ(c.ppmd.spline.knots.strategy, KnotStrategy::Uniform);
  EXPECT_EQ(c.ppmd.lifting.degree, 3);
  EXPECT_EQ(c.temporal.r_nl, 4);

  for (const char* bad : {R"({"bogus": 1})", R"({"spline": {"folds": 3, "extra": 0}})", R"({"r_nl": "two"})",
                          R"({"truncation": {"rank": 2, "epsilon": 0.1}})", R"({"method": "svm"})",
                          R"({"predicted_weight": 1.5})", R"([1, 2])"}) {
    try {
      parse_run_config(nlohmann::json::parse(bad));
      ADD_FAILURE() << "accepted " << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.category(), ErrorCategory::Config) << bad;
    }
  }
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

TEST(Cli, EndToEnd) {
  const auto data = scratch("cli_train.pmds"), test = scratch("cli_test.pmds");
  const auto model = scratch("cli.model"), gpr = scratch("cli_gpr.model"), report = scratch("cli_report.csv");
  ASSERT_EQ(run_cli("generate --family separable --count 12 --out " + data.string()), 0);
  ASSERT_EQ(run_cli("generate --family separable --count 5 --mu-min 0.6 --mu-max 1.4 --out " + test.string()), 0);
  ASSERT_EQ(run_cli("train --input " + data.string() + " --rank 2 --out " + model.string()), 0);
  ASSERT_EQ(run_cli("train --method pod_gpr --input " + data.string() + " --rank 2 --out " + gpr.string()), 0);
  EXPECT_EQ(run_cli("predict --model " + model.string() + " --param 0.9"), 0);
  EXPECT_EQ(run_cli("evaluate --model " + model.string() + " --test " + test.string() + " --out " + report.string()), 0);
  const std::string csv = slurp(report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "type,parameter,rank,method,mse,rel");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_EQ(run_cli("compare --model-a " + model.string() + " --model-b " + gpr.string() + " --test " + test.string() +
                    " --out " + report.string()),
            0);
  const std::string both = slurp(report);
  EXPECT_NE(both.find("POD+GPR"), std::string::npos);
  EXPECT_NE(both.find("PPMD"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  const auto cfg = scratch("bad.json"), model = scratch("ok.model"), data = scratch("ok.pmds");
  std::ofstream(cfg) << R"({"unknown_key": true})";
  EXPECT_EQ(run_cli("--config " + cfg.string() + " rate-check"), 2);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  EXPECT_EQ(run_cli("train --input /nonexistent.pmds --out " + model.string()), 3);
  ASSERT_EQ(run_cli("generate --count 6 --out " + data.string()), 0);
  ASSERT_EQ(run_cli("train --input " + data.string() + " --rank 2 --out " + model.string()), 0);
  EXPECT_EQ(run_cli("predict --model " + model.string() + " --param 7.0"), 3);
  EXPECT_EQ(run_cli("--extrapolate predict --model " + model.string() + " --param 7.0"), 0);
  // A degenerate distribution has no defined slope: numerical failure.
  std::ofstream(cfg) << R"({"rate": {"amplitude": 0.0, "sample_sizes": [10, 20], "trials": 1}})";
  EXPECT_EQ(run_cli("--config " + cfg.string() + " rate-check"), 4);
}
