// Command-line front end: generate, train, predict, evaluate, compare, rate-check.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ppmd/ppmd.hpp"

namespace fs = std::filesystem;
using namespace ppmd;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool extrapolate = false;
};

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Numerical: return 4;
  }
  return 1;
}

void emit(const Globals& g, const std::string& text) {
  if (g.out.empty())
    std::cout << text;
  else
    io::write_file_atomic(g.out, text);
}

RunConfig load_config(const Globals& g) {
  RunConfig cfg;
  if (!g.config.empty()) {
    if (!fs::exists(g.config)) fail(ErrorCode::Config, "config file not found: " + g.config);
    cfg = load_run_config(g.config);
  }
  if (g.seed) {
    cfg.seed = *g.seed;
  }
  cfg.ppmd.spline.seed = cfg.seed;
  cfg.rate.seed = cfg.seed;
  return cfg;
}

std::string need(const std::optional<std::string>& v, const std::string& flag) {
  if (!v || v->empty()) fail(ErrorCode::Config, "missing " + flag);
  return *v;
}

bool is_csv(const std::string& path) { return fs::path(path).extension() == ".csv"; }

void save_snapshots(const std::string& path, const SnapshotMatrix& s) {
  if (is_csv(path))
    io::write_snapshot_csv(path, s);
  else
    io::write_snapshot_file(path, s);
}

/// Splits off every k-th column (k >= 2) as a held-out set.
std::pair<SnapshotMatrix, SnapshotMatrix> split_every(const SnapshotMatrix& s, int k) {
  SnapshotMatrix train = s, test = s;
  std::vector<Eigen::Index> tr, te;
  for (std::size_t j = 0; j < s.cols(); ++j) {
    const bool hold = k > 0 && j > 0 && j + 1 < s.cols() && j % static_cast<std::size_t>(k) == 0;
    (hold ? te : tr).push_back(static_cast<Eigen::Index>(j));
  }
  train.data = s.data(Eigen::all, tr);
  test.data = s.data(Eigen::all, te);
  train.params.clear();
  test.params.clear();
  for (auto j : tr) train.params.push_back(s.params[static_cast<std::size_t>(j)]);
  for (auto j : te) test.params.push_back(s.params[static_cast<std::size_t>(j)]);
  return {train, test};
}

struct LoadedModel {
  std::string kind;
  io::Archive archive;
};

LoadedModel load_model(const std::string& path) {
  auto a = io::Archive::load(path);
  return {a.text("kind"), std::move(a)};
}

MetricsReport score(const LoadedModel& m, const SnapshotMatrix& test, bool extrapolate) {
  if (m.kind == "ppmd") return evaluate(io::ppmd_from_archive(m.archive), test, extrapolate);
  if (m.kind == "pod_gpr") {
    const auto model = io::pod_gpr_from_archive(m.archive);
    return evaluate_predictor([&](double mu) { return pod_gpr_predict(model, mu); }, test, model.train_params,
                              "POD+GPR", model.basis.rank());
  }
  const auto model = io::temporal_from_archive(m.archive);
  const Matrix f = forecast_temporal(model, static_cast<int>(test.cols()));
  MetricsReport rep;
  for (std::size_t j = 0; j < test.cols(); ++j) {
    const Vector truth = test.data.col(static_cast<Eigen::Index>(j)), guess = f.col(static_cast<Eigen::Index>(j));
    rep.rows.push_back({"Prediction", static_cast<double>(j + 1), model.basis.rank(), "PMD",
                        mean_squared_error(guess, truth), relative_error(guess, truth)});
  }
  return rep;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parametric probabilistic manifold decomposition toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "Seed for fold assignment and Monte Carlo runs");
  app.add_option("--out", g.out, "Output path (stdout when omitted for text outputs)");
  app.add_flag("--extrapolate", g.extrapolate, "Allow parameters outside the trained domain");

  auto* gen = app.add_subcommand("generate", "Write a synthetic snapshot family");
  std::string family;
  std::optional<std::size_t> n_spatial, n_time, count;
  std::optional<double> mu_min, mu_max;
  gen->add_option("--family", family, "separable | traveling");
  gen->add_option("--n-spatial", n_spatial);
  gen->add_option("--n-time", n_time);
  gen->add_option("--mu-min", mu_min);
  gen->add_option("--mu-max", mu_max);
  gen->add_option("--count", count);

  auto* tr = app.add_subcommand("train", "Fit a PPMD, temporal PMD, or POD+GPR model");
  std::optional<std::string> input, method;
  std::optional<Eigen::Index> rank;
  tr->add_option("--input", input, "Snapshot file (PMDS or CSV)");
  tr->add_option("--method", method, "ppmd | pmd | pod_gpr");
  tr->add_option("--rank", rank, "Explicit linear rank");

  auto* pr = app.add_subcommand("predict", "Evaluate a trained model");
  std::string model_path;
  std::optional<double> param;
  std::optional<int> steps;
  pr->add_option("--model", model_path)->required();
  pr->add_option("--param", param, "Parameter value (ppmd, pod_gpr)");
  pr->add_option("--steps", steps, "Forecast steps (pmd)");

  auto* ev = app.add_subcommand("evaluate", "Score a model on test snapshots");
  std::optional<std::string> test_path;
  ev->add_option("--model", model_path)->required();
  ev->add_option("--test", test_path);

  auto* cmp = app.add_subcommand("compare", "Score two models on the same test snapshots");
  std::string model_a, model_b;
  cmp->add_option("--model-a", model_a)->required();
  cmp->add_option("--model-b", model_b)->required();
  cmp->add_option("--test", test_path);

  auto* rate = app.add_subcommand("rate-check", "Sample-covariance convergence experiment");
  std::optional<int> trials;
  std::optional<Eigen::Index> dim;
  rate->add_option("--trials", trials);
  rate->add_option("--dim", dim);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = load_config(g);
    if (g.out.empty() && cfg.output) g.out = *cfg.output;

    if (*gen) {
      auto& gc = cfg.generate;
      if (!family.empty()) {
        if (family == "separable")
          gc.family = Family::Separable;
        else if (family == "traveling")
          gc.family = Family::Traveling;
        else
          fail(ErrorCode::Config, "unknown family '" + family + "'");
      }
      if (n_spatial) gc.n_spatial = *n_spatial;
      if (n_time) gc.n_time = *n_time;
      if (mu_min) gc.mu_min = *mu_min;
      if (mu_max) gc.mu_max = *mu_max;
      if (count) gc.count = *count;
      require(!g.out.empty(), ErrorCode::Config, "generate needs --out");
      save_snapshots(g.out, generate_synthetic({gc.family, gc.n_spatial, gc.n_time},
                                               linspace(gc.mu_min, gc.mu_max, gc.count)));
      return 0;
    }

    if (*tr) {
      if (input) cfg.input = input;
      if (method) cfg.method = parse_method(*method);
      if (rank) {
        cfg.ppmd.truncation = ExplicitRank{*rank};
        cfg.temporal.truncation = ExplicitRank{*rank};
        cfg.gpr_rank = *rank;
      }
      require(!g.out.empty(), ErrorCode::Config, "train needs --out");
      SnapshotMatrix data = io::read_snapshots(need(cfg.input, "--input"), cfg.csv_n_time);
      if (cfg.test_every > 0) data = split_every(data, cfg.test_every).first;
      io::Archive a;
      switch (cfg.method) {
        case Method::Ppmd: {
          auto model = train(data, cfg.ppmd);
          model.provenance = "method=ppmd seed=" + std::to_string(cfg.seed);
          const auto& d = model.diagnostics;
          std::cerr << "rank " << model.basis.rank() << ", energy " << d.energy_fraction << ", residual fraction "
                    << d.residual_fraction << (d.linear_only ? " (embedding skipped)" : "") << "\n";
          a = io::to_archive(model);
          break;
        }
        case Method::TemporalPmd:
          a = io::to_archive(train_temporal(data.data, cfg.temporal));
          break;
        case Method::PodGpr:
          a = io::to_archive(pod_gpr_train(data, cfg.gpr_rank, cfg.gpr));
          break;
      }
      a.save(g.out);
      return 0;
    }

    if (*pr) {
      const auto m = load_model(model_path);
      SnapshotMatrix s;
      if (m.kind == "pmd") {
        require(steps.has_value() && *steps >= 1, ErrorCode::Config, "pmd models need --steps >= 1");
        const auto model = io::temporal_from_archive(m.archive);
        s.data = forecast_temporal(model, *steps);
        for (int j = 1; j <= *steps; ++j) s.params.push_back(j);
      } else {
        require(param.has_value(), ErrorCode::Config, "predict needs --param");
        s.params = {*param};
        s.data = m.kind == "ppmd" ? predict(io::ppmd_from_archive(m.archive), *param, g.extrapolate)
                                  : pod_gpr_predict(io::pod_gpr_from_archive(m.archive), *param);
      }
      s.n_spatial = s.rows();
      s.n_time = 1;
      if (g.out.empty()) {
        std::cout << "mu";
        for (std::size_t i = 0; i < s.rows(); ++i) std::cout << "," << i;
        std::cout << "\n";
        for (std::size_t j = 0; j < s.cols(); ++j) {
          std::cout << io::format_double(s.params[j]);
          for (std::size_t i = 0; i < s.rows(); ++i)
            std::cout << "," << io::format_double(s.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
          std::cout << "\n";
        }
      } else {
        save_snapshots(g.out, s);
      }
      return 0;
    }

    if (*ev || *cmp) {
      SnapshotMatrix test;
      if (test_path) {
        test = io::read_snapshots(*test_path, cfg.csv_n_time);
      } else if (cfg.test) {
        test = io::read_snapshots(*cfg.test, cfg.csv_n_time);
      } else {
        require(cfg.test_every > 0 && cfg.input.has_value(), ErrorCode::Config,
                "need --test, a 'test' path, or 'test_every' with 'input' in the config");
        test = split_every(io::read_snapshots(*cfg.input, cfg.csv_n_time), cfg.test_every).second;
      }
      std::vector<MetricsRow> rows;
      const std::vector<std::string> paths = *ev ? std::vector<std::string>{model_path}
                                                 : std::vector<std::string>{model_a, model_b};
      for (const auto& p : paths) {
        const auto rep = score(load_model(p), test, g.extrapolate);
        rows.insert(rows.end(), rep.rows.begin(), rep.rows.end());
      }
      emit(g, io::metrics_csv(rows));
      return 0;
    }

    if (*rate) {
      auto exp = cfg.rate;
      if (trials) exp.trials = *trials;
      if (dim) exp.dim = *dim;
      const auto res = covariance_rate_experiment(exp);
      std::string text = "n_s,mean_error\n";
      for (std::size_t i = 0; i < res.mean_errors.size(); ++i)
        text += std::to_string(exp.sample_sizes[i]) + "," + io::format_double(res.mean_errors[i]) + "\n";
      text += "slope," + io::format_double(res.slope) + "\n";
      emit(g, text);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
