#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppmd/baseline.hpp"
#include "ppmd/io.hpp"
#include "ppmd/pipeline.hpp"
#include "ppmd/temporal_pmd.hpp"

namespace ppmd {

enum class Method { Ppmd, TemporalPmd, PodGpr };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Ppmd: return "ppmd";
    case Method::TemporalPmd: return "pmd";
    case Method::PodGpr: return "pod_gpr";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "ppmd") return Method::Ppmd;
  if (s == "pmd") return Method::TemporalPmd;
  if (s == "pod_gpr") return Method::PodGpr;
  fail(ErrorCode::Config, "unknown method '" + s + "' (expected ppmd, pmd or pod_gpr)");
}

struct GenerateConfig {
  Family family = Family::Separable;
  std::size_t n_spatial = 40;
  std::size_t n_time = 10;
  double mu_min = 0.5;
  double mu_max = 1.5;
  std::size_t count = 30;
};

/// Everything a CLI run can be configured with. Paths are optional so flags can fill them in.
struct RunConfig {
  Method method = Method::Ppmd;
  std::optional<std::string> input;
  std::optional<std::string> output;
  std::optional<std::string> test;
  int test_every = 0;  // hold out every k-th training column for evaluation; 0 disables
  std::uint64_t seed = 0;
  std::size_t csv_n_time = 1;

  PpmdConfig ppmd;
  TemporalPmdConfig temporal;
  Eigen::Index gpr_rank = 2;
  GprOptions gpr;
  GenerateConfig generate;
  CovarianceExperiment rate;
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  require(j.is_object(), ErrorCode::Config, where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    require(ok.count(key) > 0, ErrorCode::Config, "unknown key '" + key + "' in " + where);
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::Config, "bad value for '" + std::string(key) + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

template <class T>
void read(const json& j, const char* key, std::optional<T>& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null())
    out.reset();
  else
    out = get<T>(j, key, where);
}

inline void read_truncation(const json& j, TruncationCriterion& out, const std::string& where) {
  check_keys(j, where, {"epsilon", "rank"});
  require(j.size() == 1, ErrorCode::Config, where + " needs exactly one of 'epsilon' or 'rank'");
  if (j.contains("epsilon"))
    out = EnergyTolerance{get<double>(j, "epsilon", where)};
  else
    out = ExplicitRank{get<Eigen::Index>(j, "rank", where)};
}

inline void read_kernel(const json& j, PolyKernelParams& out, const std::string& where) {
  check_keys(j, where, {"degree", "offset", "ridge"});
  read(j, "degree", out.degree, where);
  read(j, "offset", out.offset, where);
  read(j, "ridge", out.ridge, where);
}

inline void read_spline(const json& j, SplineCvConfig& out, const std::string& where) {
  check_keys(j, where, {"alphas", "folds", "knots"});
  read(j, "alphas", out.alphas, where);
  read(j, "folds", out.folds, where);
  if (j.contains("knots")) {
    const json& k = j["knots"];
    check_keys(k, where + ".knots", {"strategy", "breakpoints"});
    if (k.contains("strategy")) {
      const auto s = get<std::string>(k, "strategy", where + ".knots");
      if (s == "samples")
        out.knots.strategy = KnotStrategy::AtSamples;
      else if (s == "uniform")
        out.knots.strategy = KnotStrategy::Uniform;
      else
        fail(ErrorCode::Config, "knot strategy must be 'samples' or 'uniform'");
    }
    read(k, "breakpoints", out.knots.breakpoints, where + ".knots");
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using namespace detail;
  check_keys(j, "config",
             {"method", "input", "output", "test", "test_every", "seed", "csv_n_time", "truncation", "r_nl",
              "k_neighbors", "diffusion_power", "bandwidth", "forecast_steps", "latent_krr", "tuning",
              "refresh_period", "spline", "predicted_weight", "lifting", "temporal", "gpr", "generate", "rate"});
  RunConfig c;
  if (j.contains("method")) c.method = parse_method(get<std::string>(j, "method", "config"));
  read(j, "input", c.input, "config");
  read(j, "output", c.output, "config");
  read(j, "test", c.test, "config");
  read(j, "test_every", c.test_every, "config");
  read(j, "seed", c.seed, "config");
  read(j, "csv_n_time", c.csv_n_time, "config");

  auto& p = c.ppmd;
  if (j.contains("truncation")) read_truncation(j["truncation"], p.truncation, "truncation");
  read(j, "r_nl", p.r_nl, "config");
  read(j, "k_neighbors", p.k_neighbors, "config");
  read(j, "diffusion_power", p.diffusion_power, "config");
  read(j, "bandwidth", p.bandwidth, "config");
  read(j, "forecast_steps", p.forecast_steps, "config");
  if (j.contains("latent_krr")) read_kernel(j["latent_krr"], p.latent_krr, "latent_krr");
  if (j.contains("tuning")) {
    const auto& t = j["tuning"];
    if (t.is_null()) {
      p.tuning.reset();
    } else {
      check_keys(t, "tuning", {"degrees", "offsets", "ridges"});
      TuningGrid g;
      read(t, "degrees", g.degrees, "tuning");
      read(t, "offsets", g.offsets, "tuning");
      read(t, "ridges", g.ridges, "tuning");
      p.tuning = g;
    }
  }
  read(j, "refresh_period", p.refresh_period, "config");
  if (j.contains("spline")) read_spline(j["spline"], p.spline, "spline");
  read(j, "predicted_weight", p.predicted_weight, "config");
  if (j.contains("lifting")) read_kernel(j["lifting"], p.lifting, "lifting");

  auto& t = c.temporal;
  t.truncation = p.truncation;
  t.r_nl = p.r_nl;
  t.k_neighbors = p.k_neighbors;
  t.diffusion_power = p.diffusion_power;
  t.bandwidth = p.bandwidth;
  if (j.contains("temporal")) {
    const auto& tj = j["temporal"];
    check_keys(tj, "temporal", {"linear_ridge", "manifold_ridge", "harmonic_floor", "lifting"});
    read(tj, "linear_ridge", t.linear_ridge, "temporal");
    read(tj, "manifold_ridge", t.manifold_ridge, "temporal");
    read(tj, "harmonic_floor", t.harmonic_floor, "temporal");
    if (tj.contains("lifting")) read_kernel(tj["lifting"], t.lifting, "temporal.lifting");
  }

  if (j.contains("gpr")) {
    const auto& g = j["gpr"];
    check_keys(g, "gpr", {"rank", "jitter", "optimize_length_scale", "length_scale_factors"});
    read(g, "rank", c.gpr_rank, "gpr");
    read(g, "jitter", c.gpr.jitter, "gpr");
    read(g, "optimize_length_scale", c.gpr.optimize_length_scale, "gpr");
    read(g, "length_scale_factors", c.gpr.length_scale_factors, "gpr");
  }

  if (j.contains("generate")) {
    const auto& g = j["generate"];
    check_keys(g, "generate", {"family", "n_spatial", "n_time", "mu_min", "mu_max", "count"});
    if (g.contains("family")) {
      const auto f = get<std::string>(g, "family", "generate");
      if (f == "separable")
        c.generate.family = Family::Separable;
      else if (f == "traveling")
        c.generate.family = Family::Traveling;
      else
        fail(ErrorCode::Config, "family must be 'separable' or 'traveling'");
    }
    read(g, "n_spatial", c.generate.n_spatial, "generate");
    read(g, "n_time", c.generate.n_time, "generate");
    read(g, "mu_min", c.generate.mu_min, "generate");
    read(g, "mu_max", c.generate.mu_max, "generate");
    read(g, "count", c.generate.count, "generate");
  }

  if (j.contains("rate")) {
    const auto& r = j["rate"];
    check_keys(r, "rate", {"dim", "sample_sizes", "trials", "amplitude"});
    read(r, "dim", c.rate.dim, "rate");
    read(r, "sample_sizes", c.rate.sample_sizes, "rate");
    read(r, "trials", c.rate.trials, "rate");
    read(r, "amplitude", c.rate.amplitude, "rate");
  }

  require(p.r_nl >= 1, ErrorCode::Config, "r_nl must be positive");
  require(p.diffusion_power >= 1, ErrorCode::Config, "diffusion_power must be positive");
  require(p.refresh_period >= 0 && p.forecast_steps >= 0 && c.test_every >= 0, ErrorCode::Config,
          "step counts must be nonnegative");
  require(p.predicted_weight > 0.0 && p.predicted_weight <= 1.0, ErrorCode::Config,
          "predicted_weight must lie in (0, 1]");
  require(p.spline.folds >= 2, ErrorCode::Config, "spline.folds must be at least 2");
  require(c.csv_n_time >= 1, ErrorCode::Config, "csv_n_time must be positive");
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Config, "config is not valid JSON: " + std::string(e.what()));
  }
  return parse_run_config(j);
}

}  // namespace ppmd
