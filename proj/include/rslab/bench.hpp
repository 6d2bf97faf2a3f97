#pragma once

// Experiment driver behind the bench-cli tool: JSON configs, the four
// experiment kinds, and CSV/JSON result tables. See configs/README.md for the
// config schema.

#include <Eigen/Core>
#include <json.hpp>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "rslab/diagnostics.hpp"
#include "rslab/errors.hpp"
#include "rslab/lgssm.hpp"
#include "rslab/parallel.hpp"
#include "rslab/schemes.hpp"
#include "rslab/smc.hpp"

namespace rslab::bench {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config

struct SystemsConfig {
  std::size_t count = 5;
  std::size_t particles = 16;
  double spread = 2.5;  // raw weights exp(spread * U)
};

struct FamilyConfig {
  std::string kind = "gaussian";  // gaussian | uniform
  std::size_t dim = 1;
  double observation = 0.5;
  double scale = 1.0;
};

struct ModelConfig {
  std::string kind;  // guided | bootstrap; empty picks the experiment default
  std::size_t dim = 5;
  std::size_t horizon = 50;
  double alpha = 0.4;
  std::optional<std::string> observations;
};

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::vector<Scheme> schemes;
  std::vector<std::string> scheme_names;
  std::size_t replicates = 1000;
  std::vector<std::size_t> n_grid;
  std::optional<std::vector<double>> weights;
  SystemsConfig systems;
  FamilyConfig family;
  std::vector<std::string> test_functions{"identity"};
  ModelConfig model;
  std::vector<std::size_t> record_times;
  bool emit_replicates = false;
  std::optional<std::string> output_dir;
  std::string format = "csv";
  std::string source;  // raw config text
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds{"diagnose", "rate", "pf-variance", "pf-oracle"};
  return kinds;
}

namespace detail {

[[noreturn]] inline void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::ConfigError, (path.empty() ? std::string("<root>") : path) + ": " + what);
}

// Reads fields of one JSON object and rejects the ones nobody asked for.
class FieldReader {
 public:
  FieldReader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) config_error(path_, "expected an object");
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  template <typename T>
  std::optional<T> get(const std::string& key) {
    const Json* v = find(key);
    if (!v) return std::nullopt;
    return convert<T>(*v, child(key));
  }

  template <typename T>
  T require(const std::string& key) {
    auto v = get<T>(key);
    if (!v) config_error(child(key), "required field is missing");
    return *v;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items())
      if (!seen_.count(key)) config_error(child(key), "unknown field");
  }

  template <typename T>
  static T convert(const Json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) config_error(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) config_error(path, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) config_error(path, "expected a number");
      return v.get<double>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        config_error(path, "expected a nonnegative integer");
      return static_cast<T>(v.get<std::uint64_t>());
    } else {
      if (!v.is_array()) config_error(path, "expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

 private:
  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require_at_least(std::size_t value, std::size_t minimum, const std::string& path) {
  if (value < minimum) config_error(path, "must be >= " + std::to_string(minimum));
}

inline void require_increasing(const std::vector<std::size_t>& v, const std::string& path) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    require_at_least(v[i], 1, path + "[" + std::to_string(i) + "]");
    if (i > 0 && v[i] <= v[i - 1]) config_error(path, "values must be strictly increasing");
  }
}

}  // namespace detail

/// Test functions on a state row, by config name.
inline StateFunction test_function(const std::string& name) {
  if (name == "identity") return [](Eigen::Ref<const Eigen::RowVectorXd> x) { return x(0); };
  if (name == "square") return [](Eigen::Ref<const Eigen::RowVectorXd> x) { return x(0) * x(0); };
  if (name == "tanh") return [](Eigen::Ref<const Eigen::RowVectorXd> x) { return std::tanh(x(0)); };
  if (name == "sin") return [](Eigen::Ref<const Eigen::RowVectorXd> x) { return std::sin(x(0)); };
  if (name == "l1_half") return [](Eigen::Ref<const Eigen::RowVectorXd> x) { return 0.5 * x.cwiseAbs().sum(); };
  if (name == "mean") return [](Eigen::Ref<const Eigen::RowVectorXd> x) { return x.mean(); };
  throw Error(ErrorCode::ConfigError, "unknown test function '" + name + "'");
}

inline ExperimentConfig parse_config(const std::string& text, const std::string& subcommand = "") {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  cfg.source = text;
  detail::FieldReader r(root, "");

  const auto experiment = r.get<std::string>("experiment");
  if (experiment && !subcommand.empty() && *experiment != subcommand)
    detail::config_error("experiment", "'" + *experiment + "' does not match subcommand '" + subcommand + "'");
  cfg.experiment = experiment ? *experiment : subcommand;
  if (std::find(experiment_kinds().begin(), experiment_kinds().end(), cfg.experiment) == experiment_kinds().end())
    detail::config_error("experiment", "unknown experiment '" + cfg.experiment + "'");

  cfg.seed = r.require<std::uint64_t>("seed");
  cfg.scheme_names = r.require<std::vector<std::string>>("schemes");
  if (cfg.scheme_names.empty()) detail::config_error("schemes", "at least one scheme is required");
  for (std::size_t i = 0; i < cfg.scheme_names.size(); ++i) {
    try {
      cfg.schemes.push_back(Scheme::parse(cfg.scheme_names[i]));
    } catch (const Error& e) {
      detail::config_error("schemes[" + std::to_string(i) + "]", e.what());
    }
  }
  if (auto v = r.get<std::size_t>("replicates")) cfg.replicates = *v;
  detail::require_at_least(cfg.replicates, 2, "replicates");
  if (auto v = r.get<std::vector<std::size_t>>("n_grid")) cfg.n_grid = *v;
  detail::require_increasing(cfg.n_grid, "n_grid");
  cfg.weights = r.get<std::vector<double>>("weights");
  if (const Json* s = r.find("random_systems")) {
    detail::FieldReader sr(*s, "random_systems");
    if (auto v = sr.get<std::size_t>("count")) cfg.systems.count = *v;
    if (auto v = sr.get<std::size_t>("particles")) cfg.systems.particles = *v;
    if (auto v = sr.get<double>("spread")) cfg.systems.spread = *v;
    sr.finish();
    detail::require_at_least(cfg.systems.count, 1, "random_systems.count");
    detail::require_at_least(cfg.systems.particles, 1, "random_systems.particles");
  }
  if (const Json* f = r.find("family")) {
    detail::FieldReader fr(*f, "family");
    if (auto v = fr.get<std::string>("kind")) cfg.family.kind = *v;
    if (auto v = fr.get<std::size_t>("dim")) cfg.family.dim = *v;
    if (auto v = fr.get<double>("observation")) cfg.family.observation = *v;
    if (auto v = fr.get<double>("scale")) cfg.family.scale = *v;
    fr.finish();
    if (cfg.family.kind != "gaussian" && cfg.family.kind != "uniform")
      detail::config_error("family.kind", "expected 'gaussian' or 'uniform'");
    detail::require_at_least(cfg.family.dim, 1, "family.dim");
    if (!(cfg.family.scale > 0.0)) detail::config_error("family.scale", "must be > 0");
  }
  if (auto v = r.get<std::vector<std::string>>("test_functions")) cfg.test_functions = *v;
  for (std::size_t i = 0; i < cfg.test_functions.size(); ++i) {
    try {
      test_function(cfg.test_functions[i]);
    } catch (const Error& e) {
      detail::config_error("test_functions[" + std::to_string(i) + "]", e.what());
    }
  }
  if (const Json* m = r.find("model")) {
    detail::FieldReader mr(*m, "model");
    if (auto v = mr.get<std::string>("kind")) cfg.model.kind = *v;
    if (auto v = mr.get<std::size_t>("dim")) cfg.model.dim = *v;
    if (auto v = mr.get<std::size_t>("horizon")) cfg.model.horizon = *v;
    if (auto v = mr.get<double>("alpha")) cfg.model.alpha = *v;
    cfg.model.observations = mr.get<std::string>("observations");
    mr.finish();
    if (!cfg.model.kind.empty() && cfg.model.kind != "guided" && cfg.model.kind != "bootstrap")
      detail::config_error("model.kind", "expected 'guided' or 'bootstrap'");
    detail::require_at_least(cfg.model.dim, 1, "model.dim");
    detail::require_at_least(cfg.model.horizon, 1, "model.horizon");
    try {
      LgssmParams::make(cfg.model.dim, cfg.model.horizon, cfg.model.alpha);
    } catch (const Error& e) {
      detail::config_error("model.alpha", e.what());
    }
  }
  if (auto v = r.get<std::vector<std::size_t>>("record_times")) cfg.record_times = *v;
  detail::require_increasing(cfg.record_times, "record_times");
  if (!cfg.record_times.empty() && cfg.record_times.back() > cfg.model.horizon)
    detail::config_error("record_times", "time exceeds model.horizon");
  if (auto v = r.get<bool>("emit_replicates")) cfg.emit_replicates = *v;
  if (const Json* o = r.find("output")) {
    detail::FieldReader orr(*o, "output");
    cfg.output_dir = orr.get<std::string>("dir");
    if (auto v = orr.get<std::string>("format")) cfg.format = *v;
    orr.finish();
    if (cfg.format != "csv" && cfg.format != "json") detail::config_error("output.format", "expected csv or json");
  }
  r.finish();

  if (cfg.experiment == "diagnose") {
    if (cfg.weights) {
      if (cfg.weights->empty()) detail::config_error("weights", "must not be empty");
      try {
        check_weights(*cfg.weights);
      } catch (const Error& e) {
        detail::config_error("weights", e.what());
      }
    }
  } else {
    if (cfg.n_grid.empty()) detail::config_error("n_grid", "required for " + cfg.experiment);
  }
  if (cfg.experiment == "rate") {
    if (cfg.n_grid.size() < 4) detail::config_error("n_grid", "rate fits need at least 4 grid points");
    if (cfg.test_functions.empty()) detail::config_error("test_functions", "at least one is required");
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path, const std::string& subcommand = "") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), subcommand);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Results

struct ResultRow {
  std::string experiment;
  std::string scheme;
  std::size_t n = 0;
  std::string aggregate = "all";  // "all" or "rep<r>"
  std::string metric;
  double value = 0.0;
  std::optional<double> se;
  std::uint64_t seed = 0;

  auto key() const { return std::tie(experiment, scheme, n, aggregate, metric); }
};

inline void sort_rows(std::vector<ResultRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) { return a.key() < b.key(); });
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::string to_csv(const std::vector<ResultRow>& rows) {
  std::string out = "experiment,scheme,N,aggregate,metric,value,se,seed\n";
  for (const auto& r : rows) {
    out += csv_field(r.experiment) + ',' + csv_field(r.scheme) + ',' + std::to_string(r.n) + ',' +
           csv_field(r.aggregate) + ',' + csv_field(r.metric) + ',' + format_double(r.value) + ',' +
           (r.se ? format_double(*r.se) : std::string()) + ',' + std::to_string(r.seed) + '\n';
  }
  return out;
}

inline std::string to_json(const std::vector<ResultRow>& rows) {
  // Values are written through %.17g so that output bytes do not depend on the
  // JSON library's float printer.
  std::string out = "[\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    auto number = [](double v) { return std::isfinite(v) ? format_double(v) : std::string("null"); };
    out += "  {\"experiment\": " + Json(r.experiment).dump() + ", \"scheme\": " + Json(r.scheme).dump() +
           ", \"N\": " + std::to_string(r.n) + ", \"aggregate\": " + Json(r.aggregate).dump() +
           ", \"metric\": " + Json(r.metric).dump() + ", \"value\": " + number(r.value) +
           ", \"se\": " + (r.se ? number(*r.se) : std::string("null")) + ", \"seed\": " + std::to_string(r.seed) +
           "}" + (i + 1 < rows.size() ? ",\n" : "\n");
  }
  return out + "]\n";
}

inline std::string meta_json(const ExperimentConfig& cfg) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016" PRIx64, fnv1a64(cfg.source));
  Json meta;
  meta["experiment"] = cfg.experiment;
  meta["config_hash"] = std::string("fnv1a64:") + hash;
  meta["seed"] = cfg.seed;
  meta["schemes"] = cfg.scheme_names;
  meta["format"] = cfg.format;
  meta["versions"] = {
      {"rslab", kVersion},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"compiler", __VERSION__},
  };
  return meta.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Experiments

namespace detail {

inline constexpr std::uint64_t kSystemTag = 0x73797374ULL;  // "syst"
inline constexpr std::uint64_t kFamilyTag = 0x66616d69ULL;  // "fami"
inline constexpr std::uint64_t kDataTag = 0x64617461ULL;    // "data"

struct RowSink {
  const ExperimentConfig& cfg;
  std::vector<ResultRow> rows;

  void add(const std::string& scheme, std::size_t n, const std::string& metric, double value,
           std::optional<double> se = std::nullopt, const std::string& aggregate = "all") {
    rows.push_back({cfg.experiment, scheme, n, aggregate, metric, value, se, cfg.seed});
  }
};

struct SampleStats {
  double mean = 0.0;
  double var = 0.0;
  double se_mean = 0.0;
  double se_var = 0.0;
};

inline SampleStats sample_stats(std::span<const double> v) {
  const double r = static_cast<double>(v.size());
  SampleStats s;
  for (double x : v) s.mean += x;
  s.mean /= r;
  for (double x : v) s.var += (x - s.mean) * (x - s.mean);
  s.var /= r - 1.0;
  s.se_mean = std::sqrt(s.var / r);
  s.se_var = s.var * std::sqrt(2.0 / (r - 1.0));
  return s;
}

inline std::vector<WeightedParticleSystem> diagnose_systems(const ExperimentConfig& cfg) {
  std::vector<WeightedParticleSystem> out;
  if (cfg.weights) {
    out.push_back(WeightedParticleSystem::weights_only(*cfg.weights));
    return out;
  }
  for (std::size_t k = 0; k < cfg.systems.count; ++k) {
    auto s = UniformStream::substream(cfg.seed, kSystemTag, k);
    std::vector<double> w(cfg.systems.particles);
    for (auto& x : w) x = std::exp(cfg.systems.spread * s.next());
    out.push_back(WeightedParticleSystem::weights_only(w));
  }
  return out;
}

}  // namespace detail

/// Random weighted system of size n for rate fits: X ~ N(0, I) (gaussian) or
/// U(0,1)^d (uniform), weights exp(-|x - y 1|^2 / (2 scale^2)).
inline WeightedParticleSystem rate_family_member(const FamilyConfig& family, std::uint64_t seed, std::size_t n) {
  const auto d = static_cast<Eigen::Index>(family.dim);
  StateMatrix x(static_cast<Eigen::Index>(n), d);
  std::vector<double> log_w(n);
  if (family.kind == "gaussian") {
    Normals normals(UniformStream::substream(seed, detail::kFamilyTag, n));
    rslab::detail::fill_standard_normal(x, normals);
  } else {
    auto u = UniformStream::substream(seed, detail::kFamilyTag, n);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < d; ++j) x(i, j) = u.next();
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    log_w[static_cast<std::size_t>(i)] =
        -0.5 * (x.row(i).array() - family.observation).square().sum() / (family.scale * family.scale);
  return WeightedParticleSystem::from_log_weights(std::move(x), log_w);
}

inline Ordering rate_family_ordering(const FamilyConfig& family) {
  if (family.kind == "uniform")
    return {CubifyingMap::unit_cube(family.dim), HilbertCodec(static_cast<unsigned>(family.dim))};
  return Ordering::real_line(family.dim);
}

inline std::vector<ResultRow> run_diagnose(const ExperimentConfig& cfg, unsigned jobs = 1) {
  detail::RowSink sink{cfg, {}};
  const auto systems = detail::diagnose_systems(cfg);
  for (std::size_t k = 0; k < systems.size(); ++k) {
    const auto& sys = systems[k];
    const std::string prefix = cfg.weights ? "" : "sys" + std::to_string(k + 1) + "_";
    const std::size_t n = sys.size();
    for (std::size_t s = 0; s < cfg.schemes.size(); ++s) {
      const std::string& name = cfg.scheme_names[s];
      const auto counts = replicate_counts(cfg.schemes[s], sys, cfg.replicates, derive_key(cfg.seed, k), jobs);
      const auto m = moments_from_counts(counts, sys);
      const auto cov = covariance_from_counts(counts);
      for (std::size_t i = 0; i < n; ++i) {
        const std::string idx = std::to_string(i + 1);
        sink.add(name, n, prefix + "expected_count_" + idx, m.expected[i]);
        sink.add(name, n, prefix + "mean_count_" + idx, m.mean_counts[i], m.se_counts[i]);
        sink.add(name, n, prefix + "mean_deviation_" + idx, m.mean_deviation[i], m.se_counts[i]);
        sink.add(name, n, prefix + "var_count_" + idx, m.var_counts[i]);
        for (std::size_t j = i + 1; j < n; ++j)
          sink.add(name, n, prefix + "cov_" + idx + "_" + std::to_string(j + 1), cov.covariance(i, j),
                   cov.standard_error(i, j));
      }
      sink.add(name, n, prefix + "max_abs_deviation", m.max_abs_deviation);
      sink.add(name, n, prefix + "support_violations", static_cast<double>(m.draws_outside_floor_ceil));
    }
  }
  sort_rows(sink.rows);
  return sink.rows;
}

inline std::vector<ResultRow> run_rate(const ExperimentConfig& cfg, unsigned jobs = 1) {
  detail::RowSink sink{cfg, {}};
  const Ordering ordering = rate_family_ordering(cfg.family);
  const SystemFamily family = [&](std::size_t n) { return rate_family_member(cfg.family, cfg.seed, n); };
  for (std::size_t s = 0; s < cfg.schemes.size(); ++s) {
    for (const auto& phi_name : cfg.test_functions) {
      const auto phi = test_function(phi_name);
      const auto fit = variance_rate_fit(cfg.schemes[s], family, phi, cfg.n_grid, cfg.replicates, cfg.seed, jobs,
                                         &ordering);
      const std::string& name = cfg.scheme_names[s];
      for (std::size_t i = 0; i < fit.n_grid.size(); ++i)
        sink.add(name, fit.n_grid[i], "variance_" + phi_name, fit.variance[i], fit.variance_se[i]);
      sink.add(name, 0, "slope_" + phi_name, fit.slope, fit.slope_se);
      sink.add(name, 0, "intercept_" + phi_name, fit.intercept);
      sink.add(name, 0, "degenerate_points_" + phi_name, static_cast<double>(fit.degenerate.size()));
    }
  }
  sort_rows(sink.rows);
  return sink.rows;
}

struct PfSetup {
  LgssmParams params;
  StateMatrix observations;
  FeynmanKacModel fk;
};

inline PfSetup pf_setup(const ExperimentConfig& cfg, const std::string& default_kind) {
  const auto params = LgssmParams::make(cfg.model.dim, cfg.model.horizon, cfg.model.alpha);
  StateMatrix y;
  if (cfg.model.observations) {
    y = load_observations_csv(*cfg.model.observations);
    if (static_cast<std::size_t>(y.rows()) != params.horizon || static_cast<std::size_t>(y.cols()) != params.dim)
      throw Error(ErrorCode::ConfigError, "model.observations: expected " + std::to_string(params.horizon) + " rows of " +
                                              std::to_string(params.dim) + " columns");
  } else {
    y = simulate_lgssm(params, UniformStream::substream(cfg.seed, detail::kDataTag, 0)).observations;
  }
  const std::string kind = cfg.model.kind.empty() ? default_kind : cfg.model.kind;
  auto fk = kind == "bootstrap" ? make_bootstrap_fk(params, y) : make_guided_fk(params, y);
  return {params, std::move(y), std::move(fk)};
}

/// Log-likelihood paths log L_t^N (t = 0..T) of R runs; run r uses seed
/// derive_key(seed, r) for every scheme.
inline std::vector<std::vector<double>> pf_runs(const FeynmanKacModel& fk, const Scheme& scheme, std::size_t n,
                                                std::size_t runs, std::uint64_t seed, unsigned jobs) {
  std::vector<std::vector<double>> out(runs);
  parallel_for(runs, jobs, [&](std::size_t r) {
    out[r] = particle_filter(fk, n, scheme, derive_key(seed, r)).log_likelihood;
  });
  return out;
}

inline std::vector<ResultRow> run_pf_variance(const ExperimentConfig& cfg, unsigned jobs = 1) {
  detail::RowSink sink{cfg, {}};
  const auto setup = pf_setup(cfg, "guided");
  std::vector<std::size_t> times = cfg.record_times;
  if (times.empty())
    for (std::size_t t = 1; t <= cfg.model.horizon; ++t) times.push_back(t);

  for (std::size_t n : cfg.n_grid) {
    // var[s][k] = variance of log L at times[k] under scheme s
    std::vector<std::vector<detail::SampleStats>> stats(cfg.schemes.size());
    for (std::size_t s = 0; s < cfg.schemes.size(); ++s) {
      const auto paths = pf_runs(setup.fk, cfg.schemes[s], n, cfg.replicates, cfg.seed, jobs);
      const std::string& name = cfg.scheme_names[s];
      for (std::size_t t : times) {
        std::vector<double> v(cfg.replicates);
        for (std::size_t r = 0; r < cfg.replicates; ++r) v[r] = paths[r][t];
        const auto st = detail::sample_stats(v);
        stats[s].push_back(st);
        const std::string ts = "_t" + std::to_string(t);
        sink.add(name, n, "mean_loglik" + ts, st.mean, st.se_mean);
        sink.add(name, n, "var_loglik" + ts, st.var, st.se_var);
      }
      if (cfg.emit_replicates)
        for (std::size_t r = 0; r < cfg.replicates; ++r)
          sink.add(name, n, "loglik_t" + std::to_string(cfg.model.horizon), paths[r].back(), std::nullopt,
                   "rep" + std::to_string(r));
    }
    // Ratio var(a)/var(b); SE by the delta method, treating the two variance
    // estimates as independent.
    for (std::size_t a = 0; a < cfg.schemes.size(); ++a)
      for (std::size_t b = 0; b < cfg.schemes.size(); ++b) {
        if (a == b) continue;
        for (std::size_t k = 0; k < times.size(); ++k) {
          const auto& sa = stats[a][k];
          const auto& sb = stats[b][k];
          const double ratio = sa.var / sb.var;
          const double se = ratio * std::hypot(sa.se_var / sa.var, sb.se_var / sb.var);
          sink.add(cfg.scheme_names[a] + "/" + cfg.scheme_names[b], n, "var_ratio_t" + std::to_string(times[k]),
                   ratio, std::isfinite(se) ? std::optional<double>(se) : std::nullopt);
        }
      }
  }
  sort_rows(sink.rows);
  return sink.rows;
}

inline std::vector<ResultRow> run_pf_oracle(const ExperimentConfig& cfg, unsigned jobs = 1) {
  detail::RowSink sink{cfg, {}};
  const auto setup = pf_setup(cfg, "bootstrap");
  const double exact = kalman_loglik(setup.params, setup.observations).log_likelihood;
  sink.add("kalman", 0, "loglik", exact);
  for (std::size_t n : cfg.n_grid) {
    for (std::size_t s = 0; s < cfg.schemes.size(); ++s) {
      const auto paths = pf_runs(setup.fk, cfg.schemes[s], n, cfg.replicates, cfg.seed, jobs);
      std::vector<double> loglik(cfg.replicates);
      std::vector<double> ratio(cfg.replicates);
      std::vector<double> sq_err(cfg.replicates);
      for (std::size_t r = 0; r < cfg.replicates; ++r) {
        loglik[r] = paths[r].back();
        ratio[r] = std::exp(loglik[r] - exact);
        sq_err[r] = (loglik[r] - exact) * (loglik[r] - exact);
      }
      const auto ls = detail::sample_stats(loglik);
      const auto rs = detail::sample_stats(ratio);
      const auto es = detail::sample_stats(sq_err);
      const double rmse = std::sqrt(es.mean);
      const std::string& name = cfg.scheme_names[s];
      sink.add(name, n, "mean_loglik", ls.mean, ls.se_mean);
      sink.add(name, n, "var_loglik", ls.var, ls.se_var);
      sink.add(name, n, "mean_lik_ratio", rs.mean, rs.se_mean);
      sink.add(name, n, "rmse_loglik", rmse, rmse > 0.0 ? std::optional<double>(es.se_mean / (2.0 * rmse)) : std::nullopt);
      if (cfg.emit_replicates)
        for (std::size_t r = 0; r < cfg.replicates; ++r)
          sink.add(name, n, "loglik", loglik[r], std::nullopt, "rep" + std::to_string(r));
    }
  }
  sort_rows(sink.rows);
  return sink.rows;
}

inline std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, unsigned jobs = 1) {
  if (cfg.experiment == "diagnose") return run_diagnose(cfg, jobs);
  if (cfg.experiment == "rate") return run_rate(cfg, jobs);
  if (cfg.experiment == "pf-variance") return run_pf_variance(cfg, jobs);
  if (cfg.experiment == "pf-oracle") return run_pf_oracle(cfg, jobs);
  throw Error(ErrorCode::ConfigError, "experiment: unknown kind '" + cfg.experiment + "'");
}

/// Writes results.csv (or results.json) and meta.json into `dir`.
inline void write_outputs(const ExperimentConfig& cfg, const std::vector<ResultRow>& rows,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [](const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bytes;
    if (!out) throw std::runtime_error("cannot write " + path.string());
  };
  if (cfg.format == "json") {
    write(dir / "results.json", to_json(rows));
  } else {
    write(dir / "results.csv", to_csv(rows));
  }
  write(dir / "meta.json", meta_json(cfg));
}

}  // namespace rslab::bench
