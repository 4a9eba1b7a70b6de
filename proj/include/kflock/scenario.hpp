#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kflock/agent_models.hpp"
#include "kflock/diagnostics.hpp"
#include "kflock/errors.hpp"
#include "kflock/fixed_point.hpp"
#include "kflock/grid_oracle.hpp"
#include "kflock/io.hpp"
#include "kflock/kinetic_particles.hpp"
#include "kflock/phase_core.hpp"

namespace kflock {

enum class RunMode { agents, kinetic, picard, oracle };
enum class AgentModel { vicsek, cs, cutoff_cs, mt };

struct KernelSpec {
  std::string kind = "indicator";  // indicator | constant | power_law
  double beta = 0.5;
};

struct VicsekSpec {
  double speed = 0.03;
  double noise = 0.0;
};

struct PicardSpec {
  double tol = 1e-8;
  std::size_t max_iter = 50;
  double damping = 1.0;
  std::size_t time_intervals = 0;  // 0: T / dt
  std::size_t nodes_per_axis = 33;
  std::size_t substeps = 1;
};

/// Prescribed field for oracle runs: zero, constant `value`, or
/// amplitude * sin(wavenumber * x - omega * t).
struct FieldSpec {
  std::string kind = "zero";
  double value = 0.0;
  double amplitude = 0.0;
  double wavenumber = 1.0;
  double omega = 0.0;

  double operator()(double t, double x) const {
    if (kind == "constant") return value;
    if (kind == "sine") return amplitude * std::sin(wavenumber * x - omega * t);
    return 0.0;
  }
  double sup() const {
    if (kind == "constant") return std::abs(value);
    if (kind == "sine") return std::abs(amplitude);
    return 0.0;
  }
};

struct OracleSpec {
  std::size_t n_x = 128, n_v = 128;
  double x_min = -2.0, x_max = 2.0, v_max = 2.0;
  FieldSpec field;
};

struct DiagnosticsSpec {
  bool mass = true;
  bool support = true;
  std::vector<double> lp = {1.0, 2.0};
  double mass_tolerance = 1e-12;
  double support_tolerance = 1e-9;
  double lp_tolerance = 0.05;
  double oracle_mass_tolerance = 1e-3;
  bool write_snapshots = true;
};

struct ScenarioConfig {
  RunMode mode = RunMode::kinetic;
  AgentModel model = AgentModel::cutoff_cs;
  int dim = 1;
  double lambda = 1.0;
  double radius = 0.5;
  double delta = 0.0;
  double T = 1.0;
  double dt = 0.01;
  std::uint64_t seed = 1;
  std::size_t snapshot_stride = 10;
  bool allow_large_lambda_dt = false;
  InitialDistributionSpec initial;
  KernelSpec kernel;
  AgentScheme integrator = AgentScheme::rk4;
  VicsekSpec vicsek;
  PicardSpec picard;
  OracleSpec oracle;
  DiagnosticsSpec diagnostics;
  std::string output_dir = "out";
};

// ---------------------------------------------------------------------------
// Seed splitting

/// splitmix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Stream seed = splitmix64(scenario_seed XOR splitmix64(stream)).
enum class SeedStream : std::uint64_t { sampling = 1, vicsek_noise = 2, diagnostics = 3 };

inline std::uint64_t derive_seed(std::uint64_t scenario_seed, SeedStream stream) {
  return splitmix64(scenario_seed ^ splitmix64(static_cast<std::uint64_t>(stream)));
}

// ---------------------------------------------------------------------------
// Enum names

namespace detail {

template <class E>
struct EnumName {
  E value;
  const char* name;
};

inline constexpr EnumName<RunMode> mode_names[] = {
    {RunMode::agents, "agents"}, {RunMode::kinetic, "kinetic"}, {RunMode::picard, "picard"}, {RunMode::oracle, "oracle"}};
inline constexpr EnumName<AgentModel> model_names[] = {
    {AgentModel::vicsek, "vicsek"}, {AgentModel::cs, "cs"}, {AgentModel::cutoff_cs, "cutoff_cs"}, {AgentModel::mt, "mt"}};
inline constexpr EnumName<AgentScheme> scheme_names[] = {{AgentScheme::explicit_euler, "explicit_euler"},
                                                         {AgentScheme::rk4, "rk4"},
                                                         {AgentScheme::exponential, "exponential"}};
inline constexpr EnumName<DistributionKind> dist_names[] = {
    {DistributionKind::box_indicator, "box_indicator"},
    {DistributionKind::product_gaussian_truncated, "product_gaussian_truncated"},
    {DistributionKind::two_bump, "two_bump"},
    {DistributionKind::custom_grid, "custom_grid"}};
inline constexpr EnumName<SamplingKind> sampling_names[] = {{SamplingKind::tensor_grid, "tensor_grid"},
                                                            {SamplingKind::monte_carlo, "monte_carlo"}};

template <class E, std::size_t N>
const char* to_name(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  return "?";
}

template <class E, std::size_t N>
E from_name(const EnumName<E> (&table)[N], const std::string& s, const std::string& path) {
  for (const auto& e : table)
    if (s == e.name) return e.value;
  std::string allowed;
  for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
  throw ConfigError(path + ": '" + s + "' is not one of {" + allowed + "}");
}

// Strict reader over one JSON object: every key must be consumed.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double def) {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_number()) throw ConfigError(key_path(key) + ": expected a number");
    return v.get<double>();
  }

  std::size_t count(const std::string& key, std::size_t def) {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ConfigError(key_path(key) + ": expected a non-negative integer");
    return v.get<std::size_t>();
  }

  std::uint64_t u64(const std::string& key, std::uint64_t def) {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      throw ConfigError(key_path(key) + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(key_path(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_string()) throw ConfigError(key_path(key) + ": expected a string");
    return v.get<std::string>();
  }

  Vec vec(const std::string& key, const Vec& def, int dim) {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_array() || static_cast<int>(v.size()) != dim)
      throw ConfigError(key_path(key) + ": expected an array of " + std::to_string(dim) + " numbers");
    Vec out;
    for (int k = 0; k < dim; ++k) {
      if (!v[k].is_number()) throw ConfigError(key_path(key) + ": expected numbers");
      out[k] = v[k].get<double>();
    }
    return out;
  }

  std::vector<double> numbers(const std::string& key, const std::vector<double>& def) {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_array()) throw ConfigError(key_path(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(key_path(key) + ": expected numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(key_path(it.key()) + ": unknown key");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline nlohmann::json vec_json(const Vec& v, int dim) {
  auto a = nlohmann::json::array();
  for (int k = 0; k < dim; ++k) a.push_back(v[k]);
  return a;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// JSON <-> config

inline nlohmann::json to_json(const ScenarioConfig& c) {
  using nlohmann::json;
  using detail::vec_json;
  const int d = c.dim;
  const auto& s = c.initial;
  json init = {{"kind", detail::to_name(detail::dist_names, s.kind)}, {"amplitude", s.amplitude}};
  switch (s.kind) {
    case DistributionKind::box_indicator:
      init["x_lo"] = vec_json(s.x_lo, d);
      init["x_hi"] = vec_json(s.x_hi, d);
      init["v_lo"] = vec_json(s.v_lo, d);
      init["v_hi"] = vec_json(s.v_hi, d);
      break;
    case DistributionKind::product_gaussian_truncated:
      init["x_center"] = vec_json(s.x_center, d);
      init["v_center"] = vec_json(s.v_center, d);
      init["sigma_x"] = s.sigma_x;
      init["sigma_v"] = s.sigma_v;
      init["cutoff"] = s.cutoff;
      break;
    case DistributionKind::two_bump:
      init["bumps"] = json::array();
      for (const auto& b : s.bumps)
        init["bumps"].push_back(
            {{"x_center", vec_json(b.x_center, d)}, {"v_center", vec_json(b.v_center, d)}, {"weight", b.weight}});
      init["half_width_x"] = s.half_width_x;
      init["half_width_v"] = s.half_width_v;
      break;
    case DistributionKind::custom_grid:
      init["x_lo"] = vec_json(s.x_lo, d);
      init["x_hi"] = vec_json(s.x_hi, d);
      init["v_lo"] = vec_json(s.v_lo, d);
      init["v_hi"] = vec_json(s.v_hi, d);
      init["grid_n_x"] = s.grid_n_x;
      init["grid_n_v"] = s.grid_n_v;
      init["values"] = s.values;
      break;
  }
  init["sampling"] = {{"kind", detail::to_name(detail::sampling_names, s.sampling.kind)},
                      {"n_x", s.sampling.n_x},
                      {"n_v", s.sampling.n_v},
                      {"n", s.sampling.n}};

  json j = {
      {"mode", detail::to_name(detail::mode_names, c.mode)},
      {"model", detail::to_name(detail::model_names, c.model)},
      {"dim", c.dim},
      {"lambda", c.lambda},
      {"radius", c.radius},
      {"delta", c.delta},
      {"T", c.T},
      {"dt", c.dt},
      {"seed", c.seed},
      {"snapshot_stride", c.snapshot_stride},
      {"allow_large_lambda_dt", c.allow_large_lambda_dt},
      {"initial", init},
      {"kernel", {{"kind", c.kernel.kind}, {"beta", c.kernel.beta}}},
      {"integrator", detail::to_name(detail::scheme_names, c.integrator)},
      {"vicsek", {{"speed", c.vicsek.speed}, {"noise", c.vicsek.noise}}},
      {"picard",
       {{"tol", c.picard.tol},
        {"max_iter", c.picard.max_iter},
        {"damping", c.picard.damping},
        {"time_intervals", c.picard.time_intervals},
        {"nodes_per_axis", c.picard.nodes_per_axis},
        {"substeps", c.picard.substeps}}},
      {"oracle",
       {{"n_x", c.oracle.n_x},
        {"n_v", c.oracle.n_v},
        {"x_min", c.oracle.x_min},
        {"x_max", c.oracle.x_max},
        {"v_max", c.oracle.v_max},
        {"field",
         {{"kind", c.oracle.field.kind},
          {"value", c.oracle.field.value},
          {"amplitude", c.oracle.field.amplitude},
          {"wavenumber", c.oracle.field.wavenumber},
          {"omega", c.oracle.field.omega}}}}},
      {"diagnostics",
       {{"mass", c.diagnostics.mass},
        {"support", c.diagnostics.support},
        {"lp", c.diagnostics.lp},
        {"mass_tolerance", c.diagnostics.mass_tolerance},
        {"support_tolerance", c.diagnostics.support_tolerance},
        {"lp_tolerance", c.diagnostics.lp_tolerance},
        {"oracle_mass_tolerance", c.diagnostics.oracle_mass_tolerance},
        {"write_snapshots", c.diagnostics.write_snapshots}}},
      {"output_dir", c.output_dir},
  };
  return j;
}

/// Checks every cross-field constraint; throws ConfigError naming the key.
inline void validate(const ScenarioConfig& c) {
  using detail::require;
  require(c.dim >= 1 && c.dim <= 3, "dim: must be 1, 2 or 3");
  require(std::isfinite(c.lambda) && c.lambda > 0.0, "lambda: must be > 0");
  require(std::isfinite(c.radius) && c.radius > 0.0, "radius: must be > 0");
  require(std::isfinite(c.delta) && c.delta >= 0.0, "delta: must be >= 0");
  require(std::isfinite(c.T) && c.T > 0.0, "T: must be > 0");
  require(std::isfinite(c.dt) && c.dt > 0.0, "dt: must be > 0");
  require(c.snapshot_stride >= 1, "snapshot_stride: must be >= 1");
  if (c.mode != RunMode::oracle || c.lambda > 0.0)
    require(c.lambda * c.dt <= 1.0 || c.allow_large_lambda_dt,
            "dt: lambda * dt must be <= 1 (set allow_large_lambda_dt to override)");
  if (c.mode == RunMode::picard) {
    require(c.delta > 0.0, "delta: picard mode requires delta > 0");
    require(c.picard.tol > 0.0, "picard.tol: must be > 0");
    require(c.picard.max_iter >= 1, "picard.max_iter: must be >= 1");
    require(c.picard.damping > 0.0 && c.picard.damping <= 1.0, "picard.damping: must lie in (0, 1]");
    require(c.picard.nodes_per_axis >= 2, "picard.nodes_per_axis: must be >= 2");
    require(c.picard.substeps >= 1, "picard.substeps: must be >= 1");
  }
  if (c.mode == RunMode::oracle) {
    require(c.dim == 1, "dim: oracle mode supports only dim = 1");
    require(c.oracle.n_x >= 2 && c.oracle.n_v >= 2, "oracle.n_x/n_v: must be >= 2");
    require(c.oracle.x_max > c.oracle.x_min, "oracle.x_max: must exceed oracle.x_min");
    require(c.oracle.v_max > 0.0, "oracle.v_max: must be > 0");
    require(c.oracle.field.kind == "zero" || c.oracle.field.kind == "constant" || c.oracle.field.kind == "sine",
            "oracle.field.kind: must be zero, constant or sine");
  }
  if (c.mode == RunMode::agents) {
    if (c.model == AgentModel::vicsek) {
      require(c.dim == 2, "dim: the vicsek model is planar (dim = 2)");
      require(c.vicsek.speed > 0.0, "vicsek.speed: must be > 0");
      require(c.vicsek.noise >= 0.0, "vicsek.noise: must be >= 0");
    }
    require(c.kernel.kind == "indicator" || c.kernel.kind == "constant" || c.kernel.kind == "power_law",
            "kernel.kind: must be indicator, constant or power_law");
    require(c.kernel.beta >= 0.0, "kernel.beta: must be >= 0");
  }
  for (double p : c.diagnostics.lp) require(p >= 1.0, "diagnostics.lp: every p must be >= 1");
  require(c.diagnostics.mass_tolerance >= 0.0 && c.diagnostics.support_tolerance >= 0.0 &&
              c.diagnostics.lp_tolerance >= 0.0 && c.diagnostics.oracle_mass_tolerance >= 0.0,
          "diagnostics: tolerances must be >= 0");
  try {
    kflock::validate(c.initial);
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("initial: ") + e.what());
  }
  if (c.mode == RunMode::oracle)
    require(c.oracle.v_max > velocity_support_bound(c.initial),
            "oracle.v_max: must exceed the velocity support of the initial data");
}

inline ScenarioConfig config_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  detail::ObjectReader top(j, "");
  c.mode = detail::from_name(detail::mode_names, top.string("mode", "kinetic"), "mode");
  c.model = detail::from_name(detail::model_names, top.string("model", "cutoff_cs"), "model");
  const auto dim_count = top.count("dim", 1);
  if (dim_count < 1 || dim_count > 3) throw ConfigError("dim: must be 1, 2 or 3");
  c.dim = static_cast<int>(dim_count);
  c.lambda = top.number("lambda", c.lambda);
  c.radius = top.number("radius", c.radius);
  c.delta = top.number("delta", c.delta);
  if (!(c.delta >= 0.0)) throw ConfigError("delta: must satisfy delta >= 0");
  c.T = top.number("T", c.T);
  c.dt = top.number("dt", c.dt);
  c.seed = top.u64("seed", c.seed);
  c.snapshot_stride = top.count("snapshot_stride", c.snapshot_stride);
  c.allow_large_lambda_dt = top.boolean("allow_large_lambda_dt", c.allow_large_lambda_dt);
  c.integrator = detail::from_name(detail::scheme_names, top.string("integrator", "rk4"), "integrator");
  c.output_dir = top.string("output_dir", c.output_dir);

  const int d = c.dim;
  auto& s = c.initial;
  s.dim = d;
  if (top.has("initial")) {
    detail::ObjectReader in(top.raw("initial"), "initial");
    s.kind = detail::from_name(detail::dist_names, in.string("kind", "box_indicator"), "initial.kind");
    s.amplitude = in.number("amplitude", s.amplitude);
    switch (s.kind) {
      case DistributionKind::box_indicator:
      case DistributionKind::custom_grid:
        s.x_lo = in.vec("x_lo", s.x_lo, d);
        s.x_hi = in.vec("x_hi", s.x_hi, d);
        s.v_lo = in.vec("v_lo", s.v_lo, d);
        s.v_hi = in.vec("v_hi", s.v_hi, d);
        if (s.kind == DistributionKind::custom_grid) {
          s.grid_n_x = in.count("grid_n_x", s.grid_n_x);
          s.grid_n_v = in.count("grid_n_v", s.grid_n_v);
          s.values = in.numbers("values", {});
        }
        break;
      case DistributionKind::product_gaussian_truncated:
        s.x_center = in.vec("x_center", s.x_center, d);
        s.v_center = in.vec("v_center", s.v_center, d);
        s.sigma_x = in.number("sigma_x", s.sigma_x);
        s.sigma_v = in.number("sigma_v", s.sigma_v);
        s.cutoff = in.number("cutoff", s.cutoff);
        break;
      case DistributionKind::two_bump: {
        s.half_width_x = in.number("half_width_x", s.half_width_x);
        s.half_width_v = in.number("half_width_v", s.half_width_v);
        if (!in.has("bumps")) throw ConfigError("initial.bumps: required for two_bump");
        const auto& arr = in.raw("bumps");
        if (!arr.is_array() || arr.size() != 2) throw ConfigError("initial.bumps: expected exactly two bumps");
        for (std::size_t b = 0; b < 2; ++b) {
          detail::ObjectReader br(arr[b], "initial.bumps[" + std::to_string(b) + "]");
          s.bumps[b].x_center = br.vec("x_center", {}, d);
          s.bumps[b].v_center = br.vec("v_center", {}, d);
          s.bumps[b].weight = br.number("weight", 1.0);
          br.finish();
        }
        break;
      }
    }
    if (in.has("sampling")) {
      detail::ObjectReader sr(in.raw("sampling"), "initial.sampling");
      s.sampling.kind =
          detail::from_name(detail::sampling_names, sr.string("kind", "tensor_grid"), "initial.sampling.kind");
      s.sampling.n_x = sr.count("n_x", s.sampling.n_x);
      s.sampling.n_v = sr.count("n_v", s.sampling.n_v);
      s.sampling.n = sr.count("n", s.sampling.n);
      sr.finish();
    }
    in.finish();
  }
  if (top.has("kernel")) {
    detail::ObjectReader kr(top.raw("kernel"), "kernel");
    c.kernel.kind = kr.string("kind", c.kernel.kind);
    c.kernel.beta = kr.number("beta", c.kernel.beta);
    kr.finish();
  }
  if (top.has("vicsek")) {
    detail::ObjectReader vr(top.raw("vicsek"), "vicsek");
    c.vicsek.speed = vr.number("speed", c.vicsek.speed);
    c.vicsek.noise = vr.number("noise", c.vicsek.noise);
    vr.finish();
  }
  if (top.has("picard")) {
    detail::ObjectReader pr(top.raw("picard"), "picard");
    c.picard.tol = pr.number("tol", c.picard.tol);
    c.picard.max_iter = pr.count("max_iter", c.picard.max_iter);
    c.picard.damping = pr.number("damping", c.picard.damping);
    c.picard.time_intervals = pr.count("time_intervals", c.picard.time_intervals);
    c.picard.nodes_per_axis = pr.count("nodes_per_axis", c.picard.nodes_per_axis);
    c.picard.substeps = pr.count("substeps", c.picard.substeps);
    pr.finish();
  }
  if (top.has("oracle")) {
    detail::ObjectReader orr(top.raw("oracle"), "oracle");
    c.oracle.n_x = orr.count("n_x", c.oracle.n_x);
    c.oracle.n_v = orr.count("n_v", c.oracle.n_v);
    c.oracle.x_min = orr.number("x_min", c.oracle.x_min);
    c.oracle.x_max = orr.number("x_max", c.oracle.x_max);
    c.oracle.v_max = orr.number("v_max", c.oracle.v_max);
    if (orr.has("field")) {
      detail::ObjectReader fr(orr.raw("field"), "oracle.field");
      c.oracle.field.kind = fr.string("kind", c.oracle.field.kind);
      c.oracle.field.value = fr.number("value", c.oracle.field.value);
      c.oracle.field.amplitude = fr.number("amplitude", c.oracle.field.amplitude);
      c.oracle.field.wavenumber = fr.number("wavenumber", c.oracle.field.wavenumber);
      c.oracle.field.omega = fr.number("omega", c.oracle.field.omega);
      fr.finish();
    }
    orr.finish();
  }
  if (top.has("diagnostics")) {
    detail::ObjectReader dr(top.raw("diagnostics"), "diagnostics");
    auto& g = c.diagnostics;
    g.mass = dr.boolean("mass", g.mass);
    g.support = dr.boolean("support", g.support);
    g.lp = dr.numbers("lp", g.lp);
    g.mass_tolerance = dr.number("mass_tolerance", g.mass_tolerance);
    g.support_tolerance = dr.number("support_tolerance", g.support_tolerance);
    g.lp_tolerance = dr.number("lp_tolerance", g.lp_tolerance);
    g.oracle_mass_tolerance = dr.number("oracle_mass_tolerance", g.oracle_mass_tolerance);
    g.write_snapshots = dr.boolean("write_snapshots", g.write_snapshots);
    dr.finish();
  }
  top.finish();
  validate(c);
  return c;
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
  return config_from_json(j);
}

inline std::string config_hash(const ScenarioConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

// ---------------------------------------------------------------------------
// Orchestration

struct RunOutcome {
  DiagnosticsReport report;
  std::vector<std::string> warnings;
  std::vector<std::filesystem::path> files;

  int exit_code() const { return report.all_pass() ? 0 : 1; }
};

namespace detail {

inline InteractionKernel make_kernel(const ScenarioConfig& c) {
  if (c.kernel.kind == "constant") return InteractionKernel::constant();
  if (c.kernel.kind == "power_law") return InteractionKernel::power_law(c.kernel.beta);
  return InteractionKernel::indicator(c.radius);
}

inline Ensemble initial_ensemble(const ScenarioConfig& c) {
  InitialDistributionSpec spec = c.initial;
  spec.dim = c.dim;
  spec.sampling.seed = derive_seed(c.seed, SeedStream::sampling);
  return sample_initial(spec, c.lambda, c.radius);
}

// Support checks either count or become warnings when lambda*dt > 1 was allowed.
inline void add_support_assertion(RunOutcome& out, const ScenarioConfig& c, AssertionResult a) {
  if (c.lambda * c.dt > 1.0) {
    if (!a.pass) out.warnings.push_back(a.name + " exceeded (lambda*dt > 1 override)");
    a.pass = true;
    a.name += "_warning_only";
  }
  out.report.assertions.push_back(std::move(a));
}

// Relative identity check of density/volume factors against e^{+-lambda d t}.
inline std::pair<double, double> exponential_law_errors(const Ensemble& e0, const Ensemble& e) {
  double dens = 0.0, vol = 0.0;
  const double grow = std::exp(e.lambda * e.dim * (e.t - e0.t));
  const double shrink = std::exp(-e.lambda * e.dim * (e.t - e0.t));
  for (std::size_t i = 0; i < e.size(); ++i) {
    const auto& p0 = e0.particles[i];
    const auto& p = e.particles[i];
    dens = std::max(dens, std::abs(p.density_value / (p0.density_value * grow) - 1.0));
    vol = std::max(vol, std::abs(p.phase_volume / (p0.phase_volume * shrink) - 1.0));
  }
  return {dens, vol};
}

inline void write_agents_csv(std::ostream& os, std::size_t step, const AgentState& s, bool header) {
  if (header) {
    os << "step,t,id";
    for (int k = 0; k < s.dim; ++k) os << ",x" << k;
    for (int k = 0; k < s.dim; ++k) os << ",v" << k;
    os << '\n';
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    os << step << ',' << fmt_num(s.t) << ',' << i;
    for (int k = 0; k < s.dim; ++k) os << ',' << fmt_num(s.positions[i][k]);
    for (int k = 0; k < s.dim; ++k) os << ',' << fmt_num(s.velocities[i][k]);
    os << '\n';
  }
}

inline SnapshotRecord agent_record(const AgentState& s) {
  SnapshotRecord r;
  r.t = s.t;
  r.total_mass = s.size() > 0 ? 1.0 : 0.0;
  double m = 0.0;
  for (const auto& v : s.velocities) m = std::max(m, norm(v));
  r.support_radius = m;
  if (s.size() > 0) {
    const auto fm = flocking_metrics(s);
    r.velocity_variance = fm.velocity_variance;
    r.spatial_diameter = fm.spatial_diameter;
  }
  return r;
}

inline void run_agents(const ScenarioConfig& c, const std::filesystem::path& out_dir, unsigned threads,
                       RunOutcome& out) {
  const Ensemble e0 = initial_ensemble(c);
  const auto steps = step_sizes(c.T, c.dt);
  std::ostringstream csv;
  auto& rep = out.report;

  if (c.model == AgentModel::vicsek) {
    HeadingState hs;
    hs.speed = c.vicsek.speed;
    for (const auto& p : e0.particles) {
      hs.positions.push_back(p.x);
      hs.headings.push_back(wrap_angle(std::atan2(p.v[1], p.v[0])));
    }
    std::mt19937_64 rng(derive_seed(c.seed, SeedStream::vicsek_noise));
    auto as_agents = [&](const HeadingState& h) {
      AgentState a;
      a.dim = 2;
      a.t = static_cast<double>(h.t);
      a.positions = h.positions;
      for (double th : h.headings) a.velocities.emplace_back(h.speed * std::cos(th), h.speed * std::sin(th));
      return a;
    };
    const auto n_steps = static_cast<std::size_t>(std::llround(c.T));
    bool headings_ok = true;
    write_agents_csv(csv, 0, as_agents(hs), true);
    rep.records.push_back(agent_record(as_agents(hs)));
    for (std::size_t s = 1; s <= std::max<std::size_t>(n_steps, 1); ++s) {
      hs = vicsek_step(hs, c.radius, c.vicsek.noise, rng, threads);
      for (double th : hs.headings) headings_ok = headings_ok && th > -std::numbers::pi && th <= std::numbers::pi;
      if (s % c.snapshot_stride == 0 || s == n_steps) {
        write_agents_csv(csv, s, as_agents(hs), false);
        rep.records.push_back(agent_record(as_agents(hs)));
      }
    }
    rep.assertions.push_back({"headings_normalized", headings_ok ? 0.0 : 1.0, 0.0, headings_ok});
    if (hs.degenerate_events > 0)
      out.warnings.push_back(std::to_string(hs.degenerate_events) + " degenerate heading updates kept the old heading");
  } else {
    AgentState st;
    st.dim = c.dim;
    for (const auto& p : e0.particles) {
      st.positions.push_back(p.x);
      st.velocities.push_back(p.v);
    }
    const auto kernel = make_kernel(c);
    AgentRhs rhs;
    switch (c.model) {
      case AgentModel::cs:
        rhs = [&](const AgentState& s) { return cs_rhs(s, c.lambda, kernel, threads); };
        break;
      case AgentModel::mt:
        rhs = [&](const AgentState& s) { return mt_rhs(s, c.lambda, kernel, threads); };
        break;
      default:
        rhs = [&](const AgentState& s) { return cutoff_cs_rhs(s, c.lambda, c.radius, threads); };
    }
    const bool relaxation = c.model == AgentModel::cutoff_cs || c.model == AgentModel::mt;
    if (c.integrator == AgentScheme::exponential && !relaxation)
      throw ConfigError("integrator: exponential requires model cutoff_cs or mt");

    Vec momentum0;
    for (const auto& v : st.velocities) momentum0 += v;
    double momentum_drift = 0.0;
    std::vector<double> max_speed{agent_record(st).support_radius};

    write_agents_csv(csv, 0, st, true);
    rep.records.push_back(agent_record(st));
    for (std::size_t s = 0; s < steps.size(); ++s) {
      st = integrate_agents(st, rhs, steps[s], c.integrator, c.lambda);
      st.t = s + 1 == steps.size() ? c.T : c.dt * static_cast<double>(s + 1);
      Vec mom;
      for (const auto& v : st.velocities) mom += v;
      momentum_drift = std::max(momentum_drift, norm(mom - momentum0));
      const auto rec = agent_record(st);
      max_speed.push_back(rec.support_radius);
      if ((s + 1) % c.snapshot_stride == 0 || s + 1 == steps.size()) {
        write_agents_csv(csv, s + 1, st, false);
        rep.records.push_back(rec);
      }
    }
    const double scale = std::max(1.0, max_speed.front()) * static_cast<double>(std::max<std::size_t>(st.size(), 1));
    if (c.model == AgentModel::cs)
      rep.assertions.push_back({"momentum_conservation", momentum_drift, 1e-12 * scale,
                                momentum_drift <= 1e-12 * scale});
    if (relaxation && c.integrator != AgentScheme::rk4 && c.diagnostics.support)
      add_support_assertion(out, c,
                            check_non_increasing(max_speed, 1e-12 * std::max(1.0, max_speed.front()),
                                                 "velocity_max_principle"));
  }
  if (c.diagnostics.write_snapshots) {
    write_text_file(out_dir / "snapshots.csv", csv.str());
    out.files.push_back(out_dir / "snapshots.csv");
  }
}

inline void run_kinetic(const ScenarioConfig& c, const std::filesystem::path& out_dir, unsigned threads,
                        RunOutcome& out) {
  const Ensemble e0 = initial_ensemble(c);
  SelfConsistentOptions opt;
  opt.T = c.T;
  opt.dt = c.dt;
  opt.delta = c.delta;
  opt.snapshot_stride = c.snapshot_stride;
  opt.threads = threads;
  opt.support_tolerance = c.diagnostics.support_tolerance;
  opt.abort_on_support_violation = c.lambda * c.dt <= 1.0;
  const auto run = run_self_consistent(e0, opt);
  auto& rep = out.report;

  const double f0_sup = e0.max_density_value();
  for (const auto& e : run.snapshots) rep.records.push_back(snapshot_record(e, c.diagnostics.lp, f0_sup));
  if (c.diagnostics.mass) {
    auto a = check_mass(std::span<const Ensemble>(run.snapshots), c.diagnostics.mass_tolerance);
    rep.assertions.push_back(a);
  }
  if (c.diagnostics.support) {
    add_support_assertion(out, c,
                          check_support(run.snapshots, e0.initial_support_bound, c.diagnostics.support_tolerance));
    add_support_assertion(out, c,
                          check_non_increasing(run.support_per_step, 1e-12 * std::max(1.0, e0.initial_support_bound),
                                               "support_non_increasing"));
  }
  double dens = 0.0, vol = 0.0;
  for (const auto& e : run.snapshots) {
    auto [a, b] = exponential_law_errors(e0, e);
    dens = std::max(dens, a);
    vol = std::max(vol, b);
  }
  rep.assertions.push_back({"density_growth_law", dens, 1e-12, dens <= 1e-12});
  rep.assertions.push_back({"phase_volume_law", vol, 1e-12, vol <= 1e-12});
  for (double p : c.diagnostics.lp)
    if (p > 1.0) rep.assertions.push_back(check_lp_inequality(run.snapshots, p));

  if (c.diagnostics.write_snapshots) {
    std::ostringstream csv;
    write_snapshot_header(csv, c.dim);
    for (std::size_t i = 0; i < run.snapshots.size(); ++i) write_snapshot_rows(csv, run.snapshot_steps[i], run.snapshots[i]);
    write_text_file(out_dir / "snapshots.csv", csv.str());
    out.files.push_back(out_dir / "snapshots.csv");
  }
}

inline void run_picard(const ScenarioConfig& c, const std::filesystem::path& out_dir, unsigned threads,
                       RunOutcome& out) {
  const Ensemble e0 = initial_ensemble(c);
  PicardConfig pc;
  pc.lambda = c.lambda;
  pc.r = c.radius;
  pc.delta = c.delta;
  pc.T = c.T;
  pc.time_intervals = c.picard.time_intervals > 0
                          ? c.picard.time_intervals
                          : static_cast<std::size_t>(std::max(1.0, std::round(c.T / c.dt)));
  pc.nodes_per_axis = c.picard.nodes_per_axis;
  pc.tol = c.picard.tol;
  pc.max_iter = c.picard.max_iter;
  pc.damping = c.picard.damping;
  pc.apply.substeps = c.picard.substeps;
  pc.apply.threads = threads;
  const auto res = picard_solve(e0, pc);
  auto& rep = out.report;

  // linear solve of f0 through the final field, for per-time diagnostics
  const double h = res.field.dt() / static_cast<double>(pc.apply.substeps);
  std::vector<Ensemble> traj{e0};
  Ensemble g = e0;
  std::vector<Vec> vals(g.size());
  for (std::size_t k = 0; k + 1 < res.field.n_times(); ++k) {
    for (std::size_t sub = 0; sub < pc.apply.substeps; ++sub) {
      const double t = res.field.time(k) + h * static_cast<double>(sub);
      for (std::size_t i = 0; i < g.size(); ++i) vals[i] = res.field.evaluate(t, g.particles[i].x);
      g = advance_with_field_values(g, vals, h, threads);
    }
    g.t = res.field.time(k + 1);
    traj.push_back(g);
  }
  const double f0_sup = e0.max_density_value();
  for (const auto& e : traj) {
    auto r = snapshot_record(e, c.diagnostics.lp, f0_sup);
    r.field_residual = res.residuals.empty() ? 0.0 : res.residuals.back();
    rep.records.push_back(r);
  }
  const double worst_sup = res.sup_norms.empty() ? 0.0 : *std::max_element(res.sup_norms.begin(), res.sup_norms.end());
  const double cap = e0.initial_support_bound + 1e-12;
  rep.assertions.push_back({"picard_iterate_bound", worst_sup, cap, worst_sup <= cap});
  if (c.diagnostics.mass) rep.assertions.push_back(check_mass(std::span<const Ensemble>(traj), c.diagnostics.mass_tolerance));
  if (c.diagnostics.support)
    add_support_assertion(out, c, check_support(traj, e0.initial_support_bound, c.diagnostics.support_tolerance));
  if (!res.converged)
    out.warnings.push_back("picard iteration did not reach tol within max_iter (residual " +
                           fmt_num(res.residuals.back()) + ")");

  nlohmann::json summary = {{"converged", res.converged},
                            {"iterations", res.iterations},
                            {"final_residual", res.residuals.empty() ? 0.0 : res.residuals.back()},
                            {"residuals", res.residuals},
                            {"sup_norms", res.sup_norms},
                            {"M0", e0.initial_support_bound}};
  write_text_file(out_dir / "picard_summary.json", kflock::dump_json17(summary));
  out.files.push_back(out_dir / "picard_summary.json");
  std::ostringstream csv;
  write_field_csv(csv, res.field);
  write_text_file(out_dir / "field.csv", csv.str());
  out.files.push_back(out_dir / "field.csv");
}

inline void run_oracle(const ScenarioConfig& c, const std::filesystem::path& out_dir, unsigned threads,
                       RunOutcome& out) {
  InitialDistributionSpec spec = c.initial;
  spec.dim = 1;
  validate(spec);
  const auto f0 = [&spec](double x, double v) { return evaluate(spec, Vec(x), Vec(v)); };
  PhaseGrid g = make_phase_grid(c.oracle.n_x, c.oracle.n_v, c.oracle.x_min, c.oracle.x_max, c.oracle.v_max,
                                c.lambda, f0);
  const FieldSpec field = c.oracle.field;
  const Field1D E = [field](double t, double x) { return field(t, x); };
  const auto steps = step_sizes(c.T, c.dt);
  const double f0_sup = g.max_value();
  const double total0 = g.mass();
  const double M0 = velocity_support_bound(spec);

  std::vector<PhaseGrid> traj{g};
  std::ostringstream csv;
  write_grid_header(csv);
  if (c.diagnostics.write_snapshots) write_grid_rows(csv, g);
  double worst_sup_ratio = 0.0, worst_leak = 0.0;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    g = semi_lagrangian_step(g, E, steps[s], threads);
    if (s + 1 == steps.size()) g.t = c.T;
    const double cap = f0_sup * std::exp(c.lambda * g.t);
    if (cap > 0.0) worst_sup_ratio = std::max(worst_sup_ratio, g.max_value() / cap);
    double leak = 0.0;
    for (std::size_t i = 0; i < g.n_x; ++i)
      for (std::size_t j = 0; j < g.n_v; ++j)
        if (std::abs(g.v_center(j)) > M0 + g.dv()) leak += g.at(i, j);
    leak *= g.dx() * g.dv();
    if (total0 > 0.0) worst_leak = std::max(worst_leak, leak / total0);
    traj.push_back(g);
    if (c.diagnostics.write_snapshots && ((s + 1) % c.snapshot_stride == 0 || s + 1 == steps.size()))
      write_grid_rows(csv, g);
  }
  auto& rep = out.report;
  for (const auto& gr : traj) rep.records.push_back(snapshot_record(gr, c.diagnostics.lp, f0_sup));
  if (c.diagnostics.mass) rep.assertions.push_back(check_mass(std::span<const PhaseGrid>(traj), c.diagnostics.oracle_mass_tolerance));
  rep.assertions.push_back({"oracle_sup_bound", worst_sup_ratio, 1.0 + 1e-9, worst_sup_ratio <= 1.0 + 1e-9});
  if (c.diagnostics.support && field.sup() <= M0)
    rep.assertions.push_back({"oracle_support_leakage", worst_leak, 1e-6, worst_leak <= 1e-6});
  if (total0 > 0.0 && !c.diagnostics.lp.empty()) {
    // value: |slope| when the target is 0, else relative deviation from the target slope
    for (const auto& fit : check_lp_law(traj, c.diagnostics.lp, c.diagnostics.lp_tolerance)) {
      const double dev = fit.target == 0.0 ? std::abs(fit.measured)
                                           : std::abs(fit.measured - fit.target) / std::abs(fit.target);
      rep.assertions.push_back({"lp_law_p" + fmt_num(fit.p), dev, fit.tolerance, fit.pass});
    }
  }
  if (c.diagnostics.write_snapshots) {
    write_text_file(out_dir / "grid.csv", csv.str());
    out.files.push_back(out_dir / "grid.csv");
  }
}

}  // namespace detail

/// Runs the selected pipeline and writes resolved_config.json, mode-specific
/// snapshot files, diagnostics.json and diagnostics.csv into out_dir.
/// Thread count never changes any output byte.
inline RunOutcome run(const ScenarioConfig& c, const std::filesystem::path& out_dir, unsigned threads = 1) {
  validate(c);
  RunOutcome out;
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir / "resolved_config.json", dump_json17(to_json(c)));
  out.files.push_back(out_dir / "resolved_config.json");

  static constexpr const char* solver_ids[] = {"agents", "kinetic_particles", "picard_fixed_point",
                                               "semi_lagrangian_oracle"};
  out.report.meta = {config_hash(c), solver_ids[static_cast<int>(c.mode)], c.seed};
  if (c.mode == RunMode::agents) out.report.meta.solver_id += ":" + std::string(detail::to_name(detail::model_names, c.model));

  switch (c.mode) {
    case RunMode::agents: detail::run_agents(c, out_dir, threads, out); break;
    case RunMode::kinetic: detail::run_kinetic(c, out_dir, threads, out); break;
    case RunMode::picard: detail::run_picard(c, out_dir, threads, out); break;
    case RunMode::oracle: detail::run_oracle(c, out_dir, threads, out); break;
  }

  auto j = out.report.to_json();
  j["warnings"] = out.warnings;
  write_text_file(out_dir / "diagnostics.json", dump_json17(j));
  write_text_file(out_dir / "diagnostics.csv", out.report.to_csv());
  out.files.push_back(out_dir / "diagnostics.json");
  out.files.push_back(out_dir / "diagnostics.csv");
  return out;
}

}  // namespace kflock
