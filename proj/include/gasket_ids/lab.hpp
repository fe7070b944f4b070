#pragma once

// Experiment runner: configuration, orchestration of E1-E9, result tables
// and CSV/JSON emission.
//
// Every row carries the config hash and a seed. Per-cloud work runs in
// parallel into per-index slots and is reduced in index order, so outputs do
// not depend on the worker count.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "gasket_ids/bernstein.hpp"
#include "gasket_ids/errors.hpp"
#include "gasket_ids/geometry.hpp"
#include "gasket_ids/montecarlo.hpp"
#include "gasket_ids/operators.hpp"
#include "gasket_ids/parallel.hpp"
#include "gasket_ids/potentials.hpp"
#include "gasket_ids/spectra.hpp"
#include "json.hpp"

namespace gasket_ids {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::uint64_t kDefaultSeed = 20240611;

// ---------------------------------------------------------------------------
// Tables

using Cell = std::variant<std::monostate, std::int64_t, std::uint64_t, double, std::string>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  bool empty() const { return rows.empty(); }
};

struct ResultTable {
  std::string experiment;
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::json config;
  Table rows;
  Table summary;

  /// Summary lookup: value of the first row with this metric, M and t (nullopt matches empty).
  std::optional<double> summary_value(const std::string& metric, std::optional<int> M = std::nullopt,
                                      std::optional<double> t = std::nullopt) const;
  std::optional<std::string> verdict(const std::string& metric, std::optional<int> M = std::nullopt,
                                     std::optional<double> t = std::nullopt) const;
};

inline std::string cell_to_csv(const Cell& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) return "";
        else if constexpr (std::is_same_v<T, double>) return format_double(v);
        else if constexpr (std::is_same_v<T, std::string>) return v;
        else return std::to_string(v);
      },
      c);
}

inline nlohmann::json cell_to_json(const Cell& c) {
  return std::visit(
      [](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) return nullptr;
        else return v;
      },
      c);
}

inline nlohmann::json table_to_json(const Table& t) {
  nlohmann::json j;
  j["columns"] = t.columns;
  auto data = nlohmann::json::array();
  for (const auto& r : t.rows) {
    auto row = nlohmann::json::array();
    for (const auto& c : r) row.push_back(cell_to_json(c));
    data.push_back(std::move(row));
  }
  j["data"] = std::move(data);
  return j;
}

inline void write_csv(std::ostream& os, const Table& t) {
  for (std::size_t k = 0; k < t.columns.size(); ++k) os << (k ? "," : "") << t.columns[k];
  os << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t k = 0; k < r.size(); ++k) os << (k ? "," : "") << cell_to_csv(r[k]);
    os << '\n';
  }
}

namespace detail {
inline bool cell_matches(const Cell& c, std::optional<double> want) {
  if (!want) return std::holds_alternative<std::monostate>(c);
  if (const auto* i = std::get_if<std::int64_t>(&c)) return static_cast<double>(*i) == *want;
  if (const auto* d = std::get_if<double>(&c)) return *d == *want;
  return false;
}

inline const std::vector<Cell>* find_summary(const ResultTable& r, const std::string& metric, std::optional<int> M,
                                             std::optional<double> t) {
  // Summary columns: config_hash, seed, experiment, metric, M, t, value, verdict.
  for (const auto& row : r.summary.rows) {
    if (std::get<std::string>(row[3]) != metric) continue;
    if (!cell_matches(row[4], M ? std::optional<double>(*M) : std::nullopt)) continue;
    if (!cell_matches(row[5], t)) continue;
    return &row;
  }
  return nullptr;
}
}  // namespace detail

inline std::optional<double> ResultTable::summary_value(const std::string& metric, std::optional<int> M,
                                                        std::optional<double> t) const {
  const auto* row = detail::find_summary(*this, metric, M, t);
  if (!row) return std::nullopt;
  if (const auto* d = std::get_if<double>(&(*row)[6])) return *d;
  return std::nullopt;
}

inline std::optional<std::string> ResultTable::verdict(const std::string& metric, std::optional<int> M,
                                                       std::optional<double> t) const {
  const auto* row = detail::find_summary(*this, metric, M, t);
  if (!row) return std::nullopt;
  return std::get<std::string>((*row)[7]);
}

// ---------------------------------------------------------------------------
// Configuration

enum class ExperimentId { E1, E2, E3, E4, E5, E6, E7, E8, E9 };

inline const std::vector<std::pair<ExperimentId, std::string>>& experiment_names() {
  static const std::vector<std::pair<ExperimentId, std::string>> names{
      {ExperimentId::E1, "E1-free-ND"},           {ExperimentId::E2, "E2-poisson-convergence"},
      {ExperimentId::E3, "E3-profile-checks"},    {ExperimentId::E4, "E4-obstacles"},
      {ExperimentId::E5, "E5-exponential-formula"}, {ExperimentId::E6, "E6-collar"},
      {ExperimentId::E7, "E7-quotient-identities"}, {ExperimentId::E8, "E8-verlog"},
      {ExperimentId::E9, "E9-heat-trace-slope"}};
  return names;
}

inline std::string to_string(ExperimentId id) {
  for (const auto& [k, v] : experiment_names())
    if (k == id) return v;
  return "unknown";
}

inline ExperimentId experiment_from_string(const std::string& s) {
  for (const auto& [k, v] : experiment_names())
    if (v == s || v.substr(0, v.find('-')) == s) return k;
  throw ConfigError("unknown experiment '" + s + "'");
}

struct ExperimentConfig {
  ExperimentId experiment = ExperimentId::E2;
  std::vector<int> M_list{1, 2, 3};
  int n = 3;
  int K = 1;
  SubordinatorSpec subordinator = SubordinatorSpec::stable_gamma(0.5);
  nlohmann::json subordinator_json = {{"family", "stable"}, {"gamma", 0.5}};
  std::optional<ProfileSpec> profile;
  nlohmann::json profile_json;
  double intensity = 1.0;
  double obstacle_radius = 0.5;
  std::vector<double> t_list{0.25, 1.0, 4.0};
  std::uint64_t clouds = 200;
  std::uint64_t seed = kDefaultSeed;
  std::string output = "results";
  bool timing = false;
  nlohmann::json options = nlohmann::json::object();
};

namespace detail {
inline double gamma_of(const nlohmann::json& j) {
  if (j.contains("gamma")) return j.at("gamma").get<double>();
  if (j.contains("alpha")) return j.at("alpha").get<double>() / kWalkDim;
  throw ConfigError("subordinator needs alpha or gamma");
}

inline void only_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : keys) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}
}  // namespace detail

inline SubordinatorSpec subordinator_from_json(const nlohmann::json& j) {
  detail::only_keys(j, {"family", "alpha", "gamma", "drift", "mass", "beta", "terms"}, "subordinator");
  auto name = j.at("family").get<std::string>();
  if (name == "identity") name = "identity-drift";
  const auto family = subordinator_family_from_string(name);
  SubordinatorSpec s;
  switch (family) {
    case SubordinatorFamily::IdentityDrift: s = SubordinatorSpec::identity(j.value("drift", 1.0)); break;
    case SubordinatorFamily::Stable: s = SubordinatorSpec::stable_gamma(detail::gamma_of(j)); break;
    case SubordinatorFamily::StableWithDrift:
      s = SubordinatorSpec::stable_with_drift(j.at("drift").get<double>(), detail::gamma_of(j) * kWalkDim);
      break;
    case SubordinatorFamily::Relativistic:
      s = SubordinatorSpec::relativistic(detail::gamma_of(j) * kWalkDim, j.at("mass").get<double>());
      break;
    case SubordinatorFamily::LogStable:
      s = SubordinatorSpec::log_stable(detail::gamma_of(j) * kWalkDim, j.at("beta").get<double>());
      break;
    case SubordinatorFamily::StableMixture: {
      std::vector<StableTerm> terms;
      for (const auto& t : j.at("terms")) terms.push_back({detail::gamma_of(t) * kWalkDim, t.value("coefficient", 1.0)});
      s = SubordinatorSpec::stable_mixture(std::move(terms));
      break;
    }
    case SubordinatorFamily::Custom: throw ConfigError("custom subordinators are available through the library API only");
  }
  validate(s);
  return s;
}

inline ProfileSpec profile_from_json(const nlohmann::json& j) {
  const auto family = j.at("family").get<std::string>();
  ProfileSpec p;
  if (family == "radial") {
    detail::only_keys(j, {"family", "R", "shape", "amplitude", "exponent", "core", "table"}, "profile");
    RadialProfile r;
    r.R = j.at("R").get<double>();
    const auto shape = j.value("shape", std::string("tent"));
    if (shape == "indicator") r.shape = RadialShape::Indicator;
    else if (shape == "tent") r.shape = RadialShape::Tent;
    else if (shape == "power") r.shape = RadialShape::Power;
    else if (shape == "table") r.shape = RadialShape::Table;
    else throw ConfigError("profile: unknown radial shape '" + shape + "'");
    r.amplitude = j.value("amplitude", 1.0);
    r.exponent = j.value("exponent", r.exponent);
    r.core = j.value("core", r.core);
    if (j.contains("table")) r.table = j.at("table").get<std::vector<double>>();
    p = r;
  } else if (family == "shellwise") {
    detail::only_keys(j, {"family", "coefficients", "tail_c", "tail_q"}, "profile");
    ShellwiseProfile s;
    if (j.contains("coefficients")) s.coefficients = j.at("coefficients").get<std::vector<double>>();
    s.tail_c = j.value("tail_c", 0.0);
    s.tail_q = j.value("tail_q", 0.0);
    p = s;
  } else if (family == "cellwise") {
    detail::only_keys(j, {"family", "M0", "depth", "psi"}, "profile");
    CellwiseProfile c;
    c.M0 = j.value("M0", 0);
    c.depth = j.value("depth", 0);
    c.psi = j.value("psi", std::vector<double>{1.0});
    p = c;
  } else {
    throw ConfigError("profile: unknown family '" + family + "' (custom profiles are available through the library API only)");
  }
  try {
    validate(p);
  } catch (const SpecError& e) {
    throw ConfigError(std::string("profile: ") + e.what());
  }
  return p;
}

/// Effective configuration as JSON (defaults filled in); hashed for provenance.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["experiment"] = to_string(c.experiment);
  j["mesh"] = {{"M_list", c.M_list}, {"n", c.n}, {"K", c.K}};
  j["subordinator"] = c.subordinator_json;
  j["profile"] = c.profile_json;
  j["intensity"] = c.intensity;
  j["obstacle_radius"] = c.obstacle_radius;
  j["t_list"] = c.t_list;
  j["clouds"] = c.clouds;
  j["seed"] = c.seed;
  j["timing"] = c.timing;
  j["options"] = c.options;
  return j;
}

/// FNV-1a over the canonical dump of the effective configuration.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::string s = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Checks every parameter before any computation.
inline void validate(const ExperimentConfig& c) {
  if (c.M_list.empty()) throw ConfigError("mesh.M_list must not be empty");
  for (int M : c.M_list)
    if (M < 0 || M > 8) throw ConfigError("mesh.M_list entries must lie in [0, 8]");
  for (std::size_t k = 1; k < c.M_list.size(); ++k)
    if (c.M_list[k] <= c.M_list[k - 1]) throw ConfigError("mesh.M_list must be increasing");
  if (c.n < 0 || c.n > 8) throw ConfigError("mesh.n must lie in [0, 8]");
  if (c.K < 1 || c.K > 4) throw ConfigError("mesh.K must lie in [1, 4]");
  if (c.t_list.empty()) throw ConfigError("t_list must not be empty");
  for (double t : c.t_list)
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("t_list entries must be positive");
  if (!(c.intensity >= 0.0) || !std::isfinite(c.intensity)) throw ConfigError("intensity must be nonnegative");
  if (!(c.obstacle_radius >= 0.0)) throw ConfigError("obstacle_radius must be nonnegative");
  validate(c.subordinator);
  const int Mmax = c.M_list.back();
  auto mesh_size = [](int M, int n) { return (ipow(3, M + n + 1) + 3) / 2; };
  switch (c.experiment) {
    case ExperimentId::E2:
    case ExperimentId::E4:
      if (c.clouds < 30) throw ConfigError("clouds must be at least 30");
      [[fallthrough]];
    case ExperimentId::E1:
      if (mesh_size(Mmax + c.K, c.n) > 12000) throw ConfigError("mesh G_{Mmax+K} exceeds 12000 vertices");
      if (c.experiment == ExperimentId::E2 && !c.profile) throw ConfigError("E2 needs a profile");
      if (c.experiment == ExperimentId::E2) {
        const double gap = std::ldexp(1.0, Mmax + c.K) - std::ldexp(1.0, Mmax);
        if (const auto* r = std::get_if<RadialProfile>(&*c.profile); r && !(r->R < std::ldexp(1.0, c.M_list.front()) * (std::ldexp(1.0, c.K) - 1.0) && r->R <= gap))
          throw ConfigError("radial range must stay below 2^M (2^K - 1) for every M");
        if (const auto* cw = std::get_if<CellwiseProfile>(&*c.profile); cw && cw->M0 > c.M_list.front() + c.K)
          throw ConfigError("cellwise M0 exceeds the fiber truncation");
      }
      break;
    case ExperimentId::E3:
      if (!c.profile) throw ConfigError("E3 needs a profile");
      break;
    case ExperimentId::E5:
      if (c.clouds < 30) throw ConfigError("clouds must be at least 30");
      if (mesh_size(c.M_list.front(), c.n) > 12000) throw ConfigError("E5 window exceeds 12000 vertices");
      break;
    case ExperimentId::E6:
      for (const auto& cs : c.options.value("cases", nlohmann::json::array())) {
        if (!cs.is_array() || cs.size() != 2) throw ConfigError("E6 cases are [M, \"r\"] pairs");
      }
      break;
    case ExperimentId::E7:
      if (mesh_size(Mmax + c.K, c.n) > 12000) throw ConfigError("mesh G_{Mmax+K} exceeds 12000 vertices");
      break;
    case ExperimentId::E8: break;
    case ExperimentId::E9:
      if (mesh_size(c.M_list.front(), c.n) > 12000) throw ConfigError("E9 mesh exceeds 12000 vertices");
      break;
  }
}

/// Parses a configuration document. GASKET_IDS_SEED, when set, overrides the seed.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  detail::only_keys(j, {"experiment", "mesh", "subordinator", "profile", "intensity", "obstacle_radius", "t_list",
                        "clouds", "seed", "output", "timing", "options"},
                    "config");
  ExperimentConfig c;
  try {
    c.experiment = experiment_from_string(j.at("experiment").get<std::string>());
    if (j.contains("mesh")) {
      const auto& m = j.at("mesh");
      detail::only_keys(m, {"M_list", "n", "K"}, "mesh");
      c.M_list = m.value("M_list", c.M_list);
      c.n = m.value("n", c.n);
      c.K = m.value("K", c.K);
    }
    if (j.contains("subordinator")) {
      c.subordinator_json = j.at("subordinator");
      c.subordinator = subordinator_from_json(c.subordinator_json);
    }
    if (j.contains("profile") && !j.at("profile").is_null()) {
      c.profile_json = j.at("profile");
      c.profile = profile_from_json(c.profile_json);
    }
    c.intensity = j.value("intensity", c.intensity);
    c.obstacle_radius = j.value("obstacle_radius", c.obstacle_radius);
    c.t_list = j.value("t_list", c.t_list);
    c.clouds = j.value("clouds", c.clouds);
    c.seed = j.value("seed", c.seed);
    c.output = j.value("output", c.output);
    c.timing = j.value("timing", c.timing);
    c.options = j.value("options", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const SpecError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (const char* env = std::getenv("GASKET_IDS_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (!end || *end != '\0') throw ConfigError("GASKET_IDS_SEED must be an unsigned integer");
    c.seed = v;
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Runner

class ExperimentError : public std::runtime_error {
 public:
  ExperimentError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

namespace detail {

struct RunContext {
  const ExperimentConfig& cfg;
  unsigned workers;
  ResultTable& out;
  std::string stage;

  void row(std::uint64_t seed, std::vector<Cell> cells) {
    std::vector<Cell> r{out.config_hash, seed};
    for (auto& c : cells) r.push_back(std::move(c));
    out.rows.rows.push_back(std::move(r));
  }
  void summary(const std::string& metric, std::optional<int> M, std::optional<double> t, std::optional<double> value,
               const std::string& verdict = "") {
    out.summary.rows.push_back({out.config_hash, cfg.seed, out.experiment, metric,
                                M ? Cell{std::int64_t{*M}} : Cell{}, t ? Cell{*t} : Cell{}, value ? Cell{*value} : Cell{},
                                verdict});
  }
  double ms_since(std::chrono::steady_clock::time_point t0) const {
    if (!cfg.timing) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
};

inline const char* pass_fail(bool ok) { return ok ? "pass" : "fail"; }

inline std::vector<std::string> spectra_columns() {
  return {"config_hash", "seed", "M", "n", "K", "bc", "star_flag", "t", "value", "eigencount", "runtime_ms"};
}

inline std::vector<std::string> montecarlo_columns() {
  return {"config_hash", "seed", "experiment", "M", "t", "estimator", "mean", "stderr", "trials"};
}

struct CloudResult {
  std::uint64_t seed = 0;
  std::array<std::size_t, 4> counts{};
  std::vector<FourTransforms> values;
  double runtime_ms = 0.0;
};

/// E1, E2, E4: the four transforms per cloud and M, and the summary verdicts.
inline void run_cloud_suite(RunContext& ctx, const PotentialSource& src, bool free) {
  const auto& c = ctx.cfg;
  ctx.out.rows.columns = spectra_columns();
  const int Mmax = c.M_list.back();
  ctx.stage = "window metric";
  const GeodesicMetric metric(make_mesh(Mmax + c.K, c.n));
  const std::uint64_t clouds = free ? 1 : c.clouds;

  // per M, per cloud
  std::vector<std::vector<CloudResult>> results;
  for (int M : c.M_list) {
    ctx.stage = "operators M=" + std::to_string(M);
    const auto ops = build_suite_operators(M, c.n, c.K, c.subordinator);
    ctx.stage = "cloud spectra M=" + std::to_string(M);
    std::vector<CloudResult> per(clouds);
    parallel_for(clouds, ctx.workers, [&](std::size_t r) {
      const auto t0 = std::chrono::steady_clock::now();
      CloudResult cr;
      SuitePotentials v;
      if (free) {
        cr.seed = c.seed;
        v = zero_potentials(ops);
      } else {
        const auto cloud = experiment_cloud(c.intensity, metric, c.seed, r);
        cr.seed = cloud.seed;
        v = suite_potentials(ops, cloud, src, metric);
      }
      const auto s = suite_spectra(ops, v, cr.seed);
      cr.counts = {s.D.atoms.size(), s.N.atoms.size(), s.Dstar.atoms.size(), s.Nstar.atoms.size()};
      for (double t : c.t_list) cr.values.push_back(transforms_at(s, t));
      cr.runtime_ms = ctx.ms_since(t0);
      per[r] = std::move(cr);
    });
    for (const auto& cr : per)
      for (std::size_t k = 0; k < c.t_list.size(); ++k) {
        const auto& f = cr.values[k];
        const std::array<std::pair<Boundary, bool>, 4> kinds{
            {{Boundary::Dirichlet, false}, {Boundary::Neumann, false}, {Boundary::Dirichlet, true}, {Boundary::Neumann, true}}};
        const std::array<double, 4> vals{f.L_D, f.L_N, f.L_Dstar, f.L_Nstar};
        for (std::size_t q = 0; q < 4; ++q) {
          if (free && kinds[q].second) continue;
          ctx.row(cr.seed, {std::int64_t{M}, std::int64_t{c.n}, std::int64_t{c.K}, to_string(kinds[q].first),
                            std::int64_t{kinds[q].second ? 1 : 0}, c.t_list[k], vals[q],
                            static_cast<std::uint64_t>(cr.counts[q]), cr.runtime_ms});
        }
      }
    results.push_back(std::move(per));
  }

  ctx.stage = "summary";
  for (std::size_t k = 0; k < c.t_list.size(); ++k) {
    const double t = c.t_list[k];
    bool n_ge_d = true;
    std::vector<double> abs_gap, var_d;
    std::vector<RunningStats> nstar(c.M_list.size());
    for (std::size_t m = 0; m < c.M_list.size(); ++m) {
      const int M = c.M_list[m];
      RunningStats D, N, Ds, Ns, gap, agap;
      double min_gap = std::numeric_limits<double>::infinity(), min_gap_star = min_gap;
      for (const auto& cr : results[m]) {
        const auto& f = cr.values[k];
        D.add(f.L_D);
        N.add(f.L_N);
        Ds.add(f.L_Dstar);
        Ns.add(f.L_Nstar);
        gap.add(f.L_N - f.L_D);
        agap.add(std::abs(f.L_N - f.L_D));
        min_gap = std::min(min_gap, f.L_N - f.L_D);
        min_gap_star = std::min(min_gap_star, f.L_Nstar - f.L_Dstar);
      }
      n_ge_d = n_ge_d && min_gap >= -1e-10 && (free || min_gap_star >= -1e-10);
      ctx.summary("mean_L_D", M, t, D.mean);
      ctx.summary("mean_L_N", M, t, N.mean);
      ctx.summary("mean_N_minus_D", M, t, gap.mean);
      ctx.summary("mean_abs_N_minus_D", M, t, agap.mean);
      ctx.summary("sq_dev_N_minus_D", M, t, gap.variance());
      ctx.summary("min_N_minus_D", M, t, min_gap);
      if (!free) {
        ctx.summary("mean_L_Dstar", M, t, Ds.mean);
        ctx.summary("mean_L_Nstar", M, t, Ns.mean);
        ctx.summary("se_L_Nstar", M, t, Ns.stderr_mean());
        ctx.summary("min_Nstar_minus_Dstar", M, t, min_gap_star);
        ctx.summary("var_L_D", M, t, D.variance());
      }
      abs_gap.push_back(agap.mean);
      var_d.push_back(D.variance());
    }
    ctx.summary("N_ge_D", std::nullopt, t, std::nullopt, pass_fail(n_ge_d));
    bool decreasing = true;
    for (std::size_t m = 1; m < abs_gap.size(); ++m) decreasing = decreasing && abs_gap[m] < abs_gap[m - 1];
    ctx.summary("abs_N_minus_D_decreasing", std::nullopt, t, std::nullopt, pass_fail(decreasing));
    if (free) continue;
    // Paired differences across M share the cloud (common random numbers).
    bool monotone = true;
    for (std::size_t m = 1; m < c.M_list.size(); ++m) {
      RunningStats diff;
      for (std::size_t r = 0; r < results[m].size(); ++r)
        diff.add(results[m][r].values[k].L_Nstar - results[m - 1][r].values[k].L_Nstar);
      const bool ok = diff.mean <= 2.0 * diff.stderr_mean();
      monotone = monotone && ok;
      ctx.summary("Nstar_step_mean", c.M_list[m], t, diff.mean);
      ctx.summary("Nstar_step_se", c.M_list[m], t, diff.stderr_mean(), pass_fail(ok));
    }
    ctx.summary("Nstar_nonincreasing_2se", std::nullopt, t, std::nullopt, pass_fail(monotone));
    bool var_ok = true;
    for (std::size_t m = 1; m < var_d.size(); ++m) {
      const double ratio = var_d[m - 1] > 0.0 ? var_d[m] / var_d[m - 1] : std::numeric_limits<double>::infinity();
      const bool ok = ratio < 0.8;
      var_ok = var_ok && ok;
      ctx.summary("var_L_D_ratio", c.M_list[m], t, ratio, pass_fail(ok));
    }
    ctx.summary("var_L_D_ratios_below_0.8", std::nullopt, t, std::nullopt, pass_fail(var_ok));
  }
}

inline std::string point_str(const LatticePoint& p) {
  return "(" + std::to_string(p.i) + " " + std::to_string(p.j) + ")/2^" + std::to_string(p.level);
}

/// W1-W3 report rows for one profile.
inline void profile_checks(RunContext& ctx, const ProfileSpec& profile, const std::string& name,
                           bool expect_w3_failure = false) {
  const auto& o = ctx.cfg.options;
  const auto M_range = o.value("w3_M", std::vector<int>{1, 2});
  const int n = o.value("w3_n", 2);
  const int K = o.value("w3_K", 2);
  ctx.stage = "W3 " + name;
  const auto w3 = check_W3(profile, M_range, n, K);
  std::string witness;
  if (!w3.witnesses.empty()) {
    const auto& w = w3.witnesses.front();
    witness = "x=" + point_str(w.x) + " y=" + point_str(w.y) + " M=" + std::to_string(w.M) + " lhs=" +
              format_double(w.lhs) + " rhs=" + format_double(w.rhs);
  }
  const std::string w3_verdict = expect_w3_failure ? (w3.holds ? "unexpected_pass" : "rejected") : pass_fail(w3.holds);
  ctx.row(ctx.cfg.seed, {name, std::string("W3"), std::int64_t{-1}, static_cast<double>(w3.pairs_checked), w3_verdict,
                         witness});
  ctx.summary("W3_" + name, std::nullopt, std::nullopt, static_cast<double>(w3.pairs_checked), w3_verdict);

  const int Mmax = *std::max_element(M_range.begin(), M_range.end());
  const GeodesicMetric metric(make_mesh(o.value("w2_window", Mmax + 1), n));
  ctx.stage = "W2 " + name;
  const auto w2 = check_W2(profile, o.value("w2_M_max", 8), metric);
  for (std::size_t k = 0; k < w2.terms.size(); ++k)
    ctx.row(ctx.cfg.seed, {name, std::string("W2_term"), static_cast<std::int64_t>(k + 1), w2.terms[k], std::string(""),
                           std::string("")});
  ctx.summary("W2_ratio_" + name, std::nullopt, std::nullopt, w2.fitted_ratio, pass_fail(w2.convergent_trend));
  ctx.stage = "W1 " + name;
  const auto w1 = check_W1_surrogate(profile, metric);
  ctx.row(ctx.cfg.seed, {name, std::string("W1"), std::int64_t{-1}, static_cast<double>(w1.pairs_checked),
                         std::string(w1.declared ? pass_fail(w1.holds) : "undeclared"), std::string("")});
  ctx.summary("W1_" + name, std::nullopt, std::nullopt, static_cast<double>(w1.pairs_checked),
              w1.declared ? pass_fail(w1.holds) : "undeclared");
}

/// Custom profile e^{-d(x,0)} 1{d(x,y) <= 1}, which violates W3.
inline ProfileSpec w3_counterexample() {
  CustomProfile c;
  c.name = "counterexample";
  c.range = 1.0;
  c.fn = [](const LatticePoint& x, const LatticePoint& y, const GeodesicMetric& m) {
    return m.distance(x, y) <= 1.0 ? std::exp(-m.distance(x, {0, 0, 0})) : 0.0;
  };
  return c;
}

inline void run_profile_checks(RunContext& ctx) {
  ctx.out.rows.columns = {"config_hash", "seed", "profile", "check", "M", "value", "verdict", "witness"};
  profile_checks(ctx, *ctx.cfg.profile, profile_family(*ctx.cfg.profile));
  if (ctx.cfg.options.value("include_counterexample", true)) profile_checks(ctx, w3_counterexample(), "counterexample", true);
}

inline void run_exponential_formula(RunContext& ctx) {
  const auto& c = ctx.cfg;
  ctx.out.rows.columns = montecarlo_columns();
  const int M = c.M_list.front();
  const auto window = make_mesh(M, c.n);
  const double level_c = c.options.value("c", 1.0);
  ctx.stage = "exponential formula on a set";
  const auto set = exponential_formula_on_set([](const LatticePoint& y) { return is_in_blowup(y, 0); }, level_c, window,
                                              c.intensity, c.clouds, c.seed);
  const std::string id = to_string(c.experiment);
  ctx.row(c.seed, {id, std::int64_t{M}, Cell{}, std::string("fk_set_mc"), set.mean, set.stderr_mean, c.clouds});
  ctx.row(c.seed, {id, std::int64_t{M}, Cell{}, std::string("fk_set_closed_form"), set.closed_form, 0.0, std::uint64_t{0}});
  ctx.summary("set_formula_deviation_se", M, std::nullopt,
              set.stderr_mean > 0 ? std::abs(set.mean - set.closed_form) / set.stderr_mean : 0.0,
              pass_fail(set.within(4.0)));
  if (!c.profile) return;
  ctx.stage = "exponential formula along a path";
  const GeodesicMetric metric(window);
  for (double t : c.t_list) {
    const auto path = simulate_walk(window, 0, t, stream_seed(c.seed, 0xFFFF));
    const auto f = path_functional(path, t, *c.profile, metric);
    const auto r = exponential_formula_check(f, window, c.intensity, c.clouds, stream_seed(c.seed, 0xFFFE));
    ctx.row(c.seed, {id, std::int64_t{M}, t, std::string("fk_path_mc"), r.mean, r.stderr_mean, c.clouds});
    ctx.row(c.seed, {id, std::int64_t{M}, t, std::string("fk_path_closed_form"), r.closed_form, 0.0, std::uint64_t{0}});
    ctx.summary("path_formula_deviation_se", M, t,
                r.stderr_mean > 0 ? std::abs(r.mean - r.closed_form) / r.stderr_mean : 0.0, pass_fail(r.within(4.0)));
  }
}

inline Rational parse_rational(const nlohmann::json& j) {
  if (j.is_number_integer()) return Rational(j.get<std::int64_t>());
  const auto s = j.get<std::string>();
  const auto slash = s.find('/');
  try {
    if (slash == std::string::npos) return Rational(std::stoll(s));
    return Rational(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
  } catch (const std::exception&) {
    throw ConfigError("cannot parse rational '" + s + "'");
  }
}

inline void run_collar(RunContext& ctx) {
  ctx.out.rows.columns = {"config_hash", "seed", "M", "r", "measure", "measure_exact", "exact"};
  auto cases = ctx.cfg.options.value("cases", nlohmann::json::array());
  if (cases.empty()) cases = nlohmann::json::parse(R"([[1,"1"],[2,"1"],[2,"1/2"],[3,"3/2"]])");
  for (const auto& cs : cases) {
    const int M = cs.at(0).get<int>();
    const Rational r = parse_rational(cs.at(1));
    ctx.stage = "collar M=" + std::to_string(M) + " r=" + r.str();
    const Rational v = collar_measure(M, r);
    ctx.row(ctx.cfg.seed, {std::int64_t{M}, r.str(), v.to_double(), v.str(), std::string("exact")});
    ctx.summary("collar_r=" + r.str(), M, std::nullopt, v.to_double(), "exact");
  }
}

inline void run_quotient_identities(RunContext& ctx) {
  const auto& c = ctx.cfg;
  ctx.out.rows.columns = {"config_hash", "seed", "M", "n", "K", "t", "C_tail", "diag_gap", "rotation_residual",
                          "sgum_residual"};
  std::vector<std::vector<KernelComparison>> res(c.t_list.size());
  for (int M : c.M_list) {
    ctx.stage = "kernel comparison M=" + std::to_string(M);
    const auto qp = build_quotient_pair(M, c.n, c.K, c.subordinator);
    for (std::size_t k = 0; k < c.t_list.size(); ++k) {
      const auto r = kernel_comparison(qp, c.t_list[k]);
      ctx.row(c.seed, {std::int64_t{M}, std::int64_t{c.n}, std::int64_t{c.K}, c.t_list[k], r.C_tail, r.diag_gap,
                       r.rotation_residual, r.sgum_residual});
      res[k].push_back(r);
    }
  }
  for (std::size_t k = 0; k < c.t_list.size(); ++k) {
    bool tail_dec = true, gap_dec = true;
    double resid = 0.0;
    for (std::size_t m = 0; m < res[k].size(); ++m) {
      resid = std::max({resid, res[k][m].rotation_residual, res[k][m].sgum_residual});
      if (m > 0) {
        tail_dec = tail_dec && res[k][m].C_tail < res[k][m - 1].C_tail;
        gap_dec = gap_dec && res[k][m].diag_gap < res[k][m - 1].diag_gap;
      }
    }
    ctx.summary("C_tail_decreasing", std::nullopt, c.t_list[k], std::nullopt, pass_fail(tail_dec));
    ctx.summary("diag_gap_decreasing", std::nullopt, c.t_list[k], std::nullopt, pass_fail(gap_dec));
    ctx.summary("max_identity_residual", std::nullopt, c.t_list[k], resid, pass_fail(resid < 1e-10));
  }
}

/// t int_0^1 phi(l)/l dl + e^-1 in closed form where available.
inline std::optional<double> verlog_closed_form(const SubordinatorSpec& s, double t) {
  const double e = std::exp(-1.0);
  switch (s.family) {
    case SubordinatorFamily::IdentityDrift: return t * s.drift + e;
    case SubordinatorFamily::Stable: return t / s.gamma() + e;
    case SubordinatorFamily::StableWithDrift: return t * (s.drift + 1.0 / s.gamma()) + e;
    case SubordinatorFamily::StableMixture: {
      double a = 0.0;
      for (const auto& term : s.mixture) a += term.coefficient / term.gamma();
      return t * a + e;
    }
    default: return std::nullopt;
  }
}

inline void run_verlog(RunContext& ctx) {
  const auto& c = ctx.cfg;
  ctx.out.rows.columns = {"config_hash", "seed", "family", "t", "bound", "closed_form"};
  for (double t : c.t_list) {
    ctx.stage = "verlog t=" + format_double(t);
    const double b = verlog_bound(c.subordinator, t);
    const auto cf = verlog_closed_form(c.subordinator, t);
    ctx.row(c.seed, {to_string(c.subordinator.family), t, b, cf ? Cell{*cf} : Cell{}});
    ctx.summary("verlog_bound", std::nullopt, t, b, cf ? pass_fail(std::abs(b - *cf) <= 1e-6) : "");
  }
}

struct SlopeFit {
  double slope = 0.0;
  double t_min = 0.0;
  double t_max = 0.0;
  std::vector<double> ts;
  std::vector<double> values;
};

/// Least-squares slope of log L(t) against log t for the free Neumann trace,
/// over [1/lambda_max, 1/lambda_2] unless overridden.
inline SlopeFit heat_trace_slope(const Eigen::VectorXd& eigenvalues, int M, int points = 41, double t_min = 0.0,
                                 double t_max = 0.0) {
  std::vector<double> ev(eigenvalues.data(), eigenvalues.data() + eigenvalues.size());
  std::sort(ev.begin(), ev.end());
  if (ev.size() < 2) throw DomainError("heat_trace_slope: needs at least two eigenvalues");
  SlopeFit f;
  f.t_min = t_min > 0.0 ? t_min : 1.0 / ev.back();
  f.t_max = t_max > 0.0 ? t_max : 1.0 / ev[1];
  const auto m = spectral_measure(Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size())), M,
                                  Boundary::Neumann);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int k = 0; k < points; ++k) {
    const double t = std::exp(std::log(f.t_min) + (std::log(f.t_max) - std::log(f.t_min)) * k / (points - 1));
    const double L = laplace_transform(m, t);
    f.ts.push_back(t);
    f.values.push_back(L);
    const double x = std::log(t), y = std::log(L);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  f.slope = (points * sxy - sx * sy) / (points * sxx - sx * sx);
  return f;
}

/// Expected small-time slope and tolerance: -d_s/2 for the walk, -d_f/alpha for stable clocks.
inline std::optional<std::pair<double, double>> heat_trace_target(const SubordinatorSpec& s) {
  if (s.family == SubordinatorFamily::IdentityDrift) return std::pair{-kSpectralDim / 2.0, 0.05};
  if (s.family == SubordinatorFamily::Stable) return std::pair{-kFractalDim / s.alpha, 0.08};
  return std::nullopt;
}

inline void run_heat_trace(RunContext& ctx) {
  const auto& c = ctx.cfg;
  ctx.out.rows.columns = {"config_hash", "seed", "M", "n", "t", "L_N_free"};
  const int M = c.M_list.front();
  ctx.stage = "free Neumann spectrum";
  const auto q = laplacian_reflected(M, c.n, c.K);
  const auto sub = subordinate(eigendecompose(q.matrix, false), c.subordinator);
  ctx.stage = "slope fit";
  const auto fit = heat_trace_slope(sub.eigenvalues, M, c.options.value("fit_points", 41), c.options.value("fit_t_min", 0.0),
                                    c.options.value("fit_t_max", 0.0));
  for (std::size_t k = 0; k < fit.ts.size(); ++k)
    ctx.row(c.seed, {std::int64_t{M}, std::int64_t{c.n}, fit.ts[k], fit.values[k]});
  const auto target = heat_trace_target(c.subordinator);
  ctx.summary("fit_t_min", M, std::nullopt, fit.t_min);
  ctx.summary("fit_t_max", M, std::nullopt, fit.t_max);
  if (target) {
    ctx.summary("slope_target", M, std::nullopt, target->first);
    ctx.summary("slope", M, std::nullopt, fit.slope, pass_fail(std::abs(fit.slope - target->first) <= target->second));
  } else {
    ctx.summary("slope", M, std::nullopt, fit.slope);
  }
}

}  // namespace detail

using detail::heat_trace_slope;
using detail::heat_trace_target;
using detail::SlopeFit;
using detail::verlog_closed_form;
using detail::w3_counterexample;

inline ResultTable make_result_table(const ExperimentConfig& cfg) {
  ResultTable out;
  out.experiment = to_string(cfg.experiment);
  out.config_hash = config_hash(cfg);
  out.seed = cfg.seed;
  out.config = config_to_json(cfg);
  out.summary.columns = {"config_hash", "seed", "experiment", "metric", "M", "t", "value", "verdict"};
  return out;
}

/// Runs an experiment into out (which holds partial results if a stage throws).
inline void run_into(const ExperimentConfig& cfg, unsigned workers, ResultTable& out) {
  validate(cfg);
  pin_blas_threads();
  out = make_result_table(cfg);
  detail::RunContext ctx{cfg, std::max(1u, workers), out, "setup"};
  try {
    switch (cfg.experiment) {
      case ExperimentId::E1: detail::run_cloud_suite(ctx, {}, true); break;
      case ExperimentId::E2: detail::run_cloud_suite(ctx, {cfg.profile, std::nullopt}, false); break;
      case ExperimentId::E3: detail::run_profile_checks(ctx); break;
      case ExperimentId::E4: detail::run_cloud_suite(ctx, {std::nullopt, cfg.obstacle_radius}, false); break;
      case ExperimentId::E5: detail::run_exponential_formula(ctx); break;
      case ExperimentId::E6: detail::run_collar(ctx); break;
      case ExperimentId::E7: detail::run_quotient_identities(ctx); break;
      case ExperimentId::E8: detail::run_verlog(ctx); break;
      case ExperimentId::E9: detail::run_heat_trace(ctx); break;
    }
  } catch (const std::exception& e) {
    throw ExperimentError(to_string(cfg.experiment) + ": " + ctx.stage, e.what());
  }
}

inline ResultTable run(const ExperimentConfig& cfg, unsigned workers = 1) {
  ResultTable out;
  run_into(cfg, workers, out);
  return out;
}

// ---------------------------------------------------------------------------
// Emission

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Format { Csv, Json };

inline nlohmann::json result_to_json(const ResultTable& t) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["experiment"] = t.experiment;
  j["config_hash"] = t.config_hash;
  j["seed"] = t.seed;
  j["config"] = t.config;
  j["rows"] = table_to_json(t.rows);
  j["summary"] = table_to_json(t.summary);
  return j;
}

namespace detail {
inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + p.string() + " for writing");
  f << content;
  f.close();
  if (!f) throw IoError("write failed for " + p.string());
}
}  // namespace detail

/// Writes <dir>/<experiment>.rows.csv and .summary.csv, or <dir>/<experiment>.json.
inline std::vector<std::filesystem::path> emit(const ResultTable& t, Format format, const std::filesystem::path& dir) {
  if (t.rows.columns.empty() && t.summary.empty()) throw PreconditionError("emit: result table is empty");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  if (format == Format::Csv) {
    std::ostringstream rows, summary;
    write_csv(rows, t.rows);
    write_csv(summary, t.summary);
    written.push_back(dir / (t.experiment + ".rows.csv"));
    detail::write_file(written.back(), rows.str());
    written.push_back(dir / (t.experiment + ".summary.csv"));
    detail::write_file(written.back(), summary.str());
  } else {
    written.push_back(dir / (t.experiment + ".json"));
    detail::write_file(written.back(), result_to_json(t).dump(1) + "\n");
  }
  return written;
}

/// Runs and writes both formats; on failure the partial table is flushed before rethrowing.
inline ResultTable run_and_emit(const ExperimentConfig& cfg, unsigned workers, const std::filesystem::path& dir) {
  ResultTable out;
  try {
    run_into(cfg, workers, out);
  } catch (const ExperimentError&) {
    if (!out.rows.columns.empty() || !out.summary.empty()) {
      emit(out, Format::Csv, dir);
      emit(out, Format::Json, dir);
    }
    throw;
  }
  emit(out, Format::Csv, dir);
  emit(out, Format::Json, dir);
  return out;
}

}  // namespace gasket_ids
