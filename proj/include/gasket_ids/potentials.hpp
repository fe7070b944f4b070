#pragma once

// Poisson clouds, profile functions W, potentials V and their periodizations,
// obstacle masks, and the (W1)-(W3) checkers.
//
// Cloud points are snapped to cells of the window mesh: the point of a
// level-n cell (I,J) is the midpoint of its bottom edge, (2I+1, 2J) at level
// n+1. Such points are never vertices of V_0.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "gasket_ids/errors.hpp"
#include "gasket_ids/geometry.hpp"
#include "gasket_ids/random.hpp"
#include "json.hpp"

namespace gasket_ids {

inline constexpr double kBlocked = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Poisson cloud

struct PoissonCloud {
  std::vector<LatticePoint> points;
  /// nu, per unit Hausdorff mass.
  double intensity = 0.0;
  MeshPtr window;
  std::uint64_t seed = 0;
};

/// Anchor of a level-n cell (bottom-edge midpoint, level n+1).
inline LatticePoint cell_anchor(const MeshCell& c, int n) { return {2 * c.I + 1, 2 * c.J, n + 1}; }

inline PoissonCloud sample_cloud(double intensity, MeshPtr window, Rng& rng, std::uint64_t seed_tag = 0) {
  if (!(intensity >= 0.0) || !std::isfinite(intensity)) throw DomainError("sample_cloud: intensity must be nonnegative");
  PoissonCloud c;
  c.intensity = intensity;
  c.seed = seed_tag;
  const double mean = intensity * pow3(window->M()).to_double();
  const auto cells = window->cells();
  if (mean > 0.0) {
    std::poisson_distribution<long> count(mean);
    const long N = count(rng);
    std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
    c.points.reserve(static_cast<std::size_t>(N));
    for (long k = 0; k < N; ++k) c.points.push_back(cell_anchor(cells[pick(rng)], window->n()));
  }
  c.window = std::move(window);
  return c;
}

inline PoissonCloud sample_cloud(double intensity, MeshPtr window, std::uint64_t seed) {
  Rng rng(seed);
  return sample_cloud(intensity, std::move(window), rng, seed);
}

/// Points of the cloud lying in G_M.
inline std::vector<LatticePoint> points_in_blowup(const PoissonCloud& c, int M) {
  std::vector<LatticePoint> out;
  for (const auto& p : c.points)
    if (is_in_blowup(p, M)) out.push_back(p);
  return out;
}

inline nlohmann::json cloud_to_json(const PoissonCloud& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["intensity"] = c.intensity;
  auto pts = nlohmann::json::array();
  for (const auto& p : c.points) pts.push_back({p.i, p.j, p.level});
  j["points"] = std::move(pts);
  return j;
}

inline PoissonCloud cloud_from_json(const nlohmann::json& j, MeshPtr window) {
  PoissonCloud c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.intensity = j.at("intensity").get<double>();
  for (const auto& p : j.at("points")) c.points.push_back({p.at(0).get<std::int64_t>(), p.at(1).get<std::int64_t>(), p.at(2).get<int>()});
  c.window = std::move(window);
  return c;
}

// ---------------------------------------------------------------------------
// Profiles

/// psi(pi_{M0}(y)) when x and y share a closed 2^{M0} cell. psi is a table
/// over the depth-d subcells of G_{M0} in lexicographic (I,J) order.
struct CellwiseProfile {
  int M0 = 0;
  int depth = 0;
  std::vector<double> psi{1.0};
};

enum class RadialShape { Indicator, Tent, Power, Table };

/// phi(d(x,y)), zero beyond R.
struct RadialProfile {
  double R = 1.0;
  RadialShape shape = RadialShape::Tent;
  double amplitude = 1.0;
  /// Power shape: amplitude * max(s, core)^-exponent on [0, R].
  double exponent = 0.5;
  double core = 1.0 / 16.0;
  /// Table shape: values at equally spaced s in [0, R], linear in between.
  std::vector<double> table;
};

/// a_k for y in Delta_k(x) \ Delta_{k-1}(x); a_k = tail_c * tail_q^k beyond the list.
struct ShellwiseProfile {
  std::vector<double> coefficients;
  double tail_c = 0.0;
  double tail_q = 0.0;
  double a(int k) const {
    if (k < static_cast<int>(coefficients.size())) return coefficients[static_cast<std::size_t>(k)];
    return tail_c * std::pow(tail_q, k);
  }
};

class GeodesicMetric;

struct CustomProfile {
  std::string name = "custom";
  std::function<double(const LatticePoint&, const LatticePoint&, const GeodesicMetric&)> fn;
  /// W(x,y) = 0 for d(x,y) > range, if declared.
  std::optional<double> range;
  /// Bound on the fiber tail beyond G_{M+K}, per cloud point, if declared.
  std::function<double(int M, int K)> tail_bound;
  /// Dominating function h(y) for the (W1) surrogate, if declared.
  std::function<double(const LatticePoint&, const GeodesicMetric&)> h;
};

using ProfileSpec = std::variant<CellwiseProfile, RadialProfile, ShellwiseProfile, CustomProfile>;

inline std::string profile_family(const ProfileSpec& p) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CellwiseProfile>) return "cellwise";
        else if constexpr (std::is_same_v<T, RadialProfile>) return "radial";
        else if constexpr (std::is_same_v<T, ShellwiseProfile>) return "shellwise";
        else return "custom";
      },
      p);
}

inline void validate(const ProfileSpec& spec) {
  std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CellwiseProfile>) {
          if (v.M0 < 0 || v.depth < 0 || v.depth > 12) throw SpecError("cellwise: bad M0 or depth");
          if (static_cast<std::int64_t>(v.psi.size()) != ipow(3, v.depth))
            throw SpecError("cellwise: psi table must have 3^depth entries");
          for (double x : v.psi)
            if (!(x >= 0.0) || !std::isfinite(x)) throw SpecError("cellwise: psi must be finite and nonnegative");
        } else if constexpr (std::is_same_v<T, RadialProfile>) {
          if (!(v.R > 0.0) || !std::isfinite(v.R)) throw SpecError("radial: R must be positive");
          if (!(v.amplitude >= 0.0)) throw SpecError("radial: amplitude must be nonnegative");
          if (v.shape == RadialShape::Power && !(v.exponent > 0.0 && v.core > 0.0))
            throw SpecError("radial: power shape needs positive exponent and core");
          if (v.shape == RadialShape::Table) {
            if (v.table.size() < 2) throw SpecError("radial: table needs at least two values");
            for (double x : v.table)
              if (!(x >= 0.0) || !std::isfinite(x)) throw SpecError("radial: table values must be nonnegative");
          }
        } else if constexpr (std::is_same_v<T, ShellwiseProfile>) {
          for (double x : v.coefficients)
            if (!(x >= 0.0) || !std::isfinite(x)) throw SpecError("shellwise: coefficients must be nonnegative");
          if (!(v.tail_c >= 0.0)) throw SpecError("shellwise: tail_c must be nonnegative");
          if (v.tail_c > 0.0 && !(v.tail_q >= 0.0 && v.tail_q < 1.0 / 3.0))
            throw SpecError("shellwise: geometric tail needs q < 1/3 for a summable 3^n a_n");
        } else {
          if (!v.fn) throw SpecError("custom profile needs a function");
        }
      },
      spec);
}

inline double radial_value(const RadialProfile& p, double s) {
  if (s > p.R) return 0.0;
  switch (p.shape) {
    case RadialShape::Indicator: return p.amplitude;
    case RadialShape::Tent: return p.amplitude * (1.0 - s / p.R);
    case RadialShape::Power: return p.amplitude * std::pow(std::max(s, p.core), -p.exponent);
    case RadialShape::Table: {
      const double pos = s / p.R * static_cast<double>(p.table.size() - 1);
      const auto k = std::min(static_cast<std::size_t>(pos), p.table.size() - 2);
      const double f = pos - static_cast<double>(k);
      return p.amplitude * ((1.0 - f) * p.table[k] + f * p.table[k + 1]);
    }
  }
  return 0.0;
}

inline double radial_sup(const RadialProfile& p) {
  switch (p.shape) {
    case RadialShape::Indicator:
    case RadialShape::Tent: return p.amplitude;
    case RadialShape::Power: return p.amplitude * std::pow(p.core, -p.exponent);
    case RadialShape::Table: return p.amplitude * *std::max_element(p.table.begin(), p.table.end());
  }
  return 0.0;
}

/// Rank of a gasket cell among the depth-d cells in lexicographic order.
inline std::size_t gasket_cell_rank(std::int64_t I, std::int64_t J, int depth) {
  const std::int64_t side = std::int64_t{1} << depth;
  std::size_t rank = 0;
  for (std::int64_t a = 0; a < side; ++a)
    for (std::int64_t b = 0; a + b < side; ++b) {
      if (!cell_is_in_gasket(a, b)) continue;
      if (a == I && b == J) return rank;
      ++rank;
    }
  throw PreconditionError("gasket_cell_rank: not a gasket cell");
}

inline double cellwise_psi(const CellwiseProfile& p, const LatticePoint& y) {
  const LatticePoint q = project(y, p.M0);
  const auto cells = cells_containing(q, p.M0 - p.depth);
  // Relative to the blow-up G_{M0}, depth-d cells have indices below 2^d.
  const std::int64_t side = std::int64_t{1} << p.depth;
  for (const auto& c : cells)
    if (c.I + c.J < side) return p.psi[gasket_cell_rank(c.I, c.J, p.depth)];
  throw ConsistencyError("cellwise_psi: projected point outside G_M0");
}

inline bool share_cell(const LatticePoint& x, const LatticePoint& y, int k) {
  for (const auto& c : cells_containing(x, k))
    if (in_closed_cell(y, c)) return true;
  return false;
}

/// Smallest k >= 0 with Delta_k(x) = Delta_k(y); x, y off V_0.
inline int shell_index(const LatticePoint& x, const LatticePoint& y) {
  const int lv = std::max(x.level, y.level);
  const LatticePoint a = x.at_level(lv), b = y.at_level(lv);
  for (int k = 0; k < 62 - lv; ++k) {
    const int sh = k + lv;
    if ((a.i >> sh) == (b.i >> sh) && (a.j >> sh) == (b.j >> sh)) return k;
  }
  throw ConsistencyError("shell_index: no common shell");
}

inline bool in_v0(const LatticePoint& p) { return p.reduced().level == 0; }

/// W(x, y).
inline double profile_eval(const ProfileSpec& spec, const LatticePoint& x, const LatticePoint& y,
                           const GeodesicMetric& metric) {
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CellwiseProfile>) {
          return share_cell(x, y, v.M0) ? cellwise_psi(v, y) : 0.0;
        } else if constexpr (std::is_same_v<T, RadialProfile>) {
          return radial_value(v, metric.distance(x, y));
        } else if constexpr (std::is_same_v<T, ShellwiseProfile>) {
          if (in_v0(x) || in_v0(y)) return 0.0;
          return v.a(shell_index(x, y));
        } else {
          return v.fn(x, y, metric);
        }
      },
      spec);
}

// ---------------------------------------------------------------------------
// Potentials

enum class PotentialKind { Raw, Periodized, Sznitman, ObstacleMask };

inline std::string to_string(PotentialKind k) {
  switch (k) {
    case PotentialKind::Raw: return "raw";
    case PotentialKind::Periodized: return "periodized";
    case PotentialKind::Sznitman: return "sznitman";
    case PotentialKind::ObstacleMask: return "obstacle-mask";
  }
  return "unknown";
}

struct PotentialVector {
  /// Per mesh vertex; obstacle masks use 0 or kBlocked.
  Eigen::VectorXd values;
  PotentialKind kind = PotentialKind::Raw;
  /// Bound on contributions left out by window or fiber truncation.
  double tail_bound = 0.0;
  bool truncated = false;
  std::string warning;

  std::size_t blocked_count() const {
    std::size_t c = 0;
    for (Eigen::Index k = 0; k < values.size(); ++k) c += std::isinf(values[k]) ? 1 : 0;
    return c;
  }
};

namespace detail {
/// Window-metric index of every vertex of a mesh that lies inside the window.
inline std::vector<std::size_t> window_indices(const GasketMesh& mesh, const GeodesicMetric& metric) {
  std::vector<std::size_t> idx(mesh.size());
  for (std::size_t k = 0; k < mesh.size(); ++k) {
    auto w = metric.mesh().index_of(mesh.vertex(k));
    if (!w) throw PreconditionError("mesh vertex outside the metric window");
    idx[k] = static_cast<std::size_t>(*w);
  }
  return idx;
}

/// Adds sum over sources of W(x, source) to values.
inline void accumulate(const ProfileSpec& spec, const std::vector<LatticePoint>& sources, const GasketMesh& mesh,
                       const GeodesicMetric& metric, Eigen::VectorXd& values) {
  if (sources.empty()) return;
  if (const auto* r = std::get_if<RadialProfile>(&spec)) {
    const auto idx = window_indices(mesh, metric);
    for (const auto& y : sources) {
      const auto d = metric.distances_from(y);
      for (std::size_t k = 0; k < mesh.size(); ++k) values[static_cast<Eigen::Index>(k)] += radial_value(*r, d[idx[k]]);
    }
    return;
  }
  for (const auto& y : sources)
    for (std::size_t k = 0; k < mesh.size(); ++k)
      values[static_cast<Eigen::Index>(k)] += profile_eval(spec, mesh.vertex(k), y, metric);
}

inline std::optional<double> declared_range(const ProfileSpec& spec) {
  if (const auto* r = std::get_if<RadialProfile>(&spec)) return r->R;
  if (const auto* c = std::get_if<CustomProfile>(&spec)) return c->range;
  return std::nullopt;
}
}  // namespace detail

/// Expected mass of a shellwise profile beyond Delta_k, sum_{j>k} 2 3^{j-1} a_j.
inline double shellwise_tail_mass(const ShellwiseProfile& p, int k) {
  double s = 0.0;
  const int listed = static_cast<int>(p.coefficients.size());
  for (int j = k + 1; j < listed; ++j) s += 2.0 * std::pow(3.0, j - 1) * p.a(j);
  if (p.tail_c > 0.0) {
    const int j0 = std::max(k + 1, listed);
    const double r = 3.0 * p.tail_q;
    s += 2.0 / 3.0 * p.tail_c * std::pow(r, j0) / (1.0 - r);
  }
  return s;
}

/// V(x) = sum_i W(x, y_i) on the vertices of mesh.
inline PotentialVector potential_on_mesh(const PoissonCloud& cloud, const ProfileSpec& spec, const GasketMesh& mesh,
                                         const GeodesicMetric& metric) {
  validate(spec);
  PotentialVector v;
  v.kind = PotentialKind::Raw;
  v.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.size()));
  const int Mw = metric.mesh().M();
  const double gap = std::ldexp(1.0, Mw) - std::ldexp(1.0, mesh.M());
  if (auto r = detail::declared_range(spec)) {
    if (*r > gap) throw PreconditionError("potential_on_mesh: window too small for the profile range");
  } else if (const auto* c = std::get_if<CellwiseProfile>(&spec)) {
    if (c->M0 > Mw) throw PreconditionError("potential_on_mesh: window smaller than the profile cells");
  } else if (const auto* s = std::get_if<ShellwiseProfile>(&spec)) {
    // Points beyond G_Mw fall outside Delta_{Mw-1}(x) for x in G_M, M < Mw.
    v.truncated = true;
    v.tail_bound = cloud.intensity * shellwise_tail_mass(*s, Mw - 1);
    v.warning = "shellwise profile truncated to the window; expected missing contribution <= " + std::to_string(v.tail_bound);
  } else {
    v.truncated = true;
    v.tail_bound = std::numeric_limits<double>::infinity();
    v.warning = "custom profile without declared range; truncation to the window is uncertified";
  }
  detail::accumulate(spec, cloud.points, mesh, metric, v.values);
  return v;
}

/// V_M(x) = V(pi_M(x)) for the vertices of any mesh, given V on the G_M mesh.
inline PotentialVector periodize_usual(const PotentialVector& v_on_blowup, const GasketMesh& blowup,
                                       const GasketMesh& mesh) {
  if (static_cast<std::size_t>(v_on_blowup.values.size()) != blowup.size())
    throw PreconditionError("periodize_usual: potential not defined on G_M");
  PotentialVector out;
  out.kind = v_on_blowup.kind == PotentialKind::ObstacleMask ? PotentialKind::ObstacleMask : PotentialKind::Periodized;
  out.tail_bound = v_on_blowup.tail_bound;
  out.truncated = v_on_blowup.truncated;
  out.values.resize(static_cast<Eigen::Index>(mesh.size()));
  for (std::size_t k = 0; k < mesh.size(); ++k) {
    const LatticePoint q = project(mesh.vertex(k), blowup.M());
    out.values[static_cast<Eigen::Index>(k)] = v_on_blowup.values[blowup.require_index(q)];
  }
  return out;
}

/// Fiber copies (within G_{M+K}) of the cloud points lying in G_M.
inline std::vector<LatticePoint> fiber_copies(const PoissonCloud& cloud, int M, int K) {
  std::vector<LatticePoint> out;
  for (const auto& y : points_in_blowup(cloud, M)) {
    const Fiber f = fiber(y, M, K);
    out.insert(out.end(), f.points.begin(), f.points.end());
  }
  return out;
}

/// Bound on the fiber contributions beyond G_{M+K}, or +inf when uncertified.
inline double sznitman_tail_bound(const ProfileSpec& spec, int M, int K, std::size_t points) {
  const double gap = std::ldexp(1.0, M) * (std::ldexp(1.0, K) - 1.0);
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, RadialProfile>) {
          return v.R < gap ? 0.0 : std::numeric_limits<double>::infinity();
        } else if constexpr (std::is_same_v<T, CellwiseProfile>) {
          return v.M0 <= M + K ? 0.0 : std::numeric_limits<double>::infinity();
        } else if constexpr (std::is_same_v<T, ShellwiseProfile>) {
          // Fiber points in Delta_k(x) \ Delta_{k-1}(x) number 2 3^{k-1-M} for k > M.
          double s = 0.0;
          const int listed = static_cast<int>(v.coefficients.size());
          for (int k = M + K + 1; k < listed; ++k) s += 2.0 * std::pow(3.0, k - 1 - M) * v.a(k);
          if (v.tail_c > 0.0) {
            const int k0 = std::max(M + K + 1, listed);
            const double r = 3.0 * v.tail_q;
            s += 2.0 * std::pow(3.0, -1 - M) * v.tail_c * std::pow(r, k0) / (1.0 - r);
          }
          return static_cast<double>(points) * s;
        } else {
          if (v.range && *v.range < gap) return 0.0;
          if (v.tail_bound) return static_cast<double>(points) * v.tail_bound(M, K);
          return std::numeric_limits<double>::infinity();
        }
      },
      spec);
}

/// V_M^*(x) = sum_{y_i in G_M} sum_{y' in fiber(y_i, M, K)} W(x, y') on the G_M mesh.
inline PotentialVector periodize_sznitman(const PoissonCloud& cloud, const ProfileSpec& spec, const GasketMesh& blowup,
                                          int K_trunc, const GeodesicMetric& metric) {
  validate(spec);
  if (K_trunc < 1) throw DomainError("periodize_sznitman: K_trunc must be at least 1");
  if (blowup.M() + K_trunc > metric.mesh().M()) throw PreconditionError("periodize_sznitman: fibers leave the metric window");
  const int M = blowup.M();
  const auto inside = points_in_blowup(cloud, M);
  PotentialVector v;
  v.kind = PotentialKind::Sznitman;
  v.tail_bound = sznitman_tail_bound(spec, M, K_trunc, inside.size());
  if (std::isinf(v.tail_bound) && !inside.empty())
    throw SpecError("periodize_sznitman: profile " + profile_family(spec) + " has no certified fiber tail");
  v.truncated = v.tail_bound > 0.0;
  v.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(blowup.size()));
  detail::accumulate(spec, fiber_copies(cloud, M, K_trunc), blowup, metric, v.values);
  return v;
}

// ---------------------------------------------------------------------------
// Obstacles

namespace detail {
inline PotentialVector mask_from_sources(const std::vector<LatticePoint>& sources, double a, const GasketMesh& mesh,
                                         const GeodesicMetric& metric, bool project_first, int M) {
  if (!(a >= 0.0)) throw DomainError("obstacle radius must be nonnegative");
  PotentialVector v;
  v.kind = PotentialKind::ObstacleMask;
  v.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.size()));
  if (a == 0.0) v.warning = "a = 0: cloud points are off the mesh, nothing is blocked";
  std::vector<std::size_t> idx(mesh.size());
  for (std::size_t k = 0; k < mesh.size(); ++k) {
    const LatticePoint p = project_first ? project(mesh.vertex(k), M) : mesh.vertex(k);
    auto w = metric.mesh().index_of(p);
    if (!w) throw PreconditionError("obstacle mask: vertex outside the metric window");
    idx[k] = static_cast<std::size_t>(*w);
  }
  const double eps = 1e-12;
  for (const auto& y : sources) {
    const auto d = metric.distances_from(y);
    for (std::size_t k = 0; k < mesh.size(); ++k)
      if (d[idx[k]] <= a + eps) v.values[static_cast<Eigen::Index>(k)] = kBlocked;
  }
  return v;
}
}  // namespace detail

/// Union of closed balls B(y_i, a) on the mesh vertices.
inline PotentialVector obstacle_mask(const PoissonCloud& cloud, double a, const GasketMesh& mesh,
                                     const GeodesicMetric& metric) {
  return detail::mask_from_sources(cloud.points, a, mesh, metric, false, 0);
}

/// O_M = pi_M^{-1}(O intersected with G_M).
inline PotentialVector obstacle_mask_usual(const PoissonCloud& cloud, double a, int M, const GasketMesh& mesh,
                                           const GeodesicMetric& metric) {
  return detail::mask_from_sources(cloud.points, a, mesh, metric, true, M);
}

/// O_M^* = union of closed balls around the fiber copies of the points in G_M.
/// Copies beyond G_{M+K} cannot reach G_M when a < 2^M (2^K - 1).
inline PotentialVector obstacle_mask_sznitman(const PoissonCloud& cloud, double a, int M, int K, const GasketMesh& mesh,
                                              const GeodesicMetric& metric) {
  if (M + K > metric.mesh().M()) throw PreconditionError("obstacle_mask_sznitman: fibers leave the metric window");
  auto v = detail::mask_from_sources(fiber_copies(cloud, M, K), a, mesh, metric, false, 0);
  if (!(a < std::ldexp(1.0, M) * (std::ldexp(1.0, K) - 1.0))) {
    v.truncated = true;
    v.warning = "obstacle radius reaches beyond the fiber truncation";
  }
  return v;
}

// ---------------------------------------------------------------------------
// (W3)

struct W3Witness {
  LatticePoint x;
  LatticePoint y;
  int M = 0;
  double lhs = 0.0;
  double rhs = 0.0;
};

struct W3Result {
  bool holds = true;
  std::vector<W3Witness> witnesses;
  std::size_t pairs_checked = 0;
};

/// For x over the G_{M+1} mesh and y over the G_M mesh (mesh order), compares
/// sum_{y' in fiber(y)} W(pi_M x, y') against sum W(pi_{M+1} x, y'),
/// fibers truncated to G_{M+K}.
inline W3Result check_W3(const ProfileSpec& spec, const std::vector<int>& M_range, int n, int K = 2,
                         std::size_t max_witnesses = 1, double tol = 1e-12) {
  validate(spec);
  W3Result r;
  if (M_range.empty()) return r;
  const int Mmax = *std::max_element(M_range.begin(), M_range.end());
  const GeodesicMetric metric(make_mesh(Mmax + K, n));
  for (int M : M_range) {
    const auto xs = build_mesh(M + 1, n);
    const auto ys = build_mesh(M, n);
    std::vector<std::vector<LatticePoint>> fibers;
    fibers.reserve(ys.size());
    for (const auto& y : ys.vertices()) fibers.push_back(fiber(y, M, K).points);
    for (const auto& x : xs.vertices()) {
      const LatticePoint px = project(x, M);
      const LatticePoint qx = project(x, M + 1);
      for (std::size_t k = 0; k < ys.size(); ++k) {
        double lhs = 0.0, rhs = 0.0;
        for (const auto& yp : fibers[k]) {
          lhs += profile_eval(spec, px, yp, metric);
          rhs += profile_eval(spec, qx, yp, metric);
        }
        ++r.pairs_checked;
        if (lhs > rhs + tol * std::max(1.0, std::abs(rhs))) {
          r.holds = false;
          if (r.witnesses.size() < max_witnesses) r.witnesses.push_back({x, ys.vertex(k), M, lhs, rhs});
        }
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// (W2) and the (W1) surrogate

struct W2Result {
  std::vector<double> terms;  // index 0 is M = 1
  double fitted_ratio = 0.0;
  bool convergent_trend = false;
};

/// Term M: sup over x in the G_{x_level} mesh of sum over window vertices y
/// with d(x,y) >= 2^{M/4} of m_y W(x,y).
inline W2Result check_W2(const ProfileSpec& spec, int M_max, const GeodesicMetric& metric, int x_level = 0) {
  validate(spec);
  W2Result r;
  const auto& win = metric.mesh();
  const auto xs = build_mesh(x_level, win.n());
  const auto xi = detail::window_indices(xs, metric);
  r.terms.assign(static_cast<std::size_t>(M_max), 0.0);
  for (std::size_t a = 0; a < xs.size(); ++a) {
    std::vector<double> w(win.size());
    for (std::size_t b = 0; b < win.size(); ++b) w[b] = profile_eval(spec, xs.vertex(a), win.vertex(b), metric);
    for (int M = 1; M <= M_max; ++M) {
      const double rad = std::pow(2.0, M / 4.0);
      double s = 0.0;
      for (std::size_t b = 0; b < win.size(); ++b)
        if (metric.hops(xi[a], b) / std::ldexp(1.0, win.n()) >= rad) s += win.weight_value(b) * w[b];
      r.terms[static_cast<std::size_t>(M - 1)] = std::max(r.terms[static_cast<std::size_t>(M - 1)], s);
    }
  }
  // Log-linear fit over the positive terms.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0;
  for (int M = 1; M <= M_max; ++M) {
    const double t = r.terms[static_cast<std::size_t>(M - 1)];
    if (t <= 0.0) continue;
    sx += M;
    sy += std::log(t);
    sxx += double(M) * M;
    sxy += M * std::log(t);
    ++cnt;
  }
  if (cnt >= 2) {
    const double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
    r.fitted_ratio = std::exp(slope);
  }
  const bool eventually_zero = !r.terms.empty() && r.terms.back() == 0.0;
  r.convergent_trend = eventually_zero || (cnt >= 2 && r.fitted_ratio < 1.0);
  return r;
}

/// Declared dominating function h(y) of the (W1) surrogate: W(x,y) <= h(y)
/// whenever d(y,0) >= 2 d(x,0).
inline std::optional<double> declared_h(const ProfileSpec& spec, const LatticePoint& y, const GeodesicMetric& metric) {
  const double dy = metric.distance({0, 0, 0}, y);
  return std::visit(
      [&](const auto& v) -> std::optional<double> {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, RadialProfile>) {
          return dy <= 2.0 * v.R ? radial_sup(v) : 0.0;
        } else if constexpr (std::is_same_v<T, CellwiseProfile>) {
          return cellwise_psi(v, y);
        } else if constexpr (std::is_same_v<T, ShellwiseProfile>) {
          // y in Delta_k(x) forces 2^k >= d(x,y) >= d(y,0)/2.
          const int k0 = dy > 0.0 ? std::max(0, static_cast<int>(std::ceil(std::log2(dy / 2.0)))) : 0;
          double m = 0.0;
          for (int k = k0; k < k0 + 64; ++k) m = std::max(m, v.a(k));
          return m;
        } else {
          if (!v.h) return std::nullopt;
          return v.h(y, metric);
        }
      },
      spec);
}

struct W1Result {
  bool declared = false;
  bool holds = true;
  std::size_t pairs_checked = 0;
};

inline W1Result check_W1_surrogate(const ProfileSpec& spec, const GeodesicMetric& metric) {
  W1Result r;
  const auto& win = metric.mesh();
  const LatticePoint o{0, 0, 0};
  for (std::size_t b = 0; b < win.size(); ++b) {
    const auto h = declared_h(spec, win.vertex(b), metric);
    if (!h) return r;
    r.declared = true;
    const double dy = metric.distance(o, win.vertex(b));
    for (std::size_t a = 0; a < win.size(); ++a) {
      if (dy < 2.0 * metric.distance(o, win.vertex(a))) continue;
      ++r.pairs_checked;
      if (profile_eval(spec, win.vertex(a), win.vertex(b), metric) > *h * (1.0 + 1e-12) + 1e-300) r.holds = false;
    }
  }
  return r;
}

}  // namespace gasket_ids
