#pragma once

// Exact integer geometry of the one-sided infinite Sierpinski gasket.
//
// Points are stored in skew lattice coordinates: a point p at refinement
// level n is  p.i * 2^-n * a2 + p.j * 2^-n * a3  with a2 = (1,0) and
// a3 = (1/2, sqrt(3)/2). The upward unit cell with lower-left corner (I,J)
// belongs to the gasket iff (I & J) == 0 (Pascal triangle mod 2).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gasket_ids/errors.hpp"
#include "gasket_ids/rational.hpp"
#include "json.hpp"

namespace gasket_ids {

inline const double kFractalDim = std::log(3.0) / std::log(2.0);
inline const double kWalkDim = std::log(5.0) / std::log(2.0);
inline const double kSpectralDim = 2.0 * kFractalDim / kWalkDim;

/// Default cap on M + n for mesh construction.
inline constexpr int kDefaultLevelCap = 9;

namespace detail {
inline std::int64_t mod3(std::int64_t v) { return ((v % 3) + 3) % 3; }
inline int ctz64(std::int64_t v) { return v == 0 ? 64 : __builtin_ctzll(static_cast<unsigned long long>(v)); }
}  // namespace detail

// ---------------------------------------------------------------------------
// LatticePoint

struct LatticePoint {
  std::int64_t i = 0;
  std::int64_t j = 0;
  int level = 0;

  /// Same point expressed at a finer level.
  LatticePoint at_level(int finer) const {
    if (finer < level) throw PreconditionError("LatticePoint::at_level: target level is coarser");
    const int shift = finer - level;
    return {i << shift, j << shift, finer};
  }

  /// Coarsest level at which this point has integer coordinates.
  int minimal_level() const {
    const int tz = std::min(detail::ctz64(i), detail::ctz64(j));
    return std::max(0, level - tz);
  }

  LatticePoint reduced() const {
    const int ml = minimal_level();
    const int shift = level - ml;
    return {i >> shift, j >> shift, ml};
  }

  double x() const { return (static_cast<double>(i) + 0.5 * static_cast<double>(j)) / std::ldexp(1.0, level); }
  double y() const { return 0.5 * std::sqrt(3.0) * static_cast<double>(j) / std::ldexp(1.0, level); }

  friend bool operator==(const LatticePoint& a, const LatticePoint& b) {
    const int lv = std::max(a.level, b.level);
    const LatticePoint aa = a.at_level(lv);
    const LatticePoint bb = b.at_level(lv);
    return aa.i == bb.i && aa.j == bb.j;
  }
  friend bool operator<(const LatticePoint& a, const LatticePoint& b) {
    const int lv = std::max(a.level, b.level);
    const LatticePoint aa = a.at_level(lv);
    const LatticePoint bb = b.at_level(lv);
    return aa.i != bb.i ? aa.i < bb.i : aa.j < bb.j;
  }
};

// ---------------------------------------------------------------------------
// Labels: the alternating group A3 acting on {A, B, C}.

enum class Label : std::uint8_t { A = 0, B = 1, C = 2 };

inline int index(Label l) { return static_cast<int>(l); }
inline Label label_from_index(std::int64_t k) { return static_cast<Label>(detail::mod3(k)); }
/// p1 = (A -> B -> C)
inline Label p1(Label l) { return label_from_index(index(l) + 1); }
/// p2 = (A -> C -> B)
inline Label p2(Label l) { return label_from_index(index(l) - 1); }
inline char to_char(Label l) { return "ABC"[index(l)]; }

// ---------------------------------------------------------------------------
// Cell membership

/// Upward unit cell (I,J) lies in the infinite gasket.
constexpr bool cell_is_in_gasket(std::int64_t I, std::int64_t J) { return I >= 0 && J >= 0 && (I & J) == 0; }

/// Point is a gasket point representable on its own lattice level.
inline bool is_on_gasket(const LatticePoint& p) {
  if (p.i < 0 || p.j < 0) return false;
  return cell_is_in_gasket(p.i, p.j) || cell_is_in_gasket(p.i - 1, p.j) || cell_is_in_gasket(p.i, p.j - 1);
}

/// Point lies in the blow-up G_M = B(0, 2^M).
inline bool is_in_blowup(const LatticePoint& p, int M) {
  return is_on_gasket(p) && p.i + p.j <= (std::int64_t{1} << (M + p.level));
}

/// p belongs to V_M, the vertex set of the size-2^M triangles.
inline bool is_blowup_vertex(const LatticePoint& p, int M) {
  if (!is_on_gasket(p)) return false;
  const int shift = M + p.level;
  if (shift >= 62) return p.i == 0 && p.j == 0;
  const std::int64_t S = std::int64_t{1} << shift;
  return p.i % S == 0 && p.j % S == 0;
}

// ---------------------------------------------------------------------------
// Mesh

struct MeshCell {
  std::int64_t I = 0;
  std::int64_t J = 0;
  /// Vertex indices of (I,J), (I+1,J), (I,J+1).
  std::array<std::int32_t, 3> v{};
};

/// Level-n graph approximation of G_M. Immutable after construction.
class GasketMesh {
 public:
  int M() const { return M_; }
  int n() const { return n_; }
  /// Side length of G_M in mesh units, 2^(M+n).
  std::int64_t side() const { return std::int64_t{1} << (M_ + n_); }
  std::size_t size() const { return vertices_.size(); }

  const LatticePoint& vertex(std::size_t k) const { return vertices_[k]; }
  std::span<const LatticePoint> vertices() const { return vertices_; }
  std::span<const std::int32_t> neighbors(std::size_t k) const { return adjacency_[k]; }
  int degree(std::size_t k) const { return static_cast<int>(adjacency_[k].size()); }
  std::span<const MeshCell> cells() const { return cells_; }
  /// Hausdorff mass attached to a vertex (incident cells / 3 * 3^-n).
  const Rational& weight(std::size_t k) const { return weights_[k]; }
  double weight_value(std::size_t k) const { return weight_values_[k]; }
  std::span<const double> weight_values() const { return weight_values_; }

  std::optional<std::int32_t> index_of(std::int64_t i, std::int64_t j) const {
    const std::int64_t S = side();
    if (i < 0 || j < 0 || i > S || j > S) return std::nullopt;
    const std::int32_t k = lookup_[static_cast<std::size_t>(i * (S + 1) + j)];
    if (k < 0) return std::nullopt;
    return k;
  }

  /// Index of a point given at any level; nullopt if it is not a mesh vertex.
  std::optional<std::int32_t> index_of(const LatticePoint& p) const {
    if (p.level <= n_) {
      const LatticePoint q = p.at_level(n_);
      return index_of(q.i, q.j);
    }
    const LatticePoint r = p.reduced();
    if (r.level > n_) return std::nullopt;
    const LatticePoint q = r.at_level(n_);
    return index_of(q.i, q.j);
  }

  std::int32_t require_index(const LatticePoint& p) const {
    auto k = index_of(p);
    if (!k) throw PreconditionError("point is not a vertex of the mesh");
    return *k;
  }

  /// Indices of the corners 0, 2^M a2, 2^M a3.
  std::array<std::int32_t, 3> corners() const {
    const std::int64_t S = side();
    return {*index_of(0, 0), *index_of(S, 0), *index_of(0, S)};
  }

  bool is_corner(std::size_t k) const {
    const auto c = corners();
    return static_cast<std::int32_t>(k) == c[0] || static_cast<std::int32_t>(k) == c[1] ||
           static_cast<std::int32_t>(k) == c[2];
  }

  Rational total_mass() const {
    Rational s(0);
    for (const auto& w : weights_) s += w;
    return s;
  }

  friend GasketMesh build_mesh(int M, int n, int level_cap);

 private:
  int M_ = 0;
  int n_ = 0;
  std::vector<LatticePoint> vertices_;
  std::vector<std::vector<std::int32_t>> adjacency_;
  std::vector<MeshCell> cells_;
  std::vector<Rational> weights_;
  std::vector<double> weight_values_;
  std::vector<std::int32_t> lookup_;
};

using MeshPtr = std::shared_ptr<const GasketMesh>;

inline GasketMesh build_mesh(int M, int n, int level_cap = kDefaultLevelCap) {
  if (M < 0 || n < 0) throw DomainError("build_mesh: M and n must be nonnegative");
  if (M + n > level_cap)
    throw SizeError("build_mesh: M+n = " + std::to_string(M + n) + " exceeds cap " + std::to_string(level_cap));

  GasketMesh mesh;
  mesh.M_ = M;
  mesh.n_ = n;
  const std::int64_t S = mesh.side();
  mesh.lookup_.assign(static_cast<std::size_t>((S + 1) * (S + 1)), -1);

  std::vector<std::pair<std::int64_t, std::int64_t>> cells;
  for (std::int64_t I = 0; I < S; ++I)
    for (std::int64_t J = 0; I + J < S; ++J)
      if (cell_is_in_gasket(I, J)) cells.emplace_back(I, J);

  auto slot = [&](std::int64_t i, std::int64_t j) -> std::int32_t& {
    return mesh.lookup_[static_cast<std::size_t>(i * (S + 1) + j)];
  };
  for (auto [I, J] : cells) {
    slot(I, J) = 0;
    slot(I + 1, J) = 0;
    slot(I, J + 1) = 0;
  }
  // Lexicographic (i, j) order.
  for (std::int64_t i = 0; i <= S; ++i)
    for (std::int64_t j = 0; i + j <= S; ++j)
      if (slot(i, j) == 0) {
        slot(i, j) = static_cast<std::int32_t>(mesh.vertices_.size());
        mesh.vertices_.push_back({i, j, n});
      }
  // Unused entries were never touched and stay -1; touched-but-not-vertex cannot occur.

  const std::size_t nv = mesh.vertices_.size();
  mesh.adjacency_.assign(nv, {});
  std::vector<int> incident(nv, 0);
  mesh.cells_.reserve(cells.size());
  for (auto [I, J] : cells) {
    MeshCell c{I, J, {slot(I, J), slot(I + 1, J), slot(I, J + 1)}};
    for (int a = 0; a < 3; ++a) {
      ++incident[static_cast<std::size_t>(c.v[a])];
      for (int b = 0; b < 3; ++b)
        if (a != b) mesh.adjacency_[static_cast<std::size_t>(c.v[a])].push_back(c.v[b]);
    }
    mesh.cells_.push_back(c);
  }
  for (auto& nb : mesh.adjacency_) std::sort(nb.begin(), nb.end());

  const std::int64_t den = ipow(3, n + 1);
  mesh.weights_.reserve(nv);
  mesh.weight_values_.reserve(nv);
  for (std::size_t k = 0; k < nv; ++k) {
    mesh.weights_.emplace_back(incident[k], den);
    mesh.weight_values_.push_back(mesh.weights_.back().to_double());
  }
  return mesh;
}

inline MeshPtr make_mesh(int M, int n, int level_cap = kDefaultLevelCap) {
  return std::make_shared<const GasketMesh>(build_mesh(M, n, level_cap));
}

// ---------------------------------------------------------------------------
// Labels on V_M

/// Label of a point of V_M: (n - m) mod 3 for p = n a2 + m a3 in unit-triangle units.
inline Label vertex_label(const LatticePoint& p, int M = 0) {
  if (!is_blowup_vertex(p, M))
    throw PreconditionError("vertex_label: point is not on the 2^" + std::to_string(M) + " vertex lattice");
  const LatticePoint u = p.reduced();
  // reduced() has level 0 here because p is in V_M with M >= 0.
  return label_from_index(u.i - u.j);
}

namespace detail {
/// Label residue of the corner 2^M a2 of G_M; the corner 2^M a3 carries its negative.
inline std::int64_t corner_label_shift(int M) { return (M % 2 == 0) ? 1 : 2; }

/// Unit direction (0,0), (1,0) or (0,1) of the G_M corner carrying label l.
inline std::array<std::int64_t, 2> corner_direction(std::int64_t l, int M) {
  const std::int64_t t = corner_label_shift(M);
  if (l == 0) return {0, 0};
  if (l == t) return {1, 0};
  return {0, 1};
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Projection pi_M : G -> G_M

/// Label-matching barycentric projection onto G_M. The result lives on the
/// same lattice level as the input.
inline LatticePoint project(const LatticePoint& p, int M) {
  if (!is_on_gasket(p)) throw PreconditionError("project: point is not on the gasket");
  if (M < 0) throw DomainError("project: M must be nonnegative");
  const std::int64_t S = std::int64_t{1} << (M + p.level);
  const std::int64_t I = p.i / S;
  const std::int64_t J = p.j / S;
  const std::int64_t u = p.i - I * S;
  const std::int64_t v = p.j - J * S;
  const std::int64_t t = detail::corner_label_shift(M);
  const std::int64_t l0 = detail::mod3((I - J) * t);
  if (u == 0 && v == 0) {
    const auto e = detail::corner_direction(l0, M);
    return {e[0] * S, e[1] * S, p.level};
  }
  const auto e0 = detail::corner_direction(l0, M);
  const auto e1 = detail::corner_direction(detail::mod3(l0 + t), M);
  const auto e2 = detail::corner_direction(detail::mod3(l0 - t), M);
  const std::int64_t w0 = S - u - v;
  return {w0 * e0[0] + u * e1[0] + v * e2[0], w0 * e0[1] + u * e1[1] + v * e2[1], p.level};
}

/// Index of the size-2^M cell (in units of 2^M) that contains a point
/// off V_M, together with the cell-local offsets.
struct CellAddress {
  std::int64_t I = 0;
  std::int64_t J = 0;
  int level = 0;  // cell side is 2^level in gasket units
};

/// Size-2^k cell containing p. For points of V_k the lower-left candidate
/// cell is reported; use is_blowup_vertex to detect the ambiguity.
inline CellAddress containing_cell(const LatticePoint& p, int k) {
  const int shift = k + p.level;
  if (shift < 0) {
    // Cells finer than the point's lattice: the point is a corner of some cell.
    const LatticePoint q = p.at_level(-k);
    return containing_cell(q, k);
  }
  const std::int64_t S = std::int64_t{1} << shift;
  return {p.i / S, p.j / S, k};
}

/// p lies in the closed size-2^k cell c.
inline bool in_closed_cell(const LatticePoint& p, const CellAddress& c) {
  LatticePoint q = p;
  if (c.level + q.level < 0) q = q.at_level(-c.level);
  const std::int64_t s = std::int64_t{1} << (c.level + q.level);
  const std::int64_t u = q.i - c.I * s;
  const std::int64_t v = q.j - c.J * s;
  return u >= 0 && v >= 0 && u + v <= s;
}

/// Gasket cells of side 2^k whose closure contains p (one, or two at V_k \ {0}).
inline std::vector<CellAddress> cells_containing(const LatticePoint& p, int k) {
  std::vector<CellAddress> out;
  const CellAddress base = containing_cell(p, k);
  for (auto [di, dj] : {std::pair<int, int>{0, 0}, {-1, 0}, {0, -1}}) {
    const CellAddress c{base.I + di, base.J + dj, k};
    if (cell_is_in_gasket(c.I, c.J) && in_closed_cell(p, c)) out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fibers pi_M^{-1}(q) within G_{M+K}

struct Fiber {
  std::vector<LatticePoint> points;
  /// Density multiplicity of the reflected kernel at q: 2 on V_M \ {0}, else 1.
  int multiplicity = 1;
  /// q is a vertex of V_M; points are then shared by adjacent cells.
  bool on_vertex_set = false;
};

inline Fiber fiber(const LatticePoint& q, int M, int K) {
  if (K < 0) throw DomainError("fiber: K must be nonnegative");
  if (!is_in_blowup(q, M)) throw PreconditionError("fiber: point is not in G_M");
  const std::int64_t S = std::int64_t{1} << (M + q.level);
  const std::int64_t t = detail::corner_label_shift(M);
  // Barycentric weights of q with respect to the corners labelled 0, t, -t.
  std::array<std::int64_t, 3> beta{};
  beta[0] = S - q.i - q.j;
  beta[static_cast<std::size_t>(t)] = q.i;
  beta[static_cast<std::size_t>(detail::mod3(-t))] = q.j;

  Fiber f;
  f.on_vertex_set = is_blowup_vertex(q, M);
  f.multiplicity = (f.on_vertex_set && !(q.i == 0 && q.j == 0)) ? 2 : 1;
  const std::int64_t cells_side = std::int64_t{1} << K;
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  for (std::int64_t I = 0; I < cells_side; ++I)
    for (std::int64_t J = 0; I + J < cells_side; ++J) {
      if (!cell_is_in_gasket(I, J)) continue;
      const std::int64_t l0 = detail::mod3((I - J) * t);
      const std::int64_t u = beta[static_cast<std::size_t>(detail::mod3(l0 + t))];
      const std::int64_t v = beta[static_cast<std::size_t>(detail::mod3(l0 - t))];
      LatticePoint pt{I * S + u, J * S + v, q.level};
      if (f.on_vertex_set && !seen.insert({pt.i, pt.j}).second) continue;
      f.points.push_back(pt);
    }
  return f;
}

// ---------------------------------------------------------------------------
// Geodesic distance

/// Hop counts from a source vertex; entries beyond max_steps stay -1.
inline std::vector<std::int32_t> bfs_distances(const GasketMesh& mesh, std::int32_t source,
                                               std::int32_t max_steps = std::numeric_limits<std::int32_t>::max()) {
  std::vector<std::int32_t> dist(mesh.size(), -1);
  std::vector<std::int32_t> frontier{source};
  dist[static_cast<std::size_t>(source)] = 0;
  std::int32_t d = 0;
  while (!frontier.empty() && d < max_steps) {
    std::vector<std::int32_t> next;
    for (std::int32_t u : frontier)
      for (std::int32_t w : mesh.neighbors(static_cast<std::size_t>(u)))
        if (dist[static_cast<std::size_t>(w)] < 0) {
          dist[static_cast<std::size_t>(w)] = d + 1;
          next.push_back(w);
        }
    frontier = std::move(next);
    ++d;
  }
  return dist;
}

/// Shortest-path distance between two mesh vertices, in gasket units.
inline Rational geodesic_distance(const LatticePoint& u, const LatticePoint& v, const GasketMesh& mesh) {
  const std::int32_t a = mesh.require_index(u);
  const std::int32_t b = mesh.require_index(v);
  const auto dist = bfs_distances(mesh, a);
  return Rational(dist[static_cast<std::size_t>(b)], ipow(2, mesh.n()));
}

/// All-pairs geodesic distances on a mesh, extended exactly to edge
/// midpoints one level finer (the anchors used for Poisson points).
///
/// A midpoint m of the edge uv in the cell (u, v, w) is reached through a
/// corner: d(x, m) = min(d(x,u) + 1/2, d(x,v) + 1/2, d(x,w) + 1) in mesh
/// units, and two midpoints of the same cell are 1/2 apart.
class GeodesicMetric {
 public:
  static constexpr std::size_t kMaxVertices = 12000;

  explicit GeodesicMetric(MeshPtr mesh) : mesh_(std::move(mesh)) {
    const std::size_t nv = mesh_->size();
    if (nv > kMaxVertices) throw SizeError("GeodesicMetric: mesh too large for an all-pairs table");
    table_.resize(nv * nv);
    for (std::size_t s = 0; s < nv; ++s) {
      const auto d = bfs_distances(*mesh_, static_cast<std::int32_t>(s));
      for (std::size_t k = 0; k < nv; ++k) table_[s * nv + k] = static_cast<std::uint16_t>(d[k]);
    }
  }

  const GasketMesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }

  /// Hop count between two mesh vertices.
  std::int32_t hops(std::size_t a, std::size_t b) const { return table_[a * mesh_->size() + b]; }

  /// Distance in half mesh units between points at level <= n+1.
  std::int64_t half_units(const LatticePoint& p, const LatticePoint& q) const {
    const Anchor a = anchor(p);
    const Anchor b = anchor(q);
    if (a.count == 1 && b.count == 1) return 2 * hops(a.vertex[0], b.vertex[0]);
    if (a.count == 3 && b.count == 3 && a.cell == b.cell) return a.edge == b.edge ? 0 : 1;
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (int x = 0; x < a.count; ++x)
      for (int y = 0; y < b.count; ++y)
        best = std::min<std::int64_t>(best, a.offset[x] + 2 * hops(a.vertex[x], b.vertex[y]) + b.offset[y]);
    return best;
  }

  /// Distance in gasket units.
  double distance(const LatticePoint& p, const LatticePoint& q) const {
    return static_cast<double>(half_units(p, q)) / std::ldexp(1.0, mesh_->n() + 1);
  }

  Rational exact_distance(const LatticePoint& p, const LatticePoint& q) const {
    return Rational(half_units(p, q), ipow(2, mesh_->n() + 1));
  }

  /// Distances (gasket units) from a point to every mesh vertex.
  std::vector<double> distances_from(const LatticePoint& p) const {
    const Anchor a = anchor(p);
    const double scale = std::ldexp(1.0, mesh_->n() + 1);
    std::vector<double> out(mesh_->size());
    for (std::size_t k = 0; k < out.size(); ++k) {
      std::int64_t best = std::numeric_limits<std::int64_t>::max();
      for (int x = 0; x < a.count; ++x)
        best = std::min<std::int64_t>(best, a.offset[x] + 2 * hops(a.vertex[x], k));
      out[k] = static_cast<double>(best) / scale;
    }
    return out;
  }

 private:
  struct Anchor {
    int count = 0;
    std::array<std::size_t, 3> vertex{};
    std::array<std::int64_t, 3> offset{};
    std::pair<std::int64_t, std::int64_t> cell{};
    int edge = -1;
  };

  Anchor anchor(const LatticePoint& p) const {
    const int n = mesh_->n();
    Anchor a;
    if (p.level <= n || p.reduced().level <= n) {
      a.count = 1;
      a.vertex[0] = static_cast<std::size_t>(mesh_->require_index(p));
      return a;
    }
    if (p.level != n + 1) throw PreconditionError("GeodesicMetric: point finer than one level below the mesh");
    const std::int64_t i = p.i;
    const std::int64_t j = p.j;
    std::int64_t I, J;
    std::array<std::pair<std::int64_t, std::int64_t>, 3> corner;  // u, v, w
    if (i % 2 == 1 && j % 2 == 0) {
      I = (i - 1) / 2;
      J = j / 2;
      corner = {{{I, J}, {I + 1, J}, {I, J + 1}}};
      a.edge = 0;
    } else if (i % 2 == 0 && j % 2 == 1) {
      I = i / 2;
      J = (j - 1) / 2;
      corner = {{{I, J}, {I, J + 1}, {I + 1, J}}};
      a.edge = 1;
    } else {
      I = (i - 1) / 2;
      J = (j - 1) / 2;
      corner = {{{I + 1, J}, {I, J + 1}, {I, J}}};
      a.edge = 2;
    }
    if (!cell_is_in_gasket(I, J)) throw PreconditionError("GeodesicMetric: midpoint is not on the gasket");
    a.count = 3;
    a.cell = {I, J};
    for (int k = 0; k < 3; ++k) {
      auto idx = mesh_->index_of(corner[static_cast<std::size_t>(k)].first, corner[static_cast<std::size_t>(k)].second);
      if (!idx) throw PreconditionError("GeodesicMetric: point outside the metric's mesh");
      a.vertex[static_cast<std::size_t>(k)] = static_cast<std::size_t>(*idx);
      a.offset[static_cast<std::size_t>(k)] = k < 2 ? 1 : 2;
    }
    return a;
  }

  MeshPtr mesh_;
  std::vector<std::uint16_t> table_;
};

// ---------------------------------------------------------------------------
// Hausdorff measure of the outer collar B(0,2^M) \ B(0,2^M - r)

namespace detail {
/// Mass of { x in triangle of side 2^side_exp : height(x) >= threshold },
/// where height is the geodesic distance from the triangle's apex.
inline Rational mass_above(int side_exp, const Rational& threshold) {
  const Rational side = pow2(side_exp);
  if (threshold <= Rational(0)) return pow3(side_exp);
  if (threshold >= side) return Rational(0);
  const Rational half = pow2(side_exp - 1);
  return mass_above(side_exp - 1, threshold) + Rational(2) * mass_above(side_exp - 1, threshold - half);
}

inline bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }
}  // namespace detail

/// Exact m(B(0,2^M) \ B(0,2^M - r)) for dyadic r in (0, 2^M).
inline Rational collar_measure(int M, const Rational& r) {
  if (r <= Rational(0) || r >= pow2(M)) throw DomainError("collar_measure: r must lie in (0, 2^M)");
  if (!detail::is_power_of_two(r.den()))
    throw DomainError("collar_measure: r must be dyadic to be resolved by cell counting");
  return detail::mass_above(M, pow2(M) - r);
}

// ---------------------------------------------------------------------------
// Export

/// JSON {M, n, vertices:[[i,j]...], edges:[[u,v]...], weights:[...]}.
inline nlohmann::json mesh_to_json(const GasketMesh& mesh) {
  nlohmann::json j;
  j["M"] = mesh.M();
  j["n"] = mesh.n();
  auto verts = nlohmann::json::array();
  for (const auto& v : mesh.vertices()) verts.push_back({v.i, v.j});
  auto edges = nlohmann::json::array();
  for (std::size_t k = 0; k < mesh.size(); ++k)
    for (std::int32_t w : mesh.neighbors(k))
      if (static_cast<std::size_t>(w) > k) edges.push_back({k, w});
  auto weights = nlohmann::json::array();
  for (std::size_t k = 0; k < mesh.size(); ++k) weights.push_back(mesh.weight_value(k));
  j["vertices"] = std::move(verts);
  j["edges"] = std::move(edges);
  j["weights"] = std::move(weights);
  return j;
}

}  // namespace gasket_ids
