#pragma once

// Schrodinger matrices phi(L) + diag(V) with Dirichlet (killed outside the
// interior of G_M), Neumann (quotient chain on G_M) and obstacle boundary
// behaviour, their spectra, empirical IDS measures and Laplace transforms.
//
// Vertices carrying an infinite potential (obstacle masks) are removed from
// the vertex set, which is the killed-chain generator on the unblocked set.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gasket_ids/bernstein.hpp"
#include "gasket_ids/errors.hpp"
#include "gasket_ids/geometry.hpp"
#include "gasket_ids/linalg.hpp"
#include "gasket_ids/operators.hpp"
#include "gasket_ids/potentials.hpp"

namespace gasket_ids {

enum class Boundary { Dirichlet, Neumann };

inline std::string to_string(Boundary b) { return b == Boundary::Dirichlet ? "D" : "N"; }

struct SchrodingerOperator {
  /// Mesh of the base generator (G_{M+K} for Dirichlet, G_M for Neumann).
  MeshPtr mesh;
  Boundary bc = Boundary::Neumann;
  int M = 0;
  /// Base-mesh indices of the rows of matrix.
  std::vector<std::int32_t> vertices;
  Eigen::MatrixXd matrix;
  bool has_obstacles = false;

  Eigen::Index dimension() const { return matrix.rows(); }
};

namespace detail {
inline bool is_blowup_corner(const LatticePoint& p, int M) {
  const LatticePoint q = p.reduced();
  const std::int64_t S = std::int64_t{1} << (M + std::max(q.level, 0));
  if (q.level < 0) return false;
  return (q.i == 0 && q.j == 0) || (q.i == S && q.j == 0) || (q.i == 0 && q.j == S);
}
}  // namespace detail

/// Vertex set of the operator inside the base mesh.
inline std::vector<std::int32_t> operator_vertices(const GasketMesh& mesh, Boundary bc, int M) {
  std::vector<std::int32_t> out;
  for (std::size_t k = 0; k < mesh.size(); ++k) {
    const auto& p = mesh.vertex(k);
    if (!is_in_blowup(p, M)) continue;
    if (bc == Boundary::Dirichlet && detail::is_blowup_corner(p, M)) continue;
    out.push_back(static_cast<std::int32_t>(k));
  }
  return out;
}

/// H = base restricted to the vertex set + diag(V). The potential is given on
/// the base mesh vertices; +inf entries are removed from the vertex set.
inline SchrodingerOperator assemble(const GeneratorMatrix& base, const PotentialVector& potential, Boundary bc, int M) {
  if (!base.mesh) throw AssemblyError("assemble: base generator has no mesh");
  const auto& mesh = *base.mesh;
  if (static_cast<std::size_t>(potential.values.size()) != mesh.size())
    throw AssemblyError("assemble: potential has " + std::to_string(potential.values.size()) + " entries, base mesh has " +
                        std::to_string(mesh.size()) + " vertices");
  if (base.matrix.rows() != static_cast<Eigen::Index>(mesh.size()))
    throw AssemblyError("assemble: generator and mesh sizes differ");
  if (bc == Boundary::Neumann && mesh.M() != M)
    throw AssemblyError("assemble: Neumann operator needs the quotient generator on G_M");
  if (bc == Boundary::Dirichlet && (mesh.M() < M || base.kind == GeneratorKind::Quotient))
    throw AssemblyError("assemble: Dirichlet operator needs an ambient generator containing G_M");
  if (bc == Boundary::Dirichlet && mesh.M() == M)
    throw AssemblyError("assemble: Dirichlet operator needs at least one ambient shell beyond G_M");

  SchrodingerOperator op;
  op.mesh = base.mesh;
  op.bc = bc;
  op.M = M;
  for (auto k : operator_vertices(mesh, bc, M)) {
    const double v = potential.values[k];
    if (std::isnan(v) || v < 0.0) throw AssemblyError("assemble: potential must be nonnegative");
    if (std::isinf(v)) {
      op.has_obstacles = true;
      continue;
    }
    op.vertices.push_back(k);
  }
  const auto d = static_cast<Eigen::Index>(op.vertices.size());
  op.matrix.resize(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) op.matrix(a, b) = base.matrix(op.vertices[a], op.vertices[b]);
  for (Eigen::Index a = 0; a < d; ++a) op.matrix(a, a) += potential.values[op.vertices[a]];
  return op;
}

/// Full spectrum, ascending.
inline Eigen::VectorXd eigenvalues(const Eigen::MatrixXd& h) {
  if (h.rows() == 0) return Eigen::VectorXd();
  return eigenvalues_only(h);
}

inline Eigen::VectorXd eigenvalues(const SchrodingerOperator& op) { return eigenvalues(op.matrix); }

struct SpectralMeasure {
  std::vector<double> atoms;
  double weight = 1.0;
  int M = 0;
  Boundary bc = Boundary::Neumann;
  bool starred = false;
  std::uint64_t seed = 0;

  double total_mass() const { return weight * static_cast<double>(atoms.size()); }
};

inline SpectralMeasure spectral_measure(const Eigen::VectorXd& values, int M, Boundary bc, bool starred = false,
                                        std::uint64_t seed = 0) {
  SpectralMeasure m;
  m.atoms.assign(values.data(), values.data() + values.size());
  std::stable_sort(m.atoms.begin(), m.atoms.end());
  m.weight = std::pow(3.0, -M);
  m.M = M;
  m.bc = bc;
  m.starred = starred;
  m.seed = seed;
  return m;
}

/// 3^-M sum_n e^{-t lambda_n}.
inline double laplace_transform(const SpectralMeasure& m, double t) {
  if (!(t > 0.0)) throw DomainError("laplace_transform: t must be positive");
  double s = 0.0;
  for (double l : m.atoms) s += std::exp(-t * l);
  return m.weight * s;
}

/// 3^-M #{n : lambda_n <= lambda}.
inline double ids_counting(const SpectralMeasure& m, double lambda) {
  const auto it = std::upper_bound(m.atoms.begin(), m.atoms.end(), lambda);
  return m.weight * static_cast<double>(it - m.atoms.begin());
}

/// Distinct atoms with their multiplicities; atoms within tol (relative to the spread) are merged.
inline std::vector<std::pair<double, int>> multiplicities(const SpectralMeasure& m, double tol = 1e-9) {
  std::vector<std::pair<double, int>> out;
  if (m.atoms.empty()) return out;
  const double scale = std::max(1.0, std::abs(m.atoms.back()) + std::abs(m.atoms.front()));
  for (double l : m.atoms) {
    if (!out.empty() && l - out.back().first <= tol * scale) ++out.back().second;
    else out.push_back({l, 1});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Four-transform suite

/// Subordinated generators shared by every cloud at one (M, n, K, phi).
struct SuiteOperators {
  int M = 0;
  int n = 0;
  int K = 1;
  GeneratorMatrix ambient;   // phi(L) on G_{M+K}
  GeneratorMatrix quotient;  // phi(L^M) on G_M
  std::vector<std::int32_t> pi;  // ambient index -> G_M index
};

inline SuiteOperators build_suite_operators(int M, int n, int K, const SubordinatorSpec& spec, double calibration = 1.0) {
  if (K < 1) throw DomainError("suite: K must be at least 1");
  SuiteOperators s;
  s.M = M;
  s.n = n;
  s.K = K;
  const auto amb = laplacian_ambient(make_mesh(M + K, n), calibration);
  s.ambient = subordinate_generator(amb, eigendecompose(amb.matrix), spec);
  const auto quo = laplacian_reflected(M, n, K, calibration);
  s.quotient = subordinate_generator(quo, eigendecompose(quo.matrix), spec);
  s.pi = projection_map(*s.ambient.mesh, *s.quotient.mesh);
  return s;
}

/// Fiber-constant extension V o pi_M of a potential on G_M to the ambient mesh.
inline PotentialVector pull_back(const PotentialVector& on_blowup, const SuiteOperators& ops) {
  PotentialVector out = on_blowup;
  out.values.resize(static_cast<Eigen::Index>(ops.pi.size()));
  for (std::size_t k = 0; k < ops.pi.size(); ++k) out.values[static_cast<Eigen::Index>(k)] = on_blowup.values[ops.pi[k]];
  return out;
}

struct TransformSpectra {
  SpectralMeasure D, N, Dstar, Nstar;
};

struct FourTransforms {
  double t = 0.0;
  double L_D = 0.0, L_N = 0.0, L_Dstar = 0.0, L_Nstar = 0.0;
};

/// Potentials on G_M: unstarred V (or O intersected with G_M) and starred V_M^* (or O_M^*).
struct SuitePotentials {
  PotentialVector plain;
  PotentialVector starred;
};

inline TransformSpectra suite_spectra(const SuiteOperators& ops, const SuitePotentials& v, std::uint64_t seed = 0) {
  TransformSpectra r;
  auto run = [&](const PotentialVector& on_blowup, bool star, SpectralMeasure& d, SpectralMeasure& n) {
    const auto hd = assemble(ops.ambient, pull_back(on_blowup, ops), Boundary::Dirichlet, ops.M);
    const auto hn = assemble(ops.quotient, on_blowup, Boundary::Neumann, ops.M);
    d = spectral_measure(eigenvalues(hd), ops.M, Boundary::Dirichlet, star, seed);
    n = spectral_measure(eigenvalues(hn), ops.M, Boundary::Neumann, star, seed);
  };
  run(v.plain, false, r.D, r.N);
  run(v.starred, true, r.Dstar, r.Nstar);
  return r;
}

inline FourTransforms transforms_at(const TransformSpectra& s, double t) {
  return {t, laplace_transform(s.D, t), laplace_transform(s.N, t), laplace_transform(s.Dstar, t),
          laplace_transform(s.Nstar, t)};
}

/// Window covering every M of an experiment: G_{Mmax+1} at level n.
inline GeodesicMetric suite_metric(int M_max, int n) { return GeodesicMetric(make_mesh(M_max + 1, n)); }

inline SuitePotentials profile_potentials(const SuiteOperators& ops, const PoissonCloud& cloud, const ProfileSpec& profile,
                                          const GeodesicMetric& metric) {
  const auto& blowup = *ops.quotient.mesh;
  return {potential_on_mesh(cloud, profile, blowup, metric), periodize_sznitman(cloud, profile, blowup, ops.K, metric)};
}

inline SuitePotentials obstacle_potentials(const SuiteOperators& ops, const PoissonCloud& cloud, double a,
                                           const GeodesicMetric& metric) {
  const auto& blowup = *ops.quotient.mesh;
  return {obstacle_mask(cloud, a, blowup, metric), obstacle_mask_sznitman(cloud, a, ops.M, ops.K, blowup, metric)};
}

inline SuitePotentials zero_potentials(const SuiteOperators& ops) {
  PotentialVector z;
  z.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ops.quotient.mesh->size()));
  return {z, z};
}

/// The four transforms for one cloud at one M, for every t.
inline std::vector<FourTransforms> four_transform_suite(const SuiteOperators& ops, const SuitePotentials& v,
                                                        const std::vector<double>& ts) {
  const auto s = suite_spectra(ops, v);
  std::vector<FourTransforms> out;
  for (double t : ts) out.push_back(transforms_at(s, t));
  return out;
}

inline FourTransforms four_transform_suite(int M, int n, int K, const SubordinatorSpec& spec, const ProfileSpec& profile,
                                           const PoissonCloud& cloud, double t) {
  const auto ops = build_suite_operators(M, n, K, spec);
  const GeodesicMetric metric(make_mesh(M + K, n));
  return four_transform_suite(ops, profile_potentials(ops, cloud, profile, metric), {t}).front();
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct SpectraRow {
  std::uint64_t seed = 0;
  int M = 0, n = 0, K = 0;
  Boundary bc = Boundary::Neumann;
  bool starred = false;
  double t = 0.0;
  double value = 0.0;
  std::size_t eigencount = 0;
  double runtime_ms = 0.0;
};

inline void write_spectra_header(std::ostream& os) { os << "seed,M,n,K,bc,star_flag,t,value,eigencount,runtime_ms\n"; }

inline void write_spectra_row(std::ostream& os, const SpectraRow& r) {
  os << r.seed << ',' << r.M << ',' << r.n << ',' << r.K << ',' << to_string(r.bc) << ',' << (r.starred ? 1 : 0) << ','
     << format_double(r.t) << ',' << format_double(r.value) << ',' << r.eigencount << ',' << format_double(r.runtime_ms)
     << '\n';
}

}  // namespace gasket_ids
