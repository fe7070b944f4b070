#pragma once

// Graph generators on gasket meshes, subordination through the spectrum,
// heat kernels and fiber/quotient diagnostics.
//
// Matrices are kept in the weight-symmetrized basis: if m is the vertex
// mass (proportional to the degree, hence stationary for the walk) and L
// the generator acting on functions, the stored matrix is
// m^{1/2} L m^{-1/2}. A symmetric heat matrix H converts to the kernel
// density with respect to m as p(x,y) = H(x,y) / sqrt(m_x m_y).

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "gasket_ids/bernstein.hpp"
#include "gasket_ids/errors.hpp"
#include "gasket_ids/geometry.hpp"
#include "gasket_ids/linalg.hpp"

namespace gasket_ids {

enum class GeneratorKind { Ambient, Quotient, Subordinated };

inline std::string to_string(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::Ambient: return "ambient";
    case GeneratorKind::Quotient: return "quotient";
    case GeneratorKind::Subordinated: return "subordinated";
  }
  return "unknown";
}

struct GeneratorMatrix {
  MeshPtr mesh;
  GeneratorKind kind = GeneratorKind::Ambient;
  /// Shells of the ambient used for a quotient generator.
  int ambient_shells = 0;
  /// Symmetric, positive semidefinite.
  Eigen::MatrixXd matrix;
  /// Vertex masses used for the symmetrization.
  Eigen::VectorXd mass;
  /// Clock factor multiplying I - P.
  double time_scale = 1.0;
};

/// Clock factor 5^n; multiplied by an optional calibration knob.
inline double walk_time_scale(int n, double calibration = 1.0) { return std::pow(5.0, n) * calibration; }

inline Eigen::VectorXd mesh_mass(const GasketMesh& mesh) {
  Eigen::VectorXd m(static_cast<Eigen::Index>(mesh.size()));
  for (std::size_t k = 0; k < mesh.size(); ++k) m[static_cast<Eigen::Index>(k)] = mesh.weight_value(k);
  return m;
}

/// Transition matrix of the simple random walk (reflecting at the corners).
inline Eigen::MatrixXd transition_matrix(const GasketMesh& mesh) {
  const auto nv = static_cast<Eigen::Index>(mesh.size());
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(nv, nv);
  for (std::size_t x = 0; x < mesh.size(); ++x) {
    const double w = 1.0 / mesh.degree(x);
    for (std::int32_t y : mesh.neighbors(x)) p(static_cast<Eigen::Index>(x), y) += w;
  }
  return p;
}

/// 5^n (I - P_sym) with P_sym(x,y) = 1/sqrt(deg x deg y) on edges.
inline GeneratorMatrix laplacian_ambient(MeshPtr mesh, double calibration = 1.0) {
  GeneratorMatrix g;
  const auto nv = static_cast<Eigen::Index>(mesh->size());
  g.kind = GeneratorKind::Ambient;
  g.time_scale = walk_time_scale(mesh->n(), calibration);
  g.mass = mesh_mass(*mesh);
  g.matrix = Eigen::MatrixXd::Identity(nv, nv);
  for (std::size_t x = 0; x < mesh->size(); ++x)
    for (std::int32_t y : mesh->neighbors(x))
      g.matrix(static_cast<Eigen::Index>(x), y) -= 1.0 / std::sqrt(double(mesh->degree(x)) * mesh->degree(static_cast<std::size_t>(y)));
  g.matrix *= g.time_scale;
  g.mesh = std::move(mesh);
  return g;
}

/// Generator acting on functions: m^{-1/2} A m^{1/2}.
inline Eigen::MatrixXd unsymmetrized(const GeneratorMatrix& g) {
  const Eigen::VectorXd s = g.mass.cwiseSqrt();
  return s.cwiseInverse().asDiagonal() * g.matrix * s.asDiagonal();
}

/// Index in the G_M mesh of pi_M(x) for every vertex x of a larger mesh.
inline std::vector<std::int32_t> projection_map(const GasketMesh& ambient, const GasketMesh& target) {
  if (ambient.n() != target.n()) throw PreconditionError("projection_map: meshes must share the refinement level");
  std::vector<std::int32_t> map(ambient.size());
  for (std::size_t k = 0; k < ambient.size(); ++k) {
    const LatticePoint q = project(ambient.vertex(k), target.M());
    map[k] = target.require_index(q);
  }
  return map;
}

/// Index in the ambient mesh of every vertex of a smaller mesh G_M (G_M sits inside).
inline std::vector<std::int32_t> embedding_map(const GasketMesh& inner, const GasketMesh& ambient) {
  std::vector<std::int32_t> map(inner.size());
  for (std::size_t k = 0; k < inner.size(); ++k) map[k] = ambient.require_index(inner.vertex(k));
  return map;
}

/// Quotient of the walk on G_{M+K} under pi_M. The pushforward of every
/// ambient row is compared against the first representative of its fiber;
/// any disagreement above 1e-12 throws ConsistencyError.
inline GeneratorMatrix laplacian_reflected(int M, int n, int K, double calibration = 1.0,
                                           int level_cap = kDefaultLevelCap) {
  if (K < 0) throw DomainError("laplacian_reflected: K must be nonnegative");
  const MeshPtr ambient = make_mesh(M + K, n, level_cap);
  const MeshPtr target = make_mesh(M, n, level_cap);
  const auto pi = projection_map(*ambient, *target);
  const std::size_t nq = target->size();

  std::vector<std::map<std::int32_t, double>> rows(nq);
  std::vector<std::int32_t> representative(nq, -1);
  for (std::size_t x = 0; x < ambient->size(); ++x) {
    std::map<std::int32_t, double> row;
    const double w = 1.0 / ambient->degree(x);
    for (std::int32_t y : ambient->neighbors(x)) row[pi[static_cast<std::size_t>(y)]] += w;
    const auto q = static_cast<std::size_t>(pi[x]);
    if (representative[q] < 0) {
      representative[q] = static_cast<std::int32_t>(x);
      rows[q] = std::move(row);
      continue;
    }
    std::map<std::int32_t, double> diff = rows[q];
    for (auto [c, v] : row) diff[c] -= v;
    for (auto [c, v] : diff)
      if (std::abs(v) > 1e-12) {
        const auto& a = ambient->vertex(static_cast<std::size_t>(representative[q]));
        const auto& b = ambient->vertex(x);
        throw ConsistencyError("laplacian_reflected: pushforward differs between fiber points (" + std::to_string(a.i) +
                               "," + std::to_string(a.j) + ") and (" + std::to_string(b.i) + "," + std::to_string(b.j) +
                               ") at level " + std::to_string(n));
      }
  }

  GeneratorMatrix g;
  g.kind = GeneratorKind::Quotient;
  g.ambient_shells = K;
  g.time_scale = walk_time_scale(n, calibration);
  g.mass = mesh_mass(*target);
  const auto nv = static_cast<Eigen::Index>(nq);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(nv, nv);
  for (std::size_t q = 0; q < nq; ++q)
    for (auto [c, v] : rows[q]) p(static_cast<Eigen::Index>(q), c) = v;
  const Eigen::VectorXd s = g.mass.cwiseSqrt();
  Eigen::MatrixXd psym = s.asDiagonal() * p * s.cwiseInverse().asDiagonal();
  const double asym = max_asymmetry(psym);
  if (asym > 1e-12) throw ConsistencyError("laplacian_reflected: quotient chain is not reversible for the mesh masses");
  psym = 0.5 * (psym + psym.transpose());
  g.matrix = g.time_scale * (Eigen::MatrixXd::Identity(nv, nv) - psym);
  g.mesh = target;
  return g;
}

/// Eigenvalues within roundoff of zero are snapped to exactly 0, since phi
/// may be steep there (phi(1e-14) = 1e-7 for gamma = 1/2).
inline double snap_to_zero(double lambda, double scale) { return lambda <= 1e-11 * scale ? 0.0 : lambda; }

/// Same eigenvectors, eigenvalues phi(lambda).
inline EigenDecomposition subordinate(const EigenDecomposition& d, const SubordinatorSpec& spec) {
  validate(spec);
  EigenDecomposition out;
  out.eigenvalues.resize(d.size());
  const double scale = d.size() > 0 ? d.eigenvalues.cwiseAbs().maxCoeff() : 0.0;
  for (Eigen::Index k = 0; k < d.size(); ++k)
    out.eigenvalues[k] = bernstein_eval(spec, snap_to_zero(d.eigenvalues[k], scale));
  out.eigenvectors = d.eigenvectors;
  return out;
}

/// A = U phi(Lambda) U^T.
inline GeneratorMatrix subordinate_generator(const GeneratorMatrix& base, const EigenDecomposition& d,
                                             const SubordinatorSpec& spec) {
  validate(spec);
  GeneratorMatrix g;
  g.mesh = base.mesh;
  g.kind = GeneratorKind::Subordinated;
  g.ambient_shells = base.ambient_shells;
  g.mass = base.mass;
  g.time_scale = base.time_scale;
  const double scale = d.size() > 0 ? d.eigenvalues.cwiseAbs().maxCoeff() : 0.0;
  g.matrix = matrix_function(d, [&](double l) { return bernstein_eval(spec, snap_to_zero(l, scale)); });
  return g;
}

/// U e^{-t Lambda} U^T.
inline Eigen::MatrixXd heat_matrix(const EigenDecomposition& d, double t) {
  if (!(t > 0.0)) throw DomainError("heat_matrix: t must be positive");
  return matrix_function(d, [t](double l) { return std::exp(-t * l); });
}

/// Kernel density with respect to the vertex masses.
inline Eigen::MatrixXd heat_density(const Eigen::MatrixXd& h, const Eigen::VectorXd& mass) {
  const Eigen::VectorXd r = mass.cwiseSqrt().cwiseInverse();
  return r.asDiagonal() * h * r.asDiagonal();
}

/// Transition probabilities P_t(x,y) = m_x^{-1/2} H m_y^{1/2}.
inline Eigen::MatrixXd heat_probability(const Eigen::MatrixXd& h, const Eigen::VectorXd& mass) {
  const Eigen::VectorXd s = mass.cwiseSqrt();
  return s.cwiseInverse().asDiagonal() * h * s.asDiagonal();
}

inline void write_eigenvalues_csv(std::ostream& os, const Eigen::VectorXd& values) {
  os << "index,eigenvalue\n";
  char buf[64];
  for (Eigen::Index k = 0; k < values.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", values[k]);
    os << k << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Kernel comparison

struct KernelComparison {
  int M = 0;
  /// max_{x,y in G_M} sum over fiber points of y outside G_{M+1} of p(t,x,y').
  double C_tail = 0.0;
  /// 3^-M sum_x m_x |p(t,x,x) - p^M(t,x,x)|.
  double diag_gap = 0.0;
  /// max |p^M(t, pi x, q) - m_q^-1 sum_{y' in fiber(q)} m_y' p(t,x,y')|.
  double rotation_residual = 0.0;
  /// max over x1 ~ x2 (same projection) of the difference of fiber-summed kernels.
  double sgum_residual = 0.0;
};

/// Ambient pieces reused across diagnostics for one (M, n, K, spec).
struct QuotientPair {
  MeshPtr ambient_mesh;
  MeshPtr mesh;
  GeneratorMatrix ambient;
  GeneratorMatrix quotient;
  EigenDecomposition ambient_sub;
  EigenDecomposition quotient_sub;
  std::vector<std::int32_t> pi;     // ambient index -> G_M index
  std::vector<std::int32_t> embed;  // G_M index -> ambient index
};

inline QuotientPair build_quotient_pair(int M, int n, int K, const SubordinatorSpec& spec, double calibration = 1.0) {
  QuotientPair qp;
  qp.quotient = laplacian_reflected(M, n, K, calibration);
  qp.mesh = qp.quotient.mesh;
  qp.ambient_mesh = make_mesh(M + K, n);
  qp.ambient = laplacian_ambient(qp.ambient_mesh, calibration);
  qp.ambient_sub = subordinate(eigendecompose(qp.ambient.matrix), spec);
  qp.quotient_sub = subordinate(eigendecompose(qp.quotient.matrix), spec);
  qp.pi = projection_map(*qp.ambient_mesh, *qp.mesh);
  qp.embed = embedding_map(*qp.mesh, *qp.ambient_mesh);
  return qp;
}

inline KernelComparison kernel_comparison(const QuotientPair& qp, double t) {
  KernelComparison r;
  r.M = qp.mesh->M();
  const Eigen::VectorXd& ma = qp.ambient.mass;
  const Eigen::VectorXd& mq = qp.quotient.mass;
  const Eigen::MatrixXd ha = heat_matrix(qp.ambient_sub, t);
  const Eigen::MatrixXd hq = heat_matrix(qp.quotient_sub, t);
  const Eigen::MatrixXd pa = heat_density(ha, ma);
  const Eigen::MatrixXd pq = heat_density(hq, mq);
  const Eigen::MatrixXd prob_a = heat_probability(ha, ma);
  const auto na = static_cast<Eigen::Index>(qp.ambient_mesh->size());
  const auto nq = static_cast<Eigen::Index>(qp.mesh->size());

  // Lumped ambient probabilities F(x, q) = sum_{pi y' = q} P_t(x, y').
  Eigen::MatrixXd lumped = Eigen::MatrixXd::Zero(na, nq);
  for (Eigen::Index y = 0; y < na; ++y) lumped.col(qp.pi[static_cast<std::size_t>(y)]) += prob_a.col(y);

  std::vector<Eigen::Index> rep(static_cast<std::size_t>(nq), -1);
  for (Eigen::Index x = 0; x < na; ++x) {
    const auto px = static_cast<Eigen::Index>(qp.pi[static_cast<std::size_t>(x)]);
    for (Eigen::Index q = 0; q < nq; ++q) {
      const double lhs = pq(px, q);
      const double rhs = lumped(x, q) / mq[q];
      r.rotation_residual = std::max(r.rotation_residual, std::abs(lhs - rhs));
    }
    auto& rp = rep[static_cast<std::size_t>(px)];
    if (rp < 0) {
      rp = x;
    } else {
      const double d = ((lumped.row(x) - lumped.row(rp)).transpose().cwiseQuotient(mq)).cwiseAbs().maxCoeff();
      r.sgum_residual = std::max(r.sgum_residual, d);
    }
  }

  const std::int64_t outer = std::int64_t{1} << (qp.mesh->M() + 1 + qp.mesh->n());
  Eigen::MatrixXd tail = Eigen::MatrixXd::Zero(nq, nq);
  for (Eigen::Index y = 0; y < na; ++y) {
    const auto& v = qp.ambient_mesh->vertex(static_cast<std::size_t>(y));
    if (v.i + v.j <= outer) continue;
    const auto q = static_cast<Eigen::Index>(qp.pi[static_cast<std::size_t>(y)]);
    for (Eigen::Index x = 0; x < nq; ++x) tail(x, q) += pa(qp.embed[static_cast<std::size_t>(x)], y);
  }
  r.C_tail = nq > 0 ? tail.maxCoeff() : 0.0;

  double gap = 0.0;
  for (Eigen::Index x = 0; x < nq; ++x) {
    const Eigen::Index ax = qp.embed[static_cast<std::size_t>(x)];
    gap += mq[x] * std::abs(pa(ax, ax) - pq(x, x));
  }
  r.diag_gap = gap * std::pow(3.0, -qp.mesh->M());
  return r;
}

inline KernelComparison kernel_comparison_report(int M, int n, int K, const SubordinatorSpec& spec, double t) {
  return kernel_comparison(build_quotient_pair(M, n, K, spec), t);
}

}  // namespace gasket_ids
