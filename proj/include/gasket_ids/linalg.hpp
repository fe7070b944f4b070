#pragma once

// Dense symmetric eigensolver (LAPACK dsyevd) and spectral calculus helpers.

#include <Eigen/Dense>
#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "gasket_ids/errors.hpp"

namespace gasket_ids {

struct EigenDecomposition {
  /// Ascending.
  Eigen::VectorXd eigenvalues;
  /// Columns are orthonormal eigenvectors; empty for values-only solves.
  Eigen::MatrixXd eigenvectors;

  Eigen::Index size() const { return eigenvalues.size(); }
  bool has_vectors() const { return eigenvectors.size() > 0; }
};

inline double max_asymmetry(const Eigen::MatrixXd& a) {
  double m = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c)
    for (Eigen::Index r = 0; r < c; ++r) m = std::max(m, std::abs(a(r, c) - a(c, r)));
  return m;
}

inline void require_symmetric(const Eigen::MatrixXd& a, double rel_tol = 1e-12) {
  if (a.rows() != a.cols()) throw PreconditionError("matrix is not square");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if (max_asymmetry(a) > rel_tol * scale) throw PreconditionError("matrix is not symmetric");
}

/// Full symmetric eigendecomposition. Only the lower triangle is read.
inline EigenDecomposition eigendecompose(const Eigen::MatrixXd& a, bool vectors = true) {
  require_symmetric(a);
  EigenDecomposition d;
  const auto n = static_cast<lapack_int>(a.rows());
  d.eigenvalues.resize(n);
  if (n == 0) return d;
  Eigen::MatrixXd work = a;
  const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, vectors ? 'V' : 'N', 'L', n, work.data(), n,
                                         d.eigenvalues.data());
  if (info != 0) throw std::runtime_error("dsyevd failed with info " + std::to_string(info));
  if (vectors) d.eigenvectors = std::move(work);
  return d;
}

inline Eigen::VectorXd eigenvalues_only(const Eigen::MatrixXd& a) { return eigendecompose(a, false).eigenvalues; }

/// U diag(f) U^T for f >= 0, formed as a rank update of U sqrt(f).
inline Eigen::MatrixXd spectral_synthesis(const Eigen::MatrixXd& u, const Eigen::VectorXd& f) {
  const Eigen::Index n = u.rows();
  if (f.minCoeff() < 0.0) {
    Eigen::MatrixXd out = u * f.asDiagonal() * u.transpose();
    return 0.5 * (out + out.transpose());
  }
  Eigen::MatrixXd scaled = u * f.cwiseSqrt().asDiagonal();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  out.selfadjointView<Eigen::Lower>().rankUpdate(scaled);
  out.triangularView<Eigen::StrictlyUpper>() = out.transpose();
  return out;
}

/// U g(Lambda) U^T.
template <class F>
Eigen::MatrixXd matrix_function(const EigenDecomposition& d, F&& g) {
  if (!d.has_vectors()) throw PreconditionError("matrix_function needs eigenvectors");
  Eigen::VectorXd f(d.size());
  for (Eigen::Index k = 0; k < d.size(); ++k) f[k] = g(d.eigenvalues[k]);
  return spectral_synthesis(d.eigenvectors, f);
}

}  // namespace gasket_ids
