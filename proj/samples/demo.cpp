// One Poisson cloud, one tent profile, the four Laplace transforms at M = 1, 2.

#include <iostream>

#include "gasket_ids/gasket_ids.hpp"

using namespace gasket_ids;

int main() {
  pin_blas_threads();
  const int n = 2, K = 1;
  const auto spec = SubordinatorSpec::stable_gamma(0.5);
  const ProfileSpec profile = RadialProfile{1.0, RadialShape::Tent};
  const GeodesicMetric metric(make_mesh(2 + K, n));
  const auto cloud = sample_cloud(1.0, metric.mesh_ptr(), 7);
  std::cout << "cloud: " << cloud.points.size() << " points in G_" << 2 + K << "\n";

  for (int M : {1, 2}) {
    const auto ops = build_suite_operators(M, n, K, spec);
    const auto v = profile_potentials(ops, cloud, profile, metric);
    const auto s = suite_spectra(ops, v, cloud.seed);
    for (double t : {0.5, 2.0}) {
      const auto f = transforms_at(s, t);
      std::cout << "M=" << M << " t=" << t << "  L_D=" << f.L_D << "  L_N=" << f.L_N << "  L_D*=" << f.L_Dstar
                << "  L_N*=" << f.L_Nstar << "\n";
    }
  }
  std::cout << "verlog bound (gamma=1/2, t=1): " << format_double(verlog_bound(spec, 1.0)) << "\n";
  std::cout << "collar(M=2, r=1/2): " << collar_measure(2, Rational(1, 2)) << "\n";
  return 0;
}
