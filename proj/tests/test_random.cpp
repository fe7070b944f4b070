#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gasket_ids/random.hpp"

using namespace gasket_ids;

namespace {

struct Moments {
  double mean = 0.0;
  double se = 0.0;
};

template <class F>
Moments moments(int n, F&& draw) {
  double s = 0.0, s2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double v = draw();
    s += v;
    s2 += v * v;
  }
  const double m = s / n;
  return {m, std::sqrt(std::max(0.0, s2 / n - m * m) / n)};
}

}  // namespace

TEST(Streams, SeedsAreInjectiveOverStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t k = 0; k < 100000; ++k) seen.insert(stream_seed(42, k));
  EXPECT_EQ(seen.size(), 100000u);
}

TEST(Streams, Deterministic) {
  auto a = make_stream(7, 3);
  auto b = make_stream(7, 3);
  for (int k = 0; k < 100; ++k) EXPECT_EQ(a(), b());
}

TEST(Subordinator, IdentityIsDeterministicClock) {
  const std::vector<double> grid{0.0, 0.5, 1.0, 2.5};
  const auto s = sample_subordinator_path(SubordinatorSpec::identity(), grid, 1);
  for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_DOUBLE_EQ(s[k], grid[k]);
}

TEST(Subordinator, StableHalfLaplaceTransformAtOne) {
  Rng rng(11);
  const auto spec = SubordinatorSpec::stable_gamma(0.5);
  const auto m = moments(100000, [&] { return std::exp(-sample_subordinator_increment(spec, 1.0, rng)); });
  EXPECT_NEAR(m.mean, std::exp(-1.0), 4.0 * m.se);
}

class MarginalLaplace : public ::testing::TestWithParam<double> {};

TEST_P(MarginalLaplace, MatchesBernsteinExponent) {
  const double lambda = GetParam();
  const double t = 0.7;
  const std::vector<SubordinatorSpec> specs{SubordinatorSpec::stable_gamma(0.5), SubordinatorSpec::stable_gamma(0.8),
                                            SubordinatorSpec::stable_with_drift(0.3, 0.6 * kWalkDim),
                                            SubordinatorSpec::stable_mixture({{0.4 * kWalkDim, 1.0}, {0.7 * kWalkDim, 0.5}}),
                                            SubordinatorSpec::relativistic(0.5 * kWalkDim, 1.5)};
  for (std::size_t s = 0; s < specs.size(); ++s) {
    Rng rng(100 + s);
    const auto m = moments(40000, [&] { return std::exp(-lambda * sample_subordinator_increment(specs[s], t, rng)); });
    EXPECT_NEAR(m.mean, std::exp(-t * bernstein_eval(specs[s], lambda)), 4.0 * m.se + 1e-12)
        << to_string(specs[s].family);
  }
}

INSTANTIATE_TEST_SUITE_P(Lambdas, MarginalLaplace, ::testing::Values(0.5, 1.0, 2.0));

TEST(Subordinator, IncrementsOverDisjointIntervalsUncorrelated) {
  const int N = 20000;
  const std::vector<double> grid{0.0, 1.0, 2.0};
  Rng rng(5);
  const auto spec = SubordinatorSpec::stable_gamma(0.8);
  std::vector<double> a(N), b(N);
  for (int k = 0; k < N; ++k) {
    const auto s = sample_subordinator_path(spec, grid, rng);
    // Bounded transforms keep the correlation estimate well behaved under heavy tails.
    a[static_cast<std::size_t>(k)] = std::exp(-s[1]);
    b[static_cast<std::size_t>(k)] = std::exp(-(s[2] - s[1]));
  }
  double ma = 0, mb = 0;
  for (int k = 0; k < N; ++k) ma += a[k], mb += b[k];
  ma /= N, mb /= N;
  double cab = 0, va = 0, vb = 0;
  for (int k = 0; k < N; ++k) {
    cab += (a[k] - ma) * (b[k] - mb);
    va += (a[k] - ma) * (a[k] - ma);
    vb += (b[k] - mb) * (b[k] - mb);
  }
  EXPECT_LT(std::abs(cab / std::sqrt(va * vb)), 4.0 / std::sqrt(double(N)));
}

TEST(Subordinator, PathsAreNondecreasingFromZero) {
  std::vector<double> grid{0.0};
  for (int k = 1; k <= 50; ++k) grid.push_back(0.1 * k);
  const auto s = sample_subordinator_path(SubordinatorSpec::relativistic(1.0, 2.0), grid, 9);
  EXPECT_EQ(s.front(), 0.0);
  for (std::size_t k = 1; k < s.size(); ++k) EXPECT_GE(s[k], s[k - 1]);
}

TEST(Subordinator, RelativisticAcceptanceRateReported) {
  SamplerStats stats;
  Rng rng(3);
  const auto spec = SubordinatorSpec::relativistic(0.5 * kWalkDim, 1.0);
  for (int k = 0; k < 5000; ++k) sample_subordinator_increment(spec, 0.5, rng, &stats);
  EXPECT_GT(stats.proposals, 0u);
  // exp(-mu h) with h = 0.5.
  EXPECT_NEAR(stats.acceptance_rate(), std::exp(-0.5), 0.03);
}

TEST(Subordinator, UnsupportedFamiliesThrow) {
  Rng rng(1);
  EXPECT_THROW(sample_subordinator_increment(SubordinatorSpec::log_stable(1.0, 0.2), 1.0, rng), UnsupportedError);
  EXPECT_THROW(sample_subordinator_increment(SubordinatorSpec::custom_fn([](double l) { return l; }), 1.0, rng),
               UnsupportedError);
}

TEST(Subordinator, GridValidation) {
  EXPECT_THROW(sample_subordinator_path(SubordinatorSpec::identity(), {0.5, 1.0}, 1), PreconditionError);
  EXPECT_THROW(sample_subordinator_path(SubordinatorSpec::identity(), {0.0, 1.0, 1.0}, 1), PreconditionError);
}
