#pragma once

// Seeded random streams and subordinator samplers.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "gasket_ids/bernstein.hpp"
#include "gasket_ids/errors.hpp"

namespace gasket_ids {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of stream k under a master seed; injective in k for a fixed master.
constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream));
}

inline Rng make_stream(std::uint64_t master, std::uint64_t stream) { return Rng(stream_seed(master, stream)); }

/// Uniform on the open interval (0,1).
inline double open_uniform(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double v = 0.0;
  do v = u(rng);
  while (v <= 0.0 || v >= 1.0);
  return v;
}

/// One-sided stable variate with E exp(-l S) = exp(-l^gamma), 0 < gamma <= 1 (Kanter).
inline double sample_positive_stable(double gamma, Rng& rng) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("sample_positive_stable: gamma must lie in (0,1]");
  if (gamma == 1.0) return 1.0;
  const double pi = std::numbers::pi;
  const double u = open_uniform(rng);
  const double e = -std::log(open_uniform(rng));
  const double a = std::pow(std::sin(gamma * pi * u) / std::sin(pi * u), 1.0 / (1.0 - gamma)) *
                   std::sin((1.0 - gamma) * pi * u) / std::sin(gamma * pi * u);
  return std::pow(a / e, (1.0 - gamma) / gamma);
}

struct SamplerStats {
  std::uint64_t proposals = 0;
  std::uint64_t accepted = 0;
  double acceptance_rate() const { return proposals == 0 ? 1.0 : double(accepted) / double(proposals); }
};

/// Increment S_{t+dt} - S_t of the subordinator.
///
/// Relativistic increments are stable increments tilted by exp(-theta s),
/// theta = mu^{1/gamma}, accepted with probability exp(-theta S). The
/// acceptance rate over an interval of length h is exp(-mu h); intervals are
/// split so that each piece accepts with probability at least 1/2.
inline double sample_subordinator_increment(const SubordinatorSpec& spec, double dt, Rng& rng,
                                            SamplerStats* stats = nullptr) {
  if (dt < 0.0) throw DomainError("subordinator increment over a negative interval");
  if (dt == 0.0) return 0.0;
  switch (spec.family) {
    case SubordinatorFamily::IdentityDrift: return spec.drift * dt;
    case SubordinatorFamily::Stable: {
      const double g = spec.gamma();
      return std::pow(dt, 1.0 / g) * sample_positive_stable(std::min(g, 1.0), rng);
    }
    case SubordinatorFamily::StableWithDrift: {
      const double g = spec.gamma();
      return spec.drift * dt + std::pow(dt, 1.0 / g) * sample_positive_stable(g, rng);
    }
    case SubordinatorFamily::StableMixture: {
      double s = 0.0;
      for (const auto& term : spec.mixture) {
        const double g = term.gamma();
        s += std::pow(term.coefficient * dt, 1.0 / g) * sample_positive_stable(g, rng);
      }
      return s;
    }
    case SubordinatorFamily::Relativistic: {
      const double g = spec.gamma();
      const double theta = std::pow(spec.mass, 1.0 / g);
      const int pieces = std::max(1, static_cast<int>(std::ceil(spec.mass * dt / std::log(2.0))));
      const double h = dt / pieces;
      double s = 0.0;
      for (int k = 0; k < pieces; ++k) {
        for (;;) {
          const double x = std::pow(h, 1.0 / g) * sample_positive_stable(g, rng);
          if (stats) ++stats->proposals;
          if (open_uniform(rng) <= std::exp(-theta * x)) {
            if (stats) ++stats->accepted;
            s += x;
            break;
          }
        }
      }
      return s;
    }
    case SubordinatorFamily::LogStable:
    case SubordinatorFamily::Custom:
      throw UnsupportedError("no path sampler for family " + to_string(spec.family) +
                             "; use the spectral route");
  }
  return 0.0;
}

/// S at the grid times (grid increasing from 0). Independent increments.
inline std::vector<double> sample_subordinator_path(const SubordinatorSpec& spec, const std::vector<double>& grid, Rng& rng,
                                                    SamplerStats* stats = nullptr) {
  validate(spec);
  if (grid.empty() || grid.front() != 0.0) throw PreconditionError("subordinator grid must start at 0");
  std::vector<double> s(grid.size(), 0.0);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] > grid[k - 1])) throw PreconditionError("subordinator grid must be increasing");
    s[k] = s[k - 1] + sample_subordinator_increment(spec, grid[k] - grid[k - 1], rng, stats);
  }
  return s;
}

inline std::vector<double> sample_subordinator_path(const SubordinatorSpec& spec, const std::vector<double>& grid,
                                                    std::uint64_t seed, SamplerStats* stats = nullptr) {
  Rng rng(seed);
  return sample_subordinator_path(spec, grid, rng, stats);
}

}  // namespace gasket_ids
