#pragma once

// Bernstein functions phi (Laplace exponents of subordinators).
// Stable indices are given as alpha in (0, d_w]; the power is gamma = alpha / d_w.

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gasket_ids/errors.hpp"
#include "gasket_ids/geometry.hpp"

namespace gasket_ids {

enum class SubordinatorFamily { IdentityDrift, Stable, StableMixture, StableWithDrift, Relativistic, LogStable, Custom };

inline std::string to_string(SubordinatorFamily f) {
  switch (f) {
    case SubordinatorFamily::IdentityDrift: return "identity-drift";
    case SubordinatorFamily::Stable: return "stable";
    case SubordinatorFamily::StableMixture: return "stable-mixture";
    case SubordinatorFamily::StableWithDrift: return "stable-with-drift";
    case SubordinatorFamily::Relativistic: return "relativistic";
    case SubordinatorFamily::LogStable: return "log-stable";
    case SubordinatorFamily::Custom: return "custom";
  }
  return "unknown";
}

inline SubordinatorFamily subordinator_family_from_string(const std::string& s) {
  for (auto f : {SubordinatorFamily::IdentityDrift, SubordinatorFamily::Stable, SubordinatorFamily::StableMixture,
                 SubordinatorFamily::StableWithDrift, SubordinatorFamily::Relativistic, SubordinatorFamily::LogStable,
                 SubordinatorFamily::Custom})
    if (to_string(f) == s) return f;
  throw SpecError("unknown subordinator family '" + s + "'");
}

/// One term c * lambda^(alpha/d_w) of a stable mixture.
struct StableTerm {
  double alpha = 0.0;
  double coefficient = 1.0;
  double gamma() const { return alpha / kWalkDim; }
};

struct SubordinatorSpec {
  SubordinatorFamily family = SubordinatorFamily::IdentityDrift;
  double alpha = kWalkDim;
  /// b: drift coefficient (identity-drift uses it as the clock speed).
  double drift = 1.0;
  /// mu for the relativistic family.
  double mass = 0.0;
  /// beta for the log-perturbed family.
  double beta = 0.0;
  std::vector<StableTerm> mixture;
  std::function<double(double)> custom;
  std::string label;

  double gamma() const { return alpha / kWalkDim; }

  static SubordinatorSpec identity(double b = 1.0) {
    SubordinatorSpec s;
    s.family = SubordinatorFamily::IdentityDrift;
    s.drift = b;
    return s;
  }
  static SubordinatorSpec stable(double alpha) {
    SubordinatorSpec s;
    s.family = SubordinatorFamily::Stable;
    s.alpha = alpha;
    s.drift = 0.0;
    return s;
  }
  /// Stable family parametrized directly by gamma = alpha / d_w.
  static SubordinatorSpec stable_gamma(double gamma) { return stable(gamma * kWalkDim); }
  static SubordinatorSpec stable_mixture(std::vector<StableTerm> terms) {
    SubordinatorSpec s;
    s.family = SubordinatorFamily::StableMixture;
    s.mixture = std::move(terms);
    s.drift = 0.0;
    return s;
  }
  static SubordinatorSpec stable_with_drift(double b, double alpha) {
    SubordinatorSpec s;
    s.family = SubordinatorFamily::StableWithDrift;
    s.drift = b;
    s.alpha = alpha;
    return s;
  }
  static SubordinatorSpec relativistic(double alpha, double mu) {
    SubordinatorSpec s;
    s.family = SubordinatorFamily::Relativistic;
    s.alpha = alpha;
    s.mass = mu;
    s.drift = 0.0;
    return s;
  }
  static SubordinatorSpec log_stable(double alpha, double beta) {
    SubordinatorSpec s;
    s.family = SubordinatorFamily::LogStable;
    s.alpha = alpha;
    s.beta = beta;
    s.drift = 0.0;
    return s;
  }
  static SubordinatorSpec custom_fn(std::function<double(double)> fn, std::string name = "custom") {
    SubordinatorSpec s;
    s.family = SubordinatorFamily::Custom;
    s.custom = std::move(fn);
    s.label = std::move(name);
    s.drift = 0.0;
    return s;
  }
};

/// Throws SpecError when parameters leave the admissible ranges.
inline void validate(const SubordinatorSpec& s) {
  auto bad = [&](const std::string& what) { throw SpecError(to_string(s.family) + ": " + what); };
  const double dw = kWalkDim;
  switch (s.family) {
    case SubordinatorFamily::IdentityDrift:
      if (!(s.drift > 0.0) || !std::isfinite(s.drift)) bad("drift must be positive");
      break;
    case SubordinatorFamily::Stable:
      if (!(s.alpha > 0.0 && s.alpha <= dw + 1e-12)) bad("alpha must lie in (0, d_w]");
      break;
    case SubordinatorFamily::StableMixture:
      if (s.mixture.empty()) bad("mixture needs at least one term");
      for (const auto& t : s.mixture) {
        if (!(t.alpha > 0.0 && t.alpha < dw)) bad("mixture alpha must lie in (0, d_w)");
        if (!(t.coefficient > 0.0) || !std::isfinite(t.coefficient)) bad("mixture coefficient must be positive");
      }
      break;
    case SubordinatorFamily::StableWithDrift:
      if (!(s.alpha > 0.0 && s.alpha < dw)) bad("alpha must lie in (0, d_w)");
      if (!(s.drift > 0.0) || !std::isfinite(s.drift)) bad("drift must be positive");
      break;
    case SubordinatorFamily::Relativistic:
      if (!(s.alpha > 0.0 && s.alpha < dw)) bad("alpha must lie in (0, d_w)");
      if (!(s.mass > 0.0) || !std::isfinite(s.mass)) bad("mass must be positive");
      break;
    case SubordinatorFamily::LogStable: {
      if (!(s.alpha > 0.0 && s.alpha < dw)) bad("alpha must lie in (0, d_w)");
      const bool neg = s.beta > -s.alpha && s.beta < 0.0;
      const bool pos = s.beta > 0.0 && s.beta < dw - s.alpha;
      if (!neg && !pos) bad("beta must lie in (-alpha, 0) or (0, d_w - alpha)");
      break;
    }
    case SubordinatorFamily::Custom:
      if (!s.custom) bad("custom family needs a function");
      break;
  }
}

/// phi(lambda).
inline double bernstein_eval(const SubordinatorSpec& s, double lambda) {
  if (lambda < 0.0 || std::isnan(lambda)) throw DomainError("bernstein_eval: lambda must be nonnegative");
  if (lambda == 0.0) return 0.0;
  switch (s.family) {
    case SubordinatorFamily::IdentityDrift: return s.drift * lambda;
    case SubordinatorFamily::Stable: return std::pow(lambda, s.gamma());
    case SubordinatorFamily::StableMixture: {
      double acc = 0.0;
      for (const auto& t : s.mixture) acc += t.coefficient * std::pow(lambda, t.gamma());
      return acc;
    }
    case SubordinatorFamily::StableWithDrift: return s.drift * lambda + std::pow(lambda, s.gamma());
    case SubordinatorFamily::Relativistic: {
      const double g = s.gamma();
      const double theta = std::pow(s.mass, 1.0 / g);
      // (lambda + theta)^g - theta^g without cancellation for small lambda.
      return std::pow(theta, g) * std::expm1(g * std::log1p(lambda / theta));
    }
    case SubordinatorFamily::LogStable:
      return std::pow(lambda, s.gamma()) * std::pow(std::log1p(lambda), s.beta / kWalkDim);
    case SubordinatorFamily::Custom: return s.custom(lambda);
  }
  return 0.0;
}

struct BernsteinSanity {
  bool ok = true;
  std::string failure;
};

/// phi(0) = 0, nondecreasing and concave on a log grid of 1000 points in [1e-6, 1e6].
inline BernsteinSanity bernstein_sanity(const SubordinatorSpec& s, int points = 1000) {
  BernsteinSanity r;
  if (bernstein_eval(s, 0.0) != 0.0) return {false, "phi(0) != 0"};
  std::vector<double> lam(static_cast<std::size_t>(points) + 1, 0.0);
  for (int k = 0; k < points; ++k) lam[static_cast<std::size_t>(k) + 1] = std::pow(10.0, -6.0 + 12.0 * k / (points - 1));
  std::vector<double> val(lam.size());
  for (std::size_t k = 0; k < lam.size(); ++k) {
    val[k] = bernstein_eval(s, lam[k]);
    if (!std::isfinite(val[k]) || val[k] < 0.0) return {false, "phi not finite and nonnegative at " + std::to_string(lam[k])};
  }
  double prev_slope = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < lam.size(); ++k) {
    const double dv = val[k + 1] - val[k];
    if (dv < -1e-12 * std::max(1.0, std::abs(val[k]))) return {false, "phi decreases near " + std::to_string(lam[k])};
    const double slope = dv / (lam[k + 1] - lam[k]);
    if (slope > prev_slope * (1.0 + 1e-7) + 1e-12) return {false, "phi not concave near " + std::to_string(lam[k])};
    prev_slope = slope;
  }
  return r;
}

/// t * int_0^1 phi(l)/l dl + e^-1, computed as t * int_0^inf phi(e^-u) du
/// over doubling intervals with Gauss-Kronrod. The integrand must have
/// decayed before e^-u underflows (u ~ 700); otherwise DomainError.
inline double verlog_bound(const SubordinatorSpec& s, double t) {
  if (t < 0.0 || !std::isfinite(t)) throw DomainError("verlog_bound: t must be nonnegative");
  validate(s);
  using boost::math::quadrature::gauss_kronrod;
  auto f = [&](double u) { return bernstein_eval(s, std::exp(-u)); };
  constexpr double kLastU = 704.0;
  double total = 0.0;
  double a = 0.0;
  double b = 1.0;
  bool settled = false;
  for (int piece = 0; a < kLastU; ++piece) {
    double err = 0.0;
    const double part = gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-13, &err);
    if (!std::isfinite(part)) break;
    total += part;
    if (piece >= 3 && std::abs(part) <= 1e-13 * std::abs(total)) {
      settled = true;
      break;
    }
    a = b;
    b = std::min(2.0 * b, kLastU);
  }
  if (!settled)
    throw DomainError("verlog_bound: int_0^1 phi(l)/l dl does not converge for family " + to_string(s.family) +
                      "; the bound's hypothesis fails");
  return t * total + std::exp(-1.0);
}

}  // namespace gasket_ids
