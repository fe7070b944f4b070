#pragma once

// Path-level simulation of the walk and the subordinate walk, the
// displacement and exit-time experiments, the discrete exponential formula
// and cloud-averaged transform estimates.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gasket_ids/bernstein.hpp"
#include "gasket_ids/errors.hpp"
#include "gasket_ids/geometry.hpp"
#include "gasket_ids/operators.hpp"
#include "gasket_ids/parallel.hpp"
#include "gasket_ids/potentials.hpp"
#include "gasket_ids/random.hpp"
#include "gasket_ids/spectra.hpp"

namespace gasket_ids {

// ---------------------------------------------------------------------------
// Statistics

struct RunningStats {
  std::uint64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double d = x - mean;
    mean += d / static_cast<double>(count);
    m2 += d * (x - mean);
  }
  void merge(const RunningStats& o) {
    if (o.count == 0) return;
    if (count == 0) {
      *this = o;
      return;
    }
    const double n = static_cast<double>(count + o.count);
    const double d = o.mean - mean;
    mean += d * static_cast<double>(o.count) / n;
    m2 += o.m2 + d * d * static_cast<double>(count) * static_cast<double>(o.count) / n;
    count += o.count;
  }
  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double stderr_mean() const { return count > 0 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0; }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Wilson score interval for k successes in n trials.
inline Interval wilson_interval(std::uint64_t k, std::uint64_t n, double z = 1.96) {
  if (n == 0) return {0.0, 1.0};
  const double p = static_cast<double>(k) / static_cast<double>(n);
  const double nn = static_cast<double>(n);
  const double denom = 1.0 + z * z / nn;
  const double centre = (p + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

// ---------------------------------------------------------------------------
// Walk

struct WalkPath {
  /// Jump times; times[0] = 0.
  std::vector<double> times;
  /// Mesh indices after each jump.
  std::vector<std::int32_t> states;
  double horizon = 0.0;

  std::int32_t state_at(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    return states[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

/// Continuous-time simple random walk with holding rate 5^n (times a
/// calibration), the chain generated by laplacian_ambient. Extends lazily.
class WalkSimulator {
 public:
  WalkSimulator(MeshPtr mesh, std::int32_t start, Rng rng, double calibration = 1.0)
      : mesh_(std::move(mesh)), rng_(std::move(rng)), rate_(walk_time_scale(mesh_->n(), calibration)) {
    if (start < 0 || static_cast<std::size_t>(start) >= mesh_->size()) throw PreconditionError("walk start not on mesh");
    path_.times.push_back(0.0);
    path_.states.push_back(start);
    next_jump_ = hold();
  }

  double rate() const { return rate_; }
  const GasketMesh& mesh() const { return *mesh_; }

  /// Clock gaps longer than this are bridged by a draw from the stationary
  /// law (mass-weighted), instead of simulating every jump. 0 disables.
  void set_mixing_time(double tm) {
    mixing_time_ = tm;
    if (tm > 0.0 && !stationary_) {
      const auto w = mesh_->weight_values();
      stationary_.emplace(w.begin(), w.end());
    }
  }

  /// Simulates up to time t (inclusive of jumps at times <= t).
  void extend_to(double t) {
    if (mixing_time_ > 0.0 && t - path_.times.back() > mixing_time_) {
      path_.times.push_back(t);
      path_.states.push_back(static_cast<std::int32_t>((*stationary_)(rng_)));
      next_jump_ = t + hold();
    }
    while (next_jump_ <= t) {
      const auto& nb = mesh_->neighbors(static_cast<std::size_t>(path_.states.back()));
      std::uniform_int_distribution<std::size_t> pick(0, nb.size() - 1);
      path_.times.push_back(next_jump_);
      path_.states.push_back(nb[pick(rng_)]);
      next_jump_ += hold();
    }
    path_.horizon = std::max(path_.horizon, t);
  }

  std::int32_t state_at(double t) {
    extend_to(t);
    return path_.state_at(t);
  }

  const WalkPath& path() const { return path_; }

 private:
  double hold() { return std::exponential_distribution<double>(rate_)(rng_); }

  MeshPtr mesh_;
  Rng rng_;
  double rate_;
  double next_jump_ = 0.0;
  double mixing_time_ = 0.0;
  std::optional<std::discrete_distribution<std::size_t>> stationary_;
  WalkPath path_;
};

/// Gap after which the walk on G_W is treated as mixed: 100 times the
/// crossing time 5^W of the window.
inline double window_mixing_time(const GasketMesh& mesh) { return 100.0 * std::pow(5.0, mesh.M()); }

inline WalkPath simulate_walk(MeshPtr mesh, std::int32_t start, double horizon, std::uint64_t seed,
                              double calibration = 1.0) {
  if (horizon < 0.0) throw DomainError("simulate_walk: negative horizon");
  WalkSimulator sim(std::move(mesh), start, Rng(seed), calibration);
  sim.extend_to(horizon);
  return sim.path();
}

/// Time spent at each mesh vertex during [0, t].
inline std::vector<double> occupation_times(const WalkPath& path, double t, std::size_t mesh_size) {
  if (t > path.horizon) throw PreconditionError("occupation_times: path shorter than t");
  std::vector<double> occ(mesh_size, 0.0);
  for (std::size_t k = 0; k < path.times.size() && path.times[k] < t; ++k) {
    const double end = k + 1 < path.times.size() ? std::min(path.times[k + 1], t) : t;
    occ[static_cast<std::size_t>(path.states[k])] += end - path.times[k];
  }
  return occ;
}

// ---------------------------------------------------------------------------
// Subordinate walk

struct SubordinatePath {
  std::vector<double> grid_times;
  std::vector<std::int32_t> positions;
  std::vector<double> subordinator_values;
};

inline SubordinatePath simulate_subordinate(MeshPtr mesh, std::int32_t start, const SubordinatorSpec& spec,
                                            const std::vector<double>& grid, std::uint64_t seed,
                                            SamplerStats* stats = nullptr) {
  Rng clock = make_stream(seed, 0);
  SubordinatePath p;
  p.grid_times = grid;
  p.subordinator_values = sample_subordinator_path(spec, grid, clock, stats);
  WalkSimulator walk(std::move(mesh), start, make_stream(seed, 1));
  walk.set_mixing_time(window_mixing_time(walk.mesh()));
  for (double s : p.subordinator_values) p.positions.push_back(walk.state_at(s));
  return p;
}

/// Subordinators without jumps move the walk clock continuously, so sups and
/// exits along X are those of the walk on [0, S_t].
inline bool is_continuous_clock(const SubordinatorSpec& spec) { return spec.family == SubordinatorFamily::IdentityDrift; }

// ---------------------------------------------------------------------------
// Displacement tails

struct TailRow {
  int M = 0;
  double radius = 0.0;
  std::uint64_t exceed = 0;
  std::uint64_t trials = 0;
  double probability = 0.0;
  Interval wilson;
};

struct TailResult {
  std::vector<TailRow> rows;
  /// Successive ratios p(M+1)/p(M) where p(M) > 0.
  std::vector<double> ratios;
  bool summable_trend = true;
  bool strictly_decreasing = true;
  /// Paths that reached half the window diameter (reflection may bias them).
  std::uint64_t saturated = 0;
};

/// P[sup_{s<=t} d(X_s, 0) > 2^M] from the origin corner on the mesh
/// G_{window} at level n. Jumping clocks are observed on a grid of
/// grid_steps points.
inline TailResult sup_displacement_tail(const std::vector<int>& M_list, double t, const SubordinatorSpec& spec,
                                        std::uint64_t trials, int n, std::uint64_t seed, int grid_steps = 512,
                                        int window = -1) {
  if (trials < 1000) throw PreconditionError("sup_displacement_tail: needs at least 1000 trials");
  if (M_list.empty()) return {};
  validate(spec);
  const int Mmax = *std::max_element(M_list.begin(), M_list.end());
  if (window < 0) window = std::max(Mmax + 2, 1);
  const MeshPtr mesh = make_mesh(window, n);
  const double unit = std::ldexp(1.0, -n);
  const auto hop = bfs_distances(*mesh, 0);
  std::vector<double> grid(static_cast<std::size_t>(grid_steps) + 1);
  for (int k = 0; k <= grid_steps; ++k) grid[static_cast<std::size_t>(k)] = t * k / grid_steps;

  std::vector<double> sups(trials);
  for (std::uint64_t r = 0; r < trials; ++r) {
    const std::uint64_t s = stream_seed(seed, r);
    double best = 0.0;
    if (is_continuous_clock(spec)) {
      const auto path = simulate_walk(mesh, 0, spec.drift * t, s);
      for (auto v : path.states) best = std::max(best, hop[static_cast<std::size_t>(v)] * unit);
    } else {
      const auto p = simulate_subordinate(mesh, 0, spec, grid, s);
      for (auto v : p.positions) best = std::max(best, hop[static_cast<std::size_t>(v)] * unit);
    }
    sups[r] = best;
  }
  TailResult res;
  const double half = std::ldexp(1.0, window - 1);
  for (double v : sups) res.saturated += v >= half ? 1 : 0;
  for (int M : M_list) {
    TailRow row;
    row.M = M;
    row.radius = std::ldexp(1.0, M);
    row.trials = trials;
    for (double v : sups) row.exceed += v > row.radius ? 1 : 0;
    row.probability = static_cast<double>(row.exceed) / static_cast<double>(trials);
    row.wilson = wilson_interval(row.exceed, trials);
    res.rows.push_back(row);
  }
  for (std::size_t k = 1; k < res.rows.size(); ++k) {
    if (!(res.rows[k].probability < res.rows[k - 1].probability)) res.strictly_decreasing = false;
    if (res.rows[k - 1].probability > 0.0) {
      res.ratios.push_back(res.rows[k].probability / res.rows[k - 1].probability);
      if (!(res.ratios.back() < 1.0)) res.summable_trend = false;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Exit times

/// Vertices of the open ball {y : d(x, y) < r} on the mesh.
inline std::vector<std::int32_t> open_ball(const GasketMesh& mesh, std::int32_t x, double r) {
  const double unit = std::ldexp(1.0, -mesh.n());
  const auto hop = bfs_distances(mesh, x);
  std::vector<std::int32_t> out;
  for (std::size_t k = 0; k < mesh.size(); ++k)
    if (hop[k] >= 0 && hop[k] * unit < r) out.push_back(static_cast<std::int32_t>(k));
  return out;
}

inline void require_resolved(const GasketMesh& mesh, double r) {
  if (r < std::ldexp(1.0, -mesh.n())) throw ResolutionError("exit radius below the mesh unit 2^-" + std::to_string(mesh.n()));
}

/// Ball must not reach the outer corners of the window, where the walk reflects.
inline void require_ball_in_window(const GasketMesh& mesh, const std::vector<std::int32_t>& ball) {
  for (auto k : ball)
    if (mesh.is_corner(static_cast<std::size_t>(k)) && !(mesh.vertex(static_cast<std::size_t>(k)).i == 0 &&
                                                         mesh.vertex(static_cast<std::size_t>(k)).j == 0))
      throw PreconditionError("exit ball reaches the window boundary");
}

/// E_x tau_{B(x,r)} of the walk by the linear solve rate (I - P) u = 1 on the ball.
inline double exit_time_oracle(const GasketMesh& mesh, std::int32_t x, double r, double calibration = 1.0) {
  require_resolved(mesh, r);
  const auto ball = open_ball(mesh, x, r);
  require_ball_in_window(mesh, ball);
  std::vector<std::int32_t> pos(mesh.size(), -1);
  for (std::size_t k = 0; k < ball.size(); ++k) pos[static_cast<std::size_t>(ball[k])] = static_cast<std::int32_t>(k);
  const auto nb = static_cast<Eigen::Index>(ball.size());
  const double rate = walk_time_scale(mesh.n(), calibration);
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(nb, nb) * rate;
  for (Eigen::Index k = 0; k < nb; ++k) {
    const auto v = static_cast<std::size_t>(ball[static_cast<std::size_t>(k)]);
    const double w = rate / mesh.degree(v);
    for (auto y : mesh.neighbors(v))
      if (pos[static_cast<std::size_t>(y)] >= 0) a(k, pos[static_cast<std::size_t>(y)]) -= w;
  }
  const Eigen::VectorXd u = a.partialPivLu().solve(Eigen::VectorXd::Ones(nb));
  return u[pos[static_cast<std::size_t>(x)]];
}

struct ExitRow {
  double r = 0.0;
  /// Start attaining the sup of the estimated means.
  std::int32_t worst_start = -1;
  double mean = 0.0;
  double stderr_mean = 0.0;
  std::uint64_t trials = 0;
};

struct ExitResult {
  std::vector<ExitRow> rows;
  bool monotone = true;
};

/// sup over starts of the estimated mean exit time of the open ball B(x, r).
/// Jumping clocks are observed on a grid of step dt (default 1 / (20 rate)).
inline ExitResult mean_exit_time(const MeshPtr& mesh, const std::vector<double>& r_list,
                                 const std::vector<std::int32_t>& starts, std::uint64_t trials, std::uint64_t seed,
                                 const SubordinatorSpec& spec = SubordinatorSpec::identity(), double dt = 0.0) {
  validate(spec);
  const double rate = walk_time_scale(mesh->n());
  if (dt <= 0.0) dt = 1.0 / (20.0 * rate);
  ExitResult res;
  std::uint64_t stream = 0;
  for (double r : r_list) {
    require_resolved(*mesh, r);
    ExitRow row;
    row.r = r;
    row.trials = trials;
    row.mean = -1.0;
    for (auto x : starts) {
      const auto ball = open_ball(*mesh, x, r);
      require_ball_in_window(*mesh, ball);
      std::vector<char> inside(mesh->size(), 0);
      for (auto b : ball) inside[static_cast<std::size_t>(b)] = 1;
      RunningStats st;
      for (std::uint64_t k = 0; k < trials; ++k) {
        const std::uint64_t s = stream_seed(seed, stream++);
        WalkSimulator walk(mesh, x, make_stream(s, 1));
        double tau = 0.0;
        if (is_continuous_clock(spec)) {
          double clock = 0.0;
          std::size_t j = 1;
          bool left = false;
          while (!left) {
            clock += 1.0 / rate;
            walk.extend_to(clock);
            const auto& p = walk.path();
            for (; j < p.states.size(); ++j)
              if (!inside[static_cast<std::size_t>(p.states[j])]) {
                tau = p.times[j] / spec.drift;
                left = true;
                break;
              }
          }
        } else {
          walk.set_mixing_time(window_mixing_time(*mesh));
          Rng clock = make_stream(s, 0);
          double S = 0.0, time = 0.0;
          for (;;) {
            time += dt;
            S += sample_subordinator_increment(spec, dt, clock);
            if (!inside[static_cast<std::size_t>(walk.state_at(S))]) {
              tau = time;
              break;
            }
          }
        }
        st.add(tau);
      }
      if (st.mean > row.mean) {
        row.mean = st.mean;
        row.stderr_mean = st.stderr_mean();
        row.worst_start = x;
      }
    }
    res.rows.push_back(row);
  }
  for (std::size_t k = 1; k < res.rows.size(); ++k)
    if ((res.rows[k].r > res.rows[k - 1].r) != (res.rows[k].mean > res.rows[k - 1].mean)) res.monotone = false;
  return res;
}

// ---------------------------------------------------------------------------
// Exponential formula

struct FormulaCheck {
  double mean = 0.0;
  double stderr_mean = 0.0;
  double closed_form = 0.0;
  std::uint64_t clouds = 0;
  bool within(double k_se) const { return std::abs(mean - closed_form) <= k_se * stderr_mean + 1e-15; }
};

/// Average over clouds on the window of exp(-sum_i f(y_i)) against
/// exp(-nu sum_cells m_cell (1 - e^{-f})), with f given per window cell.
inline FormulaCheck exponential_formula_check(const std::vector<double>& f_per_cell, const MeshPtr& window, double nu,
                                              std::uint64_t clouds, std::uint64_t seed) {
  const auto cells = window->cells();
  if (f_per_cell.size() != cells.size()) throw PreconditionError("exponential_formula_check: one value per cell");
  const double cell_mass = std::pow(3.0, -window->n());
  FormulaCheck r;
  r.clouds = clouds;
  double s = 0.0;
  for (double f : f_per_cell) s += cell_mass * -std::expm1(-f);
  r.closed_form = std::exp(-nu * s);
  // Index anchors back to cells.
  std::vector<std::int64_t> slot;
  const std::int64_t side = std::int64_t{1} << (window->M() + window->n());
  slot.assign(static_cast<std::size_t>(side * side), -1);
  for (std::size_t c = 0; c < cells.size(); ++c) slot[static_cast<std::size_t>(cells[c].I * side + cells[c].J)] = static_cast<std::int64_t>(c);
  RunningStats st;
  for (std::uint64_t k = 0; k < clouds; ++k) {
    const auto cl = sample_cloud(nu, window, stream_seed(seed, k));
    double e = 0.0;
    for (const auto& y : cl.points) {
      const auto p = y.at_level(window->n() + 1);
      e += f_per_cell[static_cast<std::size_t>(slot[static_cast<std::size_t>(((p.i - 1) / 2) * side + p.j / 2)])];
    }
    st.add(std::exp(-e));
  }
  r.mean = st.mean;
  r.stderr_mean = st.stderr_mean();
  return r;
}

/// f = c on the cells of A (given by a predicate on cell anchors), 0 elsewhere.
/// The closed form is exp(-nu m(A) (1 - e^{-c})).
template <class Pred>
FormulaCheck exponential_formula_on_set(Pred in_A, double c, const MeshPtr& window, double nu, std::uint64_t clouds,
                                        std::uint64_t seed) {
  std::vector<double> f;
  for (const auto& cell : window->cells()) f.push_back(in_A(cell_anchor(cell, window->n())) ? c : 0.0);
  return exponential_formula_check(f, window, nu, clouds, seed);
}

/// f(y) = int_0^t W(Z_s, y) ds along a fixed walk path on the window mesh.
inline std::vector<double> path_functional(const WalkPath& path, double t, const ProfileSpec& profile,
                                           const GeodesicMetric& metric) {
  const auto& window = metric.mesh();
  const auto occ = occupation_times(path, t, window.size());
  std::vector<double> f;
  for (const auto& cell : window.cells()) {
    const LatticePoint y = cell_anchor(cell, window.n());
    double s = 0.0;
    for (std::size_t x = 0; x < occ.size(); ++x)
      if (occ[x] > 0.0) s += occ[x] * profile_eval(profile, window.vertex(x), y, metric);
    f.push_back(s);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Cloud-averaged transforms

/// What the cloud generates: a profile potential, killing obstacles, or nothing.
struct PotentialSource {
  std::optional<ProfileSpec> profile;
  std::optional<double> obstacle_radius;
};

inline SuitePotentials suite_potentials(const SuiteOperators& ops, const PoissonCloud& cloud, const PotentialSource& src,
                                        const GeodesicMetric& metric) {
  if (src.obstacle_radius) return obstacle_potentials(ops, cloud, *src.obstacle_radius, metric);
  if (src.profile) return profile_potentials(ops, cloud, *src.profile, metric);
  return zero_potentials(ops);
}

/// Cloud r of an experiment; shared across M (common random numbers).
inline PoissonCloud experiment_cloud(double nu, const GeodesicMetric& metric, std::uint64_t master, std::uint64_t r) {
  const std::uint64_t s = stream_seed(master, r);
  return sample_cloud(nu, metric.mesh_ptr(), s);
}

/// Per-cloud transforms [cloud][t].
inline std::vector<std::vector<FourTransforms>> cloud_transforms(const SuiteOperators& ops, const GeodesicMetric& metric,
                                                                 const PotentialSource& src, double nu,
                                                                 std::uint64_t clouds, std::uint64_t master,
                                                                 const std::vector<double>& ts, unsigned workers = 1) {
  std::vector<std::vector<FourTransforms>> out(clouds);
  parallel_for(clouds, workers, [&](std::size_t r) {
    const auto cloud = experiment_cloud(nu, metric, master, r);
    out[r] = four_transform_suite(ops, suite_potentials(ops, cloud, src, metric), ts);
  });
  return out;
}

struct AnnealedEstimate {
  double t = 0.0;
  RunningStats D, N, Dstar, Nstar;
};

inline std::vector<AnnealedEstimate> summarize_transforms(const std::vector<std::vector<FourTransforms>>& per_cloud,
                                                          const std::vector<double>& ts) {
  std::vector<AnnealedEstimate> est(ts.size());
  for (std::size_t k = 0; k < ts.size(); ++k) est[k].t = ts[k];
  for (const auto& row : per_cloud)
    for (std::size_t k = 0; k < ts.size(); ++k) {
      est[k].D.add(row[k].L_D);
      est[k].N.add(row[k].L_N);
      est[k].Dstar.add(row[k].L_Dstar);
      est[k].Nstar.add(row[k].L_Nstar);
    }
  return est;
}

inline std::vector<AnnealedEstimate> annealed_transform_estimate(const SuiteOperators& ops, const GeodesicMetric& metric,
                                                                 const PotentialSource& src, double nu,
                                                                 std::uint64_t clouds, std::uint64_t master,
                                                                 const std::vector<double>& ts, unsigned workers = 1) {
  if (clouds < 30) throw PreconditionError("annealed_transform_estimate: needs at least 30 clouds");
  return summarize_transforms(cloud_transforms(ops, metric, src, nu, clouds, master, ts, workers), ts);
}

// ---------------------------------------------------------------------------
// CSV

struct MonteCarloRow {
  std::string experiment;
  int M = 0;
  double t = 0.0;
  std::string estimator;
  double mean = 0.0;
  double stderr_mean = 0.0;
  std::uint64_t trials = 0;
  std::uint64_t seed = 0;
};

inline void write_montecarlo_header(std::ostream& os) { os << "experiment,M,t,estimator,mean,stderr,trials,seed\n"; }

inline void write_montecarlo_row(std::ostream& os, const MonteCarloRow& r) {
  os << r.experiment << ',' << r.M << ',' << format_double(r.t) << ',' << r.estimator << ',' << format_double(r.mean)
     << ',' << format_double(r.stderr_mean) << ',' << r.trials << ',' << r.seed << '\n';
}

}  // namespace gasket_ids
