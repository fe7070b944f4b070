// Acceptance runner: one pass/fail line per criterion.
//
//   acceptance                 run all criteria
//   acceptance --criterion N   run one criterion

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "gasket_ids/gasket_ids.hpp"

using namespace gasket_ids;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::vector<std::string> notes;

  void check(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      notes.push_back("FAILED " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

unsigned workers() { return std::max(1u, std::thread::hardware_concurrency()); }

bool ifs_oracle(std::int64_t I, std::int64_t J, int depth) {
  if (I < 0 || J < 0) return false;
  const std::int64_t side = std::int64_t{1} << depth;
  if (I + J >= side) return false;
  if (depth == 0) return true;
  const std::int64_t h = side / 2;
  if (I >= h) return ifs_oracle(I - h, J, depth - 1);
  if (J >= h) return ifs_oracle(I, J - h, depth - 1);
  if (I + J >= h) return false;
  return ifs_oracle(I, J, depth - 1);
}

void geometry_exactness(Outcome& o) {
  std::size_t mismatches = 0, cells = 0;
  for (int depth = 0; depth <= 8; ++depth) {
    const std::int64_t S = std::int64_t{1} << depth;
    for (std::int64_t I = 0; I < S; ++I)
      for (std::int64_t J = 0; I + J < S; ++J) {
        ++cells;
        if (cell_is_in_gasket(I, J) != ifs_oracle(I, J, depth)) ++mismatches;
      }
  }
  o.check(mismatches == 0, "cell membership vs IFS oracle");
  o.note("membership checked on " + std::to_string(cells) + " cells");
  bool counts = true;
  for (int M = 0; M <= 3; ++M)
    for (int n = 0; M + n <= 7; ++n) {
      const auto mesh = build_mesh(M, n);
      counts = counts && static_cast<std::int64_t>(mesh.size()) == (ipow(3, M + n + 1) + 3) / 2 &&
               static_cast<std::int64_t>(mesh.cells().size()) == ipow(3, M + n) && mesh.total_mass() == pow3(M);
    }
  o.check(counts, "vertex/cell counts and total mass 3^M");
  const Rational c1 = collar_measure(1, Rational(1)), c2 = collar_measure(2, Rational(1));
  o.check(c1 == Rational(2), "collar(M=1,r=1) = 2");
  o.check(c2 == Rational(4), "collar(M=2,r=1) = 4");
  o.note("collar " + c1.str() + ", " + c2.str());
}

void labeling_projection(Outcome& o) {
  std::size_t triangles = 0, bad = 0;
  for (int M = 0; M <= 3; ++M)
    for (int n = 0; n <= 4; ++n) {
      const std::int64_t s = std::int64_t{1} << M, side = std::int64_t{1} << n;
      for (std::int64_t I = 0; I < side; ++I)
        for (std::int64_t J = 0; I + J < side; ++J) {
          if (!cell_is_in_gasket(I, J)) continue;
          ++triangles;
          std::set<Label> ls{vertex_label({I * s, J * s, 0}, M), vertex_label({(I + 1) * s, J * s, 0}, M),
                             vertex_label({I * s, (J + 1) * s, 0}, M)};
          if (ls.size() != 3) ++bad;
        }
    }
  o.check(bad == 0, "distinct labels on every size-2^M triangle");
  std::size_t proj_bad = 0, projected = 0;
  for (int M = 0; M <= 3; ++M)
    for (int n = 0; n <= 3; ++n) {
      const auto big = build_mesh(M + 3, n);
      const auto small = build_mesh(M, n);
      for (const auto& v : big.vertices()) {
        ++projected;
        const auto q = project(v, M);
        if (q.level != v.level || !small.index_of(q) || !(project(q, M) == q)) ++proj_bad;
      }
    }
  o.check(proj_bad == 0, "projection idempotent, integer exact, lands in G_M");
  std::size_t fiber_bad = 0;
  for (int M = 0; M <= 2; ++M)
    for (int K = 0; K <= 3; ++K) {
      const auto mesh = build_mesh(M, 2);
      for (const auto& q : mesh.vertices()) {
        const auto f = fiber(q, M, K);
        if (!f.on_vertex_set && static_cast<std::int64_t>(f.points.size()) != ipow(3, K)) ++fiber_bad;
        if (f.on_vertex_set && static_cast<std::int64_t>(f.points.size()) > ipow(3, K)) ++fiber_bad;
        if (K == 1 && f.points.size() > 3) ++fiber_bad;
        for (const auto& p : f.points)
          if (!(project(p, M) == q)) ++fiber_bad;
      }
    }
  o.check(fiber_bad == 0, "fiber sizes 3^K and K=1 fibers have at most 3 points");
  o.note(std::to_string(triangles) + " triangles, " + std::to_string(projected) + " projections");
}

void quotient_identities(Outcome& o) {
  const auto qp = build_quotient_pair(1, 3, 2, SubordinatorSpec::stable_gamma(0.5));
  double sgum = 0.0, rot = 0.0;
  for (double t : {0.25, 1.0, 4.0}) {
    const auto r = kernel_comparison(qp, t);
    sgum = std::max(sgum, r.sgum_residual);
    rot = std::max(rot, r.rotation_residual);
  }
  o.check(sgum < 1e-10, "fiber-sum invariance residual < 1e-10");
  o.check(rot < 1e-10, "rotation identity residual < 1e-10");
  o.note("fiber-sum " + fmt(sgum) + ", rotation " + fmt(rot));
}

void kernel_trends(Outcome& o) {
  std::vector<KernelComparison> r;
  for (int M : {1, 2, 3}) r.push_back(kernel_comparison_report(M, 2, 2, SubordinatorSpec::stable_gamma(0.5), 1.0));
  std::string s;
  for (std::size_t k = 0; k < r.size(); ++k) {
    s += "M=" + std::to_string(k + 1) + " C_tail=" + fmt(r[k].C_tail) + " diag_gap=" + fmt(r[k].diag_gap) + "; ";
    if (k > 0) {
      o.check(r[k].C_tail < r[k - 1].C_tail, "C_tail strictly decreasing at M=" + std::to_string(k + 1));
      o.check(r[k].diag_gap < r[k - 1].diag_gap, "diag_gap strictly decreasing at M=" + std::to_string(k + 1));
    }
  }
  o.note(s);
}

void subordination(Outcome& o) {
  {
    const auto g = laplacian_ambient(make_mesh(1, 3));
    const auto d = eigendecompose(g.matrix);
    const auto a = subordinate_generator(g, d, SubordinatorSpec::identity());
    const double err = (a.matrix - g.matrix).cwiseAbs().maxCoeff() / g.matrix.cwiseAbs().maxCoeff();
    o.check(err < 1e-9, "identity subordination reproduces L");
    const auto s = subordinate(d, SubordinatorSpec::stable_gamma(0.5));
    const auto h1 = heat_matrix(s, 0.3), h2 = heat_matrix(s, 0.5), h3 = heat_matrix(s, 0.8);
    o.check((h1 * h2 - h3).cwiseAbs().maxCoeff() < 1e-9, "semigroup property");
    o.check(max_asymmetry(h3) < 1e-12, "heat matrix symmetry");
    o.check(heat_density(h3, g.mass).minCoeff() > -1e-10, "heat kernel positivity");
    const auto q = laplacian_reflected(1, 3, 1);
    const auto qs = subordinate(eigendecompose(q.matrix), SubordinatorSpec::stable_gamma(0.5));
    const Eigen::MatrixXd P = heat_probability(heat_matrix(qs, 1.0), q.mass);
    o.check((P.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9, "reflected kernel is stochastic");
  }
  auto lambda2 = [](int n) {
    const auto g = laplacian_ambient(make_mesh(0, n));
    return eigenvalues_only(g.matrix)[1] / g.time_scale;
  };
  const double ratio = lambda2(3) / lambda2(4);
  o.check(std::abs(ratio / 5.0 - 1.0) <= 0.05, "spectral gap refinement ratio 5 +- 5%");
  const auto q = laplacian_reflected(1, 5, 1);
  const auto d = eigendecompose(q.matrix, false);
  for (const auto& spec : {SubordinatorSpec::identity(), SubordinatorSpec::stable(kWalkDim / 2)}) {
    const auto fit = heat_trace_slope(subordinate(d, spec).eigenvalues, 1);
    const auto target = *heat_trace_target(spec);
    o.check(std::abs(fit.slope - target.first) <= target.second,
            to_string(spec.family) + " heat-trace slope within " + fmt(target.second));
    o.note(to_string(spec.family) + " slope " + fmt(fit.slope) + " vs " + fmt(target.first));
  }
  o.note("gap ratio " + fmt(ratio));
}

void verlog(Outcome& o) {
  const double b = verlog_bound(SubordinatorSpec::stable_gamma(0.5), 1.0);
  const double oracle = 2.0 + std::exp(-1.0);
  o.check(std::abs(b - oracle) <= 1e-6, "verlog bound equals 2 + e^-1");
  o.note("bound " + format_double(b) + ", |diff| " + fmt(std::abs(b - oracle)));
}

void potentials_formula(Outcome& o) {
  const auto window = make_mesh(1, 3);
  const double c = 1.0, nu = 1.0;
  const auto r = exponential_formula_on_set([](const LatticePoint& y) { return is_in_blowup(y, 0); }, c, window, nu,
                                            10000, 424242);
  const double oracle = std::exp(-nu * 1.0 * (1.0 - std::exp(-c)));
  o.check(std::abs(r.closed_form - oracle) < 1e-14, "closed form uses m(G_0) = 1");
  o.check(r.within(4.0), "set formula within 4 SE");
  o.note("MC " + fmt(r.mean) + " +- " + fmt(r.stderr_mean) + " vs " + fmt(oracle));

  const std::vector<int> M_range{1, 2};
  const std::vector<std::pair<std::string, ProfileSpec>> families{
      {"radial", RadialProfile{1.0, RadialShape::Tent}},
      {"shellwise", ShellwiseProfile{{1.0, 0.5, 0.25}, 1.0, 0.25}},
      {"cellwise", CellwiseProfile{0, 1, {1.0, 0.5, 0.25}}}};
  for (const auto& [name, p] : families) {
    const auto w = check_W3(p, M_range, 2, 2);
    o.check(w.holds, "W3 holds for " + name);
    o.note(name + " pairs " + std::to_string(w.pairs_checked));
  }
  const auto w = check_W3(w3_counterexample(), {1}, 2, 2);
  o.check(!w.holds && !w.witnesses.empty(), "counterexample rejected");
  if (!w.witnesses.empty()) {
    const auto& x = w.witnesses.front();
    o.check(x.x == (LatticePoint{0, 9, 2}) && x.y == (LatticePoint{0, 4, 2}) && x.M == 1, "pinned witness location");
    o.check(std::abs(x.lhs - std::exp(-2.0)) < 1e-15 && std::abs(x.rhs - 0.10539922456186433) < 1e-15,
            "pinned witness values");
    o.note("witness lhs " + format_double(x.lhs) + " rhs " + format_double(x.rhs));
  }
}

ExperimentConfig desk_suite(ExperimentId id) {
  ExperimentConfig c;
  c.experiment = id;
  c.M_list = {1, 2, 3};
  c.n = 3;
  c.K = 1;
  c.subordinator = SubordinatorSpec::stable_gamma(0.5);
  c.t_list = {0.25, 1.0, 4.0};
  c.clouds = 200;
  c.seed = 20240611;
  if (id == ExperimentId::E2) {
    c.profile = RadialProfile{1.0, RadialShape::Tent};
    c.profile_json = {{"family", "radial"}, {"R", 1.0}, {"shape", "tent"}};
    c.intensity = 1.0;
  } else {
    c.intensity = 0.5;
    c.obstacle_radius = 0.5;
  }
  return c;
}

void nd_checks(Outcome& o, const ResultTable& r, const std::vector<double>& ts) {
  for (double t : ts) {
    double worst = std::numeric_limits<double>::infinity();
    for (int M : {1, 2, 3}) {
      worst = std::min(worst, *r.summary_value("min_N_minus_D", M, t));
      if (auto s = r.summary_value("min_Nstar_minus_Dstar", M, t)) worst = std::min(worst, *s);
    }
    o.check(r.verdict("N_ge_D", std::nullopt, t) == "pass", "N - D >= -1e-10 at t=" + fmt(t));
    o.note("t=" + fmt(t) + " min(N-D) " + fmt(worst) + " mean|N-D| " + fmt(*r.summary_value("mean_abs_N_minus_D", 1, t)) +
           " > " + fmt(*r.summary_value("mean_abs_N_minus_D", 2, t)) + " > " +
           fmt(*r.summary_value("mean_abs_N_minus_D", 3, t)));
  }
}

void nd_decreasing(Outcome& o, const ResultTable& r, const std::vector<double>& ts) {
  for (double t : ts)
    o.check(r.verdict("abs_N_minus_D_decreasing", std::nullopt, t) == "pass",
            "mean |N - D| strictly decreasing at t=" + fmt(t));
}

void monotone_checks(Outcome& o, const ResultTable& r, const std::vector<double>& ts) {
  for (double t : ts) {
    o.check(r.verdict("Nstar_nonincreasing_2se", std::nullopt, t) == "pass",
            "E L^N*_M nonincreasing within 2 SE at t=" + fmt(t));
    std::string s = "t=" + fmt(t) + " E L^N* ";
    for (int M : {1, 2, 3}) s += fmt(*r.summary_value("mean_L_Nstar", M, t)) + (M < 3 ? " " : "");
    for (int M : {2, 3})
      s += "; step" + std::to_string(M) + " " + fmt(*r.summary_value("Nstar_step_mean", M, t)) + " (se " +
           fmt(*r.summary_value("Nstar_step_se", M, t)) + ")";
    o.note(s);
  }
}

void nd_inequality(Outcome& o) {
  const auto r = run(desk_suite(ExperimentId::E2), workers());
  nd_checks(o, r, {0.25, 1.0, 4.0});
  nd_decreasing(o, r, {0.25, 1.0, 4.0});
}

void monotonicity(Outcome& o) {
  const auto r = run(desk_suite(ExperimentId::E2), workers());
  monotone_checks(o, r, {0.25, 1.0, 4.0});
}

void variance_decay(Outcome& o) {
  const auto r = run(desk_suite(ExperimentId::E2), workers());
  std::string s;
  for (int M : {2, 3}) {
    const auto ratio = *r.summary_value("var_L_D_ratio", M, 1.0);
    o.check(ratio < 0.8, "Var L_D ratio below 0.8 at M=" + std::to_string(M));
    s += "M=" + std::to_string(M - 1) + "->" + std::to_string(M) + " " + fmt(ratio) + " ";
  }
  o.note("t=1 variance ratios " + s);
}

void obstacles(Outcome& o) {
  const auto r = run(desk_suite(ExperimentId::E4), workers());
  nd_checks(o, r, {0.25, 1.0, 4.0});
  nd_decreasing(o, r, {0.25, 1.0, 4.0});
  monotone_checks(o, r, {0.25, 1.0, 4.0});
}

void determinism(Outcome& o) {
  ExperimentConfig c = desk_suite(ExperimentId::E2);
  c.M_list = {1, 2};
  c.n = 2;
  c.clouds = 40;
  c.t_list = {0.5, 2.0};
  const fs::path base = fs::temp_directory_path() / "gasket_ids_acceptance_determinism";
  fs::remove_all(base);
  run_and_emit(c, 1, base / "a");
  run_and_emit(c, 1, base / "b");
  run_and_emit(c, 8, base / "c");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };
  std::size_t bytes = 0;
  for (const auto& e : fs::directory_iterator(base / "a")) {
    const auto name = e.path().filename();
    const auto a = slurp(e.path());
    bytes += a.size();
    o.check(a == slurp(base / "b" / name), "rerun identical: " + name.string());
    o.check(a == slurp(base / "c" / name), "1 vs 8 workers identical: " + name.string());
  }
  o.check(bytes > 0, "outputs written");
  o.note(std::to_string(bytes) + " bytes compared per run");
}

struct Criterion {
  int id;
  std::string name;
  std::function<void(Outcome&)> body;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "geometry exactness", geometry_exactness},
      {2, "labeling and projection", labeling_projection},
      {3, "quotient identities", quotient_identities},
      {4, "kernel trends", kernel_trends},
      {5, "subordination correctness", subordination},
      {6, "verlog bound", verlog},
      {7, "potentials and exponential formula", potentials_formula},
      {8, "N-vs-D structural inequality", nd_inequality},
      {9, "monotonicity of E L^N*", monotonicity},
      {10, "variance decay", variance_decay},
      {11, "obstacle mode", obstacles},
      {12, "determinism", determinism},
  };
  return all;
}

bool run_one(const Criterion& c) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    c.body(o);
  } catch (const std::exception& e) {
    o.ok = false;
    o.notes.push_back(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "criterion " << c.id << " " << (o.ok ? "PASS" : "FAIL") << " " << c.name << " (" << fmt(secs) << " s)\n";
  for (const auto& n : o.notes) std::cout << "    " << n << '\n';
  std::cout.flush();
  return o.ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion")->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);
  pin_blas_threads();
  bool ok = true;
  for (const auto& c : criteria())
    if (only == 0 || c.id == only) ok = run_one(c) && ok;
  return ok ? 0 : 1;
}
