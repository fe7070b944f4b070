// gasket-ids: batch experiment runner.
//
//   gasket-ids run --config <file> [--threads N] [--out DIR]
//   gasket-ids check-profile --spec <file>
//   gasket-ids mesh --M <M> --n <n> [--emit-json]

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "gasket_ids/gasket_ids.hpp"

namespace gi = gasket_ids;

namespace {

int cmd_run(const std::string& config_path, unsigned threads, const std::string& out_override) {
  const auto cfg = gi::load_config(config_path);
  const std::string dir = out_override.empty() ? cfg.output : out_override;
  const auto table = gi::run_and_emit(cfg, threads, dir);
  std::cerr << table.experiment << " config " << table.config_hash << " seed " << table.seed << ": "
            << table.rows.rows.size() << " rows, " << table.summary.rows.size() << " summary rows -> " << dir << '\n';
  bool ok = true;
  for (const auto& row : table.summary.rows) {
    const auto& verdict = std::get<std::string>(row[7]);
    if (verdict == "fail" || verdict == "unexpected_pass") {
      ok = false;
      std::cerr << "  fail: " << std::get<std::string>(row[3]) << " M=" << gi::cell_to_csv(row[4])
                << " t=" << gi::cell_to_csv(row[5]) << '\n';
    }
  }
  return ok ? 0 : 3;
}

int cmd_check_profile(const std::string& spec_path) {
  std::ifstream in(spec_path);
  if (!in) throw gi::ConfigError("cannot open profile spec " + spec_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw gi::ConfigError("profile spec " + spec_path + ": " + e.what());
  }
  gi::ExperimentConfig cfg;
  cfg.experiment = gi::ExperimentId::E3;
  cfg.profile_json = j.contains("profile") ? j.at("profile") : j;
  cfg.profile = gi::profile_from_json(cfg.profile_json);
  cfg.options = j.value("options", nlohmann::json::object());
  cfg.options["include_counterexample"] = false;
  const auto table = gi::run(cfg);
  gi::write_csv(std::cout, table.summary);
  for (const auto& row : table.summary.rows)
    if (std::get<std::string>(row[7]) == "fail") return 3;
  return 0;
}

int cmd_mesh(int M, int n, bool emit_json) {
  const auto mesh = gi::make_mesh(M, n);
  if (emit_json) {
    std::cout << gi::mesh_to_json(*mesh).dump() << '\n';
  } else {
    std::cout << "M=" << M << " n=" << n << " vertices=" << mesh->size() << " cells=" << mesh->cells().size()
              << " mass=" << mesh->total_mass() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random Schrodinger operators on the Sierpinski gasket"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run an experiment from a config file");
  std::string config_path, out_dir;
  unsigned threads = 1;
  run->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--threads", threads, "worker threads")->check(CLI::Range(1u, 256u));
  run->add_option("--out", out_dir, "output directory (overrides the config)");

  auto* check = app.add_subcommand("check-profile", "check a profile against W1-W3");
  std::string spec_path;
  check->add_option("--spec", spec_path, "profile spec (JSON)")->required()->check(CLI::ExistingFile);

  auto* mesh = app.add_subcommand("mesh", "build a mesh of G_M at resolution n");
  int M = 0, n = 0;
  bool emit_json = false;
  mesh->add_option("--M", M, "blow-up level")->required()->check(CLI::Range(0, 8));
  mesh->add_option("--n", n, "resolution level")->required()->check(CLI::Range(0, 8));
  mesh->add_flag("--emit-json", emit_json, "print vertices, edges and weights as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, threads, out_dir);
    if (*check) return cmd_check_profile(spec_path);
    if (*mesh) return cmd_mesh(M, n, emit_json);
  } catch (const gi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
