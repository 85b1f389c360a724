// Scenario runner: run / list-builtins / describe / validate.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fbsdelab/fbsdelab.hpp"

namespace {

namespace fs = std::filesystem;

fs::path default_output_root() {
  if (const char* env = std::getenv("FBSDELAB_OUT")) return fs::path(env);
  return fs::path("out");
}

// A positional that is either a builtin name or a path to a config file.
fbsdelab::Scenario load_target(const std::string& target) {
  for (const std::string& b : fbsdelab::list_builtins())
    if (b == target) return fbsdelab::make_builtin_resolved(target);
  return fbsdelab::load_scenario_file(target);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fbsdelab: relaxed-control FBSDE laboratory"};
  app.require_subcommand(1);

  std::string target;
  std::optional<long> paths_override;
  std::optional<int> steps_override;
  std::optional<std::uint64_t> seed_override;
  std::string out_dir;
  bool no_diagnostics = false;
  bool optimize = false;

  CLI::App* run = app.add_subcommand("run", "run a scenario (builtin name or config file)");
  run->add_option("target", target, "builtin name or scenario file")->required();
  run->add_option("--paths", paths_override, "override n_paths");
  run->add_option("--steps", steps_override, "override simulation steps");
  run->add_option("--seed", seed_override, "override the master seed");
  run->add_option("--out", out_dir, "output directory (default: $FBSDELAB_OUT or ./out, plus the scenario name)");
  run->add_flag("--no-diagnostics", no_diagnostics, "skip the diagnostics stages");
  run->add_flag("--optimize", optimize, "run the relaxed-control optimizer with default settings");

  CLI::App* list = app.add_subcommand("list-builtins", "list the shipped model problems");

  std::string describe_name;
  CLI::App* describe = app.add_subcommand("describe", "describe a builtin and its defaults");
  describe->add_option("builtin", describe_name, "builtin name")->required();

  std::string validate_path;
  CLI::App* validate = app.add_subcommand("validate", "parse and resolve a scenario file");
  validate->add_option("file", validate_path, "scenario file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (list->parsed()) {
      for (const std::string& b : fbsdelab::list_builtins()) std::cout << b << "\n";
      return 0;
    }
    if (describe->parsed()) {
      std::cout << fbsdelab::describe_builtin(describe_name);
      return 0;
    }
    if (validate->parsed()) {
      const fbsdelab::Scenario s = fbsdelab::load_scenario_file(validate_path);
      std::cout << "ok name=" << s.name << " hash=" << s.hash_hex() << "\n";
      return 0;
    }

    fbsdelab::Scenario s = load_target(target);
    if (paths_override) s.n_paths = *paths_override;
    if (steps_override)
      s.sim_grid = fbsdelab::TimeGrid(s.sim_grid.horizon, *steps_override);
    if (seed_override) s.seed = *seed_override;
    if (no_diagnostics) s.diagnostics.enabled = false;
    if (optimize && !s.optimizer) {
      fbsdelab::OptimizerConfig oc;
      oc.seed = fbsdelab::CounterRng::derive(s.seed, 0x09E7);
      oc.reg = s.reg;
      oc.picard = s.picard;
      s.optimizer = oc;
    }
    if (!s.sim_grid.refines(s.control.grid()))
      s.control = fbsdelab::resample_control(s.control, s.sim_grid);
    s.resolved = fbsdelab::resolve_scenario_json(s);

    fs::path dir;
    if (!out_dir.empty())
      dir = out_dir;
    else if (!s.output_dir.empty())
      dir = s.output_dir;
    else
      dir = default_output_root() / s.name;

    const fbsdelab::RunResult result = fbsdelab::run_scenario(s, dir);
    std::cout << (result.ok ? "ok" : "failed") << " name=" << s.name
              << " hash=" << s.hash_hex() << " dir=" << dir.string() << "\n";
    if (!result.ok) {
      for (const auto& f : result.summary.at("failures"))
        std::cerr << "stage " << f.at("stage").get<std::string>() << ": "
                  << f.at("error").get<std::string>() << "\n";
      return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
