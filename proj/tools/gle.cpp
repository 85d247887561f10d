#include <CLI11.hpp>

#include <iostream>

#include "gle/cli.hpp"

namespace {

const char* kConfigHelp = R"(Config file (YAML, unknown keys are errors). Defaults:
  model:       preset M1|M2|hyper|exp with params {Gamma1: 1, Gamma2: 2, Gamma3: 3, beta: 1}
               or kernel/noise: [block0, block1] with {Gamma, Sigma, C, D, M, alpha: 1, kernel_only: false}
               or file: other.yaml (path relative to this config)
               dim: 1, mass: 1, gamma0: 0, sigma0: none, g: 1, h: 1, sigma: 1, Fe: 0, x0: 0, v0: 0
               fields take a number, {kind: const|sin|cos|exp|rational, offset, amp, freq: 1, phase, num, den,
               axis: 0}, or a list of rows of those
  simulation:  T: 1, dt: 0.01, seed: 0, paths: 1, epsilon: none, stiff_policy: explicit|ou_splitting (explicit),
               auto_shrink: true, noise_step: dt, record_every: 1, threads: 0 (GLE_THREADS or all cores)
  limit:       kind: smallMass|vanishingDamping|corollary1d_smallMass|corollary1d_vanishing|fdt|hyper|general
               (smallMass), m0: 1, gamma2: 1, gamma4: gamma2, gamma3: 3, phi: none, simulate: false;
               general needs constant A1, A2, B1, B2, Sigma1, Sigma2
  converge:    epsilons: [0.2, 0.1, 0.05, 0.025] (strictly decreasing)
  msd:         method: both|monte_carlo|laplace (both), window: 0.3, points: 100
  spectrum:    omega_min: 0.01, omega_max: 100, points: 201, t_max: 10, t_points: 201
  output:      dir: out
Exit codes: 1 config error, 2 model validation failure, 3 numerical failure.)";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalized Langevin equations: simulation, limits, diffusion analysis"};
  app.footer(kConfigHelp);
  app.require_subcommand(1, 1);

  std::string configPath, outDir;
  std::optional<std::uint64_t> seed;
  std::optional<long> paths;
  std::optional<int> threads;
  for (const auto& name : gle::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->footer(kConfigHelp);
    if (name == "presets") {
      sub->add_option("--config", configPath, "ignored");
      continue;
    }
    sub->add_option("--config", configPath, "experiment config file")->required();
    sub->add_option("--out", outDir, "output directory (overrides output.dir)");
    sub->add_option("--seed", seed, "base seed (overrides simulation.seed)");
    sub->add_option("--paths", paths, "number of paths (overrides simulation.paths)");
    sub->add_option("--threads", threads, "worker threads (overrides simulation.threads and GLE_THREADS)");
  }
  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  if (command == "presets") {
    gle::cmd_presets(std::cout);
    return 0;
  }

  bool parsed = false;
  try {
    gle::ExperimentConfig cfg = gle::parse_config(configPath);
    if (seed) cfg.sim.seed = *seed;
    if (paths) cfg.sim.paths = *paths;
    if (threads) cfg.sim.threads = *threads;
    if (!outDir.empty()) cfg.outDir = outDir;
    gle::validate_experiment(cfg);
    parsed = true;
    const gle::CommandResult res = gle::run_command(command, cfg, cfg.outDir);
    for (const auto& n : res.notes) std::cerr << "gle: note: " << n << "\n";
    for (const auto& f : res.files) std::cout << f.string() << "\n";
    if (res.deferred) throw *res.deferred;
    return 0;
  } catch (const gle::Error& e) {
    const gle::ExitCode code = gle::exit_code_for(e.kind(), parsed);
    std::cerr << gle::error_tag(e.kind(), code, command, e.what()) << "\n";
    return static_cast<int>(code);
  } catch (const std::exception& e) {
    // I/O and yaml-cpp failures that escaped the typed path
    std::cerr << "gle: error=Internal exit=" << (parsed ? 3 : 1) << " command=" << command << " msg=\"" << e.what()
              << "\"\n";
    return parsed ? 3 : 1;
  }
}
