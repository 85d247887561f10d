#pragma once

// Command implementations behind the `gle` executable. Each command writes CSV/YAML files into an output
// directory; errors map to exit codes through exit_code_for.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "gle/config.hpp"

namespace gle {

enum class ExitCode { Ok = 0, Config = 1, Model = 2, Numerical = 3 };

inline bool is_numerical(ErrorKind k) {
  switch (k) {
    case ErrorKind::NotStable:
    case ErrorKind::Blowup:
    case ErrorKind::LaplaceInstability:
    case ErrorKind::StepTooLarge:
    case ErrorKind::NonFinite:
    case ErrorKind::Overflow:
    case ErrorKind::SingularSolve:
    case ErrorKind::EigenFailure: return true;
    default: return false;
  }
}

// Anything raised while reading the file is a config error; afterwards numerical kinds get 3 and the rest 2.
inline ExitCode exit_code_for(ErrorKind k, bool parsed) {
  if (!parsed || k == ErrorKind::ParseError) return ExitCode::Config;
  return is_numerical(k) ? ExitCode::Numerical : ExitCode::Model;
}

inline std::string error_tag(ErrorKind k, ExitCode code, const std::string& command, const std::string& what) {
  std::string msg = what;
  for (char& c : msg) {
    if (c == '\n') c = ' ';
    if (c == '"') c = '\'';
  }
  return "gle: error=" + std::string(kind_name(k)) + " exit=" + std::to_string(static_cast<int>(code)) +
         " command=" + command + " msg=\"" + msg + "\"";
}

struct CommandResult {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> notes;  // printed to stderr, never fatal
  std::optional<Error> deferred;   // raised after outputs were written
};

namespace clidetail {

inline std::ofstream open_out(const std::filesystem::path& p, CommandResult& r) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(ErrorKind::InvalidArgument, "cannot write '" + p.string() + "'");
  r.files.push_back(p);
  return os;
}

inline void write_trajectories(std::ostream& os, const std::vector<Trajectory>& trs) {
  for (std::size_t p = 0; p < trs.size(); ++p) write_trajectory_csv(os, trs[p], static_cast<long>(p), p == 0);
}

// log-spaced grid anchored on exact decades so round values such as 1 land exactly on it
inline std::vector<double> log_grid(double lo, double hi, int n) {
  const double a = std::log10(lo), b = std::log10(hi);
  std::vector<double> g;
  for (int i = 0; i < n; ++i) g.push_back(std::pow(10.0, a + (b - a) * i / (n - 1)));
  return g;
}

inline void emit_matrix_yaml(YAML::Emitter& e, const char* key, const Matrix& m) {
  e << YAML::Key << key << YAML::Value;
  cfgdetail::emit_matrix(e, m);
}

}  // namespace clidetail

inline CommandResult cmd_presets(std::ostream& out) {
  CommandResult r;
  const PresetParams p;
  out << "name,slot,parameters\n";
  out << "M1,1,Gamma1=" << p.Gamma1 << " Gamma2=" << p.Gamma2 << " beta=" << p.beta << "\n";
  out << "M2,1,Gamma1=" << p.Gamma1 << " beta=" << p.beta << "\n";
  out << "hyper,1,Gamma1=" << p.Gamma1 << " Gamma2=" << p.Gamma2 << " Gamma3=" << p.Gamma3 << " beta=" << p.beta
      << "\n";
  out << "exp,0,Gamma1=" << p.Gamma1 << " beta=" << p.beta << "\n";
  return r;
}

inline CommandResult cmd_simulate(const ExperimentConfig& c, const std::filesystem::path& dir) {
  CommandResult r;
  const GLEModel m = build_model(c.model);
  const MarkovianSystem s = build_markovian_system(m);
  const auto trs = simulate_ensemble(s, c.sim);
  auto os = clidetail::open_out(dir / "trajectories.csv", r);
  clidetail::write_trajectories(os, trs);
  return r;
}

inline CommandResult cmd_limit(const ExperimentConfig& c, const std::filesystem::path& dir) {
  CommandResult r;
  const GLEModel m = build_model(c.model);
  const LimitSystem lim = build_limit(c, m);
  for (const auto& w : lim.warnings) r.notes.push_back(w);
  {
    YAML::Emitter e;
    e << YAML::BeginMap;
    e << YAML::Key << "provenance" << YAML::Value << lim.provenance;
    e << YAML::Key << "layout" << YAML::Value << YAML::BeginSeq;
    for (const auto& sl : lim.layout.slices)
      e << YAML::Flow << YAML::BeginMap << YAML::Key << "name" << YAML::Value << sl.name << YAML::Key << "offset"
        << YAML::Value << sl.offset << YAML::Key << "size" << YAML::Value << sl.size << YAML::EndMap;
    e << YAML::EndSeq;
    e << YAML::Key << "channels" << YAML::Value << lim.channels;
    e << YAML::Key << "wiener_dims" << YAML::Value << YAML::Flow << YAML::BeginSeq << lim.wienerDims[0]
      << lim.wienerDims[1] << YAML::EndSeq;
    if (lim.linear) {
      e << YAML::Key << "linear" << YAML::Value << YAML::BeginMap;
      clidetail::emit_matrix_yaml(e, "A", lim.linear->A);
      clidetail::emit_matrix_yaml(e, "b", lim.linear->b);
      clidetail::emit_matrix_yaml(e, "G", lim.linear->G);
      e << YAML::EndMap;
    }
    e << YAML::Key << "warnings" << YAML::Value << YAML::BeginSeq;
    for (const auto& w : lim.warnings) e << w;
    e << YAML::EndSeq;
    e << YAML::EndMap;
    auto os = clidetail::open_out(dir / "limit.yaml", r);
    os << e.c_str() << "\n";
  }
  // the expanded config regenerates the limit, including non-affine ones
  {
    auto os = clidetail::open_out(dir / "config.yaml", r);
    os << serialize_config(c);
  }
  {
    // drift and correction on a small probe set, for inspection
    auto os = clidetail::open_out(dir / "limit_coefficients.csv", r);
    const auto labels = lim.layout.labels();
    os << "probe";
    for (const auto& l : labels) os << ",z:" << l;
    for (const auto& l : labels) os << ",drift:" << l;
    for (const auto& l : labels) os << ",correction:" << l;
    os << "\n";
    Vector base = lim.initialMean.size() == lim.dim() ? lim.initialMean : Vector::Zero(lim.dim());
    const auto probes = detail::probe_points(base, 20, c.sim.seed + 1);
    for (std::size_t i = 0; i < probes.size(); ++i) {
      const Vector d = lim.drift_at(0.0, probes[i]), k = lim.correction_at(0.0, probes[i]);
      os << i;
      for (const Vector* v : {&probes[i], &d, &k})
        for (Eigen::Index j = 0; j < v->size(); ++j) os << "," << format_double((*v)(j));
      os << "\n";
    }
  }
  if (c.limit.simulate) {
    const auto trs = simulate_ensemble(lim, c.sim);
    auto os = clidetail::open_out(dir / "limit_trajectories.csv", r);
    clidetail::write_trajectories(os, trs);
  }
  return r;
}

inline CommandResult cmd_msd(const ExperimentConfig& c, const std::filesystem::path& dir) {
  CommandResult r;
  const GLEModel m = build_model(c.model);
  SimConfig sim = c.sim;
  // thin the recording to roughly msd.points samples
  const long steps = std::lround(sim.T / sim.dt);
  sim.recordEvery = std::max<int>(sim.recordEvery, static_cast<int>(std::max<long>(1, steps / c.msd.points)));
  std::vector<double> times;
  std::vector<std::pair<std::string, ExponentFit>> fits;
  auto try_fit = [&](const std::string& name, const MSDCurve& curve) {
    try {
      fits.emplace_back(name, fit_diffusion_exponent(curve, c.msd.window));
    } catch (const Error& e) {
      r.notes.push_back(name + " exponent fit skipped: " + e.what());
    }
  };
  if (c.msd.method != "laplace") {
    const MSDCurve mc = msd_monte_carlo(build_markovian_system(m), sim);
    for (const auto& w : mc.warnings) r.notes.push_back(w);
    auto os = clidetail::open_out(dir / "msd_mc.csv", r);
    write_msd_csv(os, mc);
    times = mc.times;
    try_fit("monte_carlo", mc);
  } else {
    for (long i = 0; i <= steps; i += sim.recordEvery) times.push_back(static_cast<double>(i) * sim.dt);
  }
  if (c.msd.method != "monte_carlo") {
    try {
      const MSDCurve ex = msd_exact_free_particle(m, times);
      auto os = clidetail::open_out(dir / "msd_exact.csv", r);
      write_msd_csv(os, ex);
      try_fit("laplace", ex);
    } catch (const Error& e) {
      // with both methods requested the formula is optional
      if (c.msd.method == "laplace" || e.kind() != ErrorKind::HypothesisViolation) throw;
      r.notes.push_back(std::string("formula not admissible: ") + e.what());
    }
  }
  auto os = clidetail::open_out(dir / "msd_exponent.csv", r);
  os << "method,exponent,stderr\n";
  for (const auto& [name, f] : fits) os << name << "," << format_double(f.exponent) << "," << format_double(f.stdErr) << "\n";
  return r;
}

inline CommandResult cmd_spectrum(const ExperimentConfig& c, const std::filesystem::path& dir) {
  CommandResult r;
  const GLEModel m = build_model(c.model);
  {
    auto os = clidetail::open_out(dir / "spectrum.csv", r);
    os << "omega,noise_density,kernel_density\n";
    for (double w : clidetail::log_grid(c.spectrum.omegaMin, c.spectrum.omegaMax, c.spectrum.points)) {
      double sn = 0.0, sk = 0.0;
      for (const auto& b : m.noise.blocks)
        if (b.alpha) sn += spectral_density(b, w).trace();
      for (const auto& b : m.kernel.blocks)
        if (b.alpha) sk += spectral_density(b, w).trace();
      os << format_double(w) << "," << format_double(sn) << "," << format_double(sk) << "\n";
    }
  }
  {
    auto os = clidetail::open_out(dir / "kernel.csv", r);
    os << "t,kernel,covariance\n";
    for (int i = 0; i < c.spectrum.tPoints; ++i) {
      const double t = c.spectrum.tMax * i / (c.spectrum.tPoints - 1);
      os << format_double(t) << "," << format_double(kernel_eval(m.kernel, t).trace()) << ","
         << format_double(covariance_eval(m.noise, t).trace()) << "\n";
    }
  }
  return r;
}

inline CommandResult cmd_converge(const ExperimentConfig& c, const std::filesystem::path& dir) {
  CommandResult r;
  const GLEModel m = build_model(c.model);
  const LimitSystem lim = build_limit(c, m);
  const SystemFamily fam = build_family(c, m);
  const ConvergenceReport rep = convergence_study(fam, lim, c.epsilons, c.sim);
  {
    auto os = clidetail::open_out(dir / "convergence.csv", r);
    write_convergence_csv(os, rep);
  }
  {
    auto os = clidetail::open_out(dir / "convergence_rate.csv", r);
    os << "fitted_rate,note\n"
       << (rep.fittedRate ? format_double(*rep.fittedRate) : std::string("nan")) << "," << rep.rateNote << "\n";
  }
  for (const auto& row : rep.rows)
    if (!row.error.empty()) {
      // outputs are kept; the failed cell still fails the run
      const auto colon = row.error.find(':');
      ErrorKind k = ErrorKind::Blowup;
      for (int i = 0; i <= static_cast<int>(ErrorKind::ParseError); ++i)
        if (row.error.compare(0, colon, kind_name(static_cast<ErrorKind>(i))) == 0) k = static_cast<ErrorKind>(i);
      r.deferred = Error(k, "eps=" + format_double(row.epsilon) + ": " + row.error);
      break;
    }
  return r;
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"simulate", "limit", "msd", "spectrum", "converge", "presets"};
  return names;
}

inline CommandResult run_command(const std::string& name, const ExperimentConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  if (name == "simulate") return cmd_simulate(c, dir);
  if (name == "limit") return cmd_limit(c, dir);
  if (name == "msd") return cmd_msd(c, dir);
  if (name == "spectrum") return cmd_spectrum(c, dir);
  if (name == "converge") return cmd_converge(c, dir);
  fail(ErrorKind::InvalidArgument, "unknown command '" + name + "'");
}

}  // namespace gle
