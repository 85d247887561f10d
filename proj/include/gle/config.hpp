#pragma once

// Experiment configuration: a YAML file with strict keys. Needs yaml-cpp (link target gle_io).

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gle/analysis.hpp"
#include "gle/homogenize.hpp"

namespace gle {

// Matrix of whitelisted scalar expressions.
struct FieldSpec {
  Eigen::Index rows = 1, cols = 1;
  std::vector<ScalarExpr> entries{ScalarExpr{}};

  static FieldSpec constant(double v) {
    FieldSpec f;
    f.entries[0].offset = v;
    return f;
  }
  static FieldSpec empty(Eigen::Index rows) { return {rows, 0, {}}; }
  bool is_set() const { return cols > 0 && rows > 0; }
  CoefficientField build() const {
    if (rows * cols == 0) return CoefficientField::zero(rows, cols);
    return expr_field(rows, cols, entries);
  }
};

struct BlockSpec {
  Matrix Gamma, Sigma, C, D, M;  // M only for kernel-only blocks
  int alpha = 1;
  bool kernelOnly = false;

  OUBlock build() const {
    if (Gamma.size() == 0) {
      OUBlock b = OUBlock::empty(C.rows() ? C.rows() : 1);
      b.alpha = 0;
      return b;
    }
    if (kernelOnly) {
      OUBlock b;
      b.Gamma = Gamma;
      b.C = C;
      b.Sigma = Matrix(Gamma.rows(), 0);
      b.D = Matrix(C.rows(), 0);
      b.M = M;
      b.kernelOnly = true;
      b.alpha = alpha;
      validate_block(b);
      return b;
    }
    return make_block(Gamma, Sigma, C, alpha, D);
  }
};

enum class LimitKind { SmallMass, VanishingDamping, CorollarySmallMass, CorollaryVanishing, Fdt, Hyper, General };

inline const std::vector<std::pair<std::string, LimitKind>>& limit_kind_names() {
  static const std::vector<std::pair<std::string, LimitKind>> names = {
      {"smallMass", LimitKind::SmallMass},
      {"vanishingDamping", LimitKind::VanishingDamping},
      {"corollary1d_smallMass", LimitKind::CorollarySmallMass},
      {"corollary1d_vanishing", LimitKind::CorollaryVanishing},
      {"fdt", LimitKind::Fdt},
      {"hyper", LimitKind::Hyper},
      {"general", LimitKind::General}};
  return names;
}

struct ModelSpec {
  std::string preset;  // empty when the realization comes from blocks
  std::map<std::string, double> params;
  Eigen::Index dim = 1;
  double mass = 1.0;
  FieldSpec gamma0 = FieldSpec::constant(0.0);
  FieldSpec sigma0 = FieldSpec::empty(1);
  FieldSpec g = FieldSpec::constant(1.0), h = FieldSpec::constant(1.0), sigma = FieldSpec::constant(1.0);
  FieldSpec Fe = FieldSpec::constant(0.0);
  Vector x0 = Vector::Zero(1), v0 = Vector::Zero(1);
  std::array<BlockSpec, 2> kernel, noise;
};

struct LimitSpec {
  LimitKind kind = LimitKind::SmallMass;
  double m0 = 1.0, gamma2 = 1.0, gamma3 = 3.0;
  std::optional<double> gamma4;  // fast noise rate, defaults to gamma2
  std::optional<double> phi;
  bool simulate = false;
  // general form: constant blocks
  Matrix A1, A2, Sigma1, Sigma2;
  Vector B1, B2;
};

struct MsdSpec {
  std::string method = "both";  // monte_carlo | laplace | both
  double window = 0.3;
  int points = 100;
};

struct SpectrumSpec {
  double omegaMin = 0.01, omegaMax = 100.0;
  int points = 201;
  double tMax = 10.0;
  int tPoints = 201;
};

struct ExperimentConfig {
  ModelSpec model;
  SimConfig sim;
  LimitSpec limit;
  std::vector<double> epsilons{0.2, 0.1, 0.05, 0.025};
  MsdSpec msd;
  SpectrumSpec spectrum;
  std::string outDir = "out";
};

// ---------------------------------------------------------------------------------------------
// parsing

namespace cfgdetail {

[[noreturn]] inline void parse_fail(const YAML::Node& n, const std::string& msg) {
  const auto mk = n.Mark();
  if (mk.is_null()) fail(ErrorKind::ParseError, msg);
  fail(ErrorKind::ParseError, "line " + std::to_string(mk.line + 1) + ": " + msg);
}

inline void require_keys(const YAML::Node& n, const std::string& where, const std::set<std::string>& allowed) {
  if (!n.IsMap()) parse_fail(n, where + " must be a mapping");
  for (const auto& kv : n) {
    const std::string k = kv.first.as<std::string>();
    if (!allowed.count(k)) parse_fail(kv.first, "unknown key '" + k + "' in " + where);
  }
}

template <class T>
T scalar(const YAML::Node& n, const std::string& key) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    parse_fail(n, "bad value for '" + key + "'");
  }
}

inline double number(const YAML::Node& n, const std::string& key) {
  const double v = scalar<double>(n, key);
  if (!std::isfinite(v)) parse_fail(n, "'" + key + "' must be finite");
  return v;
}

inline Matrix matrix(const YAML::Node& n, const std::string& key) {
  if (n.IsScalar()) return Matrix::Constant(1, 1, number(n, key));
  if (!n.IsSequence()) parse_fail(n, "'" + key + "' must be a number or a list of rows");
  if (n.size() == 0) return Matrix(0, 0);
  // a flat list is a column
  if (!n[0].IsSequence()) {
    Matrix m(static_cast<Eigen::Index>(n.size()), 1);
    for (std::size_t i = 0; i < n.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = number(n[i], key);
    return m;
  }
  const std::size_t cols = n[0].size();
  Matrix m(static_cast<Eigen::Index>(n.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (!n[i].IsSequence() || n[i].size() != cols) parse_fail(n[i], "ragged matrix in '" + key + "'");
    for (std::size_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = number(n[i][j], key);
  }
  return m;
}

inline Vector vec(const YAML::Node& n, const std::string& key, Eigen::Index size) {
  if (n.IsScalar()) return Vector::Constant(size, number(n, key));
  const Matrix m = matrix(n, key);
  if (m.cols() != 1 || m.rows() != size) parse_fail(n, "'" + key + "' must have " + std::to_string(size) + " entries");
  return m.col(0);
}

inline ScalarExpr expr(const YAML::Node& n, const std::string& key) {
  ScalarExpr e;
  if (n.IsScalar()) {
    e.offset = number(n, key);
    return e;
  }
  require_keys(n, key, {"kind", "offset", "amp", "freq", "phase", "num", "den", "axis"});
  const std::string kind = n["kind"] ? scalar<std::string>(n["kind"], key) : "const";
  using K = ScalarExpr::Kind;
  static const std::map<std::string, K> kinds = {
      {"const", K::Const}, {"sin", K::Sin}, {"cos", K::Cos}, {"exp", K::Exp}, {"rational", K::Rational}};
  const auto it = kinds.find(kind);
  if (it == kinds.end()) parse_fail(n["kind"], "unknown expression kind '" + kind + "' in '" + key + "'");
  e.kind = it->second;
  if (n["offset"]) e.offset = number(n["offset"], key);
  if (n["amp"]) e.amp = number(n["amp"], key);
  if (n["freq"]) e.freq = number(n["freq"], key);
  if (n["phase"]) e.phase = number(n["phase"], key);
  if (n["axis"]) e.axis = scalar<int>(n["axis"], key);
  auto coeffs = [&](const char* name) {
    std::vector<double> c;
    if (n[name])
      for (const auto& x : n[name]) c.push_back(number(x, key));
    return c;
  };
  e.num = coeffs("num");
  e.den = coeffs("den");
  if (e.kind == K::Rational && (e.num.empty() || e.den.empty())) parse_fail(n, "rational '" + key + "' needs num and den");
  return e;
}

// number | expression map | list of rows of those
inline FieldSpec field(const YAML::Node& n, const std::string& key) {
  FieldSpec f;
  if (!n.IsSequence()) {
    f.entries = {expr(n, key)};
    return f;
  }
  if (n.size() == 0) parse_fail(n, "'" + key + "' is empty");
  const bool nested = n[0].IsSequence();
  f.rows = static_cast<Eigen::Index>(n.size());
  f.cols = nested ? static_cast<Eigen::Index>(n[0].size()) : 1;
  f.entries.clear();
  for (const auto& row : n) {
    if (!nested) {
      f.entries.push_back(expr(row, key));
      continue;
    }
    if (!row.IsSequence() || static_cast<Eigen::Index>(row.size()) != f.cols) parse_fail(row, "ragged field '" + key + "'");
    for (const auto& x : row) f.entries.push_back(expr(x, key));
  }
  return f;
}

inline BlockSpec block(const YAML::Node& n, const std::string& key) {
  BlockSpec b;
  if (n.IsNull()) return b;
  require_keys(n, key, {"Gamma", "Sigma", "C", "D", "M", "alpha", "kernel_only"});
  for (const char* k : {"Gamma", "C"})
    if (!n[k]) parse_fail(n, key + " needs '" + k + "'");
  b.Gamma = matrix(n["Gamma"], key + ".Gamma");
  b.C = matrix(n["C"], key + ".C");
  if (n["Sigma"]) b.Sigma = matrix(n["Sigma"], key + ".Sigma");
  if (n["D"]) b.D = matrix(n["D"], key + ".D");
  if (n["M"]) b.M = matrix(n["M"], key + ".M");
  if (n["alpha"]) b.alpha = scalar<int>(n["alpha"], key + ".alpha");
  if (n["kernel_only"]) b.kernelOnly = scalar<bool>(n["kernel_only"], key + ".kernel_only");
  if (b.kernelOnly && b.M.size() == 0) parse_fail(n, key + ": kernel-only blocks need 'M'");
  if (!b.kernelOnly && b.Sigma.size() == 0) parse_fail(n, key + " needs 'Sigma'");
  return b;
}

inline const std::map<std::string, std::vector<std::string>>& preset_keys() {
  static const std::map<std::string, std::vector<std::string>> keys = {{"M1", {"Gamma1", "Gamma2", "beta"}},
                                                                       {"M2", {"Gamma1", "beta"}},
                                                                       {"hyper", {"Gamma1", "Gamma2", "Gamma3", "beta"}},
                                                                       {"exp", {"Gamma1", "beta"}}};
  return keys;
}

inline ModelSpec model(const YAML::Node& n, const std::filesystem::path& base);

inline ModelSpec model_body(const YAML::Node& n, const std::filesystem::path& base) {
  require_keys(n, "model", {"file", "preset", "params", "dim", "mass", "gamma0", "sigma0", "g", "h", "sigma", "Fe", "x0",
                            "v0", "kernel", "noise"});
  ModelSpec m;
  if (n["file"]) {
    if (n.size() != 1) parse_fail(n, "'model.file' cannot be combined with other model keys");
    const std::filesystem::path p = base / scalar<std::string>(n["file"], "model.file");
    if (!std::filesystem::exists(p)) parse_fail(n["file"], "model file '" + p.string() + "' does not exist");
    YAML::Node sub;
    try {
      sub = YAML::LoadFile(p.string());
    } catch (const YAML::Exception& e) {
      fail(ErrorKind::ParseError, p.string() + ": " + e.what());
    }
    return model(sub, p.parent_path());
  }
  if (n["dim"]) m.dim = scalar<Eigen::Index>(n["dim"], "model.dim");
  if (m.dim < 1) parse_fail(n["dim"], "model.dim must be >= 1");
  if (n["preset"]) {
    m.preset = scalar<std::string>(n["preset"], "model.preset");
    const auto it = preset_keys().find(m.preset);
    if (it == preset_keys().end()) parse_fail(n["preset"], "unknown preset '" + m.preset + "'");
    if (m.dim != 1) parse_fail(n, "presets are one-dimensional");
    if (n["kernel"] || n["noise"]) parse_fail(n, "'preset' cannot be combined with explicit blocks");
    if (n["params"]) {
      if (!n["params"].IsMap()) parse_fail(n["params"], "model.params must be a mapping");
      for (const auto& kv : n["params"]) {
        const std::string k = kv.first.as<std::string>();
        if (std::find(it->second.begin(), it->second.end(), k) == it->second.end())
          parse_fail(kv.first, "unknown key '" + k + "' for preset " + m.preset);
        m.params[k] = number(kv.second, "model.params." + k);
      }
    }
  } else {
    if (n["params"]) parse_fail(n["params"], "'params' needs a preset");
    if (!n["kernel"] || !n["noise"]) parse_fail(n, "model needs either 'preset' or both 'kernel' and 'noise'");
    for (const char* which : {"kernel", "noise"}) {
      const YAML::Node lst = n[which];
      if (!lst.IsSequence() || lst.size() != 2) parse_fail(lst, std::string("model.") + which + " must list two blocks");
      auto& target = std::string(which) == "kernel" ? m.kernel : m.noise;
      for (std::size_t i = 0; i < 2; ++i) target[i] = block(lst[i], std::string("model.") + which + "[" + std::to_string(i) + "]");
    }
  }
  if (n["mass"]) m.mass = number(n["mass"], "model.mass");
  if (!(m.mass > 0.0)) parse_fail(n, "model.mass must be positive");
  const Eigen::Index d = m.dim;
  m.sigma0 = FieldSpec::empty(d);
  if (d > 1) {
    // defaults scale to the dimension
    m.gamma0 = {d, d, std::vector<ScalarExpr>(static_cast<std::size_t>(d * d))};
    m.Fe = {d, 1, std::vector<ScalarExpr>(static_cast<std::size_t>(d))};
  }
  if (n["gamma0"]) m.gamma0 = field(n["gamma0"], "model.gamma0");
  if (n["sigma0"]) m.sigma0 = field(n["sigma0"], "model.sigma0");
  if (n["g"]) m.g = field(n["g"], "model.g");
  if (n["h"]) m.h = field(n["h"], "model.h");
  if (n["sigma"]) m.sigma = field(n["sigma"], "model.sigma");
  if (n["Fe"]) m.Fe = field(n["Fe"], "model.Fe");
  m.x0 = n["x0"] ? vec(n["x0"], "model.x0", d) : Vector::Zero(d);
  m.v0 = n["v0"] ? vec(n["v0"], "model.v0", d) : Vector::Zero(d);
  return m;
}

inline ModelSpec model(const YAML::Node& n, const std::filesystem::path& base) { return model_body(n, base); }

inline StiffPolicy stiff_policy(const YAML::Node& n) {
  const std::string s = scalar<std::string>(n, "simulation.stiff_policy");
  if (s == "explicit") return StiffPolicy::Explicit;
  if (s == "ou_splitting") return StiffPolicy::OuSplitting;
  parse_fail(n, "stiff_policy must be 'explicit' or 'ou_splitting'");
}

}  // namespace cfgdetail

inline void validate_experiment(const ExperimentConfig& c) {
  validate_config(c.sim);
  require_decreasing(c.epsilons);
  if (!(c.msd.window > 0.0 && c.msd.window <= 1.0)) fail(ErrorKind::InvalidArgument, "msd.window must be in (0, 1]");
  if (c.msd.points < 2) fail(ErrorKind::InvalidArgument, "msd.points must be >= 2");
  if (c.msd.method != "monte_carlo" && c.msd.method != "laplace" && c.msd.method != "both")
    fail(ErrorKind::InvalidArgument, "msd.method must be monte_carlo, laplace or both");
  if (!(c.spectrum.omegaMin > 0.0 && c.spectrum.omegaMax > c.spectrum.omegaMin) || c.spectrum.points < 2 ||
      !(c.spectrum.tMax > 0.0) || c.spectrum.tPoints < 2)
    fail(ErrorKind::InvalidArgument, "bad spectrum grid");
}

inline ExperimentConfig parse_config_node(const YAML::Node& root, const std::filesystem::path& base = ".") {
  using namespace cfgdetail;
  if (!root.IsMap()) fail(ErrorKind::ParseError, "config must be a mapping");
  require_keys(root, "config", {"model", "simulation", "limit", "converge", "msd", "spectrum", "output"});
  ExperimentConfig c;
  if (!root["model"]) fail(ErrorKind::ParseError, "config needs a 'model' section");
  c.model = model(root["model"], base);
  if (const YAML::Node s = root["simulation"]) {
    require_keys(s, "simulation", {"T", "dt", "seed", "paths", "epsilon", "stiff_policy", "auto_shrink", "noise_step",
                                   "record_every", "threads"});
    if (s["T"]) c.sim.T = number(s["T"], "simulation.T");
    if (s["dt"]) c.sim.dt = number(s["dt"], "simulation.dt");
    if (s["seed"]) c.sim.seed = scalar<std::uint64_t>(s["seed"], "simulation.seed");
    if (s["paths"]) c.sim.paths = scalar<long>(s["paths"], "simulation.paths");
    if (s["epsilon"]) c.sim.epsilon = number(s["epsilon"], "simulation.epsilon");
    if (s["stiff_policy"]) c.sim.stiffPolicy = stiff_policy(s["stiff_policy"]);
    if (s["auto_shrink"]) c.sim.autoShrink = scalar<bool>(s["auto_shrink"], "simulation.auto_shrink");
    if (s["noise_step"]) c.sim.noiseStep = number(s["noise_step"], "simulation.noise_step");
    if (s["record_every"]) c.sim.recordEvery = scalar<int>(s["record_every"], "simulation.record_every");
    if (s["threads"]) c.sim.threads = scalar<int>(s["threads"], "simulation.threads");
  }
  if (const YAML::Node l = root["limit"]) {
    require_keys(l, "limit", {"kind", "m0", "gamma2", "gamma3", "gamma4", "phi", "simulate", "A1", "A2", "B1", "B2",
                              "Sigma1", "Sigma2"});
    if (l["kind"]) {
      const std::string k = scalar<std::string>(l["kind"], "limit.kind");
      bool found = false;
      for (const auto& [name, kind] : limit_kind_names())
        if (name == k) {
          c.limit.kind = kind;
          found = true;
        }
      if (!found) parse_fail(l["kind"], "unknown limit kind '" + k + "'");
    }
    if (l["m0"]) c.limit.m0 = number(l["m0"], "limit.m0");
    if (l["gamma2"]) c.limit.gamma2 = number(l["gamma2"], "limit.gamma2");
    if (l["gamma3"]) c.limit.gamma3 = number(l["gamma3"], "limit.gamma3");
    if (l["gamma4"]) c.limit.gamma4 = number(l["gamma4"], "limit.gamma4");
    if (l["phi"]) c.limit.phi = number(l["phi"], "limit.phi");
    if (l["simulate"]) c.limit.simulate = scalar<bool>(l["simulate"], "limit.simulate");
    const bool general = c.limit.kind == LimitKind::General;
    for (const char* k : {"A1", "A2", "B1", "B2", "Sigma1", "Sigma2"}) {
      if (l[k] && !general) parse_fail(l[k], std::string("'") + k + "' only applies to the general limit");
      if (general && !l[k]) parse_fail(l, std::string("general limit needs '") + k + "'");
    }
    if (general) {
      c.limit.A1 = matrix(l["A1"], "limit.A1");
      c.limit.A2 = matrix(l["A2"], "limit.A2");
      c.limit.B1 = matrix(l["B1"], "limit.B1").col(0);
      c.limit.B2 = matrix(l["B2"], "limit.B2").col(0);
      c.limit.Sigma1 = matrix(l["Sigma1"], "limit.Sigma1");
      c.limit.Sigma2 = matrix(l["Sigma2"], "limit.Sigma2");
    }
  }
  if (const YAML::Node cv = root["converge"]) {
    require_keys(cv, "converge", {"epsilons"});
    if (cv["epsilons"]) {
      c.epsilons.clear();
      for (const auto& e : cv["epsilons"]) c.epsilons.push_back(number(e, "converge.epsilons"));
    }
  }
  if (const YAML::Node m = root["msd"]) {
    require_keys(m, "msd", {"method", "window", "points"});
    if (m["method"]) c.msd.method = scalar<std::string>(m["method"], "msd.method");
    if (m["window"]) c.msd.window = number(m["window"], "msd.window");
    if (m["points"]) c.msd.points = scalar<int>(m["points"], "msd.points");
  }
  if (const YAML::Node s = root["spectrum"]) {
    require_keys(s, "spectrum", {"omega_min", "omega_max", "points", "t_max", "t_points"});
    if (s["omega_min"]) c.spectrum.omegaMin = number(s["omega_min"], "spectrum.omega_min");
    if (s["omega_max"]) c.spectrum.omegaMax = number(s["omega_max"], "spectrum.omega_max");
    if (s["points"]) c.spectrum.points = scalar<int>(s["points"], "spectrum.points");
    if (s["t_max"]) c.spectrum.tMax = number(s["t_max"], "spectrum.t_max");
    if (s["t_points"]) c.spectrum.tPoints = scalar<int>(s["t_points"], "spectrum.t_points");
  }
  if (const YAML::Node o = root["output"]) {
    require_keys(o, "output", {"dir"});
    if (o["dir"]) c.outDir = scalar<std::string>(o["dir"], "output.dir");
  }
  validate_experiment(c);
  return c;
}

inline ExperimentConfig parse_config_string(const std::string& text, const std::filesystem::path& base = ".") {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::ParseError, e.what());
  }
  return parse_config_node(root, base);
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::ParseError, "cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str(), path.parent_path());
}

// ---------------------------------------------------------------------------------------------
// serialization (fully expanded: every default written out)

namespace cfgdetail {

inline void emit_number(YAML::Emitter& e, double v) { e << format_double(v); }

inline void emit_matrix(YAML::Emitter& e, const Matrix& m) {
  e << YAML::Flow << YAML::BeginSeq;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    e << YAML::BeginSeq;
    for (Eigen::Index j = 0; j < m.cols(); ++j) emit_number(e, m(i, j));
    e << YAML::EndSeq;
  }
  e << YAML::EndSeq;
}

inline void emit_vector(YAML::Emitter& e, const Vector& v) {
  e << YAML::Flow << YAML::BeginSeq;
  for (Eigen::Index i = 0; i < v.size(); ++i) emit_number(e, v(i));
  e << YAML::EndSeq;
}

inline void emit_expr(YAML::Emitter& e, const ScalarExpr& x) {
  using K = ScalarExpr::Kind;
  if (x.kind == K::Const) {
    emit_number(e, x.offset);
    return;
  }
  static const std::map<K, const char*> names = {
      {K::Sin, "sin"}, {K::Cos, "cos"}, {K::Exp, "exp"}, {K::Rational, "rational"}};
  e << YAML::Flow << YAML::BeginMap << YAML::Key << "kind" << YAML::Value << names.at(x.kind);
  if (x.kind == K::Rational) {
    e << YAML::Key << "num" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (double c : x.num) emit_number(e, c);
    e << YAML::EndSeq << YAML::Key << "den" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (double c : x.den) emit_number(e, c);
    e << YAML::EndSeq;
  } else {
    e << YAML::Key << "offset" << YAML::Value;
    emit_number(e, x.offset);
    e << YAML::Key << "amp" << YAML::Value;
    emit_number(e, x.amp);
    e << YAML::Key << "freq" << YAML::Value;
    emit_number(e, x.freq);
    e << YAML::Key << "phase" << YAML::Value;
    emit_number(e, x.phase);
  }
  e << YAML::Key << "axis" << YAML::Value << x.axis << YAML::EndMap;
}

inline void emit_field(YAML::Emitter& e, const FieldSpec& f) {
  e << YAML::Flow << YAML::BeginSeq;
  for (Eigen::Index i = 0; i < f.rows; ++i) {
    e << YAML::BeginSeq;
    for (Eigen::Index j = 0; j < f.cols; ++j) emit_expr(e, f.entries[static_cast<std::size_t>(i * f.cols + j)]);
    e << YAML::EndSeq;
  }
  e << YAML::EndSeq;
}

inline void emit_block(YAML::Emitter& e, const BlockSpec& b) {
  if (b.Gamma.size() == 0) {
    e << YAML::Null;
    return;
  }
  e << YAML::BeginMap;
  e << YAML::Key << "Gamma" << YAML::Value;
  emit_matrix(e, b.Gamma);
  e << YAML::Key << "C" << YAML::Value;
  emit_matrix(e, b.C);
  if (b.kernelOnly) {
    e << YAML::Key << "M" << YAML::Value;
    emit_matrix(e, b.M);
    e << YAML::Key << "kernel_only" << YAML::Value << true;
  } else {
    e << YAML::Key << "Sigma" << YAML::Value;
    emit_matrix(e, b.Sigma);
    if (b.D.size()) {
      e << YAML::Key << "D" << YAML::Value;
      emit_matrix(e, b.D);
    }
  }
  e << YAML::Key << "alpha" << YAML::Value << b.alpha << YAML::EndMap;
}

}  // namespace cfgdetail

inline std::string serialize_config(const ExperimentConfig& c) {
  using namespace cfgdetail;
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  const ModelSpec& m = c.model;
  if (!m.preset.empty()) {
    e << YAML::Key << "preset" << YAML::Value << m.preset;
    e << YAML::Key << "params" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : m.params) {
      e << YAML::Key << k << YAML::Value;
      emit_number(e, v);
    }
    e << YAML::EndMap;
  }
  e << YAML::Key << "dim" << YAML::Value << m.dim;
  e << YAML::Key << "mass" << YAML::Value;
  emit_number(e, m.mass);
  const std::pair<const char*, const FieldSpec*> fields[] = {
      {"gamma0", &m.gamma0}, {"g", &m.g}, {"h", &m.h}, {"sigma", &m.sigma}, {"Fe", &m.Fe}};
  for (const auto& [k, f] : fields) {
    e << YAML::Key << k << YAML::Value;
    emit_field(e, *f);
  }
  if (m.sigma0.is_set()) {
    e << YAML::Key << "sigma0" << YAML::Value;
    emit_field(e, m.sigma0);
  }
  e << YAML::Key << "x0" << YAML::Value;
  emit_vector(e, m.x0);
  e << YAML::Key << "v0" << YAML::Value;
  emit_vector(e, m.v0);
  if (m.preset.empty()) {
    for (const char* which : {"kernel", "noise"}) {
      const auto& bl = std::string(which) == "kernel" ? m.kernel : m.noise;
      e << YAML::Key << which << YAML::Value << YAML::BeginSeq;
      for (const auto& b : bl) emit_block(e, b);
      e << YAML::EndSeq;
    }
  }
  e << YAML::EndMap;

  const SimConfig& s = c.sim;
  e << YAML::Key << "simulation" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "T" << YAML::Value;
  emit_number(e, s.T);
  e << YAML::Key << "dt" << YAML::Value;
  emit_number(e, s.dt);
  e << YAML::Key << "seed" << YAML::Value << s.seed;
  e << YAML::Key << "paths" << YAML::Value << s.paths;
  if (s.epsilon) {
    e << YAML::Key << "epsilon" << YAML::Value;
    emit_number(e, *s.epsilon);
  }
  e << YAML::Key << "stiff_policy" << YAML::Value
    << (s.stiffPolicy == StiffPolicy::OuSplitting ? "ou_splitting" : "explicit");
  e << YAML::Key << "auto_shrink" << YAML::Value << s.autoShrink;
  if (s.noiseStep) {
    e << YAML::Key << "noise_step" << YAML::Value;
    emit_number(e, *s.noiseStep);
  }
  e << YAML::Key << "record_every" << YAML::Value << s.recordEvery;
  e << YAML::Key << "threads" << YAML::Value << s.threads;
  e << YAML::EndMap;

  const LimitSpec& l = c.limit;
  e << YAML::Key << "limit" << YAML::Value << YAML::BeginMap;
  for (const auto& [name, kind] : limit_kind_names())
    if (kind == l.kind) e << YAML::Key << "kind" << YAML::Value << name;
  e << YAML::Key << "m0" << YAML::Value;
  emit_number(e, l.m0);
  e << YAML::Key << "gamma2" << YAML::Value;
  emit_number(e, l.gamma2);
  e << YAML::Key << "gamma3" << YAML::Value;
  emit_number(e, l.gamma3);
  if (l.gamma4) {
    e << YAML::Key << "gamma4" << YAML::Value;
    emit_number(e, *l.gamma4);
  }
  if (l.phi) {
    e << YAML::Key << "phi" << YAML::Value;
    emit_number(e, *l.phi);
  }
  e << YAML::Key << "simulate" << YAML::Value << l.simulate;
  if (l.kind == LimitKind::General) {
    const std::pair<const char*, Matrix> mats[] = {{"A1", l.A1}, {"A2", l.A2}, {"B1", l.B1}, {"B2", l.B2},
                                                   {"Sigma1", l.Sigma1}, {"Sigma2", l.Sigma2}};
    for (const auto& [k, mat] : mats) {
      e << YAML::Key << k << YAML::Value;
      emit_matrix(e, mat);
    }
  }
  e << YAML::EndMap;

  e << YAML::Key << "converge" << YAML::Value << YAML::BeginMap << YAML::Key << "epsilons" << YAML::Value;
  emit_vector(e, Eigen::Map<const Vector>(c.epsilons.data(), static_cast<Eigen::Index>(c.epsilons.size())));
  e << YAML::EndMap;

  e << YAML::Key << "msd" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "method" << YAML::Value << c.msd.method;
  e << YAML::Key << "window" << YAML::Value;
  emit_number(e, c.msd.window);
  e << YAML::Key << "points" << YAML::Value << c.msd.points << YAML::EndMap;

  e << YAML::Key << "spectrum" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "omega_min" << YAML::Value;
  emit_number(e, c.spectrum.omegaMin);
  e << YAML::Key << "omega_max" << YAML::Value;
  emit_number(e, c.spectrum.omegaMax);
  e << YAML::Key << "points" << YAML::Value << c.spectrum.points;
  e << YAML::Key << "t_max" << YAML::Value;
  emit_number(e, c.spectrum.tMax);
  e << YAML::Key << "t_points" << YAML::Value << c.spectrum.tPoints << YAML::EndMap;

  e << YAML::Key << "output" << YAML::Value << YAML::BeginMap << YAML::Key << "dir" << YAML::Value << c.outDir
    << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

// ---------------------------------------------------------------------------------------------
// building objects from a config

inline PresetParams preset_params(const ModelSpec& m) {
  PresetParams p;
  auto get = [&](const char* k, double& v) {
    if (const auto it = m.params.find(k); it != m.params.end()) v = it->second;
  };
  get("Gamma1", p.Gamma1);
  get("Gamma2", p.Gamma2);
  get("Gamma3", p.Gamma3);
  get("beta", p.beta);
  return p;
}

inline GLEModel build_model(const ModelSpec& s) {
  GLEModel m;
  m.d = s.dim;
  m.mass = s.mass;
  if (!s.preset.empty()) {
    auto kn = preset(s.preset, preset_params(s));
    m.kernel = kn.first;
    m.noise = kn.second;
  } else {
    for (int i = 0; i < 2; ++i) {
      m.kernel.blocks[static_cast<std::size_t>(i)] = s.kernel[static_cast<std::size_t>(i)].build();
      m.noise.blocks[static_cast<std::size_t>(i)] = s.noise[static_cast<std::size_t>(i)].build();
    }
  }
  m.gamma0 = s.gamma0.build();
  m.sigma0 = s.sigma0.build();
  m.g = s.g.build();
  m.h = s.h.build();
  m.sigma = s.sigma.build();
  m.Fe = s.Fe.build();
  m.initial = {s.x0, s.v0};
  check_model_dimensions(m);
  return m;
}

inline ScalarFields scalar_fields(const GLEModel& m) {
  if (m.d != 1) fail(ErrorKind::DimensionMismatch, "one-dimensional limit needs a scalar model");
  return {m.g, m.h, m.sigma, m.Fe};
}

inline LimitSystem build_limit(const ExperimentConfig& c, const GLEModel& m) {
  const LimitSpec& l = c.limit;
  const PresetParams p = preset_params(c.model);
  switch (l.kind) {
    case LimitKind::SmallMass: return small_mass_limit(m);
    case LimitKind::VanishingDamping: {
      const auto* r = std::get_if<BiExpRecipe>(&m.kernel.blocks[1].recipe);
      const Eigen::Index p2 = r ? r->slow.size() : 1;
      const auto* rn = std::get_if<BiExpRecipe>(&m.noise.blocks[1].recipe);
      const Eigen::Index p4 = rn ? rn->slow.size() : 1;
      return vanishing_damping_limit(m, l.m0, Matrix::Identity(p2, p2) * l.gamma2,
                                     Matrix::Identity(p4, p4) * l.gamma4.value_or(l.gamma2));
    }
    case LimitKind::CorollarySmallMass: return corollary_small_mass_1d(scalar_fields(m), p.beta, p.Gamma1, l.phi);
    case LimitKind::CorollaryVanishing:
      return corollary_vanishing_1d(scalar_fields(m), p.beta, p.Gamma1, l.gamma2, l.m0, l.phi);
    case LimitKind::Fdt: return fdt_reduction(m.sigma, m.Fe, p.beta, p.Gamma1, &m.initial.x0);
    case LimitKind::Hyper: return hyper_limit_1d(m.g, m.sigma, m.Fe, p.beta, p.Gamma1, p.Gamma2, l.gamma3, l.m0);
    case LimitKind::General: {
      LimitInputs in{CoefficientField::from_constant(l.A1), CoefficientField::from_constant(l.A2),
                     CoefficientField::from_constant(l.B1), CoefficientField::from_constant(l.B2),
                     CoefficientField::from_constant(l.Sigma1), CoefficientField::from_constant(l.Sigma2)};
      LimitSystem s = general_limit(in);
      linearize_affine(s);
      return s;
    }
  }
  fail(ErrorKind::InvalidArgument, "unhandled limit kind");
}

// Pre-limit family matching the configured limit kind.
inline SystemFamily build_family(const ExperimentConfig& c, const GLEModel& m) {
  const LimitSpec& l = c.limit;
  switch (l.kind) {
    case LimitKind::VanishingDamping:
    case LimitKind::CorollaryVanishing: {
      const auto* r = std::get_if<BiExpRecipe>(&m.kernel.blocks[1].recipe);
      const auto* rn = std::get_if<BiExpRecipe>(&m.noise.blocks[1].recipe);
      if (!r || !rn) fail(ErrorKind::InvalidArgument, "vanishing-damping family needs bi-exponential blocks");
      const Matrix g2 = Matrix::Identity(r->slow.size(), r->slow.size()) * l.gamma2;
      const Matrix g4 = Matrix::Identity(rn->slow.size(), rn->slow.size()) * l.gamma4.value_or(l.gamma2);
      const double m0 = l.m0;
      return [m, m0, g2, g4](double eps) -> SdeSystem { return vanishing_damping_family_system(m, m0, g2, g4, eps); };
    }
    case LimitKind::Hyper:
    case LimitKind::General: fail(ErrorKind::InvalidArgument, "no pre-limit family for this limit kind");
    default:
      return [m](double eps) -> SdeSystem {
        GLEModel me = m;
        me.mass = m.mass * eps;
        return build_markovian_system(me);
      };
  }
}

}  // namespace gle
