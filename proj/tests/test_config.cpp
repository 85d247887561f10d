#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gle/config.hpp"

using namespace gle;
using Catch::Approx;

namespace {

ErrorKind kind_of(const std::string& text) {
  try {
    parse_config_string(text);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

std::string message_of(const std::string& text) {
  try {
    parse_config_string(text);
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("minimal preset config gets defaults", "[config]") {
  const ExperimentConfig c = parse_config_string("model:\n  preset: M1\n");
  CHECK(c.model.preset == "M1");
  CHECK(c.model.mass == 1.0);
  CHECK(c.sim.T == 1.0);
  CHECK(c.epsilons == std::vector<double>{0.2, 0.1, 0.05, 0.025});
  CHECK(c.limit.kind == LimitKind::SmallMass);
  const GLEModel m = build_model(c.model);
  CHECK(m.kernel.blocks[1].alpha == 1);
  CHECK(m.kernel.blocks[0].alpha == 0);
  CHECK(m.g(0.0, Vector::Zero(1))(0, 0) == 1.0);
}

TEST_CASE("preset parameters reach the realization", "[config]") {
  const ExperimentConfig a = parse_config_string("model: {preset: M2, params: {beta: 2}}\n");
  const ExperimentConfig b = parse_config_string("model: {preset: M2}\n");
  const GLEModel ma = build_model(a.model), mb = build_model(b.model);
  // kernel at zero scales with beta^2
  CHECK(kernel_eval(ma.kernel, 0.0)(0, 0) == Approx(4.0 * kernel_eval(mb.kernel, 0.0)(0, 0)).epsilon(1e-12));
}

TEST_CASE("unknown keys are rejected with their name", "[config]") {
  CHECK(kind_of("model: {preset: hyper, params: {gamma_3: 1}}\n") == ErrorKind::ParseError);
  CHECK(message_of("model: {preset: hyper, params: {gamma_3: 1}}\n").find("gamma_3") != std::string::npos);
  CHECK(message_of("model: {preset: M1}\nsimulation:\n  steps: 3\n").find("line 3") != std::string::npos);
  CHECK(kind_of("model: {preset: M1}\nfoo: 1\n") == ErrorKind::ParseError);
  CHECK(kind_of("model: {preset: M2, params: {Gamma2: 1}}\n") == ErrorKind::ParseError);
  CHECK(kind_of("model: {preset: M9}\n") == ErrorKind::ParseError);
  CHECK(kind_of("model: {preset: M1, g: {kind: tan}}\n") == ErrorKind::ParseError);
  CHECK(kind_of("model: [1, 2\n") == ErrorKind::ParseError);
}

TEST_CASE("semantic checks", "[config]") {
  CHECK(kind_of("model: {preset: M1}\nconverge: {epsilons: [0.1, 0.2]}\n") == ErrorKind::InvalidArgument);
  CHECK(kind_of("model: {preset: M1}\nsimulation: {dt: 2, T: 1}\n") == ErrorKind::InvalidArgument);
  CHECK(kind_of("model: {preset: M1, mass: -1}\n") == ErrorKind::ParseError);
}

TEST_CASE("expression fields", "[config]") {
  const ExperimentConfig c =
      parse_config_string("model:\n  preset: M1\n  g: {kind: sin, offset: 2, amp: 1}\n"
                          "  Fe: {kind: rational, num: [0, -1], den: [1, 0, 1]}\n");
  const GLEModel m = build_model(c.model);
  const Vector x = Vector::Constant(1, 0.7);
  CHECK(m.g(0.0, x)(0, 0) == Approx(2.0 + std::sin(0.7)).epsilon(1e-15));
  CHECK(m.Fe(0.0, x)(0, 0) == Approx(-0.7 / (1.0 + 0.49)).epsilon(1e-15));
}

TEST_CASE("explicit blocks and model files", "[config]") {
  const std::string body =
      "dim: 1\nkernel:\n  - null\n  - {Gamma: [[2]], Sigma: [[2]], C: [[1]]}\n"
      "noise:\n  - null\n  - {Gamma: [[2]], Sigma: [[2]], C: [[1]]}\n";
  const auto dir = std::filesystem::temp_directory_path() / "gle_config_test";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "model.yaml") << body;
  std::ofstream(dir / "exp.yaml") << "model: {file: model.yaml}\n";
  const ExperimentConfig c = parse_config(dir / "exp.yaml");
  const GLEModel m = build_model(c.model);
  // Gamma M + M Gamma = Sigma^2 gives M = 1, kernel C M C^T e^{-2t}
  CHECK(kernel_eval(m.kernel, 0.5)(0, 0) == Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(kind_of("model: {file: missing.yaml}\n") == ErrorKind::ParseError);
}

TEST_CASE("serialization round-trips", "[config]") {
  const char* texts[] = {
      "model: {preset: M1}\n",
      "model:\n  preset: hyper\n  params: {Gamma3: 4.5}\n  g: {kind: cos, offset: 2, amp: 1}\n  v0: 0.3\n"
      "simulation: {T: 3, dt: 0.01, seed: 12, paths: 7, stiff_policy: ou_splitting, epsilon: 0.1}\n"
      "limit: {kind: hyper, gamma3: 2, m0: 1.5}\nconverge: {epsilons: [0.4, 0.2]}\n"
      "msd: {method: laplace}\noutput: {dir: results}\n",
      "model:\n  kernel: [null, {Gamma: [[2]], Sigma: [[2]], C: [[1]]}]\n"
      "  noise: [null, {Gamma: [[2]], Sigma: [[2]], C: [[1]]}]\n"
      "limit: {kind: general, A1: [[0]], A2: [[1]], B1: [0], B2: [0], Sigma1: [[0]], Sigma2: [[1]]}\n"};
  for (const char* t : texts) {
    const ExperimentConfig c = parse_config_string(t);
    const std::string once = serialize_config(c);
    const std::string twice = serialize_config(parse_config_string(once));
    INFO(once);
    CHECK(once == twice);
  }
  const ExperimentConfig c = parse_config_string(texts[1]);
  const ExperimentConfig r = parse_config_string(serialize_config(c));
  CHECK(r.sim.seed == 12);
  CHECK(r.sim.stiffPolicy == StiffPolicy::OuSplitting);
  CHECK(*r.sim.epsilon == 0.1);
  CHECK(r.limit.kind == LimitKind::Hyper);
  CHECK(r.model.params.at("Gamma3") == 4.5);
  CHECK(r.outDir == "results");
}

TEST_CASE("limits built from config", "[config]") {
  const ExperimentConfig c = parse_config_string("model: {preset: M1, params: {Gamma1: 1, Gamma2: 2, beta: 1}}\n"
                                                 "limit: {kind: corollary1d_vanishing, gamma2: 1, m0: 1}\n");
  const GLEModel m = build_model(c.model);
  const LimitSystem a = build_limit(c, m);
  CHECK(a.provenance.size() > 0);
  ExperimentConfig v = c;
  v.limit.kind = LimitKind::VanishingDamping;
  const LimitSystem b = build_limit(v, m);
  CHECK(a.dim() == b.dim());
  const SdeSystem pre = build_family(c, m)(0.1);
  CHECK(pre.dim() > a.dim());
}
