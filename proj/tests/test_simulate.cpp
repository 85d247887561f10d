#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "gle/model.hpp"
#include "gle/simulate.hpp"

using namespace gle;
using Catch::Approx;

namespace {

SdeSystem scalar_ou(double gamma, double sigma, bool asOuSlice) {
  SdeSystem s = linear_system({Matrix::Constant(1, 1, -gamma), Vector::Zero(1), Matrix::Constant(1, 1, sigma)},
                              Vector::Zero(1));
  if (asOuSlice) s.ouSlices.push_back({0, Matrix::Constant(1, 1, gamma), Matrix::Constant(1, 1, sigma), 0});
  return s;
}

}  // namespace

TEST_CASE("Philox known-answer vectors", "[rng]") {
  // reference values from the Random123 distribution kat_vectors
  auto r = philox4x32({0, 0, 0, 0}, {0, 0});
  CHECK(r[0] == 0x6627e8d5u);
  CHECK(r[1] == 0xe169c58du);
  CHECK(r[2] == 0xbc57ac4cu);
  CHECK(r[3] == 0x9b00dbd8u);
  r = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  CHECK(r[0] == 0x408f276du);
  CHECK(r[1] == 0x41c83b0eu);
  CHECK(r[2] == 0xa20bc7c6u);
  CHECK(r[3] == 0x6d5451fdu);
  r = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  CHECK(r[0] == 0xd16cfe09u);
  CHECK(r[1] == 0x94fdccebu);
  CHECK(r[2] == 0x5001e420u);
  CHECK(r[3] == 0x24126ea1u);
}

TEST_CASE("normal source moments", "[rng]") {
  NormalSource ns(42, 7);
  double s1 = 0, s2 = 0, s4 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = ns.normal(Stream::Wiener, 3, static_cast<std::uint64_t>(i));
    s1 += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  CHECK(std::abs(s1 / n) < 4.0 / std::sqrt(n));
  CHECK(s2 / n == Approx(1.0).margin(4.0 * std::sqrt(2.0 / n)));
  CHECK(s4 / n == Approx(3.0).margin(4.0 * std::sqrt(96.0 / n)));
  // addressing is order independent
  NormalSource other(42, 7);
  CHECK(other.normal(Stream::Wiener, 3, 12345) == ns.normal(Stream::Wiener, 3, 12345));
  CHECK(other.normal(Stream::Wiener, 3, 12345) != other.normal(Stream::Wiener, 4, 12345));
  CHECK(NormalSource(43, 7).normal(Stream::Wiener, 3, 0) != ns.normal(Stream::Wiener, 3, 0));
}

TEST_CASE("zero drift and diffusion leave the state constant", "[simulate]") {
  SdeSystem s = linear_system({Matrix::Zero(2, 2), Vector::Zero(2), Matrix::Zero(2, 1)}, Vector::Constant(2, 1.5));
  SimConfig c;
  c.T = 1.0;
  c.dt = 0.1;
  const Trajectory tr = simulate_sde(s, c);
  REQUIRE(tr.times.size() == 11);
  CHECK(tr.times.front() == 0.0);
  CHECK(tr.times.back() >= c.T - c.dt);
  for (const auto& z : tr.states) CHECK((z - Vector::Constant(2, 1.5)).norm() == 0.0);
}

TEST_CASE("scalar OU stationary variance", "[simulate]") {
  for (bool split : {false, true}) {
    SdeSystem s = scalar_ou(1.0, std::sqrt(2.0), split);
    s.initialGaussian.push_back({0, Matrix::Identity(1, 1)});
    SimConfig c;
    c.T = 10.0;
    c.dt = 0.01;
    c.paths = 10000;
    c.seed = 2024;
    c.recordEvery = 1000;
    c.stiffPolicy = split ? StiffPolicy::OuSplitting : StiffPolicy::Explicit;
    Integrator in(s, c);
    double sum = 0;
    for (long p = 0; p < c.paths; ++p)
      in.run(p, [&](long k, double, const Vector& z) {
        if (k == in.steps()) sum += z(0) * z(0);
      });
    const double var = sum / static_cast<double>(c.paths);
    CHECK(var > 0.97);
    CHECK(var < 1.03);
  }
}

TEST_CASE("runs are deterministic and thread-count independent", "[simulate]") {
  GLEModel m = scalar_model(preset("M1", {}), 1.0);
  const MarkovianSystem s = build_markovian_system(m);
  SimConfig c;
  c.T = 2.0;
  c.dt = 0.01;
  c.paths = 130;
  c.seed = 9;
  c.threads = 1;
  const auto a = simulate_ensemble(s, c);
  c.threads = 3;
  const auto b = simulate_ensemble(s, c);
  REQUIRE(a.size() == b.size());
  for (std::size_t p = 0; p < a.size(); ++p)
    for (std::size_t k = 0; k < a[p].states.size(); ++k) REQUIRE((a[p].states[k] - b[p].states[k]).norm() == 0.0);
  std::ostringstream o1, o2;
  write_trajectory_csv(o1, a[5], 5L);
  write_trajectory_csv(o2, simulate_sde(s, c, 5), 5L);
  CHECK(o1.str() == o2.str());
  CHECK(o1.str().rfind("path,t,x[0],v[0],y2[0],y2[1],beta4[0]", 0) == 0);
}

TEST_CASE("coarse increments are sums of fine ones", "[simulate]") {
  // dz = dW: endpoint equals W(T) regardless of dt when the noise grid is shared
  SdeSystem s = linear_system({Matrix::Zero(1, 1), Vector::Zero(1), Matrix::Identity(1, 1)}, Vector::Zero(1));
  SimConfig c;
  c.T = 1.0;
  c.noiseStep = 0.001;
  c.seed = 77;
  c.dt = 0.001;
  const double fine = simulate_sde(s, c, 3).states.back()(0);
  c.dt = 0.1;
  const double coarse = simulate_sde(s, c, 3).states.back()(0);
  CHECK(coarse == Approx(fine).margin(1e-12));
}

TEST_CASE("splitting and explicit agree as dt shrinks", "[simulate]") {
  // stiff-ish linear system with an OU slice feeding a slow component
  Matrix a(2, 2);
  a << -0.5, 1.0, 0.0, -4.0;
  Matrix g(2, 1);
  g << 0.0, 2.0;
  SdeSystem s = linear_system({a, Vector::Zero(2), g}, Vector::Zero(2));
  s.ouSlices.push_back({1, Matrix::Constant(1, 1, 4.0), Matrix::Constant(1, 1, 2.0), 0});
  std::vector<double> rms, dts = {0.04, 0.02, 0.01, 0.005};
  for (double dt : dts) {
    SimConfig c;
    c.T = 2.0;
    c.dt = dt;
    c.noiseStep = 0.005 / 4;
    c.seed = 5;
    double acc = 0;
    const int paths = 400;
    for (int p = 0; p < paths; ++p) {
      c.stiffPolicy = StiffPolicy::Explicit;
      const double e = simulate_sde(s, c, p).states.back()(0);
      c.stiffPolicy = StiffPolicy::OuSplitting;
      const double o = simulate_sde(s, c, p).states.back()(0);
      acc += (e - o) * (e - o);
    }
    rms.push_back(std::sqrt(acc / paths));
  }
  for (std::size_t i = 1; i < rms.size(); ++i) CHECK(rms[i] < rms[i - 1]);
  // log-log slope of the paired RMS difference
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < rms.size(); ++i) {
    const double x = std::log(dts[i]), y = std::log(rms[i]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double n = static_cast<double>(rms.size());
  CHECK((n * sxy - sx * sy) / (n * sxx - sx * sx) >= 0.4);
}

TEST_CASE("stationary noise blocks keep their covariance", "[simulate]") {
  const GLEModel m = scalar_model(preset("hyper", {}), 1.0);
  const MarkovianSystem s = build_markovian_system(m);
  const Slice& b = s.layout.at("beta4");
  const Matrix& cov = m.noise.blocks[1].M;
  for (auto policy : {StiffPolicy::Explicit, StiffPolicy::OuSplitting}) {
    SimConfig c;
    c.T = 3.0;
    c.dt = policy == StiffPolicy::Explicit ? 0.002 : 0.05;
    c.paths = 4000;
    c.seed = 31;
    c.stiffPolicy = policy;
    c.recordEvery = 1 << 20;
    Integrator in(s, c);
    std::vector<Vector> samples;
    for (long p = 0; p < c.paths; ++p)
      in.run(p, [&](long k, double, const Vector& z) {
        if (k == in.steps()) samples.push_back(z.segment(b.offset, b.size));
      });
    const double np = static_cast<double>(samples.size());
    Matrix sc = Matrix::Zero(b.size, b.size);
    for (const auto& v : samples) sc += v * v.transpose();
    sc /= np;
    for (Eigen::Index i = 0; i < b.size; ++i)
      for (Eigen::Index j = 0; j < b.size; ++j) {
        // stderr of a product moment of Gaussians
        const double se = std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / np);
        // explicit EM adds an O(dt) stationary bias
        const double bias = policy == StiffPolicy::Explicit ? 0.01 * std::abs(cov(i, j)) : 0.0;
        CHECK(std::abs(sc(i, j) - cov(i, j)) <= 4.0 * se + bias);
      }
  }
}

TEST_CASE("step control and blow-up", "[simulate]") {
  SdeSystem s = scalar_ou(1.0, 1.0, false);
  s.stiffSlices = {"x"};
  SimConfig c;
  c.T = 1.0;
  c.dt = 0.1;
  c.epsilon = 0.05;
  CHECK(effective_step(s, c) == Approx(0.0025));
  c.epsilon = 0.03;
  const double h = effective_step(s, c);
  CHECK(h <= 0.03 / 20);
  CHECK(std::abs(0.1 / h - std::round(0.1 / h)) < 1e-9);
  c.autoShrink = false;
  REQUIRE_THROWS_AS(Integrator(s, c), Error);
  try {
    Integrator in(s, c);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::StepTooLarge);
  }
  c.autoShrink = true;
  c.stiffPolicy = StiffPolicy::OuSplitting;
  s.ouSlices.push_back({0, Matrix::Identity(1, 1), Matrix::Identity(1, 1), 0});
  CHECK(effective_step(s, c) == 0.1);

  SdeSystem up = linear_system({Matrix::Constant(1, 1, 5.0), Vector::Zero(1), Matrix::Zero(1, 1)}, Vector::Ones(1));
  SimConfig u;
  u.T = 10.0;
  u.dt = 0.01;
  try {
    simulate_sde(up, u);
    FAIL("expected blow-up");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Blowup);
  }
  u.dt = 20.0;
  REQUIRE_THROWS_AS(simulate_sde(up, u), Error);
}

TEST_CASE("coupled pairs share noise", "[simulate]") {
  GLEModel m = scalar_model(preset("M1", {}), 1.0);
  const MarkovianSystem s = build_markovian_system(m);
  SimConfig c;
  c.T = 5.0;
  c.dt = 0.01;
  c.seed = 4;
  const CoupledPair cp = simulate_coupled_pair(s, s, c, 2);
  CHECK(cp.supDistance == 0.0);
  CHECK(cp.preLimit.states.back() == cp.limit.states.back());

  SdeSystem other = linear_system({-Matrix::Identity(1, 1), Vector::Zero(1), Matrix::Ones(1, 2)}, Vector::Zero(1));
  try {
    simulate_coupled_pair(s, other, c);
    FAIL("expected channel mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ChannelMismatch);
  }
}

TEST_CASE("ballistic growth for the exactly solvable free particle", "[simulate]") {
  GLEModel m = scalar_model(preset("M1", {}), 1.0);
  const MarkovianSystem s = build_markovian_system(m);
  SimConfig c;
  c.T = 50.0;
  c.dt = 0.02;
  c.paths = 1000;
  c.seed = 8;
  c.recordEvery = 50;
  Integrator in(s, c);
  const std::size_t nrec = static_cast<std::size_t>(in.steps() / c.recordEvery) + 1;
  std::vector<double> msd(nrec, 0.0), ts(nrec, 0.0);
  for (long p = 0; p < c.paths; ++p) {
    std::size_t i = 0;
    in.run(p, [&](long, double t, const Vector& z) {
      ts[i] = t;
      msd[i++] += z(0) * z(0) / static_cast<double>(c.paths);
    });
  }
  // fit over t in [25, 50]
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (std::size_t i = 0; i < nrec; ++i)
    if (ts[i] >= 25.0) {
      const double x = std::log(ts[i]), y = std::log(msd[i]);
      sx += x, sy += y, sxx += x * x, sxy += x * y, n += 1;
    }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope == Approx(2.0).margin(0.15));
}
