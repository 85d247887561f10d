#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "gle/homogenize.hpp"

using namespace gle;
using Catch::Approx;
using K = ScalarExpr::Kind;

namespace {

CoefficientField two_plus_sin() { return expr_field(1, 1, {{K::Sin, 2.0, 1.0}}); }
CoefficientField two_plus_cos() { return expr_field(1, 1, {{K::Cos, 2.0, 1.0}}); }
CoefficientField one() { return CoefficientField::scalar(1.0); }

// x in [-6, 6], remaining coordinates standard normal
Vector random_state(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d = 1) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = i < d ? u(rng) : nd(rng);
  return z;
}

GLEModel m2_model(const CoefficientField& g, const CoefficientField& h, const CoefficientField& s) {
  GLEModel m = scalar_model(preset("M2", {}), 1.0);
  m.g = g;
  m.h = h;
  m.sigma = s;
  return m;
}

GLEModel m1_model(const CoefficientField& g, const CoefficientField& h, const CoefficientField& s, double beta = 1.0,
                  double gamma1 = 1.0) {
  PresetParams p;
  p.beta = beta;
  p.Gamma1 = gamma1;
  p.Gamma2 = gamma1 + 1.0;
  GLEModel m = scalar_model(preset("M1", p), 1.0);
  m.g = g;
  m.h = h;
  m.sigma = s;
  return m;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST_CASE("scalar noise-induced drift", "[homogenize]") {
  const CoefficientField gamma = two_plus_sin();
  CoefficientField a2 = gamma;
  a2.eval = [gamma](double t, const Vector& x) { return Matrix(-gamma(t, x)); };
  a2.deriv = [gamma](double t, const Vector& x, int l) { return Matrix(-field_derivative(gamma, t, x, l)); };
  const Vector s = noise_induced_drift(one(), a2, one(), 0.0, Vector::Zero(1));
  CHECK(s(0) == Approx(-0.0625).margin(1e-14));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const Vector x = random_state(rng, 1);
    const double g = 2.0 + std::sin(x(0)), dg = std::cos(x(0));
    CHECK(noise_induced_drift(one(), a2, one(), 0.0, x)(0) == Approx(-dg / (2.0 * g * g * g)).margin(1e-13));
  }
}

TEST_CASE("small-mass corollary oracles", "[homogenize]") {
  const ScalarFields f{two_plus_sin(), two_plus_sin(), one(), CoefficientField::scalar(0.0)};
  const LimitSystem s = corollary_small_mass_1d(f, 1.0, 1.0);
  const Vector c = s.correction_at(0.0, Vector::Zero(3));
  CHECK(c(0) == Approx(-0.125).margin(1e-14));
  CHECK(c(1) == Approx(0.0625).margin(1e-14));
  CHECK(c(2) == 0.0);

  // finite differences of 1/(gh) and 1/g as an independent oracle
  auto inv_gh = [](double x) { return 1.0 / std::pow(2.0 + std::sin(x), 2); };
  auto inv_g = [](double x) { return 1.0 / (2.0 + std::sin(x)); };
  const double h = 1e-5;
  const double s1 = 2.0 * (inv_gh(h) - inv_gh(-h)) / (2 * h) * inv_gh(0.0);
  const double s2 = -(inv_g(h) - inv_g(-h)) / (2 * h) * inv_gh(0.0);
  CHECK(c(0) == Approx(s1).margin(1e-9));
  CHECK(c(1) == Approx(s2).margin(1e-9));
}

TEST_CASE("vanishing-damping corollary oracles", "[homogenize]") {
  const ScalarFields f{one(), one(), two_plus_sin(), CoefficientField::scalar(0.0)};
  const LimitSystem s = corollary_vanishing_1d(f, 1.0, 1.0, 1.0, 1.0);
  const Vector c = s.correction_at(0.0, Vector::Zero(3));
  CHECK(c(0) == Approx(1.6).margin(1e-14));
  CHECK(c(1) == Approx(-0.8).margin(1e-14));
}

TEST_CASE("fluctuation-dissipation reduction", "[homogenize]") {
  const LimitSystem s = fdt_reduction(two_plus_sin(), CoefficientField::scalar(0.0), 1.0, 1.0);
  const Vector c = s.correction_at(0.0, Vector::Zero(2));
  CHECK(c(0) == Approx(-0.5).margin(1e-14));
  CHECK(c(1) == Approx(0.25).margin(1e-14));
  CHECK(kind_of([] { fdt_reduction(expr_field(1, 1, {{K::Sin, 0.5, 1.0}}), CoefficientField::scalar(0.0), 1.0, 1.0); }) ==
        ErrorKind::NonPositiveSigma);
  // equals the reduced system with g = h = sigma, phi = 1
  const ScalarFields f{two_plus_sin(), two_plus_sin(), two_plus_sin(), CoefficientField::scalar(0.3)};
  const LimitSystem r = corollary_small_mass_1d(f, 1.0, 1.0, 1.0);
  const LimitSystem q = fdt_reduction(two_plus_sin(), CoefficientField::scalar(0.3), 1.0, 1.0);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const Vector z = random_state(rng, 2);
    CHECK((r.drift_at(0.0, z) - q.drift_at(0.0, z)).norm() < 1e-12);
    CHECK((r.diffusion_at(0.0, z) - q.diffusion_at(0.0, z)).norm() < 1e-12);
  }
}

TEST_CASE("small-mass limit of the M2 embedding matches the scalar corollary", "[homogenize]") {
  for (const auto& fields : {std::array{two_plus_sin(), two_plus_sin(), one()},
                             std::array{two_plus_cos(), two_plus_sin(), two_plus_cos()},
                             std::array{two_plus_sin(), one(), two_plus_sin()}}) {
    GLEModel m = m2_model(fields[0], fields[1], fields[2]);
    m.Fe = expr_field(1, 1, {{K::Cos, 0.1, 0.5}});
    const LimitSystem lim = small_mass_limit(m);
    const LimitSystem cor = corollary_small_mass_1d({fields[0], fields[1], fields[2], m.Fe}, 1.0, 1.0);
    REQUIRE(lim.dim() == 3);
    std::mt19937_64 rng(7);
    for (int i = 0; i < 50; ++i) {
      const Vector z = random_state(rng, 3);
      CHECK((lim.drift_at(0.0, z) - cor.drift_at(0.0, z)).norm() < 1e-10);
      CHECK((lim.diffusion_at(0.0, z) - cor.diffusion_at(0.0, z)).norm() < 1e-10);
      CHECK((lim.correction_at(0.0, z) - cor.correction_at(0.0, z)).norm() < 1e-10);
    }
  }
}

TEST_CASE("closed-form small-mass limit agrees with the general form", "[homogenize]") {
  // two-dimensional model with position-dependent friction and both kernel slots active
  GLEModel m;
  m.d = 2;
  m.mass = 1.0;
  auto m1 = preset("M1", {});
  auto m2 = preset("M2", {});
  m.kernel = m1.first;
  m.noise = m1.second;
  m.kernel.blocks[0] = m2.first.blocks[1];
  m.noise.blocks[0] = m2.second.blocks[1];
  m.gamma0 = expr_field(2, 2, {{K::Sin, 2.0, 0.5}, {K::Const, 0.1}, {K::Const, -0.1}, {K::Cos, 1.5, 0.5, 1.0, 0.0, {}, {}, 1}});
  m.sigma0 = CoefficientField::from_constant(Matrix::Identity(2, 2) * 0.7);
  m.g = expr_field(2, 1, {{K::Sin, 2.0, 1.0}, {K::Cos, 1.0, 0.5, 1.0, 0.0, {}, {}, 1}});
  m.h = expr_field(1, 2, {{K::Const, 0.3}, {K::Cos, 1.0, 0.2}});
  m.sigma = expr_field(2, 1, {{K::Const, 0.4}, {K::Sin, -1.0, 0.3, 1.0, 0.0, {}, {}, 1}});
  m.Fe = expr_field(2, 1, {{K::Sin, 0.0, 1.0}, {K::Const, 0.2}});
  m.initial = {Vector::Zero(2), Vector::Zero(2)};

  const LimitSystem direct = small_mass_limit(m);
  const LimitSystem general = general_limit(small_mass_limit_inputs(m), small_mass_limit_options(m));
  REQUIRE(direct.dim() == general.dim());
  REQUIRE(direct.channels == general.channels);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    const Vector z = random_state(rng, direct.dim(), 2);
    CHECK((direct.drift_at(0.0, z) - general.drift_at(0.0, z)).norm() < 1e-10);
    CHECK((direct.diffusion_at(0.0, z) - general.diffusion_at(0.0, z)).norm() < 1e-10);
    CHECK((direct.correction_at(0.0, z) - general.correction_at(0.0, z)).norm() < 1e-10);
  }
}

TEST_CASE("vanishing-damping limit matches the scalar corollary", "[homogenize]") {
  for (double beta : {1.0, 0.7})
    for (double m0 : {1.0, 2.5}) {
      const double gamma1 = 1.3, gamma2 = 0.8;
      const auto g = two_plus_sin(), h = two_plus_cos(), s = expr_field(1, 1, {{K::Sin, 1.5, 0.5, 2.0}});
      GLEModel m = m1_model(g, h, s, beta, gamma1);
      m.Fe = expr_field(1, 1, {{K::Cos, 0.0, 0.4}});
      const Matrix gm = Matrix::Constant(1, 1, gamma2);
      const LimitSystem lim = vanishing_damping_limit(m, m0, gm, gm);
      const LimitSystem cor = corollary_vanishing_1d({g, h, s, m.Fe}, beta, gamma1, gamma2, m0);
      CHECK(lim.warnings.empty());
      std::mt19937_64 rng(13);
      for (int i = 0; i < 50; ++i) {
        const Vector z = random_state(rng, 3);
        CHECK((lim.drift_at(0.0, z) - cor.drift_at(0.0, z)).norm() < 1e-10);
        CHECK((lim.diffusion_at(0.0, z) - cor.diffusion_at(0.0, z)).norm() < 1e-10);
        CHECK((lim.correction_at(0.0, z) - cor.correction_at(0.0, z)).norm() < 1e-10);
      }
    }
}

TEST_CASE("reduced system is the image of the three-equation system", "[homogenize]") {
  for (double phi : {0.5, 1.0, 2.0}) {
    const auto s = two_plus_sin();
    CoefficientField g = expr_field(1, 1, {{K::Sin, 2.0 * phi, phi}});
    const ScalarFields f{g, two_plus_cos(), s, expr_field(1, 1, {{K::Cos, 0.2, 0.3}})};
    for (bool vanishing : {false, true}) {
      const LimitSystem full = vanishing ? corollary_vanishing_1d(f, 0.9, 1.1, 0.7, 1.4) : corollary_small_mass_1d(f, 0.9, 1.1);
      const LimitSystem red = vanishing ? corollary_vanishing_1d(f, 0.9, 1.1, 0.7, 1.4, phi)
                                        : corollary_small_mass_1d(f, 0.9, 1.1, phi);
      std::mt19937_64 rng(17);
      for (int i = 0; i < 30; ++i) {
        const Vector z = random_state(rng, 3);
        const Vector r(Vector::Map(std::array{z(0), phi * z(1) - z(2)}.data(), 2));
        const Vector a = full.drift_at(0.0, z), b = red.drift_at(0.0, r);
        CHECK(b(0) == Approx(a(0)).margin(1e-12));
        CHECK(b(1) == Approx(phi * a(1) - a(2)).margin(1e-12));
        const Matrix ga = full.diffusion_at(0.0, z), gb = red.diffusion_at(0.0, r);
        CHECK(gb(0, 0) == Approx(ga(0, 0)).margin(1e-12));
        CHECK(gb(1, 0) == Approx(phi * ga(1, 0) - ga(2, 0)).margin(1e-12));
      }
    }
    // the two corollaries coincide on this family
    const ScalarFields f2{g, two_plus_cos(), s, CoefficientField::scalar(0.0)};
    const LimitSystem a = corollary_small_mass_1d(f2, 1.0, 1.0, phi);
    const LimitSystem b = corollary_vanishing_1d(f2, 1.0, 1.0, 1.0, 1.0, phi);
    std::mt19937_64 rng(19);
    for (int i = 0; i < 30; ++i) {
      const Vector z = random_state(rng, 2);
      CHECK((a.drift_at(0.0, z) - b.drift_at(0.0, z)).norm() < 1e-10);
    }
  }
}

TEST_CASE("constant coefficients give no correction", "[homogenize]") {
  const ScalarFields f{CoefficientField::scalar(1.5), CoefficientField::scalar(0.5), CoefficientField::scalar(2.0),
                       CoefficientField::scalar(0.1)};
  std::mt19937_64 rng(23);
  const std::vector<LimitSystem> systems = {
      corollary_small_mass_1d(f, 1.0, 1.0),
      corollary_small_mass_1d(f, 1.0, 1.0, 2.0),
      corollary_vanishing_1d(f, 1.0, 1.0, 1.0, 1.0),
      fdt_reduction(CoefficientField::scalar(2.0), CoefficientField::scalar(0.0), 1.0, 1.0),
      hyper_limit_1d(f.g, f.sigma, f.Fe, 1.0, 1.0, 2.0, 3.0, 1.0),
      small_mass_limit(m2_model(f.g, f.h, f.sigma)),
      vanishing_damping_limit(m1_model(f.g, f.h, f.sigma), 1.0, Matrix::Ones(1, 1), Matrix::Ones(1, 1)),
  };
  for (const auto& s : systems) {
    CHECK(s.linear.has_value());
    for (int i = 0; i < 10; ++i) CHECK(s.correction_at(0.0, random_state(rng, s.dim())).norm() == 0.0);
  }
}

TEST_CASE("analytic and finite-difference corrections agree", "[homogenize]") {
  std::mt19937_64 rng(29);
  const std::array<CoefficientField, 2> choices = {two_plus_sin(), two_plus_cos()};
  int probes = 0;
  for (const auto& g : choices)
    for (const auto& h : choices)
      for (const auto& s : choices) {
        const ScalarFields fa{g, h, s, CoefficientField::scalar(0.0)};
        const ScalarFields ff{without_derivative(g), without_derivative(h), without_derivative(s), fa.Fe};
        const std::array<std::pair<LimitSystem, LimitSystem>, 4> pairs = {
            std::pair{corollary_small_mass_1d(fa, 1.0, 1.0), corollary_small_mass_1d(ff, 1.0, 1.0)},
            std::pair{corollary_vanishing_1d(fa, 1.0, 1.0, 1.0, 1.0), corollary_vanishing_1d(ff, 1.0, 1.0, 1.0, 1.0)},
            std::pair{small_mass_limit(m2_model(g, h, s)),
                      small_mass_limit(m2_model(ff.g, ff.h, ff.sigma))},
            std::pair{vanishing_damping_limit(m1_model(g, h, s), 1.0, Matrix::Ones(1, 1), Matrix::Ones(1, 1)),
                      vanishing_damping_limit(m1_model(ff.g, ff.h, ff.sigma), 1.0, Matrix::Ones(1, 1),
                                              Matrix::Ones(1, 1))}};
        for (const auto& [a, b] : pairs)
          for (int i = 0; i < 4; ++i, ++probes) {
            const Vector z = random_state(rng, a.dim());
            CHECK((a.correction_at(0.0, z) - b.correction_at(0.0, z)).norm() < 1e-5);
          }
      }
  CHECK(probes >= 100);
}

TEST_CASE("hyper-diffusive limit", "[homogenize]") {
  const double beta = 1.3, g1 = 1.0, g2 = 2.0;
  const LimitSystem s = hyper_limit_1d(CoefficientField::scalar(1.0), CoefficientField::scalar(1.0),
                                       CoefficientField::scalar(0.0), beta, g1, g2, 3.0, 1.0);
  REQUIRE(s.linear.has_value());
  const Matrix a = s.linear->A.bottomRightCorner(2, 2);
  const Matrix gy = s.linear->G.bottomRows(2);
  const Matrix var = lyapunov_solve(a, gy * gy.transpose());
  CHECK(lyapunov_residual(a, var, gy * gy.transpose()) < 1e-12);
  CHECK(var(0, 0) == Approx(beta * beta / (2 * g1 * g2 * (g1 + g2))).epsilon(1e-12));

  const LimitSystem v = hyper_limit_1d(two_plus_sin(), two_plus_cos(), CoefficientField::scalar(0.0), beta, g1, g2, 3.0, 1.0);
  const LimitSystem w = hyper_limit_1d(without_derivative(two_plus_sin()), without_derivative(two_plus_cos()),
                                       CoefficientField::scalar(0.0), beta, g1, g2, 3.0, 1.0);
  std::mt19937_64 rng(31);
  for (int i = 0; i < 20; ++i) {
    const Vector z = random_state(rng, 5);
    CHECK((v.correction_at(0.0, z) - w.correction_at(0.0, z)).norm() < 1e-5);
    // correction of Z0 is -1/(Gamma1+Gamma2) times that of Z1
    const Vector c = v.correction_at(0.0, z);
    CHECK(c(1) == Approx(-c(2) / (g1 + g2)).margin(1e-14));
  }
}

TEST_CASE("hypothesis and stability failures", "[homogenize]") {
  // plain exponential kernel in slot 0 without Markovian friction
  CHECK(kind_of([] { small_mass_limit(scalar_model(preset("exp", {}), 1.0)); }) == ErrorKind::HypothesisViolation);
  // bi-exponential kernel has no delta part: effective damping is zero
  CHECK(kind_of([] { small_mass_limit(scalar_model(preset("M1", {}), 1.0)); }) == ErrorKind::NotStable);
  GLEModel ok = scalar_model(preset("M1", {}), 1.0);
  ok.gamma0 = CoefficientField::scalar(1.0);
  CHECK_NOTHROW(small_mass_limit(ok));

  const Matrix one1 = Matrix::Ones(1, 1);
  CHECK(kind_of([&] { vanishing_damping_limit(m1_model(one(), CoefficientField::scalar(0.0), one()), 1.0, one1, one1); }) ==
        ErrorKind::SingularNu);
  CHECK(kind_of([&] { vanishing_damping_limit(m1_model(one(), CoefficientField::scalar(-1.0), one()), 1.0, one1, one1); }) ==
        ErrorKind::NotStable);
  CHECK(kind_of([&] { vanishing_damping_limit(m2_model(one(), one(), one()), 1.0, one1, one1); }) ==
        ErrorKind::InvalidArgument);
  CHECK(kind_of([&] { vanishing_damping_family(m1_model(one(), one(), one()), 1.0, one1, one1, 0.0); }) ==
        ErrorKind::EpsilonRange);
}

TEST_CASE("vanishing-damping family and initial coupling", "[homogenize]") {
  const GLEModel base = m1_model(one(), one(), one());
  const Matrix gm = Matrix::Constant(1, 1, 2.0);
  const MarkovianSystem pre = vanishing_damping_family_system(base, 1.5, gm, gm, 0.1);
  CHECK(pre.mass == Approx(0.15));
  const GLEModel fam = vanishing_damping_family(base, 1.5, gm, gm, 0.1);
  CHECK(fam.kernel.blocks[1].Gamma(1, 1) == Approx(20.0));
  CHECK(fam.kernel.blocks[1].Gamma(0, 0) == Approx(1.0));
  CHECK(pre.stiffSlices.size() == 3);

  const LimitSystem lim = vanishing_damping_limit(base, 1.5, gm, gm);
  Vector z(pre.dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = static_cast<double>(i + 1);
  const Vector w = lim.initialFromPartner(z);
  CHECK(w(0) == z(pre.layout.at("x").offset));
  CHECK(w(1) == z(pre.layout.at("y2").offset));
  CHECK(w(2) == z(pre.layout.at("beta4").offset));
  const LimitSystem c = corollary_vanishing_1d({one(), one(), one(), CoefficientField::scalar(0.0)}, 1.0, 1.0, 2.0, 1.5);
  CHECK((c.initialFromPartner(z) - w).norm() == 0.0);
  const LimitSystem r = corollary_vanishing_1d({one(), one(), one(), CoefficientField::scalar(0.0)}, 1.0, 1.0, 2.0, 1.5, 1.0);
  CHECK(r.initialFromPartner(z)(1) == w(1) - w(2));
}
