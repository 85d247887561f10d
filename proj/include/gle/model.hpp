#pragma once

#include <random>
#include <string>
#include <vector>

#include "gle/coefficient.hpp"
#include "gle/realization.hpp"
#include "gle/sde.hpp"

namespace gle {

struct InitialLaw {
  Vector x0, v0;
};

struct GLEModel {
  Eigen::Index d = 1;
  double mass = 1.0;
  CoefficientField gamma0, sigma0, g, h, sigma, Fe;
  KernelRealization kernel;
  NoiseRealization noise;
  InitialLaw initial;
};

// One-dimensional model with unit g, h, sigma, no Markovian friction/noise and no external force.
inline GLEModel scalar_model(const std::pair<KernelRealization, NoiseRealization>& kn, double mass) {
  GLEModel m;
  m.d = 1;
  m.mass = mass;
  m.gamma0 = CoefficientField::zero(1, 1);
  m.sigma0 = CoefficientField::zero(1, 0);
  m.g = CoefficientField::scalar(1.0);
  m.h = CoefficientField::scalar(1.0);
  m.sigma = CoefficientField::scalar(1.0);
  m.Fe = CoefficientField::zero(1, 1);
  m.kernel = kn.first;
  m.noise = kn.second;
  m.initial = {Vector::Zero(1), Vector::Zero(1)};
  return m;
}

struct MarkovianSystem : SdeSystem {
  double mass = 1.0;
};

inline void check_shape(const CoefficientField& f, Eigen::Index r, Eigen::Index c, const char* what) {
  if (f.rows != r || f.cols != c)
    fail(ErrorKind::DimensionMismatch, std::string(what) + " is " + std::to_string(f.rows) + "x" +
                                           std::to_string(f.cols) + ", expected " + std::to_string(r) + "x" +
                                           std::to_string(c));
}

inline void check_model_dimensions(const GLEModel& m) {
  const Eigen::Index d = m.d, q = m.kernel.outputs(), r = m.noise.outputs();
  if (!(m.mass > 0.0)) fail(ErrorKind::InvalidArgument, "mass must be positive");
  check_shape(m.gamma0, d, d, "gamma0");
  if (m.sigma0.rows != d) fail(ErrorKind::DimensionMismatch, "sigma0 must have d rows");
  check_shape(m.g, d, q, "g");
  check_shape(m.h, q, d, "h");
  check_shape(m.sigma, d, r, "sigma");
  check_shape(m.Fe, d, 1, "Fe");
  for (const auto& b : m.kernel.blocks) {
    if (b.outputs() != q) fail(ErrorKind::DimensionMismatch, "kernel blocks must share output size");
    validate_block(b);
  }
  for (const auto& b : m.noise.blocks) {
    if (b.outputs() != r) fail(ErrorKind::DimensionMismatch, "noise blocks must share output size");
    if (b.kernelOnly) fail(ErrorKind::InvalidArgument, "noise blocks must be stochastic");
    validate_block(b);
  }
  if (m.initial.x0.size() != d || m.initial.v0.size() != d)
    fail(ErrorKind::DimensionMismatch, "initial x0/v0 must have d entries");
}

inline bool all_fields_constant(const GLEModel& m) {
  for (const auto* f : {&m.gamma0, &m.sigma0, &m.g, &m.h, &m.sigma, &m.Fe})
    if (!f->is_constant()) return false;
  return true;
}

inline Eigen::Index wiener_channels(const GLEModel& m) {
  return m.sigma0.cols + m.noise.blocks[0].channels() + m.noise.blocks[1].channels();
}

inline StateLayout markovian_layout(const GLEModel& m) {
  StateLayout l;
  l.add("x", m.d);
  l.add("v", m.d);
  l.add("y1", m.kernel.blocks[0].dim());
  l.add("y2", m.kernel.blocks[1].dim());
  l.add("beta3", m.noise.blocks[0].dim());
  l.add("beta4", m.noise.blocks[1].dim());
  return l;
}

// Affine-in-(v, y, beta) structure of the embedding at fixed (t, x).
inline LinearForm markovian_linear_form(const GLEModel& m, double t, const Vector& x) {
  const StateLayout lay = markovian_layout(m);
  const Eigen::Index n = lay.dim(), d = m.d;
  const Eigen::Index k = m.sigma0.cols;
  const Eigen::Index q3 = m.noise.blocks[0].channels(), q4 = m.noise.blocks[1].channels();
  const Matrix gam = m.gamma0(t, x), sg0 = m.sigma0(t, x), g = m.g(t, x), h = m.h(t, x), sg = m.sigma(t, x),
               fe = m.Fe(t, x);
  const double im = 1.0 / m.mass;
  LinearForm lf{Matrix::Zero(n, n), Vector::Zero(n), Matrix::Zero(n, k + q3 + q4)};
  const Eigen::Index ix = 0, iv = d;
  lf.A.block(ix, iv, d, d).setIdentity();
  lf.A.block(iv, iv, d, d) = -im * (gam + g * m.kernel.delta_weight() * h);
  lf.b.segment(iv, d) = im * fe.col(0);
  const char* yn[2] = {"y1", "y2"};
  for (int i = 0; i < 2; ++i) {
    const OUBlock& b = m.kernel.blocks[i];
    if (b.dim() == 0) continue;
    const Slice& s = lay.at(yn[i]);
    if (b.alpha) lf.A.block(iv, s.offset, d, s.size) = -im * g * b.C;
    lf.A.block(s.offset, iv, s.size, d) = b.gain() * h;
    lf.A.block(s.offset, s.offset, s.size, s.size) = -b.Gamma;
  }
  lf.G.block(iv, 0, d, k) = im * sg0;
  const char* bn[2] = {"beta3", "beta4"};
  Eigen::Index ch = k;
  for (int j = 0; j < 2; ++j) {
    const OUBlock& b = m.noise.blocks[j];
    const Slice& s = lay.at(bn[j]);
    if (b.alpha) {
      if (s.size) lf.A.block(iv, s.offset, d, s.size) = im * sg * b.C;
      if (b.channels()) lf.G.block(iv, ch, d, b.channels()) = im * sg * b.D;
    }
    if (s.size) {
      lf.A.block(s.offset, s.offset, s.size, s.size) = -b.Gamma;
      lf.G.block(s.offset, ch, s.size, b.channels()) = b.Sigma;
    }
    ch += b.channels();
  }
  return lf;
}

inline MarkovianSystem build_markovian_system(const GLEModel& m) {
  check_model_dimensions(m);
  MarkovianSystem s;
  s.mass = m.mass;
  s.layout = markovian_layout(m);
  s.channels = wiener_channels(m);
  if (all_fields_constant(m)) {
    install_linear(s, markovian_linear_form(m, 0.0, m.initial.x0));
  } else {
    auto model = std::make_shared<const GLEModel>(m);
    const Eigen::Index d = m.d;
    s.drift = [model, d](double t, const Vector& z, Vector& out) {
      const LinearForm lf = markovian_linear_form(*model, t, z.head(d));
      out.noalias() = lf.A * z + lf.b;
    };
    s.diffusion = [model, d](double t, const Vector& z, Matrix& out) {
      out = markovian_linear_form(*model, t, z.head(d)).G;
    };
  }
  Eigen::Index ch = m.sigma0.cols;
  const char* bn[2] = {"beta3", "beta4"};
  for (int j = 0; j < 2; ++j) {
    const OUBlock& b = m.noise.blocks[j];
    const Slice& sl = s.layout.at(bn[j]);
    if (sl.size) {
      s.ouSlices.push_back({sl.offset, b.Gamma, b.Sigma, ch});
      s.initialGaussian.push_back({sl.offset, b.M});
    }
    ch += b.channels();
  }
  s.initialMean = Vector::Zero(s.dim());
  s.initialMean.head(m.d) = m.initial.x0;
  s.initialMean.segment(m.d, m.d) = m.initial.v0;
  s.stiffSlices = {"v"};
  return s;
}

struct ValidationCheck {
  std::string name;
  bool pass = true;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  bool ok() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
  const ValidationCheck* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

inline ValidationReport validate_model(const GLEModel& m, int probes, bool smallMassRequested = false,
                                       std::uint64_t seed = 12345) {
  ValidationReport rep;
  try {
    check_model_dimensions(m);
    rep.checks.push_back({"dimensions", true, ""});
  } catch (const Error& e) {
    rep.checks.push_back({"dimensions", false, e.what()});
    return rep;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-10.0, 10.0), ut(0.0, 10.0);
  const std::pair<const char*, const CoefficientField*> fields[] = {
      {"gamma0", &m.gamma0}, {"sigma0", &m.sigma0}, {"g", &m.g}, {"h", &m.h}, {"sigma", &m.sigma}, {"Fe", &m.Fe}};
  ValidationCheck finite{"finite", true, ""}, bounds{"bounds", true, ""}, deriv{"derivatives", true, ""};
  ValidationCheck stab{"gamma0_positive_stable", true, ""};
  const Matrix dw = m.kernel.delta_weight();
  for (int p = 0; p < probes; ++p) {
    Vector x(m.d);
    for (Eigen::Index i = 0; i < m.d; ++i) x(i) = ux(rng);
    const double t = ut(rng);
    for (const auto& [name, f] : fields) {
      const Matrix v = (*f)(t, x);
      if (!v.allFinite()) {
        finite.pass = false;
        finite.detail = name;
        continue;
      }
      if (v.size() && v.cwiseAbs().maxCoeff() > f->bound * (1 + 1e-12)) {
        bounds.pass = false;
        bounds.detail = name;
      }
      if (f->deriv && !f->is_constant()) {
        for (Eigen::Index l = 0; l < m.d; ++l) {
          const Matrix a = f->deriv(t, x, static_cast<int>(l)), b = fd_derivative(*f, t, x, static_cast<int>(l));
          if ((a - b).cwiseAbs().maxCoeff() > 1e-6 * (1.0 + a.cwiseAbs().maxCoeff())) {
            deriv.pass = false;
            deriv.detail = name;
          }
        }
      }
    }
    if (smallMassRequested) {
      const Matrix ge = m.gamma0(t, x) + m.g(t, x) * dw * m.h(t, x);
      if (!ge.allFinite() || !is_positive_stable(ge, kDefaultStabilityMargin).stable) {
        stab.pass = false;
        stab.detail = "effective gamma0 not positive stable at a probe";
      }
    }
  }
  rep.checks.push_back(finite);
  rep.checks.push_back(bounds);
  rep.checks.push_back(deriv);
  if (smallMassRequested) rep.checks.push_back(stab);
  return rep;
}

}  // namespace gle
