#pragma once

#include <array>
#include <complex>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gle/model.hpp"

namespace gle {

struct LimitSystem : SdeSystem {
  std::array<Eigen::Index, 2> wienerDims{0, 0};  // slow and fast channel counts (may overlap)
  std::string provenance;
  // correction (noise- or memory-induced) drift alone; already included in drift
  std::function<void(double, const Vector&, Vector&)> correction;
  std::vector<std::string> warnings;

  Vector correction_at(double t, const Vector& z) const {
    Vector out = Vector::Zero(dim());
    if (correction) correction(t, z, out);
    return out;
  }
};

namespace detail {

inline Eigen::Index derivative_dims(Eigen::Index n, std::initializer_list<const CoefficientField*> fs) {
  Eigen::Index a = 0;
  for (const auto* f : fs) {
    if (f->is_constant()) continue;
    a = std::max(a, f->activeDims >= 0 ? std::min(f->activeDims, n) : n);
  }
  return a;
}

inline Eigen::PartialPivLU<Matrix> checked_lu(const Matrix& a, ErrorKind kind, const char* what) {
  Eigen::PartialPivLU<Matrix> lu(a);
  if (!(lu.rcond() > 1e-13)) fail(kind, std::string(what) + " is numerically singular");
  return lu;
}

// deterministic probe positions: x0 plus uniform draws in [-10, 10]^d
inline std::vector<Vector> probe_points(const Vector& x0, int count, std::uint64_t seed = 99) {
  std::vector<Vector> pts{x0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < count; ++i) {
    Vector x(x0.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = u(rng);
    pts.push_back(x);
  }
  return pts;
}

}  // namespace detail

// S_i = -d_l([A1 A2^-1]_ij) [A1]_lk J_jk with A2 J + J A2^T = -Sigma2 Sigma2^T.
inline Vector noise_induced_drift(const CoefficientField& A1, const CoefficientField& A2, const CoefficientField& Sigma2,
                                  double t, const Vector& x) {
  const Matrix a1 = A1(t, x), a2 = A2(t, x);
  Vector s = Vector::Zero(a1.rows());
  const Eigen::Index nd = detail::derivative_dims(x.size(), {&A1, &A2});
  if (nd == 0) return s;
  const Matrix s2 = Sigma2(t, x);
  const Matrix j = lyapunov_solve(a2, s2 * s2.transpose());
  const auto lu = detail::checked_lu(a2, ErrorKind::SingularSolve, "A2");
  const Matrix inv = lu.inverse();
  const Matrix k = a1 * inv;
  const Matrix ja1 = j * a1.transpose();
  for (Eigen::Index l = 0; l < nd; ++l) {
    const int li = static_cast<int>(l);
    const Matrix dk = field_derivative(A1, t, x, li) * inv - k * field_derivative(A2, t, x, li) * inv;
    s.noalias() -= dk * ja1.col(l);
  }
  return s;
}

struct LimitInputs {
  CoefficientField A1, A2, B1, B2, Sigma1, Sigma2;
};

struct LimitOptions {
  StateLayout layout;  // defaults to a single slice "X"
  // channel placement of the slow (Sigma1) and fast (Sigma2) noises in the limit's channel set;
  // equal offsets mean the two share Wiener processes
  std::optional<Eigen::Index> channels;
  Eigen::Index slowChannelOffset = 0;
  std::optional<Eigen::Index> fastChannelOffset;
  std::string provenance = "general";
};

struct LimitTerms {
  Vector drift, correction;
  Matrix diffusion;
};

inline LimitTerms general_limit_terms(const LimitInputs& in, Eigen::Index channels, Eigen::Index slowOff,
                                      Eigen::Index fastOff, double t, const Vector& x) {
  const Matrix a1 = in.A1(t, x), a2 = in.A2(t, x);
  const auto lu = detail::checked_lu(a2, ErrorKind::NotStable, "A2");
  const Matrix k = a1 * lu.inverse();
  LimitTerms out;
  out.correction = noise_induced_drift(in.A1, in.A2, in.Sigma2, t, x);
  out.drift = in.B1(t, x).col(0) - k * in.B2(t, x).col(0) + out.correction;
  out.diffusion = Matrix::Zero(a1.rows(), channels);
  const Matrix s1 = in.Sigma1(t, x), s2 = in.Sigma2(t, x);
  out.diffusion.middleCols(slowOff, s1.cols()) += s1;
  out.diffusion.middleCols(fastOff, s2.cols()) -= k * s2;
  return out;
}

// Eq: dX = [B1 - A1 A2^-1 B2 + S] dt + Sigma1 dW1 - A1 A2^-1 Sigma2 dW2.
inline LimitSystem general_limit(const LimitInputs& in, LimitOptions opt = {}, const Vector* probeX = nullptr) {
  const Eigen::Index n1 = in.A1.rows, n2 = in.A1.cols;
  if (in.A2.rows != n2 || in.A2.cols != n2 || in.B1.rows != n1 || in.B2.rows != n2 || in.Sigma1.rows != n1 ||
      in.Sigma2.rows != n2)
    fail(ErrorKind::DimensionMismatch, "limit inputs disagree in size");
  const Eigen::Index k1 = in.Sigma1.cols, k2 = in.Sigma2.cols;
  const Eigen::Index fastOff = opt.fastChannelOffset.value_or(opt.slowChannelOffset + k1);
  const Eigen::Index channels = opt.channels.value_or(std::max(opt.slowChannelOffset + k1, fastOff + k2));
  if (opt.slowChannelOffset + k1 > channels || fastOff + k2 > channels)
    fail(ErrorKind::DimensionMismatch, "channel placement exceeds channel count");
  if (opt.layout.slices.empty()) opt.layout.add("X", n1);
  if (opt.layout.dim() != n1) fail(ErrorKind::DimensionMismatch, "layout does not match A1 rows");

  const Vector x0 = probeX ? *probeX : Vector::Zero(n1);
  const Matrix a2 = in.A2(0.0, x0);
  if (!(spectrum(a2).stabilityMargin > 0.0)) fail(ErrorKind::NotStable, "A2 is not Hurwitz at the probe state");

  LimitSystem s;
  s.layout = opt.layout;
  s.positionSlice = opt.layout.slices.front().name;
  s.channels = channels;
  s.wienerDims = {k1, k2};
  s.provenance = opt.provenance;
  s.initialMean = Vector::Zero(n1);
  auto shared = std::make_shared<const LimitInputs>(in);
  const Eigen::Index so = opt.slowChannelOffset;
  s.drift = [shared, channels, so, fastOff](double t, const Vector& z, Vector& out) {
    out = general_limit_terms(*shared, channels, so, fastOff, t, z).drift;
  };
  s.diffusion = [shared, channels, so, fastOff](double t, const Vector& z, Matrix& out) {
    out = general_limit_terms(*shared, channels, so, fastOff, t, z).diffusion;
  };
  s.correction = [shared](double t, const Vector& z, Vector& out) {
    out = noise_induced_drift(shared->A1, shared->A2, shared->Sigma2, t, z);
  };
  return s;
}

// ---------------------------------------------------------------------------------------------
// small-mass limit of the Markovian embedding

namespace detail {

struct SmallMassParts {
  Matrix gammaEff, sigmaEff;  // Markovian damping incl. feedthrough; v-row noise times m on all channels
};

inline SmallMassParts small_mass_parts(const GLEModel& m, double t, const Vector& x) {
  SmallMassParts p;
  p.gammaEff = m.gamma0(t, x) + m.g(t, x) * m.kernel.delta_weight() * m.h(t, x);
  const Eigen::Index k = m.sigma0.cols;
  p.sigmaEff = Matrix::Zero(m.d, wiener_channels(m));
  p.sigmaEff.leftCols(k) = m.sigma0(t, x);
  const Matrix sg = m.sigma(t, x);
  Eigen::Index ch = k;
  for (const auto& b : m.noise.blocks) {
    if (b.alpha && b.channels()) p.sigmaEff.middleCols(ch, b.channels()) = sg * b.D;
    ch += b.channels();
  }
  return p;
}

inline Matrix d_gamma_eff(const GLEModel& m, double t, const Vector& x, int l) {
  const Matrix dw = m.kernel.delta_weight();
  Matrix r = field_derivative(m.gamma0, t, x, l);
  if (dw.norm() > 0.0)
    r += field_derivative(m.g, t, x, l) * dw * m.h(t, x) + m.g(t, x) * dw * field_derivative(m.h, t, x, l);
  return r;
}

inline StateLayout small_mass_layout(const GLEModel& m) {
  StateLayout l;
  l.add("X", m.d);
  l.add("Y1", m.kernel.blocks[0].dim());
  l.add("Y2", m.kernel.blocks[1].dim());
  l.add("beta3", m.noise.blocks[0].dim());
  l.add("beta4", m.noise.blocks[1].dim());
  return l;
}

inline bool field_is_zero(const CoefficientField& f) { return f.is_constant() && f.constant->norm() == 0.0; }

}  // namespace detail

// Block matrices of the small-mass problem in the general (A1, A2, B1, B2, Sigma1, Sigma2) form.
inline LimitInputs small_mass_limit_inputs(const GLEModel& m) {
  check_model_dimensions(m);
  const StateLayout lay = detail::small_mass_layout(m);
  const Eigen::Index n1 = lay.dim(), d = m.d, ch = wiener_channels(m);
  auto mp = std::make_shared<const GLEModel>(m);
  auto lay_p = std::make_shared<const StateLayout>(lay);
  LimitInputs in;
  const bool constant = all_fields_constant(m);

  auto a1_at = [mp, lay_p, n1, d](double t, const Vector& z) {
    const Vector x = z.head(d);
    Matrix a = Matrix::Zero(n1, d);
    a.topRows(d).setIdentity();
    const char* yn[2] = {"Y1", "Y2"};
    for (int i = 0; i < 2; ++i) {
      const Slice& s = lay_p->at(yn[i]);
      if (s.size) a.middleRows(s.offset, s.size) = mp->kernel.blocks[i].gain() * mp->h(t, x);
    }
    return a;
  };
  in.A1.rows = n1;
  in.A1.cols = d;
  in.A1.eval = a1_at;
  in.A1.activeDims = d;
  in.A1.deriv = [mp, lay_p, n1, d](double t, const Vector& z, int l) {
    Matrix a = Matrix::Zero(n1, d);
    const char* yn[2] = {"Y1", "Y2"};
    for (int i = 0; i < 2; ++i) {
      const Slice& s = lay_p->at(yn[i]);
      if (s.size) a.middleRows(s.offset, s.size) = mp->kernel.blocks[i].gain() * field_derivative(mp->h, t, z.head(d), l);
    }
    return a;
  };
  in.A2.rows = in.A2.cols = d;
  in.A2.eval = [mp, d](double t, const Vector& z) {
    return Matrix(-detail::small_mass_parts(*mp, t, z.head(d)).gammaEff);
  };
  in.A2.deriv = [mp, d](double t, const Vector& z, int l) {
    return Matrix(-detail::d_gamma_eff(*mp, t, z.head(d), l));
  };
  in.A2.activeDims = d;
  in.B1.rows = n1;
  in.B1.cols = 1;
  in.B1.eval = [mp, lay_p, n1](double, const Vector& z) {
    Matrix b = Matrix::Zero(n1, 1);
    const char* names[4] = {"Y1", "Y2", "beta3", "beta4"};
    const OUBlock* blocks[4] = {&mp->kernel.blocks[0], &mp->kernel.blocks[1], &mp->noise.blocks[0], &mp->noise.blocks[1]};
    for (int i = 0; i < 4; ++i) {
      const Slice& s = lay_p->at(names[i]);
      if (s.size) b.col(0).segment(s.offset, s.size) = -blocks[i]->Gamma * z.segment(s.offset, s.size);
    }
    return b;
  };
  in.B2.rows = d;
  in.B2.cols = 1;
  in.B2.eval = [mp, lay_p, d](double t, const Vector& z) {
    const Vector x = z.head(d);
    Vector r = mp->Fe(t, x).col(0);
    const Matrix g = mp->g(t, x), sg = mp->sigma(t, x);
    const char* yn[2] = {"Y1", "Y2"};
    const char* bn[2] = {"beta3", "beta4"};
    for (int i = 0; i < 2; ++i) {
      const Slice& s = lay_p->at(yn[i]);
      if (s.size && mp->kernel.blocks[i].alpha) r -= g * mp->kernel.blocks[i].C * z.segment(s.offset, s.size);
      const Slice& b = lay_p->at(bn[i]);
      if (b.size && mp->noise.blocks[i].alpha) r += sg * mp->noise.blocks[i].C * z.segment(b.offset, b.size);
    }
    return Matrix(r);
  };
  Matrix s1 = Matrix::Zero(n1, ch);
  {
    Eigen::Index c = m.sigma0.cols;
    const char* bn[2] = {"beta3", "beta4"};
    for (int j = 0; j < 2; ++j) {
      const Slice& b = lay.at(bn[j]);
      if (b.size) s1.block(b.offset, c, b.size, m.noise.blocks[j].channels()) = m.noise.blocks[j].Sigma;
      c += m.noise.blocks[j].channels();
    }
  }
  in.Sigma1 = CoefficientField::from_constant(s1);
  in.Sigma2.rows = d;
  in.Sigma2.cols = ch;
  in.Sigma2.eval = [mp, d](double t, const Vector& z) { return detail::small_mass_parts(*mp, t, z.head(d)).sigmaEff; };
  in.Sigma2.activeDims = d;
  if (constant) {
    in.A1 = CoefficientField::from_constant(a1_at(0.0, Vector::Zero(n1)));
    in.A2 = CoefficientField::from_constant(in.A2.eval(0.0, Vector::Zero(n1)));
    in.Sigma2 = CoefficientField::from_constant(in.Sigma2.eval(0.0, Vector::Zero(n1)));
  }
  return in;
}

inline LimitOptions small_mass_limit_options(const GLEModel& m) {
  LimitOptions o;
  o.layout = detail::small_mass_layout(m);
  o.channels = wiener_channels(m);
  o.slowChannelOffset = 0;
  o.fastChannelOffset = 0;
  o.provenance = "small-mass limit (general form)";
  return o;
}

namespace detail {

inline void require_small_mass_hypotheses(const GLEModel& m) {
  check_model_dimensions(m);
  const bool noMarkovian = field_is_zero(m.gamma0) && field_is_zero(m.sigma0) && m.kernel.delta_weight().norm() == 0.0;
  if (noMarkovian && m.kernel.blocks[0].active() && m.kernel.blocks[0].alpha && m.noise.blocks[0].active() &&
      m.noise.blocks[0].alpha)
    fail(ErrorKind::HypothesisViolation,
         "no Markovian friction with both first kernel and noise blocks switched on: the small-mass limit is not defined");
  for (const auto& x : probe_points(m.initial.x0, 16)) {
    const Matrix ge = small_mass_parts(m, 0.0, x).gammaEff;
    if (!is_positive_stable(ge, kDefaultStabilityMargin).stable)
      fail(ErrorKind::NotStable, "effective damping is not positive stable at a probe position");
  }
}

}  // namespace detail

struct SmallMassTerms {
  Vector drift, correction;
  Matrix diffusion;
};

// Closed-form coefficients of the small-mass limit on (X, Y1, Y2, beta3, beta4).
inline SmallMassTerms small_mass_terms(const GLEModel& m, const StateLayout& lay, double t, const Vector& z) {
  const Eigen::Index d = m.d, n = lay.dim();
  const Vector x = z.head(d);
  const auto parts = detail::small_mass_parts(m, t, x);
  const auto lu = detail::checked_lu(parts.gammaEff, ErrorKind::NotStable, "effective damping");
  const Matrix ginv = lu.inverse();
  const Matrix g = m.g(t, x), h = m.h(t, x), sg = m.sigma(t, x);
  const char* yn[2] = {"Y1", "Y2"};
  const char* bn[2] = {"beta3", "beta4"};
  Vector r = m.Fe(t, x).col(0);
  for (int i = 0; i < 2; ++i) {
    const Slice& s = lay.at(yn[i]);
    if (s.size && m.kernel.blocks[i].alpha) r -= g * m.kernel.blocks[i].C * z.segment(s.offset, s.size);
    const Slice& b = lay.at(bn[i]);
    if (b.size && m.noise.blocks[i].alpha) r += sg * m.noise.blocks[i].C * z.segment(b.offset, b.size);
  }
  const Vector u = ginv * r;
  const Matrix noise = ginv * parts.sigmaEff;
  SmallMassTerms out;
  out.drift = Vector::Zero(n);
  out.correction = Vector::Zero(n);
  out.diffusion = Matrix::Zero(n, parts.sigmaEff.cols());
  out.drift.head(d) = u;
  out.diffusion.topRows(d) = noise;
  for (int i = 0; i < 2; ++i) {
    const Slice& s = lay.at(yn[i]);
    if (!s.size) continue;
    const OUBlock& b = m.kernel.blocks[i];
    const Matrix gh = b.gain() * h;
    out.drift.segment(s.offset, s.size) = -b.Gamma * z.segment(s.offset, s.size) + gh * u;
    out.diffusion.middleRows(s.offset, s.size) = gh * noise;
  }
  Eigen::Index ch = m.sigma0.cols;
  for (int j = 0; j < 2; ++j) {
    const Slice& s = lay.at(bn[j]);
    const OUBlock& b = m.noise.blocks[j];
    if (s.size) {
      out.drift.segment(s.offset, s.size) = -b.Gamma * z.segment(s.offset, s.size);
      out.diffusion.block(s.offset, ch, s.size, b.channels()) = b.Sigma;
    }
    ch += b.channels();
  }
  // S0 and the memory-induced S(k): d_l(. gammaEff^-1)_ij J_lj
  const bool varies = !(m.gamma0.is_constant() && m.g.is_constant() && m.h.is_constant());
  if (varies) {
    const Matrix j = lyapunov_solve(-parts.gammaEff, parts.sigmaEff * parts.sigmaEff.transpose());
    for (Eigen::Index l = 0; l < d; ++l) {
      const int li = static_cast<int>(l);
      const Matrix dginv = -ginv * detail::d_gamma_eff(m, t, x, li) * ginv;
      const Vector jc = j.col(l);
      out.correction.head(d) += dginv * jc;
      const Matrix dh = field_derivative(m.h, t, x, li);
      for (int i = 0; i < 2; ++i) {
        const Slice& s = lay.at(yn[i]);
        if (!s.size) continue;
        const Matrix gain = m.kernel.blocks[i].gain();
        out.correction.segment(s.offset, s.size) += gain * (dh * ginv + h * dginv) * jc;
      }
    }
    out.drift += out.correction;
  }
  return out;
}

inline LimitSystem small_mass_limit(const GLEModel& m) {
  detail::require_small_mass_hypotheses(m);
  LimitSystem s;
  s.layout = detail::small_mass_layout(m);
  s.positionSlice = "X";
  s.channels = wiener_channels(m);
  s.wienerDims = {m.noise.blocks[0].channels() + m.noise.blocks[1].channels(), s.channels};
  s.provenance = "small-mass limit";
  auto mp = std::make_shared<const GLEModel>(m);
  auto lp = std::make_shared<const StateLayout>(s.layout);
  s.drift = [mp, lp](double t, const Vector& z, Vector& out) { out = small_mass_terms(*mp, *lp, t, z).drift; };
  s.diffusion = [mp, lp](double t, const Vector& z, Matrix& out) { out = small_mass_terms(*mp, *lp, t, z).diffusion; };
  s.correction = [mp, lp](double t, const Vector& z, Vector& out) {
    out = small_mass_terms(*mp, *lp, t, z).correction;
  };
  s.initialMean = Vector::Zero(s.dim());
  s.initialMean.head(m.d) = m.initial.x0;
  const char* bn[2] = {"beta3", "beta4"};
  Eigen::Index ch = m.sigma0.cols;
  for (int j = 0; j < 2; ++j) {
    const Slice& sl = s.layout.at(bn[j]);
    const OUBlock& b = m.noise.blocks[j];
    if (sl.size) {
      s.ouSlices.push_back({sl.offset, b.Gamma, b.Sigma, ch});
      s.initialGaussian.push_back({sl.offset, b.M});
    }
    ch += b.channels();
  }
  // pre-limit layout is (x, v, y1, y2, beta3, beta4): drop v
  const Eigen::Index d = m.d;
  s.initialFromPartner = [d](const Vector& pre) {
    Vector z(pre.size() - d);
    z.head(d) = pre.head(d);
    z.tail(pre.size() - 2 * d) = pre.tail(pre.size() - 2 * d);
    return z;
  };
  if (all_fields_constant(m)) {
    auto corr = s.correction;
    linearize_affine(s);
    s.correction = corr;
  }
  return s;
}

// ---------------------------------------------------------------------------------------------
// vanishing effective damping: mass m0*eps, fast kernel/noise scales gamma/eps

struct VanishingDampingParts {
  Matrix B2, B4;               // output maps of the kernel and noise blocks
  Vector Gamma21, Gamma41;     // slow rates
  Vector gamma22, gamma42;     // fast rates at eps = 1
  double m0 = 1.0;
};

inline VanishingDampingParts vanishing_damping_parts(const GLEModel& m, double m0, const Matrix& gamma22,
                                                     const Matrix& gamma42) {
  check_model_dimensions(m);
  if (!(m0 > 0.0)) fail(ErrorKind::InvalidArgument, "m0 must be positive");
  const OUBlock& kb = m.kernel.blocks[1];
  const OUBlock& nb = m.noise.blocks[1];
  const auto* kr = std::get_if<BiExpRecipe>(&kb.recipe);
  const auto* nr = std::get_if<BiExpRecipe>(&nb.recipe);
  if (!kr || !nr || !kb.alpha || !nb.alpha)
    fail(ErrorKind::InvalidArgument, "second kernel and noise blocks must be active bi-exponential realizations");
  if (m.kernel.blocks[0].active() && m.kernel.blocks[0].alpha)
    fail(ErrorKind::InvalidArgument, "first kernel block must be switched off");
  if (m.noise.blocks[0].active() && m.noise.blocks[0].alpha)
    fail(ErrorKind::InvalidArgument, "first noise block must be switched off");
  require_diagonal(gamma22, "gamma22");
  require_diagonal(gamma42, "gamma42");
  VanishingDampingParts p;
  p.B2 = kr->B;
  p.B4 = nr->B;
  p.Gamma21 = kr->slow;
  p.Gamma41 = nr->slow;
  p.gamma22 = gamma22.diagonal();
  p.gamma42 = gamma42.diagonal();
  p.m0 = m0;
  if (p.gamma22.size() != p.Gamma21.size() || p.gamma42.size() != p.Gamma41.size())
    fail(ErrorKind::DimensionMismatch, "fast rate blocks must match the slow ones");
  if ((p.gamma22.array() <= 0.0).any() || (p.gamma42.array() <= 0.0).any())
    fail(ErrorKind::InvalidArgument, "fast rates must be positive");
  return p;
}

// Pre-limit member of the family at a given eps (mass m0*eps, fast rates gamma/eps).
inline GLEModel vanishing_damping_family(const GLEModel& m, double m0, const Matrix& gamma22, const Matrix& gamma42,
                                         double eps) {
  if (!(eps > 0.0)) fail(ErrorKind::EpsilonRange, "epsilon must be positive");
  const auto p = vanishing_damping_parts(m, m0, gamma22, gamma42);
  GLEModel out = m;
  out.mass = m0 * eps;
  out.kernel.blocks[1] = biexp_from_diagonals(p.Gamma21, p.gamma22 / eps, p.B2);
  out.noise.blocks[1] = biexp_from_diagonals(p.Gamma41, p.gamma42 / eps, p.B4);
  return out;
}

inline MarkovianSystem vanishing_damping_family_system(const GLEModel& m, double m0, const Matrix& gamma22,
                                                       const Matrix& gamma42, double eps) {
  MarkovianSystem s = build_markovian_system(vanishing_damping_family(m, m0, gamma22, gamma42, eps));
  s.stiffSlices = {"v", "y2", "beta4"};
  return s;
}

namespace detail {

struct TU {
  Matrix T, U;
};

// T, U of the vanishing-damping limit at position x (and their x_l derivatives when l >= 0)
inline TU vanishing_tu(const GLEModel& m, const VanishingDampingParts& p, double t, const Vector& x, int l = -1) {
  const Eigen::Index d = m.d, p2 = p.Gamma21.size(), p4 = p.Gamma41.size(), n = d + p2 + p4;
  auto val = [&](const CoefficientField& f) { return l < 0 ? f(t, x) : field_derivative(f, t, x, l); };
  const Matrix g = val(m.g), h = val(m.h), sg = val(m.sigma);
  TU r{Matrix::Zero(n, n), Matrix::Zero(n, n)};
  if (l < 0) r.T.topLeftCorner(d, d).setIdentity();
  r.T.block(d, 0, p2, d) = -0.5 * p.Gamma21.asDiagonal() * p.B2.transpose() * h;
  r.U.block(0, d, d, p2) = g * p.B2 / p.m0;
  r.U.block(0, d + p2, d, p4) = -sg * p.B4 / p.m0;
  r.U.block(d, 0, p2, d) = -0.5 * p.gamma22.asDiagonal() * p.B2.transpose() * h;
  if (l < 0) {
    r.U.block(d, d, p2, p2) = p.gamma22.asDiagonal();
    r.U.block(d + p2, d + p2, p4, p4) = p.gamma42.asDiagonal();
  }
  return r;
}

}  // namespace detail

inline LimitInputs vanishing_damping_inputs(const GLEModel& m, const VanishingDampingParts& p) {
  const Eigen::Index d = m.d, p2 = p.Gamma21.size(), p4 = p.Gamma41.size(), n = d + p2 + p4;
  auto mp = std::make_shared<const GLEModel>(m);
  auto pp = std::make_shared<const VanishingDampingParts>(p);
  const bool constant = m.g.is_constant() && m.h.is_constant() && m.sigma.is_constant();
  LimitInputs in;
  in.A1.rows = in.A1.cols = n;
  in.A1.activeDims = d;
  in.A1.eval = [mp, pp, d](double t, const Vector& z) { return detail::vanishing_tu(*mp, *pp, t, z.head(d)).T; };
  in.A1.deriv = [mp, pp, d](double t, const Vector& z, int l) {
    return l < d ? detail::vanishing_tu(*mp, *pp, t, z.head(d), l).T : Matrix::Zero(z.size(), z.size()).eval();
  };
  in.A2.rows = in.A2.cols = n;
  in.A2.activeDims = d;
  in.A2.eval = [mp, pp, d](double t, const Vector& z) {
    return Matrix(-detail::vanishing_tu(*mp, *pp, t, z.head(d)).U);
  };
  in.A2.deriv = [mp, pp, d](double t, const Vector& z, int l) {
    return l < d ? Matrix(-detail::vanishing_tu(*mp, *pp, t, z.head(d), l).U) : Matrix::Zero(z.size(), z.size()).eval();
  };
  in.B1.rows = n;
  in.B1.cols = 1;
  in.B1.eval = [pp, d, p2, p4, n](double, const Vector& z) {
    Matrix b = Matrix::Zero(n, 1);
    b.col(0).segment(d, p2) = -(pp->Gamma21.array() * z.segment(d, p2).array()).matrix();
    b.col(0).segment(d + p2, p4) = -(pp->Gamma41.array() * z.segment(d + p2, p4).array()).matrix();
    return b;
  };
  in.B2.rows = n;
  in.B2.cols = 1;
  in.B2.eval = [mp, pp, d, p2, p4, n](double t, const Vector& z) {
    const Vector x = z.head(d);
    Matrix b = Matrix::Zero(n, 1);
    b.col(0).head(d) = (mp->Fe(t, x).col(0) - mp->g(t, x) * pp->B2 * z.segment(d, p2) +
                        mp->sigma(t, x) * pp->B4 * z.segment(d + p2, p4)) /
                       pp->m0;
    return b;
  };
  Matrix s1 = Matrix::Zero(n, p4), s2 = Matrix::Zero(n, p4);
  s1.bottomRows(p4) = -Matrix(p.Gamma41.asDiagonal());
  s2.bottomRows(p4) = Matrix(p.gamma42.asDiagonal());
  in.Sigma1 = CoefficientField::from_constant(s1);
  in.Sigma2 = CoefficientField::from_constant(s2);
  if (constant) {
    in.A1 = CoefficientField::from_constant(in.A1.eval(0.0, Vector::Zero(n)));
    in.A2 = CoefficientField::from_constant(in.A2.eval(0.0, Vector::Zero(n)));
  }
  return in;
}

inline LimitSystem vanishing_damping_limit(const GLEModel& m, double m0, const Matrix& gamma22, const Matrix& gamma42) {
  const auto p = vanishing_damping_parts(m, m0, gamma22, gamma42);
  const Eigen::Index d = m.d, p2 = p.Gamma21.size(), p4 = p.Gamma41.size();
  std::vector<std::string> warnings;
  for (const auto& x : detail::probe_points(m.initial.x0, 16)) {
    const Matrix nu = 0.5 * m.g(0.0, x) * p.B2 * p.B2.transpose() * m.h(0.0, x);
    if (nu.rows() != d || nu.cols() != d) fail(ErrorKind::DimensionMismatch, "g B2 B2^T h must be d x d");
    Eigen::FullPivLU<Matrix> lu(nu);
    if (!lu.isInvertible() || lu.rcond() < 1e-12) fail(ErrorKind::SingularNu, "nu = g B2 B2^T h / 2 is singular at a probe");
    const Matrix u = detail::vanishing_tu(m, p, 0.0, x).U;
    if (!is_positive_stable(u, kDefaultStabilityMargin).stable)
      fail(ErrorKind::NotStable, "U is not positive stable at a probe position");
    // resolvent spot check: I + g K(lambda) h / (lambda m0), K(z) = B2 (z + gamma22)^-1 gamma22 B2^T / 2
    for (double re : {0.01, 0.1, 1.0, 10.0, 100.0})
      for (double im : {0.0, 1.0, 10.0}) {
        const cplx lam(re, im);
        CMatrix res = CMatrix::Identity(d, d);
        Eigen::VectorXcd mid(p2);
        for (Eigen::Index i = 0; i < p2; ++i) mid(i) = 0.5 * p.gamma22(i) / (lam + p.gamma22(i));
        res += m.g(0.0, x).cast<cplx>() * p.B2.cast<cplx>() * mid.asDiagonal() * p.B2.transpose().cast<cplx>() *
               m.h(0.0, x).cast<cplx>() / (lam * m0);
        if (std::abs(res.determinant()) < 1e-10) {
          warnings.push_back("resolvent condition nearly singular at lambda = " + std::to_string(re) + "+" +
                             std::to_string(im) + "i");
        }
      }
  }
  StateLayout lay;
  lay.add("X", d);
  lay.add("Y", p2);
  lay.add("Z", p4);
  LimitOptions opt;
  opt.layout = lay;
  opt.channels = p4;
  opt.slowChannelOffset = 0;
  opt.fastChannelOffset = 0;
  opt.provenance = "vanishing effective damping limit";
  const Vector x0 = [&] {
    Vector z = Vector::Zero(lay.dim());
    z.head(d) = m.initial.x0;
    return z;
  }();
  LimitSystem s = general_limit(vanishing_damping_inputs(m, p), opt, &x0);
  s.warnings = warnings;
  s.initialMean = x0;
  // stationary law of the slow noise component
  s.initialGaussian.push_back({d + p2, Matrix(0.5 * p.Gamma41.asDiagonal())});
  s.ouSlices.push_back({d + p2, Matrix(p.Gamma41.asDiagonal()), Matrix((-p.Gamma41).asDiagonal()), 0});
  // pre-limit (x, v, y2 = (y21, y22), beta4 = (beta41, beta42)) -> (x, y21, beta41)
  s.initialFromPartner = [d, p2, p4](const Vector& pre) {
    Vector z(d + p2 + p4);
    z.head(d) = pre.head(d);
    z.segment(d, p2) = pre.segment(2 * d, p2);
    z.tail(p4) = pre.segment(2 * d + 2 * p2, p4);
    return z;
  };
  if (m.g.is_constant() && m.h.is_constant() && m.sigma.is_constant() && m.Fe.is_constant()) {
    auto corr = s.correction;
    linearize_affine(s);
    s.correction = corr;
  }
  return s;
}

// ---------------------------------------------------------------------------------------------
// one-dimensional closed forms

struct ScalarFields {
  CoefficientField g, h, sigma, Fe;
};

namespace detail {

struct Pt {
  double g, h, s, fe, dg, dh, ds;
};

inline Pt scalar_point(const ScalarFields& f, double t, double x) {
  const Vector xv = Vector::Constant(1, x);
  return {f.g(t, xv)(0, 0),
          f.h(t, xv)(0, 0),
          f.sigma(t, xv)(0, 0),
          f.Fe(t, xv)(0, 0),
          field_derivative(f.g, t, xv, 0)(0, 0),
          field_derivative(f.h, t, xv, 0)(0, 0),
          field_derivative(f.sigma, t, xv, 0)(0, 0)};
}

inline void require_scalar(const ScalarFields& f) {
  for (const auto* c : {&f.g, &f.h, &f.sigma, &f.Fe})
    if (c->rows != 1 || c->cols != 1) fail(ErrorKind::DimensionMismatch, "closed forms need scalar fields");
}

inline bool all_constant(const ScalarFields& f) {
  return f.g.is_constant() && f.h.is_constant() && f.sigma.is_constant() && f.Fe.is_constant();
}

// Assemble a LimitSystem from a point-wise evaluator returning (drift without correction, correction, diffusion).
using ClosedForm = std::function<void(double, const Vector&, Vector&, Vector&, Matrix&)>;

inline LimitSystem closed_form_system(StateLayout lay, Eigen::Index channels, std::string provenance, ClosedForm f,
                                      bool affine) {
  LimitSystem s;
  s.layout = std::move(lay);
  s.positionSlice = "X";
  s.channels = channels;
  s.wienerDims = {channels, channels};
  s.provenance = std::move(provenance);
  s.initialMean = Vector::Zero(s.dim());
  auto fp = std::make_shared<const ClosedForm>(std::move(f));
  const Eigen::Index n = s.dim();
  s.drift = [fp, n, channels](double t, const Vector& z, Vector& out) {
    Vector c(n);
    Matrix g(n, channels);
    (*fp)(t, z, out, c, g);
    out += c;
  };
  s.diffusion = [fp, n](double t, const Vector& z, Matrix& out) {
    Vector a(n), c(n);
    (*fp)(t, z, a, c, out);
  };
  s.correction = [fp, n, channels](double t, const Vector& z, Vector& out) {
    Vector a(n);
    Matrix g(n, channels);
    (*fp)(t, z, a, out, g);
  };
  if (affine) {
    auto corr = s.correction;
    linearize_affine(s);
    s.correction = corr;
  }
  return s;
}

}  // namespace detail

// Reduced (X, U) system for g = phi sigma, U = phi Y - Z. Shared by both corollaries.
inline LimitSystem reduced_phi_system(const ScalarFields& f, double beta, double gamma1, double phi,
                                      const std::string& provenance) {
  StateLayout lay;
  lay.add("X", 1);
  lay.add("U", 1);
  auto ff = std::make_shared<const ScalarFields>(f);
  auto fn = [ff, beta, gamma1, phi](double t, const Vector& z, Vector& a, Vector& c, Matrix& g) {
    const auto p = detail::scalar_point(*ff, t, z(0));
    const double sh = p.s * p.h;
    const double d_inv_sh = -(p.ds * p.h + p.s * p.dh) / (sh * sh);
    const double d_inv_s = -p.ds / (p.s * p.s);
    a.resize(2);
    c.resize(2);
    g.resize(2, 1);
    a(0) = 2.0 * p.fe / (phi * sh * beta * beta) - 2.0 / (beta * phi * p.h) * z(1);
    a(1) = -gamma1 * p.fe / (beta * p.s);
    c(0) = 2.0 / (beta * beta * phi * phi) * d_inv_sh * p.s / p.h;
    // U = phi Y - Z carries one factor of phi from Y's correction
    c(1) = -gamma1 / (beta * phi) * d_inv_s * p.s / p.h;
    g(0, 0) = 2.0 / (beta * phi * p.h);
    g(1, 0) = 0.0;
  };
  LimitSystem s = detail::closed_form_system(lay, 1, provenance, fn, detail::all_constant(f));
  // pre-limit (x, v, y2..., beta4...): U = phi y2[0] - beta4[0]
  s.initialFromPartner = [phi](const Vector& pre) {
    const Eigen::Index nb = (pre.size() - 2) / 2;
    Vector z(2);
    z(0) = pre(0);
    z(1) = phi * pre(2) - pre(2 + nb);
    return z;
  };
  return s;
}

namespace detail {

inline LimitSystem three_equation_1d(const ScalarFields& f, double beta, double gamma1,
                                     std::function<void(const Pt&, double&, double&)> corrections,
                                     const std::string& provenance) {
  StateLayout lay;
  lay.add("X", 1);
  lay.add("Y", 1);
  lay.add("Z", 1);
  auto ff = std::make_shared<const ScalarFields>(f);
  auto fn = [ff, beta, gamma1, corrections](double t, const Vector& z, Vector& a, Vector& c, Matrix& g) {
    const auto p = scalar_point(*ff, t, z(0));
    const double gh = p.g * p.h;
    a.resize(3);
    c.resize(3);
    g.resize(3, 1);
    a(0) = 2.0 * p.fe / (beta * beta * gh) - 2.0 / (beta * p.h) * z(1) + 2.0 * p.s / (beta * gh) * z(2);
    a(1) = -gamma1 * p.fe / (beta * p.g) - gamma1 * p.s / p.g * z(2);
    a(2) = -gamma1 * z(2);
    g(0, 0) = 2.0 * p.s / (beta * gh);
    g(1, 0) = -gamma1 * p.s / p.g;
    g(2, 0) = -gamma1;
    c(2) = 0.0;
    corrections(p, c(0), c(1));
  };
  LimitSystem s = closed_form_system(lay, 1, provenance, fn, all_constant(f));
  s.initialGaussian.push_back({2, Matrix::Constant(1, 1, 0.5 * gamma1)});
  s.ouSlices.push_back({2, Matrix::Constant(1, 1, gamma1), Matrix::Constant(1, 1, -gamma1), 0});
  // pre-limit (x, v, y2..., beta4...): X = x, Y = y2[0], Z = beta4[0]
  s.initialFromPartner = [](const Vector& pre) {
    const Eigen::Index nb = (pre.size() - 2) / 2;
    return Vector((Vector(3) << pre(0), pre(2), pre(2 + nb)).finished());
  };
  return s;
}

}  // namespace detail

inline LimitSystem corollary_small_mass_1d(const ScalarFields& f, double beta, double gamma1,
                                           std::optional<double> phi = std::nullopt) {
  detail::require_scalar(f);
  if (!(beta > 0.0) || !(gamma1 > 0.0)) fail(ErrorKind::InvalidArgument, "beta and Gamma1 must be positive");
  if (phi) {
    if (!(*phi > 0.0)) fail(ErrorKind::InvalidArgument, "phi must be positive");
    return reduced_phi_system(f, beta, gamma1, *phi, "small-mass corollary, reduced");
  }
  return detail::three_equation_1d(
      f, beta, gamma1,
      [beta, gamma1](const detail::Pt& p, double& s1, double& s2) {
        const double gh = p.g * p.h;
        const double d_inv_gh = -(p.dg * p.h + p.g * p.dh) / (gh * gh);
        const double d_inv_g = -p.dg / (p.g * p.g);
        s1 = 2.0 / (beta * beta) * d_inv_gh * p.s * p.s / gh;
        s2 = -gamma1 / beta * d_inv_g * p.s * p.s / gh;
      },
      "small-mass corollary");
}

inline LimitSystem corollary_vanishing_1d(const ScalarFields& f, double beta, double gamma1, double gamma2, double m0,
                                          std::optional<double> phi = std::nullopt) {
  detail::require_scalar(f);
  if (!(beta > 0.0) || !(gamma1 > 0.0) || !(gamma2 > 0.0) || !(m0 > 0.0))
    fail(ErrorKind::InvalidArgument, "beta, Gamma1, gamma2, m0 must be positive");
  if (phi) {
    if (!(*phi > 0.0)) fail(ErrorKind::InvalidArgument, "phi must be positive");
    return reduced_phi_system(f, beta, gamma1, *phi, "vanishing-damping corollary, reduced");
  }
  return detail::three_equation_1d(
      f, beta, gamma1,
      [beta, gamma1, gamma2, m0](const detail::Pt& p, double& s1, double& s2) {
        const double gh = p.g * p.h;
        const double den = beta * beta * gh + 4.0 * m0 * gamma2;
        const double d_inv_gh = -(p.dg * p.h + p.g * p.dh) / (gh * gh);
        const double d_inv_g = -p.dg / (p.g * p.g);
        const double d_inv_h = -p.dh / (p.h * p.h);
        const double d_s_gh = p.ds / gh + p.s * d_inv_gh;
        const double d_s_g = p.ds / p.g + p.s * d_inv_g;
        s1 = 2.0 / (beta * beta) * d_inv_gh * p.s * p.s / gh - d_inv_h * 4.0 * p.s * p.s / (p.g * den) +
             d_s_gh * 4.0 * p.s / den;
        s2 = -gamma1 / beta * d_inv_g * p.s * p.s / gh - d_s_g * 2.0 * gamma1 * beta * p.s / den;
      },
      "vanishing-damping corollary");
}

// Fluctuation-dissipation case g = h = sigma.
inline LimitSystem fdt_reduction(const CoefficientField& sigma, const CoefficientField& Fe, double beta, double gamma1,
                                 const Vector* probe = nullptr) {
  if (sigma.rows != 1 || sigma.cols != 1 || Fe.rows != 1 || Fe.cols != 1)
    fail(ErrorKind::DimensionMismatch, "closed forms need scalar fields");
  for (const auto& x : detail::probe_points(probe ? *probe : Vector::Zero(1), 64))
    if (!(sigma(0.0, x)(0, 0) > 0.0)) fail(ErrorKind::NonPositiveSigma, "sigma must be strictly positive");
  StateLayout lay;
  lay.add("X", 1);
  lay.add("U", 1);
  auto sp = std::make_shared<const CoefficientField>(sigma);
  auto fp = std::make_shared<const CoefficientField>(Fe);
  auto fn = [sp, fp, beta, gamma1](double t, const Vector& z, Vector& a, Vector& c, Matrix& g) {
    const Vector xv = z.head(1);
    const double s = (*sp)(t, xv)(0, 0), ds = field_derivative(*sp, t, xv, 0)(0, 0), fe = (*fp)(t, xv)(0, 0);
    a.resize(2);
    c.resize(2);
    g.resize(2, 1);
    a(0) = 2.0 * fe / (beta * beta * s * s) - 2.0 / (beta * s) * z(1);
    a(1) = -gamma1 * fe / (beta * s);
    c(0) = 2.0 / (beta * beta) * (-2.0 * ds / (s * s * s));
    c(1) = -gamma1 / beta * (-ds / (s * s));
    g(0, 0) = 2.0 / (beta * s);
    g(1, 0) = 0.0;
  };
  LimitSystem s = detail::closed_form_system(lay, 1, "fluctuation-dissipation reduction", fn,
                                             sigma.is_constant() && Fe.is_constant());
  s.initialFromPartner = [](const Vector& pre) {
    const Eigen::Index nb = (pre.size() - 2) / 2;
    return Vector((Vector(2) << pre(0), pre(2) - pre(2 + nb)).finished());
  };
  return s;
}

// Limit of the hyper-diffusive model (g = h) on (X, Z0, Z1, Y0, Y1).
inline LimitSystem hyper_limit_1d(const CoefficientField& g, const CoefficientField& sigma, const CoefficientField& Fe,
                                  double beta, double gamma1, double gamma2, double gamma3, double m0) {
  for (const auto* c : {&g, &sigma, &Fe})
    if (c->rows != 1 || c->cols != 1) fail(ErrorKind::DimensionMismatch, "closed forms need scalar fields");
  if (!(beta > 0.0) || !(gamma1 > 0.0) || !(gamma2 > 0.0) || !(gamma3 > 0.0) || !(m0 > 0.0))
    fail(ErrorKind::InvalidArgument, "rates, beta and m0 must be positive");
  StateLayout lay;
  for (const char* n : {"X", "Z0", "Z1", "Y0", "Y1"}) lay.add(n, 1);
  ScalarFields f{g, g, sigma, Fe};
  auto ff = std::make_shared<const ScalarFields>(f);
  auto fn = [ff, beta, gamma1, gamma2, gamma3, m0](double t, const Vector& z, Vector& a, Vector& c, Matrix& w) {
    const auto p = detail::scalar_point(*ff, t, z(0));
    const double G = p.g, s = p.s, b2 = beta * beta, pr = gamma1 * gamma2, sm = gamma1 + gamma2;
    const double den = G * G * b2 + 4.0 * gamma3 * m0;
    const double z0 = z(1), z1 = z(2), y0 = z(3), y1 = z(4);
    const double d_inv_g = -p.dg / (G * G), d_inv_g2 = -2.0 * p.dg / (G * G * G);
    const double d_s_g = p.ds / G + s * d_inv_g, d_s_g2 = p.ds / (G * G) + s * d_inv_g2;
    a.resize(5);
    c.resize(5);
    w.resize(5, 1);
    a(0) = 2.0 * p.fe / (b2 * G * G) + 2.0 / (b2 * G) * (pr * z0 + sm * z1) - 2.0 * s / (b2 * G * G) * (pr * y0 + sm * y1);
    a(1) = -p.fe / (G * sm) - pr / sm * z0 + pr * s / (G * sm) * y0 + s / G * y1;
    a(2) = p.fe / G - pr * s / G * y0 - s / G * sm * y1;
    a(3) = y1;
    a(4) = -pr * y0 - sm * y1;
    const double common = d_inv_g * s * s / (G * G) + d_s_g * 2.0 * b2 * s / den;
    c(0) = 2.0 / b2 * d_inv_g2 * s * s / (G * G) - d_inv_g * 4.0 * s * s / (G * den) + d_s_g2 * 4.0 * s / den;
    c(1) = -common / sm;
    c(2) = common;
    c(3) = 0.0;
    c(4) = 0.0;
    w(0, 0) = 2.0 * s / (beta * G * G);
    w(1, 0) = -beta * s / (G * sm);
    w(2, 0) = s * beta / G;
    w(3, 0) = 0.0;
    w(4, 0) = beta;
  };
  LimitSystem out = detail::closed_form_system(lay, 1, "hyper-diffusive limit", fn, detail::all_constant(f));
  return out;
}

}  // namespace gle
