#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gle/model.hpp"
#include "gle/quadrature.hpp"
#include "gle/simulate.hpp"

namespace gle {

// ---------------------------------------------------------------------------------------------
// mean-squared displacement

enum class MsdMethod { MonteCarlo, LaplaceFormula };

struct MSDCurve {
  std::vector<double> times;
  std::vector<Matrix> msd;     // E[(x_t - x_0)(x_t - x_0)^T]
  std::vector<Matrix> stdErr;  // zero for the formula
  MsdMethod method = MsdMethod::MonteCarlo;
  std::vector<std::string> warnings;

  std::vector<double> trace_msd() const {
    std::vector<double> r;
    for (const auto& m : msd) r.push_back(m.trace());
    return r;
  }
  std::vector<double> trace_stderr() const {
    std::vector<double> r;
    for (const auto& m : stdErr) r.push_back(std::sqrt(m.diagonal().squaredNorm()));
    return r;
  }
};

// Ensemble average of the displacement outer product. Running means are merged block by block in block order
// (Chan et al.) so the result does not depend on the thread count. The jackknife error of a mean is s / sqrt(n).
inline MSDCurve msd_monte_carlo(const SdeSystem& sys, const SimConfig& cfg) {
  Integrator in(sys, cfg);
  const Slice& xs = sys.layout.at(sys.positionSlice);
  const Eigen::Index d = xs.size;
  const long blocks = (cfg.paths + kPathBlock - 1) / kPathBlock;
  struct Acc {
    double n = 0.0;
    std::vector<double> times;
    std::vector<Matrix> mean, m2;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(blocks));
  parallel_blocks(cfg.paths, resolve_threads(cfg.threads), [&](long b, long e, long blk) {
    Acc& a = acc[static_cast<std::size_t>(blk)];
    for (long p = b; p < e; ++p) {
      std::size_t i = 0;
      Vector x0;
      a.n += 1.0;
      in.run(p, [&](long, double t, const Vector& z) {
        if (i == 0) x0 = z.segment(xs.offset, d);
        const Vector dx = z.segment(xs.offset, d) - x0;
        const Matrix o = dx * dx.transpose();
        if (i == a.mean.size()) {
          a.times.push_back(t);
          a.mean.push_back(Matrix::Zero(d, d));
          a.m2.push_back(Matrix::Zero(d, d));
        }
        const Matrix delta = o - a.mean[i];
        a.mean[i] += delta / a.n;
        a.m2[i] += delta.cwiseProduct(o - a.mean[i]);
        ++i;
      });
    }
  });
  Acc tot = acc.front();
  for (std::size_t k = 1; k < acc.size(); ++k) {
    const Acc& a = acc[k];
    const double n = tot.n + a.n;
    for (std::size_t i = 0; i < tot.mean.size(); ++i) {
      const Matrix delta = a.mean[i] - tot.mean[i];
      tot.m2[i] += a.m2[i] + delta.cwiseProduct(delta) * (tot.n * a.n / n);
      tot.mean[i] += delta * (a.n / n);
    }
    tot.n = n;
  }
  MSDCurve c;
  c.method = MsdMethod::MonteCarlo;
  c.times = tot.times;
  c.msd = tot.mean;
  for (const auto& m2 : tot.m2)
    c.stdErr.push_back(tot.n > 1.0 ? Matrix((m2 / (tot.n - 1.0) / tot.n).cwiseMax(0.0).cwiseSqrt())
                                   : Matrix::Zero(d, d));
  if (cfg.paths < 100) c.warnings.push_back("fewer than 100 paths: standard errors are unreliable");
  return c;
}

// Fixed Talbot-type contour s(theta) = lambda (a + b theta cot(c theta) + i nu theta) with the
// Weideman parameters; trapezoid rule on n midpoints of (-pi, pi).
struct TalbotContour {
  static constexpr double a = -0.6122, b = 0.5017, c = 0.6407, nu = 0.2645;
  int nodes = 64;

  static cplx point(double lambda, double th) {
    if (th == 0.0) return {lambda * (a + b / c), 0.0};
    return {lambda * (a + b * th / std::tan(c * th)), lambda * nu * th};
  }
  static cplx derivative(double lambda, double th) {
    if (th == 0.0) return {0.0, lambda * nu};
    const double s = std::sin(c * th);
    return {lambda * b * (1.0 / std::tan(c * th) - c * th / (s * s)), lambda * nu};
  }
  // true when p lies to the left of the contour (enclosed)
  static bool encloses(double lambda, cplx p) {
    const double th = std::abs(p.imag()) / (lambda * nu);
    if (th >= std::numbers::pi) return false;
    return p.real() < point(lambda, th).real() - 1e-12 * lambda;
  }
};

namespace detail {

struct LaplaceMsdModel {
  Eigen::Index d = 1;
  double mass = 1.0;
  Matrix gamma0, noise0;  // effective Markovian friction and (sigma0 sigma0^T) incl. feedthrough
  Matrix g, h;
  std::vector<OUBlock> blocks;
  std::vector<cplx> poles;

  // (z (m z + gamma0 + g khat(z) h))^-1
  CMatrix hhat(cplx z) const {
    CMatrix a = (mass * z) * CMatrix::Identity(d, d) + gamma0.cast<cplx>();
    if (!blocks.empty()) {
      CMatrix k = CMatrix::Zero(g.cols(), h.rows());
      for (const OUBlock& b : blocks) {
        const CMatrix res = z * CMatrix::Identity(b.dim(), b.dim()) + b.Gamma.cast<cplx>();
        k += b.C.cast<cplx>() * res.partialPivLu().solve(b.gain().cast<cplx>());
      }
      a += g.cast<cplx>() * k * h.cast<cplx>();
    }
    return (z * a).partialPivLu().inverse();
  }
};

}  // namespace detail

struct LaplaceOptions {
  int nodes = 64;
  double imagTol = 1e-6;
  double fdtTol = 1e-8;
};

class LaplaceMsd {
 public:
  LaplaceMsd(const GLEModel& m, LaplaceOptions opt = {}) : opt_(opt) {
    check_model_dimensions(m);
    if (!all_fields_constant(m)) fail(ErrorKind::HypothesisViolation, "the formula needs constant coefficients");
    const Vector x0 = m.initial.x0;
    md_.d = m.d;
    md_.mass = m.mass;
    md_.g = m.g(0.0, x0);
    md_.h = m.h(0.0, x0);
    const Matrix sg = m.sigma(0.0, x0);
    md_.gamma0 = m.gamma0(0.0, x0) + md_.g * m.kernel.delta_weight() * md_.h;
    // white part of the forcing: sigma0 plus the feedthrough of the noise blocks
    const Matrix s0 = m.sigma0(0.0, x0);
    md_.noise0 = s0 * s0.transpose() + sg * m.noise.white_covariance() * sg.transpose();
    for (const auto& b : m.kernel.blocks)
      if (b.alpha && b.dim()) md_.blocks.push_back(b);
    // noise covariance must equal the kernel, and sigma k sigma^T = h^T k^T g^T
    for (int i = 0; i <= 200; ++i) {
      const double t = 0.05 * i;
      const Matrix k = kernel_eval(m.kernel, t), r = covariance_eval(m.noise, t);
      const double scale = 1.0 + k.norm();
      if ((k - r).norm() > opt_.fdtTol * scale)
        fail(ErrorKind::HypothesisViolation, "noise covariance differs from the memory kernel");
      if ((sg * k * sg.transpose() - md_.h.transpose() * k.transpose() * md_.g.transpose()).norm() > opt_.fdtTol * scale)
        fail(ErrorKind::HypothesisViolation, "sigma k sigma^T differs from h^T k^T g^T");
    }
    if ((m.kernel.delta_weight() * 2.0 - m.noise.white_covariance()).norm() > opt_.fdtTol)
      fail(ErrorKind::HypothesisViolation, "white parts of kernel and noise differ");
    // poles of hhat: 0 and the spectrum of the deterministic (v, y) dynamics
    const LinearForm lf = markovian_linear_form(m, 0.0, x0);
    const StateLayout lay = markovian_layout(m);
    const Eigen::Index v0 = lay.at("v").offset, nv = lay.at("beta3").offset - v0;
    const Spectrum sp = spectrum(lf.A.block(v0, v0, nv, nv));
    md_.poles = sp.eigenvalues;
    md_.poles.push_back(0.0);
    energy_ = 0.5 * m.mass * m.initial.v0 * m.initial.v0.transpose();
  }

  // inverse transform of z^power * hhat(z) at t > 0
  Matrix invert(double t, int power) const {
    const Eigen::Index d = md_.d;
    double lambda = opt_.nodes / t;
    for (const cplx& p : md_.poles) {
      int guard = 0;
      while (!TalbotContour::encloses(lambda, p) && ++guard < 60) lambda *= 1.25;
    }
    // e^{Re s t} peaks at theta = 0; beyond ~1e10 amplification roundoff exceeds the tolerance
    if (lambda * (TalbotContour::a + TalbotContour::b / TalbotContour::c) * t > 23.0)
      fail(ErrorKind::LaplaceInstability, "contour needed to enclose the poles amplifies roundoff too much");
    CMatrix acc = CMatrix::Zero(d, d);
    const int n = opt_.nodes;
    const double hth = 2.0 * std::numbers::pi / n;
    for (int k = 0; k < n; ++k) {
      const double th = -std::numbers::pi + (k + 0.5) * hth;
      const cplx s = TalbotContour::point(lambda, th), ds = TalbotContour::derivative(lambda, th);
      cplx w = std::exp(s * t) * ds;
      if (power) w *= std::pow(s, power);
      acc += w * md_.hhat(s);
    }
    acc *= hth / cplx(0.0, 2.0 * std::numbers::pi);
    const double mag = acc.norm();
    if (acc.imag().norm() > opt_.imagTol * std::max(1.0, mag))
      fail(ErrorKind::LaplaceInstability, "inverse transform is not real");
    return acc.real();
  }

  Matrix H(double t) const { return t <= 0.0 ? Matrix::Zero(md_.d, md_.d) : invert(t, 0); }
  Matrix Hdot(double t) const {
    return t <= 0.0 ? Matrix((Matrix::Identity(md_.d, md_.d) / md_.mass)) : invert(t, 1);
  }

  Matrix msd(double t) const {
    if (t <= 0.0) return Matrix::Zero(md_.d, md_.d);
    const Matrix q = md_.noise0 - 2.0 * md_.gamma0.transpose();
    const Matrix iH = integrate([&](double u) { return H(u); }, 0.0, t, 1e-11, 1e-10);
    const Matrix iHH = integrate([&](double u) { return Matrix(H(u) * Hdot(u).transpose()); }, 0.0, t, 1e-11, 1e-10);
    Matrix out = 2.0 * iH + 2.0 * md_.mass * (H(t) * energy_ * H(t).transpose() - iHH);
    if (q.norm() > 0.0)
      out += integrate([&](double u) { return Matrix(H(u) * q * H(u).transpose()); }, 0.0, t, 1e-11, 1e-10);
    return out;
  }

 private:
  LaplaceOptions opt_;
  detail::LaplaceMsdModel md_;
  Matrix energy_;
};

inline MSDCurve msd_exact_free_particle(const GLEModel& m, const std::vector<double>& times, LaplaceOptions opt = {}) {
  const LaplaceMsd lm(m, opt);
  MSDCurve c;
  c.method = MsdMethod::LaplaceFormula;
  for (double t : times) {
    c.times.push_back(t);
    c.msd.push_back(lm.msd(t));
    c.stdErr.push_back(Matrix::Zero(m.d, m.d));
  }
  return c;
}

// ---------------------------------------------------------------------------------------------
// exponent and slope fits

struct LineFit {
  double slope = 0.0, intercept = 0.0, slopeStderr = 0.0;
};

inline LineFit weighted_line_fit(const std::vector<double>& x, const std::vector<double>& y,
                                 const std::vector<double>& w) {
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += w[i] * (x[i] - mx) * (x[i] - mx);
    sxy += w[i] * (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) fail(ErrorKind::DegenerateWindow, "abscissae are all equal");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    rss += w[i] * r * r;
  }
  const double dof = static_cast<double>(x.size()) - 2.0;
  f.slopeStderr = dof > 0 ? std::sqrt(rss / dof / sxx) : 0.0;
  return f;
}

struct ExponentFit {
  double exponent = 0.0, stdErr = 0.0;
};

// Slope of log(trace msd) against log t over the last `window` fraction of the grid. Points with a Monte Carlo
// error are weighted by (msd / stderr)^2, the inverse variance of log msd.
inline ExponentFit fit_diffusion_exponent(const MSDCurve& c, double window = 0.3) {
  if (!(window > 0.0 && window <= 1.0)) fail(ErrorKind::DegenerateWindow, "window must be in (0, 1]");
  const std::vector<double> m = c.trace_msd(), se = c.trace_stderr();
  const std::size_t n = c.times.size();
  const std::size_t first = n - static_cast<std::size_t>(std::ceil(window * static_cast<double>(n)));
  std::vector<double> x, y, w;
  for (std::size_t i = first; i < n; ++i) {
    if (!(c.times[i] > 0.0) || !(m[i] > 0.0)) continue;
    x.push_back(std::log(c.times[i]));
    y.push_back(std::log(m[i]));
    w.push_back(se[i] > 0.0 ? (m[i] / se[i]) * (m[i] / se[i]) : 1.0);
  }
  if (x.size() < 10) fail(ErrorKind::DegenerateWindow, "need at least 10 positive points in the fit window");
  // weights only matter relatively
  const double wmax = *std::max_element(w.begin(), w.end());
  for (double& v : w) v /= wmax;
  const LineFit f = weighted_line_fit(x, y, w);
  return {f.slope, f.slopeStderr};
}

struct SlopeFit {
  double slope = 0.0;
  double omegaLo = 0.0, omegaHi = 0.0;
};

// Low-frequency log-log slope of the trace of the block's spectral density. The default window sits two to
// three decades below the slowest rate.
inline SlopeFit spectral_slope(const OUBlock& b, std::optional<std::pair<double, double>> window = std::nullopt,
                               int points = 21) {
  double lo, hi;
  if (window) {
    std::tie(lo, hi) = *window;
  } else {
    const double rate = b.dim() ? spectrum(-b.Gamma).stabilityMargin : 1.0;
    lo = 1e-3 * rate;
    hi = 1e-2 * rate;
  }
  if (!(lo > 0.0 && hi > lo)) fail(ErrorKind::DegenerateWindow, "frequency window must satisfy 0 < lo < hi");
  std::vector<double> x, y, w;
  for (int i = 0; i < points; ++i) {
    const double om = lo * std::pow(hi / lo, static_cast<double>(i) / (points - 1));
    const double s = std::abs(spectral_density(b, om).trace());
    if (!(s > 0.0)) continue;
    x.push_back(std::log(om));
    y.push_back(std::log(s));
    w.push_back(1.0);
  }
  if (x.size() < 2) fail(ErrorKind::DegenerateWindow, "spectral density vanishes on the window");
  return {weighted_line_fit(x, y, w).slope, lo, hi};
}

// ---------------------------------------------------------------------------------------------
// epsilon studies

struct Quartiles {
  double q25 = 0.0, median = 0.0, q75 = 0.0;
};

inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(i);
  return i + 1 < v.size() ? v[i] + frac * (v[i + 1] - v[i]) : v[i];
}

inline Quartiles quartiles(const std::vector<double>& v) {
  return {quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75)};
}

struct ConvergenceRow {
  double epsilon = 0.0;
  Quartiles supError, momentum;
  std::string error;  // non-empty when the cell failed
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
  std::optional<double> fittedRate;  // unset when undefined (zero or failed medians)
  std::string rateNote;

  std::vector<double> epsilons() const {
    std::vector<double> r;
    for (const auto& row : rows) r.push_back(row.epsilon);
    return r;
  }
  bool strictly_decreasing_errors() const {
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (!(rows[i].supError.median < rows[i - 1].supError.median)) return false;
    return !rows.empty();
  }
  bool strictly_decreasing_momentum() const {
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (!(rows[i].momentum.median < rows[i - 1].momentum.median)) return false;
    return !rows.empty();
  }
};

inline void require_decreasing(const std::vector<double>& eps) {
  if (eps.empty()) fail(ErrorKind::InvalidArgument, "epsilon list is empty");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] > 0.0)) fail(ErrorKind::EpsilonRange, "epsilons must be positive");
    if (i && !(eps[i] < eps[i - 1])) fail(ErrorKind::InvalidArgument, "epsilon list must be strictly decreasing");
  }
}

using SystemFamily = std::function<SdeSystem(double)>;

// Least-squares slope of log median against log eps; the largest eps is dropped when four or more are present.
inline void fit_rate(ConvergenceReport& r) {
  std::vector<double> x, y, w;
  const std::size_t skip = r.rows.size() >= 4 ? 1 : 0;
  for (std::size_t i = skip; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    if (!row.error.empty() || !(row.supError.median > 0.0) || !std::isfinite(row.supError.median)) {
      r.rateNote = "rate undefined: zero or failed median at eps = " + format_double(row.epsilon);
      return;
    }
    x.push_back(std::log(row.epsilon));
    y.push_back(std::log(row.supError.median));
    w.push_back(1.0);
  }
  if (x.size() < 2) {
    r.rateNote = "rate undefined: fewer than two usable epsilons";
    return;
  }
  r.fittedRate = weighted_line_fit(x, y, w).slope;
}

// Cells run in order; paths inside a cell run in parallel. Failures are recorded per cell.
inline ConvergenceReport convergence_study(const SystemFamily& family, const SdeSystem& limit,
                                           const std::vector<double>& eps, const SimConfig& cfg) {
  require_decreasing(eps);
  ConvergenceReport rep;
  for (double e : eps) {
    ConvergenceRow row;
    row.epsilon = e;
    try {
      SimConfig c = cfg;
      c.epsilon = e;
      const SdeSystem pre = family(e);
      const auto stats = coupled_ensemble(pre, limit, c);
      std::vector<double> sup, mom;
      for (const auto& s : stats) {
        sup.push_back(s.supDistance);
        mom.push_back(s.maxScaledVelocity);
      }
      row.supError = quartiles(sup);
      row.momentum = quartiles(mom);
    } catch (const Error& err) {
      row.error = err.what();
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.supError = row.momentum = {nan, nan, nan};
    }
    rep.rows.push_back(row);
  }
  fit_rate(rep);
  return rep;
}

struct MomentumRow {
  double epsilon = 0.0;
  Quartiles scaledVelocity;
  std::string error;
};

// sup_t |eps v| on the pre-limit family alone.
inline std::vector<MomentumRow> momentum_decay_check(const SystemFamily& family, const std::vector<double>& eps,
                                                     const SimConfig& cfg) {
  require_decreasing(eps);
  std::vector<MomentumRow> out;
  for (double e : eps) {
    MomentumRow row;
    row.epsilon = e;
    try {
      SimConfig c = cfg;
      c.epsilon = e;
      const SdeSystem sys = family(e);
      const Slice& vs = sys.layout.at("v");
      Integrator in(sys, c);
      std::vector<double> sup(static_cast<std::size_t>(c.paths), 0.0);
      parallel_blocks(c.paths, resolve_threads(c.threads), [&](long b, long en, long) {
        for (long p = b; p < en; ++p) {
          double& s = sup[static_cast<std::size_t>(p)];
          in.run(p, [&](long, double, const Vector& z) { s = std::max(s, e * z.segment(vs.offset, vs.size).norm()); });
        }
      });
      row.scaledVelocity = quartiles(sup);
    } catch (const Error& err) {
      row.error = err.what();
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.scaledVelocity = {nan, nan, nan};
    }
    out.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// CSV

inline void write_msd_csv(std::ostream& os, const MSDCurve& c) {
  const Eigen::Index d = c.msd.empty() ? 1 : c.msd.front().rows();
  if (d == 1) {
    os << "t,msd,stderr\n";
    for (std::size_t i = 0; i < c.times.size(); ++i)
      os << format_double(c.times[i]) << "," << format_double(c.msd[i](0, 0)) << "," << format_double(c.stdErr[i](0, 0))
         << "\n";
    return;
  }
  os << "t";
  for (const char* what : {"msd", "stderr"})
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) os << "," << what << "[" << i << "," << j << "]";
  os << "\n";
  for (std::size_t k = 0; k < c.times.size(); ++k) {
    os << format_double(c.times[k]);
    for (const auto* m : {&c.msd[k], &c.stdErr[k]})
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) os << "," << format_double((*m)(i, j));
    os << "\n";
  }
}

inline void write_convergence_csv(std::ostream& os, const ConvergenceReport& r) {
  os << "eps,median,q25,q75,momentum_median\n";
  for (const auto& row : r.rows)
    os << format_double(row.epsilon) << "," << format_double(row.supError.median) << ","
       << format_double(row.supError.q25) << "," << format_double(row.supError.q75) << ","
       << format_double(row.momentum.median) << "\n";
}

}  // namespace gle
