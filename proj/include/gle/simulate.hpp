#pragma once

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gle/rng.hpp"
#include "gle/sde.hpp"

namespace gle {

enum class StiffPolicy { Explicit, OuSplitting };

struct SimConfig {
  double T = 1.0;
  double dt = 0.01;
  std::uint64_t seed = 0;
  long paths = 1;
  std::optional<double> epsilon;
  StiffPolicy stiffPolicy = StiffPolicy::Explicit;
  bool autoShrink = true;
  // spacing of the underlying Wiener grid; defaults to the integration step
  std::optional<double> noiseStep;
  int recordEvery = 1;
  int threads = 0;  // 0: GLE_THREADS or hardware concurrency
};

inline constexpr double kBlowupThreshold = 1e8;
inline constexpr long kPathBlock = 64;

struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;
  StateLayout layout;
};

inline void validate_config(const SimConfig& c) {
  if (!(c.dt > 0.0) || !(c.T > 0.0) || !(c.dt <= c.T) || !std::isfinite(c.T))
    fail(ErrorKind::InvalidArgument, "need 0 < dt <= T");
  if (c.paths < 1) fail(ErrorKind::InvalidArgument, "paths must be >= 1");
  if (c.epsilon && !(*c.epsilon > 0.0)) fail(ErrorKind::EpsilonRange, "epsilon must be positive");
  if (c.recordEvery < 1) fail(ErrorKind::InvalidArgument, "recordEvery must be >= 1");
  if (c.noiseStep && !(*c.noiseStep > 0.0)) fail(ErrorKind::InvalidArgument, "noiseStep must be positive");
}

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("GLE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

inline bool stiff_slices_are_ou(const SdeSystem& s) {
  for (const auto& name : s.stiffSlices) {
    const Slice& sl = s.layout.at(name);
    bool covered = sl.size == 0;
    for (const auto& ou : s.ouSlices)
      covered = covered || (ou.offset <= sl.offset && sl.offset + sl.size <= ou.offset + ou.Gamma.rows());
    if (!covered) return false;
  }
  return true;
}

// Step actually used: dt, or dt split into equal substeps no longer than epsilon/20.
inline double effective_step(const SdeSystem& s, const SimConfig& c) {
  if (!c.epsilon) return c.dt;
  const double eps = *c.epsilon;
  if (c.stiffPolicy == StiffPolicy::OuSplitting && stiff_slices_are_ou(s)) return c.dt;
  if (!c.autoShrink) {
    if (c.dt > eps)
      fail(ErrorKind::StepTooLarge, "dt = " + std::to_string(c.dt) + " exceeds epsilon = " + std::to_string(eps));
    return c.dt;
  }
  const double target = std::min(c.dt, eps / 20.0);
  const double n = std::ceil(c.dt / target * (1.0 - 1e-12));
  return c.dt / n;
}

// integer ratio a / b, or InvalidArgument
inline long grid_ratio(double a, double b, const char* what) {
  const double r = a / b;
  const double n = std::round(r);
  if (n < 1.0 || std::abs(r - n) > 1e-9 * n) fail(ErrorKind::InvalidArgument, std::string(what) + " is not an integer multiple of the noise step");
  return static_cast<long>(n);
}

inline Matrix psd_sqrt(const Matrix& c) {
  if (c.rows() == 0) return c;
  Eigen::LLT<Matrix> llt(c);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(c));
  const Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

// Prepared integrator for one system and config; run() is const and thread-safe.
class Integrator {
 public:
  Integrator(const SdeSystem& sys, const SimConfig& cfg) : sys_(sys), cfg_(cfg) {
    validate_config(cfg);
    if (!sys.drift || !sys.diffusion) fail(ErrorKind::InvalidArgument, "system lacks drift or diffusion");
    n_ = sys.dim();
    m_ = sys.channels;
    h_ = effective_step(sys, cfg);
    noise_ = cfg.noiseStep ? *cfg.noiseStep : h_;
    sub_ = grid_ratio(h_, noise_, "integration step");
    steps_ = static_cast<long>(std::ceil(cfg.T / h_ - 1e-9));
    if (sys.initialMean.size() != n_) fail(ErrorKind::DimensionMismatch, "initial mean has wrong size");
    for (const auto& gi : sys.initialGaussian) inits_.push_back({gi.offset, psd_sqrt(gi.cov)});
    split_ = cfg.stiffPolicy == StiffPolicy::OuSplitting;
    if (split_) {
      for (const auto& ou : sys.ouSlices) {
        OuStep st;
        st.offset = ou.offset;
        st.channelOffset = ou.channelOffset;
        const Eigen::Index p = ou.Gamma.rows();
        st.E = matrix_exp(-ou.Gamma, h_);
        const Matrix stat = lyapunov_solve(-ou.Gamma, ou.Sigma * ou.Sigma.transpose());
        // regression of the exact stochastic integral on the coarse increment
        st.K = ou.Gamma.partialPivLu().solve((Matrix::Identity(p, p) - st.E) * ou.Sigma) / h_;
        const Matrix resid = symmetrize(stat - st.E * stat * st.E.transpose() - st.K * st.K.transpose() * h_);
        st.L = psd_sqrt(resid);
        ous_.push_back(std::move(st));
      }
    }
    if (sys.linear) {
      const LinearForm& lf = *sys.linear;
      phi_ = Matrix::Identity(n_, n_) + lf.A * h_;
      bh_ = lf.b * h_;
      g_ = lf.G;
      for (const auto& st : ous_) {
        const Eigen::Index p = st.E.rows();
        phi_.middleRows(st.offset, p).setZero();
        phi_.block(st.offset, st.offset, p, p) = st.E;
        bh_.segment(st.offset, p).setZero();
        g_.middleRows(st.offset, p).setZero();
        g_.block(st.offset, st.channelOffset, p, st.K.cols()) = st.K;
      }
    }
  }

  double step() const { return h_; }
  double noise_step() const { return noise_; }
  long steps() const { return steps_; }
  const SdeSystem& system() const { return sys_; }

  Vector initial_state(long path) const {
    NormalSource rng(cfg_.seed, static_cast<std::uint64_t>(path));
    Vector z = sys_.initialMean;
    for (const auto& [off, root] : inits_) {
      Vector xi(root.cols());
      for (Eigen::Index i = 0; i < xi.size(); ++i)
        xi(i) = rng.normal(Stream::Initial, static_cast<std::uint32_t>(off + i), 0);
      z.segment(off, root.rows()) += root * xi;
    }
    return z;
  }

  // Calls obs(k, t, z) at k = 0 and every recordEvery-th step, plus the last one.
  template <class Observer>
  void run(long path, Observer&& obs, const Vector* start = nullptr) const {
    NormalSource rng(cfg_.seed, static_cast<std::uint64_t>(path));
    Vector z = start ? *start : initial_state(path);
    if (z.size() != n_) fail(ErrorKind::DimensionMismatch, "initial state has wrong size");
    obs(0L, 0.0, static_cast<const Vector&>(z));
    Vector dw(m_), f(n_), zn(n_);
    Matrix g(n_, m_);
    const double sq = std::sqrt(noise_);
    for (long k = 0; k < steps_; ++k) {
      const double t = static_cast<double>(k) * h_;
      for (Eigen::Index c = 0; c < m_; ++c) {
        double acc = 0.0;
        const std::uint64_t base = static_cast<std::uint64_t>(k) * static_cast<std::uint64_t>(sub_);
        for (long r = 0; r < sub_; ++r) acc += rng.normal(Stream::Wiener, static_cast<std::uint32_t>(c), base + r);
        dw(c) = sq * acc;
      }
      if (sys_.linear) {
        zn.noalias() = phi_ * z;
        zn += bh_;
        zn.noalias() += g_ * dw;
      } else {
        sys_.drift(t, z, f);
        sys_.diffusion(t, z, g);
        zn = z + f * h_;
        zn.noalias() += g * dw;
        for (const auto& st : ous_) {
          const Eigen::Index p = st.E.rows();
          zn.segment(st.offset, p).noalias() = st.E * z.segment(st.offset, p);
          zn.segment(st.offset, p).noalias() += st.K * dw.segment(st.channelOffset, st.K.cols());
        }
      }
      for (const auto& st : ous_) {
        const Eigen::Index p = st.E.rows();
        Vector xi(p);
        for (Eigen::Index i = 0; i < p; ++i)
          xi(i) = rng.normal(Stream::Residual, static_cast<std::uint32_t>(st.offset + i), static_cast<std::uint64_t>(k));
        zn.segment(st.offset, p).noalias() += st.L * xi;
      }
      z.swap(zn);
      if (!(z.squaredNorm() <= kBlowupThreshold * kBlowupThreshold))
        fail(ErrorKind::Blowup, "state norm exceeded 1e8 at t = " + std::to_string(t + h_) + " on path " +
                                    std::to_string(path));
      if ((k + 1) % cfg_.recordEvery == 0 || k + 1 == steps_)
        obs(k + 1, static_cast<double>(k + 1) * h_, static_cast<const Vector&>(z));
    }
  }

 private:
  struct OuStep {
    Eigen::Index offset = 0, channelOffset = 0;
    Matrix E, K, L;
  };
  struct InitRoot {
    Eigen::Index offset;
    Matrix root;
  };
  const SdeSystem& sys_;
  SimConfig cfg_;
  Eigen::Index n_ = 0, m_ = 0;
  double h_ = 0.0, noise_ = 0.0;
  long sub_ = 1, steps_ = 0;
  bool split_ = false;
  std::vector<InitRoot> inits_;
  std::vector<OuStep> ous_;
  Matrix phi_, g_;
  Vector bh_;
};

inline Trajectory simulate_sde(const SdeSystem& sys, const SimConfig& cfg, long path = 0) {
  Integrator in(sys, cfg);
  Trajectory tr;
  tr.layout = sys.layout;
  in.run(path, [&](long, double t, const Vector& z) {
    tr.times.push_back(t);
    tr.states.push_back(z);
  });
  return tr;
}

// Runs fn(begin, end, blockIndex) over fixed 64-path blocks on worker threads. Callers write per-block results
// into slots indexed by blockIndex and reduce them in order, so output does not depend on the thread count.
inline void parallel_blocks(long paths, int threads, const std::function<void(long, long, long)>& fn) {
  const long blocks = (paths + kPathBlock - 1) / kPathBlock;
  const int nt = static_cast<int>(std::min<long>(std::max(1, threads), blocks));
  std::vector<std::exception_ptr> errs(static_cast<std::size_t>(blocks));
  auto worker = [&](int w) {
    for (long b = w; b < blocks; b += nt) {
      try {
        fn(b * kPathBlock, std::min(paths, (b + 1) * kPathBlock), b);
      } catch (...) {
        errs[static_cast<std::size_t>(b)] = std::current_exception();
      }
    }
  };
  if (nt <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nt; ++w) pool.emplace_back(worker, w);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

inline std::vector<Trajectory> simulate_ensemble(const SdeSystem& sys, const SimConfig& cfg) {
  Integrator in(sys, cfg);
  std::vector<Trajectory> out(static_cast<std::size_t>(cfg.paths));
  parallel_blocks(cfg.paths, resolve_threads(cfg.threads), [&](long b, long e, long) {
    for (long p = b; p < e; ++p) {
      Trajectory& tr = out[static_cast<std::size_t>(p)];
      tr.layout = sys.layout;
      in.run(p, [&](long, double t, const Vector& z) {
        tr.times.push_back(t);
        tr.states.push_back(z);
      });
    }
  });
  return out;
}

struct CoupledPair {
  Trajectory preLimit, limit;
  double supDistance = 0.0;
};

struct CoupledPathStats {
  double supDistance = 0.0;
  double maxScaledVelocity = 0.0;  // max_t |eps * v|, when the pre-limit has a "v" slice
};

// Pre-limit on its (finer) step, limit on cfg.dt, both fed by the same Wiener grid.
class CoupledIntegrator {
 public:
  CoupledIntegrator(const SdeSystem& pre, const SdeSystem& lim, const SimConfig& cfg)
      : pre_(pre), lim_(lim) {
    if (pre.channels != lim.channels)
      fail(ErrorKind::ChannelMismatch, "pre-limit has " + std::to_string(pre.channels) + " Wiener channels, limit has " +
                                           std::to_string(lim.channels));
    const Slice& xp = pre.layout.at(pre.positionSlice);
    const Slice& xl = lim.layout.at(lim.positionSlice);
    if (xp.size != xl.size) fail(ErrorKind::DimensionMismatch, "position slices differ in size");
    SimConfig pc = cfg;
    const double h = effective_step(pre, cfg);
    pc.noiseStep = cfg.noiseStep ? *cfg.noiseStep : h;
    pc.recordEvery = 1;
    SimConfig lc = pc;
    lc.epsilon.reset();
    preCfg_ = pc;
    limCfg_ = lc;
    preIn_.emplace(pre, pc);
    limIn_.emplace(lim, lc);
    ratio_ = grid_ratio(cfg.dt, preIn_->step(), "dt");
    eps_ = cfg.epsilon.value_or(1.0);
  }

  CoupledPathStats run(long path, Trajectory* preOut = nullptr, Trajectory* limOut = nullptr) const {
    const Slice& xp = pre_.layout.at(pre_.positionSlice);
    const Slice& xl = lim_.layout.at(lim_.positionSlice);
    const Slice* vs = pre_.layout.find("v");
    std::vector<Vector> xs;
    CoupledPathStats st;
    preIn_->run(path, [&](long k, double t, const Vector& z) {
      if (vs) st.maxScaledVelocity = std::max(st.maxScaledVelocity, eps_ * z.segment(vs->offset, vs->size).norm());
      if (k % ratio_ == 0) xs.push_back(z.segment(xp.offset, xp.size));
      if (preOut) {
        preOut->times.push_back(t);
        preOut->states.push_back(z);
      }
    });
    std::size_t i = 0;
    std::optional<Vector> start;
    if (lim_.initialFromPartner) start = lim_.initialFromPartner(preIn_->initial_state(path));
    limIn_->run(path, [&](long, double t, const Vector& z) {
      if (i < xs.size()) st.supDistance = std::max(st.supDistance, (xs[i] - z.segment(xl.offset, xl.size)).norm());
      ++i;
      if (limOut) {
        limOut->times.push_back(t);
        limOut->states.push_back(z);
      }
    }, start ? &*start : nullptr);
    return st;
  }

 private:
  const SdeSystem& pre_;
  const SdeSystem& lim_;
  SimConfig preCfg_, limCfg_;
  std::optional<Integrator> preIn_, limIn_;
  long ratio_ = 1;
  double eps_ = 1.0;
};

inline CoupledPair simulate_coupled_pair(const SdeSystem& pre, const SdeSystem& lim, const SimConfig& cfg,
                                         long path = 0) {
  CoupledIntegrator ci(pre, lim, cfg);
  CoupledPair out;
  out.preLimit.layout = pre.layout;
  out.limit.layout = lim.layout;
  out.supDistance = ci.run(path, &out.preLimit, &out.limit).supDistance;
  return out;
}

inline std::vector<CoupledPathStats> coupled_ensemble(const SdeSystem& pre, const SdeSystem& lim,
                                                      const SimConfig& cfg) {
  CoupledIntegrator ci(pre, lim, cfg);
  std::vector<CoupledPathStats> out(static_cast<std::size_t>(cfg.paths));
  parallel_blocks(cfg.paths, resolve_threads(cfg.threads), [&](long b, long e, long) {
    for (long p = b; p < e; ++p) out[static_cast<std::size_t>(p)] = ci.run(p);
  });
  return out;
}

// 17 significant digits round-trip doubles
inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr, std::optional<long> path = std::nullopt,
                                 bool header = true) {
  if (header) {
    if (path) os << "path,";
    os << "t";
    for (const auto& l : tr.layout.labels()) os << "," << l;
    os << "\n";
  }
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    if (path) os << *path << ",";
    os << format_double(tr.times[i]);
    for (Eigen::Index j = 0; j < tr.states[i].size(); ++j) os << "," << format_double(tr.states[i](j));
    os << "\n";
  }
}

}  // namespace gle
