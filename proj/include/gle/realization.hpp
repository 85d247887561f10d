#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "gle/matops.hpp"

namespace gle {

// Construction recipes kept on a block so that rescaling can rebuild it.
struct BiExpRecipe {
  Vector slow, fast;  // diagonals of the two rate blocks
  Matrix B;
};
struct CompanionRecipe {
  Matrix B;
  std::vector<Vector> rates;  // diagonal of each rate block
  int l = 0;
};
using Recipe = std::variant<std::monostate, BiExpRecipe, CompanionRecipe>;

// One realization block: d beta = -Gamma beta dt + Sigma dW, output C beta (+ D dW).
// D is an optional white feedthrough on the block's own channels; it carries the
// delta part of a kernel (weight D D^T / 2) or of a noise covariance (D D^T).
struct OUBlock {
  Matrix Gamma, Sigma, M, C, D;
  int alpha = 1;
  Recipe recipe;
  // deterministic kernel carrier: no noise channels, M only needs to be symmetric
  bool kernelOnly = false;

  Eigen::Index dim() const { return Gamma.rows(); }
  Eigen::Index channels() const { return Sigma.cols(); }
  Eigen::Index outputs() const { return C.rows(); }
  bool active() const { return alpha != 0 && (dim() > 0 || D.size() > 0); }
  bool has_feedthrough() const { return D.size() > 0 && !D.isZero(0.0); }
  // t >= 0 kernel is C e^{-Gamma t} gain()
  Matrix gain() const { return M * C.transpose() + Sigma * D.transpose(); }

  static OUBlock empty(Eigen::Index outputs) {
    OUBlock b;
    b.Gamma = Matrix(0, 0);
    b.Sigma = Matrix(0, 0);
    b.M = Matrix(0, 0);
    b.C = Matrix(outputs, 0);
    b.D = Matrix(outputs, 0);
    b.alpha = 0;
    return b;
  }
};

inline double lyapunov_scale(const OUBlock& b) { return 1.0 + b.Gamma.norm() * b.M.norm(); }

inline void validate_block(const OUBlock& b) {
  require_square(b.Gamma, "Gamma");
  const Eigen::Index d = b.dim();
  if (b.M.rows() != d || b.M.cols() != d) fail(ErrorKind::DimensionMismatch, "M must match Gamma");
  if (b.Sigma.rows() != d) fail(ErrorKind::DimensionMismatch, "Sigma rows must match Gamma");
  if (b.C.cols() != d) fail(ErrorKind::DimensionMismatch, "C cols must match Gamma");
  if (b.D.rows() != b.C.rows() || b.D.cols() != b.Sigma.cols())
    fail(ErrorKind::DimensionMismatch, "D must be outputs x channels");
  if (b.alpha != 0 && b.alpha != 1) fail(ErrorKind::InvalidArgument, "alpha must be 0 or 1");
  for (const Matrix* m : {&b.Gamma, &b.Sigma, &b.M, &b.C, &b.D}) require_finite(*m, "block matrix");
  if (d == 0) return;
  if (!(spectrum(-b.Gamma).stabilityMargin > 0.0))  // min Re lambda(Gamma)
    fail(ErrorKind::NotStable, "Gamma is not positive stable");
  if (b.kernelOnly) {
    if (b.Sigma.cols() != 0) fail(ErrorKind::InvalidArgument, "kernel-only block cannot carry noise channels");
    if ((b.M - b.M.transpose()).norm() > 1e-12 * (1.0 + b.M.norm()))
      fail(ErrorKind::InvalidArgument, "M not symmetric");
    return;
  }
  const Matrix res = b.Gamma * b.M + b.M * b.Gamma.transpose() - b.Sigma * b.Sigma.transpose();
  if (res.norm() > 1e-10 * lyapunov_scale(b))
    fail(ErrorKind::InvalidArgument, "Lyapunov invariant violated: residual " + std::to_string(res.norm()));
  if ((b.M - b.M.transpose()).norm() > 1e-12 * (1.0 + b.M.norm()))
    fail(ErrorKind::InvalidArgument, "M not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(b.M));
  if (es.eigenvalues().minCoeff() <= 0.0) fail(ErrorKind::InvalidArgument, "M not positive definite");
}

// M from the Lyapunov equation Gamma M + M Gamma^T = Sigma Sigma^T.
inline OUBlock make_block(const Matrix& Gamma, const Matrix& Sigma, const Matrix& C, int alpha = 1,
                          const Matrix& D = Matrix()) {
  OUBlock b;
  b.Gamma = Gamma;
  b.Sigma = Sigma;
  b.C = C;
  b.D = D.size() ? D : Matrix::Zero(C.rows(), Sigma.cols());
  b.alpha = alpha;
  require_square(Gamma, "Gamma");
  if (Sigma.rows() != Gamma.rows()) fail(ErrorKind::DimensionMismatch, "Sigma rows must match Gamma");
  b.M = lyapunov_solve(-Gamma, Sigma * Sigma.transpose());
  validate_block(b);
  return b;
}

inline OUBlock from_parts(const Matrix& Gamma, const Matrix& Sigma, const Matrix& M, const Matrix& C,
                          int alpha = 1, const Matrix& D = Matrix()) {
  OUBlock b{Gamma, Sigma, M, C, D.size() ? D : Matrix::Zero(C.rows(), Sigma.cols()), alpha, {}, false};
  validate_block(b);
  return b;
}

// Gamma' = T Gamma T^-1, M' = T M T^T, C' = C T^-1, Sigma' = T Sigma
inline OUBlock similarity_transform(const OUBlock& b, const Matrix& T) {
  const Matrix Ti = T.inverse();
  OUBlock r = b;
  r.Gamma = T * b.Gamma * Ti;
  r.M = symmetrize(T * b.M * T.transpose());
  r.C = b.C * Ti;
  r.Sigma = T * b.Sigma;
  r.recipe = {};
  return r;
}

struct KernelRealization {
  std::array<OUBlock, 2> blocks;
  // instantaneous damping weight from feedthrough parts
  Matrix delta_weight() const {
    Matrix w = Matrix::Zero(outputs(), outputs());
    for (const auto& b : blocks)
      if (b.alpha && b.D.size()) w += 0.5 * b.D * b.D.transpose();
    return w;
  }
  Eigen::Index outputs() const { return blocks[0].outputs(); }
};

struct NoiseRealization {
  std::array<OUBlock, 2> blocks;
  Matrix white_covariance() const {
    Matrix w = Matrix::Zero(outputs(), outputs());
    for (const auto& b : blocks)
      if (b.alpha && b.D.size()) w += b.D * b.D.transpose();
    return w;
  }
  Eigen::Index outputs() const { return blocks[0].outputs(); }
};

// Smooth part of one block's kernel; symmetric extension to t < 0.
inline Matrix block_kernel(const OUBlock& b, double t) {
  if (b.dim() == 0) return Matrix::Zero(b.outputs(), b.outputs());
  const Matrix k = b.C * matrix_exp(-b.Gamma, std::abs(t)) * b.gain();
  return t >= 0 ? k : Matrix(k.transpose());
}

inline Matrix kernel_eval(const KernelRealization& k, double t) {
  Matrix out = Matrix::Zero(k.outputs(), k.outputs());
  for (const auto& b : k.blocks)
    if (b.alpha) out += block_kernel(b, t);
  return out;
}

inline Matrix covariance_eval(const NoiseRealization& n, double t) {
  Matrix out = Matrix::Zero(n.outputs(), n.outputs());
  for (const auto& b : n.blocks)
    if (b.alpha) out += block_kernel(b, t);
  return out;
}

// S(w) = int R(t) e^{-iwt} dt for one block (real part), feedthrough included as D D^T.
inline Matrix spectral_density(const OUBlock& b, double omega) {
  const Eigen::Index q = b.outputs();
  Matrix s = b.D.size() ? Matrix(b.D * b.D.transpose()) : Matrix::Zero(q, q);
  if (b.dim() == 0) return s;
  const CMatrix res = (cplx(0, omega) * CMatrix::Identity(b.dim(), b.dim()) + b.Gamma.cast<cplx>());
  Eigen::PartialPivLU<CMatrix> lu(res);
  if (!(std::abs(lu.determinant()) > 0.0)) fail(ErrorKind::InvalidArgument, "SingularGamma");
  const CMatrix z = b.C.cast<cplx>() * lu.solve(b.gain().cast<cplx>());
  s += (z + z.adjoint()).real();
  return s;
}

// K^(n) = C Gamma^{-n} gain, plus the delta weight for n = 1
inline Matrix effective_constant(const OUBlock& b, int n) {
  const Eigen::Index q = b.outputs();
  Matrix k = Matrix::Zero(q, q);
  if (b.dim() > 0) {
    Eigen::FullPivLU<Matrix> lu(b.Gamma);
    if (!lu.isInvertible()) fail(ErrorKind::InvalidArgument, "SingularGamma");
    Matrix p = b.gain();
    if (n >= 0) {
      for (int i = 0; i < n; ++i) p = lu.solve(p);
    } else {
      for (int i = 0; i < -n; ++i) p = b.Gamma * p;
    }
    k = b.C * p;
  }
  if (n == 1 && b.D.size()) k += 0.5 * b.D * b.D.transpose();
  return k;
}

inline void require_diagonal(const Matrix& m, const char* what) {
  require_square(m, what);
  if (!(m - Matrix(m.diagonal().asDiagonal())).isZero(0.0))
    fail(ErrorKind::InvalidArgument, std::string(what) + " must be diagonal");
}

inline OUBlock biexp_from_diagonals(const Vector& g1, const Vector& g2, const Matrix& B) {
  const Eigen::Index p = g1.size();
  if (g2.size() != p || B.cols() != p) fail(ErrorKind::DimensionMismatch, "bi-exponential block sizes");
  for (Eigen::Index i = 0; i < p; ++i)
    if (!(g1(i) > 0.0) || !(g2(i) > g1(i)))
      fail(ErrorKind::OrderingViolation, "need 0 < slow rate < fast rate on every diagonal entry");
  const Eigen::ArrayXd a = g1.array(), c = g2.array();
  const Eigen::ArrayXd dif2 = (a - c).square();
  OUBlock b;
  b.Gamma = Matrix::Zero(2 * p, 2 * p);
  b.Gamma.diagonal() << g1, g2;
  b.Sigma = Matrix::Zero(2 * p, p);
  b.Sigma.topRows(p) = Vector(-a * c / (c - a)).asDiagonal();
  b.Sigma.bottomRows(p) = Vector(c * c / (c - a)).asDiagonal();
  b.M = Matrix::Zero(2 * p, 2 * p);
  b.M.topLeftCorner(p, p) = Vector(0.5 * a * c * c / dif2).asDiagonal();
  const Vector off = -a * c * c * c / ((a + c) * dif2);
  b.M.topRightCorner(p, p) = off.asDiagonal();
  b.M.bottomLeftCorner(p, p) = off.asDiagonal();
  b.M.bottomRightCorner(p, p) = Vector(0.5 * c * c * c / dif2).asDiagonal();
  b.C.resize(B.rows(), 2 * p);
  b.C << B, B;
  b.D = Matrix::Zero(B.rows(), p);
  b.alpha = 1;
  b.recipe = BiExpRecipe{g1, g2, B};
  validate_block(b);
  return b;
}

inline OUBlock biexp_realization(const Matrix& slow, const Matrix& fast, const Matrix& B) {
  require_diagonal(slow, "slow rate block");
  require_diagonal(fast, "fast rate block");
  return biexp_from_diagonals(slow.diagonal(), fast.diagonal(), B);
}

struct CompanionResult {
  OUBlock block;
  double outputConstraintResidual = 0.0;  // |M H^T - G|, diagnostic only
};

inline CompanionResult companion_realization_full(const Matrix& B, const std::vector<Matrix>& rateBlocks,
                                                  int l) {
  const int d = static_cast<int>(rateBlocks.size());
  if (d < 1 || l < 0 || l >= d) fail(ErrorKind::InvalidArgument, "need 0 <= l < number of rate blocks");
  const Eigen::Index p = rateBlocks[0].rows();
  std::vector<Vector> rates;
  for (const auto& r : rateBlocks) {
    require_diagonal(r, "rate block");
    if (r.rows() != p) fail(ErrorKind::DimensionMismatch, "rate blocks must share size");
    if (!(r.diagonal().array() > 0.0).all()) fail(ErrorKind::OrderingViolation, "rates must be positive");
    rates.push_back(r.diagonal());
  }
  if (B.rows() != p) fail(ErrorKind::DimensionMismatch, "B rows must match rate block size");
  // coefficients of prod_k (z + g_k), entrywise on the diagonal
  std::vector<Eigen::ArrayXd> coef(d + 1, Eigen::ArrayXd::Zero(p));
  coef[0].setOnes();
  for (int k = 0; k < d; ++k) {
    for (int j = k + 1; j >= 1; --j) coef[j] = coef[j] * rates[k].array() + coef[j - 1];
    coef[0] = coef[0] * rates[k].array();
  }
  // coef[j] multiplies z^j
  const Eigen::Index n = d * p;
  Matrix F = Matrix::Zero(n, n);
  for (int k = 0; k + 1 < d; ++k) F.block(k * p, (k + 1) * p, p, p) = -Matrix::Identity(p, p);
  for (int i = 0; i < d; ++i) F.block((d - 1) * p, i * p, p, p) = Vector(coef[i].matrix()).asDiagonal();
  Matrix G = Matrix::Zero(n, p);
  G.bottomRows(p) = Matrix::Identity(p, p);
  Matrix H = Matrix::Zero(p, n);
  H.block(0, l * p, p, p) = Matrix::Identity(p, p);
  CompanionResult res;
  OUBlock& b = res.block;
  b.Gamma = F;
  b.Sigma = G * B;
  b.C = H;
  b.D = Matrix::Zero(p, B.cols());
  b.alpha = 1;
  try {
    b.M = lyapunov_solve(-F, b.Sigma * b.Sigma.transpose());
    validate_block(b);
  } catch (const Error& e) {
    fail(ErrorKind::InfeasibleLMI, std::string("companion realization has no valid covariance: ") + e.what());
  }
  b.recipe = CompanionRecipe{B, rates, l};
  res.outputConstraintResidual = (b.M * H.transpose() - G).norm();
  return res;
}

inline OUBlock companion_realization(const Matrix& B, const std::vector<Matrix>& rateBlocks, int l) {
  return companion_realization_full(B, rateBlocks, l).block;
}

// Divide the rates at fastIndices by eps and rebuild the block.
// Bi-exponential blocks index the diagonal of Gamma, companion blocks index the rate list,
// blocks without a recipe must have diagonal Gamma (Sigma, C, D kept, M recomputed).
inline OUBlock rescale_fast_scales(const OUBlock& b, const std::set<int>& fastIndices, double eps) {
  if (!(eps > 0.0 && eps <= 1.0)) fail(ErrorKind::EpsilonRange, "eps must lie in (0,1]");
  if (eps == 1.0) return b;
  auto check = [&](int n) {
    for (int i : fastIndices)
      if (i < 0 || i >= n) fail(ErrorKind::InvalidArgument, "fast index out of range");
  };
  OUBlock out;
  if (const auto* r = std::get_if<BiExpRecipe>(&b.recipe)) {
    const Eigen::Index p = r->slow.size();
    check(static_cast<int>(2 * p));
    Vector g1 = r->slow, g2 = r->fast;
    for (int i : fastIndices) (i < p ? g1(i) : g2(i - p)) /= eps;
    out = biexp_from_diagonals(g1, g2, r->B);
  } else if (const auto* r = std::get_if<CompanionRecipe>(&b.recipe)) {
    check(static_cast<int>(r->rates.size()));
    std::vector<Matrix> rates;
    for (std::size_t k = 0; k < r->rates.size(); ++k) {
      Vector v = r->rates[k];
      if (fastIndices.count(static_cast<int>(k))) v /= eps;
      rates.push_back(v.asDiagonal());
    }
    out = companion_realization(r->B, rates, r->l);
  } else {
    require_diagonal(b.Gamma, "Gamma");
    check(static_cast<int>(b.dim()));
    Matrix g = b.Gamma;
    for (int i : fastIndices) g(i, i) /= eps;
    out = make_block(g, b.Sigma, b.C, b.alpha, b.D);
  }
  out.alpha = b.alpha;
  out.D = b.D;
  return out;
}

struct MinimalityReport {
  bool controllable = true;
  bool observable = true;
};

inline MinimalityReport check_minimality(const OUBlock& b) {
  MinimalityReport r;
  const Eigen::Index d = b.dim();
  if (d == 0) return r;
  const Spectrum s = spectrum(b.Gamma);
  const CMatrix g = b.Gamma.cast<cplx>();
  for (const cplx& lam : s.eigenvalues) {
    CMatrix ctrl(d, d + b.Sigma.cols());
    ctrl << g - lam * CMatrix::Identity(d, d), b.Sigma.cast<cplx>();
    if (numerical_rank(ctrl) < d) r.controllable = false;
    CMatrix obs(d, d + b.C.rows());
    obs << g.adjoint() - std::conj(lam) * CMatrix::Identity(d, d), b.C.transpose().cast<cplx>();
    if (numerical_rank(obs) < d) r.observable = false;
  }
  return r;
}

struct PresetParams {
  double Gamma1 = 1.0, Gamma2 = 2.0, Gamma3 = 3.0, beta = 1.0;
};

// M1, M2, hyper (vanishing effective damping) and exp (plain exponential kernel, K^(1) > 0).
inline std::pair<KernelRealization, NoiseRealization> preset(const std::string& name, const PresetParams& p) {
  if (!(p.beta > 0.0)) fail(ErrorKind::InvalidArgument, "beta must be positive");
  if (!(p.Gamma1 > 0.0)) fail(ErrorKind::OrderingViolation, "Gamma1 must be positive");
  OUBlock blk;
  int slot = 1;
  if (name == "M1") {
    if (!(p.Gamma2 > p.Gamma1)) fail(ErrorKind::OrderingViolation, "need Gamma1 < Gamma2");
    blk = biexp_from_diagonals(Vector::Constant(1, p.Gamma1), Vector::Constant(1, p.Gamma2),
                               Matrix::Constant(1, 1, p.beta));
  } else if (name == "M2") {
    blk = make_block(Matrix::Constant(1, 1, p.Gamma1), Matrix::Constant(1, 1, -p.Gamma1),
                     Matrix::Constant(1, 1, p.beta), 1, Matrix::Constant(1, 1, p.beta));
  } else if (name == "hyper") {
    if (!(p.Gamma2 > p.Gamma1 && p.Gamma3 > p.Gamma2))
      fail(ErrorKind::OrderingViolation, "need Gamma1 < Gamma2 < Gamma3");
    std::vector<Matrix> rates = {Matrix::Constant(1, 1, p.Gamma1), Matrix::Constant(1, 1, p.Gamma2),
                                 Matrix::Constant(1, 1, p.Gamma3)};
    blk = companion_realization(Matrix::Constant(1, 1, p.beta * p.Gamma3), rates, 2);
    // kernel: shape L^-1[z^2/Q(z)] scaled to the noise variance at t = 0
    OUBlock kb;
    kb.Gamma = blk.Gamma;
    kb.C = blk.C;
    kb.Sigma = Matrix(3, 0);
    kb.D = Matrix(1, 0);
    kb.M = Matrix::Zero(3, 3);
    kb.M(2, 2) = (blk.C * blk.M * blk.C.transpose())(0, 0);
    kb.kernelOnly = true;
    kb.alpha = 1;
    validate_block(kb);
    KernelRealization k{{OUBlock::empty(1), kb}};
    NoiseRealization n{{OUBlock::empty(1), blk}};
    return {k, n};
  } else if (name == "exp") {
    blk = make_block(Matrix::Constant(1, 1, p.Gamma1), Matrix::Constant(1, 1, p.beta * p.Gamma1),
                     Matrix::Identity(1, 1));
    slot = 0;
  } else {
    fail(ErrorKind::InvalidArgument, "unknown preset '" + name + "'");
  }
  blk.alpha = 1;
  KernelRealization k{{OUBlock::empty(1), OUBlock::empty(1)}};
  NoiseRealization n{{OUBlock::empty(1), OUBlock::empty(1)}};
  k.blocks[slot] = blk;
  n.blocks[slot] = blk;
  return {k, n};
}

inline std::vector<std::string> preset_names() { return {"M1", "M2", "hyper", "exp"}; }

}  // namespace gle
