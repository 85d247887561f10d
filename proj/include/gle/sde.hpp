#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gle/matops.hpp"

namespace gle {

struct Slice {
  std::string name;
  Eigen::Index offset = 0, size = 0;
};

struct StateLayout {
  std::vector<Slice> slices;

  Eigen::Index dim() const {
    Eigen::Index n = 0;
    for (const auto& s : slices) n = std::max(n, s.offset + s.size);
    return n;
  }
  void add(const std::string& name, Eigen::Index size) { slices.push_back({name, dim(), size}); }
  const Slice* find(const std::string& name) const {
    for (const auto& s : slices)
      if (s.name == name) return &s;
    return nullptr;
  }
  const Slice& at(const std::string& name) const {
    if (const Slice* s = find(name)) return *s;
    fail(ErrorKind::InvalidArgument, "no slice named '" + name + "'");
  }
  // column labels name[i]
  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& s : slices)
      for (Eigen::Index i = 0; i < s.size; ++i) out.push_back(s.name + "[" + std::to_string(i) + "]");
    return out;
  }
};

// drift A z + b, diffusion G, all constant
struct LinearForm {
  Matrix A;
  Vector b;
  Matrix G;
};

// Autonomous OU slice d z = -Gamma z dt + Sigma dW_{channels}, advanced exactly under splitting.
struct OuSlice {
  Eigen::Index offset = 0;
  Matrix Gamma, Sigma;
  Eigen::Index channelOffset = 0;
};

// Gaussian initial component: z[offset..] ~ N(0, cov)
struct GaussianInit {
  Eigen::Index offset = 0;
  Matrix cov;
};

// Generic Ito SDE dz = f(t,z) dt + G(t,z) dW on a named layout.
struct SdeSystem {
  StateLayout layout;
  Eigen::Index channels = 0;
  std::function<void(double, const Vector&, Vector&)> drift;      // out has layout.dim() entries
  std::function<void(double, const Vector&, Matrix&)> diffusion;  // out is dim x channels
  std::optional<LinearForm> linear;
  std::vector<OuSlice> ouSlices;
  Vector initialMean;
  std::vector<GaussianInit> initialGaussian;
  std::vector<std::string> stiffSlices;  // slices carrying 1/m or 1/eps factors
  std::string positionSlice = "x";
  // maps a partner system's initial state to this system's (used when coupling a limit to its pre-limit)
  std::function<Vector(const Vector&)> initialFromPartner;

  Eigen::Index dim() const { return layout.dim(); }

  Vector drift_at(double t, const Vector& z) const {
    Vector out(dim());
    drift(t, z, out);
    return out;
  }
  Matrix diffusion_at(double t, const Vector& z) const {
    Matrix out(dim(), channels);
    diffusion(t, z, out);
    return out;
  }
};

// Attach closures backed by a constant linear form.
inline void install_linear(SdeSystem& s, LinearForm lf) {
  auto shared = std::make_shared<const LinearForm>(std::move(lf));
  s.drift = [shared](double, const Vector& z, Vector& out) { out.noalias() = shared->A * z + shared->b; };
  s.diffusion = [shared](double, const Vector&, Matrix& out) { out = shared->G; };
  s.linear = *shared;
}

// Replace closures by an exact linear form when the caller knows drift is affine and diffusion constant.
inline void linearize_affine(SdeSystem& s, double t = 0.0) {
  const Eigen::Index n = s.dim();
  const Vector zero = Vector::Zero(n);
  LinearForm lf{Matrix(n, n), s.drift_at(t, zero), s.diffusion_at(t, zero)};
  for (Eigen::Index j = 0; j < n; ++j) lf.A.col(j) = s.drift_at(t, Vector::Unit(n, j)) - lf.b;
  install_linear(s, lf);
}

// Single-slice constant-coefficient system, mostly for tests and small examples.
inline SdeSystem linear_system(const LinearForm& lf, const Vector& mean, const std::string& name = "x") {
  if (lf.A.rows() != lf.A.cols() || lf.b.size() != lf.A.rows() || lf.G.rows() != lf.A.rows() ||
      mean.size() != lf.A.rows())
    fail(ErrorKind::DimensionMismatch, "linear system blocks disagree in size");
  SdeSystem s;
  s.layout.add(name, lf.A.rows());
  s.positionSlice = name;
  s.channels = lf.G.cols();
  s.initialMean = mean;
  install_linear(s, lf);
  return s;
}

}  // namespace gle
