#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <queue>
#include <vector>

#include "gle/matops.hpp"

namespace gle {

namespace detail {

// Gauss-Kronrod 7/15 nodes on [-1,1]
inline constexpr std::array<double, 8> kGKx = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kGKwk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kGwg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct GKPanel {
  double a, b;
  Matrix value;
  double err;
  bool operator<(const GKPanel& o) const { return err < o.err; }
};

template <class F>
GKPanel gk15(const F& f, double a, double b) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  Matrix fc = f(c);
  Matrix k = fc * kGKwk[7];
  Matrix g = fc * kGwg[3];
  for (int i = 0; i < 7; ++i) {
    const Matrix f1 = f(c - h * kGKx[i]);
    const Matrix f2 = f(c + h * kGKx[i]);
    k += kGKwk[i] * (f1 + f2);
    if (i % 2 == 1) g += kGwg[i / 2] * (f1 + f2);
  }
  k *= h;
  g *= h;
  return GKPanel{a, b, k, (k - g).norm()};
}

}  // namespace detail

// Adaptive Gauss-Kronrod for matrix-valued integrands on [a,b].
template <class F>
Matrix integrate(const F& f, double a, double b, double abs_tol = 1e-12, double rel_tol = 1e-10,
                 int max_panels = 2000) {
  if (a == b) {
    const Matrix z = f(a);
    return Matrix::Zero(z.rows(), z.cols());
  }
  std::priority_queue<detail::GKPanel> heap;
  heap.push(detail::gk15(f, a, b));
  Matrix total = heap.top().value;
  double err = heap.top().err;
  int panels = 1;
  while (err > std::max(abs_tol, rel_tol * total.norm()) && panels < max_panels) {
    detail::GKPanel p = heap.top();
    heap.pop();
    const double m = 0.5 * (p.a + p.b);
    detail::GKPanel l = detail::gk15(f, p.a, m), r = detail::gk15(f, m, p.b);
    total += l.value + r.value - p.value;
    err += l.err + r.err - p.err;
    heap.push(std::move(l));
    heap.push(std::move(r));
    ++panels;
  }
  return total;
}

inline double integrate_scalar(const std::function<double(double)>& f, double a, double b,
                               double abs_tol = 1e-12, double rel_tol = 1e-10) {
  auto g = [&](double t) { return Matrix::Constant(1, 1, f(t)); };
  return integrate(g, a, b, abs_tol, rel_tol)(0, 0);
}

}  // namespace gle
