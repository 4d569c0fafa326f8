#pragma once
// Small dense BFGS minimizer with a backtracking line search.
//
// The objective returns its value and gradient together. The line search
// accepts a step when the Armijo sufficient-decrease condition holds, or,
// once function differences are lost in rounding, when the approximate Wolfe
// conditions of Hager and Zhang hold. The second rule lets the gradient be
// driven well below the square root of machine precision.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>

namespace vcmix::opt {

template <std::size_t N> using Vec = std::array<double, N>;
template <std::size_t N> using Mat = std::array<std::array<double, N>, N>;

template <std::size_t N> struct ValueGrad {
  double value;
  Vec<N> grad;
};

struct BfgsOptions {
  double grad_tol = 1e-8;
  int max_iters = 200;
  double armijo = 1e-4;
  double wolfe = 0.9;
  // relative slack on f for the approximate-Wolfe acceptance
  double f_slack = 1e-12;
  int max_backtracks = 60;
  // cap on the infinity norm of a single trial step
  double max_step = 5.0;
};

enum class BfgsStatus { Converged, MaxIterations, LineSearchFailed, NonFinite };

template <std::size_t N> struct BfgsResult {
  Vec<N> x;
  double value;
  Vec<N> grad;
  int iterations;
  BfgsStatus status;
};

namespace detail {

template <std::size_t N> double dot(const Vec<N> &a, const Vec<N> &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < N; ++i)
    s += a[i] * b[i];
  return s;
}

template <std::size_t N> double inf_norm(const Vec<N> &a) {
  double m = 0.0;
  for (double v : a)
    m = std::fmax(m, std::fabs(v));
  return m;
}

template <std::size_t N> Mat<N> identity(double scale = 1.0) {
  Mat<N> m{};
  for (std::size_t i = 0; i < N; ++i)
    m[i][i] = scale;
  return m;
}

template <std::size_t N> Vec<N> mul(const Mat<N> &m, const Vec<N> &v) {
  Vec<N> r{};
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j)
      r[i] += m[i][j] * v[j];
  return r;
}

template <std::size_t N> bool finite(const Vec<N> &v) {
  for (double x : v)
    if (!std::isfinite(x))
      return false;
  return true;
}

// Inverse-Hessian update H+ = (I - r s y^T) H (I - r y s^T) + r s s^T.
template <std::size_t N>
void bfgs_update(Mat<N> &h, const Vec<N> &s, const Vec<N> &y, double sy) {
  const double r = 1.0 / sy;
  const Vec<N> hy = mul(h, y);
  const double yhy = dot(y, hy);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j)
      h[i][j] += (1.0 + r * yhy) * r * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
}

} // namespace detail

/// Minimizes f starting from x0. f(x) must return ValueGrad<N>.
template <std::size_t N, typename F>
BfgsResult<N> bfgs_minimize(F &&f, Vec<N> x0, const BfgsOptions &opts = {}) {
  using detail::dot;
  Vec<N> x = x0;
  ValueGrad<N> cur = f(x);
  if (!std::isfinite(cur.value) || !detail::finite(cur.grad))
    return {x, cur.value, cur.grad, 0, BfgsStatus::NonFinite};

  Mat<N> h = detail::identity<N>();
  bool scaled = false;
  int it = 0;
  for (; it < opts.max_iters; ++it) {
    if (detail::inf_norm(cur.grad) <= opts.grad_tol)
      return {x, cur.value, cur.grad, it, BfgsStatus::Converged};

    Vec<N> d = detail::mul(h, cur.grad);
    for (double &v : d)
      v = -v;
    double slope = dot(cur.grad, d);
    if (!(slope < 0.0)) {
      // lost positive definiteness: restart from steepest descent
      h = detail::identity<N>();
      scaled = false;
      for (std::size_t i = 0; i < N; ++i)
        d[i] = -cur.grad[i];
      slope = dot(cur.grad, d);
    }
    const double dn = detail::inf_norm(d);
    double t = dn > opts.max_step ? opts.max_step / dn : 1.0;

    bool accepted = false;
    Vec<N> xn{};
    ValueGrad<N> next{};
    const double slack = opts.f_slack * std::fabs(cur.value);
    for (int bt = 0; bt < opts.max_backtracks; ++bt, t *= 0.5) {
      for (std::size_t i = 0; i < N; ++i)
        xn[i] = x[i] + t * d[i];
      next = f(xn);
      if (!std::isfinite(next.value) || !detail::finite(next.grad))
        continue;
      const double new_slope = dot(next.grad, d);
      const bool armijo = next.value <= cur.value + opts.armijo * t * slope;
      const bool approx_wolfe = next.value <= cur.value + slack &&
                                new_slope >= opts.wolfe * slope &&
                                new_slope <= (2.0 * opts.armijo - 1.0) * slope;
      if (armijo || approx_wolfe) {
        accepted = true;
        break;
      }
    }
    if (!accepted)
      return {x, cur.value, cur.grad, it, BfgsStatus::LineSearchFailed};

    Vec<N> s{}, y{};
    for (std::size_t i = 0; i < N; ++i) {
      s[i] = xn[i] - x[i];
      y[i] = next.grad[i] - cur.grad[i];
    }
    const double sy = dot(s, y);
    if (sy > std::numeric_limits<double>::epsilon() * std::sqrt(dot(s, s) * dot(y, y))) {
      if (!scaled) {
        h = detail::identity<N>(sy / dot(y, y));
        scaled = true;
      }
      detail::bfgs_update(h, s, y, sy);
    }
    x = xn;
    cur = next;
  }
  const auto status = detail::inf_norm(cur.grad) <= opts.grad_tol
                          ? BfgsStatus::Converged
                          : BfgsStatus::MaxIterations;
  return {x, cur.value, cur.grad, it, status};
}

} // namespace vcmix::opt
