#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include <boost/math/special_functions/digamma.hpp>

namespace vcmix::numeric {

// Reentrant log-gamma for positive arguments. glibc's lgamma writes the
// global signgam, so prefer lgamma_r where it exists.
inline double log_gamma(double x) {
#if defined(__GLIBC__)
  int sign = 0;
  return ::lgamma_r(x, &sign);
#else
  return std::lgamma(x);
#endif
}

inline double digamma(double x) { return boost::math::digamma(x); }

// log(exp(a) + exp(b)) without overflow.
inline double log_sum_exp(double a, double b) {
  if (a == -INFINITY)
    return b;
  if (b == -INFINITY)
    return a;
  const double hi = a > b ? a : b;
  const double lo = a > b ? b : a;
  return hi + std::log1p(std::exp(lo - hi));
}

// 1 / (1 + exp(-x)), stable in both tails.
inline double logistic(double x) {
  if (x >= 0.0)
    return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Neumaier compensated accumulator.
class KahanSum {
public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::fabs(sum_) >= std::fabs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  KahanSum &operator+=(double x) {
    add(x);
    return *this;
  }
  double value() const { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) {
  KahanSum s;
  for (double x : xs)
    s.add(x);
  return s.value();
}

} // namespace vcmix::numeric
