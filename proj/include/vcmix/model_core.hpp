#pragma once
// Static / dynamic marginal densities of the Gamma-Poisson clone model.
//
// A clone is observed at T time points with template counts C_k and
// person-time totals O_k. Under the static component one proportion
// lambda ~ Gamma(alpha, beta) drives every time point, C_k ~ Pois(lambda O_k),
// and integrating lambda out gives a negative multinomial. Under the dynamic
// component lambda is redrawn at every time point, giving a product of
// negative binomials. Everything here is evaluated in natural-log space.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vcmix/error.hpp"
#include "vcmix/numeric.hpp"

namespace vcmix {

using Count = std::uint64_t;

struct CloneSeries {
  std::string clone_id;
  std::string person_id;
  std::vector<Count> counts;
  std::vector<Count> offsets;
  // Observed time indices, aligned with counts. Empty means 0, 1, ..., T-1.
  std::vector<std::uint32_t> times;

  std::size_t size() const { return counts.size(); }
  std::uint32_t time_at(std::size_t k) const {
    return times.empty() ? static_cast<std::uint32_t>(k) : times[k];
  }

  friend bool operator==(const CloneSeries &, const CloneSeries &) = default;
};

struct Hyperparams {
  double alpha = 1.0;
  double beta = 1.0;
  double pi = 0.5;
};

struct PosteriorGamma {
  double alpha_post;
  double beta_post;
};

struct Responsibility {
  double prob_dynamic;
};

inline void validate(const CloneSeries &s) {
  if (s.counts.size() != s.offsets.size())
    throw DimensionError("clone " + s.clone_id + ": " +
                         std::to_string(s.counts.size()) + " counts but " +
                         std::to_string(s.offsets.size()) + " offsets");
  if (!s.times.empty() && s.times.size() != s.counts.size())
    throw DimensionError("clone " + s.clone_id +
                         ": time index length differs from counts");
  if (s.counts.empty())
    throw DimensionError("clone " + s.clone_id + ": no observed time points");
  for (std::size_t k = 0; k < s.counts.size(); ++k) {
    if (s.offsets[k] == 0)
      throw InvalidInput("clone " + s.clone_id + ": zero offset");
    if (s.counts[k] > s.offsets[k])
      throw InvalidInput("clone " + s.clone_id + ": count " +
                         std::to_string(s.counts[k]) + " exceeds offset " +
                         std::to_string(s.offsets[k]));
  }
}

inline void validate_gamma(const Hyperparams &hp) {
  if (!(hp.alpha > 0.0) || !std::isfinite(hp.alpha))
    throw InvalidParameter("alpha must be positive and finite");
  if (!(hp.beta > 0.0) || !std::isfinite(hp.beta))
    throw InvalidParameter("beta must be positive and finite");
}

inline void validate(const Hyperparams &hp) {
  validate_gamma(hp);
  if (!(hp.pi > 0.0 && hp.pi < 1.0))
    throw InvalidParameter("pi must lie strictly between 0 and 1");
}

/// Log of the negative multinomial mass (static component). Ignores hp.pi.
inline double static_log_pmf(const CloneSeries &s, const Hyperparams &hp) {
  validate(s);
  validate_gamma(hp);
  const double a = hp.alpha;
  const double b = hp.beta;
  double sum_c = 0.0;
  double sum_o = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    sum_c += static_cast<double>(s.counts[k]);
    sum_o += static_cast<double>(s.offsets[k]);
  }
  const double denom = b + sum_o;
  const double lg_a = numeric::log_gamma(a);
  // Same term order as dynamic_log_pmf so that T = 1 agrees bit-for-bit.
  numeric::KahanSum acc;
  acc += numeric::log_gamma(sum_c + a) - lg_a;
  acc += -a * std::log1p(sum_o / b);
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double c = static_cast<double>(s.counts[k]);
    acc += -numeric::log_gamma(c + 1.0);
    // zero counts contribute nothing; never form 0 * log(.)
    if (s.counts[k] != 0)
      acc += c * std::log(static_cast<double>(s.offsets[k]) / denom);
  }
  return acc.value();
}

/// Log of the product of per-time negative binomial masses (dynamic component).
inline double dynamic_log_pmf(const CloneSeries &s, const Hyperparams &hp) {
  validate(s);
  validate_gamma(hp);
  const double a = hp.alpha;
  const double b = hp.beta;
  const double lg_a = numeric::log_gamma(a);
  numeric::KahanSum acc;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double c = static_cast<double>(s.counts[k]);
    const double o = static_cast<double>(s.offsets[k]);
    acc += numeric::log_gamma(c + a) - lg_a;
    acc += -a * std::log1p(o / b);
    acc += -numeric::log_gamma(c + 1.0);
    if (s.counts[k] != 0)
      acc += c * std::log(o / (b + o));
  }
  return acc.value();
}

// Positive values favour the static component.
inline double log_component_quotient(const CloneSeries &s,
                                     const Hyperparams &hp) {
  return static_log_pmf(s, hp) - dynamic_log_pmf(s, hp);
}

inline PosteriorGamma posterior_gamma_params(const CloneSeries &s,
                                             const Hyperparams &hp) {
  validate(s);
  validate_gamma(hp);
  double sum_c = 0.0;
  double sum_o = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    sum_c += static_cast<double>(s.counts[k]);
    sum_o += static_cast<double>(s.offsets[k]);
  }
  return {sum_c + hp.alpha, sum_o + hp.beta};
}

/// Posterior log-odds that the clone is dynamic.
inline double dynamic_log_odds(const CloneSeries &s, const Hyperparams &hp) {
  validate(hp);
  return (std::log(hp.pi) - std::log1p(-hp.pi)) -
         log_component_quotient(s, hp);
}

// Shared by the scalar and batch paths so both agree bit-for-bit.
inline Responsibility responsibility_from_log_pmfs(double log_static,
                                                   double log_dynamic,
                                                   double pi) {
  const double quotient = log_static - log_dynamic;
  // Uninformative data (e.g. a single time point): posterior equals prior.
  if (quotient == 0.0)
    return {pi};
  return {numeric::logistic((std::log(pi) - std::log1p(-pi)) - quotient)};
}

inline Responsibility responsibility(const CloneSeries &s,
                                     const Hyperparams &hp) {
  validate(hp);
  return responsibility_from_log_pmfs(static_log_pmf(s, hp),
                                      dynamic_log_pmf(s, hp), hp.pi);
}

} // namespace vcmix
