#pragma once
// Empirical-Bayes fit of (alpha, beta, pi) by EM.
//
// E-step: per-clone posterior probability of the dynamic component.
// M-step: pi in closed form (mean responsibility), then (alpha, beta) by BFGS
// on (log alpha, log beta) using analytic digamma gradients of the expected
// complete-data log-likelihood Q. The M-step never lowers Q, so the
// observed-data likelihood is non-decreasing across iterations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vcmix/bfgs.hpp"
#include "vcmix/error.hpp"
#include "vcmix/model_core.hpp"
#include "vcmix/numeric.hpp"
#include "vcmix/parallel.hpp"

namespace vcmix {

struct FitConfig {
  double epsilon = 1e-8;
  int max_em_iters = 500;
  double inner_opt_tol = 1e-8;
  int inner_opt_max_iters = 200;
  std::uint64_t seed = 0;
  // 0 = hardware concurrency. Results do not depend on this value.
  unsigned threads = 0;
};

inline void validate(const FitConfig &cfg) {
  if (!(cfg.epsilon > 0.0))
    throw InvalidParameter("epsilon must be positive");
  if (!(cfg.inner_opt_tol > 0.0))
    throw InvalidParameter("inner_opt_tol must be positive");
  if (cfg.max_em_iters < 1 || cfg.inner_opt_max_iters < 1)
    throw InvalidParameter("iteration caps must be at least 1");
}

inline constexpr double kPiFloor = 1e-6;

struct CloneResponsibility {
  std::string person_id;
  std::string clone_id;
  std::size_t n_times = 0;
  double prob_dynamic = 0.0;
};

struct FitResult {
  Hyperparams hyperparams;
  // canonical (person_id, clone_id) order
  std::vector<CloneResponsibility> responsibilities;
  std::vector<double> loglik_trace;
  std::vector<double> msq_change_trace;
  int iterations = 0;
  bool converged = false;
  // M-steps whose optimizer stopped short of inner_opt_tol
  int inner_opt_failures = 0;
};

inline bool canonical_less(const CloneSeries &a, const CloneSeries &b) {
  if (a.person_id != b.person_id)
    return a.person_id < b.person_id;
  return a.clone_id < b.clone_id;
}

/// Copies and sorts clones into canonical order; rejects duplicate keys.
inline std::vector<CloneSeries> canonical_order(std::span<const CloneSeries> clones) {
  std::vector<CloneSeries> out(clones.begin(), clones.end());
  std::stable_sort(out.begin(), out.end(), canonical_less);
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i - 1].person_id == out[i].person_id &&
        out[i - 1].clone_id == out[i].clone_id)
      throw InvalidInput("duplicate clone key (" + out[i].person_id + ", " +
                         out[i].clone_id + ")");
  return out;
}

/// Mean squared change between two responsibility vectors.
inline double convergence_stat(std::span<const double> prev,
                               std::span<const double> next) {
  if (prev.size() != next.size())
    throw DimensionError("responsibility vectors differ in length");
  if (prev.empty())
    throw DimensionError("responsibility vectors are empty");
  numeric::KahanSum acc;
  for (std::size_t i = 0; i < prev.size(); ++i) {
    const double d = prev[i] - next[i];
    acc += d * d;
  }
  return acc.value() / static_cast<double>(prev.size());
}

/// Sum over clones of log(pi p_dyn + (1 - pi) p_static), in input order.
inline double observed_loglik(std::span<const CloneSeries> clones,
                              const Hyperparams &hp, unsigned threads = 1) {
  if (clones.empty())
    throw InvalidInput("observed_loglik: no clones");
  validate(hp);
  const double log_pi = std::log(hp.pi);
  const double log_1mpi = std::log1p(-hp.pi);
  const auto parts = detail::chunked_map<numeric::KahanSum>(
      clones.size(), threads, [&](std::size_t b, std::size_t e) {
        numeric::KahanSum acc;
        for (std::size_t i = b; i < e; ++i)
          acc += numeric::log_sum_exp(log_pi + dynamic_log_pmf(clones[i], hp),
                                      log_1mpi + static_log_pmf(clones[i], hp));
        return acc;
      });
  numeric::KahanSum total;
  for (const auto &p : parts)
    total += p.value();
  return total.value();
}

namespace detail {

struct EStepOut {
  std::vector<double> resp;
  double loglik;
};

// One pass computing responsibilities and the observed log-likelihood.
// Responsibilities come out in the order of `clones`.
inline EStepOut e_pass(std::span<const CloneSeries> clones, const Hyperparams &hp,
                       unsigned threads) {
  EStepOut out;
  out.resp.resize(clones.size());
  const double log_pi = std::log(hp.pi);
  const double log_1mpi = std::log1p(-hp.pi);
  const auto parts = chunked_map<numeric::KahanSum>(
      clones.size(), threads, [&](std::size_t b, std::size_t e) {
        numeric::KahanSum acc;
        for (std::size_t i = b; i < e; ++i) {
          const double ls = static_log_pmf(clones[i], hp);
          const double ld = dynamic_log_pmf(clones[i], hp);
          out.resp[i] = responsibility_from_log_pmfs(ls, ld, hp.pi).prob_dynamic;
          acc += numeric::log_sum_exp(log_pi + ld, log_1mpi + ls);
        }
        return acc;
      });
  numeric::KahanSum total;
  for (const auto &p : parts)
    total += p.value();
  out.loglik = total.value();
  return out;
}

} // namespace detail

/// Responsibilities for every clone, returned in canonical order.
inline std::vector<CloneResponsibility> e_step(std::span<const CloneSeries> clones,
                                               const Hyperparams &hp,
                                               unsigned threads = 1) {
  validate(hp);
  const auto sorted = canonical_order(clones);
  const auto pass = detail::e_pass(sorted, hp, threads);
  std::vector<CloneResponsibility> out(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    out[i] = {sorted[i].person_id, sorted[i].clone_id, sorted[i].size(),
              pass.resp[i]};
  return out;
}

/// Flattened per-clone sufficient data for repeated Q evaluation.
class PreparedCohort {
public:
  explicit PreparedCohort(std::span<const CloneSeries> clones) {
    clones_.reserve(clones.size());
    for (const auto &s : clones) {
      validate(s);
      Entry e;
      e.begin = static_cast<std::uint32_t>(counts_.size());
      numeric::KahanSum constant;
      for (std::size_t k = 0; k < s.size(); ++k) {
        const double c = static_cast<double>(s.counts[k]);
        const double o = static_cast<double>(s.offsets[k]);
        counts_.push_back(c);
        offsets_.push_back(o);
        e.sum_c += c;
        e.sum_o += o;
        constant += -numeric::log_gamma(c + 1.0);
        if (s.counts[k] != 0)
          constant += c * std::log(o);
      }
      e.end = static_cast<std::uint32_t>(counts_.size());
      e.constant = constant.value();
      clones_.push_back(e);
    }
  }

  std::size_t size() const { return clones_.size(); }

  struct QTerms {
    double value;   // alpha/beta-dependent part of Q (with data constants)
    double d_alpha; // dQ/dalpha
    double d_beta;  // dQ/dbeta
  };

  // Sum over clones of r ld + (1 - r) ls and its gradient. The pi part of Q
  // is handled by the caller.
  QTerms q_terms(std::span<const double> r, double alpha, double beta,
                 unsigned threads, bool with_grad = true) const {
    const double lg_a = numeric::log_gamma(alpha);
    const double psi_a = with_grad ? numeric::digamma(alpha) : 0.0;
    const double log_b = std::log(beta);
    struct Part {
      numeric::KahanSum v, da, db;
    };
    const auto parts = detail::chunked_map<Part>(
        clones_.size(), threads, [&](std::size_t b, std::size_t e) {
          Part p;
          for (std::size_t i = b; i < e; ++i) {
            const Entry &c = clones_[i];
            const double ri = r[i];
            const double t = static_cast<double>(c.end - c.begin);
            // static: lg(S+a) - lg(a) + a log b - (S+a) log(b+sumO) + const
            const double log_bo = std::log(beta + c.sum_o);
            const double ls = numeric::log_gamma(c.sum_c + alpha) - lg_a +
                              alpha * log_b - (c.sum_c + alpha) * log_bo;
            double ld = -t * lg_a + t * alpha * log_b;
            double dd_a = 0.0, dd_b = 0.0, ds_a = 0.0, ds_b = 0.0;
            for (std::uint32_t k = c.begin; k < c.end; ++k) {
              const double ck = counts_[k];
              const double bo = beta + offsets_[k];
              const double lbo = std::log(bo);
              ld += numeric::log_gamma(ck + alpha) - (ck + alpha) * lbo;
              if (with_grad) {
                dd_a += numeric::digamma(ck + alpha) - psi_a + log_b - lbo;
                dd_b += alpha / beta - (ck + alpha) / bo;
              }
            }
            if (with_grad) {
              ds_a = numeric::digamma(c.sum_c + alpha) - psi_a + log_b - log_bo;
              ds_b = alpha / beta - (c.sum_c + alpha) / (beta + c.sum_o);
            }
            p.v += ri * ld + (1.0 - ri) * ls + c.constant;
            if (with_grad) {
              p.da += ri * dd_a + (1.0 - ri) * ds_a;
              p.db += ri * dd_b + (1.0 - ri) * ds_b;
            }
          }
          return p;
        });
    numeric::KahanSum v, da, db;
    for (const auto &p : parts) {
      v += p.v.value();
      da += p.da.value();
      db += p.db.value();
    }
    return {v.value(), da.value(), db.value()};
  }

  // Per-clone pooled proportions sum(C) / sum(O).
  std::vector<double> pooled_proportions() const {
    std::vector<double> p;
    p.reserve(clones_.size());
    for (const auto &c : clones_)
      p.push_back(c.sum_c / c.sum_o);
    return p;
  }

private:
  struct Entry {
    std::uint32_t begin = 0, end = 0;
    double sum_c = 0.0, sum_o = 0.0;
    double constant = 0.0; // sum_k [C log O - lgamma(C + 1)]
  };
  std::vector<Entry> clones_;
  std::vector<double> counts_;
  std::vector<double> offsets_;
};

inline double pi_log_terms(std::span<const double> r, double pi) {
  numeric::KahanSum sr;
  for (double x : r)
    sr += x;
  const double n = static_cast<double>(r.size());
  return sr.value() * std::log(pi) + (n - sr.value()) * std::log1p(-pi);
}

/// Expected complete-data log-likelihood Q(alpha, beta, pi) under weights r.
inline double expected_complete_loglik(const PreparedCohort &data,
                                       std::span<const double> r,
                                       const Hyperparams &hp, unsigned threads = 1) {
  validate(hp);
  if (r.size() != data.size())
    throw DimensionError("responsibilities not aligned with clones");
  return data.q_terms(r, hp.alpha, hp.beta, threads, false).value +
         pi_log_terms(r, hp.pi);
}

struct QGradient {
  double d_alpha;
  double d_beta;
};

inline QGradient q_gradient(const PreparedCohort &data, std::span<const double> r,
                            const Hyperparams &hp, unsigned threads = 1) {
  validate(hp);
  if (r.size() != data.size())
    throw DimensionError("responsibilities not aligned with clones");
  const auto t = data.q_terms(r, hp.alpha, hp.beta, threads, true);
  return {t.d_alpha, t.d_beta};
}

struct MStepReport {
  Hyperparams hyperparams;
  opt::BfgsStatus status = opt::BfgsStatus::Converged;
  int optimizer_iters = 0;
  // infinity norm of the gradient of Q/n in (log alpha, log beta)
  double grad_norm = 0.0;
  bool kept_incumbent = false;
};

inline MStepReport m_step_report(const PreparedCohort &data,
                                 std::span<const double> r,
                                 const Hyperparams &current, const FitConfig &cfg) {
  validate_gamma(current);
  if (r.size() != data.size())
    throw DimensionError("responsibilities not aligned with clones");
  if (data.size() == 0)
    throw InvalidInput("m_step: no clones");

  numeric::KahanSum sr;
  for (double x : r)
    sr += x;
  const double n = static_cast<double>(r.size());
  const double pi = std::clamp(sr.value() / n, kPiFloor, 1.0 - kPiFloor);

  // Minimize -Q/n over u = (log alpha, log beta).
  auto objective = [&](const opt::Vec<2> &u) {
    const double a = std::exp(u[0]);
    const double b = std::exp(u[1]);
    opt::ValueGrad<2> out{};
    if (!std::isfinite(a) || !std::isfinite(b) || !(a > 0.0) || !(b > 0.0)) {
      out.value = INFINITY;
      return out;
    }
    const auto t = data.q_terms(r, a, b, cfg.threads, true);
    out.value = -t.value / n;
    out.grad = {-t.d_alpha * a / n, -t.d_beta * b / n};
    return out;
  };

  const opt::Vec<2> u0 = {std::log(current.alpha), std::log(current.beta)};
  const auto start = objective(u0);
  if (!std::isfinite(start.value))
    throw OptimizerError("Q is not finite at the incumbent parameters");

  opt::BfgsOptions opts;
  opts.grad_tol = cfg.inner_opt_tol;
  opts.max_iters = cfg.inner_opt_max_iters;
  const auto res = opt::bfgs_minimize<2>(objective, u0, opts);

  MStepReport rep;
  rep.status = res.status;
  rep.optimizer_iters = res.iterations;
  if (std::isfinite(res.value) && res.value <= start.value) {
    rep.hyperparams = {std::exp(res.x[0]), std::exp(res.x[1]), pi};
    rep.grad_norm = opt::detail::inf_norm(res.grad);
  } else {
    rep.hyperparams = {current.alpha, current.beta, pi};
    rep.grad_norm = opt::detail::inf_norm(start.grad);
    rep.kept_incumbent = true;
  }
  return rep;
}

inline Hyperparams m_step(const PreparedCohort &data, std::span<const double> r,
                          const Hyperparams &current, const FitConfig &cfg) {
  return m_step_report(data, r, current, cfg).hyperparams;
}

inline Hyperparams m_step(std::span<const CloneSeries> clones,
                          std::span<const double> r, const Hyperparams &current,
                          const FitConfig &cfg) {
  return m_step(PreparedCohort(clones), r, current, cfg);
}

/// Method-of-moments start from the pooled per-clone proportions.
inline Hyperparams moment_start(const PreparedCohort &data) {
  const auto p = data.pooled_proportions();
  numeric::KahanSum s;
  for (double x : p)
    s += x;
  const double m = s.value() / static_cast<double>(p.size());
  numeric::KahanSum ss;
  for (double x : p)
    ss += (x - m) * (x - m);
  const double v = ss.value() / static_cast<double>(p.size());
  double alpha = 1.0;
  double beta = m > 0.0 ? 1.0 / m : 1.0;
  if (m > 0.0 && v > 0.0) {
    beta = m / v;
    alpha = m * beta;
  }
  return {std::clamp(alpha, 1e-3, 1e3), std::clamp(beta, 1e-3, 1e3), 0.5};
}

/// Full EM fit. Deterministic given (clones, cfg.seed).
inline FitResult fit_em(std::span<const CloneSeries> clones, const FitConfig &cfg) {
  validate(cfg);
  if (clones.size() < 2)
    throw InvalidInput("fit_em needs at least 2 clones");
  const auto sorted = canonical_order(clones);
  const bool any_longitudinal = std::any_of(
      sorted.begin(), sorted.end(), [](const CloneSeries &s) { return s.size() >= 2; });
  if (!any_longitudinal)
    throw IdentifiabilityError(
        "every clone has a single time point; the mixing weight is unidentified");

  const PreparedCohort data(sorted);
  const std::size_t n = sorted.size();

  std::mt19937_64 rng(cfg.seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> r_prev(n);
  for (auto &x : r_prev)
    x = coin(rng) ? 1.0 : 0.0;

  FitResult result;
  auto track = [&](const MStepReport &rep) {
    if (rep.status != opt::BfgsStatus::Converged)
      ++result.inner_opt_failures;
    return rep.hyperparams;
  };

  Hyperparams hp = track(m_step_report(data, r_prev, moment_start(data), cfg));
  std::vector<double> r;
  for (int it = 1; it <= cfg.max_em_iters; ++it) {
    auto pass = detail::e_pass(sorted, hp, cfg.threads);
    r = std::move(pass.resp);
    const double stat = convergence_stat(r_prev, r);
    result.loglik_trace.push_back(pass.loglik);
    result.msq_change_trace.push_back(stat);
    result.iterations = it;
    if (stat < cfg.epsilon) {
      result.converged = true;
      break;
    }
    if (it == cfg.max_em_iters)
      break;
    hp = track(m_step_report(data, r, hp, cfg));
    r_prev = r;
  }

  result.hyperparams = hp;
  result.responsibilities.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    result.responsibilities[i] = {sorted[i].person_id, sorted[i].clone_id,
                                  sorted[i].size(), r[i]};
  return result;
}

} // namespace vcmix
