#pragma once
// Synthetic cohorts from the two-component generating process.
//
// Clones are spread evenly over `n_persons` simulated persons. Every person
// gets one exponential total-read offset per follow-up. Each clone is dynamic
// with probability pi; a static clone draws one proportion lambda from
// Gamma(alpha, beta), a dynamic clone draws a fresh lambda per follow-up.
// Counts are Poisson(lambda * offset). Non-baseline follow-ups are dropped
// independently per clone with probability missing_rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vcmix/error.hpp"
#include "vcmix/model_core.hpp"

namespace vcmix {

struct SimConfig {
  std::size_t n_clones = 60000;
  double alpha = 1.0;
  double beta = 100.0;
  double pi = 0.2;
  int n_followups = 3;
  double offset_mean = 5e4;
  double missing_rate = 0.0;
  std::size_t n_persons = 100;
  std::uint64_t seed = 1;
  std::string person_prefix = "P";
};

inline void validate(const SimConfig &c) {
  if (c.n_clones == 0)
    throw InvalidParameter("n_clones must be positive");
  if (!(c.alpha > 0.0) || !(c.beta > 0.0))
    throw InvalidParameter("alpha and beta must be positive");
  if (!(c.pi >= 0.0 && c.pi <= 1.0))
    throw InvalidParameter("pi must lie in [0, 1]");
  if (c.n_followups < 2)
    throw InvalidParameter("n_followups must be at least 2");
  if (!(c.offset_mean > 0.0))
    throw InvalidParameter("offset_mean must be positive");
  if (!(c.missing_rate >= 0.0 && c.missing_rate < 1.0))
    throw InvalidParameter("missing_rate must lie in [0, 1)");
  if (c.n_persons == 0 || c.n_persons > c.n_clones)
    throw InvalidParameter("n_persons must be in [1, n_clones]");
}

struct SimTruth {
  struct Key {
    std::string person_id;
    std::string clone_id;
  };
  std::vector<Key> keys;
  std::vector<bool> labels; // true = dynamic
  // one entry for static clones, one per observed time for dynamic clones
  std::vector<std::vector<double>> lambdas;
};

struct SimOutput {
  std::vector<CloneSeries> clones;
  SimTruth truth;
};

namespace detail {

inline std::string padded(const std::string &prefix, std::size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, v);
  return prefix + buf;
}

inline int digits(std::size_t n) {
  int d = 1;
  while (n >= 10) {
    n /= 10;
    ++d;
  }
  return d;
}

} // namespace detail

inline SimOutput simulate(const SimConfig &cfg) {
  validate(cfg);
  SimOutput out;
  out.clones.reserve(cfg.n_clones);
  out.truth.keys.reserve(cfg.n_clones);
  out.truth.labels.reserve(cfg.n_clones);
  out.truth.lambdas.reserve(cfg.n_clones);

  const int pwidth = detail::digits(cfg.n_persons - 1);
  const int cwidth = detail::digits(cfg.n_clones - 1);
  const auto t_count = static_cast<std::size_t>(cfg.n_followups);

  // Each person block has its own stream derived from (seed, block).
  for (std::size_t p = 0; p < cfg.n_persons; ++p) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                      static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(p), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::exponential_distribution<double> offset_dist(1.0 / cfg.offset_mean);
    std::gamma_distribution<double> lambda_dist(cfg.alpha, 1.0 / cfg.beta);
    std::bernoulli_distribution dynamic_dist(cfg.pi);
    std::bernoulli_distribution drop_dist(cfg.missing_rate);

    std::vector<Count> offsets(t_count);
    for (auto &o : offsets)
      o = static_cast<Count>(std::max(1.0, std::ceil(offset_dist(rng))));

    const std::string person = detail::padded(cfg.person_prefix, p, pwidth);
    const std::size_t first = cfg.n_clones * p / cfg.n_persons;
    const std::size_t last = cfg.n_clones * (p + 1) / cfg.n_persons;
    for (std::size_t i = first; i < last; ++i) {
      const bool dynamic = dynamic_dist(rng);
      std::vector<double> lambda(dynamic ? t_count : 1);
      for (auto &l : lambda)
        l = lambda_dist(rng);

      CloneSeries s;
      s.person_id = person;
      s.clone_id = detail::padded("C", i, cwidth);
      std::vector<double> observed_lambda;
      for (std::size_t k = 0; k < t_count; ++k) {
        const double l = lambda[dynamic ? k : 0];
        const double mean = l * static_cast<double>(offsets[k]);
        Count c = mean > 0.0 ? std::poisson_distribution<Count>(mean)(rng) : 0;
        // proportions above one have negligible prior mass; keep C <= O
        c = std::min(c, offsets[k]);
        // drawn for every cell so that cohorts differing only in missing_rate
        // share counts; baseline is always observed
        const bool dropped = drop_dist(rng) && k > 0;
        if (dropped)
          continue;
        s.counts.push_back(c);
        s.offsets.push_back(offsets[k]);
        s.times.push_back(static_cast<std::uint32_t>(k));
        if (dynamic)
          observed_lambda.push_back(l);
      }
      out.truth.keys.push_back({s.person_id, s.clone_id});
      out.truth.labels.push_back(dynamic);
      out.truth.lambdas.push_back(dynamic ? std::move(observed_lambda)
                                          : std::vector<double>{lambda[0]});
      out.clones.push_back(std::move(s));
    }
  }
  return out;
}

} // namespace vcmix
