#pragma once
// Thresholded dynamic/static calls and the cohort-level summaries built on
// them: expansion/contraction direction, per-person counts, operating
// characteristics against simulation truth, and the two stratum association
// tests (Pearson chi-square on a dichotomized count, Poisson log-linear rate
// ratio).

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vcmix/em.hpp"
#include "vcmix/error.hpp"
#include "vcmix/model_core.hpp"
#include "vcmix/simulator.hpp"

namespace vcmix {

enum class Call { Static, Dynamic };
enum class Direction { NotApplicable, Expanding, Contracting };

inline const char *to_string(Call c) {
  return c == Call::Dynamic ? "dynamic" : "static";
}

inline const char *to_string(Direction d) {
  switch (d) {
  case Direction::Expanding:
    return "expanding";
  case Direction::Contracting:
    return "contracting";
  default:
    return "na";
  }
}

struct CloneCall {
  std::string person_id;
  std::string clone_id;
  double prob_dynamic = 0.0;
  Call call = Call::Static;
  Direction direction = Direction::NotApplicable;
};

using CloneKey = std::pair<std::string, std::string>;

/// Least-squares slope of C_k / O_k against the observed time index.
inline double proportion_slope(const CloneSeries &s) {
  const std::size_t t = s.size();
  if (t < 2)
    return 0.0;
  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t k = 0; k < t; ++k) {
    mean_x += s.time_at(k);
    mean_y += static_cast<double>(s.counts[k]) / static_cast<double>(s.offsets[k]);
  }
  mean_x /= static_cast<double>(t);
  mean_y /= static_cast<double>(t);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < t; ++k) {
    const double dx = s.time_at(k) - mean_x;
    const double y = static_cast<double>(s.counts[k]) / static_cast<double>(s.offsets[k]);
    sxy += dx * (y - mean_y);
    sxx += dx * dx;
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

inline std::vector<CloneCall> classify(std::span<const CloneResponsibility> resp,
                                       std::span<const CloneSeries> series,
                                       double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidParameter("threshold must lie strictly between 0 and 1");
  if (resp.size() != series.size())
    throw InvalidInput("classify: " + std::to_string(resp.size()) +
                       " responsibilities for " + std::to_string(series.size()) +
                       " clones");
  std::map<CloneKey, const CloneSeries *> by_key;
  for (const auto &s : series)
    by_key.emplace(CloneKey{s.person_id, s.clone_id}, &s);

  std::vector<CloneCall> calls;
  calls.reserve(resp.size());
  for (const auto &r : resp) {
    const auto it = by_key.find({r.person_id, r.clone_id});
    if (it == by_key.end())
      throw InvalidInput("classify: no series for clone (" + r.person_id + ", " +
                         r.clone_id + ")");
    CloneCall c{r.person_id, r.clone_id, r.prob_dynamic, Call::Static,
                Direction::NotApplicable};
    if (r.prob_dynamic > threshold) {
      c.call = Call::Dynamic;
      // a zero slope counts as expanding
      c.direction = proportion_slope(*it->second) < 0.0 ? Direction::Contracting
                                                        : Direction::Expanding;
    }
    calls.push_back(std::move(c));
  }
  return calls;
}

struct OperatingCharacteristics {
  double threshold = 0.0;
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  // empty when the denominator is zero
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

inline OperatingCharacteristics
operating_characteristics(std::span<const CloneCall> calls, const SimTruth &truth,
                          double threshold) {
  std::map<CloneKey, bool> label;
  for (std::size_t i = 0; i < truth.keys.size(); ++i)
    label.emplace(CloneKey{truth.keys[i].person_id, truth.keys[i].clone_id},
                  truth.labels[i]);
  OperatingCharacteristics oc;
  oc.threshold = threshold;
  for (const auto &c : calls) {
    const auto it = label.find({c.person_id, c.clone_id});
    if (it == label.end())
      throw InvalidInput("no truth label for clone (" + c.person_id + ", " +
                         c.clone_id + ")");
    const bool called = c.call == Call::Dynamic;
    if (it->second)
      ++(called ? oc.tp : oc.fn);
    else
      ++(called ? oc.fp : oc.tn);
  }
  if (oc.tp + oc.fn > 0)
    oc.sensitivity = static_cast<double>(oc.tp) / static_cast<double>(oc.tp + oc.fn);
  if (oc.tn + oc.fp > 0)
    oc.specificity = static_cast<double>(oc.tn) / static_cast<double>(oc.tn + oc.fp);
  return oc;
}

struct PersonDynamicCounts {
  std::uint64_t n_dynamic = 0;
  std::uint64_t n_expanding = 0;
  std::uint64_t n_contracting = 0;
  std::uint64_t n_clones = 0;
};

/// Every person with at least one call appears, including those with zero
/// dynamic clones.
inline std::map<std::string, PersonDynamicCounts>
dynamic_counts_per_person(std::span<const CloneCall> calls) {
  std::map<std::string, PersonDynamicCounts> out;
  for (const auto &c : calls) {
    auto &p = out[c.person_id];
    ++p.n_clones;
    if (c.call != Call::Dynamic)
      continue;
    ++p.n_dynamic;
    if (c.direction == Direction::Expanding)
      ++p.n_expanding;
    else
      ++p.n_contracting;
  }
  return out;
}

enum class CountKind { Dynamic, Expanding, Contracting };

inline std::map<std::string, std::uint64_t>
select_counts(const std::map<std::string, PersonDynamicCounts> &per_person,
              CountKind kind) {
  std::map<std::string, std::uint64_t> out;
  for (const auto &[person, c] : per_person)
    out[person] = kind == CountKind::Dynamic     ? c.n_dynamic
                  : kind == CountKind::Expanding ? c.n_expanding
                                                 : c.n_contracting;
  return out;
}

using Strata = std::map<std::string, int>; // person -> 0 / 1

struct ChiSquareResult {
  // rows: stratum 0 / 1; columns: count <= cutoff / count > cutoff
  std::uint64_t table[2][2] = {{0, 0}, {0, 0}};
  double statistic = 0.0;
  double pvalue = 1.0;
  bool degenerate = false;
};

/// Pearson chi-square on a 2x2 table, no continuity correction.
inline ChiSquareResult chi_square_2x2(std::uint64_t a, std::uint64_t b,
                                      std::uint64_t c, std::uint64_t d) {
  ChiSquareResult r;
  r.table[0][0] = a;
  r.table[0][1] = b;
  r.table[1][0] = c;
  r.table[1][1] = d;
  const double fa = static_cast<double>(a), fb = static_cast<double>(b),
               fc = static_cast<double>(c), fd = static_cast<double>(d);
  const double r0 = fa + fb, r1 = fc + fd, c0 = fa + fc, c1 = fb + fd;
  const double n = r0 + r1;
  if (r0 == 0.0 || r1 == 0.0 || c0 == 0.0 || c1 == 0.0) {
    r.degenerate = true;
    return r;
  }
  const double diff = fa * fd - fb * fc;
  r.statistic = n * diff * diff / (r0 * r1 * c0 * c1);
  r.pvalue = std::erfc(std::sqrt(r.statistic / 2.0));
  return r;
}

namespace detail {

inline void check_strata(const std::map<std::string, std::uint64_t> &counts,
                         const Strata &strata) {
  for (const auto &[person, _] : counts) {
    const auto it = strata.find(person);
    if (it == strata.end())
      throw InvalidInput("no stratum for person " + person);
    if (it->second != 0 && it->second != 1)
      throw InvalidInput("stratum for person " + person + " is not 0 or 1");
  }
}

} // namespace detail

inline ChiSquareResult
chi_square_dichotomized(const std::map<std::string, std::uint64_t> &counts,
                        const Strata &strata, std::uint64_t cutoff) {
  detail::check_strata(counts, strata);
  std::uint64_t cell[2][2] = {{0, 0}, {0, 0}};
  for (const auto &[person, n] : counts)
    ++cell[strata.at(person)][n > cutoff ? 1 : 0];
  if (cell[0][0] + cell[0][1] < 2 || cell[1][0] + cell[1][1] < 2)
    throw InvalidInput("chi-square needs at least 2 persons per stratum");
  return chi_square_2x2(cell[0][0], cell[0][1], cell[1][0], cell[1][1]);
}

struct LogLinearResult {
  // log(mean count in stratum 1 / mean count in stratum 0); empty if either
  // stratum has a zero total
  std::optional<double> coefficient;
  std::optional<double> std_error;
  std::optional<double> pvalue;
  double mean0 = 0.0;
  double mean1 = 0.0;
  bool degenerate = false;
};

/// Poisson regression of per-person counts on a binary stratum indicator.
inline LogLinearResult
loglinear_rate_ratio(const std::map<std::string, std::uint64_t> &counts,
                     const Strata &strata) {
  detail::check_strata(counts, strata);
  double total[2] = {0.0, 0.0};
  double persons[2] = {0.0, 0.0};
  for (const auto &[person, n] : counts) {
    const int s = strata.at(person);
    total[s] += static_cast<double>(n);
    persons[s] += 1.0;
  }
  if (persons[0] == 0.0 || persons[1] == 0.0)
    throw InvalidInput("log-linear model needs both strata non-empty");
  LogLinearResult r;
  r.mean0 = total[0] / persons[0];
  r.mean1 = total[1] / persons[1];
  if (total[0] == 0.0 || total[1] == 0.0) {
    r.degenerate = true;
    return r;
  }
  const double coef = std::log(r.mean1 / r.mean0);
  const double se = std::sqrt(1.0 / total[1] + 1.0 / total[0]);
  r.coefficient = coef;
  r.std_error = se;
  r.pvalue = std::erfc(std::fabs(coef / se) / std::sqrt(2.0));
  return r;
}

struct AssociationResult {
  CountKind kind = CountKind::Dynamic;
  std::uint64_t dichotomy_cutoff = 0;
  ChiSquareResult chi_square;
  LogLinearResult loglinear;
};

inline AssociationResult
associate(const std::map<std::string, PersonDynamicCounts> &per_person,
          const Strata &strata, CountKind kind, std::uint64_t cutoff) {
  const auto counts = select_counts(per_person, kind);
  return {kind, cutoff, chi_square_dichotomized(counts, strata, cutoff),
          loglinear_rate_ratio(counts, strata)};
}

} // namespace vcmix
