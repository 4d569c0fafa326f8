#pragma once
// Subcommand orchestration: simulate, fit, classify, summarize.
//
// Every run stages its outputs and renames them into the output directory
// only after all of them were produced, so a failing run leaves nothing
// behind.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vcmix/classify.hpp"
#include "vcmix/em.hpp"
#include "vcmix/error.hpp"
#include "vcmix/io.hpp"
#include "vcmix/simulator.hpp"

namespace vcmix {

struct RunConfig {
  FitConfig fit;
  SimConfig sim;
  double threshold = 0.75;
  std::uint64_t min_total_reads = 8;
  bool absent_as_zero = true;
  std::uint64_t dynamic_cutoff = 50;
  std::uint64_t direction_cutoff = 25;

  std::optional<std::filesystem::path> input;
  std::optional<std::filesystem::path> offsets;
  std::optional<std::filesystem::path> strata;
  std::optional<std::filesystem::path> truth;
  std::optional<std::filesystem::path> responsibilities;
  std::optional<std::filesystem::path> calls;
  std::filesystem::path output_dir = ".";
};

namespace detail {

template <typename T> T kv_number(const std::string &key, const std::string &v) {
  const auto parsed = io::parse_number<T>(v);
  if (!parsed)
    throw InvalidParameter("config key '" + key + "': invalid value '" + v + "'");
  return *parsed;
}

inline bool kv_bool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes")
    return true;
  if (v == "false" || v == "0" || v == "off" || v == "no")
    return false;
  throw InvalidParameter("config key '" + key + "': expected a boolean, got '" + v + "'");
}

} // namespace detail

/// Applies a flat key-value document on top of `cfg`. Unknown keys are errors.
inline void apply_config(RunConfig &cfg, const io::KeyValues &kv) {
  using detail::kv_bool;
  using detail::kv_number;
  using Setter = std::function<void(const std::string &, const std::string &)>;
  const std::map<std::string, Setter> setters = {
      {"seed",
       [&](auto &k, auto &v) { cfg.fit.seed = cfg.sim.seed = kv_number<std::uint64_t>(k, v); }},
      {"epsilon", [&](auto &k, auto &v) { cfg.fit.epsilon = kv_number<double>(k, v); }},
      {"max_em_iters", [&](auto &k, auto &v) { cfg.fit.max_em_iters = kv_number<int>(k, v); }},
      {"inner_opt_tol", [&](auto &k, auto &v) { cfg.fit.inner_opt_tol = kv_number<double>(k, v); }},
      {"inner_opt_max_iters",
       [&](auto &k, auto &v) { cfg.fit.inner_opt_max_iters = kv_number<int>(k, v); }},
      {"threads", [&](auto &k, auto &v) { cfg.fit.threads = kv_number<unsigned>(k, v); }},
      {"n_clones", [&](auto &k, auto &v) { cfg.sim.n_clones = kv_number<std::size_t>(k, v); }},
      {"n_persons", [&](auto &k, auto &v) { cfg.sim.n_persons = kv_number<std::size_t>(k, v); }},
      {"alpha", [&](auto &k, auto &v) { cfg.sim.alpha = kv_number<double>(k, v); }},
      {"beta", [&](auto &k, auto &v) { cfg.sim.beta = kv_number<double>(k, v); }},
      {"pi", [&](auto &k, auto &v) { cfg.sim.pi = kv_number<double>(k, v); }},
      {"n_followups", [&](auto &k, auto &v) { cfg.sim.n_followups = kv_number<int>(k, v); }},
      {"offset_mean", [&](auto &k, auto &v) { cfg.sim.offset_mean = kv_number<double>(k, v); }},
      {"missing_rate", [&](auto &k, auto &v) { cfg.sim.missing_rate = kv_number<double>(k, v); }},
      {"person_prefix", [&](auto &, auto &v) { cfg.sim.person_prefix = v; }},
      {"threshold", [&](auto &k, auto &v) { cfg.threshold = kv_number<double>(k, v); }},
      {"min_total_reads",
       [&](auto &k, auto &v) { cfg.min_total_reads = kv_number<std::uint64_t>(k, v); }},
      {"absent_as_zero", [&](auto &k, auto &v) { cfg.absent_as_zero = kv_bool(k, v); }},
      {"dynamic_cutoff",
       [&](auto &k, auto &v) { cfg.dynamic_cutoff = kv_number<std::uint64_t>(k, v); }},
      {"direction_cutoff",
       [&](auto &k, auto &v) { cfg.direction_cutoff = kv_number<std::uint64_t>(k, v); }},
      {"input", [&](auto &, auto &v) { cfg.input = v; }},
      {"offsets", [&](auto &, auto &v) { cfg.offsets = v; }},
      {"strata", [&](auto &, auto &v) { cfg.strata = v; }},
      {"truth", [&](auto &, auto &v) { cfg.truth = v; }},
      {"responsibilities", [&](auto &, auto &v) { cfg.responsibilities = v; }},
      {"calls", [&](auto &, auto &v) { cfg.calls = v; }},
      {"output_dir", [&](auto &, auto &v) { cfg.output_dir = v; }},
  };
  for (const auto &[key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end())
      throw InvalidParameter("unknown config key '" + key + "'");
    it->second(key, value);
  }
}

struct RunOutcome {
  std::vector<std::filesystem::path> written;
  std::string summary; // one human-readable line
};

namespace detail {

inline const std::filesystem::path &require(const std::optional<std::filesystem::path> &p,
                                            const char *what) {
  if (!p)
    throw InvalidParameter(std::string("missing required path: ") + what);
  return *p;
}

inline void check_threshold(double t) {
  if (!(t > 0.0 && t < 1.0))
    throw InvalidParameter("threshold must lie strictly between 0 and 1");
}

inline std::vector<CloneSeries> load_series(const RunConfig &cfg) {
  io::IngestOptions opts;
  opts.offsets_path = cfg.offsets;
  const auto table = io::ingest(require(cfg.input, "input"), opts);
  return io::filter_clones(table, cfg.min_total_reads, cfg.absent_as_zero);
}

inline std::string fmt(double x) { return io::format_double(x); }

} // namespace detail

/// Writes cohort.tsv, offsets.tsv and truth.tsv.
inline RunOutcome run_simulate(const RunConfig &cfg) {
  const auto sim = simulate(cfg.sim);
  const auto text = io::emit_cohort(sim.clones);
  io::StagedOutputs out(cfg.output_dir);
  out.add("cohort.tsv", text.cohort);
  out.add("offsets.tsv", text.offsets);
  out.add("truth.tsv", io::emit_truth(sim.truth));
  std::size_t n_dynamic = 0;
  for (bool b : sim.truth.labels)
    n_dynamic += b;
  return {out.commit(), "simulated " + std::to_string(sim.clones.size()) + " clones (" +
                            std::to_string(n_dynamic) + " dynamic)"};
}

/// Writes fit.txt, responsibilities.tsv and trace.tsv.
inline RunOutcome run_fit(const RunConfig &cfg) {
  const auto series = detail::load_series(cfg);
  const auto fit = fit_em(series, cfg.fit);
  const auto &hp = fit.hyperparams;
  std::size_t single = 0;
  for (const auto &r : fit.responsibilities)
    single += r.n_times == 1;

  using detail::fmt;
  const std::vector<std::pair<std::string, std::string>> doc = {
      {"alpha", fmt(hp.alpha)},
      {"beta", fmt(hp.beta)},
      {"pi", fmt(hp.pi)},
      {"converged", fit.converged ? "true" : "false"},
      {"iterations", std::to_string(fit.iterations)},
      {"final_loglik", fmt(fit.loglik_trace.back())},
      {"final_msq_change", fmt(fit.msq_change_trace.back())},
      {"n_clones", std::to_string(fit.responsibilities.size())},
      {"n_single_timepoint", std::to_string(single)},
      {"inner_opt_failures", std::to_string(fit.inner_opt_failures)},
      {"epsilon", fmt(cfg.fit.epsilon)},
      {"seed", std::to_string(cfg.fit.seed)},
      {"min_total_reads", std::to_string(cfg.min_total_reads)},
      {"absent_as_zero", cfg.absent_as_zero ? "true" : "false"},
  };
  std::ostringstream trace;
  trace << "iteration\tloglik\tmsq_change\n";
  for (std::size_t i = 0; i < fit.loglik_trace.size(); ++i)
    trace << i + 1 << '\t' << fmt(fit.loglik_trace[i]) << '\t'
          << fmt(fit.msq_change_trace[i]) << '\n';

  io::StagedOutputs out(cfg.output_dir);
  out.add("fit.txt", io::emit_key_values(doc));
  out.add("responsibilities.tsv", io::emit_responsibilities(fit.responsibilities));
  out.add("trace.tsv", trace.str());
  return {out.commit(), "alpha=" + fmt(hp.alpha) + " beta=" + fmt(hp.beta) +
                            " pi=" + fmt(hp.pi) +
                            " iterations=" + std::to_string(fit.iterations) +
                            (fit.converged ? "" : " (not converged)")};
}

/// Writes calls.tsv, person_summary.tsv, plot_membership.tsv,
/// plot_trajectories.tsv and, given truth labels, operating_characteristics.txt.
inline RunOutcome run_classify(const RunConfig &cfg) {
  detail::check_threshold(cfg.threshold);
  const auto series = detail::load_series(cfg);
  const auto resp_path = cfg.responsibilities.value_or(cfg.output_dir / "responsibilities.tsv");
  const auto resp = io::read_responsibilities(resp_path);
  const auto calls = classify(resp, series, cfg.threshold);
  const auto per_person = dynamic_counts_per_person(calls);
  Strata strata;
  if (cfg.strata)
    strata = io::read_strata(*cfg.strata);

  std::optional<SimTruth> truth;
  std::map<CloneKey, bool> label;
  if (cfg.truth) {
    truth = io::read_truth(*cfg.truth);
    for (std::size_t i = 0; i < truth->keys.size(); ++i)
      label[{truth->keys[i].person_id, truth->keys[i].clone_id}] = truth->labels[i];
  }

  std::map<CloneKey, const CloneSeries *> by_key;
  for (const auto &s : series)
    by_key[{s.person_id, s.clone_id}] = &s;

  using detail::fmt;
  std::ostringstream membership, traj;
  membership << "person_id\tclone_id\tmean_proportion\tprob_dynamic\tcall\ttruth\n";
  traj << "person_id\tclone_id\ttime_index\tproportion\tcall\tdirection\n";
  for (const auto &c : calls) {
    const CloneSeries &s = *by_key.at({c.person_id, c.clone_id});
    const auto lab = label.find({c.person_id, c.clone_id});
    membership << c.person_id << '\t' << c.clone_id << '\t' << fmt(io::mean_proportion(s))
               << '\t' << fmt(c.prob_dynamic) << '\t' << to_string(c.call) << '\t'
               << (lab == label.end() ? "NA" : lab->second ? "dynamic" : "static") << '\n';
    for (std::size_t k = 0; k < s.size(); ++k)
      traj << c.person_id << '\t' << c.clone_id << '\t' << s.time_at(k) << '\t'
           << fmt(static_cast<double>(s.counts[k]) / static_cast<double>(s.offsets[k]))
           << '\t' << to_string(c.call) << '\t' << to_string(c.direction) << '\n';
  }

  io::StagedOutputs out(cfg.output_dir);
  out.add("calls.tsv", io::emit_calls(calls));
  out.add("person_summary.tsv", io::emit_person_summary(per_person, strata));
  out.add("plot_membership.tsv", membership.str());
  out.add("plot_trajectories.tsv", traj.str());

  std::size_t n_dynamic = 0;
  for (const auto &c : calls)
    n_dynamic += c.call == Call::Dynamic;
  std::string summary = std::to_string(n_dynamic) + " of " +
                        std::to_string(calls.size()) + " clones called dynamic";
  if (truth) {
    const auto oc = operating_characteristics(calls, *truth, cfg.threshold);
    out.add("operating_characteristics.txt",
            io::emit_key_values({{"threshold", fmt(oc.threshold)},
                                 {"sensitivity", io::format_optional(oc.sensitivity)},
                                 {"specificity", io::format_optional(oc.specificity)},
                                 {"tp", std::to_string(oc.tp)},
                                 {"fp", std::to_string(oc.fp)},
                                 {"tn", std::to_string(oc.tn)},
                                 {"fn", std::to_string(oc.fn)}}));
    summary += "; sensitivity=" + io::format_optional(oc.sensitivity) +
               " specificity=" + io::format_optional(oc.specificity);
  }
  return {out.commit(), summary};
}

/// Writes person_summary.tsv and association.txt from a calls table and a
/// strata file.
inline RunOutcome run_summarize(const RunConfig &cfg) {
  const auto calls_path = cfg.calls.value_or(cfg.output_dir / "calls.tsv");
  const auto calls = io::read_calls(calls_path);
  const auto strata = io::read_strata(detail::require(cfg.strata, "strata"));
  const auto per_person = dynamic_counts_per_person(calls);

  using detail::fmt;
  std::vector<std::pair<std::string, std::string>> doc;
  std::string summary;
  const std::pair<CountKind, std::uint64_t> tests[] = {
      {CountKind::Dynamic, cfg.dynamic_cutoff},
      {CountKind::Expanding, cfg.direction_cutoff},
      {CountKind::Contracting, cfg.direction_cutoff}};
  for (const auto &[kind, cutoff] : tests) {
    const auto r = associate(per_person, strata, kind, cutoff);
    const std::string prefix = kind == CountKind::Dynamic     ? "dynamic"
                               : kind == CountKind::Expanding ? "expanding"
                                                              : "contracting";
    doc.emplace_back(prefix + ".dichotomy_cutoff", std::to_string(cutoff));
    doc.emplace_back(prefix + ".chi_sq_stat", fmt(r.chi_square.statistic));
    doc.emplace_back(prefix + ".chi_sq_pvalue", fmt(r.chi_square.pvalue));
    doc.emplace_back(prefix + ".chi_sq_degenerate", r.chi_square.degenerate ? "true" : "false");
    doc.emplace_back(prefix + ".loglinear_coef", io::format_optional(r.loglinear.coefficient));
    doc.emplace_back(prefix + ".loglinear_se", io::format_optional(r.loglinear.std_error));
    doc.emplace_back(prefix + ".loglinear_pvalue", io::format_optional(r.loglinear.pvalue));
    doc.emplace_back(prefix + ".loglinear_degenerate", r.loglinear.degenerate ? "true" : "false");
    doc.emplace_back(prefix + ".mean_stratum0", fmt(r.loglinear.mean0));
    doc.emplace_back(prefix + ".mean_stratum1", fmt(r.loglinear.mean1));
    if (kind == CountKind::Dynamic)
      summary = "dynamic: chi2 p=" + fmt(r.chi_square.pvalue) +
                " loglinear coef=" + io::format_optional(r.loglinear.coefficient) +
                " p=" + io::format_optional(r.loglinear.pvalue);
  }

  io::StagedOutputs out(cfg.output_dir);
  out.add("person_summary.tsv", io::emit_person_summary(per_person, strata));
  out.add("association.txt", io::emit_key_values(doc));
  return {out.commit(), summary};
}

} // namespace vcmix
