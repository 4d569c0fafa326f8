// Command-line front end: simulate, fit, classify, summarize.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vcmix/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::optional<std::uint64_t> min_total_reads;
  std::optional<double> epsilon;
  std::optional<std::string> input;
  std::optional<std::string> offsets;
  std::optional<std::string> strata;
  std::optional<std::string> truth;
  std::optional<std::string> responsibilities;
  std::optional<std::string> calls;
  std::optional<std::string> output_dir;
  std::optional<bool> absent_as_zero;
  std::optional<unsigned> threads;
};

void add_common(CLI::App *cmd, Overrides &o) {
  cmd->add_option("--config", o.config, "flat key = value configuration file");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--threshold", o.threshold, "dynamic membership threshold (strict)");
  cmd->add_option("--min-total-reads", o.min_total_reads, "minimum template reads per clone");
  cmd->add_option("--epsilon", o.epsilon, "EM convergence threshold");
  cmd->add_option("--input", o.input, "long-format cohort table");
  cmd->add_option("--offsets", o.offsets, "person-time totals sidecar");
  cmd->add_option("--strata", o.strata, "person stratum table");
  cmd->add_option("--truth", o.truth, "simulation truth labels");
  cmd->add_option("--responsibilities", o.responsibilities, "responsibility table from fit");
  cmd->add_option("--calls", o.calls, "call table from classify");
  cmd->add_option("--output-dir", o.output_dir, "directory for outputs");
  cmd->add_flag("--absent-as-zero,!--no-absent-as-zero", o.absent_as_zero,
                "treat unobserved clone-times at sampled person-times as zero counts");
  cmd->add_option("--threads", o.threads, "worker threads (0 = all cores)");
}

vcmix::RunConfig build_config(const Overrides &o) {
  vcmix::RunConfig cfg;
  if (!o.config.empty())
    vcmix::apply_config(cfg, vcmix::io::read_key_values(o.config));
  if (o.seed)
    cfg.fit.seed = cfg.sim.seed = *o.seed;
  if (o.threshold)
    cfg.threshold = *o.threshold;
  if (o.min_total_reads)
    cfg.min_total_reads = *o.min_total_reads;
  if (o.epsilon)
    cfg.fit.epsilon = *o.epsilon;
  if (o.input)
    cfg.input = *o.input;
  if (o.offsets)
    cfg.offsets = *o.offsets;
  if (o.strata)
    cfg.strata = *o.strata;
  if (o.truth)
    cfg.truth = *o.truth;
  if (o.responsibilities)
    cfg.responsibilities = *o.responsibilities;
  if (o.calls)
    cfg.calls = *o.calls;
  if (o.output_dir)
    cfg.output_dir = *o.output_dir;
  if (o.absent_as_zero)
    cfg.absent_as_zero = *o.absent_as_zero;
  if (o.threads)
    cfg.fit.threads = *o.threads;
  return cfg;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Dynamic/static clone mixture model"};
  app.require_subcommand(1);
  Overrides o;
  auto *simulate = app.add_subcommand("simulate", "generate a synthetic cohort");
  auto *fit = app.add_subcommand("fit", "fit alpha, beta, pi by EM");
  auto *classify = app.add_subcommand("classify", "threshold responsibilities into calls");
  auto *summarize = app.add_subcommand("summarize", "per-person counts and stratum tests");
  for (auto *cmd : {simulate, fit, classify, summarize})
    add_common(cmd, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : vcmix::exit_codes::validation;
  }

  try {
    const auto cfg = build_config(o);
    vcmix::RunOutcome outcome;
    if (simulate->parsed())
      outcome = vcmix::run_simulate(cfg);
    else if (fit->parsed())
      outcome = vcmix::run_fit(cfg);
    else if (classify->parsed())
      outcome = vcmix::run_classify(cfg);
    else
      outcome = vcmix::run_summarize(cfg);
    std::cout << outcome.summary << '\n';
    for (const auto &p : outcome.written)
      std::cout << "wrote " << p.string() << '\n';
    return vcmix::exit_codes::ok;
  } catch (const vcmix::Error &e) {
    std::cerr << "error: " << e.what() << '\n';
    return vcmix::exit_code(e);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return vcmix::exit_codes::io;
  }
}
