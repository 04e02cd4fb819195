// kgpm: train KGE models, audit predictive multiplicity, aggregate rankings.
//
// Exit codes: 0 ok, 1 spec/usage error, 2 runtime failure.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "kgpm/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kSpecError = 1;
constexpr int kRuntimeFailure = 2;

kgpm::ExperimentSpec load(const std::string& path, std::size_t threads) {
  auto spec = kgpm::load_spec(path);
  if (threads > 0) spec.threads = threads;
  return spec;
}

std::string show(const std::string& dir, const std::string& name) {
  return kgpm::render_table(kgpm::read_csv_file((kgpm::fs::path(dir) / name).string()));
}

void mark_failed(const std::string& dir, const std::string& what) {
  if (dir.empty()) return;
  try {
    kgpm::OutputWriter(dir).status("failed", what);
  } catch (...) {
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predictive multiplicity audits for knowledge graph embeddings"};
  app.require_subcommand(1);

  std::string spec_path;
  std::size_t threads = 0;
  auto add_spec = [&](CLI::App* sub) {
    sub->add_option("spec", spec_path, "experiment spec (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("-j,--threads", threads, "worker threads (overrides the spec)");
  };

  auto* train = app.add_subcommand("train", "train the baseline model and evaluate it");
  add_spec(train);
  auto* audit = app.add_subcommand("audit", "build the level set and report multiplicity per voting rule");
  add_spec(audit);
  auto* sweep_eps = app.add_subcommand("sweep-eps", "multiplicity against epsilon from one candidate pool");
  add_spec(sweep_eps);
  auto* sweep_agg = app.add_subcommand("sweep-agg", "multiplicity against the number of aggregated models");
  add_spec(sweep_agg);
  auto* correlate = app.add_subcommand("correlate", "correlate entity/relation frequency with multiplicity");
  add_spec(correlate);
  std::string audit_dir;
  correlate->add_option("--audit-dir", audit_dir, "directory holding audit outputs (default: spec output_dir)");

  auto* aggregate = app.add_subcommand("aggregate", "aggregate ballots from a profile CSV");
  std::string profiles_path, rule_name = "borda", out_path = "-";
  aggregate->add_option("profiles", profiles_path, "profile CSV")->required()->check(CLI::ExistingFile);
  aggregate->add_option("-r,--rule", rule_name, "majority | borda | range");
  aggregate->add_option("-o,--output", out_path, "output CSV ('-' for stdout)");

  auto* report = app.add_subcommand("report", "render the CSV reports of an output directory as tables");
  std::string report_dir;
  report->add_option("dir", report_dir, "output directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kSpecError;
  }

  kgpm::ExperimentSpec spec;
  try {
    if (!spec_path.empty()) spec = load(spec_path, threads);
    if (aggregate->parsed()) (void)kgpm::parse_rule(rule_name);
  } catch (const kgpm::Error& e) {
    std::cerr << "kgpm: " << e.what() << '\n';
    return kSpecError;
  }

  try {
    if (train->parsed()) {
      const auto out = kgpm::cmd_train(spec);
      std::cout << "Hits@" << spec.audit.k << " valid " << out.valid.hits_at_k << " test " << out.test.hits_at_k
                << '\n';
    } else if (audit->parsed()) {
      kgpm::cmd_audit(spec);
      std::cout << show(spec.output_dir, "summary.csv");
    } else if (sweep_eps->parsed()) {
      kgpm::cmd_sweep_epsilon(spec);
      std::cout << show(spec.output_dir, "sweep_eps.csv");
    } else if (sweep_agg->parsed()) {
      kgpm::cmd_sweep_aggregation(spec);
      std::cout << show(spec.output_dir, "sweep_agg.csv");
    } else if (correlate->parsed()) {
      kgpm::cmd_correlate(spec, audit_dir);
      std::cout << show(spec.output_dir, "correlate.csv");
    } else if (aggregate->parsed()) {
      kgpm::cmd_aggregate(profiles_path, kgpm::parse_rule(rule_name), out_path);
    } else if (report->parsed()) {
      std::cout << kgpm::cmd_report(report_dir);
    }
  } catch (const kgpm::ConfigError& e) {
    std::cerr << "kgpm: " << e.what() << '\n';
    mark_failed(spec_path.empty() ? std::string() : spec.output_dir, e.what());
    return kSpecError;
  } catch (const std::exception& e) {
    std::cerr << "kgpm: " << e.what() << '\n';
    mark_failed(spec_path.empty() ? std::string() : spec.output_dir, e.what());
    return kRuntimeFailure;
  }
  return kOk;
}
