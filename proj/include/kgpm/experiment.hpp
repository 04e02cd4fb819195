#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgpm/answer_sets.hpp"
#include "kgpm/checkpoint.hpp"
#include "kgpm/error.hpp"
#include "kgpm/graph.hpp"
#include "kgpm/model.hpp"
#include "kgpm/multiplicity.hpp"
#include "kgpm/ranking.hpp"
#include "kgpm/stats.hpp"
#include "kgpm/synthetic.hpp"
#include "kgpm/trainer.hpp"
#include "kgpm/voting.hpp"

namespace kgpm {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct DatasetSpec {
  std::string train, valid, test;
  std::optional<SyntheticSpec> synthetic;
};

struct AuditSpec {
  double epsilon = 0.01;
  std::vector<double> epsilons;  // sweep-eps
  int k = 10;
  std::vector<VotingRule> rules{VotingRule::kMajority, VotingRule::kBorda, VotingRule::kRange};
  std::size_t n_competitors = 10;
  std::size_t max_attempts = 0;  // 0: 10 × n_competitors
  std::size_t n_aggregate = 10;
  std::vector<std::size_t> n_aggregate_list;  // sweep-agg
  std::optional<double> tau;
  std::optional<double> tau_quantile;  // τ from baseline gold scores on the reference split
  Split reference_split = Split::kValid;
  Split eval_split = Split::kTest;
  bool filtered = true;
  TieMode tie_mode = TieMode::kOptimistic;
  std::size_t pool_size = 30;  // sweep-eps master pool
  bool save_checkpoints = false;

  std::size_t attempts() const { return max_attempts ? max_attempts : 10 * std::max<std::size_t>(1, n_competitors); }
};

/// Everything an experiment depends on besides the dataset bytes.
struct ExperimentSpec {
  DatasetSpec dataset;
  ModelConfig model;
  AuditSpec audit;
  std::uint64_t master_seed = 0;
  std::size_t threads = 1;
  std::string output_dir = "kgpm-out";
};

// ---------------------------------------------------------------------------
// Spec parsing

namespace detail {

template <typename F>
void for_each_key(const nlohmann::json& j, const std::string& section, F&& f) {
  if (!j.is_object()) throw ConfigError("'" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!f(it.key(), it.value())) throw ConfigError("unknown key '" + it.key() + "' in '" + section + "'");
  }
}

inline std::string resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

}  // namespace detail

inline ExperimentSpec parse_spec(const nlohmann::json& j, const fs::path& base_dir = {}) {
  ExperimentSpec s;
  try {
    detail::for_each_key(j, "spec", [&](const std::string& k, const nlohmann::json& v) {
      if (k == "dataset") {
        detail::for_each_key(v, "dataset", [&](const std::string& dk, const nlohmann::json& dv) {
          if (dk == "train") s.dataset.train = detail::resolve(base_dir, dv.get<std::string>());
          else if (dk == "valid") s.dataset.valid = detail::resolve(base_dir, dv.get<std::string>());
          else if (dk == "test") s.dataset.test = detail::resolve(base_dir, dv.get<std::string>());
          else if (dk == "synthetic") {
            SyntheticSpec syn;
            detail::for_each_key(dv, "synthetic", [&](const std::string& sk, const nlohmann::json& sv) {
              if (sk == "clusters") syn.clusters = sv.get<std::size_t>();
              else if (sk == "cluster_size") syn.cluster_size = sv.get<std::size_t>();
              else if (sk == "train_per_relation") syn.train_per_relation = sv.get<std::vector<std::size_t>>();
              else if (sk == "valid_per_relation") syn.valid_per_relation = sv.get<std::size_t>();
              else if (sk == "test_per_relation") syn.test_per_relation = sv.get<std::size_t>();
              else if (sk == "seed") syn.seed = sv.get<std::uint64_t>();
              else return false;
              return true;
            });
            s.dataset.synthetic = syn;
          } else return false;
          return true;
        });
      } else if (k == "model") {
        s.model = config_from_json(v);
      } else if (k == "audit") {
        auto& a = s.audit;
        detail::for_each_key(v, "audit", [&](const std::string& ak, const nlohmann::json& av) {
          if (ak == "epsilon") a.epsilon = av.get<double>();
          else if (ak == "epsilons") a.epsilons = av.get<std::vector<double>>();
          else if (ak == "k") a.k = av.get<int>();
          else if (ak == "rules") {
            a.rules.clear();
            for (const auto& r : av) a.rules.push_back(parse_rule(r.get<std::string>()));
          } else if (ak == "n_competitors") a.n_competitors = av.get<std::size_t>();
          else if (ak == "max_attempts") a.max_attempts = av.get<std::size_t>();
          else if (ak == "n_aggregate") a.n_aggregate = av.get<std::size_t>();
          else if (ak == "n_aggregate_list") a.n_aggregate_list = av.get<std::vector<std::size_t>>();
          else if (ak == "tau") a.tau = av.is_null() ? std::nullopt : std::optional<double>(av.get<double>());
          else if (ak == "tau_quantile")
            a.tau_quantile = av.is_null() ? std::nullopt : std::optional<double>(av.get<double>());
          else if (ak == "reference_split") a.reference_split = parse_split(av.get<std::string>());
          else if (ak == "eval_split") a.eval_split = parse_split(av.get<std::string>());
          else if (ak == "filtered") a.filtered = av.get<bool>();
          else if (ak == "tie_mode") a.tie_mode = parse_tie_mode(av.get<std::string>());
          else if (ak == "pool_size") a.pool_size = av.get<std::size_t>();
          else if (ak == "save_checkpoints") a.save_checkpoints = av.get<bool>();
          else return false;
          return true;
        });
      } else if (k == "master_seed") {
        s.master_seed = v.get<std::uint64_t>();
      } else if (k == "threads") {
        s.threads = v.get<std::size_t>();
      } else if (k == "output_dir") {
        s.output_dir = v.get<std::string>();
      } else {
        return false;
      }
      return true;
    });
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("spec: ") + e.what());
  } catch (const DatasetError& e) {
    throw ConfigError(e.what());
  }
  const auto& a = s.audit;
  if (!s.dataset.synthetic && (s.dataset.train.empty() || s.dataset.valid.empty() || s.dataset.test.empty()))
    throw ConfigError("dataset needs train, valid and test paths or a synthetic section");
  if (a.k < 1) throw ConfigError("audit.k must be >= 1");
  if (!(a.epsilon >= 0.0)) throw ConfigError("audit.epsilon must be >= 0");
  for (double e : a.epsilons)
    if (!(e >= 0.0)) throw ConfigError("audit.epsilons must be >= 0");
  if (a.n_aggregate < 1) throw ConfigError("audit.n_aggregate must be >= 1");
  for (auto n : a.n_aggregate_list)
    if (n < 1) throw ConfigError("audit.n_aggregate_list entries must be >= 1");
  if (a.reference_split == Split::kTrain || a.eval_split == Split::kTrain)
    throw ConfigError("reference and evaluation splits must be valid or test");
  if (a.tau_quantile && !(*a.tau_quantile >= 0.0 && *a.tau_quantile <= 1.0))
    throw ConfigError("audit.tau_quantile must lie in [0, 1]");
  if (s.threads < 1) throw ConfigError("threads must be >= 1");
  return s;
}

// Reads a spec file. Relative dataset paths resolve against the file's
// directory; KGPM_OUTPUT_DIR overrides output_dir.
inline ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("spec '" + path + "' is not valid JSON: " + e.what());
  }
  auto s = parse_spec(j, fs::path(path).parent_path());
  if (const char* env = std::getenv("KGPM_OUTPUT_DIR"); env && *env) s.output_dir = env;
  return s;
}

inline ojson spec_to_json(const ExperimentSpec& s) {
  ojson j;
  ojson d;
  if (s.dataset.synthetic) {
    const auto& syn = *s.dataset.synthetic;
    d["synthetic"] = {{"clusters", syn.clusters},
                      {"cluster_size", syn.cluster_size},
                      {"train_per_relation", syn.train_per_relation},
                      {"valid_per_relation", syn.valid_per_relation},
                      {"test_per_relation", syn.test_per_relation},
                      {"seed", syn.seed}};
  } else {
    // File names only, so that outputs do not depend on where the data lives.
    d["train"] = fs::path(s.dataset.train).filename().string();
    d["valid"] = fs::path(s.dataset.valid).filename().string();
    d["test"] = fs::path(s.dataset.test).filename().string();
  }
  j["dataset"] = d;
  j["model"] = config_to_json(s.model);
  const auto& a = s.audit;
  ojson au;
  au["epsilon"] = a.epsilon;
  au["epsilons"] = a.epsilons;
  au["k"] = a.k;
  std::vector<std::string> rules;
  for (auto r : a.rules) rules.emplace_back(to_string(r));
  au["rules"] = rules;
  au["n_competitors"] = a.n_competitors;
  au["max_attempts"] = a.attempts();
  au["n_aggregate"] = a.n_aggregate;
  au["n_aggregate_list"] = a.n_aggregate_list;
  au["tau"] = a.tau ? ojson(*a.tau) : ojson(nullptr);
  au["tau_quantile"] = a.tau_quantile ? ojson(*a.tau_quantile) : ojson(nullptr);
  au["reference_split"] = to_string(a.reference_split);
  au["eval_split"] = to_string(a.eval_split);
  au["filtered"] = a.filtered;
  au["tie_mode"] = to_string(a.tie_mode);
  au["pool_size"] = a.pool_size;
  au["save_checkpoints"] = a.save_checkpoints;
  j["audit"] = au;
  j["master_seed"] = s.master_seed;
  return j;
}

inline KnowledgeGraph load_dataset(const ExperimentSpec& s) {
  if (s.dataset.synthetic) return make_synthetic_graph(*s.dataset.synthetic);
  return load_graph(s.dataset.train, s.dataset.valid, s.dataset.test);
}

// ---------------------------------------------------------------------------
// Output helpers

// Shortest round-trip decimal; NaN becomes an empty cell.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

/// Collects outputs in memory and writes them in one place, in name order.
class OutputWriter {
 public:
  explicit OutputWriter(std::string dir) : dir_(std::move(dir)) {}

  std::ostringstream& file(const std::string& name) { return files_[name]; }
  void json(const std::string& name, const ojson& j) { files_[name] << j.dump(2) << '\n'; }

  void flush() {
    fs::create_directories(dir_);
    for (auto& [name, content] : files_) {
      const fs::path p = fs::path(dir_) / name;
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      std::ofstream out(p, std::ios::binary);
      if (!out) throw ConfigError("cannot write '" + p.string() + "'");
      out << content.str();
    }
    files_.clear();
  }

  // Status marker written immediately, so failed runs are flagged even when
  // nothing else was flushed.
  void status(const std::string& state, const std::string& detail = {}) {
    fs::create_directories(dir_);
    std::ofstream out(fs::path(dir_) / "STATUS", std::ios::binary);
    out << state << (detail.empty() ? "" : ": " + detail) << '\n';
  }

  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::map<std::string, std::ostringstream> files_;
};

inline EvalOptions eval_options(const ExperimentSpec& s) {
  return {s.audit.filtered, s.audit.tie_mode, s.threads};
}

inline LevelSetOptions level_set_options(const ExperimentSpec& s) {
  LevelSetOptions o;
  o.k = s.audit.k;
  o.reference_split = s.audit.reference_split;
  o.master_seed = s.master_seed;
  o.eval = eval_options(s);
  o.threads = s.threads;
  return o;
}

inline ojson model_entry(const std::string& role, std::size_t member, std::size_t voter, const EmbeddingModel& m) {
  ojson j;
  j["role"] = role;
  j["member"] = member;
  j["voter"] = voter;
  j["seed"] = m.config.seed;
  j["checkpoint_hash"] = checkpoint_hash(m);
  return j;
}

// ---------------------------------------------------------------------------
// Human-readable summary, rendered only from summary.csv rows.

struct SummaryRow {
  std::string method, rule;
  std::size_t n_aggregate = 1;
  std::size_t n_competitors = 0;
  double hits = 0.0;
  std::optional<double> ambiguity, discrepancy, bound;
};

inline void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows) {
  out << "method,rule,n_aggregate,n_competitors,hits_at_k,ambiguity,discrepancy,bound\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.rule << ',' << r.n_aggregate << ',' << r.n_competitors << ',' << fmt(r.hits) << ','
        << fmt(r.ambiguity) << ',' << fmt(r.discrepancy) << ',' << fmt(r.bound) << '\n';
  }
}

inline std::vector<std::vector<std::string>> read_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      cols.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(cols));
  }
  return rows;
}

inline std::vector<std::vector<std::string>> read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return read_csv(in);
}

// Renders any CSV as an aligned table; numeric cells are shown with 4 decimals.
inline std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return {};
  auto show = [](const std::string& cell) {
    if (cell.empty()) return std::string("-");
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    const bool integral = cell.find_first_not_of("0123456789-") == std::string::npos;
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || integral) return cell;
    std::ostringstream o;
    o << std::fixed << std::setprecision(4) << v;
    return o.str();
  };
  std::vector<std::vector<std::string>> cells;
  std::vector<std::size_t> width;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<std::string> r;
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      r.push_back(i == 0 ? rows[i][c] : show(rows[i][c]));
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], r.back().size());
    }
    cells.push_back(std::move(r));
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      out << (c ? " | " : "") << std::left << std::setw(static_cast<int>(width[c])) << cells[i][c];
    }
    out << '\n';
    if (i == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) out << (c ? "-+-" : "") << std::string(width[c], '-');
      out << '\n';
    }
  }
  return out.str();
}

inline std::string render_csv_text(const std::string& csv) {
  std::istringstream in(csv);
  return render_table(read_csv(in));
}

// ---------------------------------------------------------------------------
// Commands

struct TrainOutcome {
  EmbeddingModel model;
  EvalResult valid, test;
};

/// Trains the baseline, evaluates it on valid and test, and writes the
/// checkpoint, the loss curve and per-query ranks.
inline TrainOutcome cmd_train(const ExperimentSpec& s) {
  OutputWriter w(s.output_dir);
  w.status("running", "train");
  const auto g = load_dataset(s);
  auto run = train_run(g, s.model);
  const auto opt = eval_options(s);
  const auto vq = queries_from_split(g, Split::kValid);
  const auto tq = queries_from_split(g, Split::kTest);
  TrainOutcome out{run.model, hits_at_k(run.model, g, vq, s.audit.k, opt), hits_at_k(run.model, g, tq, s.audit.k, opt)};
  EvalOptions raw = opt;
  raw.filtered = false;
  const auto test_raw = hits_at_k(run.model, g, tq, s.audit.k, raw);

  w.file("baseline.ckpt.json") << serialize_checkpoint(run.model);
  auto& log = w.file("train_log.csv");
  log << "epoch,loss\n";
  for (std::size_t e = 0; e < run.epoch_losses.size(); ++e) log << (e + 1) << ',' << fmt(run.epoch_losses[e]) << '\n';
  write_rank_csv(w.file("ranks_test.csv"), tq, out.test);
  ojson j;
  j["spec"] = spec_to_json(s);
  j["dataset_hash"] = g.content_hash_hex();
  j["checkpoint_hash"] = checkpoint_hash(run.model);
  j["final_loss"] = run.model.final_loss;
  j["k"] = s.audit.k;
  j["valid_hits"] = out.valid.hits_at_k;
  j["test_hits"] = out.test.hits_at_k;
  j["test_hits_raw"] = test_raw.hits_at_k;
  j["test_hits_tail"] = out.test.hits_tail;
  j["test_hits_head"] = out.test.hits_head;
  j["test_tied_queries"] = out.test.tied_queries;
  w.json("train.json", j);
  w.flush();
  w.status("complete", "train");
  return out;
}

struct AuditOutcome {
  std::vector<MultiplicityReport> reports;  // none first, then each rule
  std::optional<double> tau, set_ambiguity, set_discrepancy, set_agreement;
};

/// Level set at ε, then evaluation without aggregation and with every
/// configured voting rule; writes audit.json, per-rule CSVs and a summary.
inline AuditOutcome cmd_audit(const ExperimentSpec& s) {
  OutputWriter w(s.output_dir);
  w.status("running", "audit");
  const auto& a = s.audit;
  const auto g = load_dataset(s);
  const auto opt = eval_options(s);
  const auto queries = queries_from_split(g, a.eval_split);
  const auto ls = build_level_set(g, s.model, a.epsilon, a.n_competitors, a.n_competitors ? a.attempts() : 0,
                                  level_set_options(s));
  std::optional<AggregationPool> pool;
  if (!a.rules.empty() && a.n_aggregate > 1) pool = train_aggregation_pool(g, ls, a.n_aggregate, s.master_seed, s.threads);

  AuditOutcome out;
  out.reports.push_back(evaluate_with_aggregation(ls, std::nullopt, 1, nullptr, g, queries, a.k, opt));
  for (auto rule : a.rules)
    out.reports.push_back(evaluate_with_aggregation(ls, rule, a.n_aggregate, pool ? &*pool : nullptr, g, queries, a.k, opt));

  EvalOptions raw = opt;
  raw.filtered = false;

  ojson models = ojson::array();
  models.push_back(model_entry("baseline", 0, 0, *ls.baseline));
  for (std::size_t c = 0; c < ls.competitors.size(); ++c) models.push_back(model_entry("competitor", c, 0, *ls.competitors[c]));
  if (pool) {
    for (std::size_t v = 1; v < pool->baseline_voters.size(); ++v)
      models.push_back(model_entry("baseline_voter", 0, v, *pool->baseline_voters[v]));
    for (std::size_t c = 0; c < pool->member_voters.size(); ++c)
      for (std::size_t v = 1; v < pool->member_voters[c].size(); ++v)
        models.push_back(model_entry("competitor_voter", c, v, *pool->member_voters[c][v]));
  }

  ojson filtered_vs_raw = ojson::array();
  auto record_raw = [&](const std::string& role, std::size_t idx, const EmbeddingModel& m) {
    const auto f = hits_at_k(m, g, queries, a.k, opt);
    const auto r = hits_at_k(m, g, queries, a.k, raw);
    filtered_vs_raw.push_back({{"role", role}, {"member", idx}, {"filtered_hits", f.hits_at_k}, {"raw_hits", r.hits_at_k}});
  };
  record_raw("baseline", 0, *ls.baseline);
  for (std::size_t c = 0; c < ls.competitors.size(); ++c) record_raw("competitor", c, *ls.competitors[c]);

  if (a.tau || a.tau_quantile) {
    out.tau = a.tau ? *a.tau : tau_from_gold_quantile(*ls.baseline, queries_from_split(g, a.reference_split), *a.tau_quantile);
    const auto table = answer_set_table(ls, queries, *out.tau, a.filtered ? &g : nullptr, s.threads);
    if (!ls.competitors.empty()) {
      out.set_ambiguity = set_ambiguity(table);
      out.set_discrepancy = set_discrepancy(table);
      out.set_agreement = agreement(table);
    }
    write_answer_sets_jsonl(w.file("answer_sets.jsonl"), table);
  }

  std::vector<SummaryRow> rows;
  const std::string method(to_string(s.model.method));
  for (const auto& r : out.reports) {
    const std::string tag = r.rule;
    write_conflicts_csv(w.file("conflicts_" + tag + ".csv"), r);
    write_query_flags_csv(w.file("queries_" + tag + ".csv"), r, queries);
    rows.push_back({method, r.rule == "none" ? "w/o" : r.rule, r.n_aggregate, r.n_competitors, r.baseline_hits,
                    r.ambiguity, r.discrepancy,
                    r.n_competitors ? std::optional<double>(r.bound.clamped) : std::nullopt});
  }
  write_summary_csv(w.file("summary.csv"), rows);
  w.file("summary.txt") << render_csv_text(w.file("summary.csv").str());

  ojson j;
  j["spec"] = spec_to_json(s);
  j["dataset_hash"] = g.content_hash_hex();
  j["n_queries"] = queries.size();
  j["level_set"] = {{"epsilon", ls.epsilon},
                    {"reference_split", to_string(ls.reference_split)},
                    {"baseline_reference_hits", ls.baseline_reference_hits()},
                    {"competitor_reference_hits",
                     [&] {
                       std::vector<double> v;
                       for (std::size_t c = 0; c < ls.competitors.size(); ++c) v.push_back(ls.competitor_reference_hits(c));
                       return v;
                     }()},
                    {"attempts", ls.attempts},
                    {"rejected", ls.rejected},
                    {"complete", ls.complete}};
  j["models"] = models;
  j["filtered_vs_raw"] = filtered_vs_raw;
  ojson reps = ojson::array();
  for (const auto& r : out.reports) reps.push_back(report_to_json(r));
  j["reports"] = reps;
  if (out.tau) {
    j["answer_sets"] = {{"tau", *out.tau},
                        {"ambiguity", out.set_ambiguity ? ojson(*out.set_ambiguity) : ojson(nullptr)},
                        {"discrepancy", out.set_discrepancy ? ojson(*out.set_discrepancy) : ojson(nullptr)},
                        {"agreement", out.set_agreement ? ojson(*out.set_agreement) : ojson(nullptr)}};
  }
  w.json("audit.json", j);
  if (a.save_checkpoints) {
    w.file("checkpoints/baseline.json") << serialize_checkpoint(*ls.baseline);
    for (std::size_t c = 0; c < ls.competitors.size(); ++c)
      w.file("checkpoints/competitor_" + std::to_string(c) + ".json") << serialize_checkpoint(*ls.competitors[c]);
  }
  w.flush();
  w.status("complete", "audit");
  return out;
}

struct SweepRow {
  double epsilon = 0.0;
  MultiplicityReport report;
};

/// One master pool of `pool_size` retrainings; each ε keeps the pool members
/// within ε on the reference split. Level sets are nested in ε.
inline std::vector<SweepRow> cmd_sweep_epsilon(const ExperimentSpec& s) {
  OutputWriter w(s.output_dir);
  w.status("running", "sweep-eps");
  const auto& a = s.audit;
  if (a.epsilons.empty()) throw ConfigError("sweep-eps needs audit.epsilons");
  const auto g = load_dataset(s);
  const auto opt = eval_options(s);
  const auto queries = queries_from_split(g, a.eval_split);
  const auto pool = train_candidate_pool(g, s.model, a.pool_size, level_set_options(s));

  std::vector<SweepRow> rows;
  auto& csv = w.file("sweep_eps.csv");
  csv << "epsilon,n_competitors,baseline_hits,mean_hits,min_hits,max_hits,ambiguity,discrepancy,bound,"
         "epsilon_realized,epsilon_effective\n";
  for (double eps : a.epsilons) {
    const auto ls = threshold_pool(pool, eps);
    auto r = evaluate_with_aggregation(ls, std::nullopt, 1, nullptr, g, queries, a.k, opt);
    std::optional<double> lo, hi;
    if (!r.competitor_hits.empty()) {
      lo = *std::min_element(r.competitor_hits.begin(), r.competitor_hits.end());
      hi = *std::max_element(r.competitor_hits.begin(), r.competitor_hits.end());
    }
    csv << fmt(eps) << ',' << r.n_competitors << ',' << fmt(r.baseline_hits) << ',' << fmt(r.mean_hits) << ','
        << fmt(lo) << ',' << fmt(hi) << ',' << fmt(r.ambiguity) << ',' << fmt(r.discrepancy) << ','
        << (r.n_competitors ? fmt(r.bound.clamped) : std::string()) << ',' << fmt(r.epsilon_realized) << ','
        << fmt(r.epsilon_effective) << '\n';
    rows.push_back({eps, std::move(r)});
  }
  ojson models = ojson::array();
  models.push_back(model_entry("baseline", 0, 0, *pool.baseline));
  for (std::size_t c = 0; c < pool.competitors.size(); ++c)
    models.push_back(model_entry("pool", c, 0, *pool.competitors[c]));
  ojson j;
  j["spec"] = spec_to_json(s);
  j["dataset_hash"] = g.content_hash_hex();
  j["baseline_reference_hits"] = pool.baseline_reference_hits();
  j["models"] = models;
  w.json("sweep_eps.json", j);
  w.flush();
  w.status("complete", "sweep-eps");
  return rows;
}

struct AggSweepRow {
  std::string rule;
  std::size_t n_aggregate = 1;
  MultiplicityReport report;
};

/// Metrics against the number of aggregated models, for every configured
/// rule, from one aggregation pool trained at the largest n.
inline std::vector<AggSweepRow> cmd_sweep_aggregation(const ExperimentSpec& s) {
  OutputWriter w(s.output_dir);
  w.status("running", "sweep-agg");
  const auto& a = s.audit;
  if (a.n_aggregate_list.empty()) throw ConfigError("sweep-agg needs audit.n_aggregate_list");
  if (a.rules.empty()) throw ConfigError("sweep-agg needs at least one voting rule");
  const auto g = load_dataset(s);
  const auto opt = eval_options(s);
  const auto queries = queries_from_split(g, a.eval_split);
  const auto ls = build_level_set(g, s.model, a.epsilon, a.n_competitors, a.n_competitors ? a.attempts() : 0,
                                  level_set_options(s));
  const std::size_t n_max = *std::max_element(a.n_aggregate_list.begin(), a.n_aggregate_list.end());
  const auto pool = train_aggregation_pool(g, ls, n_max, s.master_seed, s.threads);

  std::vector<AggSweepRow> rows;
  rows.push_back({"none", 1, evaluate_with_aggregation(ls, std::nullopt, 1, nullptr, g, queries, a.k, opt)});
  for (auto rule : a.rules)
    for (auto n : a.n_aggregate_list)
      rows.push_back({std::string(to_string(rule)), n, evaluate_with_aggregation(ls, rule, n, &pool, g, queries, a.k, opt)});

  auto& csv = w.file("sweep_agg.csv");
  csv << "rule,n_aggregate,n_competitors,baseline_hits,mean_hits,ambiguity,discrepancy,bound,epsilon_realized,"
         "reference_epsilon_realized,epsilon_deviation\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    csv << row.rule << ',' << row.n_aggregate << ',' << r.n_competitors << ',' << fmt(r.baseline_hits) << ','
        << fmt(r.mean_hits) << ',' << fmt(r.ambiguity) << ',' << fmt(r.discrepancy) << ','
        << (r.n_competitors ? fmt(r.bound.clamped) : std::string()) << ',' << fmt(r.epsilon_realized) << ','
        << fmt(r.reference_epsilon_realized) << ',' << fmt(r.epsilon_deviation) << '\n';
  }
  ojson models = ojson::array();
  models.push_back(model_entry("baseline", 0, 0, *ls.baseline));
  for (std::size_t c = 0; c < ls.competitors.size(); ++c) models.push_back(model_entry("competitor", c, 0, *ls.competitors[c]));
  for (std::size_t v = 1; v < pool.baseline_voters.size(); ++v)
    models.push_back(model_entry("baseline_voter", 0, v, *pool.baseline_voters[v]));
  for (std::size_t c = 0; c < pool.member_voters.size(); ++c)
    for (std::size_t v = 1; v < pool.member_voters[c].size(); ++v)
      models.push_back(model_entry("competitor_voter", c, v, *pool.member_voters[c][v]));
  ojson j;
  j["spec"] = spec_to_json(s);
  j["dataset_hash"] = g.content_hash_hex();
  j["models"] = models;
  w.json("sweep_agg.json", j);
  w.flush();
  w.status("complete", "sweep-agg");
  return rows;
}

/// Aggregates externally supplied profiles (interchange CSV) with one rule.
inline std::vector<AggregatedRanking> cmd_aggregate(const std::string& profiles_path, VotingRule rule,
                                                    const std::string& output_path) {
  std::ifstream in(profiles_path);
  if (!in) throw ConfigError("cannot open '" + profiles_path + "'");
  const auto profiles = read_profiles_csv(in, profiles_path);
  std::vector<AggregatedRanking> out;
  std::ostringstream csv;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    out.push_back(aggregate(profiles[i].profile, rule));
    write_aggregated_csv(csv, profiles[i].query_id, out.back(), i == 0);
  }
  if (output_path.empty() || output_path == "-") {
    std::cout << csv.str();
  } else {
    const fs::path p(output_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + output_path + "'");
    f << csv.str();
  }
  return out;
}

struct CorrelationRow {
  std::string variable;  // relation | entity
  std::string grouping;  // per_id | per_frequency
  std::string metric;    // ambiguity | discrepancy
  std::size_t n_groups = 0;
  SpearmanResult result;
};

struct GroupMetrics {
  std::string key;
  double frequency = 0.0;
  std::size_t n_queries = 0;
  double ambiguity = 0.0;
  double discrepancy = 0.0;
};

// Per-group α̂/δ̂ from a conflict matrix restricted to the group's queries.
inline GroupMetrics group_metrics(const std::string& key, double frequency, std::span<const std::size_t> query_ids,
                                  const ConflictMatrix& m) {
  GroupMetrics gm{key, frequency, query_ids.size(), 0.0, 0.0};
  std::size_t any = 0, worst = 0;
  std::vector<std::size_t> per(m.competitors, 0);
  for (auto q : query_ids) {
    bool hit = false;
    for (std::size_t c = 0; c < m.competitors; ++c) {
      per[c] += m.at(c, q);
      hit |= m.at(c, q) != 0;
    }
    any += hit;
  }
  for (auto p : per) worst = std::max(worst, p);
  gm.ambiguity = static_cast<double>(any) / static_cast<double>(query_ids.size());
  gm.discrepancy = static_cast<double>(worst) / static_cast<double>(query_ids.size());
  return gm;
}

inline ConflictMatrix read_conflicts_csv(const std::string& path, std::size_t n_queries) {
  const auto rows = read_csv_file(path);
  ConflictMatrix m;
  m.queries = n_queries;
  std::size_t max_c = 0;
  bool any = false;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 3) throw ParseError(path, i + 1, "expected 3 columns");
    max_c = std::max<std::size_t>(max_c, std::stoul(rows[i][0]));
    any = true;
  }
  m.competitors = any ? max_c + 1 : 0;
  m.cells.assign(m.competitors * m.queries, 0);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto c = std::stoul(rows[i][0]);
    const auto q = std::stoul(rows[i][1]);
    if (q >= n_queries) throw ParseError(path, i + 1, "query id out of range");
    m.cells[c * m.queries + q] = static_cast<std::uint8_t>(std::stoul(rows[i][2]));
  }
  return m;
}

/// Groups evaluation queries by the training frequency of their relation and
/// of their fixed entity, computes α̂/δ̂ per group from the audit's conflict
/// CSV, and correlates frequency with each metric.
inline std::vector<CorrelationRow> cmd_correlate(const ExperimentSpec& s, const std::string& audit_dir = {}) {
  const std::string dir = audit_dir.empty() ? s.output_dir : audit_dir;
  OutputWriter w(s.output_dir);
  const auto g = load_dataset(s);
  const auto queries = queries_from_split(g, s.audit.eval_split);
  const auto flag_rows = read_csv_file((fs::path(dir) / "queries_none.csv").string());
  if (flag_rows.size() != queries.size() + 1) throw DataError("audit query CSV does not match the evaluation split");
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& r = flag_rows[q + 1];
    if (r.size() < 5 || std::stoul(r[2]) != queries[q].fixed || std::stoul(r[3]) != queries[q].relation ||
        std::stoul(r[4]) != queries[q].gold)
      throw DataError("audit query CSV row " + std::to_string(q) + " does not match the dataset");
  }
  const auto m = read_conflicts_csv((fs::path(dir) / "conflicts_none.csv").string(), queries.size());
  if (m.competitors == 0) throw DataError("audit has no competitors; nothing to correlate");

  const auto rel_freq = relation_frequency(g);
  const auto ent_freq = entity_frequency(g);
  std::vector<CorrelationRow> out;
  auto& groups_csv = w.file("correlate_groups.csv");
  groups_csv << "variable,grouping,group,frequency,n_queries,ambiguity,discrepancy\n";
  ojson notes = ojson::array();

  for (const std::string variable : {"relation", "entity"}) {
    const bool rel = variable == "relation";
    const std::size_t n_ids = rel ? g.num_relations() : g.num_entities();
    std::vector<std::vector<std::size_t>> by_id(n_ids);
    for (std::size_t q = 0; q < queries.size(); ++q) by_id[rel ? queries[q].relation : queries[q].fixed].push_back(q);
    std::map<std::size_t, std::vector<std::size_t>> by_freq;
    std::size_t dropped = 0;
    for (std::size_t id = 0; id < n_ids; ++id) {
      if (by_id[id].empty()) {
        ++dropped;
        continue;
      }
      auto& v = by_freq[rel ? rel_freq[id] : ent_freq[id]];
      v.insert(v.end(), by_id[id].begin(), by_id[id].end());
    }
    if (dropped) notes.push_back(variable + ": " + std::to_string(dropped) + " ids without evaluation queries dropped");

    for (const std::string grouping : {"per_id", "per_frequency"}) {
      std::vector<GroupMetrics> gms;
      if (grouping == "per_id") {
        for (std::size_t id = 0; id < n_ids; ++id) {
          if (by_id[id].empty()) continue;
          std::sort(by_id[id].begin(), by_id[id].end());
          const auto& label = rel ? g.relations().label(static_cast<std::uint32_t>(id))
                                  : g.entities().label(static_cast<std::uint32_t>(id));
          gms.push_back(group_metrics(label, static_cast<double>(rel ? rel_freq[id] : ent_freq[id]), by_id[id], m));
        }
      } else {
        for (auto& [f, ids] : by_freq) {
          std::sort(ids.begin(), ids.end());
          gms.push_back(group_metrics(std::to_string(f), static_cast<double>(f), ids, m));
        }
      }
      std::vector<double> freq, amb, disc;
      for (const auto& gm : gms) {
        groups_csv << variable << ',' << grouping << ',' << gm.key << ',' << fmt(gm.frequency) << ',' << gm.n_queries
                   << ',' << fmt(gm.ambiguity) << ',' << fmt(gm.discrepancy) << '\n';
        freq.push_back(gm.frequency);
        amb.push_back(gm.ambiguity);
        disc.push_back(gm.discrepancy);
      }
      for (const std::string metric : {"ambiguity", "discrepancy"}) {
        CorrelationRow row{variable, grouping, metric, gms.size(), {}};
        if (gms.size() >= 3) {
          row.result = spearman(freq, metric == "ambiguity" ? amb : disc);
        } else {
          row.result.degenerate = true;
          row.result.n = gms.size();
          notes.push_back(variable + "/" + grouping + ": fewer than 3 groups");
        }
        out.push_back(row);
      }
    }
  }
  auto& csv = w.file("correlate.csv");
  csv << "variable,grouping,metric,n_groups,rho,p_value,degenerate\n";
  for (const auto& r : out) {
    csv << r.variable << ',' << r.grouping << ',' << r.metric << ',' << r.n_groups << ',' << fmt(r.result.rho) << ','
        << fmt(r.result.p_value) << ',' << (r.result.degenerate ? 1 : 0) << '\n';
  }
  ojson j;
  j["spec"] = spec_to_json(s);
  j["dataset_hash"] = g.content_hash_hex();
  j["notes"] = notes;
  w.json("correlate.json", j);
  w.flush();
  return out;
}

/// Re-renders the human-readable tables of an output directory from its CSVs.
inline std::string cmd_report(const std::string& dir) {
  std::ostringstream out;
  bool any = false;
  for (const char* name : {"summary.csv", "sweep_eps.csv", "sweep_agg.csv", "correlate.csv"}) {
    const fs::path p = fs::path(dir) / name;
    if (!fs::exists(p)) continue;
    any = true;
    out << "== " << name << " ==\n" << render_table(read_csv_file(p.string())) << '\n';
  }
  if (!any) throw ConfigError("no report CSVs in '" + dir + "'");
  return out.str();
}

}  // namespace kgpm
