#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cocodr/archive.hpp"
#include "cocodr/clustering.hpp"
#include "cocodr/corpus.hpp"
#include "cocodr/diagnostics.hpp"
#include "cocodr/encoder.hpp"
#include "cocodr/error.hpp"
#include "cocodr/log.hpp"
#include "cocodr/retrieval.hpp"
#include "cocodr/synthetic.hpp"
#include "cocodr/textstats.hpp"
#include "cocodr/trainer.hpp"

namespace cocodr::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Bad invocation: missing inputs, malformed flag values.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Flag values are read as JSON when they parse as JSON and as plain strings otherwise.
json parse_value(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) return json(text);
  return v;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config", "config file " + path.string() + " is not valid JSON");
  return j;
}

fs::path required_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw UsageError("missing input file " + path.string());
  return path;
}

fs::path required_dir(const std::string& dir, const char* flag) {
  if (dir.empty()) throw UsageError(std::string(flag) + " is required");
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir);
  return dir;
}

fs::path find_qrels(const fs::path& dir, const std::string& explicit_path) {
  if (!explicit_path.empty()) return required_file(explicit_path);
  for (const char* rel : {"qrels.tsv", "qrels/test.tsv", "qrels/train.tsv", "qrels/dev.tsv"}) {
    if (fs::is_regular_file(dir / rel)) return dir / rel;
  }
  throw UsageError("no qrels file in " + dir.string() + " (looked for qrels.tsv and qrels/{test,train,dev}.tsv)");
}

std::string dir_name(const fs::path& dir) {
  const auto clean = dir.lexically_normal();
  auto name = clean.filename().string();
  if (name.empty() || name == ".") name = clean.parent_path().filename().string();
  return name.empty() ? dir.string() : name;
}

struct LabeledTask {
  Corpus corpus;
  QuerySet queries;
  QrelSet qrels;
  json inputs;
};

LabeledTask load_labeled(const fs::path& dir, const std::string& qrels_override) {
  const auto corpus_path = required_file(dir / "corpus.jsonl");
  const auto queries_path = required_file(dir / "queries.jsonl");
  const auto qrels_path = find_qrels(dir, qrels_override);
  LabeledTask t{load_corpus(corpus_path), load_queries(queries_path), load_qrels(qrels_path), json::object()};
  t.qrels.validate(t.corpus, t.queries);
  t.inputs = {{"corpus", corpus_path.string()}, {"queries", queries_path.string()}, {"qrels", qrels_path.string()}};
  log::info("loaded " + std::to_string(t.corpus.size()) + " documents, " + std::to_string(t.queries.size()) +
            " queries, " + std::to_string(t.qrels.size()) + " judgments from " + dir.string());
  return t;
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
  fs::create_directories(out);
  return out;
}

struct Shortcut {
  std::string key;
  std::string value;
  CLI::Option* option = nullptr;
};

/// One subcommand: its CLI11 app, the options shared by every command, and
/// the shortcut flags that map onto configuration keys.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& description)
      : name_(name), app_(parent.add_subcommand(name, description)) {
    app_->add_option("--config", config_path_, "JSON file of flat configuration keys (or a resolved_config.json)");
    app_->add_option("--set", sets_, "Override one configuration key, KEY=VALUE (repeatable)");
    shortcut("--seed", "seed", "Run seed");
    shortcut("--threads", "threads", "Worker threads");
  }

  CLI::App* app() { return app_; }
  const std::string& name() const { return name_; }

  void shortcut(const std::string& flag, const std::string& key, const std::string& help) {
    auto& s = shortcuts_.emplace_back();
    s.key = key;
    s.option = app_->add_option(flag, s.value, help + " [" + key + "]");
  }

  /// Defaults, then the config file, then --set and shortcut flags.
  RunConfig resolve(const std::string& stage = {}) const {
    RunConfig c;
    if (!stage.empty()) c.stage = stage;
    json file = json::object();
    if (!config_path_.empty()) {
      file = read_json_file(config_path_);
      if (file.is_object() && file.contains("config") && file.contains("command")) file = file.at("config");
      if (!file.is_object()) throw ConfigError("config", "config file must hold a JSON object");
      for (const auto& [k, v] : file.items()) log::info("config file: " + k + " = " + v.dump());
      c.apply(file);
    }
    json flags = json::object();
    for (const auto& s : sets_) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--set expects KEY=VALUE, got '" + s + "'");
      flags[s.substr(0, eq)] = parse_value(s.substr(eq + 1));
    }
    for (const auto& s : shortcuts_)
      if (s.option->count() > 0) flags[s.key] = parse_value(s.value);
    for (const auto& [k, v] : flags.items()) {
      log::info("flag: " + k + " = " + v.dump() + (file.contains(k) ? " (overrides config file)" : ""));
    }
    c.apply(flags);
    if (!stage.empty() && c.stage != stage)
      throw ConfigError("stage", "'" + c.stage + "' does not match the " + name_ + " command");
    c.validate();
    return c;
  }

  std::function<int()> action;

 private:
  std::string name_;
  CLI::App* app_;
  std::string config_path_;
  std::vector<std::string> sets_;
  std::deque<Shortcut> shortcuts_;
};

/// Writes resolved_config.json (reproducible) and run_info.json (timestamps).
class RunRecord {
 public:
  RunRecord(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {
    started_ = utc_now();
    t0_ = std::chrono::steady_clock::now();
  }
  void resolved(const json& inputs, const RunConfig& config) const {
    write_json(out_ / "resolved_config.json",
               {{"command", command_}, {"inputs", inputs}, {"config", config.to_json()}});
  }
  void finish() const {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    write_json(out_ / "run_info.json",
               {{"command", command_}, {"started_utc", started_}, {"finished_utc", utc_now()},
                {"elapsed_seconds", secs}});
  }

 private:
  std::string command_;
  fs::path out_;
  std::string started_;
  std::chrono::steady_clock::time_point t0_;
};

Params load_init(const std::string& path, RunConfig& config) {
  if (path.empty()) return Params::initialize(config.encoder);
  Params p = load_checkpoint(required_file(path));
  if (!(p.config() == config.encoder)) log::info("encoder settings taken from checkpoint " + path);
  config.encoder = p.config();
  return p;
}

std::string episodes_json(const std::vector<EpisodeRecord>& episodes) {
  json arr = json::array();
  for (const auto& e : episodes) {
    json j = {{"index", e.index},
              {"negatives", to_string(e.negatives)},
              {"mean_loss", e.mean_loss},
              {"steps", e.steps},
              {"fallback_queries", e.fallback_queries}};
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

void add_validate(CLI::App& app, std::deque<Command>& commands) {
  auto& cmd = commands.emplace_back(app, "validate", "Load a BEIR-format task and check its consistency");
  auto data = std::make_shared<std::string>();
  auto qrels = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  cmd.app()->add_option("--data", *data, "Task directory with corpus.jsonl, queries.jsonl and qrels")->required();
  cmd.app()->add_option("--qrels", *qrels, "Explicit qrels TSV");
  cmd.app()->add_option("--out", *out, "Also write summary.json here");
  cmd.action = [&cmd, data, qrels, out] {
    const RunConfig config = cmd.resolve();
    const auto task = load_labeled(required_dir(*data, "--data"), *qrels);
    std::size_t with_positive = 0;
    std::size_t short_docs = 0;
    for (const auto& q : task.queries)
      if (!task.qrels.positives(q.id).empty()) ++with_positive;
    for (const auto& d : task.corpus)
      if (d.tokens.size() < 2 * config.pretrain.span_len) ++short_docs;
    const json summary = {{"documents", task.corpus.size()},
                          {"queries", task.queries.size()},
                          {"judgments", task.qrels.size()},
                          {"queries_with_positive", with_positive},
                          {"documents_too_short_for_span_pairs", short_docs}};
    std::cout << summary.dump(2) << "\n";
    if (!out->empty()) {
      const auto dir = prepare_out(*out);
      RunRecord rec("validate", dir);
      rec.resolved(task.inputs, config);
      write_json(dir / "summary.json", summary);
      rec.finish();
    }
    return kOk;
  };
}

void add_analyze_shift(CLI::App& app, std::deque<Command>& commands) {
  auto& cmd = commands.emplace_back(app, "analyze-shift", "Weighted-Jaccard shift between a source and a target task");
  auto source = std::make_shared<std::string>();
  auto target = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  cmd.app()->add_option("--source-dir", *source, "Source task directory")->required();
  cmd.app()->add_option("--target-dir", *target, "Target task directory")->required();
  cmd.app()->add_option("--out", *out, "Output directory")->required();
  cmd.action = [&cmd, source, target, out] {
    const RunConfig config = cmd.resolve();
    const auto sdir = required_dir(*source, "--source-dir");
    const auto tdir = required_dir(*target, "--target-dir");
    const json inputs = {{"source_corpus", required_file(sdir / "corpus.jsonl").string()},
                         {"source_queries", required_file(sdir / "queries.jsonl").string()},
                         {"target_corpus", required_file(tdir / "corpus.jsonl").string()},
                         {"target_queries", required_file(tdir / "queries.jsonl").string()}};
    const auto dir = prepare_out(*out);
    RunRecord rec("analyze-shift", dir);
    rec.resolved(inputs, config);
    const auto sc = load_corpus(sdir / "corpus.jsonl");
    const auto sq = load_queries(sdir / "queries.jsonl");
    const auto tc = load_corpus(tdir / "corpus.jsonl");
    const auto tq = load_queries(tdir / "queries.jsonl");
    auto report = shift_report(sc, sq, tc, tq);
    report.source_name = dir_name(sdir);
    report.target_name = dir_name(tdir);
    write_text_file(dir / "shift.tsv", ShiftReport::tsv_header() + "\n" + report.tsv_row() + "\n");
    write_text_file(dir / "shift.json", report.to_json() + "\n");
    std::cout << report.to_json() << "\n";
    rec.finish();
    return kOk;
  };
}

void add_pretrain(CLI::App& app, std::deque<Command>& commands) {
  auto& cmd = commands.emplace_back(app, "pretrain", "Span-pair contrastive pretraining on one or more corpora");
  auto data = std::make_shared<std::vector<std::string>>();
  auto init = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  cmd.app()->add_option("--data", *data, "Directory with corpus.jsonl (repeatable)")->required();
  cmd.app()->add_option("--init", *init, "Start from this checkpoint");
  cmd.app()->add_option("--out", *out, "Output directory")->required();
  cmd.shortcut("--epochs", "pretrain.epochs", "Passes over the corpora");
  cmd.shortcut("--span-len", "pretrain.span_len", "Tokens per span");
  cmd.shortcut("--batch-size", "pretrain.batch_size", "Documents per batch");
  cmd.shortcut("--lr", "pretrain.learning_rate", "Peak learning rate");
  cmd.action = [&cmd, data, init, out] {
    RunConfig config = cmd.resolve("pretrain");
    json inputs = {{"corpora", json::array()}, {"init", *init}};
    for (const auto& d : *data) inputs["corpora"].push_back(required_file(fs::path(d) / "corpus.jsonl").string());
    Params start = load_init(*init, config);
    const auto dir = prepare_out(*out);
    RunRecord rec("pretrain", dir);
    rec.resolved(inputs, config);
    std::vector<Corpus> corpora;
    for (const auto& d : *data) corpora.push_back(load_corpus(fs::path(d) / "corpus.jsonl"));
    std::vector<const Corpus*> ptrs;
    for (const auto& c : corpora) ptrs.push_back(&c);
    const auto result = pretrain_coco(config, ptrs, std::move(start));
    save_checkpoint(dir / "checkpoint.bin", result.params);
    std::string tsv = "epoch\tloss\tpartner_top1\n";
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
      tsv += std::to_string(e + 1) + '\t' + fmt17(result.epoch_losses[e]) + '\t' + fmt17(result.epoch_top1[e]) + '\n';
    write_text_file(dir / "pretrain_log.tsv", tsv);
    write_json(dir / "pretrain_summary.json", {{"documents", result.documents}, {"steps", result.steps}});
    rec.finish();
    return kOk;
  };
}

void add_finetune(CLI::App& app, std::deque<Command>& commands) {
  auto& cmd = commands.emplace_back(app, "finetune", "Episode-based fine-tuning with iDRO or a baseline weighting");
  auto data = std::make_shared<std::string>();
  auto qrels = std::make_shared<std::string>();
  auto init = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto resume = std::make_shared<bool>(false);
  cmd.app()->add_option("--data", *data, "Source task directory")->required();
  cmd.app()->add_option("--qrels", *qrels, "Explicit qrels TSV");
  cmd.app()->add_option("--init", *init, "Start from this checkpoint (default: fresh initialization)");
  cmd.app()->add_option("--out", *out, "Output directory")->required();
  cmd.app()->add_flag("--resume", *resume, "Continue from finetune_state.bin in --out when present");
  cmd.shortcut("--weighting", "idro.weighting", "idro, groupdro, uniform or erm");
  cmd.shortcut("--k", "idro.clusters", "K-Means clusters");
  cmd.shortcut("--beta", "idro.beta", "Difficulty exponent");
  cmd.shortcut("--tau", "idro.tau", "Robust-weight temperature (inf freezes omega)");
  cmd.shortcut("--episodes", "finetune.episodes", "Negative-refresh episodes");
  cmd.shortcut("--epochs", "finetune.epochs_per_episode", "Passes over the queries per episode");
  cmd.shortcut("--batch-size", "finetune.batch_size", "Queries per step");
  cmd.shortcut("--lr", "finetune.learning_rate", "Peak learning rate");
  cmd.shortcut("--negatives", "finetune.negatives_per_query", "Negatives per training triplet");
  cmd.action = [&cmd, data, qrels, init, out, resume] {
    RunConfig config = cmd.resolve("finetune");
    const auto task = load_labeled(required_dir(*data, "--data"), *qrels);
    Params start = load_init(*init, config);
    json inputs = task.inputs;
    inputs["init"] = *init;
    const auto dir = prepare_out(*out);
    const auto state_path = dir / "finetune_state.bin";
    RunRecord rec("finetune", dir);
    rec.resolved(inputs, config);
    auto trainer = (*resume && fs::exists(state_path))
                       ? Finetuner::resume(config, task.corpus, task.queries, task.qrels, state_path)
                       : Finetuner(config, task.corpus, task.queries, task.qrels, std::move(start));
    if (*resume && fs::exists(state_path))
      log::info("resumed at episode " + std::to_string(trainer.next_episode()) + " from " + state_path.string());
    trainer.run([&](const Finetuner& t) {
      save_checkpoint(dir / "checkpoint.bin", t.params());
      write_text_file(dir / "training_log.tsv", t.log().to_tsv());
      write_text_file(dir / "episodes.json", episodes_json(t.episodes()));
      if (const auto& last = t.episodes().back(); last.clusters) save_cluster_model(dir / "clusters.bin", *last.clusters);
      t.save_state(state_path);
      log::info("episode " + std::to_string(t.episodes().back().index) + " done, mean loss " +
                fmt17(t.episodes().back().mean_loss));
    });
    save_checkpoint(dir / "checkpoint.bin", trainer.params());
    write_text_file(dir / "training_log.tsv", trainer.log().to_tsv());
    write_text_file(dir / "episodes.json", episodes_json(trainer.episodes()));
    rec.finish();
    return kOk;
  };
}

void add_mine(CLI::App& app, std::deque<Command>& commands) {
  auto& cmd = commands.emplace_back(app, "mine", "Mine negative pools with a checkpoint or BM25");
  auto data = std::make_shared<std::string>();
  auto qrels = std::make_shared<std::string>();
  auto checkpoint = std::make_shared<std::string>();
  auto bm25 = std::make_shared<bool>(false);
  auto out = std::make_shared<std::string>();
  cmd.app()->add_option("--data", *data, "Task directory")->required();
  cmd.app()->add_option("--qrels", *qrels, "Explicit qrels TSV");
  auto* ck = cmd.app()->add_option("--checkpoint", *checkpoint, "Dense checkpoint");
  auto* bf = cmd.app()->add_flag("--bm25", *bm25, "Use BM25 instead of a checkpoint");
  ck->excludes(bf);
  cmd.app()->add_option("--out", *out, "Output directory")->required();
  cmd.shortcut("--depth", "finetune.mining_depth", "Retrieved documents per query");
  cmd.action = [&cmd, data, qrels, checkpoint, bm25, out] {
    RunConfig config = cmd.resolve();
    if (!*bm25 && checkpoint->empty()) throw UsageError("mine needs --checkpoint or --bm25");
    const auto task = load_labeled(required_dir(*data, "--data"), *qrels);
    json inputs = task.inputs;
    inputs["checkpoint"] = *checkpoint;
    inputs["bm25"] = *bm25;
    std::optional<Params> params;
    if (!*bm25) params = load_init(*checkpoint, config);
    const auto dir = prepare_out(*out);
    RunRecord rec("mine", dir);
    rec.resolved(inputs, config);
    const auto seed = derive_seed(config.seed, 0x300);
    const auto pools =
        *bm25 ? mine_negatives_bm25(Bm25Index(task.corpus, config.bm25), task.queries, task.corpus, task.qrels,
                                    config.finetune.mining_depth, seed)
              : mine_negatives(*params, task.queries, task.corpus, task.qrels, config.finetune.mining_depth, seed,
                               config.threads);
    write_negative_pools(dir / "negatives.tsv", pools);
    write_json(dir / "mining_summary.json",
               {{"queries", pools.pools.size()}, {"fallback_queries", pools.fallback_queries}});
    rec.finish();
    return kOk;
  };
}

void add_evaluate(CLI::App& app, std::deque<Command>& commands) {
  auto& cmd = commands.emplace_back(app, "evaluate", "nDCG@10 and recall of a checkpoint or BM25 on a task");
  auto data = std::make_shared<std::string>();
  auto qrels = std::make_shared<std::string>();
  auto checkpoint = std::make_shared<std::string>();
  auto bm25 = std::make_shared<bool>(false);
  auto out = std::make_shared<std::string>();
  auto tag = std::make_shared<std::string>("cocodr");
  cmd.app()->add_option("--data", *data, "Task directory")->required();
  cmd.app()->add_option("--qrels", *qrels, "Explicit qrels TSV");
  auto* ck = cmd.app()->add_option("--checkpoint", *checkpoint, "Dense checkpoint");
  auto* bf = cmd.app()->add_flag("--bm25", *bm25, "Evaluate BM25 instead of a checkpoint");
  ck->excludes(bf);
  cmd.app()->add_option("--out", *out, "Output directory")->required();
  cmd.app()->add_option("--tag", *tag, "Run tag in the TREC run file");
  cmd.action = [&cmd, data, qrels, checkpoint, bm25, out, tag] {
    RunConfig config = cmd.resolve();
    if (!*bm25 && checkpoint->empty()) throw UsageError("evaluate needs --checkpoint or --bm25");
    const auto task = load_labeled(required_dir(*data, "--data"), *qrels);
    json inputs = task.inputs;
    inputs["checkpoint"] = *checkpoint;
    inputs["bm25"] = *bm25;
    inputs["tag"] = *tag;
    std::optional<Params> params;
    if (!*bm25) params = load_init(*checkpoint, config);
    const auto dir = prepare_out(*out);
    RunRecord rec("evaluate", dir);
    rec.resolved(inputs, config);
    std::vector<RankedList> runs;
    EvalMetrics metrics;
    if (*bm25) {
      const Bm25Index index(task.corpus, config.bm25);
      for (const auto& q : task.queries) runs.push_back(index.search(q.tokens, 100, q.id));
      metrics = evaluate_runs(runs, task.qrels);
    } else {
      metrics = evaluate(*params, task.corpus, task.queries, task.qrels, config.threads, &runs);
    }
    write_text_file(dir / "metrics.json", metrics.to_json() + "\n");
    write_text_file(dir / "metrics.tsv", EvalMetrics::tsv_header() + "\n" + metrics.tsv_row(dir_name(*data)) + "\n");
    write_trec_run(dir / "run.trec", runs, *tag);
    std::cout << "nDCG@10 " << fmt17(metrics.ndcg_at_10) << "  recall@100 " << fmt17(metrics.recall_at_100) << "  ("
              << metrics.judged_queries << " judged queries)\n";
    rec.finish();
    return kOk;
  };
}

void add_diagnose(CLI::App& app, std::deque<Command>& commands) {
  auto& cmd = commands.emplace_back(app, "diagnose", "Alignment and uniformity of a checkpoint on a corpus");
  auto data = std::make_shared<std::string>();
  auto checkpoint = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto pairs = std::make_shared<std::size_t>(1000);
  auto singles = std::make_shared<std::size_t>(1000);
  cmd.app()->add_option("--data", *data, "Directory with corpus.jsonl")->required();
  cmd.app()->add_option("--checkpoint", *checkpoint, "Checkpoint to diagnose")->required();
  cmd.app()->add_option("--out", *out, "Output directory")->required();
  cmd.app()->add_option("--pairs", *pairs, "Maximum span pairs")->capture_default_str();
  cmd.app()->add_option("--singles", *singles, "Maximum embeddings for uniformity")->capture_default_str();
  cmd.shortcut("--span-len", "pretrain.span_len", "Tokens per span");
  cmd.action = [&cmd, data, checkpoint, out, pairs, singles] {
    RunConfig config = cmd.resolve();
    const auto corpus_path = required_file(fs::path(*data) / "corpus.jsonl");
    Params params = load_init(*checkpoint, config);
    const json inputs = {{"corpus", corpus_path.string()}, {"checkpoint", *checkpoint}, {"pairs", *pairs},
                         {"singles", *singles}};
    const auto dir = prepare_out(*out);
    RunRecord rec("diagnose", dir);
    rec.resolved(inputs, config);
    const auto corpus = load_corpus(corpus_path);
    const auto sample = sample_pairs(params, corpus, config.pretrain.span_len, *pairs, *singles, config.seed);
    const auto report = diagnose(sample, dir_name(*data));
    write_text_file(dir / "diagnostics.json", report.to_json() + "\n");
    std::cout << report.to_json() << "\n";
    rec.finish();
    return kOk;
  };
}

void write_task(const fs::path& dir, const SyntheticTask& task) {
  fs::create_directories(dir);
  write_corpus(task.corpus, dir / "corpus.jsonl");
  write_queries(task.queries, dir / "queries.jsonl");
  write_qrels(task.qrels, dir / "qrels.tsv");
}

void add_make_synthetic(CLI::App& app, std::deque<Command>& commands) {
  auto& cmd = commands.emplace_back(app, "make-synthetic", "Write a synthetic benchmark in BEIR layout");
  auto kind = std::make_shared<std::string>("two-domain");
  auto out = std::make_shared<std::string>();
  cmd.app()
      ->add_option("--kind", *kind, "two-domain (source/ and target/) or rare-cluster (one task plus groups.tsv)")
      ->check(CLI::IsMember({"two-domain", "rare-cluster"}))
      ->capture_default_str();
  cmd.app()->add_option("--out", *out, "Output directory")->required();
  cmd.action = [&cmd, kind, out] {
    const RunConfig config = cmd.resolve();
    const auto dir = prepare_out(*out);
    RunRecord rec("make-synthetic", dir);
    rec.resolved({{"kind", *kind}}, config);
    if (*kind == "two-domain") {
      const auto bench = make_two_domain_benchmark(TwoDomainSpec{}, config.seed);
      write_task(dir / "source", bench.source);
      write_task(dir / "target", bench.target);
    } else {
      const auto merged = make_rare_cluster_task(RareClusterSpec{}, config.seed);
      write_task(dir, merged.task);
      std::string groups = "query-id\tgroup\n";
      for (std::size_t i = 0; i < merged.task.queries.size(); ++i)
        groups += merged.task.queries[i].id + '\t' + std::to_string(merged.query_group[i]) + '\n';
      write_text_file(dir / "groups.tsv", groups);
    }
    rec.finish();
    return kOk;
  };
}

int report(const std::string& kind, const std::string& message, int code) {
  std::cerr << "cocodr: " << kind << ": " << message << "\n";
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"COCO-DR: contrastive pretraining and implicit DRO fine-tuning for dense retrieval", "cocodr"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  std::deque<Command> commands;
  add_validate(app, commands);
  add_analyze_shift(app, commands);
  add_pretrain(app, commands);
  add_finetune(app, commands);
  add_mine(app, commands);
  add_evaluate(app, commands);
  add_diagnose(app, commands);
  add_make_synthetic(app, commands);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }
  log::set_min_level(quiet ? log::Level::kWarn : log::Level::kInfo);

  for (auto& cmd : commands) {
    if (!cmd.app()->parsed()) continue;
    try {
      return cmd.action();
    } catch (const UsageError& e) {
      return report("usage error", e.what(), kUsageError);
    } catch (const ConfigError& e) {
      return report("invalid configuration", e.what(), kUsageError);
    } catch (const DataError& e) {
      return report("data error", e.what(), kDataError);
    } catch (const fs::filesystem_error& e) {
      return report("file error", e.what(), kDataError);
    } catch (const ContractViolation& e) {
      return report("internal error", e.what(), kInternalError);
    } catch (const std::exception& e) {
      return report("internal error", e.what(), kInternalError);
    }
  }
  return kUsageError;
}

int main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace cocodr::cli
