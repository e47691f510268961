#include "cocodr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "cocodr/archive.hpp"
#include "cocodr/error.hpp"
#include "cocodr/log.hpp"

namespace cocodr {

namespace {

using nlohmann::json;

constexpr std::uint64_t kPretrainStream = 0x5000;
constexpr std::uint64_t kClusterStream = 0x100;
constexpr std::uint64_t kShuffleStream = 0x200;
constexpr std::uint64_t kMiningStream = 0x300;

std::size_t get_size(const std::string& key, const json& v) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
    throw ConfigError(key, "expected a non-negative integer");
  return v.get<std::size_t>();
}

double get_double(const std::string& key, const json& v) {
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  return v.get<double>();
}

bool get_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
  return v.get<bool>();
}

std::string get_string(const std::string& key, const json& v) {
  if (!v.is_string()) throw ConfigError(key, "expected a string");
  return v.get<std::string>();
}

struct Field {
  const char* key;
  json (*get)(const RunConfig&);
  void (*set)(RunConfig&, const std::string&, const json&);
};

#define COCODR_SIZE_FIELD(KEY, MEMBER)                                                          \
  Field {                                                                                       \
    KEY, [](const RunConfig& c) { return json(c.MEMBER); },                                     \
        [](RunConfig& c, const std::string& k, const json& v) {                                 \
          c.MEMBER = static_cast<decltype(c.MEMBER)>(get_size(k, v));                           \
        }                                                                                       \
  }
#define COCODR_DOUBLE_FIELD(KEY, MEMBER)                                                                     \
  Field {                                                                                                    \
    KEY, [](const RunConfig& c) { return json(c.MEMBER); },                                                  \
        [](RunConfig& c, const std::string& k, const json& v) { c.MEMBER = get_double(k, v); }               \
  }
#define COCODR_BOOL_FIELD(KEY, MEMBER)                                                         \
  Field {                                                                                      \
    KEY, [](const RunConfig& c) { return json(c.MEMBER); },                                    \
        [](RunConfig& c, const std::string& k, const json& v) { c.MEMBER = get_bool(k, v); }  \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"stage", [](const RunConfig& c) { return json(c.stage); },
            [](RunConfig& c, const std::string& k, const json& v) { c.stage = get_string(k, v); }},
      COCODR_SIZE_FIELD("seed", seed),
      COCODR_SIZE_FIELD("threads", threads),
      COCODR_SIZE_FIELD("encoder.feature_dim", encoder.feature_dim),
      COCODR_SIZE_FIELD("encoder.embed_dim", encoder.embed_dim),
      COCODR_BOOL_FIELD("encoder.hidden", encoder.hidden),
      COCODR_SIZE_FIELD("encoder.hash_seed", encoder.hash_seed),
      COCODR_SIZE_FIELD("encoder.init_seed", encoder.init_seed),
      COCODR_DOUBLE_FIELD("encoder.init_scale", encoder.init_scale),
      Field{"optimizer.kind", [](const RunConfig& c) { return json(to_string(c.optimizer.kind)); },
            [](RunConfig& c, const std::string& k, const json& v) {
              c.optimizer.kind = optimizer_kind_from_string(get_string(k, v));
            }},
      COCODR_DOUBLE_FIELD("optimizer.beta1", optimizer.beta1),
      COCODR_DOUBLE_FIELD("optimizer.beta2", optimizer.beta2),
      COCODR_DOUBLE_FIELD("optimizer.epsilon", optimizer.epsilon),
      COCODR_DOUBLE_FIELD("optimizer.weight_decay", optimizer.weight_decay),
      COCODR_DOUBLE_FIELD("optimizer.max_grad_norm", optimizer.max_grad_norm),
      COCODR_SIZE_FIELD("pretrain.span_len", pretrain.span_len),
      COCODR_SIZE_FIELD("pretrain.epochs", pretrain.epochs),
      COCODR_SIZE_FIELD("pretrain.batch_size", pretrain.batch_size),
      COCODR_DOUBLE_FIELD("pretrain.learning_rate", pretrain.learning_rate),
      COCODR_DOUBLE_FIELD("pretrain.warmup_fraction", pretrain.warmup_fraction),
      COCODR_SIZE_FIELD("finetune.episodes", finetune.episodes),
      COCODR_SIZE_FIELD("finetune.epochs_per_episode", finetune.epochs_per_episode),
      COCODR_SIZE_FIELD("finetune.batch_size", finetune.batch_size),
      COCODR_SIZE_FIELD("finetune.negatives_per_query", finetune.negatives_per_query),
      COCODR_SIZE_FIELD("finetune.mining_depth", finetune.mining_depth),
      COCODR_DOUBLE_FIELD("finetune.learning_rate", finetune.learning_rate),
      COCODR_DOUBLE_FIELD("finetune.warmup_fraction", finetune.warmup_fraction),
      COCODR_BOOL_FIELD("finetune.in_batch_negatives", finetune.in_batch_negatives),
      COCODR_BOOL_FIELD("finetune.carry_omega", finetune.carry_omega),
      Field{"idro.weighting", [](const RunConfig& c) { return json(to_string(c.idro.weighting)); },
            [](RunConfig& c, const std::string& k, const json& v) {
              c.idro.weighting = weighting_from_string(get_string(k, v));
            }},
      COCODR_SIZE_FIELD("idro.clusters", idro.clusters),
      COCODR_DOUBLE_FIELD("idro.beta", idro.beta),
      Field{"idro.tau",
            [](const RunConfig& c) { return std::isinf(c.idro.tau) ? json("inf") : json(c.idro.tau); },
            [](RunConfig& c, const std::string& k, const json& v) {
              if (v.is_string()) {
                if (v.get<std::string>() != "inf") throw ConfigError(k, "expected a number or \"inf\"");
                c.idro.tau = std::numeric_limits<double>::infinity();
              } else {
                c.idro.tau = get_double(k, v);
              }
            }},
      COCODR_DOUBLE_FIELD("idro.groupdro_step", idro.groupdro_step),
      Field{"clustering.metric", [](const RunConfig& c) { return json(to_string(c.clustering.metric)); },
            [](RunConfig& c, const std::string& k, const json& v) {
              c.clustering.metric = cluster_metric_from_string(get_string(k, v));
            }},
      COCODR_SIZE_FIELD("clustering.max_iters", clustering.max_iters),
      COCODR_DOUBLE_FIELD("bm25.k1", bm25.k1),
      COCODR_DOUBLE_FIELD("bm25.b", bm25.b),
  };
  return table;
}

#undef COCODR_SIZE_FIELD
#undef COCODR_DOUBLE_FIELD
#undef COCODR_BOOL_FIELD

void check(bool ok, const char* field, const char* what) {
  if (!ok) throw ConfigError(field, what);
}

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }
bool unit_interval(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// Draws min(count, pool.size()) distinct entries.
std::vector<std::size_t> sample_without_replacement(std::size_t pool, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t n = std::min(count, pool);
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.uniform_index(pool - i)]);
  idx.resize(n);
  return idx;
}

std::set<std::string> positive_set(const QrelSet& qrels, const std::string& qid) {
  const auto pos = qrels.positives(qid);
  return {pos.begin(), pos.end()};
}

/// Keeps non-positive hits; falls back to random non-positives when none remain.
void fill_pool(NegativePools& out, const std::string& qid, const RankedList& ranked, const Corpus& corpus,
               const QrelSet& qrels, std::size_t depth, Rng& rng) {
  const auto pos = positive_set(qrels, qid);
  std::vector<std::string> pool;
  for (const auto& h : ranked.hits)
    if (!pos.count(h.doc_id)) pool.push_back(h.doc_id);
  if (pool.empty()) {
    std::vector<std::size_t> candidates;
    for (std::size_t d = 0; d < corpus.size(); ++d)
      if (!pos.count(corpus[d].id)) candidates.push_back(d);
    for (auto i : sample_without_replacement(candidates.size(), depth, rng)) pool.push_back(corpus[candidates[i]].id);
    out.fallback_queries.push_back(qid);
    log::info("negative mining: query " + qid + " retrieved only positives; using " + std::to_string(pool.size()) +
              " random negatives");
  }
  out.pools[qid] = std::move(pool);
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<double> to_doubles(const std::vector<char>& v) { return {v.begin(), v.end()}; }

}  // namespace

std::string to_string(Weighting w) {
  switch (w) {
    case Weighting::kErm: return "erm";
    case Weighting::kUniform: return "uniform";
    case Weighting::kIdro: return "idro";
    case Weighting::kGroupDro: return "groupdro";
  }
  return "?";
}

Weighting weighting_from_string(const std::string& name) {
  if (name == "erm") return Weighting::kErm;
  if (name == "uniform") return Weighting::kUniform;
  if (name == "idro") return Weighting::kIdro;
  if (name == "groupdro") return Weighting::kGroupDro;
  throw ConfigError("idro.weighting", "unknown weighting '" + name + "' (expected idro, groupdro, uniform or erm)");
}

std::string to_string(NegativeSource s) { return s == NegativeSource::kBm25 ? "bm25" : "self"; }

json RunConfig::to_json() const {
  json out = json::object();
  for (const auto& f : fields()) out[f.key] = f.get(*this);
  return out;
}

void RunConfig::apply(const json& values) {
  if (!values.is_object()) throw ConfigError("config", "expected a JSON object of flat keys");
  for (const auto& [key, value] : values.items()) {
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw ConfigError(key, "unknown configuration key");
    it->set(*this, key, value);
  }
}

RunConfig RunConfig::from_json(const json& values) {
  RunConfig c;
  c.apply(values);
  return c;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void RunConfig::validate() const {
  check(stage == "pretrain" || stage == "finetune", "stage", "expected pretrain or finetune");
  check(threads >= 1, "threads", "must be >= 1");
  check(encoder.feature_dim >= 1 && encoder.feature_dim <= (std::size_t{1} << 32), "encoder.feature_dim",
        "must be in [1, 2^32]");
  check(encoder.embed_dim >= 1, "encoder.embed_dim", "must be >= 1");
  check(finite_positive(encoder.init_scale), "encoder.init_scale", "must be finite and > 0");
  check(std::isfinite(optimizer.beta1) && optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0, "optimizer.beta1",
        "must be in [0, 1)");
  check(std::isfinite(optimizer.beta2) && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0, "optimizer.beta2",
        "must be in [0, 1)");
  check(finite_positive(optimizer.epsilon), "optimizer.epsilon", "must be finite and > 0");
  check(std::isfinite(optimizer.weight_decay) && optimizer.weight_decay >= 0.0, "optimizer.weight_decay",
        "must be finite and >= 0");
  check(std::isfinite(optimizer.max_grad_norm) && optimizer.max_grad_norm >= 0.0, "optimizer.max_grad_norm",
        "must be finite and >= 0 (0 disables clipping)");
  check(pretrain.span_len >= 1, "pretrain.span_len", "must be >= 1");
  check(pretrain.batch_size >= 2, "pretrain.batch_size", "must be >= 2");
  check(finite_positive(pretrain.learning_rate), "pretrain.learning_rate", "must be finite and > 0");
  check(unit_interval(pretrain.warmup_fraction), "pretrain.warmup_fraction", "must be in [0, 1]");
  check(finetune.episodes >= 1, "finetune.episodes", "must be >= 1");
  check(finetune.epochs_per_episode >= 1, "finetune.epochs_per_episode", "must be >= 1");
  check(finetune.batch_size >= 1, "finetune.batch_size", "must be >= 1");
  check(finetune.negatives_per_query >= 1, "finetune.negatives_per_query", "must be >= 1");
  check(finetune.mining_depth >= 1, "finetune.mining_depth", "must be >= 1");
  check(finite_positive(finetune.learning_rate), "finetune.learning_rate", "must be finite and > 0");
  check(unit_interval(finetune.warmup_fraction), "finetune.warmup_fraction", "must be in [0, 1]");
  check(idro.clusters >= 1, "idro.clusters", "must be >= 1");
  check(std::isfinite(idro.beta) && idro.beta >= 0.0, "idro.beta", "must be finite and >= 0");
  check(!std::isnan(idro.tau) && idro.tau > 0.0, "idro.tau", "must be > 0 (or \"inf\")");
  check(std::isfinite(idro.groupdro_step) && idro.groupdro_step >= 0.0, "idro.groupdro_step",
        "must be finite and >= 0");
  check(clustering.max_iters >= 1, "clustering.max_iters", "must be >= 1");
  check(std::isfinite(bm25.k1) && bm25.k1 >= 0.0, "bm25.k1", "must be finite and >= 0");
  check(unit_interval(bm25.b), "bm25.b", "must be in [0, 1]");
}

// ---------------------------------------------------------------------------

PretrainResult pretrain_coco(const RunConfig& config, std::span<const Corpus* const> corpora,
                             std::optional<Params> init) {
  require(!corpora.empty(), "pretrain_coco: at least one corpus required");
  const auto& pc = config.pretrain;
  PretrainResult result{init ? std::move(*init) : Params::initialize(config.encoder), {}, {}, 0, 0};
  require(result.params.config() == config.encoder, "pretrain_coco: initial parameters do not match the encoder config");

  std::vector<const Document*> docs;
  for (const auto* corpus : corpora)
    for (const auto& d : *corpus)
      if (d.tokens.size() >= 2 * pc.span_len) docs.push_back(&d);
  result.documents = docs.size();
  if (docs.size() < 2)
    throw DataError("pretraining needs at least two documents with >= " + std::to_string(2 * pc.span_len) +
                    " tokens; found " + std::to_string(docs.size()));

  const std::size_t batches_per_epoch = std::max<std::size_t>(1, docs.size() / pc.batch_size +
                                                                     (docs.size() % pc.batch_size >= 2 ? 1 : 0));
  const std::uint64_t total = static_cast<std::uint64_t>(batches_per_epoch) * pc.epochs;
  Optimizer opt(config.optimizer, result.params.size());

  for (std::size_t epoch = 0; epoch < pc.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, kPretrainStream + epoch));
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double loss_sum = 0.0, top1_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += pc.batch_size) {
      const std::size_t end = std::min(order.size(), start + pc.batch_size);
      if (end - start < 2) break;
      SpanPairBatch batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Document& doc = *docs[order[i]];
        const auto pair = sample_span_pair(doc, pc.span_len, rng);
        batch.push_back({featurize(pair->first(doc), config.encoder), featurize(pair->second(doc), config.encoder)});
      }
      CocoLoss loss(result.params, batch);
      loss_sum += loss.value();
      top1_sum += loss.partner_top1();
      ++batches;
      const double lr = scheduled_learning_rate(pc.learning_rate, result.steps, total, pc.warmup_fraction);
      opt.step(result.params, loss.gradient(), lr);
      ++result.steps;
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
    result.epoch_top1.push_back(top1_sum / static_cast<double>(batches));
    log::info("pretrain epoch " + std::to_string(epoch + 1) + ": loss " + fmt17(result.epoch_losses.back()) +
              ", partner top-1 " + fmt17(result.epoch_top1.back()));
  }
  return result;
}

// ---------------------------------------------------------------------------

NegativePools mine_negatives(const Params& params, const QuerySet& queries, const Corpus& corpus, const QrelSet& qrels,
                             std::size_t depth, std::uint64_t seed, unsigned threads) {
  require(depth >= 1, "mine_negatives: depth must be >= 1");
  DenseIndex index(embed_corpus(params, corpus, threads));
  const auto q = embed_queries(params, queries, threads);
  Rng rng(derive_seed(seed, kMiningStream));
  NegativePools out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& qid = queries[i].id;
    fill_pool(out, qid, search_dense(index, q.values.row(i), depth, qid), corpus, qrels, depth, rng);
  }
  return out;
}

NegativePools mine_negatives_bm25(const Bm25Index& index, const QuerySet& queries, const Corpus& corpus,
                                  const QrelSet& qrels, std::size_t depth, std::uint64_t seed) {
  require(depth >= 1, "mine_negatives_bm25: depth must be >= 1");
  Rng rng(derive_seed(seed, kMiningStream));
  NegativePools out;
  for (const auto& query : queries)
    fill_pool(out, query.id, index.search(query.tokens, depth, query.id), corpus, qrels, depth, rng);
  return out;
}

void write_negative_pools(const std::filesystem::path& path, const NegativePools& pools) {
  std::ostringstream os;
  os << "query-id\tcorpus-id\trank\n";
  for (const auto& [qid, docs] : pools.pools)
    for (std::size_t r = 0; r < docs.size(); ++r) os << qid << '\t' << docs[r] << '\t' << (r + 1) << '\n';
  write_text_file(path, os.str());
}

std::string TrainingLog::tsv_header() { return "step\tepisode\tcluster\tloss\talpha\tomega\ttotal_loss"; }

std::string TrainingLog::to_tsv() const {
  std::string out = tsv_header() + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + '\t' + std::to_string(r.episode) + '\t' + std::to_string(r.cluster) + '\t' +
           fmt17(r.loss) + '\t' + fmt17(r.alpha) + '\t' + fmt17(r.omega) + '\t' + fmt17(r.total_loss) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------

Finetuner::Finetuner(RunConfig config, const Corpus& corpus, const QuerySet& queries, const QrelSet& qrels,
                     Params init)
    : config_(std::move(config)),
      corpus_(corpus),
      queries_(queries),
      qrels_(qrels),
      params_(std::move(init)),
      optimizer_(config_.optimizer, params_.size()) {
  config_.validate();
  require(params_.config() == config_.encoder, "Finetuner: checkpoint does not match the encoder config");

  for (std::size_t i = 0; i < queries_.size(); ++i) {
    const auto& q = queries_[i];
    std::vector<std::string> pos;
    for (const auto& d : qrels_.positives(q.id))
      if (corpus_.contains(d)) pos.push_back(d);
    if (pos.empty()) {
      log::warn("finetune: dropping query " + q.id + " (no positive document in the corpus)");
      continue;
    }
    train_query_ids_.push_back(q.id);
    train_query_index_.push_back(i);
    positives_.push_back(std::move(pos));
  }
  if (train_query_ids_.empty()) throw DataError("finetune: no query has a positive document in the corpus");

  doc_features_ = featurize_corpus(corpus_, config_.encoder);
  for (auto i : train_query_index_) query_features_.push_back(featurize(queries_[i].tokens, config_.encoder));

  const std::uint64_t per_epoch = ceil_div(train_query_ids_.size(), config_.finetune.batch_size);
  total_steps_ = per_epoch * config_.finetune.epochs_per_episode * config_.finetune.episodes;
  query_cluster_.assign(train_query_ids_.size(), 0);
  group_ = GroupState::uniform(1, config_.idro.beta, config_.idro.tau);
}

void Finetuner::setup_groups(std::size_t episode, const std::optional<ClusterModel>& model) {
  (void)episode;
  if (!model) {
    std::fill(query_cluster_.begin(), query_cluster_.end(), 0);
    group_ = GroupState::uniform(1, config_.idro.beta, config_.idro.tau);
    return;
  }
  query_cluster_ = model->assignment;
  GroupState next = GroupState::uniform(model->k, config_.idro.beta, config_.idro.tau);
  const bool carry = config_.finetune.carry_omega && previous_centroids_.rows() == group_.k &&
                     previous_centroids_.rows() > 0 && previous_centroids_.cols() == model->centroids.cols();
  if (carry) {
    double z = 0.0;
    for (std::size_t c = 0; c < model->k; ++c) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t p = 0; p < previous_centroids_.rows(); ++p) {
        const double d = squared_distance(model->centroids.row(c), previous_centroids_.row(p));
        if (d < best_d) {
          best_d = d;
          best = p;
        }
      }
      next.omega[c] = group_.omega[best];
      z += next.omega[c];
    }
    for (double& w : next.omega) w /= z;
  }
  group_ = std::move(next);
  previous_centroids_ = model->centroids;
}

double Finetuner::train_step(std::span<const std::size_t> batch_queries, const NegativePools& pools, Rng& rng,
                             std::size_t episode) {
  const auto& fc = config_.finetune;
  TripletBatch batch;
  std::vector<std::size_t> item_cluster;
  for (auto t : batch_queries) {
    const auto& pool = pools.pools.at(train_query_ids_[t]);
    if (pool.empty()) continue;
    const auto& pos = positives_[t];
    const std::string& pos_id = pos[rng.uniform_index(pos.size())];
    Triplet tr{query_features_[t], doc_features_[*corpus_.index_of(pos_id)], {}};
    for (auto n : sample_without_replacement(pool.size(), fc.negatives_per_query, rng))
      tr.negatives.push_back(doc_features_[*corpus_.index_of(pool[n])]);
    batch.push_back(std::move(tr));
    item_cluster.push_back(query_cluster_[t]);
  }
  const std::uint64_t step = global_step_++;
  if (batch.empty()) return 0.0;

  RetrievalLoss rl(params_, batch, {fc.in_batch_negatives});
  const auto losses = rl.item_losses();
  const auto& ic = config_.idro;
  const std::size_t k = group_.k;
  std::vector<double> item_coeffs;
  std::vector<double> log_weights(k, 1.0);
  double total = 0.0;

  switch (ic.weighting) {
    case Weighting::kErm: {
      item_coeffs.assign(batch.size(), 1.0 / static_cast<double>(batch.size()));
      total = rl.mean();
      const auto st = cluster_batch_stats(losses, item_cluster, k);
      group_.losses = st.losses;
      group_.present = st.present;
      group_.alpha = alpha_weights(st.losses, ic.beta);
      break;
    }
    case Weighting::kIdro: {
      const auto st = cluster_batch_stats(losses, item_cluster, k);
      std::vector<Gradient> grads;
      grads.reserve(k);
      for (std::size_t c = 0; c < k; ++c) {
        if (!st.present[c]) {
          grads.emplace_back(params_.config());
          continue;
        }
        std::vector<double> coeffs(batch.size(), 0.0);
        for (std::size_t i = 0; i < batch.size(); ++i)
          if (item_cluster[i] == c) coeffs[i] = 1.0 / static_cast<double>(st.counts[c]);
        grads.push_back(rl.gradient(coeffs));
      }
      idro_loss(losses, item_cluster, group_);
      update_present_omega(group_, r_matrix(group_.losses, grads, ic.beta));
      const auto il = idro_loss(losses, item_cluster, group_);
      item_coeffs = il.item_coefficients;
      total = il.loss;
      log_weights = group_.omega;
      break;
    }
    case Weighting::kGroupDro:
    case Weighting::kUniform: {
      const auto st = cluster_batch_stats(losses, item_cluster, k);
      group_.losses = st.losses;
      group_.present = st.present;
      std::vector<double> present_losses;
      for (std::size_t c = 0; c < k; ++c)
        if (st.present[c]) present_losses.push_back(st.losses[c]);
      const auto a = alpha_weights(present_losses, ic.beta);
      std::fill(group_.alpha.begin(), group_.alpha.end(), 0.0);
      for (std::size_t c = 0, n = 0; c < k; ++c)
        if (st.present[c]) group_.alpha[c] = a[n++];
      if (ic.weighting == Weighting::kGroupDro) {
        groupdro_update_present(group_.omega, group_.losses, group_.present, ic.groupdro_step);
        ++group_.step;
        log_weights = group_.omega;
      }
      const auto il = weighted_cluster_loss(losses, item_cluster, k, log_weights);
      item_coeffs = il.item_coefficients;
      total = il.loss;
      break;
    }
  }

  for (std::size_t c = 0; c < k; ++c) {
    if (!group_.present[c]) continue;
    log_.rows.push_back({step, episode, c, group_.losses[c], group_.alpha[c], log_weights[c], total});
  }

  const double lr = scheduled_learning_rate(fc.learning_rate, step, total_steps_, fc.warmup_fraction);
  optimizer_.step(params_, rl.gradient(item_coeffs), lr);
  return total;
}

const EpisodeRecord& Finetuner::run_episode() {
  require(!done(), "Finetuner::run_episode: all episodes already ran");
  const std::size_t e = next_episode_;
  const auto& fc = config_.finetune;
  EpisodeRecord rec;
  rec.index = e;
  rec.negatives = e == 1 ? NegativeSource::kBm25 : NegativeSource::kSelf;

  // Clusters are fit on embeddings from the parameters that ended the previous episode.
  std::optional<ClusterModel> model;
  if (config_.idro.weighting != Weighting::kErm) {
    auto emb = encode_all(params_, query_features_, train_query_ids_, config_.threads);
    KMeansOptions ko;
    ko.k = std::min(config_.idro.clusters, train_query_ids_.size());
    ko.seed = derive_seed(config_.seed, kClusterStream + e);
    ko.max_iters = config_.clustering.max_iters;
    ko.metric = config_.clustering.metric;
    model = kmeans_fit(emb, ko);
  }
  setup_groups(e, model);
  rec.clusters = model;

  std::vector<Query> train_queries;
  for (auto i : train_query_index_) train_queries.push_back(queries_[i]);
  const QuerySet train_set(std::move(train_queries));
  const std::uint64_t mining_seed = derive_seed(config_.seed, kMiningStream + e);
  NegativePools pools =
      rec.negatives == NegativeSource::kBm25
          ? mine_negatives_bm25(Bm25Index(corpus_, config_.bm25), train_set, corpus_, qrels_, fc.mining_depth,
                                mining_seed)
          : mine_negatives(params_, train_set, corpus_, qrels_, fc.mining_depth, mining_seed, config_.threads);
  rec.fallback_queries = pools.fallback_queries.size();

  double loss_sum = 0.0;
  for (std::size_t epoch = 0; epoch < fc.epochs_per_episode; ++epoch) {
    Rng rng(derive_seed(config_.seed, kShuffleStream + e * 1000 + epoch));
    std::vector<std::size_t> order(train_query_ids_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += fc.batch_size) {
      const std::size_t end = std::min(order.size(), start + fc.batch_size);
      loss_sum += train_step(std::span(order).subspan(start, end - start), pools, rng, e);
      ++rec.steps;
    }
  }
  rec.mean_loss = rec.steps ? loss_sum / static_cast<double>(rec.steps) : 0.0;
  log::info("finetune episode " + std::to_string(e) + " (" + to_string(rec.negatives) + " negatives): mean loss " +
            fmt17(rec.mean_loss));
  episodes_.push_back(std::move(rec));
  ++next_episode_;
  return episodes_.back();
}

void Finetuner::run(const std::function<void(const Finetuner&)>& after_episode) {
  while (!done()) {
    run_episode();
    if (after_episode) after_episode(*this);
  }
}

namespace {
constexpr const char* kStateKind = "cocodr.trainer_state";

json comparable_config(const RunConfig& c) {
  auto j = c.to_json();
  j.erase("threads");
  return j;
}
}  // namespace

void Finetuner::save_state(const std::filesystem::path& path) const {
  Archive ar;
  ar.kind = kStateKind;
  ar.meta["config"] = config_.to_json();
  ar.meta["next_episode"] = next_episode_;
  ar.meta["global_step"] = global_step_;
  ar.meta["group"] = {{"k", group_.k}, {"step", group_.step}};
  ar.meta["centroids"] = {{"rows", previous_centroids_.rows()}, {"cols", previous_centroids_.cols()}};
  json episodes = json::array();
  for (const auto& e : episodes_) {
    episodes.push_back({{"index", e.index},
                        {"negatives", to_string(e.negatives)},
                        {"mean_loss", e.mean_loss},
                        {"steps", e.steps},
                        {"fallback_queries", e.fallback_queries}});
  }
  ar.meta["episodes"] = std::move(episodes);
  ar.add("params", {params_.flat().begin(), params_.flat().end()});
  ar.add("group.losses", group_.losses);
  ar.add("group.alpha", group_.alpha);
  ar.add("group.omega", group_.omega);
  ar.add("group.present", to_doubles(group_.present));
  ar.add("query_cluster", {query_cluster_.begin(), query_cluster_.end()});
  ar.add("centroids", {previous_centroids_.data().begin(), previous_centroids_.data().end()});
  std::vector<double> rows;
  rows.reserve(log_.rows.size() * 7);
  for (const auto& r : log_.rows) {
    rows.insert(rows.end(), {static_cast<double>(r.step), static_cast<double>(r.episode),
                             static_cast<double>(r.cluster), r.loss, r.alpha, r.omega, r.total_loss});
  }
  ar.add("log", std::move(rows));
  optimizer_.save_to(ar);
  write_archive(path, ar);
}

Finetuner Finetuner::resume(RunConfig config, const Corpus& corpus, const QuerySet& queries, const QrelSet& qrels,
                            const std::filesystem::path& state_path) {
  const Archive ar = read_archive(state_path, kStateKind);
  const RunConfig saved = RunConfig::from_json(ar.meta.at("config"));
  if (comparable_config(saved) != comparable_config(config))
    throw ConfigError("config", "resume configuration differs from the saved run in " + state_path.string());

  Params params(config.encoder);
  const auto& flat = ar.block("params");
  if (flat.size() != params.size()) throw DataError("trainer state: parameter block has the wrong length");
  std::copy(flat.begin(), flat.end(), params.flat().begin());

  Finetuner t(std::move(config), corpus, queries, qrels, std::move(params));
  t.next_episode_ = ar.meta.at("next_episode").get<std::size_t>();
  t.global_step_ = ar.meta.at("global_step").get<std::uint64_t>();
  t.group_ = GroupState::uniform(ar.meta.at("group").at("k").get<std::size_t>(), t.config_.idro.beta,
                                 t.config_.idro.tau);
  t.group_.step = ar.meta.at("group").at("step").get<std::uint64_t>();
  t.group_.losses = ar.block("group.losses");
  t.group_.alpha = ar.block("group.alpha");
  t.group_.omega = ar.block("group.omega");
  const auto& present = ar.block("group.present");
  t.group_.present.assign(present.begin(), present.end());
  const auto& qc = ar.block("query_cluster");
  if (qc.size() != t.query_cluster_.size()) throw DataError("trainer state: training queries differ from the saved run");
  for (std::size_t i = 0; i < qc.size(); ++i) t.query_cluster_[i] = static_cast<std::size_t>(qc[i]);
  const auto rows = ar.meta.at("centroids").at("rows").get<std::size_t>();
  const auto cols = ar.meta.at("centroids").at("cols").get<std::size_t>();
  t.previous_centroids_ = DenseMatrix(rows, cols);
  const auto& cent = ar.block("centroids");
  if (cent.size() != rows * cols) throw DataError("trainer state: centroid block has the wrong length");
  std::copy(cent.begin(), cent.end(), t.previous_centroids_.data().begin());
  const auto& lg = ar.block("log");
  if (lg.size() % 7 != 0) throw DataError("trainer state: log block has the wrong length");
  for (std::size_t i = 0; i < lg.size(); i += 7) {
    t.log_.rows.push_back({static_cast<std::uint64_t>(lg[i]), static_cast<std::size_t>(lg[i + 1]),
                           static_cast<std::size_t>(lg[i + 2]), lg[i + 3], lg[i + 4], lg[i + 5], lg[i + 6]});
  }
  for (const auto& e : ar.meta.at("episodes")) {
    EpisodeRecord rec;
    rec.index = e.at("index").get<std::size_t>();
    rec.negatives = e.at("negatives").get<std::string>() == "self" ? NegativeSource::kSelf : NegativeSource::kBm25;
    rec.mean_loss = e.at("mean_loss").get<double>();
    rec.steps = e.at("steps").get<std::size_t>();
    rec.fallback_queries = e.at("fallback_queries").get<std::size_t>();
    t.episodes_.push_back(std::move(rec));
  }
  t.optimizer_.load_from(ar);
  return t;
}

FinetuneResult finetune(const RunConfig& config, Params init, const Corpus& corpus, const QuerySet& queries,
                        const QrelSet& qrels) {
  Finetuner t(config, corpus, queries, qrels, std::move(init));
  t.run();
  return {t.params(), t.log(), t.episodes()};
}

EvalTriplets build_eval_triplets(const EncoderConfig& encoder, const Corpus& corpus, const QuerySet& queries,
                                 const QrelSet& qrels, std::size_t bm25_negatives, std::size_t random_negatives,
                                 std::uint64_t seed) {
  require(bm25_negatives + random_negatives >= 1, "build_eval_triplets: at least one negative required");
  const Bm25Index index(corpus);
  const auto doc_features = featurize_corpus(corpus, encoder);
  Rng rng(seed);
  EvalTriplets out;
  for (const auto& q : queries) {
    std::vector<std::string> pos;
    for (const auto& d : qrels.positives(q.id))
      if (corpus.contains(d)) pos.push_back(d);
    if (pos.empty()) continue;
    std::sort(pos.begin(), pos.end());
    const std::set<std::string> pos_set(pos.begin(), pos.end());
    std::set<std::size_t> chosen;
    std::vector<std::size_t> negs;
    if (bm25_negatives > 0) {
      for (const auto& h : index.search(q.tokens, bm25_negatives + pos.size()).hits) {
        if (negs.size() == bm25_negatives) break;
        if (pos_set.count(h.doc_id)) continue;
        const auto d = *corpus.index_of(h.doc_id);
        chosen.insert(d);
        negs.push_back(d);
      }
    }
    std::vector<std::size_t> rest;
    for (std::size_t d = 0; d < corpus.size(); ++d)
      if (!chosen.count(d) && !pos_set.count(corpus[d].id)) rest.push_back(d);
    for (auto i : sample_without_replacement(rest.size(), random_negatives, rng)) negs.push_back(rest[i]);
    if (negs.empty()) continue;
    Triplet tr{featurize(q.tokens, encoder), doc_features[*corpus.index_of(pos.front())], {}};
    for (auto d : negs) tr.negatives.push_back(doc_features[d]);
    out.query_ids.push_back(q.id);
    out.triplets.push_back(std::move(tr));
  }
  return out;
}

}  // namespace cocodr
