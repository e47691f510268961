#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cocodr/clustering.hpp"
#include "cocodr/corpus.hpp"
#include "cocodr/encoder.hpp"
#include "cocodr/idro.hpp"
#include "cocodr/losses.hpp"
#include "cocodr/optimizer.hpp"
#include "cocodr/retrieval.hpp"

namespace cocodr {

/// How per-cluster losses are combined during fine-tuning.
enum class Weighting {
  kErm,       ///< mean over items, no clustering
  kUniform,   ///< equal weight per present cluster
  kIdro,      ///< alpha * omega with the closed-form omega update
  kGroupDro,  ///< omega from exponentiated loss ascent
};

std::string to_string(Weighting w);
Weighting weighting_from_string(const std::string& name);

enum class NegativeSource { kBm25, kSelf };
std::string to_string(NegativeSource s);

struct PretrainConfig {
  std::size_t span_len = 16;
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double warmup_fraction = 0.1;
};

struct FinetuneConfig {
  std::size_t episodes = 3;
  std::size_t epochs_per_episode = 1;
  std::size_t batch_size = 32;
  std::size_t negatives_per_query = 4;
  std::size_t mining_depth = 50;  ///< retrieved docs per query in the negative pool
  double learning_rate = 1e-3;
  double warmup_fraction = 0.1;
  bool in_batch_negatives = false;
  /// Keep omega across cluster refits by nearest-centroid matching instead of
  /// resetting it to uniform.
  bool carry_omega = false;
};

struct IdroConfig {
  Weighting weighting = Weighting::kIdro;
  std::size_t clusters = 50;
  double beta = 0.25;
  double tau = 1.0;  ///< +infinity freezes omega
  double groupdro_step = 0.01;
};

struct ClusteringConfig {
  ClusterMetric metric = ClusterMetric::kSpherical;
  std::size_t max_iters = 50;
};

/// Every hyperparameter of a run. Serialized as flat namespaced keys
/// ("encoder.embed_dim", "idro.tau", ...).
struct RunConfig {
  std::string stage = "finetune";
  std::uint64_t seed = 13;
  unsigned threads = 1;
  EncoderConfig encoder;
  OptimizerConfig optimizer;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  IdroConfig idro;
  ClusteringConfig clustering;
  Bm25Params bm25;

  nlohmann::json to_json() const;
  /// Sets the given keys; throws ConfigError naming an unknown key or a
  /// value of the wrong type.
  void apply(const nlohmann::json& values);
  static RunConfig from_json(const nlohmann::json& values);
  /// Throws ConfigError naming the first out-of-range field.
  void validate() const;
  /// All known flat keys, in serialization order.
  static std::vector<std::string> keys();
};

struct PretrainResult {
  Params params;
  std::vector<double> epoch_losses;  ///< mean batch loss per epoch
  std::vector<double> epoch_top1;    ///< mean partner-top-1 rate per epoch
  std::size_t steps = 0;
  std::size_t documents = 0;         ///< documents long enough for a span pair
};

/// Span-pair contrastive pretraining over the union of `corpora`. Starts from
/// `init` or from Params::initialize(config.encoder). Throws DataError when no
/// document yields a span pair.
PretrainResult pretrain_coco(const RunConfig& config, std::span<const Corpus* const> corpora,
                             std::optional<Params> init = std::nullopt);

/// Per-query pools of non-relevant documents.
struct NegativePools {
  std::map<std::string, std::vector<std::string>> pools;
  std::vector<std::string> fallback_queries;  ///< pools filled with random documents
};

/// Top-`depth` dense or BM25 results minus every document graded > 0. A query
/// whose results are all positives gets `depth` random non-positive
/// documents instead (or every non-positive document when fewer exist).
NegativePools mine_negatives(const Params& params, const QuerySet& queries, const Corpus& corpus, const QrelSet& qrels,
                             std::size_t depth, std::uint64_t seed, unsigned threads = 1);
NegativePools mine_negatives_bm25(const Bm25Index& index, const QuerySet& queries, const Corpus& corpus,
                                  const QrelSet& qrels, std::size_t depth, std::uint64_t seed);

void write_negative_pools(const std::filesystem::path& path, const NegativePools& pools);

struct TrainingLogRow {
  std::uint64_t step;
  std::size_t episode;
  std::size_t cluster;
  double loss;
  double alpha;
  double omega;
  double total_loss;
};

/// Columns: step, episode, cluster, loss, alpha, omega, total_loss.
/// Values are printed with 17 significant digits.
struct TrainingLog {
  std::vector<TrainingLogRow> rows;

  static std::string tsv_header();
  std::string to_tsv() const;
};

struct EpisodeRecord {
  std::size_t index = 0;
  NegativeSource negatives = NegativeSource::kBm25;
  std::optional<ClusterModel> clusters;  ///< absent under ERM and for episodes restored by resume
  double mean_loss = 0.0;
  std::size_t steps = 0;
  std::size_t fallback_queries = 0;
};

/// Episode-based fine-tuning on labeled source data.
///
/// Every episode: embed the training queries with the current parameters,
/// refit K-Means, mine negatives (BM25 in episode 1, the model's own top
/// results afterwards), then run minibatch steps. iDRO steps compute one
/// gradient per present cluster, update omega in closed form from those
/// gradients, and then take one step on the reweighted loss.
class Finetuner {
 public:
  /// `corpus`, `queries` and `qrels` must outlive the Finetuner.
  Finetuner(RunConfig config, const Corpus& corpus, const QuerySet& queries, const QrelSet& qrels, Params init);

  /// Reloads state written by save_state (config must match the saved run).
  static Finetuner resume(RunConfig config, const Corpus& corpus, const QuerySet& queries, const QrelSet& qrels,
                          const std::filesystem::path& state_path);

  bool done() const noexcept { return next_episode_ > config_.finetune.episodes; }
  /// Runs the next episode; returns its record.
  const EpisodeRecord& run_episode();
  /// Runs all remaining episodes, calling `after_episode` after each one.
  void run(const std::function<void(const Finetuner&)>& after_episode = {});

  const RunConfig& config() const noexcept { return config_; }
  const Params& params() const noexcept { return params_; }
  const GroupState& group_state() const noexcept { return group_; }
  const TrainingLog& log() const noexcept { return log_; }
  const std::vector<EpisodeRecord>& episodes() const noexcept { return episodes_; }
  std::size_t next_episode() const noexcept { return next_episode_; }
  std::uint64_t global_step() const noexcept { return global_step_; }
  std::uint64_t total_steps() const noexcept { return total_steps_; }
  const std::vector<std::string>& training_query_ids() const noexcept { return train_query_ids_; }

  void save_state(const std::filesystem::path& path) const;

 private:
  void setup_groups(std::size_t episode, const std::optional<ClusterModel>& model);
  double train_step(std::span<const std::size_t> batch_queries, const NegativePools& pools, Rng& rng,
                    std::size_t episode);

  RunConfig config_;
  const Corpus& corpus_;
  const QuerySet& queries_;
  const QrelSet& qrels_;
  Params params_;
  Optimizer optimizer_;
  GroupState group_;
  DenseMatrix previous_centroids_;
  std::vector<std::size_t> query_cluster_;  // per training query
  std::vector<std::string> train_query_ids_;
  std::vector<std::size_t> train_query_index_;  // into queries_
  std::vector<std::vector<std::string>> positives_;
  std::vector<FeatureVector> doc_features_;
  std::vector<FeatureVector> query_features_;  // per training query
  std::size_t next_episode_ = 1;
  std::uint64_t global_step_ = 0;
  std::uint64_t total_steps_ = 0;
  TrainingLog log_;
  std::vector<EpisodeRecord> episodes_;
};

/// Convenience wrapper: fine-tune from `init` through every episode.
struct FinetuneResult {
  Params params;
  TrainingLog log;
  std::vector<EpisodeRecord> episodes;
};
FinetuneResult finetune(const RunConfig& config, Params init, const Corpus& corpus, const QuerySet& queries,
                        const QrelSet& qrels);

/// Fixed evaluation triplets: per query, its first positive (by id) against
/// `bm25_negatives` top BM25 non-positives plus `random_negatives` random
/// non-positives. Returned in query order with the matching query ids.
struct EvalTriplets {
  std::vector<std::string> query_ids;
  TripletBatch triplets;
};
EvalTriplets build_eval_triplets(const EncoderConfig& encoder, const Corpus& corpus, const QuerySet& queries,
                                 const QrelSet& qrels, std::size_t bm25_negatives, std::size_t random_negatives,
                                 std::uint64_t seed);

}  // namespace cocodr
