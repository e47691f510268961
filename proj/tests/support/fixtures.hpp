#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "cocodr/encoder.hpp"
#include "cocodr/losses.hpp"
#include "cocodr/rng.hpp"
#include "cocodr/synthetic.hpp"
#include "cocodr/trainer.hpp"

namespace cocodr::fixtures {

inline EncoderConfig small_encoder(bool hidden, std::uint64_t seed, std::size_t dim = 64, std::size_t embed = 5,
                                   double scale = 4.0) {
  EncoderConfig c;
  c.feature_dim = dim;
  c.embed_dim = embed;
  c.hidden = hidden;
  c.init_seed = seed;
  c.hash_seed = seed * 7 + 1;
  c.init_scale = scale;
  return c;
}

/// Sparse vector with `nnz` distinct buckets and small positive counts.
inline FeatureVector random_features(Rng& rng, std::size_t dim, std::size_t nnz) {
  std::vector<double> v(dim, 0.0);
  for (std::size_t i = 0; i < nnz; ++i) v[rng.uniform_index(dim)] += 1.0 + static_cast<double>(rng.uniform_index(2));
  FeatureVector fv{dim, {}};
  for (std::size_t i = 0; i < dim; ++i)
    if (v[i] > 0.0) fv.entries.push_back({static_cast<std::uint32_t>(i), v[i]});
  return fv;
}

inline TripletBatch random_triplets(Rng& rng, std::size_t dim, std::size_t n, std::size_t negatives) {
  TripletBatch batch;
  for (std::size_t i = 0; i < n; ++i) {
    Triplet t{random_features(rng, dim, 3), random_features(rng, dim, 5), {}};
    for (std::size_t j = 0; j < negatives; ++j) t.negatives.push_back(random_features(rng, dim, 5));
    batch.push_back(std::move(t));
  }
  return batch;
}

inline SpanPairBatch random_spans(Rng& rng, std::size_t dim, std::size_t n) {
  SpanPairBatch batch;
  for (std::size_t i = 0; i < n; ++i) batch.push_back({random_features(rng, dim, 4), random_features(rng, dim, 4)});
  return batch;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cocodr-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// A few hundred documents over a handful of topics; fast enough for unit tests.
inline SyntheticTask tiny_task(std::uint64_t seed, const std::string& prefix = "src") {
  TopicDomainSpec s;
  s.prefix = prefix;
  s.topics = 6;
  s.words_per_topic = 20;
  s.docs_per_topic = 8;
  s.queries_per_topic = 4;
  return make_topic_domain(s, seed);
}

inline RunConfig tiny_run_config() {
  RunConfig c;
  c.encoder.feature_dim = 1 << 10;
  c.encoder.embed_dim = 8;
  c.encoder.init_seed = 5;
  c.pretrain.span_len = 4;
  c.pretrain.epochs = 2;
  c.pretrain.batch_size = 8;
  c.pretrain.learning_rate = 1e-2;
  c.finetune.episodes = 2;
  c.finetune.batch_size = 8;
  c.finetune.learning_rate = 1e-2;
  c.finetune.mining_depth = 10;
  c.idro.clusters = 3;
  return c;
}

}  // namespace cocodr::fixtures
