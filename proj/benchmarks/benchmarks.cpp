#include <benchmark/benchmark.h>

#include "cocodr/clustering.hpp"
#include "cocodr/encoder.hpp"
#include "cocodr/idro.hpp"
#include "cocodr/log.hpp"
#include "cocodr/losses.hpp"
#include "cocodr/retrieval.hpp"
#include "cocodr/rng.hpp"
#include "cocodr/synthetic.hpp"

namespace {

using namespace cocodr;

EncoderConfig encoder(std::size_t embed, bool hidden = false) {
  EncoderConfig c;
  c.feature_dim = std::size_t{1} << 15;
  c.embed_dim = embed;
  c.hidden = hidden;
  c.init_seed = 1;
  return c;
}

FeatureVector random_features(Rng& rng, std::size_t dim, std::size_t nnz) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < nnz; ++i) tokens.push_back("w" + std::to_string(rng.uniform_index(50000)));
  return featurize(tokens, dim, 0);
}

const SyntheticTask& task() {
  static const SyntheticTask t = [] {
    TopicDomainSpec s;
    s.topics = 100;
    return make_topic_domain(s, 3);
  }();
  return t;
}

void BM_Encode(benchmark::State& state) {
  const auto p = Params::initialize(encoder(static_cast<std::size_t>(state.range(0)), state.range(1) != 0));
  Rng rng(1);
  const auto x = random_features(rng, p.config().feature_dim, 32);
  for (auto _ : state) benchmark::DoNotOptimize(encode(p, x));
}
BENCHMARK(BM_Encode)->Args({64, 0})->Args({64, 1})->Args({256, 0});

void BM_RetrievalLossBackward(benchmark::State& state) {
  const auto p = Params::initialize(encoder(64));
  Rng rng(2);
  TripletBatch batch;
  for (int i = 0; i < state.range(0); ++i) {
    Triplet t{random_features(rng, p.config().feature_dim, 4), random_features(rng, p.config().feature_dim, 32), {}};
    for (int n = 0; n < 4; ++n) t.negatives.push_back(random_features(rng, p.config().feature_dim, 32));
    batch.push_back(std::move(t));
  }
  for (auto _ : state) {
    const RetrievalLoss loss(p, batch);
    benchmark::DoNotOptimize(loss.mean_gradient());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RetrievalLossBackward)->Arg(32)->Arg(128);

void BM_CocoLossBackward(benchmark::State& state) {
  const auto p = Params::initialize(encoder(64));
  Rng rng(3);
  SpanPairBatch batch;
  for (int i = 0; i < state.range(0); ++i)
    batch.push_back({random_features(rng, p.config().feature_dim, 16), random_features(rng, p.config().feature_dim, 16)});
  for (auto _ : state) {
    const CocoLoss loss(p, batch);
    benchmark::DoNotOptimize(loss.gradient());
  }
}
BENCHMARK(BM_CocoLossBackward)->Arg(32)->Arg(128);

void BM_KMeans(benchmark::State& state) {
  Rng rng(4);
  EmbeddingMatrix m;
  m.values = DenseMatrix(static_cast<std::size_t>(state.range(0)), 64);
  for (std::size_t i = 0; i < m.values.rows(); ++i) m.ids.push_back(std::to_string(i));
  for (double& x : m.values.data()) x = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(kmeans_fit(m, {50, 7, 20, ClusterMetric::kSpherical}));
}
BENCHMARK(BM_KMeans)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_Bm25Search(benchmark::State& state) {
  const Bm25Index index(task().corpus);
  std::size_t q = 0;
  for (auto _ : state) {
    const auto& query = task().queries[q++ % task().queries.size()];
    benchmark::DoNotOptimize(index.search(query.tokens, 100));
  }
}
BENCHMARK(BM_Bm25Search);

void BM_DenseSearch(benchmark::State& state) {
  const auto p = Params::initialize(encoder(64));
  const DenseIndex index(embed_corpus(p, task().corpus));
  const auto queries = embed_queries(p, task().queries);
  std::size_t q = 0;
  for (auto _ : state) {
    const auto row = queries.values.row(q++ % queries.size());
    if (state.range(0) == 0)
      benchmark::DoNotOptimize(search_dense(index, row, 100));
    else
      benchmark::DoNotOptimize(search_dense_heap(index, row, 100));
  }
  state.SetLabel(state.range(0) == 0 ? "scan" : "heap");
}
BENCHMARK(BM_DenseSearch)->Arg(0)->Arg(1);

void BM_OmegaUpdate(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  DenseMatrix grads(k, 4096);
  for (double& x : grads.data()) x = rng.normal();
  std::vector<double> losses(k), omega(k, 1.0 / static_cast<double>(k));
  for (double& l : losses) l = 0.1 + rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(omega_update(omega, r_matrix(losses, grads, 0.25), 1.0));
}
BENCHMARK(BM_OmegaUpdate)->Arg(8)->Arg(50);

}  // namespace
BENCHMARK_MAIN();
