#include <cmath>
#include <fstream>
#include <limits>

#include <gtest/gtest.h>

#include "cocodr/error.hpp"
#include "cocodr/trainer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

namespace cocodr {
namespace {

Corpus unique_token_corpus(std::size_t n) {
  std::vector<Document> docs;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    for (int r = 0; r < 16; ++r) text += "uniq" + std::to_string(i) + " ";
    docs.push_back(make_document("u" + std::to_string(i), std::nullopt, text));
  }
  return Corpus(std::move(docs));
}

TEST(Pretrain, ZeroEpochsReturnsInitialization) {
  const auto task = fixtures::tiny_task(1);
  auto cfg = fixtures::tiny_run_config();
  cfg.pretrain.epochs = 0;
  const Corpus* corpora[] = {&task.corpus};
  const auto r = pretrain_coco(cfg, corpora);
  EXPECT_TRUE(r.params == Params::initialize(cfg.encoder));
  EXPECT_EQ(r.steps, 0u);
}

TEST(Pretrain, SeparatesUniqueTokenDocuments) {
  const auto corpus = unique_token_corpus(64);
  auto cfg = fixtures::tiny_run_config();
  cfg.encoder.feature_dim = 1 << 12;
  cfg.encoder.embed_dim = 16;
  cfg.pretrain.epochs = 6;
  const Corpus* corpora[] = {&corpus};
  const auto r = pretrain_coco(cfg, corpora);
  ASSERT_EQ(r.epoch_losses.size(), 6u);
  for (std::size_t e = 1; e < 4; ++e) EXPECT_LT(r.epoch_losses[e], r.epoch_losses[e - 1]);

  // Partner retrieval within batches of eight documents, checked by brute force.
  std::size_t hits = 0, anchors = 0;
  for (std::size_t start = 0; start < corpus.size(); start += 8) {
    std::vector<std::vector<double>> e;
    for (std::size_t i = start; i < start + 8; ++i) {
      const auto& tokens = corpus[i].tokens;
      const auto x = featurize(std::span(tokens).subspan(0, 4), cfg.encoder);
      e.push_back(oracle::matmul_encode(r.params, x));
      e.push_back(oracle::matmul_encode(r.params, featurize(std::span(tokens).subspan(8, 4), cfg.encoder)));
    }
    for (std::size_t a = 0; a < e.size(); ++a, ++anchors) {
      bool top = true;
      for (std::size_t s = 0; s < e.size(); ++s)
        if (s != a && s != (a ^ 1u) && oracle::plain_dot(e[a], e[s]) >= oracle::plain_dot(e[a], e[a ^ 1u]))
          top = false;
      hits += top ? 1 : 0;
    }
  }
  EXPECT_GT(static_cast<double>(hits) / static_cast<double>(anchors), 0.9);
  EXPECT_GT(r.epoch_top1.back(), 0.9);
}

TEST(Pretrain, SameSeedSameResult) {
  const auto task = fixtures::tiny_task(2);
  const auto cfg = fixtures::tiny_run_config();
  const Corpus* corpora[] = {&task.corpus};
  const auto a = pretrain_coco(cfg, corpora);
  const auto b = pretrain_coco(cfg, corpora);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_NEAR(a.epoch_losses.back(), b.epoch_losses.back(), 1e-12);
}

TEST(Pretrain, NoUsableDocumentsIsADataError) {
  const Corpus corpus({make_document("a", std::nullopt, "too short"), make_document("b", std::nullopt, "also")});
  const Corpus* corpora[] = {&corpus};
  EXPECT_THROW(pretrain_coco(fixtures::tiny_run_config(), corpora), DataError);
}

TEST(Mining, OnlyPositiveDocumentTakesTheFallbackPath) {
  const Corpus corpus({make_document("d", std::nullopt, "alpha beta")});
  const QuerySet queries({make_query("q", "alpha")});
  QrelSet qrels;
  qrels.set("q", "d", 1);
  const auto p = Params::initialize(fixtures::tiny_run_config().encoder);
  const auto pools = mine_negatives(p, queries, corpus, qrels, 1, 3);
  EXPECT_EQ(pools.fallback_queries, std::vector<std::string>{"q"});
  EXPECT_TRUE(pools.pools.at("q").empty());
  const auto bm = mine_negatives_bm25(Bm25Index(corpus), queries, corpus, qrels, 1, 3);
  EXPECT_EQ(bm.fallback_queries, std::vector<std::string>{"q"});
}

TEST(Mining, BestScoringDistractorLeadsThePoolAndPositivesAreExcluded) {
  const auto task = fixtures::tiny_task(4);
  const auto cfg = fixtures::tiny_run_config();
  const auto p = Params::initialize(cfg.encoder);
  const auto pools = mine_negatives(p, task.queries, task.corpus, task.qrels, 12, 9);
  for (const auto& q : task.queries) {
    const auto gq = oracle::matmul_encode(p, featurize(q.tokens, cfg.encoder));
    double best = -std::numeric_limits<double>::infinity();
    std::string best_id;
    for (const auto& d : task.corpus) {
      if (task.qrels.grade(q.id, d.id) > 0) continue;
      const double s = oracle::plain_dot(gq, oracle::matmul_encode(p, featurize(d.tokens, cfg.encoder)));
      if (s > best || (s == best && d.id < best_id)) {
        best = s;
        best_id = d.id;
      }
    }
    const auto& pool = pools.pools.at(q.id);
    ASSERT_FALSE(pool.empty());
    EXPECT_EQ(pool.front(), best_id);
    for (const auto& d : pool) EXPECT_EQ(task.qrels.grade(q.id, d), 0);
  }
  EXPECT_TRUE(pools.fallback_queries.empty());
}

TEST(Mining, PoolsFileHasHeaderAndRanks) {
  fixtures::TempDir dir("pools");
  NegativePools pools;
  pools.pools["q"] = {"a", "b"};
  write_negative_pools(dir / "n.tsv", pools);
  std::ifstream in(dir / "n.tsv");
  std::string all((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(all, "query-id\tcorpus-id\trank\nq\ta\t1\nq\tb\t2\n");
}

RunConfig weighting_config(Weighting w, std::size_t k) {
  auto c = fixtures::tiny_run_config();
  c.idro.weighting = w;
  c.idro.clusters = k;
  c.optimizer.kind = OptimizerKind::kSgd;
  return c;
}

TEST(Finetune, UniformWithOneClusterReproducesErm) {
  const auto task = fixtures::tiny_task(6);
  const auto erm_cfg = weighting_config(Weighting::kErm, 1);
  const auto init = Params::initialize(erm_cfg.encoder);
  const auto erm = finetune(erm_cfg, init, task.corpus, task.queries, task.qrels);
  const auto uni = finetune(weighting_config(Weighting::kUniform, 1), init, task.corpus, task.queries, task.qrels);
  EXPECT_TRUE(erm.params == uni.params);
  EXPECT_EQ(erm.log.to_tsv(), uni.log.to_tsv());
}

TEST(Finetune, ZeroBetaInfiniteTauMatchesUniformWeighting) {
  const auto task = fixtures::tiny_task(7);
  auto idro_cfg = weighting_config(Weighting::kIdro, 3);
  idro_cfg.idro.beta = 0.0;
  idro_cfg.idro.tau = std::numeric_limits<double>::infinity();
  const auto init = Params::initialize(idro_cfg.encoder);
  const auto idro = finetune(idro_cfg, init, task.corpus, task.queries, task.qrels);
  const auto uni = finetune(weighting_config(Weighting::kUniform, 3), init, task.corpus, task.queries, task.qrels);
  ASSERT_EQ(idro.log.rows.size(), uni.log.rows.size());
  for (std::size_t i = 0; i < idro.log.rows.size(); ++i) {
    EXPECT_NEAR(idro.log.rows[i].total_loss, uni.log.rows[i].total_loss, 1e-10);
    EXPECT_EQ(idro.log.rows[i].omega, 1.0 / 3.0);
  }
  EXPECT_TRUE(idro.params == uni.params);
}

TEST(Finetune, EpisodesUseBm25ThenSelfNegatives) {
  const auto task = fixtures::tiny_task(8);
  auto cfg = weighting_config(Weighting::kIdro, 3);
  cfg.finetune.episodes = 3;
  const auto r = finetune(cfg, Params::initialize(cfg.encoder), task.corpus, task.queries, task.qrels);
  ASSERT_EQ(r.episodes.size(), 3u);
  EXPECT_EQ(r.episodes[0].negatives, NegativeSource::kBm25);
  EXPECT_EQ(r.episodes[1].negatives, NegativeSource::kSelf);
  EXPECT_EQ(r.episodes[2].negatives, NegativeSource::kSelf);
  for (const auto& e : r.episodes) {
    ASSERT_TRUE(e.clusters.has_value());
    EXPECT_EQ(e.clusters->k, 3u);
  }
}

TEST(Finetune, ClustersAreFitOnThePreviousEpisodeParameters) {
  const auto task = fixtures::tiny_task(9);
  auto cfg = weighting_config(Weighting::kIdro, 3);
  const auto init = Params::initialize(cfg.encoder);
  Finetuner ft(cfg, task.corpus, task.queries, task.qrels, init);
  ft.run_episode();
  const Params after_first = ft.params();
  const auto& second = ft.run_episode();
  const auto& ids = ft.training_query_ids();
  std::vector<FeatureVector> features;
  for (const auto& id : ids) features.push_back(featurize(task.queries.find(id)->tokens, cfg.encoder));
  const auto embedded = encode_all(after_first, features, ids);
  ASSERT_TRUE(second.clusters->converged);
  EXPECT_EQ(second.clusters->ids, ids);
  EXPECT_EQ(assign(*second.clusters, embedded.values), second.clusters->assignment);
}

TEST(Finetune, SameSeedSameLog) {
  const auto task = fixtures::tiny_task(10);
  const auto cfg = weighting_config(Weighting::kIdro, 3);
  const auto init = Params::initialize(cfg.encoder);
  const auto a = finetune(cfg, init, task.corpus, task.queries, task.qrels);
  const auto b = finetune(cfg, init, task.corpus, task.queries, task.qrels);
  EXPECT_EQ(a.log.to_tsv(), b.log.to_tsv());
  EXPECT_TRUE(a.params == b.params);
}

TEST(Finetune, ResumeContinuesBitwise) {
  fixtures::TempDir dir("resume");
  const auto task = fixtures::tiny_task(11);
  for (auto w : {Weighting::kIdro, Weighting::kGroupDro}) {
    auto cfg = weighting_config(w, 3);
    cfg.optimizer.kind = OptimizerKind::kAdam;
    cfg.finetune.episodes = 3;
    Finetuner straight(cfg, task.corpus, task.queries, task.qrels, Params::initialize(cfg.encoder));
    straight.run_episode();
    straight.save_state(dir / "state.bin");
    straight.run();
    auto resumed = Finetuner::resume(cfg, task.corpus, task.queries, task.qrels, dir / "state.bin");
    EXPECT_EQ(resumed.next_episode(), 2u);
    resumed.run();
    EXPECT_TRUE(resumed.params() == straight.params());
    EXPECT_EQ(resumed.log().to_tsv(), straight.log().to_tsv());
    EXPECT_EQ(resumed.group_state().omega, straight.group_state().omega);
    EXPECT_EQ(resumed.global_step(), straight.global_step());
  }
}

TEST(Finetune, RareClusterLossLowerUnderIdroThanUniform) {
  const auto uni = scenario::run_rare_cluster(0, Weighting::kUniform);
  const auto idro = scenario::run_rare_cluster(0, Weighting::kIdro);
  EXPECT_LT(idro.rare_loss, uni.rare_loss);
}

TEST(RunConfig, JsonRoundTrip) {
  auto c = fixtures::tiny_run_config();
  c.idro.tau = std::numeric_limits<double>::infinity();
  c.idro.weighting = Weighting::kGroupDro;
  c.optimizer.kind = OptimizerKind::kSgd;
  const auto j = c.to_json();
  const auto back = RunConfig::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  EXPECT_TRUE(std::isinf(back.idro.tau));
  EXPECT_EQ(back.idro.weighting, Weighting::kGroupDro);
  EXPECT_EQ(RunConfig::keys().size(), j.size());
}

TEST(RunConfig, RejectsUnknownKeysWrongTypesAndBadRanges) {
  RunConfig c;
  EXPECT_THROW(c.apply({{"idro.nope", 1}}), ConfigError);
  EXPECT_THROW(c.apply({{"idro.clusters", "many"}}), ConfigError);
  c.idro.tau = 0.0;
  try {
    c.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "idro.tau");
  }
  c = RunConfig{};
  c.idro.beta = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(weighting_from_string("median"), ConfigError);
  EXPECT_EQ(weighting_from_string("idro"), Weighting::kIdro);
}

TEST(EvalTriplets, OneTripletPerJudgedQueryWithoutPositivesAmongNegatives) {
  const auto task = fixtures::tiny_task(12);
  const auto cfg = fixtures::tiny_run_config();
  const auto ev = build_eval_triplets(cfg.encoder, task.corpus, task.queries, task.qrels, 3, 2, 1);
  EXPECT_EQ(ev.triplets.size(), task.queries.size());
  for (const auto& t : ev.triplets) EXPECT_EQ(t.negatives.size(), 5u);
}

}  // namespace
}  // namespace cocodr
