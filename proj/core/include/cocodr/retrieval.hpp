#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cocodr/corpus.hpp"
#include "cocodr/encoder.hpp"

namespace cocodr {

struct Hit {
  std::string doc_id;
  double score;
  friend bool operator==(const Hit&, const Hit&) = default;
};

/// Hits ordered by descending score, ties by ascending doc id.
struct RankedList {
  std::string query_id;
  std::vector<Hit> hits;
};

/// Exhaustive inner-product index over document embeddings.
class DenseIndex {
 public:
  explicit DenseIndex(EmbeddingMatrix docs);
  std::size_t size() const noexcept { return docs_.size(); }
  const EmbeddingMatrix& embeddings() const noexcept { return docs_; }

 private:
  EmbeddingMatrix docs_;
};

/// Full scan and sort. Throws ContractViolation for k == 0 or an empty index.
RankedList search_dense(const DenseIndex& index, std::span<const double> query, std::size_t k,
                        std::string query_id = {});
/// Bounded-heap top-k; returns the same list as search_dense.
RankedList search_dense_heap(const DenseIndex& index, std::span<const double> query, std::size_t k,
                             std::string query_id = {});

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

/// Inverted index with Okapi BM25 scoring,
/// idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
class Bm25Index {
 public:
  explicit Bm25Index(const Corpus& corpus, Bm25Params params = {});

  std::size_t doc_count() const noexcept { return doc_ids_.size(); }
  double average_length() const noexcept { return avgdl_; }
  std::size_t document_frequency(const std::string& term) const;
  double idf(const std::string& term) const;
  const Bm25Params& params() const noexcept { return params_; }
  const std::vector<std::string>& doc_ids() const noexcept { return doc_ids_; }

  /// Score of one document (by position) for a tokenized query; every query
  /// token occurrence contributes.
  double score(std::size_t doc, std::span<const std::string> query_tokens) const;

  /// Documents matching at least one query token, best first, at most k.
  RankedList search(std::span<const std::string> query_tokens, std::size_t k, std::string query_id = {}) const;

 private:
  struct Posting {
    std::uint32_t doc;
    std::uint32_t tf;
  };
  double term_weight(double tf, double doc_len, double idf) const;

  Bm25Params params_;
  std::vector<std::string> doc_ids_;
  std::vector<double> doc_len_;
  double avgdl_ = 0.0;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

RankedList search_bm25(const Bm25Index& index, std::span<const std::string> query_tokens, std::size_t k,
                       std::string query_id = {});

/// nDCG@k with gain 2^grade - 1 and discount 1 / log2(rank + 1). Returns 0
/// when the judgments contain no positive grade.
double ndcg_at_k(const RankedList& ranked, const QrelSet::Judgments& judgments, std::size_t k = 10);
/// Fraction of grade > 0 documents found in the top k; 0 when there are none.
double recall_at_k(const RankedList& ranked, const QrelSet::Judgments& judgments, std::size_t k);

struct EvalMetrics {
  double ndcg_at_10 = 0.0;
  double recall_at_10 = 0.0;
  double recall_at_100 = 0.0;
  std::size_t judged_queries = 0;
  std::size_t skipped_queries = 0;  ///< queries with no positive judgment
  std::map<std::string, double> per_query_ndcg;

  std::string to_json() const;
  static std::string tsv_header();
  std::string tsv_row(const std::string& name) const;
};

/// Means over queries that have at least one positive judgment.
EvalMetrics evaluate_runs(std::span<const RankedList> runs, const QrelSet& qrels);

/// Encodes corpus and queries, runs exhaustive dense search (depth 100) and
/// scores the runs. `runs_out`, when given, receives the ranked lists.
EvalMetrics evaluate(const Params& params, const Corpus& corpus, const QuerySet& queries, const QrelSet& qrels,
                     unsigned threads = 1, std::vector<RankedList>* runs_out = nullptr);

/// TREC run format: `qid Q0 docid rank score tag`, rank starting at 1.
void write_trec_run(const std::filesystem::path& path, std::span<const RankedList> runs, const std::string& tag);

/// Featurizes every document / query with the encoder's hashing settings.
std::vector<FeatureVector> featurize_corpus(const Corpus& corpus, const EncoderConfig& config);
std::vector<FeatureVector> featurize_queries(const QuerySet& queries, const EncoderConfig& config);

EmbeddingMatrix embed_corpus(const Params& params, const Corpus& corpus, unsigned threads = 1);
EmbeddingMatrix embed_queries(const Params& params, const QuerySet& queries, unsigned threads = 1);

}  // namespace cocodr
