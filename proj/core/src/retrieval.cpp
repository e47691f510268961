#include "cocodr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <queue>

#include <nlohmann/json.hpp>

#include "cocodr/archive.hpp"
#include "cocodr/error.hpp"
#include "cocodr/parallel.hpp"

namespace cocodr {
namespace {

bool ranks_before(const Hit& a, const Hit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

}  // namespace

DenseIndex::DenseIndex(EmbeddingMatrix docs) : docs_(std::move(docs)) {
  require(all_finite(docs_.values.data()), "DenseIndex: non-finite embedding");
}

RankedList search_dense(const DenseIndex& index, std::span<const double> query, std::size_t k, std::string query_id) {
  require(k >= 1, "search_dense: k must be at least 1");
  require(index.size() > 0, "search_dense: empty index");
  const auto& m = index.embeddings();
  RankedList out{std::move(query_id), {}};
  out.hits.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out.hits.push_back({m.ids[i], dot(query, m.values.row(i))});
  std::sort(out.hits.begin(), out.hits.end(), ranks_before);
  if (out.hits.size() > k) out.hits.resize(k);
  return out;
}

RankedList search_dense_heap(const DenseIndex& index, std::span<const double> query, std::size_t k,
                             std::string query_id) {
  require(k >= 1, "search_dense_heap: k must be at least 1");
  require(index.size() > 0, "search_dense_heap: empty index");
  const auto& m = index.embeddings();
  // Max-heap under ranks_before keeps the current worst kept hit on top.
  std::priority_queue<Hit, std::vector<Hit>, decltype(&ranks_before)> heap(ranks_before);
  for (std::size_t i = 0; i < m.size(); ++i) {
    Hit h{m.ids[i], dot(query, m.values.row(i))};
    if (heap.size() < k) {
      heap.push(std::move(h));
    } else if (ranks_before(h, heap.top())) {
      heap.pop();
      heap.push(std::move(h));
    }
  }
  RankedList out{std::move(query_id), {}};
  out.hits.resize(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    out.hits[i] = heap.top();
    heap.pop();
  }
  return out;
}

Bm25Index::Bm25Index(const Corpus& corpus, Bm25Params params) : params_(params) {
  double total = 0.0;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& doc = corpus[d];
    doc_ids_.push_back(doc.id);
    doc_len_.push_back(static_cast<double>(doc.tokens.size()));
    total += static_cast<double>(doc.tokens.size());
    std::map<std::string, std::uint32_t> tf;
    for (const auto& t : doc.tokens) ++tf[t];
    for (const auto& [term, n] : tf) postings_[term].push_back({static_cast<std::uint32_t>(d), n});
  }
  avgdl_ = corpus.empty() ? 0.0 : total / static_cast<double>(corpus.size());
}

std::size_t Bm25Index::document_frequency(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? 0 : it->second.size();
}

double Bm25Index::idf(const std::string& term) const {
  const double n = static_cast<double>(doc_count());
  const double df = static_cast<double>(document_frequency(term));
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double Bm25Index::term_weight(double tf, double doc_len, double idf) const {
  const double norm = avgdl_ > 0.0 ? doc_len / avgdl_ : 0.0;
  return idf * tf * (params_.k1 + 1.0) / (tf + params_.k1 * (1.0 - params_.b + params_.b * norm));
}

double Bm25Index::score(std::size_t doc, std::span<const std::string> query_tokens) const {
  require(doc < doc_count(), "Bm25Index::score: document out of range");
  double s = 0.0;
  for (const auto& t : query_tokens) {
    auto it = postings_.find(t);
    if (it == postings_.end()) continue;
    auto p = std::lower_bound(it->second.begin(), it->second.end(), doc,
                              [](const Posting& x, std::size_t d) { return x.doc < d; });
    if (p == it->second.end() || p->doc != doc) continue;
    s += term_weight(p->tf, doc_len_[doc], idf(t));
  }
  return s;
}

RankedList Bm25Index::search(std::span<const std::string> query_tokens, std::size_t k, std::string query_id) const {
  require(k >= 1, "search_bm25: k must be at least 1");
  std::map<std::uint32_t, double> acc;
  for (const auto& t : query_tokens) {
    auto it = postings_.find(t);
    if (it == postings_.end()) continue;
    const double w = idf(t);
    for (const auto& p : it->second) acc[p.doc] += term_weight(p.tf, doc_len_[p.doc], w);
  }
  RankedList out{std::move(query_id), {}};
  for (const auto& [d, s] : acc) out.hits.push_back({doc_ids_[d], s});
  std::sort(out.hits.begin(), out.hits.end(), ranks_before);
  if (out.hits.size() > k) out.hits.resize(k);
  return out;
}

RankedList search_bm25(const Bm25Index& index, std::span<const std::string> query_tokens, std::size_t k,
                       std::string query_id) {
  return index.search(query_tokens, k, std::move(query_id));
}

double ndcg_at_k(const RankedList& ranked, const QrelSet::Judgments& judgments, std::size_t k) {
  auto gain = [](int grade) { return std::pow(2.0, grade) - 1.0; };
  auto discount = [](std::size_t rank) { return 1.0 / std::log2(static_cast<double>(rank) + 1.0); };
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.hits.size()); ++r) {
    auto it = judgments.find(ranked.hits[r].doc_id);
    if (it != judgments.end() && it->second > 0) dcg += gain(it->second) * discount(r + 1);
  }
  std::vector<int> grades;
  for (const auto& [doc, g] : judgments)
    if (g > 0) grades.push_back(g);
  std::sort(grades.rbegin(), grades.rend());
  double ideal = 0.0;
  for (std::size_t r = 0; r < std::min(k, grades.size()); ++r) ideal += gain(grades[r]) * discount(r + 1);
  return ideal > 0.0 ? dcg / ideal : 0.0;
}

double recall_at_k(const RankedList& ranked, const QrelSet::Judgments& judgments, std::size_t k) {
  std::size_t relevant = 0, found = 0;
  for (const auto& [doc, g] : judgments) relevant += g > 0 ? 1 : 0;
  if (relevant == 0) return 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.hits.size()); ++r) {
    auto it = judgments.find(ranked.hits[r].doc_id);
    if (it != judgments.end() && it->second > 0) ++found;
  }
  return static_cast<double>(found) / static_cast<double>(relevant);
}

std::string EvalMetrics::to_json() const {
  nlohmann::json j = {{"ndcg@10", ndcg_at_10},
                      {"recall@10", recall_at_10},
                      {"recall@100", recall_at_100},
                      {"judged_queries", judged_queries},
                      {"skipped_queries", skipped_queries},
                      {"per_query_ndcg@10", per_query_ndcg}};
  return j.dump(2);
}

std::string EvalMetrics::tsv_header() { return "task\tndcg@10\trecall@10\trecall@100\tjudged_queries"; }

std::string EvalMetrics::tsv_row(const std::string& name) const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\t%.6f\t%zu", ndcg_at_10, recall_at_10, recall_at_100, judged_queries);
  return name + buf;
}

EvalMetrics evaluate_runs(std::span<const RankedList> runs, const QrelSet& qrels) {
  EvalMetrics m;
  for (const auto& run : runs) {
    const auto* j = qrels.judgments(run.query_id);
    const bool judged = j && std::any_of(j->begin(), j->end(), [](const auto& kv) { return kv.second > 0; });
    if (!judged) {
      ++m.skipped_queries;
      continue;
    }
    const double n = ndcg_at_k(run, *j, 10);
    m.per_query_ndcg[run.query_id] = n;
    m.ndcg_at_10 += n;
    m.recall_at_10 += recall_at_k(run, *j, 10);
    m.recall_at_100 += recall_at_k(run, *j, 100);
    ++m.judged_queries;
  }
  if (m.judged_queries) {
    const double q = static_cast<double>(m.judged_queries);
    m.ndcg_at_10 /= q;
    m.recall_at_10 /= q;
    m.recall_at_100 /= q;
  }
  return m;
}

std::vector<FeatureVector> featurize_corpus(const Corpus& corpus, const EncoderConfig& config) {
  std::vector<FeatureVector> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus) out.push_back(featurize(d.tokens, config));
  return out;
}

std::vector<FeatureVector> featurize_queries(const QuerySet& queries, const EncoderConfig& config) {
  std::vector<FeatureVector> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(featurize(q.tokens, config));
  return out;
}

EmbeddingMatrix embed_corpus(const Params& params, const Corpus& corpus, unsigned threads) {
  std::vector<std::string> ids;
  for (const auto& d : corpus) ids.push_back(d.id);
  return encode_all(params, featurize_corpus(corpus, params.config()), std::move(ids), threads);
}

EmbeddingMatrix embed_queries(const Params& params, const QuerySet& queries, unsigned threads) {
  std::vector<std::string> ids;
  for (const auto& q : queries) ids.push_back(q.id);
  return encode_all(params, featurize_queries(queries, params.config()), std::move(ids), threads);
}

EvalMetrics evaluate(const Params& params, const Corpus& corpus, const QuerySet& queries, const QrelSet& qrels,
                     unsigned threads, std::vector<RankedList>* runs_out) {
  const DenseIndex index(embed_corpus(params, corpus, threads));
  const auto q = embed_queries(params, queries, threads);
  std::vector<RankedList> runs(queries.size());
  parallel_for(queries.size(), threads,
               [&](std::size_t i) { runs[i] = search_dense(index, q.values.row(i), 100, q.ids[i]); });
  auto metrics = evaluate_runs(runs, qrels);
  if (runs_out) *runs_out = std::move(runs);
  return metrics;
}

void write_trec_run(const std::filesystem::path& path, std::span<const RankedList> runs, const std::string& tag) {
  std::string out;
  char buf[64];
  for (const auto& run : runs)
    for (std::size_t r = 0; r < run.hits.size(); ++r) {
      std::snprintf(buf, sizeof buf, " %zu %.9g ", r + 1, run.hits[r].score);
      out += run.query_id + " Q0 " + run.hits[r].doc_id + buf + tag + "\n";
    }
  write_text_file(path, out);
}

}  // namespace cocodr
