#include "cocodr/synthetic.hpp"

#include "cocodr/error.hpp"
#include "cocodr/tokenizer.hpp"

namespace cocodr {

const std::vector<std::string>& function_words() {
  static const std::vector<std::string> words = {
      "the",  "of",    "and",   "to",    "in",    "a",     "is",    "that",  "for",   "it",
      "as",   "was",   "with",  "be",    "by",    "on",    "not",   "he",    "this",  "are",
      "or",   "his",   "from",  "at",    "which", "but",   "have",  "an",    "had",   "they",
      "you",  "were",  "their", "one",   "all",   "we",    "can",   "her",   "has",   "there",
      "been", "if",    "more",  "when",  "will",  "would", "who",   "so",    "no",    "what"};
  return words;
}

namespace {

std::string topic_word(const TopicDomainSpec& s, std::size_t topic, std::size_t word) {
  return s.prefix + "t" + std::to_string(topic) + "w" + std::to_string(word);
}

std::string shared_word(const TopicDomainSpec& s, std::size_t word) {
  return s.prefix + "s" + std::to_string(word);
}

std::string draw_topic_token(const TopicDomainSpec& s, std::size_t topic, Rng& rng) {
  if (s.shared_word_prob > 0.0 && rng.uniform() < s.shared_word_prob)
    return shared_word(s, rng.uniform_index(s.shared_words));
  return topic_word(s, topic, rng.uniform_index(s.words_per_topic));
}

}  // namespace

SyntheticTask make_topic_domain(const TopicDomainSpec& s, std::uint64_t seed) {
  require(s.topics >= 1 && s.words_per_topic >= 1 && s.docs_per_topic >= 1, "make_topic_domain: empty domain");
  require(s.shared_word_prob == 0.0 || s.shared_words >= 1, "make_topic_domain: shared pool is empty");
  require(s.marker.empty() == (s.query_marker_repeats + s.doc_marker_repeats == 0) || !s.marker.empty(),
          "make_topic_domain: marker repeats need a marker token");
  const auto& fw = function_words();
  Rng rng(seed);
  std::vector<Document> docs;
  std::vector<Query> queries;
  SyntheticTask out;
  for (std::size_t t = 0; t < s.topics; ++t) {
    for (std::size_t d = 0; d < s.docs_per_topic; ++d) {
      // Topic and function tokens interleaved in random order.
      std::vector<std::string> tokens;
      for (std::size_t i = 0; i < s.doc_topic_tokens; ++i) tokens.push_back(draw_topic_token(s, t, rng));
      for (std::size_t i = 0; i < s.doc_function_tokens; ++i) tokens.push_back(fw[rng.uniform_index(fw.size())]);
      for (std::size_t i = 0; i < s.doc_marker_repeats; ++i) tokens.push_back(s.marker);
      rng.shuffle(tokens);
      docs.push_back(make_document(s.prefix + "-d" + std::to_string(t) + "-" + std::to_string(d), std::nullopt,
                                   join_tokens(tokens)));
    }
    for (std::size_t q = 0; q < s.queries_per_topic; ++q) {
      std::vector<std::string> tokens;
      for (std::size_t i = 0; i < s.query_marker_repeats; ++i) tokens.push_back(s.marker);
      for (std::size_t i = 0; i < s.query_function_tokens; ++i) tokens.push_back(fw[rng.uniform_index(fw.size())]);
      for (std::size_t i = 0; i < s.query_topic_tokens; ++i) tokens.push_back(draw_topic_token(s, t, rng));
      const std::string qid = s.prefix + "-q" + std::to_string(t) + "-" + std::to_string(q);
      queries.push_back(make_query(qid, join_tokens(tokens)));
      out.query_topic.push_back(t);
      for (std::size_t d = 0; d < s.docs_per_topic; ++d)
        out.qrels.set(qid, s.prefix + "-d" + std::to_string(t) + "-" + std::to_string(d), 1);
    }
  }
  out.corpus = Corpus(std::move(docs));
  out.queries = QuerySet(std::move(queries));
  return out;
}

TwoDomainSpec::TwoDomainSpec() {
  source.prefix = "src";
  target.prefix = "tgt";
  target.queries_per_topic = 2;
}

TwoDomainBenchmark make_two_domain_benchmark(const TwoDomainSpec& spec, std::uint64_t seed) {
  require(spec.source.prefix != spec.target.prefix, "make_two_domain_benchmark: domains need distinct prefixes");
  return {make_topic_domain(spec.source, derive_seed(seed, 1)), make_topic_domain(spec.target, derive_seed(seed, 2))};
}

MergedTask merge_tasks(const std::vector<SyntheticTask>& parts) {
  std::vector<Document> docs;
  std::vector<Query> queries;
  MergedTask out;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& part = parts[p];
    docs.insert(docs.end(), part.corpus.begin(), part.corpus.end());
    queries.insert(queries.end(), part.queries.begin(), part.queries.end());
    out.task.query_topic.insert(out.task.query_topic.end(), part.query_topic.begin(), part.query_topic.end());
    out.query_group.insert(out.query_group.end(), part.queries.size(), p);
    for (const auto& [qid, judgments] : part.qrels.by_query())
      for (const auto& [did, grade] : judgments) out.task.qrels.set(qid, did, grade);
  }
  out.task.corpus = Corpus(std::move(docs));
  out.task.queries = QuerySet(std::move(queries));
  return out;
}

RareClusterSpec::RareClusterSpec() {
  majority.prefix = "maj";
  majority.topics = 17;
  majority.queries_per_topic = 10;
  majority.docs_per_topic = 10;
  rare = majority;
  rare.prefix = "rar";
  rare.topics = 3;
  rare.words_per_topic = 300;
  rare.shared_word_prob = 0.5;
  rare.shared_words = 20;
}

MergedTask make_rare_cluster_task(const RareClusterSpec& spec, std::uint64_t seed) {
  require(spec.majority.prefix != spec.rare.prefix, "make_rare_cluster_task: prefixes must differ");
  return merge_tasks({make_topic_domain(spec.majority, derive_seed(seed, 1)),
                      make_topic_domain(spec.rare, derive_seed(seed, 2))});
}

}  // namespace cocodr
