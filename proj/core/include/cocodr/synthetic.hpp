#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cocodr/corpus.hpp"

namespace cocodr {

/// Generator settings for one synthetic topical domain.
///
/// Each topic owns `words_per_topic` words named "<prefix>t<topic>w<word>".
/// Documents mix topic words with shared function words; queries are a
/// function word followed by topic words. Every document of a query's topic
/// is relevant with grade 1.
struct TopicDomainSpec {
  std::string prefix = "src";
  std::size_t topics = 60;
  std::size_t words_per_topic = 40;
  std::size_t docs_per_topic = 20;
  std::size_t doc_topic_tokens = 12;
  std::size_t doc_function_tokens = 20;
  std::size_t queries_per_topic = 4;
  std::size_t query_topic_tokens = 3;
  std::size_t query_function_tokens = 1;
  /// Probability that a topic token is drawn from a pool shared by all
  /// topics of the domain instead of the topic's own words.
  double shared_word_prob = 0.0;
  std::size_t shared_words = 50;
  /// Domain marker token, repeated at the start of every query and mixed into
  /// every document of the domain.
  std::string marker;
  std::size_t query_marker_repeats = 0;
  std::size_t doc_marker_repeats = 0;
};

struct SyntheticTask {
  Corpus corpus;
  QuerySet queries;
  QrelSet qrels;
  std::vector<std::size_t> query_topic;  ///< per query, in query order
};

/// Tasks combined from several groups of queries. `query_group` holds a group
/// index per query, in query order.
struct MergedTask {
  SyntheticTask task;
  std::vector<std::size_t> query_group;
};

/// Function words shared across every synthetic domain.
const std::vector<std::string>& function_words();

SyntheticTask make_topic_domain(const TopicDomainSpec& spec, std::uint64_t seed);

/// Source and target domains with disjoint topical vocabularies and the
/// shared function words.
struct TwoDomainSpec {
  TopicDomainSpec source;
  TopicDomainSpec target;
  TwoDomainSpec();
};

struct TwoDomainBenchmark {
  SyntheticTask source;
  SyntheticTask target;
};

TwoDomainBenchmark make_two_domain_benchmark(const TwoDomainSpec& spec, std::uint64_t seed);

/// A majority domain and a small rare domain merged into one task. The rare
/// topics draw half their topic tokens from a small shared pool and the rest
/// from a large vocabulary, so their queries are harder and slower to learn.
struct RareClusterSpec {
  TopicDomainSpec majority;
  TopicDomainSpec rare;
  RareClusterSpec();
};

/// query_group is 0 for majority queries and 1 for rare queries.
MergedTask make_rare_cluster_task(const RareClusterSpec& spec, std::uint64_t seed);

/// Concatenates tasks with disjoint ids; a query's group is its part index.
MergedTask merge_tasks(const std::vector<SyntheticTask>& parts);

}  // namespace cocodr
