#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>

#include "cocodr/corpus.hpp"

namespace cocodr {

/// Word frequency table; every stored count is positive.
class FreqTable {
 public:
  void add(const std::string& token, std::int64_t count = 1);
  std::int64_t count(const std::string& token) const;
  std::int64_t total() const noexcept { return total_; }
  std::size_t size() const noexcept { return counts_.size(); }
  bool empty() const noexcept { return counts_.empty(); }
  const std::map<std::string, std::int64_t>& entries() const noexcept { return counts_; }

 private:
  std::map<std::string, std::int64_t> counts_;
  std::int64_t total_ = 0;
};

/// Corpus-wide unigram counts over document tokens.
FreqTable count_tokens(const Corpus& corpus);
FreqTable count_tokens(const QuerySet& queries);

/// sum_k min(S_k, T_k) / sum_k max(S_k, T_k) over the union vocabulary.
/// Throws ContractViolation when both tables are empty.
double weighted_jaccard(const FreqTable& s, const FreqTable& t);
/// Same measure over two aligned nonnegative weight vectors.
double weighted_jaccard(std::span<const double> s, std::span<const double> t);

/// Nine query-intent types keyed on the first query word.
enum class Intent { kWhat, kWhen, kWho, kHow, kWhere, kWhy, kWhich, kYesNo, kDeclarative };
inline constexpr std::size_t kIntentCount = 9;

std::string_view intent_name(Intent intent);

/// Wh-word types match the first token; the yes/no type matches the first
/// token against {is, was, are, were, do, does, did, have, has, had, should,
/// can, could, would, am, small}. "small" is kept from the published list
/// even though it reads like an extraction artifact. Everything else,
/// including an empty query, is declarative.
Intent classify_intent(const Query& query);
Intent classify_intent(std::span<const std::string> tokens);

class IntentHistogram {
 public:
  IntentHistogram() { counts_.fill(0); }
  explicit IntentHistogram(const QuerySet& queries);

  void add(Intent intent, std::int64_t n = 1) { counts_[static_cast<std::size_t>(intent)] += n; }
  std::int64_t count(Intent intent) const { return counts_[static_cast<std::size_t>(intent)]; }
  std::int64_t total() const;
  /// Relative frequencies; requires total() > 0.
  std::array<double, kIntentCount> frequencies() const;

 private:
  std::array<std::int64_t, kIntentCount> counts_;
};

/// Weighted Jaccard over the two normalized intent distributions.
double intent_similarity(const IntentHistogram& a, const IntentHistogram& b);

struct ShiftReport {
  std::string source_name;
  std::string target_name;
  double query_intent_similarity = 0.0;
  double doc_lexical_similarity = 0.0;
  std::size_t source_docs = 0;
  std::size_t target_docs = 0;
  std::size_t source_queries = 0;
  std::size_t target_queries = 0;

  static std::string tsv_header();
  /// `dataset<TAB>query_intent_similarity<TAB>doc_lexical_similarity`
  std::string tsv_row() const;
  std::string to_json() const;
};

ShiftReport shift_report(const Corpus& source_corpus, const QuerySet& source_queries,
                         const Corpus& target_corpus, const QuerySet& target_queries);

}  // namespace cocodr
