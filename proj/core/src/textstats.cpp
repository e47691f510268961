#include "cocodr/textstats.hpp"

#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <unordered_map>

#include "cocodr/error.hpp"
#include "cocodr/log.hpp"

namespace cocodr {

void FreqTable::add(const std::string& token, std::int64_t count) {
  require(count > 0, "FreqTable::add: count must be positive");
  counts_[token] += count;
  total_ += count;
}

std::int64_t FreqTable::count(const std::string& token) const {
  auto it = counts_.find(token);
  return it == counts_.end() ? 0 : it->second;
}

FreqTable count_tokens(const Corpus& corpus) {
  FreqTable t;
  for (const auto& d : corpus)
    for (const auto& tok : d.tokens) t.add(tok);
  return t;
}

FreqTable count_tokens(const QuerySet& queries) {
  FreqTable t;
  for (const auto& q : queries)
    for (const auto& tok : q.tokens) t.add(tok);
  return t;
}

double weighted_jaccard(const FreqTable& s, const FreqTable& t) {
  require(!s.empty() || !t.empty(), "weighted_jaccard: both tables are empty");
  // Merge walk over the two sorted maps.
  double num = 0.0, den = 0.0;
  auto a = s.entries().begin(), ae = s.entries().end();
  auto b = t.entries().begin(), be = t.entries().end();
  while (a != ae || b != be) {
    if (b == be || (a != ae && a->first < b->first)) {
      den += static_cast<double>(a->second);
      ++a;
    } else if (a == ae || b->first < a->first) {
      den += static_cast<double>(b->second);
      ++b;
    } else {
      num += static_cast<double>(std::min(a->second, b->second));
      den += static_cast<double>(std::max(a->second, b->second));
      ++a;
      ++b;
    }
  }
  return num / den;
}

double weighted_jaccard(std::span<const double> s, std::span<const double> t) {
  require(s.size() == t.size(), "weighted_jaccard: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    require(s[k] >= 0.0 && t[k] >= 0.0, "weighted_jaccard: negative weight");
    num += std::min(s[k], t[k]);
    den += std::max(s[k], t[k]);
  }
  require(den > 0.0, "weighted_jaccard: both inputs are empty");
  return num / den;
}

std::string_view intent_name(Intent intent) {
  switch (intent) {
    case Intent::kWhat: return "what";
    case Intent::kWhen: return "when";
    case Intent::kWho: return "who";
    case Intent::kHow: return "how";
    case Intent::kWhere: return "where";
    case Intent::kWhy: return "why";
    case Intent::kWhich: return "which";
    case Intent::kYesNo: return "yes/no";
    case Intent::kDeclarative: return "declarative";
  }
  return "?";
}

Intent classify_intent(std::span<const std::string> tokens) {
  static const std::unordered_map<std::string_view, Intent> kFirstWord = {
      {"what", Intent::kWhat},   {"when", Intent::kWhen},    {"who", Intent::kWho},
      {"how", Intent::kHow},     {"where", Intent::kWhere},  {"why", Intent::kWhy},
      {"which", Intent::kWhich}, {"is", Intent::kYesNo},     {"was", Intent::kYesNo},
      {"are", Intent::kYesNo},   {"were", Intent::kYesNo},   {"do", Intent::kYesNo},
      {"does", Intent::kYesNo},  {"did", Intent::kYesNo},    {"have", Intent::kYesNo},
      {"has", Intent::kYesNo},   {"had", Intent::kYesNo},    {"should", Intent::kYesNo},
      {"can", Intent::kYesNo},   {"could", Intent::kYesNo},  {"would", Intent::kYesNo},
      {"am", Intent::kYesNo},    {"small", Intent::kYesNo},
  };
  if (tokens.empty()) {
    log::debug("classify_intent: empty query classified as declarative");
    return Intent::kDeclarative;
  }
  auto it = kFirstWord.find(tokens.front());
  return it == kFirstWord.end() ? Intent::kDeclarative : it->second;
}

Intent classify_intent(const Query& query) { return classify_intent(std::span(query.tokens)); }

IntentHistogram::IntentHistogram(const QuerySet& queries) : IntentHistogram() {
  for (const auto& q : queries) add(classify_intent(q));
}

std::int64_t IntentHistogram::total() const {
  std::int64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::array<double, kIntentCount> IntentHistogram::frequencies() const {
  const auto n = total();
  require(n > 0, "IntentHistogram::frequencies: empty histogram");
  std::array<double, kIntentCount> f{};
  for (std::size_t i = 0; i < kIntentCount; ++i)
    f[i] = static_cast<double>(counts_[i]) / static_cast<double>(n);
  return f;
}

double intent_similarity(const IntentHistogram& a, const IntentHistogram& b) {
  require(a.total() > 0 && b.total() > 0, "intent_similarity: empty histogram");
  const auto fa = a.frequencies();
  const auto fb = b.frequencies();
  return weighted_jaccard(std::span<const double>(fa), std::span<const double>(fb));
}

std::string ShiftReport::tsv_header() {
  return "dataset\tquery_intent_similarity\tdoc_lexical_similarity";
}

std::string ShiftReport::tsv_row() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "\t%.4f\t%.4f", query_intent_similarity, doc_lexical_similarity);
  return target_name + buf;
}

std::string ShiftReport::to_json() const {
  nlohmann::json j = {
      {"source", source_name},
      {"target", target_name},
      {"query_intent_similarity", query_intent_similarity},
      {"doc_lexical_similarity", doc_lexical_similarity},
      {"source_docs", source_docs},
      {"target_docs", target_docs},
      {"source_queries", source_queries},
      {"target_queries", target_queries},
  };
  return j.dump(2);
}

ShiftReport shift_report(const Corpus& source_corpus, const QuerySet& source_queries,
                         const Corpus& target_corpus, const QuerySet& target_queries) {
  ShiftReport r;
  r.doc_lexical_similarity = weighted_jaccard(count_tokens(source_corpus), count_tokens(target_corpus));
  r.query_intent_similarity =
      intent_similarity(IntentHistogram(source_queries), IntentHistogram(target_queries));
  r.source_docs = source_corpus.size();
  r.target_docs = target_corpus.size();
  r.source_queries = source_queries.size();
  r.target_queries = target_queries.size();
  return r;
}

}  // namespace cocodr
