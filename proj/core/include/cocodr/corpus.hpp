#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cocodr/rng.hpp"

namespace cocodr {

struct Document {
  std::string id;
  std::optional<std::string> title;
  std::string text;
  /// Tokens of "title text" (title omitted when absent or empty).
  std::vector<std::string> tokens;
};

struct Query {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;
};

Document make_document(std::string id, std::optional<std::string> title, std::string text);
Query make_query(std::string id, std::string text);

/// Ordered collection of items with unique, nonempty ids. Immutable after
/// construction; iteration order is insertion (file line) order.
template <class Item>
class ItemSet {
 public:
  ItemSet() = default;
  /// Throws DataError on an empty or duplicate id.
  explicit ItemSet(std::vector<Item> items);

  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }
  const Item& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  const std::vector<Item>& items() const noexcept { return items_; }

  std::optional<std::size_t> index_of(const std::string& id) const;
  const Item* find(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Corpus = ItemSet<Document>;
using QuerySet = ItemSet<Query>;

extern template class ItemSet<Document>;
extern template class ItemSet<Query>;

/// Graded relevance judgments: (query id, doc id) -> grade >= 0.
class QrelSet {
 public:
  using Judgments = std::map<std::string, int>;

  void set(const std::string& query_id, const std::string& doc_id, int grade);
  /// 0 when unjudged.
  int grade(const std::string& query_id, const std::string& doc_id) const;
  /// Judgments for one query, or nullptr.
  const Judgments* judgments(const std::string& query_id) const;
  /// Doc ids with grade > 0, in id order.
  std::vector<std::string> positives(const std::string& query_id) const;
  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }
  const std::map<std::string, Judgments>& by_query() const noexcept { return by_query_; }

  /// Throws DataError naming the first dangling query or doc id.
  void validate(const Corpus& corpus, const QuerySet& queries) const;

 private:
  std::map<std::string, Judgments> by_query_;
  std::size_t size_ = 0;
};

/// BEIR corpus.jsonl: one object per line with `_id`, optional `title`, `text`.
Corpus load_corpus(const std::filesystem::path& path);
/// BEIR queries.jsonl: `_id`, `text`.
QuerySet load_queries(const std::filesystem::path& path);
/// BEIR qrels TSV: `query-id<TAB>corpus-id<TAB>score`, optional header line.
QrelSet load_qrels(const std::filesystem::path& path);

void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
void write_queries(const QuerySet& queries, const std::filesystem::path& path);
void write_qrels(const QrelSet& qrels, const std::filesystem::path& path);

/// Two disjoint contiguous windows of one document's tokens. Adjacent
/// windows are allowed.
struct SpanPair {
  std::size_t first_begin = 0;
  std::size_t second_begin = 0;
  std::size_t length = 0;

  std::span<const std::string> first(const Document& d) const {
    return std::span(d.tokens).subspan(first_begin, length);
  }
  std::span<const std::string> second(const Document& d) const {
    return std::span(d.tokens).subspan(second_begin, length);
  }
};

/// Uniform over all ordered placements of two non-overlapping windows of
/// `span_len` tokens. Returns nullopt when the document has fewer than
/// 2 * span_len tokens; callers drop such documents from the batch.
std::optional<SpanPair> sample_span_pair(const Document& doc, std::size_t span_len, Rng& rng);

/// Number of ordered valid placements for a document of `n_tokens` tokens.
std::size_t count_span_placements(std::size_t n_tokens, std::size_t span_len);

}  // namespace cocodr
