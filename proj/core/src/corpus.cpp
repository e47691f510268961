#include "cocodr/corpus.hpp"

#include <charconv>
#include <fstream>
#include <nlohmann/json.hpp>

#include "cocodr/error.hpp"
#include "cocodr/tokenizer.hpp"

namespace cocodr {
namespace {

using nlohmann::json;

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::string required_string(const json& obj, const char* key, const std::filesystem::path& path,
                            std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(where(path, line) + ": missing field `" + key + "`");
  if (!it->is_string()) throw DataError(where(path, line) + ": field `" + key + "` is not a string");
  return it->get<std::string>();
}

template <class Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where(path, line_no) + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw DataError(where(path, line_no) + ": expected a JSON object");
    fn(obj, line_no);
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

}  // namespace

Document make_document(std::string id, std::optional<std::string> title, std::string text) {
  Document d{std::move(id), std::move(title), std::move(text), {}};
  d.tokens = (d.title && !d.title->empty()) ? tokenize(*d.title + " " + d.text) : tokenize(d.text);
  return d;
}

Query make_query(std::string id, std::string text) {
  Query q{std::move(id), std::move(text), {}};
  q.tokens = tokenize(q.text);
  return q;
}

template <class Item>
ItemSet<Item>::ItemSet(std::vector<Item> items) : items_(std::move(items)) {
  index_.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& id = items_[i].id;
    if (id.empty()) throw DataError("empty id at position " + std::to_string(i));
    if (!index_.emplace(id, i).second) throw DataError("duplicate id `" + id + "`");
  }
}

template <class Item>
std::optional<std::size_t> ItemSet<Item>::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

template <class Item>
const Item* ItemSet<Item>::find(const std::string& id) const {
  auto i = index_of(id);
  return i ? &items_[*i] : nullptr;
}

template class ItemSet<Document>;
template class ItemSet<Query>;

void QrelSet::set(const std::string& query_id, const std::string& doc_id, int grade) {
  if (grade < 0) throw DataError("negative relevance grade for (" + query_id + ", " + doc_id + ")");
  auto [it, inserted] = by_query_[query_id].insert_or_assign(doc_id, grade);
  (void)it;
  if (inserted) ++size_;
}

int QrelSet::grade(const std::string& query_id, const std::string& doc_id) const {
  auto q = by_query_.find(query_id);
  if (q == by_query_.end()) return 0;
  auto d = q->second.find(doc_id);
  return d == q->second.end() ? 0 : d->second;
}

const QrelSet::Judgments* QrelSet::judgments(const std::string& query_id) const {
  auto q = by_query_.find(query_id);
  return q == by_query_.end() ? nullptr : &q->second;
}

std::vector<std::string> QrelSet::positives(const std::string& query_id) const {
  std::vector<std::string> out;
  if (const auto* j = judgments(query_id))
    for (const auto& [doc, g] : *j)
      if (g > 0) out.push_back(doc);
  return out;
}

void QrelSet::validate(const Corpus& corpus, const QuerySet& queries) const {
  for (const auto& [qid, docs] : by_query_) {
    if (!queries.contains(qid)) throw DataError("qrels reference unknown query id `" + qid + "`");
    for (const auto& [did, g] : docs)
      if (!corpus.contains(did)) throw DataError("qrels reference unknown document id `" + did + "`");
  }
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::vector<Document> docs;
  for_each_json_line(path, [&](const json& obj, std::size_t line) {
    auto id = required_string(obj, "_id", path, line);
    std::optional<std::string> title;
    if (auto it = obj.find("title"); it != obj.end() && !it->is_null()) {
      if (!it->is_string()) throw DataError(where(path, line) + ": field `title` is not a string");
      title = it->get<std::string>();
    }
    docs.push_back(make_document(std::move(id), std::move(title), required_string(obj, "text", path, line)));
  });
  try {
    return Corpus(std::move(docs));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

QuerySet load_queries(const std::filesystem::path& path) {
  std::vector<Query> queries;
  for_each_json_line(path, [&](const json& obj, std::size_t line) {
    auto id = required_string(obj, "_id", path, line);
    queries.push_back(make_query(std::move(id), required_string(obj, "text", path, line)));
  });
  try {
    return QuerySet(std::move(queries));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

QrelSet load_qrels(const std::filesystem::path& path) {
  auto in = open_input(path);
  QrelSet qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      auto tab = view.find('\t', start);
      fields.push_back(trim(view.substr(start, tab == std::string_view::npos ? tab : tab - start)));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (line_no == 1 && fields.size() >= 1 && fields[0] == "query-id") continue;
    if (fields.size() != 3)
      throw DataError(where(path, line_no) + ": expected 3 tab-separated fields, got " +
                      std::to_string(fields.size()));
    int grade = 0;
    const auto score = fields[2];
    auto [ptr, ec] = std::from_chars(score.data(), score.data() + score.size(), grade);
    if (ec != std::errc() || ptr != score.data() + score.size())
      throw DataError(where(path, line_no) + ": score `" + std::string(score) + "` is not an integer");
    if (fields[0].empty() || fields[1].empty()) throw DataError(where(path, line_no) + ": empty id");
    try {
      qrels.set(std::string(fields[0]), std::string(fields[1]), grade);
    } catch (const DataError& e) {
      throw DataError(where(path, line_no) + ": " + e.what());
    }
  }
  return qrels;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& d : corpus) {
    json obj = {{"_id", d.id}};
    if (d.title) obj["title"] = *d.title;
    obj["text"] = d.text;
    out << obj.dump() << '\n';
  }
}

void write_queries(const QuerySet& queries, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& q : queries) out << json{{"_id", q.id}, {"text", q.text}}.dump() << '\n';
}

void write_qrels(const QrelSet& qrels, const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "query-id\tcorpus-id\tscore\n";
  for (const auto& [qid, docs] : qrels.by_query())
    for (const auto& [did, g] : docs) out << qid << '\t' << did << '\t' << g << '\n';
}

std::size_t count_span_placements(std::size_t n_tokens, std::size_t span_len) {
  if (span_len == 0 || n_tokens < 2 * span_len) return 0;
  const std::size_t free = n_tokens - 2 * span_len + 1;
  return free * (free + 1);  // 2 * C(free + 1, 2)
}

std::optional<SpanPair> sample_span_pair(const Document& doc, std::size_t span_len, Rng& rng) {
  require(span_len > 0, "sample_span_pair: span_len must be positive");
  const std::size_t n = doc.tokens.size();
  if (n < 2 * span_len) return std::nullopt;
  // Unordered placements (a, b) with b >= a + span_len correspond one-to-one to
  // pairs a < c drawn from {0, ..., n - 2 * span_len + 1} via c = b - span_len + 1.
  const std::size_t pool = n - 2 * span_len + 2;
  std::size_t a = rng.uniform_index(pool);
  std::size_t c = rng.uniform_index(pool - 1);
  if (c >= a) ++c;
  if (c < a) std::swap(a, c);
  SpanPair pair{a, c + span_len - 1, span_len};
  if (rng.uniform_index(2) == 1) std::swap(pair.first_begin, pair.second_begin);
  return pair;
}

}  // namespace cocodr
