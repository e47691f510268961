#include "cocodr/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "cocodr/error.hpp"
#include "cocodr/rng.hpp"

namespace cocodr {

double alignment(const DenseMatrix& first, const DenseMatrix& second) {
  require(first.rows() >= 1, "alignment: need at least one pair");
  require(first.rows() == second.rows() && first.cols() == second.cols(), "alignment: width mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < first.rows(); ++i)
    s += squared_distance(normalized(first.row(i)), normalized(second.row(i)));
  return s / static_cast<double>(first.rows());
}

double uniformity(const DenseMatrix& sample) {
  const std::size_t n = sample.rows();
  require(n >= 2, "uniformity: need at least two embeddings");
  std::vector<std::vector<double>> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rows.push_back(normalized(sample.row(i)));
  // log-mean-exp over pairs, max-subtracted.
  std::vector<double> logs;
  logs.reserve(n * (n - 1) / 2);
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      logs.push_back(-2.0 * squared_distance(rows[i], rows[j]));
      m = std::max(m, logs.back());
    }
  double s = 0.0;
  for (double l : logs) s += std::exp(l - m);
  return m + std::log(s / static_cast<double>(logs.size()));
}

std::string DiagnosticReport::to_json() const {
  nlohmann::json j = {{"corpus_id", corpus_id},
                      {"alignment", alignment},
                      {"uniformity", uniformity},
                      {"pair_count", pair_count},
                      {"sample_count", sample_count}};
  return j.dump(2);
}

PairSample sample_pairs(const Params& params, const Corpus& corpus, std::size_t span_len, std::size_t max_pairs,
                        std::size_t max_singles, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  const std::size_t e = params.config().embed_dim;
  std::vector<std::vector<double>> a, b, singles;
  for (auto d : order) {
    if (a.size() >= max_pairs) break;
    const auto& doc = corpus[d];
    auto pair = sample_span_pair(doc, span_len, rng);
    if (!pair) continue;
    a.push_back(encode(params, featurize(pair->first(doc), params.config())));
    b.push_back(encode(params, featurize(pair->second(doc), params.config())));
  }
  // One span per document, so singles follow the same distribution as the pairs.
  for (std::size_t i = 0; i < std::min(max_singles, a.size()); ++i) singles.push_back(a[i]);
  auto to_matrix = [e](const std::vector<std::vector<double>>& rows) {
    DenseMatrix m(rows.size(), e);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    return m;
  };
  return {to_matrix(a), to_matrix(b), to_matrix(singles)};
}

DiagnosticReport diagnose(const PairSample& sample, std::string corpus_id) {
  DiagnosticReport r;
  r.corpus_id = std::move(corpus_id);
  r.alignment = alignment(sample.first, sample.second);
  r.uniformity = uniformity(sample.singles);
  r.pair_count = sample.first.rows();
  r.sample_count = sample.singles.rows();
  return r;
}

}  // namespace cocodr
