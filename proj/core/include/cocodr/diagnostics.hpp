#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cocodr/corpus.hpp"
#include "cocodr/encoder.hpp"
#include "cocodr/matrix.hpp"

namespace cocodr {

/// Positive pairs (row i of `first` with row i of `second`) plus a sample of
/// single embeddings for the uniformity estimate.
struct PairSample {
  DenseMatrix first;
  DenseMatrix second;
  DenseMatrix singles;
};

/// Mean squared distance between L2-normalized positive pairs.
double alignment(const DenseMatrix& first, const DenseMatrix& second);
/// log of the mean of exp(-2 |x - y|^2) over distinct unordered pairs of
/// L2-normalized rows. Requires at least two rows.
double uniformity(const DenseMatrix& sample);

struct DiagnosticReport {
  std::string corpus_id;
  double alignment = 0.0;
  double uniformity = 0.0;
  std::size_t pair_count = 0;
  std::size_t sample_count = 0;

  std::string to_json() const;
};

/// Encodes span pairs drawn with sample_span_pair from at most `max_pairs`
/// documents (seeded random order). The uniformity sample is the first span
/// of up to `max_singles` of those pairs, one per document.
PairSample sample_pairs(const Params& params, const Corpus& corpus, std::size_t span_len, std::size_t max_pairs,
                        std::size_t max_singles, std::uint64_t seed);

DiagnosticReport diagnose(const PairSample& sample, std::string corpus_id);

}  // namespace cocodr
