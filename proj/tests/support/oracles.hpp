#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cocodr/encoder.hpp"
#include "cocodr/losses.hpp"
#include "cocodr/matrix.hpp"

/// Straightforward second implementations used to check the library.
/// Everything here favors obviousness over speed.
namespace cocodr::oracle {

/// Densified bag of hashed features.
std::vector<double> dense(const FeatureVector& x);

/// Embedding by explicit matrix products over the documented flat layout:
/// W is E x D stored column by column, H is E x E row-major.
std::vector<double> matmul_encode(const Params& params, const FeatureVector& x);

double plain_dot(const std::vector<double>& a, const std::vector<double>& b);

/// -log(exp(s+) / sum exp(s)) in long double, without max subtraction.
double retrieval_item_loss(const Params& params, const Triplet& t, const std::vector<const FeatureVector*>& extra = {});
/// Per-item losses, adding the other items' positives when `in_batch` is set.
std::vector<double> retrieval_item_losses(const Params& params, const TripletBatch& batch, bool in_batch);

/// Sum over all 2n anchors of -log(exp<a, partner> / sum_{s != a} exp<a, s>), divided by n.
double coco_loss(const Params& params, const SpanPairBatch& batch);

/// Central differences of `f` along every coordinate in `coords`.
std::vector<double> central_differences(const std::function<double(const Params&)>& f, const Params& at,
                                        const std::vector<std::size_t>& coords, double h = 1e-5);

/// ||a - b|| / max(||a||, ||b||, floor).
double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12);

/// Lloyd's algorithm from k-means++ seeds drawn with the same random protocol
/// as the library (first center uniform; later centers by D^2 sampling with
/// one uniform draw and a cumulative scan).
struct LloydResult {
  std::vector<std::size_t> assignment;
  DenseMatrix centroids;
  double objective = 0.0;
};
LloydResult lloyd(const DenseMatrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iters);

/// Nearest centroid by exhaustive scan, ties to the lowest index.
std::size_t nearest_centroid(const DenseMatrix& centroids, const std::vector<double>& p);

double weighted_jaccard(const std::map<std::string, double>& s, const std::map<std::string, double>& t);

/// nDCG@k of a ranking given as grades in rank order; `all_grades` are every
/// judged grade of the query.
double ndcg(const std::vector<int>& ranked_grades, std::vector<int> all_grades, std::size_t k);

/// Expected nDCG@k of a uniformly random permutation of `n` docs holding the
/// given positive grades (the rest grade 0), by exact linearity of expectation.
double expected_random_ndcg(std::size_t n, const std::vector<int>& positive_grades, std::size_t k);

/// Alignment and uniformity by double loops on explicitly normalized rows.
double alignment(const DenseMatrix& a, const DenseMatrix& b);
double uniformity(const DenseMatrix& x);

/// Uniform random simplex point of dimension k.
std::vector<double> random_simplex(std::size_t k, std::uint64_t seed);

}  // namespace cocodr::oracle
