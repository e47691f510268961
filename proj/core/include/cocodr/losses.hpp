#pragma once

#include <span>
#include <utility>
#include <vector>

#include "cocodr/encoder.hpp"

namespace cocodr {

/// One training example: query, a relevant document, and >= 1 negatives.
struct Triplet {
  FeatureVector query;
  FeatureVector positive;
  std::vector<FeatureVector> negatives;
};
using TripletBatch = std::vector<Triplet>;

struct RetrievalLossOptions {
  /// Also treat the other triplets' positives as negatives.
  bool in_batch_negatives = false;
};

/// -log softmax of the positive score against the positive plus negatives.
/// Max-subtracted; throws ContractViolation on NaN scores.
double retrieval_loss_from_scores(double positive, std::span<const double> negatives);

/// Forward pass of the retrieval objective over a batch, keeping what the
/// backward pass needs. Holds references to `params` and `batch`.
class RetrievalLoss {
 public:
  RetrievalLoss(const Params& params, const TripletBatch& batch, RetrievalLossOptions options = {});

  std::span<const double> item_losses() const noexcept { return item_losses_; }
  /// Mean per-item loss; 0 for an empty batch.
  double mean() const;

  /// sum_i coeffs[i] * grad(loss_i).
  Gradient gradient(std::span<const double> coeffs) const;
  Gradient mean_gradient() const;

 private:
  struct Slot {
    const FeatureVector* features;
    Activation activation;
  };
  struct Item {
    std::size_t query_slot;
    std::vector<std::size_t> candidates;  // [0] is the positive
    std::vector<double> probs;            // softmax over candidates
  };

  const Params& params_;
  std::vector<Slot> slots_;
  std::vector<Item> items_;
  std::vector<double> item_losses_;
};

/// Mean loss and per-item losses.
std::pair<double, std::vector<double>> retrieval_loss(const Params& params, const TripletBatch& batch,
                                                      RetrievalLossOptions options = {});

/// Two disjoint spans of one document, featurized.
struct SpanPairExample {
  FeatureVector first;
  FeatureVector second;
};
using SpanPairBatch = std::vector<SpanPairExample>;

/// Span-pair contrastive loss with in-batch negatives.
///
/// Every one of the 2n spans acts as an anchor once. Its term is
/// -log exp<a, partner> / sum_{s != a} exp<a, s>, where s ranges over all
/// other spans in the batch, partner included. The total is the sum of all
/// 2n terms divided by n.
class CocoLoss {
 public:
  /// Requires batch.size() >= 2.
  CocoLoss(const Params& params, const SpanPairBatch& batch);

  double value() const noexcept { return value_; }
  Gradient gradient(double scale = 1.0) const;
  /// Fraction of anchors whose partner outscores every other batch span.
  double partner_top1() const;

 private:
  const Params& params_;
  const SpanPairBatch& batch_;
  std::vector<Activation> acts_;  // 2i = first, 2i+1 = second
  DenseMatrix sims_;
  DenseMatrix probs_;  // row a: softmax over s != a (diagonal 0)
  double value_ = 0.0;
};

double coco_loss(const Params& params, const SpanPairBatch& batch);

/// Dense analytic gradients in the Params flat layout.
std::vector<double> backward(const Params& params, const TripletBatch& batch, RetrievalLossOptions options = {});
std::vector<double> backward(const Params& params, const SpanPairBatch& batch);

}  // namespace cocodr
