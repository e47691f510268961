#include "cocodr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cocodr/error.hpp"

namespace cocodr {
namespace {

/// log sum exp over `values`, max-subtracted.
double log_sum_exp(std::span<const double> values) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : values) m = std::max(m, v);
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

void check_scores(std::span<const double> scores) {
  for (double s : scores)
    if (std::isnan(s)) throw ContractViolation("loss: NaN score");
}

}  // namespace

double retrieval_loss_from_scores(double positive, std::span<const double> negatives) {
  std::vector<double> all;
  all.reserve(negatives.size() + 1);
  all.push_back(positive);
  all.insert(all.end(), negatives.begin(), negatives.end());
  check_scores(all);
  return log_sum_exp(all) - positive;
}

RetrievalLoss::RetrievalLoss(const Params& params, const TripletBatch& batch, RetrievalLossOptions options)
    : params_(params) {
  auto add_slot = [&](const FeatureVector& x) {
    slots_.push_back({&x, encode_with_activation(params, x)});
    return slots_.size() - 1;
  };
  std::vector<std::size_t> positive_slot(batch.size());
  items_.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& t = batch[i];
    require(!t.negatives.empty(), "retrieval_loss: every triplet needs at least one negative");
    items_[i].query_slot = add_slot(t.query);
    positive_slot[i] = add_slot(t.positive);
    items_[i].candidates.push_back(positive_slot[i]);
    for (const auto& n : t.negatives) items_[i].candidates.push_back(add_slot(n));
  }
  if (options.in_batch_negatives)
    for (std::size_t i = 0; i < batch.size(); ++i)
      for (std::size_t j = 0; j < batch.size(); ++j)
        if (j != i) items_[i].candidates.push_back(positive_slot[j]);

  item_losses_.resize(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    auto& item = items_[i];
    const auto& q = slots_[item.query_slot].activation.output;
    std::vector<double> scores;
    scores.reserve(item.candidates.size());
    for (auto c : item.candidates) scores.push_back(dot(q, slots_[c].activation.output));
    item_losses_[i] = retrieval_loss_from_scores(scores.front(), std::span(scores).subspan(1));
    const double lse = log_sum_exp(scores);
    item.probs.resize(scores.size());
    for (std::size_t k = 0; k < scores.size(); ++k) item.probs[k] = std::exp(scores[k] - lse);
  }
}

double RetrievalLoss::mean() const {
  if (item_losses_.empty()) return 0.0;
  double s = 0.0;
  for (double l : item_losses_) s += l;
  return s / static_cast<double>(item_losses_.size());
}

Gradient RetrievalLoss::gradient(std::span<const double> coeffs) const {
  require(coeffs.size() == items_.size(), "RetrievalLoss::gradient: one coefficient per item required");
  const std::size_t e = params_.config().embed_dim;
  // Upstream gradient per embedding slot, then one encoder backward per slot.
  std::vector<std::vector<double>> upstream(slots_.size());
  std::vector<char> touched(slots_.size(), 0);
  auto up = [&](std::size_t slot) -> std::vector<double>& {
    if (!touched[slot]) {
      upstream[slot].assign(e, 0.0);
      touched[slot] = 1;
    }
    return upstream[slot];
  };
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (coeffs[i] == 0.0) continue;
    const auto& item = items_[i];
    const auto& q = slots_[item.query_slot].activation.output;
    for (std::size_t k = 0; k < item.candidates.size(); ++k) {
      const double g = coeffs[i] * (item.probs[k] - (k == 0 ? 1.0 : 0.0));
      const auto c = item.candidates[k];
      axpy(g, slots_[c].activation.output, up(item.query_slot));
      axpy(g, q, up(c));
    }
  }
  Gradient grad(params_.config());
  for (std::size_t s = 0; s < slots_.size(); ++s)
    if (touched[s]) grad.accumulate(params_, *slots_[s].features, slots_[s].activation, upstream[s]);
  return grad;
}

Gradient RetrievalLoss::mean_gradient() const {
  if (items_.empty()) return Gradient(params_.config());
  std::vector<double> coeffs(items_.size(), 1.0 / static_cast<double>(items_.size()));
  return gradient(coeffs);
}

std::pair<double, std::vector<double>> retrieval_loss(const Params& params, const TripletBatch& batch,
                                                      RetrievalLossOptions options) {
  RetrievalLoss l(params, batch, options);
  return {l.mean(), std::vector<double>(l.item_losses().begin(), l.item_losses().end())};
}

CocoLoss::CocoLoss(const Params& params, const SpanPairBatch& batch) : params_(params), batch_(batch) {
  require(batch.size() >= 2, "coco_loss: batch needs at least two span pairs");
  const std::size_t m = 2 * batch.size();
  acts_.reserve(m);
  for (const auto& ex : batch) {
    acts_.push_back(encode_with_activation(params, ex.first));
    acts_.push_back(encode_with_activation(params, ex.second));
  }
  sims_ = DenseMatrix(m, m);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t s = a; s < m; ++s) sims_(a, s) = sims_(s, a) = dot(acts_[a].output, acts_[s].output);
  check_scores(sims_.data());

  probs_ = DenseMatrix(m, m);
  double total = 0.0;
  std::vector<double> others;
  for (std::size_t a = 0; a < m; ++a) {
    others.clear();
    for (std::size_t s = 0; s < m; ++s)
      if (s != a) others.push_back(sims_(a, s));
    const double lse = log_sum_exp(others);
    for (std::size_t s = 0; s < m; ++s)
      if (s != a) probs_(a, s) = std::exp(sims_(a, s) - lse);
    total += lse - sims_(a, a ^ 1);
  }
  value_ = total / static_cast<double>(batch.size());
}

Gradient CocoLoss::gradient(double scale) const {
  const std::size_t m = acts_.size();
  const std::size_t e = params_.config().embed_dim;
  const double c = scale / static_cast<double>(batch_.size());
  std::vector<std::vector<double>> upstream(m, std::vector<double>(e, 0.0));
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t s = 0; s < m; ++s) {
      if (s == a) continue;
      const double g = c * (probs_(a, s) - (s == (a ^ 1) ? 1.0 : 0.0));
      axpy(g, acts_[s].output, upstream[a]);
      axpy(g, acts_[a].output, upstream[s]);
    }
  }
  Gradient grad(params_.config());
  for (std::size_t a = 0; a < m; ++a) {
    const auto& ex = batch_[a / 2];
    grad.accumulate(params_, (a % 2 == 0) ? ex.first : ex.second, acts_[a], upstream[a]);
  }
  return grad;
}

double CocoLoss::partner_top1() const {
  const std::size_t m = acts_.size();
  std::size_t hits = 0;
  for (std::size_t a = 0; a < m; ++a) {
    const double target = sims_(a, a ^ 1);
    bool best = true;
    for (std::size_t s = 0; s < m && best; ++s)
      if (s != a && s != (a ^ 1) && sims_(a, s) >= target) best = false;
    hits += best ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(m);
}

double coco_loss(const Params& params, const SpanPairBatch& batch) { return CocoLoss(params, batch).value(); }

std::vector<double> backward(const Params& params, const TripletBatch& batch, RetrievalLossOptions options) {
  return RetrievalLoss(params, batch, options).mean_gradient().to_dense();
}

std::vector<double> backward(const Params& params, const SpanPairBatch& batch) {
  return CocoLoss(params, batch).gradient().to_dense();
}

}  // namespace cocodr
