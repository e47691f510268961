#include "cocodr/optimizer.hpp"

#include <cmath>
#include <optional>

#include "cocodr/error.hpp"

namespace cocodr {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("optimizer.kind", "expected `sgd` or `adam`, got `" + name + "`");
}

Optimizer::Optimizer(OptimizerConfig config, std::size_t param_count) : config_(config) {
  if (config_.kind == OptimizerKind::kAdam) {
    m_.assign(param_count, 0.0);
    v_.assign(param_count, 0.0);
  }
}

void Optimizer::step(Params& params, const Gradient& raw_grad, double learning_rate) {
  ++steps_;
  std::optional<Gradient> clipped;
  if (config_.max_grad_norm > 0.0) {
    const double norm = std::sqrt(raw_grad.squared_norm());
    if (norm > config_.max_grad_norm) {
      clipped = raw_grad;
      clipped->scale(config_.max_grad_norm / norm);
    }
  }
  const Gradient& grad = clipped ? *clipped : raw_grad;
  auto theta = params.flat();
  const std::size_t e = params.config().embed_dim;
  const std::size_t hidden_at = params.hidden_offset();
  if (config_.kind == OptimizerKind::kSgd) {
    for (const auto& [d, v] : grad.columns())
      for (std::size_t r = 0; r < e; ++r) theta[d * e + r] -= learning_rate * v[r];
    const auto h = grad.hidden();
    for (std::size_t i = 0; i < h.size(); ++i) theta[hidden_at + i] -= learning_rate * h[i];
    return;
  }
  require(m_.size() == theta.size(), "Optimizer: parameter count changed");
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  auto apply = [&](std::size_t i, double g) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    if (m_[i] == 0.0 && config_.weight_decay == 0.0) return;
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    theta[i] -= learning_rate * (mhat / (std::sqrt(vhat) + config_.epsilon) + config_.weight_decay * theta[i]);
  };
  // Walk the dense layout, consuming sparse gradient columns in order.
  auto col = grad.columns().begin();
  for (std::size_t d = 0; d < params.config().feature_dim; ++d) {
    if (col != grad.columns().end() && col->first == d) {
      for (std::size_t r = 0; r < e; ++r) apply(d * e + r, col->second[r]);
      ++col;
    } else {
      for (std::size_t r = 0; r < e; ++r) apply(d * e + r, 0.0);
    }
  }
  const auto h = grad.hidden();
  for (std::size_t i = 0; i < h.size(); ++i) apply(hidden_at + i, h[i]);
}

void Optimizer::save_to(Archive& archive) const {
  archive.meta["optimizer"] = {{"kind", to_string(config_.kind)},
                               {"beta1", config_.beta1},
                               {"beta2", config_.beta2},
                               {"epsilon", config_.epsilon},
                               {"weight_decay", config_.weight_decay},
                               {"max_grad_norm", config_.max_grad_norm},
                               {"steps", steps_}};
  archive.add("adam_m", m_);
  archive.add("adam_v", v_);
}

void Optimizer::load_from(const Archive& archive) {
  const auto& meta = archive.meta.at("optimizer");
  if (meta.at("kind").get<std::string>() != to_string(config_.kind))
    throw DataError("optimizer state was saved for a different optimizer kind");
  steps_ = meta.at("steps").get<std::uint64_t>();
  const auto& m = archive.block("adam_m");
  const auto& v = archive.block("adam_v");
  if (m.size() != m_.size() || v.size() != v_.size()) throw DataError("optimizer state size mismatch");
  m_ = m;
  v_ = v;
}

double scheduled_learning_rate(double base, std::uint64_t step, std::uint64_t total_steps, double warmup_fraction) {
  if (total_steps == 0) return base;
  const double total = static_cast<double>(total_steps);
  const double warm = std::floor(warmup_fraction * total);
  const double t = static_cast<double>(step);
  if (t < warm) return base * (t + 1.0) / warm;
  const double rest = total - warm;
  if (rest <= 0.0) return base;
  return base * std::max(0.0, (total - t) / rest);
}

}  // namespace cocodr
