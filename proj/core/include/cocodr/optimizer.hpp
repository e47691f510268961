#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cocodr/archive.hpp"
#include "cocodr/encoder.hpp"

namespace cocodr {

enum class OptimizerKind { kSgd, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  ///< decoupled (AdamW-style); Adam only
  /// Rescale the whole gradient to this Euclidean norm when it is longer;
  /// 0 disables clipping.
  double max_grad_norm = 0.0;
};

/// Plain gradient descent or Adam(W). Adam keeps dense moment vectors.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::size_t param_count);

  void step(Params& params, const Gradient& grad, double learning_rate);
  std::uint64_t steps() const noexcept { return steps_; }
  const OptimizerConfig& config() const noexcept { return config_; }

  void save_to(Archive& archive) const;
  void load_from(const Archive& archive);

 private:
  OptimizerConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t steps_ = 0;
};

/// Linear warmup over the first `warmup_fraction` of `total_steps`, then
/// linear decay to zero.
double scheduled_learning_rate(double base, std::uint64_t step, std::uint64_t total_steps, double warmup_fraction);

}  // namespace cocodr
