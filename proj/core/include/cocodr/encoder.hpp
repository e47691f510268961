#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cocodr/matrix.hpp"

namespace cocodr {

/// Shape and seeds of the shared query/document encoder.
struct EncoderConfig {
  std::size_t feature_dim = std::size_t{1} << 15;  ///< hashed vocabulary buckets (D)
  std::size_t embed_dim = 64;                      ///< embedding width (E)
  bool hidden = false;                             ///< add an E x E tanh layer after the projection
  std::uint64_t hash_seed = 0;
  std::uint64_t init_seed = 0;
  /// Multiplies the default init range 1/sqrt(D) (and 1/sqrt(E) for the hidden layer).
  double init_scale = 1.0;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct FeatureEntry {
  std::uint32_t index;
  double count;
  friend bool operator==(const FeatureEntry&, const FeatureEntry&) = default;
};

/// Sparse bag of hashed features, sorted by index, counts positive.
struct FeatureVector {
  std::size_t dim = 0;
  std::vector<FeatureEntry> entries;

  bool empty() const noexcept { return entries.empty(); }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Seeded 64-bit hash of a token; stable across platforms and runs.
std::uint64_t hash_token(std::string_view token, std::uint64_t seed);

FeatureVector featurize(std::span<const std::string> tokens, std::size_t dim, std::uint64_t seed);
inline FeatureVector featurize(std::span<const std::string> tokens, const EncoderConfig& cfg) {
  return featurize(tokens, cfg.feature_dim, cfg.hash_seed);
}

/// Trainable encoder weights as one flat array.
///
/// Layout: the projection W (E x D) column-major, so the E weights of
/// feature bucket d occupy [d*E, (d+1)*E); then, when the hidden layer is
/// enabled, H (E x E) row-major.
class Params {
 public:
  /// All-zero weights.
  explicit Params(EncoderConfig config);
  /// Uniform init in [-s/sqrt(D), s/sqrt(D)] (H: [-s/sqrt(E), s/sqrt(E)]), s = init_scale.
  static Params initialize(const EncoderConfig& config);

  const EncoderConfig& config() const noexcept { return config_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t hidden_offset() const noexcept { return config_.feature_dim * config_.embed_dim; }

  std::span<const double> column(std::size_t d) const {
    return {values_.data() + d * config_.embed_dim, config_.embed_dim};
  }
  std::span<double> column(std::size_t d) { return {values_.data() + d * config_.embed_dim, config_.embed_dim}; }
  /// H(r, c); only valid when config().hidden.
  double hidden(std::size_t r, std::size_t c) const {
    return values_[hidden_offset() + r * config_.embed_dim + c];
  }

  std::span<double> flat() noexcept { return values_; }
  std::span<const double> flat() const noexcept { return values_; }

  friend bool operator==(const Params&, const Params&) = default;

 private:
  EncoderConfig config_;
  std::vector<double> values_;
};

/// Forward activations kept for the backward pass.
struct Activation {
  std::vector<double> linear;  ///< W x
  std::vector<double> output;  ///< embedding: tanh(H W x) or W x
};

Activation encode_with_activation(const Params& params, const FeatureVector& x);
/// g(x) as a length-E vector. No output normalization.
std::vector<double> encode(const Params& params, const FeatureVector& x);
/// f(q, d) = <g(q), g(d)>.
double score(const Params& params, const FeatureVector& q, const FeatureVector& d);

/// Row-per-item embeddings with the matching ids.
struct EmbeddingMatrix {
  std::vector<std::string> ids;
  DenseMatrix values;

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t width() const noexcept { return values.cols(); }
};

EmbeddingMatrix encode_all(const Params& params, std::span<const FeatureVector> features,
                           std::vector<std::string> ids, unsigned threads = 1);

/// Gradient with respect to Params, stored sparsely: only the projection
/// columns touched by a batch are materialized, plus the dense hidden block.
class Gradient {
 public:
  explicit Gradient(const EncoderConfig& config);

  const EncoderConfig& config() const noexcept { return config_; }

  /// Column d of dW += scale * v.
  void add_to_column(std::uint32_t d, double scale, std::span<const double> v);
  std::span<double> hidden() noexcept { return hidden_; }
  std::span<const double> hidden() const noexcept { return hidden_; }
  const std::map<std::uint32_t, std::vector<double>>& columns() const noexcept { return columns_; }

  /// Back-propagates an upstream embedding gradient through one encoded item:
  /// *this += scale * d<upstream, g(x)>/dtheta.
  void accumulate(const Params& params, const FeatureVector& x, const Activation& act,
                  std::span<const double> upstream, double scale = 1.0);

  void add_scaled(double c, const Gradient& other);
  void scale(double c);
  double dot(const Gradient& other) const;
  double squared_norm() const { return dot(*this); }
  bool is_zero() const;

  /// Dense vector in the Params flat layout.
  std::vector<double> to_dense() const;

 private:
  EncoderConfig config_;
  std::map<std::uint32_t, std::vector<double>> columns_;
  std::vector<double> hidden_;
};

void save_checkpoint(const std::filesystem::path& path, const Params& params);
Params load_checkpoint(const std::filesystem::path& path);

}  // namespace cocodr
