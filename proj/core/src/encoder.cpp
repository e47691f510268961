#include "cocodr/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "cocodr/archive.hpp"
#include "cocodr/error.hpp"
#include "cocodr/parallel.hpp"
#include "cocodr/rng.hpp"

namespace cocodr {

std::uint64_t hash_token(std::string_view token, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : token) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(h ^ mix64(seed));
}

FeatureVector featurize(std::span<const std::string> tokens, std::size_t dim, std::uint64_t seed) {
  require(dim > 0 && dim <= UINT32_MAX, "featurize: feature dimension out of range");
  std::vector<std::uint32_t> buckets;
  buckets.reserve(tokens.size());
  for (const auto& t : tokens) buckets.push_back(static_cast<std::uint32_t>(hash_token(t, seed) % dim));
  std::sort(buckets.begin(), buckets.end());
  FeatureVector fv{dim, {}};
  for (auto b : buckets) {
    if (!fv.entries.empty() && fv.entries.back().index == b)
      fv.entries.back().count += 1.0;
    else
      fv.entries.push_back({b, 1.0});
  }
  return fv;
}

Params::Params(EncoderConfig config) : config_(config) {
  require(config_.feature_dim > 0 && config_.embed_dim > 0, "Params: dimensions must be positive");
  const std::size_t e = config_.embed_dim;
  values_.assign(config_.feature_dim * e + (config_.hidden ? e * e : 0), 0.0);
}

Params Params::initialize(const EncoderConfig& config) {
  Params p(config);
  Rng rng(config.init_seed);
  const double w_range = config.init_scale / std::sqrt(static_cast<double>(config.feature_dim));
  const double h_range = config.init_scale / std::sqrt(static_cast<double>(config.embed_dim));
  auto flat = p.flat();
  for (std::size_t i = 0; i < p.hidden_offset(); ++i) flat[i] = rng.uniform(-w_range, w_range);
  for (std::size_t i = p.hidden_offset(); i < flat.size(); ++i) flat[i] = rng.uniform(-h_range, h_range);
  return p;
}

Activation encode_with_activation(const Params& params, const FeatureVector& x) {
  const auto& cfg = params.config();
  require(x.dim == cfg.feature_dim, "encode: feature dimension mismatch");
  const std::size_t e = cfg.embed_dim;
  Activation act;
  act.linear.assign(e, 0.0);
  for (const auto& f : x.entries) {
    require(f.index < cfg.feature_dim, "encode: feature index out of range");
    axpy(f.count, params.column(f.index), act.linear);
  }
  if (!cfg.hidden) {
    act.output = act.linear;
    return act;
  }
  act.output.assign(e, 0.0);
  for (std::size_t r = 0; r < e; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < e; ++c) s += params.hidden(r, c) * act.linear[c];
    act.output[r] = std::tanh(s);
  }
  return act;
}

std::vector<double> encode(const Params& params, const FeatureVector& x) {
  return encode_with_activation(params, x).output;
}

double score(const Params& params, const FeatureVector& q, const FeatureVector& d) {
  return dot(encode(params, q), encode(params, d));
}

EmbeddingMatrix encode_all(const Params& params, std::span<const FeatureVector> features,
                           std::vector<std::string> ids, unsigned threads) {
  require(ids.size() == features.size(), "encode_all: id count differs from feature count");
  EmbeddingMatrix m{std::move(ids), DenseMatrix(features.size(), params.config().embed_dim)};
  parallel_for(features.size(), threads, [&](std::size_t i) {
    const auto row = encode(params, features[i]);
    std::copy(row.begin(), row.end(), m.values.row(i).begin());
  });
  return m;
}

Gradient::Gradient(const EncoderConfig& config)
    : config_(config), hidden_(config.hidden ? config.embed_dim * config.embed_dim : 0, 0.0) {}

void Gradient::add_to_column(std::uint32_t d, double scale, std::span<const double> v) {
  require(d < config_.feature_dim && v.size() == config_.embed_dim, "Gradient::add_to_column: shape mismatch");
  auto [it, inserted] = columns_.try_emplace(d);
  if (inserted) it->second.assign(config_.embed_dim, 0.0);
  axpy(scale, v, it->second);
}

void Gradient::accumulate(const Params& params, const FeatureVector& x, const Activation& act,
                          std::span<const double> upstream, double scale) {
  const std::size_t e = config_.embed_dim;
  require(upstream.size() == e, "Gradient::accumulate: upstream width mismatch");
  if (!config_.hidden) {
    for (const auto& f : x.entries) add_to_column(f.index, scale * f.count, upstream);
    return;
  }
  // y = tanh(H z), z = W x.
  std::vector<double> pre(e), dz(e, 0.0);
  for (std::size_t r = 0; r < e; ++r) pre[r] = upstream[r] * (1.0 - act.output[r] * act.output[r]);
  for (std::size_t r = 0; r < e; ++r) {
    if (pre[r] == 0.0) continue;
    for (std::size_t c = 0; c < e; ++c) {
      hidden_[r * e + c] += scale * pre[r] * act.linear[c];
      dz[c] += params.hidden(r, c) * pre[r];
    }
  }
  for (const auto& f : x.entries) add_to_column(f.index, scale * f.count, dz);
}

void Gradient::add_scaled(double c, const Gradient& other) {
  require(other.config_.feature_dim == config_.feature_dim && other.config_.embed_dim == config_.embed_dim &&
              other.config_.hidden == config_.hidden,
          "Gradient::add_scaled: shape mismatch");
  for (const auto& [d, v] : other.columns_) add_to_column(d, c, v);
  axpy(c, other.hidden_, hidden_);
}

void Gradient::scale(double c) {
  for (auto& [d, v] : columns_)
    for (double& x : v) x *= c;
  for (double& x : hidden_) x *= c;
}

double Gradient::dot(const Gradient& other) const {
  double s = 0.0;
  auto a = columns_.begin();
  auto b = other.columns_.begin();
  while (a != columns_.end() && b != other.columns_.end()) {
    if (a->first < b->first) {
      ++a;
    } else if (b->first < a->first) {
      ++b;
    } else {
      s += cocodr::dot(a->second, b->second);
      ++a;
      ++b;
    }
  }
  return s + cocodr::dot(hidden_, other.hidden_);
}

bool Gradient::is_zero() const {
  for (const auto& [d, v] : columns_)
    for (double x : v)
      if (x != 0.0) return false;
  for (double x : hidden_)
    if (x != 0.0) return false;
  return true;
}

std::vector<double> Gradient::to_dense() const {
  const std::size_t e = config_.embed_dim;
  std::vector<double> out(config_.feature_dim * e + hidden_.size(), 0.0);
  for (const auto& [d, v] : columns_) std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(d * e));
  std::copy(hidden_.begin(), hidden_.end(), out.begin() + static_cast<std::ptrdiff_t>(config_.feature_dim * e));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Params& params) {
  const auto& c = params.config();
  Archive a;
  a.kind = "cocodr.checkpoint";
  a.meta = {{"version", 1},
            {"D", c.feature_dim},
            {"E", c.embed_dim},
            {"hidden", c.hidden},
            {"hash_seed", c.hash_seed},
            {"init_seed", c.init_seed},
            {"init_scale", c.init_scale}};
  a.add("params", std::vector<double>(params.flat().begin(), params.flat().end()));
  write_archive(path, a);
}

Params load_checkpoint(const std::filesystem::path& path) {
  const Archive a = read_archive(path, "cocodr.checkpoint");
  EncoderConfig c;
  try {
    c.feature_dim = a.meta.at("D").get<std::size_t>();
    c.embed_dim = a.meta.at("E").get<std::size_t>();
    c.hidden = a.meta.at("hidden").get<bool>();
    c.hash_seed = a.meta.at("hash_seed").get<std::uint64_t>();
    c.init_seed = a.meta.at("init_seed").get<std::uint64_t>();
    c.init_scale = a.meta.value("init_scale", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": incomplete checkpoint header (" + e.what() + ")");
  }
  Params p(c);
  const auto& values = a.block("params");
  if (values.size() != p.size())
    throw DataError(path.string() + ": parameter block has " + std::to_string(values.size()) + " values, expected " +
                    std::to_string(p.size()));
  std::copy(values.begin(), values.end(), p.flat().begin());
  return p;
}

}  // namespace cocodr
