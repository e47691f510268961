#include "cocodr/idro.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cocodr/error.hpp"

namespace cocodr {
namespace {

void check_simplex(std::span<const double> omega, const char* where) {
  require(!omega.empty(), std::string(where) + ": empty weight vector");
  double s = 0.0;
  for (double w : omega) {
    require(w > 0.0 && std::isfinite(w), std::string(where) + ": weights must be positive and finite");
    s += w;
  }
  require(std::abs(s - 1.0) < 1e-9, std::string(where) + ": weights must sum to 1");
}

constexpr double kMinWeight = std::numeric_limits<double>::min();

/// p_i proportional to prior_i * exp(logits_i), max-subtracted. Entries that
/// would underflow to zero are held at the smallest normal double.
std::vector<double> tilt(std::span<const double> prior, std::span<const double> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < prior.size(); ++i) m = std::max(m, std::log(prior[i]) + logits[i]);
  std::vector<double> out(prior.size());
  double z = 0.0;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    out[i] = std::exp(std::log(prior[i]) + logits[i] - m);
    z += out[i];
  }
  for (double& w : out) w = std::max(w / z, kMinWeight);
  return out;
}

std::vector<std::size_t> present_indices(std::span<const char> present) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < present.size(); ++i)
    if (present[i]) idx.push_back(i);
  return idx;
}

}  // namespace

GroupState GroupState::uniform(std::size_t k, double beta, double tau) {
  require(k >= 1, "GroupState: k must be at least 1");
  GroupState s;
  s.k = k;
  s.losses.assign(k, 0.0);
  s.alpha.assign(k, 1.0 / static_cast<double>(k));
  s.omega.assign(k, 1.0 / static_cast<double>(k));
  s.present.assign(k, 0);
  s.beta = beta;
  s.tau = tau;
  return s;
}

std::vector<double> alpha_weights(std::span<const double> losses, double beta) {
  require(beta >= 0.0, "alpha_weights: beta must be nonnegative");
  require(!losses.empty(), "alpha_weights: no clusters");
  std::vector<double> a(losses.size());
  double z = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    require(losses[i] >= 0.0, "alpha_weights: negative loss");
    a[i] = std::pow(losses[i], beta);  // pow(0, 0) == 1
    z += a[i];
  }
  if (z == 0.0) {
    std::fill(a.begin(), a.end(), 1.0 / static_cast<double>(a.size()));
    return a;
  }
  for (double& x : a) x /= z;
  return a;
}

DenseMatrix r_matrix(std::span<const double> losses, std::span<const Gradient> grads, double beta) {
  require(losses.size() == grads.size(), "r_matrix: one gradient per cluster required");
  const std::size_t k = losses.size();
  DenseMatrix r(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j)
      r(i, j) = r(j, i) = std::pow(losses[i] * losses[j], beta) * grads[i].dot(grads[j]);
  return r;
}

DenseMatrix r_matrix(std::span<const double> losses, const DenseMatrix& grads, double beta) {
  require(losses.size() == grads.rows(), "r_matrix: one gradient row per cluster required");
  const std::size_t k = losses.size();
  DenseMatrix r(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j)
      r(i, j) = r(j, i) = std::pow(losses[i] * losses[j], beta) * dot(grads.row(i), grads.row(j));
  return r;
}

std::vector<double> omega_update(std::span<const double> omega_prev, const DenseMatrix& r, double tau) {
  require(tau > 0.0, "omega_update: tau must be positive");
  check_simplex(omega_prev, "omega_update");
  const std::size_t k = omega_prev.size();
  require(r.rows() == k && r.cols() == k, "omega_update: r must be K x K");
  if (std::isinf(tau)) return {omega_prev.begin(), omega_prev.end()};
  std::vector<double> logits(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += r(i, j);
    logits[i] = s / tau;
  }
  return tilt(omega_prev, logits);
}

double omega_objective(const OmegaProblem& p, std::span<const double> omega) {
  const std::size_t k = p.omega_prev.size();
  double change = 0.0, kl = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double inner = 0.0;
      for (std::size_t c = 0; c < p.grads.cols(); ++c) inner += p.grads(i, c) * p.grads(j, c);
      const double coupling = p.coupling == Coupling::kLossPower ? std::pow(p.losses[i] * p.losses[j], p.beta)
                                                                 : p.alpha[i] * p.alpha[j];
      row += coupling * inner;
    }
    change += omega[i] * row;
    if (omega[i] > 0.0) kl += omega[i] * std::log(omega[i] / p.omega_prev[i]);
  }
  return -p.eta * change + p.tau * kl;
}

OracleResult omega_oracle(const OmegaProblem& p, double tolerance, std::size_t max_iters) {
  const std::size_t k = p.omega_prev.size();
  require(p.tau > 0.0, "omega_oracle: tau must be positive");
  check_simplex(p.omega_prev, "omega_oracle");
  require(p.grads.rows() == k, "omega_oracle: one gradient row per cluster required");
  require(p.coupling == Coupling::kLossPower ? p.losses.size() == k : p.alpha.size() == k,
          "omega_oracle: coupling inputs must have K entries");

  OracleResult res;
  if (k == 1) {
    res.omega = {1.0};
    res.converged = true;
    res.objective = omega_objective(p, res.omega);
    return res;
  }

  // Linear coefficient of omega_i in the loss-change term.
  std::vector<double> lin(k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double inner = 0.0;
      for (std::size_t c = 0; c < p.grads.cols(); ++c) inner += p.grads(i, c) * p.grads(j, c);
      const double coupling = p.coupling == Coupling::kLossPower ? std::pow(p.losses[i] * p.losses[j], p.beta)
                                                                 : p.alpha[i] * p.alpha[j];
      lin[i] += coupling * inner;
    }

  // Iterate in log space so tiny weights stay representable.
  std::vector<double> logw(k);
  for (std::size_t i = 0; i < k; ++i) logw[i] = std::log(p.omega_prev[i]);
  auto weights = [&](const std::vector<double>& lw) {
    const double m = *std::max_element(lw.begin(), lw.end());
    std::vector<double> w(k);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += (w[i] = std::exp(lw[i] - m));
    for (double& x : w) x /= z;
    return w;
  };
  auto objective = [&](const std::vector<double>& lw, const std::vector<double>& w) {
    // Log-domain KL avoids log(0) for underflowed weights.
    const double m = *std::max_element(lw.begin(), lw.end());
    double z = 0.0;
    for (double x : lw) z += std::exp(x - m);
    const double log_z = m + std::log(z);
    double f = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      f += -p.eta * lin[i] * w[i] + p.tau * w[i] * (lw[i] - log_z - std::log(p.omega_prev[i]));
    return f;
  };

  std::vector<double> w = weights(logw);
  double f = objective(logw, w);
  double step = 1.0 / p.tau;
  std::vector<double> grad(k), trial(k);
  for (std::size_t it = 0; it < max_iters; ++it) {
    // Partial derivatives of the objective in omega (log-domain KL term).
    double mean = 0.0;
    {
      const double m = *std::max_element(logw.begin(), logw.end());
      double z = 0.0;
      for (double x : logw) z += std::exp(x - m);
      const double log_z = m + std::log(z);
      for (std::size_t i = 0; i < k; ++i) {
        grad[i] = -p.eta * lin[i] + p.tau * (logw[i] - log_z - std::log(p.omega_prev[i]) + 1.0);
        mean += w[i] * grad[i];
      }
    }
    double residual = 0.0;
    for (std::size_t i = 0; i < k; ++i) residual = std::max(residual, std::abs(grad[i] - mean));
    res.kkt_residual = residual;
    res.iterations = it;
    if (residual < tolerance) {
      res.converged = true;
      break;
    }
    // Armijo backtracking on the mirror step.
    double t = std::min(step * 2.0, 1.0 / p.tau);
    for (int bt = 0; bt < 60; ++bt) {
      for (std::size_t i = 0; i < k; ++i) trial[i] = logw[i] - t * grad[i];
      const auto tw = weights(trial);
      const double tf = objective(trial, tw);
      double decrease = 0.0;
      for (std::size_t i = 0; i < k; ++i) decrease += grad[i] * (tw[i] - w[i]);
      if (tf <= f + 1e-4 * decrease || bt == 59) {
        logw = trial;
        w = tw;
        f = tf;
        step = t;
        break;
      }
      t *= 0.5;
    }
  }
  res.omega = w;
  res.objective = omega_objective(p, w);
  return res;
}

double first_order_loss_change(std::span<const double> alpha, std::span<const double> omega, const DenseMatrix& grads,
                               double eta) {
  const std::size_t k = alpha.size();
  require(omega.size() == k && grads.rows() == k, "first_order_loss_change: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) s += alpha[i] * alpha[j] * omega[i] * dot(grads.row(i), grads.row(j));
  return -eta * s;
}

ClusterBatchStats cluster_batch_stats(std::span<const double> item_losses, std::span<const std::size_t> item_cluster,
                                      std::size_t k) {
  require(item_losses.size() == item_cluster.size(), "cluster_batch_stats: one cluster per item required");
  ClusterBatchStats st{std::vector<double>(k, 0.0), std::vector<std::size_t>(k, 0), std::vector<char>(k, 0)};
  for (std::size_t i = 0; i < item_losses.size(); ++i) {
    require(item_cluster[i] < k, "idro: item assigned to no valid cluster");
    st.losses[item_cluster[i]] += item_losses[i];
    ++st.counts[item_cluster[i]];
  }
  for (std::size_t c = 0; c < k; ++c)
    if (st.counts[c]) {
      st.losses[c] /= static_cast<double>(st.counts[c]);
      st.present[c] = 1;
    }
  return st;
}

std::vector<double> combination_coefficients(std::span<const double> weights, std::span<const char> present) {
  require(weights.size() == present.size(), "combination_coefficients: size mismatch");
  std::vector<double> c(weights.size(), 0.0);
  double top = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (present[i]) {
      require(weights[i] >= 0.0 && std::isfinite(weights[i]), "combination_coefficients: invalid weight");
      top = std::max(top, weights[i]);
    }
  if (top == 0.0) return c;
  double z = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (present[i]) z += (c[i] = weights[i] / top);
  for (double& x : c) x /= z;
  return c;
}

namespace {

IdroLoss combine(std::span<const double> item_losses, std::span<const std::size_t> item_cluster,
                 const ClusterBatchStats& st, std::vector<double> coeffs) {
  IdroLoss out;
  for (std::size_t c = 0; c < coeffs.size(); ++c)
    if (st.present[c]) out.loss += coeffs[c] * st.losses[c];
  out.item_coefficients.resize(item_losses.size());
  for (std::size_t i = 0; i < item_losses.size(); ++i) {
    const auto c = item_cluster[i];
    out.item_coefficients[i] = coeffs[c] / static_cast<double>(st.counts[c]);
  }
  out.cluster_coefficients = std::move(coeffs);
  return out;
}

}  // namespace

IdroLoss idro_loss(std::span<const double> item_losses, std::span<const std::size_t> item_cluster, GroupState& state) {
  const auto st = cluster_batch_stats(item_losses, item_cluster, state.k);
  const auto idx = present_indices(st.present);
  std::vector<double> present_losses;
  for (auto i : idx) present_losses.push_back(st.losses[i]);

  state.losses = st.losses;
  state.present = st.present;
  std::fill(state.alpha.begin(), state.alpha.end(), 0.0);
  if (!idx.empty()) {
    const auto a = alpha_weights(present_losses, state.beta);
    for (std::size_t n = 0; n < idx.size(); ++n) state.alpha[idx[n]] = a[n];
  }
  std::vector<double> w(state.k, 0.0);
  for (auto i : idx) w[i] = state.alpha[i] * state.omega[i];
  return combine(item_losses, item_cluster, st, combination_coefficients(w, st.present));
}

IdroLoss weighted_cluster_loss(std::span<const double> item_losses, std::span<const std::size_t> item_cluster,
                               std::size_t k, std::span<const double> weights) {
  require(weights.size() == k, "weighted_cluster_loss: one weight per cluster required");
  const auto st = cluster_batch_stats(item_losses, item_cluster, k);
  return combine(item_losses, item_cluster, st, combination_coefficients(weights, st.present));
}

static void renormalize(std::vector<double>& omega) {
  double z = 0.0;
  for (double w : omega) z += w;
  for (double& w : omega) w = std::max(w / z, kMinWeight);
}

void update_present_omega(GroupState& state, const DenseMatrix& r) {
  ++state.step;
  const auto idx = present_indices(state.present);
  if (idx.empty() || std::isinf(state.tau)) return;
  double mass = 0.0;
  for (auto i : idx) mass += state.omega[i];
  std::vector<double> sub_prev;
  for (auto i : idx) sub_prev.push_back(state.omega[i] / mass);
  DenseMatrix sub_r(idx.size(), idx.size());
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = 0; b < idx.size(); ++b) sub_r(a, b) = r(idx[a], idx[b]);
  const auto sub = omega_update(sub_prev, sub_r, state.tau);
  for (std::size_t a = 0; a < idx.size(); ++a) state.omega[idx[a]] = sub[a] * mass;
  renormalize(state.omega);
}

std::vector<double> groupdro_update(std::span<const double> omega_prev, std::span<const double> losses,
                                    double step_size) {
  check_simplex(omega_prev, "groupdro_update");
  require(losses.size() == omega_prev.size(), "groupdro_update: one loss per cluster required");
  std::vector<double> logits(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) logits[i] = step_size * losses[i];
  return tilt(omega_prev, logits);
}

void groupdro_update_present(std::vector<double>& omega, std::span<const double> losses, std::span<const char> present,
                             double step_size) {
  const auto idx = present_indices(present);
  if (idx.empty()) return;
  double mass = 0.0;
  for (auto i : idx) mass += omega[i];
  std::vector<double> sub_prev, sub_losses;
  for (auto i : idx) {
    sub_prev.push_back(omega[i] / mass);
    sub_losses.push_back(losses[i]);
  }
  const auto sub = groupdro_update(sub_prev, sub_losses, step_size);
  for (std::size_t a = 0; a < idx.size(); ++a) omega[idx[a]] = sub[a] * mass;
  renormalize(omega);
}

}  // namespace cocodr
