#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cocodr/encoder.hpp"
#include "cocodr/matrix.hpp"

namespace cocodr {

/// Per-cluster weighting state carried between training steps.
struct GroupState {
  std::size_t k = 0;
  std::vector<double> losses;  ///< latest per-cluster loss (0 for clusters absent from the last batch)
  std::vector<double> alpha;   ///< difficulty weights, sum to 1 over the last batch's clusters
  std::vector<double> omega;   ///< robust weights on the simplex, strictly positive
  std::vector<char> present;   ///< cluster appeared in the last batch
  double beta = 0.25;
  double tau = 1.0;
  std::uint64_t step = 0;

  /// omega uniform, alpha uniform, losses zero.
  static GroupState uniform(std::size_t k, double beta, double tau);
};

/// alpha_i = l_i^beta / sum_j l_j^beta; uniform when every loss is zero.
/// Throws ContractViolation on a negative loss or beta < 0.
std::vector<double> alpha_weights(std::span<const double> losses, double beta);

/// r_ij = (l_i l_j)^beta * <g_i, g_j>, symmetric by construction.
DenseMatrix r_matrix(std::span<const double> losses, std::span<const Gradient> grads, double beta);
/// Same, with gradients as the rows of a dense K x P matrix.
DenseMatrix r_matrix(std::span<const double> losses, const DenseMatrix& grads, double beta);

/// Closed-form minimizer of the KL-regularized first-order loss change:
/// omega_i proportional to omega_prev_i * exp(s_i / tau), s_i = sum_j r_ij.
/// tau = +infinity returns omega_prev unchanged. Throws ContractViolation
/// for tau <= 0 or when omega_prev is not a positive simplex point.
std::vector<double> omega_update(std::span<const double> omega_prev, const DenseMatrix& r, double tau);

/// How the oracle couples cluster gradients in the first-order loss change.
enum class Coupling {
  kLossPower,     ///< (l_i l_j)^beta, the coupling omega_update is derived for
  kAlphaProduct,  ///< alpha_i alpha_j, equal to kLossPower / (sum_k l_k^beta)^2
};

struct OmegaProblem {
  std::vector<double> omega_prev;
  std::vector<double> losses;
  DenseMatrix grads;  ///< K x P, row i = gradient of cluster i's loss
  std::vector<double> alpha;
  double beta = 0.25;
  double tau = 1.0;
  /// Step size of the gradient step whose loss change is approximated. The
  /// closed form corresponds to eta = 1; a general eta is equivalent to
  /// omega_update with tau / eta.
  double eta = 1.0;
  Coupling coupling = Coupling::kLossPower;
};

struct OracleResult {
  std::vector<double> omega;
  bool converged = false;
  std::size_t iterations = 0;
  double objective = 0.0;
  double kkt_residual = 0.0;
};

/// Objective minimized over the simplex:
/// -eta * sum_i omega_i sum_j c_ij <g_i, g_j> + tau * KL(omega || omega_prev).
double omega_objective(const OmegaProblem& problem, std::span<const double> omega);

/// Numerical minimizer of omega_objective (exponentiated-gradient descent
/// with Armijo backtracking, run to a KKT residual below `tolerance`).
/// Independent of omega_update; used to validate it.
OracleResult omega_oracle(const OmegaProblem& problem, double tolerance = 1e-8, std::size_t max_iters = 100000);

/// First-order change of the alpha-weighted cluster losses after one step of
/// size eta along the weighted gradient:
/// -eta * sum_ij alpha_i alpha_j omega_i <g_i, g_j>.
double first_order_loss_change(std::span<const double> alpha, std::span<const double> omega, const DenseMatrix& grads,
                               double eta);

/// Mean per-item loss of every cluster over the items it owns in a batch.
struct ClusterBatchStats {
  std::vector<double> losses;       ///< 0 for absent clusters
  std::vector<std::size_t> counts;  ///< items per cluster
  std::vector<char> present;
};
ClusterBatchStats cluster_batch_stats(std::span<const double> item_losses, std::span<const std::size_t> item_cluster,
                                      std::size_t k);

/// Normalized combination coefficients over present clusters: w_i / max(w),
/// then divided by their sum. Equal weights give exactly 1 / (#present).
std::vector<double> combination_coefficients(std::span<const double> weights, std::span<const char> present);

struct IdroLoss {
  double loss = 0.0;
  std::vector<double> cluster_coefficients;  ///< c_i, sum to 1 over present clusters
  std::vector<double> item_coefficients;     ///< c_cluster / count_cluster per item
};

/// Weighted cluster loss sum_i alpha_i omega_i l_i over present clusters,
/// rescaled by 1 / sum_i alpha_i omega_i. Refreshes state.losses,
/// state.alpha and state.present from the batch; omega is read as is.
/// Throws ContractViolation for an item without a valid cluster.
IdroLoss idro_loss(std::span<const double> item_losses, std::span<const std::size_t> item_cluster, GroupState& state);

/// Same combination for fixed per-cluster weights (GroupDRO uses omega,
/// uniform uses ones).
IdroLoss weighted_cluster_loss(std::span<const double> item_losses, std::span<const std::size_t> item_cluster,
                               std::size_t k, std::span<const double> weights);

/// Applies omega_update to the present clusters only; absent clusters keep
/// their weight and the present ones share the mass they held before.
void update_present_omega(GroupState& state, const DenseMatrix& r);

/// GroupDRO baseline: omega_i proportional to omega_prev_i * exp(step * l_i).
std::vector<double> groupdro_update(std::span<const double> omega_prev, std::span<const double> losses,
                                    double step_size);
/// GroupDRO over the present clusters only, with the same mass rule.
void groupdro_update_present(std::vector<double>& omega, std::span<const double> losses,
                             std::span<const char> present, double step_size);

}  // namespace cocodr
