#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cocodr/encoder.hpp"
#include "cocodr/matrix.hpp"

namespace cocodr {

/// Geometry used for clustering. Spherical L2-normalizes every row first and
/// then runs squared-Euclidean Lloyd on the unit sphere; Euclidean uses the
/// raw rows.
enum class ClusterMetric { kSpherical, kEuclidean };

std::string to_string(ClusterMetric metric);
ClusterMetric cluster_metric_from_string(const std::string& name);

struct KMeansOptions {
  std::size_t k = 50;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  ClusterMetric metric = ClusterMetric::kSpherical;
};

struct ClusterModel {
  std::size_t k = 0;
  ClusterMetric metric = ClusterMetric::kSpherical;
  DenseMatrix centroids;                 ///< k x E, in the clustering geometry
  std::vector<std::string> ids;          ///< row ids of the fitted matrix
  std::vector<std::size_t> assignment;   ///< per fitted row, < k
  double objective = 0.0;                ///< sum of squared member-centroid distances
  std::vector<double> objective_history; ///< after the seeding assignment, then after every Lloyd update
  std::size_t iterations = 0;
  bool converged = false;                ///< stopped on an assignment fixpoint

  /// Cluster of a fitted row id; throws ContractViolation for unknown ids.
  std::size_t cluster_of(const std::string& id) const;
  std::vector<std::size_t> cluster_sizes() const;
};

/// Lloyd iterations from k-means++ seeding. Empty clusters are repaired by
/// moving in the point farthest from its centroid. Throws ContractViolation
/// when the matrix is empty, k == 0 or rows < k.
ClusterModel kmeans_fit(const EmbeddingMatrix& embeddings, const KMeansOptions& options);

/// Nearest centroid under the model's metric, ties to the lowest index.
std::vector<std::size_t> assign(const ClusterModel& model, const DenseMatrix& rows);
std::vector<std::size_t> assign(const ClusterModel& model, const EmbeddingMatrix& embeddings);

/// Adjusted Rand index between two labelings of the same items (1 = identical
/// partitions up to relabeling).
double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b);

void save_cluster_model(const std::filesystem::path& path, const ClusterModel& model);
ClusterModel load_cluster_model(const std::filesystem::path& path);

}  // namespace cocodr
