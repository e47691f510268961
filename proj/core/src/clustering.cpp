#include "cocodr/clustering.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

#include "cocodr/archive.hpp"
#include "cocodr/error.hpp"
#include "cocodr/rng.hpp"

namespace cocodr {
namespace {

DenseMatrix prepare(const DenseMatrix& rows, ClusterMetric metric) {
  if (metric == ClusterMetric::kEuclidean) return rows;
  DenseMatrix out(rows.rows(), rows.cols());
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    const auto n = normalized(rows.row(i));
    std::copy(n.begin(), n.end(), out.row(i).begin());
  }
  return out;
}

std::size_t nearest(const DenseMatrix& centroids, std::span<const double> p) {
  std::size_t best = 0;
  double best_d = squared_distance(centroids.row(0), p);
  for (std::size_t c = 1; c < centroids.rows(); ++c) {
    const double d = squared_distance(centroids.row(c), p);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

DenseMatrix seed_plus_plus(const DenseMatrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  DenseMatrix centroids(k, points.cols());
  std::vector<double> d2(n);
  std::vector<char> chosen(n, 0);
  std::size_t first = rng.uniform_index(n);
  chosen[first] = 1;
  std::copy(points.row(first).begin(), points.row(first).end(), centroids.row(0).begin());
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.row(i), centroids.row(0));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : d2) total += d;
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && acc > target) {
          pick = i;
          break;
        }
      }
      if (pick == n)  // rounding at the top end
        for (std::size_t i = n; i-- > 0;)
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
    } else {
      // Every point coincides with a centroid: pick uniformly among unchosen rows.
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) rest.push_back(i);
      pick = rest[rng.uniform_index(rest.size())];
    }
    chosen[pick] = 1;
    std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.row(c)));
  }
  return centroids;
}

/// Moves the farthest point of a multi-member cluster into each empty cluster.
void repair_empty(const DenseMatrix& points, DenseMatrix& centroids, std::vector<std::size_t>& assignment) {
  const std::size_t k = centroids.rows();
  std::vector<std::size_t> sizes(k, 0);
  for (auto a : assignment) ++sizes[a];
  for (std::size_t c = 0; c < k; ++c) {
    if (sizes[c] != 0) continue;
    std::size_t far = points.rows();
    double far_d = -1.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      if (sizes[assignment[i]] < 2) continue;
      const double d = squared_distance(points.row(i), centroids.row(assignment[i]));
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    require(far < points.rows(), "kmeans: cannot repair empty cluster");
    --sizes[assignment[far]];
    assignment[far] = c;
    sizes[c] = 1;
    std::copy(points.row(far).begin(), points.row(far).end(), centroids.row(c).begin());
  }
}

void update_centroids(const DenseMatrix& points, const std::vector<std::size_t>& assignment, DenseMatrix& centroids) {
  std::vector<std::size_t> sizes(centroids.rows(), 0);
  std::fill(centroids.data().begin(), centroids.data().end(), 0.0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    axpy(1.0, points.row(i), centroids.row(assignment[i]));
    ++sizes[assignment[i]];
  }
  for (std::size_t c = 0; c < centroids.rows(); ++c)
    for (double& x : centroids.row(c)) x /= static_cast<double>(sizes[c]);
}

double objective_of(const DenseMatrix& points, const std::vector<std::size_t>& assignment, const DenseMatrix& centroids) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) s += squared_distance(points.row(i), centroids.row(assignment[i]));
  return s;
}

std::vector<std::size_t> assign_points(const DenseMatrix& points, const DenseMatrix& centroids) {
  std::vector<std::size_t> a(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) a[i] = nearest(centroids, points.row(i));
  return a;
}

double choose2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

std::string to_string(ClusterMetric metric) {
  return metric == ClusterMetric::kSpherical ? "spherical" : "euclidean";
}

ClusterMetric cluster_metric_from_string(const std::string& name) {
  if (name == "spherical") return ClusterMetric::kSpherical;
  if (name == "euclidean") return ClusterMetric::kEuclidean;
  throw ConfigError("clustering.metric", "expected `spherical` or `euclidean`, got `" + name + "`");
}

std::size_t ClusterModel::cluster_of(const std::string& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return assignment[i];
  throw ContractViolation("ClusterModel: unassigned id `" + id + "`");
}

std::vector<std::size_t> ClusterModel::cluster_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (auto a : assignment) ++sizes[a];
  return sizes;
}

ClusterModel kmeans_fit(const EmbeddingMatrix& embeddings, const KMeansOptions& options) {
  const std::size_t n = embeddings.values.rows();
  require(n > 0, "kmeans_fit: empty embedding matrix");
  require(options.k >= 1, "kmeans_fit: k must be at least 1");
  require(n >= options.k, "kmeans_fit: fewer rows than clusters");

  const DenseMatrix points = prepare(embeddings.values, options.metric);
  Rng rng(options.seed);
  ClusterModel model;
  model.k = options.k;
  model.metric = options.metric;
  model.ids = embeddings.ids;
  model.centroids = seed_plus_plus(points, options.k, rng);

  auto assignment = assign_points(points, model.centroids);
  repair_empty(points, model.centroids, assignment);
  model.objective_history.push_back(objective_of(points, assignment, model.centroids));

  for (std::size_t it = 0; it < options.max_iters; ++it) {
    update_centroids(points, assignment, model.centroids);
    model.objective_history.push_back(objective_of(points, assignment, model.centroids));
    ++model.iterations;
    auto next = assign_points(points, model.centroids);
    repair_empty(points, model.centroids, next);
    if (next == assignment) {
      model.converged = true;
      break;
    }
    assignment = std::move(next);
    model.objective_history.push_back(objective_of(points, assignment, model.centroids));
  }
  if (!model.converged) {
    update_centroids(points, assignment, model.centroids);
    model.objective_history.push_back(objective_of(points, assignment, model.centroids));
  }
  model.assignment = std::move(assignment);
  model.objective = objective_of(points, model.assignment, model.centroids);
  return model;
}

std::vector<std::size_t> assign(const ClusterModel& model, const DenseMatrix& rows) {
  require(rows.cols() == model.centroids.cols(), "assign: embedding width differs from centroid width");
  return assign_points(prepare(rows, model.metric), model.centroids);
}

std::vector<std::size_t> assign(const ClusterModel& model, const EmbeddingMatrix& embeddings) {
  return assign(model, embeddings.values);
}

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  require(a.size() == b.size(), "adjusted_rand_index: labelings differ in length");
  const double n = static_cast<double>(a.size());
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, c] : joint) index += choose2(c);
  for (const auto& [key, c] : ra) sum_a += choose2(c);
  for (const auto& [key, c] : rb) sum_b += choose2(c);
  const double expected = sum_a * sum_b / choose2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both partitions trivial
  return (index - expected) / (max_index - expected);
}

void save_cluster_model(const std::filesystem::path& path, const ClusterModel& model) {
  Archive a;
  a.kind = "cocodr.clusters";
  a.meta = {{"version", 1},
            {"k", model.k},
            {"metric", to_string(model.metric)},
            {"width", model.centroids.cols()},
            {"ids", model.ids},
            {"assignment", model.assignment},
            {"objective", model.objective},
            {"objective_history", model.objective_history},
            {"iterations", model.iterations},
            {"converged", model.converged}};
  a.add("centroids", model.centroids.data());
  write_archive(path, a);
}

ClusterModel load_cluster_model(const std::filesystem::path& path) {
  const Archive a = read_archive(path, "cocodr.clusters");
  ClusterModel m;
  try {
    m.k = a.meta.at("k").get<std::size_t>();
    m.metric = cluster_metric_from_string(a.meta.at("metric").get<std::string>());
    const auto width = a.meta.at("width").get<std::size_t>();
    m.ids = a.meta.at("ids").get<std::vector<std::string>>();
    m.assignment = a.meta.at("assignment").get<std::vector<std::size_t>>();
    m.objective = a.meta.at("objective").get<double>();
    m.objective_history = a.meta.at("objective_history").get<std::vector<double>>();
    m.iterations = a.meta.at("iterations").get<std::size_t>();
    m.converged = a.meta.at("converged").get<bool>();
    m.centroids = DenseMatrix(m.k, width);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": incomplete cluster header (" + e.what() + ")");
  }
  const auto& values = a.block("centroids");
  if (values.size() != m.centroids.data().size()) throw DataError(path.string() + ": centroid block size mismatch");
  m.centroids.data() = values;
  return m;
}

}  // namespace cocodr
