#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cocodr/rng.hpp"

namespace cocodr::oracle {

std::vector<double> dense(const FeatureVector& x) {
  std::vector<double> v(x.dim, 0.0);
  for (const auto& e : x.entries) v[e.index] += e.count;
  return v;
}

std::vector<double> matmul_encode(const Params& params, const FeatureVector& x) {
  const auto& cfg = params.config();
  const std::size_t d_dim = cfg.feature_dim;
  const std::size_t e_dim = cfg.embed_dim;
  const auto flat = params.flat();
  const auto xv = dense(x);
  std::vector<double> h(e_dim, 0.0);
  for (std::size_t r = 0; r < e_dim; ++r)
    for (std::size_t c = 0; c < d_dim; ++c) h[r] += flat[c * e_dim + r] * xv[c];
  if (!cfg.hidden) return h;
  std::vector<double> out(e_dim, 0.0);
  const std::size_t off = d_dim * e_dim;
  for (std::size_t r = 0; r < e_dim; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < e_dim; ++c) s += flat[off + r * e_dim + c] * h[c];
    out[r] = std::tanh(s);
  }
  return out;
}

double plain_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double retrieval_item_loss(const Params& params, const Triplet& t, const std::vector<const FeatureVector*>& extra) {
  const auto q = matmul_encode(params, t.query);
  const long double pos = plain_dot(q, matmul_encode(params, t.positive));
  long double denom = std::exp(pos);
  for (const auto& n : t.negatives) denom += std::exp(static_cast<long double>(plain_dot(q, matmul_encode(params, n))));
  for (const auto* n : extra) denom += std::exp(static_cast<long double>(plain_dot(q, matmul_encode(params, *n))));
  return static_cast<double>(-(pos - std::log(denom)));
}

std::vector<double> retrieval_item_losses(const Params& params, const TripletBatch& batch, bool in_batch) {
  std::vector<double> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::vector<const FeatureVector*> extra;
    if (in_batch)
      for (std::size_t j = 0; j < batch.size(); ++j)
        if (j != i) extra.push_back(&batch[j].positive);
    out.push_back(retrieval_item_loss(params, batch[i], extra));
  }
  return out;
}

double coco_loss(const Params& params, const SpanPairBatch& batch) {
  std::vector<std::vector<double>> spans;
  for (const auto& ex : batch) {
    spans.push_back(matmul_encode(params, ex.first));
    spans.push_back(matmul_encode(params, ex.second));
  }
  long double total = 0.0L;
  for (std::size_t a = 0; a < spans.size(); ++a) {
    const std::size_t partner = a % 2 == 0 ? a + 1 : a - 1;
    long double denom = 0.0L;
    for (std::size_t s = 0; s < spans.size(); ++s)
      if (s != a) denom += std::exp(static_cast<long double>(plain_dot(spans[a], spans[s])));
    total += -(plain_dot(spans[a], spans[partner]) - std::log(denom));
  }
  return static_cast<double>(total / static_cast<long double>(batch.size()));
}

std::vector<double> central_differences(const std::function<double(const Params&)>& f, const Params& at,
                                        const std::vector<std::size_t>& coords, double h) {
  Params p = at;
  std::vector<double> out;
  for (auto i : coords) {
    const double x = p.flat()[i];
    p.flat()[i] = x + h;
    const double up = f(p);
    p.flat()[i] = x - h;
    const double down = f(p);
    p.flat()[i] = x;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

std::size_t nearest_centroid(const DenseMatrix& centroids, const std::vector<double>& p) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < centroids.rows(); ++c)
    if (sq_dist(centroids.row(c), p) < sq_dist(centroids.row(best), p)) best = c;
  return best;
}

LloydResult lloyd(const DenseMatrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iters) {
  const std::size_t n = points.rows();
  const std::size_t w = points.cols();
  Rng rng(seed);
  std::vector<std::size_t> centers{rng.uniform_index(n)};
  while (centers.size() < k) {
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) {
      double best = sq_dist(points.row(i), points.row(centers[0]));
      for (auto c : centers) best = std::min(best, sq_dist(points.row(i), points.row(c)));
      d2[i] = best;
    }
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    const double target = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n && pick == n; ++i) {
      acc += d2[i];
      if (d2[i] > 0.0 && acc > target) pick = i;
    }
    centers.push_back(pick);
  }
  LloydResult r;
  r.centroids = DenseMatrix(k, w);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < w; ++j) r.centroids(c, j) = points(centers[c], j);

  auto assign_all = [&] {
    std::vector<std::size_t> a(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> p(points.row(i).begin(), points.row(i).end());
      a[i] = nearest_centroid(r.centroids, p);
    }
    return a;
  };
  r.assignment = assign_all();
  for (std::size_t it = 0; it < max_iters; ++it) {
    DenseMatrix sums(k, w);
    std::vector<double> counts(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w; ++j) sums(r.assignment[i], j) += points(i, j);
      counts[r.assignment[i]] += 1.0;
    }
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < w; ++j) r.centroids(c, j) = sums(c, j) / counts[c];
    auto next = assign_all();
    if (next == r.assignment) break;
    r.assignment = next;
  }
  r.objective = 0.0;
  for (std::size_t i = 0; i < n; ++i) r.objective += sq_dist(points.row(i), r.centroids.row(r.assignment[i]));
  return r;
}

double weighted_jaccard(const std::map<std::string, double>& s, const std::map<std::string, double>& t) {
  std::map<std::string, std::pair<double, double>> all;
  for (const auto& [k, v] : s) all[k].first = v;
  for (const auto& [k, v] : t) all[k].second = v;
  double num = 0.0, den = 0.0;
  for (const auto& [k, p] : all) {
    num += std::min(p.first, p.second);
    den += std::max(p.first, p.second);
  }
  return num / den;
}

double ndcg(const std::vector<int>& ranked_grades, std::vector<int> all_grades, std::size_t k) {
  auto dcg = [k](const std::vector<int>& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size() && i < k; ++i) s += (std::pow(2.0, g[i]) - 1.0) / std::log2(i + 2.0);
    return s;
  };
  std::sort(all_grades.rbegin(), all_grades.rend());
  const double ideal = dcg(all_grades);
  return ideal == 0.0 ? 0.0 : dcg(ranked_grades) / ideal;
}

double expected_random_ndcg(std::size_t n, const std::vector<int>& positive_grades, std::size_t k) {
  // Each doc lands at every rank with probability 1/n.
  double expected_dcg = 0.0;
  for (int g : positive_grades)
    for (std::size_t r = 0; r < std::min(k, n); ++r)
      expected_dcg += (std::pow(2.0, g) - 1.0) / std::log2(r + 2.0) / static_cast<double>(n);
  std::vector<int> sorted = positive_grades;
  std::sort(sorted.rbegin(), sorted.rend());
  double ideal = 0.0;
  for (std::size_t r = 0; r < sorted.size() && r < k; ++r) ideal += (std::pow(2.0, sorted[r]) - 1.0) / std::log2(r + 2.0);
  return expected_dcg / ideal;
}

namespace {

std::vector<double> unit(std::span<const double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  std::vector<double> out(v.begin(), v.end());
  if (n > 0.0)
    for (double& x : out) x /= n;
  return out;
}

}  // namespace

double alignment(const DenseMatrix& a, const DenseMatrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) s += sq_dist(unit(a.row(i)), unit(b.row(i)));
  return s / static_cast<double>(a.rows());
}

double uniformity(const DenseMatrix& x) {
  double s = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = i + 1; j < x.rows(); ++j) {
      s += std::exp(-2.0 * sq_dist(unit(x.row(i)), unit(x.row(j))));
      pairs += 1.0;
    }
  return std::log(s / pairs);
}

std::vector<double> random_simplex(std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(k);
  for (auto& x : w) x = -std::log(1.0 - rng.uniform()) + 1e-3;
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= s;
  return w;
}

}  // namespace cocodr::oracle
