#pragma once

// Clustering and clustering-quality metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "raeufs/dataset.hpp"
#include "raeufs/error.hpp"
#include "raeufs/matrix.hpp"

namespace raeufs {

enum class KMeansInit { kPlusPlus, kRandom };

struct KMeansOptions {
  KMeansInit init = KMeansInit::kPlusPlus;
  int max_iters = 300;
};

struct ClusterAssignment {
  std::vector<int> labels;
  double inertia = 0.0;
  Matrix centroids;  // c x D
  int iterations = 0;
  std::vector<double> inertia_trace;  // inertia after each Lloyd iteration
};

namespace detail {

inline double sq_dist(const Matrix& X, Index i, const Matrix& C, Index k) {
  return (X.row(i) - C.row(k)).squaredNorm();
}

// Samples an index with probability proportional to w; uniform if w sums to 0.
inline Index sample_weighted(const std::vector<double>& w, Rng& rng) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) return static_cast<Index>(rng.uniform_index(w.size()));
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    u -= w[i];
    if (u < 0.0) return static_cast<Index>(i);
  }
  for (std::size_t i = w.size(); i-- > 0;)
    if (w[i] > 0.0) return static_cast<Index>(i);
  return 0;
}

inline Matrix kmeans_seed(const Matrix& X, int c, KMeansInit init, Rng& rng) {
  const Index n = X.rows();
  Matrix C(c, X.cols());
  if (init == KMeansInit::kRandom) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    rng.shuffle(idx);
    for (int k = 0; k < c; ++k) C.row(k) = X.row(idx[static_cast<std::size_t>(k)]);
    return C;
  }
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  C.row(0) = X.row(static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(n))));
  for (int k = 1; k < c; ++k) {
    for (Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], sq_dist(X, i, C, k - 1));
    C.row(k) = X.row(sample_weighted(d2, rng));
  }
  return C;
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ (or random) seeding, until the
/// assignment stops changing or max_iters. An empty cluster is moved onto
/// the point farthest from its current centroid.
inline ClusterAssignment kmeans(const Matrix& X, int c, Rng& rng,
                                const KMeansOptions& opt = {}) {
  const Index n = X.rows();
  if (c < 1) throw InvalidArgument("kmeans: c must be >= 1");
  if (c > n)
    throw InvalidArgument("kmeans: c = " + std::to_string(c) + " exceeds N = " +
                          std::to_string(n));
  ClusterAssignment out;
  out.centroids = detail::kmeans_seed(X, c, opt.init, rng);
  out.labels.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
  double prev = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= opt.max_iters; ++it) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = detail::sq_dist(X, i, out.centroids, 0);
      for (int k = 1; k < c; ++k) {
        const double dk = detail::sq_dist(X, i, out.centroids, k);
        if (dk < bd) {
          bd = dk;
          best = k;
        }
      }
      auto& lab = out.labels[static_cast<std::size_t>(i)];
      if (lab != best) {
        changed = true;
        lab = best;
      }
      dist[static_cast<std::size_t>(i)] = bd;
    }
    out.iterations = it;
    if (!changed) break;

    std::vector<Index> counts(static_cast<std::size_t>(c), 0);
    for (int l : out.labels) ++counts[static_cast<std::size_t>(l)];
    for (int k = 0; k < c; ++k) {
      if (counts[static_cast<std::size_t>(k)] > 0) continue;
      // Empty cluster: take over the point farthest from its centroid.
      Index far = -1;
      double fd = -1.0;
      for (Index i = 0; i < n; ++i) {
        const auto li = static_cast<std::size_t>(out.labels[static_cast<std::size_t>(i)]);
        if (counts[li] > 1 && dist[static_cast<std::size_t>(i)] > fd) {
          fd = dist[static_cast<std::size_t>(i)];
          far = i;
        }
      }
      --counts[static_cast<std::size_t>(out.labels[static_cast<std::size_t>(far)])];
      out.labels[static_cast<std::size_t>(far)] = k;
      dist[static_cast<std::size_t>(far)] = 0.0;
      counts[static_cast<std::size_t>(k)] = 1;
    }
    Matrix sums = Matrix::Zero(c, X.cols());
    for (Index i = 0; i < n; ++i) sums.row(out.labels[static_cast<std::size_t>(i)]) += X.row(i);
    for (int k = 0; k < c; ++k)
      out.centroids.row(k) = sums.row(k) / static_cast<double>(counts[static_cast<std::size_t>(k)]);
    double inertia = 0.0;
    for (Index i = 0; i < n; ++i)
      inertia += detail::sq_dist(X, i, out.centroids, out.labels[static_cast<std::size_t>(i)]);
    out.inertia_trace.push_back(inertia);
    if (inertia > prev * (1.0 + 1e-12) + 1e-12)
      throw Error("kmeans: inertia increased from " + std::to_string(prev) + " to " +
                  std::to_string(inertia));
    prev = inertia;
  }
  out.inertia = 0.0;
  for (Index i = 0; i < n; ++i)
    out.inertia += detail::sq_dist(X, i, out.centroids, out.labels[static_cast<std::size_t>(i)]);
  return out;
}

// ---------------------------------------------------------------------------
// Optimal assignment

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// O(n^3)). Returns assignment[row] = column.
inline std::vector<int> hungarian(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw DimensionError("hungarian: cost must be square");
  using std::size_t;
  const size_t n = static_cast<size_t>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] is the row matched to column j (0 = none).
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<size_t> p(n + 1, 0), way(n + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    p[0] = i;
    size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const size_t i0 = p[j0];
      double delta = inf;
      size_t j1 = 0;
      for (size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Index>(i0 - 1), static_cast<Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (size_t j = 1; j <= n; ++j)
    if (p[j] > 0) assignment[p[j] - 1] = static_cast<int>(j - 1);
  return assignment;
}

/// Contingency table with compacted label ids: rows = pred, cols = truth.
struct Contingency {
  Matrix counts;
  std::size_t total = 0;
};

inline Contingency contingency(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size())
    throw DimensionError("contingency: length mismatch " + std::to_string(pred.size()) +
                         " vs " + std::to_string(truth.size()));
  std::map<int, int> pi, ti;
  for (int v : pred) pi.emplace(v, 0);
  for (int v : truth) ti.emplace(v, 0);
  int k = 0;
  for (auto& [key, val] : pi) val = k++;
  k = 0;
  for (auto& [key, val] : ti) val = k++;
  Contingency c;
  c.counts = Matrix::Zero(static_cast<Index>(pi.size()), static_cast<Index>(ti.size()));
  for (std::size_t i = 0; i < pred.size(); ++i) c.counts(pi[pred[i]], ti[truth[i]]) += 1.0;
  c.total = pred.size();
  return c;
}

/// Best one-to-one cluster-to-class matching accuracy.
inline double clustering_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  const Contingency c = contingency(pred, truth);
  if (c.total == 0) throw InvalidArgument("clustering_accuracy: empty input");
  const Index n = std::max(c.counts.rows(), c.counts.cols());
  Matrix cost = Matrix::Zero(n, n);
  cost.topLeftCorner(c.counts.rows(), c.counts.cols()) = -c.counts;
  const auto match = hungarian(cost);
  double hit = 0.0;
  for (Index r = 0; r < c.counts.rows(); ++r) {
    const int col = match[static_cast<std::size_t>(r)];
    if (col < c.counts.cols()) hit += c.counts(r, col);
  }
  return hit / static_cast<double>(c.total);
}

enum class NmiVariant { kGeometric, kArithmetic };

/// Mutual information normalized by sqrt(H1 H2) (or (H1 + H2) / 2).
/// Two single-cluster partitions score 1; one single-cluster partition
/// against a non-trivial one scores 0.
inline double nmi(const std::vector<int>& pred, const std::vector<int>& truth,
                  NmiVariant variant = NmiVariant::kGeometric) {
  const Contingency c = contingency(pred, truth);
  if (c.total == 0) throw InvalidArgument("nmi: empty input");
  const double n = static_cast<double>(c.total);
  const Vector rows = c.counts.rowwise().sum();
  const Vector cols = c.counts.colwise().sum().transpose();
  auto entropy = [n](const Vector& v) {
    double h = 0.0;
    for (Index i = 0; i < v.size(); ++i)
      if (v(i) > 0) h -= v(i) / n * std::log(v(i) / n);
    return h;
  };
  const double h1 = entropy(rows);
  const double h2 = entropy(cols);
  if (h1 <= 0.0 || h2 <= 0.0) return (h1 <= 0.0 && h2 <= 0.0) ? 1.0 : 0.0;
  double mi = 0.0;
  for (Index i = 0; i < c.counts.rows(); ++i)
    for (Index j = 0; j < c.counts.cols(); ++j) {
      const double nij = c.counts(i, j);
      if (nij > 0) mi += nij / n * std::log(n * nij / (rows(i) * cols(j)));
    }
  const double denom = variant == NmiVariant::kGeometric ? std::sqrt(h1 * h2) : 0.5 * (h1 + h2);
  return std::clamp(mi / denom, 0.0, 1.0);
}

/// Mean silhouette (b - a) / max(a, b) with Euclidean distances. Members of
/// singleton clusters contribute 0.
inline double silhouette(const Matrix& X, const std::vector<int>& labels) {
  if (labels.size() != static_cast<std::size_t>(X.rows()))
    throw DimensionError("silhouette: labels length != rows");
  std::map<int, int> ids;
  for (int l : labels) ids.emplace(l, 0);
  if (ids.size() < 2) throw InvalidArgument("silhouette: need at least two clusters");
  int k = 0;
  for (auto& [key, val] : ids) val = k++;
  std::vector<int> lab(labels.size());
  std::vector<double> size(ids.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    lab[i] = ids[labels[i]];
    size[static_cast<std::size_t>(lab[i])] += 1.0;
  }
  const Index n = X.rows();
  double total = 0.0;
  std::vector<double> sums(ids.size());
  for (Index i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(lab[static_cast<std::size_t>(i)]);
    if (size[own] <= 1.0) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      sums[static_cast<std::size_t>(lab[static_cast<std::size_t>(j)])] += (X.row(i) - X.row(j)).norm();
    }
    const double a = sums[own] / (size[own] - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sums.size(); ++c)
      if (c != own) b = std::min(b, sums[c] / size[c]);
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Repetition protocol

struct MetricReport {
  std::vector<double> acc;
  std::vector<double> nmi;
  double acc_mean = 0.0;
  double acc_std = 0.0;
  double nmi_mean = 0.0;
  double nmi_std = 0.0;
  int repetitions = 0;
  std::uint64_t seed = 0;
};

struct EvaluateOptions {
  KMeansOptions kmeans;
  NmiVariant nmi_variant = NmiVariant::kGeometric;
};

/// Mean and population standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / n)};
}

/// Runs k-means `repetitions` times on every row of `reduced` (seed of
/// repetition r is derive_seed(seed, r)) and scores each run on the rows
/// that are inliers and carry a label.
inline MetricReport evaluate(const Dataset& data, const Matrix& reduced, int c, int repetitions,
                             std::uint64_t seed, const EvaluateOptions& opt = {}) {
  if (repetitions < 1) throw InvalidArgument("evaluate: repetitions must be >= 1");
  if (reduced.rows() != data.rows())
    throw DimensionError("evaluate: reduced data has " + std::to_string(reduced.rows()) +
                         " rows, dataset has " + std::to_string(data.rows()));
  if (!data.labels) throw InvalidArgument("evaluate: dataset has no labels");
  std::vector<std::size_t> scored;
  std::vector<int> truth;
  for (std::size_t i = 0; i < data.inlier_mask.size(); ++i) {
    if (data.inlier_mask[i] && (*data.labels)[i] != kNoLabel) {
      scored.push_back(i);
      truth.push_back((*data.labels)[i]);
    }
  }
  if (scored.empty()) throw InvalidArgument("evaluate: no labelled inlier rows");

  MetricReport rep;
  rep.repetitions = repetitions;
  rep.seed = seed;
  std::vector<int> pred(scored.size());
  for (int r = 0; r < repetitions; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    const ClusterAssignment ca = kmeans(reduced, c, rng, opt.kmeans);
    for (std::size_t k = 0; k < scored.size(); ++k) pred[k] = ca.labels[scored[k]];
    rep.acc.push_back(clustering_accuracy(pred, truth));
    rep.nmi.push_back(nmi(pred, truth, opt.nmi_variant));
  }
  std::tie(rep.acc_mean, rep.acc_std) = mean_std(rep.acc);
  std::tie(rep.nmi_mean, rep.nmi_std) = mean_std(rep.nmi);
  return rep;
}

/// Mean silhouette of k-means partitions over `repetitions` runs; used for
/// model selection when no labels exist.
inline double mean_kmeans_silhouette(const Matrix& reduced, int c, int repetitions,
                                     std::uint64_t seed, const KMeansOptions& opt = {}) {
  if (repetitions < 1) throw InvalidArgument("mean_kmeans_silhouette: repetitions must be >= 1");
  double total = 0.0;
  for (int r = 0; r < repetitions; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    const ClusterAssignment ca = kmeans(reduced, c, rng, opt);
    std::map<int, int> distinct;
    for (int l : ca.labels) distinct[l]++;
    total += distinct.size() >= 2 ? silhouette(reduced, ca.labels) : 0.0;
  }
  return total / repetitions;
}

}  // namespace raeufs
