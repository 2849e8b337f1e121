#pragma once

// Gaussian-blob generator with informative and pure-noise features.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "raeufs/dataset.hpp"
#include "raeufs/error.hpp"
#include "raeufs/matrix.hpp"

namespace raeufs {

struct SyntheticSpec {
  int clusters = 3;
  Index informative = 10;
  Index noise = 90;
  Index per_cluster = 60;
  double separation = 6.0;
  double noise_variance = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (clusters < 1) throw InvalidArgument("synthetic: clusters must be >= 1");
    if (informative < 1) throw InvalidArgument("synthetic: informative must be >= 1");
    if (noise < 0) throw InvalidArgument("synthetic: noise must be >= 0");
    if (per_cluster < 1) throw InvalidArgument("synthetic: per_cluster must be >= 1");
    if (!(separation >= 0.0)) throw InvalidArgument("synthetic: separation must be >= 0");
    if (!(noise_variance >= 0.0)) throw InvalidArgument("synthetic: noise_variance must be >= 0");
    if (informative < 63 && (std::uint64_t{1} << informative) < static_cast<std::uint64_t>(clusters))
      throw InvalidArgument("synthetic: too few informative dims for distinct cluster centers");
  }
};

/// Cluster centers sit on distinct random vertices of the hypercube
/// {-separation/2, +separation/2}^informative; samples are N(center, I) on
/// informative dims and N(0, noise_variance) on noise dims. Feature columns
/// and rows are shuffled; feature names are "inf<k>" / "noise<k>".
inline Dataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Index D = spec.informative + spec.noise;
  const Index N = spec.per_cluster * spec.clusters;
  const double half = spec.separation / 2.0;

  std::vector<std::vector<int>> vertices;
  while (static_cast<int>(vertices.size()) < spec.clusters) {
    std::vector<int> v(static_cast<std::size_t>(spec.informative));
    for (auto& s : v) s = (rng.next_u64() >> 63) ? 1 : -1;
    bool fresh = true;
    for (const auto& u : vertices) fresh = fresh && u != v;
    if (fresh) vertices.push_back(std::move(v));
  }

  std::vector<Index> col_of(static_cast<std::size_t>(D));
  std::iota(col_of.begin(), col_of.end(), Index{0});
  rng.shuffle(col_of);
  std::vector<Index> row_of(static_cast<std::size_t>(N));
  std::iota(row_of.begin(), row_of.end(), Index{0});
  rng.shuffle(row_of);

  Dataset ds;
  ds.X = Matrix::Zero(N, D);
  std::vector<int> labels(static_cast<std::size_t>(N));
  const double noise_sd = std::sqrt(spec.noise_variance);
  Index n = 0;
  for (int k = 0; k < spec.clusters; ++k) {
    for (Index s = 0; s < spec.per_cluster; ++s, ++n) {
      const Index r = row_of[static_cast<std::size_t>(n)];
      labels[static_cast<std::size_t>(r)] = k;
      for (Index j = 0; j < spec.informative; ++j)
        ds.X(r, col_of[static_cast<std::size_t>(j)]) =
            half * vertices[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] + rng.normal();
      for (Index j = 0; j < spec.noise; ++j)
        ds.X(r, col_of[static_cast<std::size_t>(spec.informative + j)]) = noise_sd * rng.normal();
    }
  }
  ds.feature_names.resize(static_cast<std::size_t>(D));
  for (Index j = 0; j < D; ++j) {
    const bool inf = j < spec.informative;
    ds.feature_names[static_cast<std::size_t>(col_of[static_cast<std::size_t>(j)])] =
        inf ? "inf" + std::to_string(j) : "noise" + std::to_string(j - spec.informative);
  }
  ds.labels = std::move(labels);
  ds.inlier_mask.assign(static_cast<std::size_t>(N), true);
  return ds;
}

/// Column indices whose name starts with "inf".
inline std::vector<Index> informative_columns(const Dataset& ds) {
  std::vector<Index> out;
  for (std::size_t j = 0; j < ds.feature_names.size(); ++j)
    if (ds.feature_names[j].rfind("inf", 0) == 0) out.push_back(static_cast<Index>(j));
  return out;
}

}  // namespace raeufs
