#pragma once

// Adaptive affinity graph: Laplacian, smoothness and entropy terms, and the
// closed-form entropy-regularized affinity update.

#include <algorithm>
#include <cmath>
#include <string>

#include "raeufs/error.hpp"
#include "raeufs/matrix.hpp"

namespace raeufs {

/// Row-stochastic, strictly positive affinity matrix together with the
/// entropy weight it was computed with.
struct AffinityGraph {
  Matrix S;
  double beta = 1.0;

  /// Uniform 1/N everywhere (maximum-entropy start).
  static AffinityGraph uniform(Index n, double beta) {
    return {Matrix::Constant(n, n, 1.0 / static_cast<double>(n)), beta};
  }
};

struct LaplacianView {
  Vector degree;  // d_i = sum_k s_ik
  Matrix L;       // diag(d) - S
};

inline LaplacianView laplacian(const Matrix& S) {
  if (S.rows() != S.cols())
    throw DimensionError("laplacian: affinity must be square, got " + shape_str(S));
  LaplacianView v;
  v.degree = S.rowwise().sum();
  v.L = -S;
  v.L.diagonal() += v.degree;
  return v;
}

inline Matrix symmetrize(const Matrix& S) { return 0.5 * (S + S.transpose()); }

/// Laplacian of the symmetrized graph (S + S^T)/2. Its quadratic form is
/// exactly half the weighted pairwise distance sum for any S, symmetric
/// or not.
inline LaplacianView symmetric_laplacian(const Matrix& S) {
  if (S.rows() != S.cols())
    throw DimensionError("symmetric_laplacian: affinity must be square, got " + shape_str(S));
  return laplacian(symmetrize(S));
}

/// 1/2 sum_ij s_ij ||f_i - f_j||^2, evaluated as Tr(F^T L F) with L the
/// Laplacian of the symmetrized graph. For symmetric S this is Tr(F^T L_S F).
inline double smoothness(const Matrix& F, const Matrix& S) {
  if (S.rows() != S.cols() || S.rows() != F.rows())
    throw DimensionError("smoothness: F " + shape_str(F) + " incompatible with S " +
                         shape_str(S));
  const LaplacianView lap = symmetric_laplacian(S);
  return (F.transpose() * lap.L * F).trace();
}

/// sum_ij s_ij log s_ij (natural log).
inline double entropy_term(const Matrix& S) {
  double acc = 0.0;
  for (Index i = 0; i < S.rows(); ++i) {
    for (Index j = 0; j < S.cols(); ++j) {
      const double s = S(i, j);
      if (!(s > 0.0))
        throw InvalidArgument("entropy_term: entry (" + std::to_string(i) + ", " +
                              std::to_string(j) + ") is not positive");
      acc += s * std::log(s);
    }
  }
  return acc;
}

/// Squared Euclidean distances between rows of F.
inline Matrix pairwise_sq_distances(const Matrix& F) {
  const Vector sq = F.rowwise().squaredNorm();
  Matrix dist = -2.0 * (F * F.transpose());
  dist.colwise() += sq;
  dist.rowwise() += sq.transpose();
  return dist.cwiseMax(0.0);
}

// Smallest exponent used in the softmax; keeps every entry strictly positive.
inline constexpr double kMinLogAffinity = -700.0;

/// s_ij = exp(-||f_i - f_j||^2 / (2 beta)) / sum_k exp(-||f_i - f_k||^2 / (2 beta)),
/// self-similarity included. Rows use max-subtraction.
inline AffinityGraph update_affinity(const Matrix& F, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("update_affinity: beta must be > 0");
  const Index n = F.rows();
  Matrix logits = pairwise_sq_distances(F) * (-1.0 / (2.0 * beta));
  AffinityGraph g;
  g.beta = beta;
  g.S.resize(n, n);
  for (Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    double total = 0.0;
    for (Index j = 0; j < n; ++j) {
      const double e = std::exp(std::max(logits(i, j) - mx, kMinLogAffinity));
      g.S(i, j) = e;
      total += e;
    }
    g.S.row(i) /= total;
  }
  return g;
}

/// Objective of the affinity subproblem:
/// sum_ij ||f_i - f_j||^2 s_ij + 2 beta s_ij log s_ij.
inline double affinity_objective(const Matrix& F, const Matrix& S, double beta) {
  const Matrix dist = pairwise_sq_distances(F);
  return dist.cwiseProduct(S).sum() + 2.0 * beta * entropy_term(S);
}

}  // namespace raeufs
