#pragma once

// Dense kernel shared by every module: Eigen-backed matrices, checked
// products, a portable RNG and (randomized) truncated SVD.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "raeufs/error.hpp"

namespace raeufs {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << '(' << m.rows() << 'x' << m.cols() << ')';
  return os.str();
}

inline void require_same_shape(const Matrix& a, const Matrix& b,
                               const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch " +
                         shape_str(a) + " vs " + shape_str(b));
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: dimension mismatch " + shape_str(a) +
                         " * " + shape_str(b));
  }
  return a * b;
}

inline double frobenius_norm(const Matrix& m) { return m.norm(); }

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// ||M^T M - I||_F, the distance of M's columns from orthonormality.
inline double orthonormality_error(const Matrix& m) {
  return (m.transpose() * m - Matrix::Identity(m.cols(), m.cols())).norm();
}

// ---------------------------------------------------------------------------
// Random numbers

/// SplitMix64 finalizer; also used to derive independent child seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed for sub-stream `stream` of `seed`. Distinct streams give unrelated
/// sequences; the mapping is fixed across platforms.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  splitmix64(s);
  return splitmix64(s);
}

/// xoshiro256** generator. The draw sequence depends only on the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return draws_; }

  std::uint64_t next_u64() {
    ++draws_;
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw InvalidArgument("uniform_index: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_;
  std::uint64_t s_[4];
  std::uint64_t draws_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// i.i.d. N(0, 1) entries, filled in row-major order.
inline Matrix gaussian_matrix(Index rows, Index cols, Rng& rng) {
  if (rows < 1 || cols < 1) {
    throw InvalidArgument("gaussian_matrix: rows and cols must be >= 1");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

/// Orthonormal basis of the column space of `m` (thin Householder QR) with
/// the sign of each column fixed so that R has a non-negative diagonal.
inline Matrix orthonormalize_columns(const Matrix& m) {
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
  const Matrix& r = qr.matrixQR();
  for (Index j = 0; j < m.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

// ---------------------------------------------------------------------------
// SVD

struct Svd {
  Matrix U;  // rows x k, orthonormal columns
  Vector S;  // k, non-negative, non-increasing
  Matrix V;  // cols x k, orthonormal columns
};

inline constexpr Index kExactSvdThreshold = 32;
inline constexpr Index kSvdOversampling = 10;
inline constexpr int kSvdPowerIterations = 2;

namespace detail {

// Flip paired singular vectors so that the largest-magnitude entry of each
// U column is positive. U S V^T is unchanged.
inline void canonicalize_signs(Svd& svd) {
  for (Index j = 0; j < svd.U.cols(); ++j) {
    Index imax = 0;
    svd.U.col(j).cwiseAbs().maxCoeff(&imax);
    if (svd.U(imax, j) < 0.0) {
      svd.U.col(j) = -svd.U.col(j);
      svd.V.col(j) = -svd.V.col(j);
    }
  }
}

inline Svd exact_svd(const Matrix& m, Index k) {
  Eigen::JacobiSVD<Matrix> jsvd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Svd out{jsvd.matrixU().leftCols(k), jsvd.singularValues().head(k),
          jsvd.matrixV().leftCols(k)};
  return out;
}

}  // namespace detail

/// Rank-k truncated SVD. Small problems (min dimension <= 32) use an exact
/// Jacobi SVD; larger ones use a Gaussian range finder with oversampling 10
/// and two power iterations, re-orthonormalized after each pass.
inline Svd randomized_svd(const Matrix& m, Index k, Rng& rng) {
  const Index min_dim = std::min(m.rows(), m.cols());
  if (k < 1 || k > min_dim) {
    throw InvalidArgument("randomized_svd: rank " + std::to_string(k) +
                          " outside [1, " + std::to_string(min_dim) +
                          "] for " + shape_str(m));
  }
  Svd out;
  if (min_dim <= kExactSvdThreshold) {
    out = detail::exact_svd(m, k);
  } else {
    const Index l = std::min(k + kSvdOversampling, min_dim);
    Matrix q = orthonormalize_columns(m * gaussian_matrix(m.cols(), l, rng));
    for (int it = 0; it < kSvdPowerIterations; ++it) {
      q = orthonormalize_columns(m.transpose() * q);
      q = orthonormalize_columns(m * q);
    }
    const Matrix b = q.transpose() * m;  // l x cols
    Svd small = detail::exact_svd(b, k);
    out.U = q * small.U;
    out.S = std::move(small.S);
    out.V = std::move(small.V);
  }
  detail::canonicalize_signs(out);
  return out;
}

}  // namespace raeufs
