#pragma once

// Pseudo-label subproblem
//   min_{F^T F = I}  eta ||Z~ - F||_F^2 + gamma Tr(F^T L F)
// solved with generalized power iteration: F <- polar(2 C~ F + 2 Z~), where
// C~ = xi I - (I + (gamma/eta) L) is positive definite.

#include <cmath>
#include <functional>
#include <string>

#include "raeufs/error.hpp"
#include "raeufs/graph.hpp"
#include "raeufs/matrix.hpp"

namespace raeufs {

struct GpiConfig {
  int max_iters = 100;
  double tolerance = 1e-6;  // multiplied by sqrt(d)
  double eta = 1.0;
  double gamma = 1.0;

  void validate() const {
    if (max_iters < 1) throw InvalidArgument("GpiConfig: max_iters must be >= 1");
    if (!(tolerance > 0.0)) throw InvalidArgument("GpiConfig: tolerance must be > 0");
    if (!(eta > 0.0)) throw InvalidArgument("GpiConfig: eta must be > 0");
    if (!(gamma >= 0.0)) throw InvalidArgument("GpiConfig: gamma must be >= 0");
  }
};

struct SpectralShift {
  Matrix C_tilde;
  double xi = 0.0;
};

inline constexpr double kSpectralMargin = 1e-6;

/// xi = 1 + (gamma/eta) * 2 max_i d_i + 1e-6. For a Laplacian with
/// non-negative symmetric weights, 2 max_i d_i bounds its largest eigenvalue
/// (Gershgorin), so the symmetric part of C~ is positive definite.
inline SpectralShift spectral_shift(const LaplacianView& lap, double gamma, double eta) {
  if (eta == 0.0) throw InvalidArgument("spectral_shift: eta must be non-zero");
  const Index n = lap.L.rows();
  const double ratio = gamma / eta;
  const double max_degree = n > 0 ? lap.degree.maxCoeff() : 0.0;
  SpectralShift out;
  out.xi = 1.0 + ratio * 2.0 * std::max(max_degree, 0.0) + kSpectralMargin;
  out.C_tilde = -ratio * lap.L;
  out.C_tilde.diagonal().array() += out.xi - 1.0;
  return out;
}

struct PolarDiagnostics {
  bool rank_deficient = false;
  double smallest_singular_value = 0.0;
};

/// Orthonormal polar factor U V^T of an N x d matrix: the maximizer of
/// Tr(F^T M) over F^T F = I.
inline Matrix polar_orthogonalize(const Matrix& M, Index d, PolarDiagnostics* diag = nullptr) {
  if (M.cols() != d || d < 1 || d > M.rows())
    throw DimensionError("polar_orthogonalize: expected N x " + std::to_string(d) +
                         " with d <= N, got " + shape_str(M));
  Rng rng(0);
  const Svd svd = randomized_svd(M, d, rng);
  Matrix F = svd.U * svd.V.transpose();
  const double smin = svd.S(d - 1);
  const bool deficient = smin <= 1e-12 * std::max(svd.S(0), 1.0);
  if (deficient && orthonormality_error(F) > 1e-10) {
    // Re-orthonormalize; any completion of the dominant directions is a
    // maximizer when M is rank deficient.
    F = orthonormalize_columns(F + 1e-8 * Matrix::Identity(M.rows(), d));
  }
  if (diag) {
    diag->rank_deficient = deficient;
    diag->smallest_singular_value = smin;
  }
  return F;
}

/// eta ||Z~ - F||_F^2 + gamma Tr(F^T L F).
inline double gpi_objective(const Matrix& Z_tilde, const Matrix& F, const LaplacianView& lap,
                            double eta, double gamma) {
  return eta * (Z_tilde - F).squaredNorm() + gamma * (F.transpose() * lap.L * F).trace();
}

struct GpiTraceEntry {
  int iteration = 0;
  double objective = 0.0;
  double orthonormality = 0.0;
  double step = 0.0;  // ||F(t) - F(t-1)||_F
};

struct GpiResult {
  Matrix F;
  int iterations = 0;
  bool converged = false;
  double xi = 0.0;
  bool rank_deficient = false;
};

using GpiObserver = std::function<void(const GpiTraceEntry&)>;

/// Runs GPI from F0 against the symmetrized Laplacian of S. Stops when
/// ||F(t) - F(t-1)||_F <= tolerance * sqrt(d) or after max_iters.
inline GpiResult gpi_solve(const Matrix& Z_tilde, const Matrix& S, const GpiConfig& cfg,
                           const Matrix& F0, const GpiObserver& observer = {}) {
  cfg.validate();
  const Index n = Z_tilde.rows();
  const Index d = Z_tilde.cols();
  if (S.rows() != n || S.cols() != n)
    throw DimensionError("gpi_solve: S " + shape_str(S) + " incompatible with Z~ " +
                         shape_str(Z_tilde));
  require_same_shape(F0, Z_tilde, "gpi_solve: F0 vs Z~");

  const LaplacianView lap = symmetric_laplacian(S);
  const SpectralShift shift = spectral_shift(lap, cfg.gamma, cfg.eta);
  const double stop = cfg.tolerance * std::sqrt(static_cast<double>(d));

  GpiResult res;
  res.xi = shift.xi;
  res.F = F0;
  for (int t = 1; t <= cfg.max_iters; ++t) {
    const Matrix M = 2.0 * (shift.C_tilde * res.F) + 2.0 * Z_tilde;
    PolarDiagnostics pd;
    Matrix next = polar_orthogonalize(M, d, &pd);
    res.rank_deficient = res.rank_deficient || pd.rank_deficient;
    const double step = (next - res.F).norm();
    res.F = std::move(next);
    res.iterations = t;
    if (observer) {
      observer({t, gpi_objective(Z_tilde, res.F, lap, cfg.eta, cfg.gamma),
                orthonormality_error(res.F), step});
    }
    if (step <= stop) {
      res.converged = true;
      break;
    }
  }
  return res;
}

/// Orthonormalized Gaussian N x d starting point.
inline Matrix random_stiefel(Index n, Index d, Rng& rng) {
  return orthonormalize_columns(gaussian_matrix(n, d, rng));
}

}  // namespace raeufs
