#pragma once

// Alternating minimization over (encoder/decoder, A, W, F, S), objective
// bookkeeping, feature ranking and reduction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "raeufs/autoencoder.hpp"
#include "raeufs/dataset.hpp"
#include "raeufs/error.hpp"
#include "raeufs/graph.hpp"
#include "raeufs/matrix.hpp"
#include "raeufs/stiefel.hpp"

namespace raeufs {

inline constexpr Index kMinHiddenWidth = 64;

struct RaeufsConfig {
  Index p = 10;  // selected feature count (columns of W)
  int c = 2;     // cluster count
  Index d = 0;   // pseudo-label width; 0 means c + 1
  Index q = 0;   // encoder output width; 0 means d
  // Hidden widths of encoder (and, mirrored, decoder); unset means one
  // hidden layer of width max(q, 64).
  std::optional<std::vector<Index>> hidden;
  Activation activation = Activation::kLeakyRelu;

  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double eta = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double eps_smooth = kDefaultSmoothing;

  int iterations = 300;  // outer iterations K
  int inner_steps = 1;   // Adam steps per block per outer iteration
  Index batch_size = 0;  // 0 = full batch
  AdamConfig adam;

  int gpi_max_iters = 100;
  double gpi_tolerance = 1e-6;
  bool gpi_warm_start = true;  // start GPI from the previous F

  bool early_stop = false;
  double early_stop_tolerance = 1e-5;
  int early_stop_window = 10;

  std::uint64_t seed = 0;

  Index resolved_d() const { return d > 0 ? d : static_cast<Index>(c) + 1; }
  Index resolved_q() const { return q > 0 ? q : resolved_d(); }
  std::vector<Index> resolved_hidden() const {
    if (hidden) return *hidden;
    return {std::max(resolved_q(), kMinHiddenWidth)};
  }

  LossWeights loss_weights() const { return {alpha, eta, lambda1, lambda2, eps_smooth}; }

  GpiConfig gpi_config() const {
    GpiConfig g;
    g.max_iters = gpi_max_iters;
    g.tolerance = gpi_tolerance;
    g.eta = eta;
    g.gamma = gamma;
    return g;
  }

  NetworkShape network_shape(Index D) const {
    NetworkShape s;
    s.D = D;
    s.p = p;
    s.q = resolved_q();
    s.d = resolved_d();
    s.encoder_hidden = resolved_hidden();
    s.decoder_hidden = s.encoder_hidden;
    std::reverse(s.decoder_hidden.begin(), s.decoder_hidden.end());
    s.hidden_activation = activation;
    return s;
  }

  /// Checks the invariants against a dataset with N rows and D features.
  void validate(Index N, Index D) const {
    if (c < 1) throw InvalidArgument("config: c must be >= 1");
    if (p < 1 || p > D)
      throw InvalidArgument("config: p = " + std::to_string(p) + " must lie in [1, D = " +
                            std::to_string(D) + "]");
    if (resolved_d() < c + 1)
      throw InvalidArgument("config: d = " + std::to_string(resolved_d()) +
                            " must be >= c + 1 = " + std::to_string(c + 1));
    if (resolved_q() < resolved_d())
      throw InvalidArgument("config: q must be >= d");
    if (resolved_d() > N)
      throw InvalidArgument("config: d exceeds the number of samples");
    for (double w : {alpha, beta, gamma, lambda1, lambda2})
      if (!(w >= 0.0)) throw InvalidArgument("config: weights must be >= 0");
    if (!(eta > 0.0)) throw InvalidArgument("config: eta must be > 0");
    if (!(beta > 0.0)) throw InvalidArgument("config: beta must be > 0");
    if (iterations < 0) throw InvalidArgument("config: iterations must be >= 0");
    if (inner_steps < 1) throw InvalidArgument("config: inner_steps must be >= 1");
    if (batch_size < 0) throw InvalidArgument("config: batch_size must be >= 0");
    if (!(adam.lr > 0.0)) throw InvalidArgument("config: learning rate must be > 0");
    for (Index h : resolved_hidden())
      if (h < 1) throw InvalidArgument("config: hidden widths must be >= 1");
    if (early_stop_window < 1) throw InvalidArgument("config: early_stop_window must be >= 1");
  }
};

/// The six terms of the full objective; smoothed norms throughout.
struct ObjectiveComponents {
  double ae = 0.0;       // loss_ae
  double rsr = 0.0;      // loss_rsr (both lambda terms)
  double l21 = 0.0;      // alpha * ||W||_{2,1}
  double fit = 0.0;      // eta * ||Z~ - F||_F^2
  double smooth = 0.0;   // gamma * Tr(F^T L F)
  double entropy = 0.0;  // gamma * beta * sum s log s  (<= 0)

  double total() const { return ae + rsr + l21 + fit + smooth + entropy; }

  bool finite() const {
    for (double v : {ae, rsr, l21, fit, smooth, entropy})
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string describe() const {
    std::ostringstream os;
    os << "ae=" << ae << " rsr=" << rsr << " l21=" << l21 << " fit=" << fit
       << " smooth=" << smooth << " entropy=" << entropy;
    return os.str();
  }
};

inline ObjectiveComponents objective(const ForwardCache& fwd, const Matrix& X,
                                     const NetworkParams& net, const Matrix& F, const Matrix& S,
                                     const RaeufsConfig& cfg) {
  ObjectiveComponents o;
  o.ae = loss_ae(X, fwd.X_tilde, cfg.eps_smooth);
  o.rsr = loss_rsr(fwd.Z, net.A, cfg.lambda1, cfg.lambda2, cfg.eps_smooth);
  o.l21 = cfg.alpha * l21_smoothed(net.W, cfg.eps_smooth);
  o.fit = cfg.eta * (fwd.Z_tilde - F).squaredNorm();
  o.smooth = cfg.gamma * smoothness(F, S);
  o.entropy = cfg.gamma * cfg.beta * entropy_term(S);
  return o;
}

inline ObjectiveComponents objective(const Matrix& X, const NetworkParams& net, const Matrix& F,
                                     const Matrix& S, const RaeufsConfig& cfg) {
  return objective(forward(X, net), X, net, F, S, cfg);
}

struct HistoryRecord {
  int iteration = 0;
  ObjectiveComponents components;
  int gpi_iterations = 0;
};

struct TrainHistory {
  std::vector<HistoryRecord> records;
};

class TrainingError : public Error {
 public:
  TrainingError(int iteration, const ObjectiveComponents& comp)
      : Error("non-finite objective at iteration " + std::to_string(iteration) + " (" +
              comp.describe() + ")"),
        iteration_(iteration),
        components_(comp) {}

  int iteration() const { return iteration_; }
  const ObjectiveComponents& components() const { return components_; }

 private:
  int iteration_;
  ObjectiveComponents components_;
};

struct Model {
  NetworkParams net;
  Matrix F;
  AffinityGraph graph;
  TrainHistory history;
};

namespace detail {

inline std::vector<Matrix*> concat(std::vector<Matrix*> a, const std::vector<Matrix*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline std::vector<Matrix> concat(std::vector<Matrix> a, std::vector<Matrix> b) {
  for (auto& m : b) a.push_back(std::move(m));
  return a;
}

inline Matrix take_rows(const Matrix& m, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = m.row(idx[r]);
  return out;
}

}  // namespace detail

/// Observer invoked after every outer iteration.
using FitObserver = std::function<void(const HistoryRecord&, const Model&)>;

/// Runs `cfg.iterations` outer iterations, each: Adam step(s) on the
/// encoder/decoder, on A, on W; then F from GPI on the current Z~ and the
/// previous S; then S from the closed-form affinity update. Deterministic
/// given the data and config (including the seed).
inline Model fit(const Dataset& data, const RaeufsConfig& cfg, const FitObserver& observer = {}) {
  data.validate();
  const Matrix& X = data.X;
  const Index N = X.rows();
  cfg.validate(N, X.cols());

  Rng rng(cfg.seed);
  Model m;
  m.net = init_network(cfg.network_shape(X.cols()), rng);
  m.F = random_stiefel(N, cfg.resolved_d(), rng);
  m.graph = AffinityGraph::uniform(N, cfg.beta);

  Rng batch_rng(derive_seed(cfg.seed, 1));
  Rng gpi_rng(derive_seed(cfg.seed, 2));
  const LossWeights weights = cfg.loss_weights();
  const GpiConfig gpi_cfg = cfg.gpi_config();
  AdamState adam_net{cfg.adam, {}, {}, 0};
  AdamState adam_a{cfg.adam, {}, {}, 0};
  AdamState adam_w{cfg.adam, {}, {}, 0};

  const bool batched = cfg.batch_size > 0 && cfg.batch_size < N;
  std::vector<Index> all_rows(static_cast<std::size_t>(N));
  std::iota(all_rows.begin(), all_rows.end(), Index{0});

  // Runs one gradient evaluation for `block` on the full data or a batch.
  auto block_gradients = [&](unsigned block) {
    if (!batched) return grad_net(forward(X, m.net), X, m.F, m.net, weights, block);
    std::vector<Index> rows = all_rows;
    for (Index i = 0; i < cfg.batch_size; ++i) {
      const auto j = static_cast<std::size_t>(i) +
                     batch_rng.uniform_index(static_cast<std::uint64_t>(N - i));
      std::swap(rows[static_cast<std::size_t>(i)], rows[j]);
    }
    rows.resize(static_cast<std::size_t>(cfg.batch_size));
    const Matrix Xb = detail::take_rows(X, rows);
    const Matrix Fb = detail::take_rows(m.F, rows);
    return grad_net(forward(Xb, m.net), Xb, Fb, m.net, weights, block);
  };

  for (int k = 1; k <= cfg.iterations; ++k) {
    for (int s = 0; s < cfg.inner_steps; ++s) {
      NetGradients g = block_gradients(kGradEncoderDecoder);
      adam_step(detail::concat(m.net.encoder.parameters(), m.net.decoder.parameters()),
                detail::concat(std::move(g.encoder), std::move(g.decoder)), adam_net);
    }
    for (int s = 0; s < cfg.inner_steps; ++s) {
      NetGradients g = block_gradients(kGradRsr);
      adam_step({&m.net.A}, {g.A}, adam_a);
    }
    for (int s = 0; s < cfg.inner_steps; ++s) {
      NetGradients g = block_gradients(kGradSelector);
      adam_step({&m.net.W}, {g.W}, adam_w);
    }

    const ForwardCache fwd = forward(X, m.net);
    const Matrix F0 = cfg.gpi_warm_start ? m.F : random_stiefel(N, cfg.resolved_d(), gpi_rng);
    const GpiResult gpi = gpi_solve(fwd.Z_tilde, m.graph.S, gpi_cfg, F0);
    m.F = gpi.F;
    m.graph = update_affinity(m.F, cfg.beta);

    HistoryRecord rec;
    rec.iteration = k;
    rec.components = objective(fwd, X, m.net, m.F, m.graph.S, cfg);
    rec.gpi_iterations = gpi.iterations;
    if (!rec.components.finite() || !all_finite(m.net.W)) throw TrainingError(k, rec.components);
    m.history.records.push_back(rec);
    if (observer) observer(rec, m);

    if (cfg.early_stop && k > cfg.early_stop_window) {
      const double now = rec.components.total();
      const double then =
          m.history.records[static_cast<std::size_t>(k - 1 - cfg.early_stop_window)].components.total();
      if (std::abs(now - then) <= cfg.early_stop_tolerance * std::max(std::abs(then), 1e-300))
        break;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Ranking and reduction

struct FeatureRanking {
  std::vector<Index> order;  // feature indices, best first
  std::vector<double> scores;  // row norm of W for order[i]
};

/// Features by descending row l2 norm of W; ties keep ascending index.
inline FeatureRanking rank_features(const Matrix& W) {
  const Vector norms = W.rowwise().norm();
  FeatureRanking r;
  r.order.resize(static_cast<std::size_t>(W.rows()));
  std::iota(r.order.begin(), r.order.end(), Index{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](Index a, Index b) { return norms(a) > norms(b); });
  for (Index i : r.order) r.scores.push_back(norms(i));
  return r;
}

enum class ReduceMode { kProject, kSelect };

inline const char* to_string(ReduceMode m) {
  return m == ReduceMode::kProject ? "project" : "select";
}

/// Project: X W (N x p). Select: the top-`p` ranked original columns of X,
/// in rank order.
inline Matrix reduce(const Matrix& X, const Matrix& W, ReduceMode mode, Index p) {
  if (X.cols() != W.rows())
    throw DimensionError("reduce: X " + shape_str(X) + " incompatible with W " + shape_str(W));
  if (mode == ReduceMode::kProject) return X * W;
  if (p < 1 || p > X.cols())
    throw InvalidArgument("reduce: p = " + std::to_string(p) + " outside [1, D = " +
                          std::to_string(X.cols()) + "]");
  const FeatureRanking rank = rank_features(W);
  Matrix out(X.rows(), p);
  for (Index j = 0; j < p; ++j) out.col(j) = X.col(rank.order[static_cast<std::size_t>(j)]);
  return out;
}

inline Matrix reduce(const Dataset& data, const Model& model, ReduceMode mode, Index p) {
  return reduce(data.X, model.net.W, mode, p);
}

}  // namespace raeufs
