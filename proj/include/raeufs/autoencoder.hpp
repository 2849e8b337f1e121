#pragma once

// Network half of the model: selector W, encoder, RSR layer A, decoder,
// their losses, hand-derived gradients and an Adam optimizer.
//
// Row convention: samples are rows. A dense layer maps H (N x in) to
// act(H * weight + 1 * bias) with weight in x out and bias 1 x out.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "raeufs/dataset.hpp"
#include "raeufs/error.hpp"
#include "raeufs/matrix.hpp"

namespace raeufs {

enum class Activation { kIdentity, kLeakyRelu, kTanh };

inline constexpr double kLeakySlope = 0.2;

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "leaky_relu") return Activation::kLeakyRelu;
  if (s == "tanh") return Activation::kTanh;
  throw InvalidArgument("unknown activation '" + s + "'");
}

namespace detail {

inline Matrix apply_activation(Activation a, const Matrix& pre) {
  switch (a) {
    case Activation::kIdentity: return pre;
    case Activation::kLeakyRelu:
      return pre.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    case Activation::kTanh: return pre.array().tanh().matrix();
  }
  return pre;
}

// Elementwise derivative of the activation evaluated at the pre-activation.
inline Matrix activation_derivative(Activation a, const Matrix& pre) {
  switch (a) {
    case Activation::kIdentity: return Matrix::Ones(pre.rows(), pre.cols());
    case Activation::kLeakyRelu:
      return pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; });
    case Activation::kTanh:
      return (1.0 - pre.array().tanh().square()).matrix();
  }
  return pre;
}

}  // namespace detail

struct Layer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
  Activation activation = Activation::kIdentity;
};

struct Mlp {
  std::vector<Layer> layers;

  Index input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
  Index output_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

  /// weight, bias for each layer, in order. Gradient vectors follow the
  /// same order.
  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> out;
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  void validate(const char* name) const {
    if (layers.empty()) throw InvalidArgument(std::string(name) + ": no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols())
        throw DimensionError(std::string(name) + ": bias shape " + shape_str(l.bias) +
                             " does not match weight " + shape_str(l.weight));
      if (i > 0 && layers[i - 1].weight.cols() != l.weight.rows())
        throw DimensionError(std::string(name) + ": layer " + std::to_string(i) +
                             " input " + std::to_string(l.weight.rows()) +
                             " != previous output " +
                             std::to_string(layers[i - 1].weight.cols()));
    }
  }
};

/// Affine layers through `dims` (dims.front() -> ... -> dims.back()).
/// Hidden layers use `hidden`; the output layer is linear. Weights are
/// N(0, 1/fan_in), biases zero.
inline Mlp make_mlp(const std::vector<Index>& dims, Activation hidden, Rng& rng) {
  if (dims.size() < 2) throw InvalidArgument("make_mlp: need at least two widths");
  Mlp net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    l.weight = gaussian_matrix(dims[i], dims[i + 1], rng) /
               std::sqrt(static_cast<double>(dims[i]));
    l.bias = Matrix::Zero(1, dims[i + 1]);
    l.activation = (i + 2 == dims.size()) ? Activation::kIdentity : hidden;
    net.layers.push_back(std::move(l));
  }
  return net;
}

struct MlpCache {
  std::vector<Matrix> inputs;   // input of each layer
  std::vector<Matrix> preacts;  // pre-activation of each layer
};

inline Matrix mlp_forward(const Mlp& net, const Matrix& in, MlpCache* cache = nullptr) {
  if (in.cols() != net.input_dim())
    throw DimensionError("mlp_forward: input " + shape_str(in) +
                         " does not match network input width " +
                         std::to_string(net.input_dim()));
  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
  }
  Matrix h = in;
  for (const auto& l : net.layers) {
    Matrix pre = h * l.weight;
    pre.rowwise() += l.bias.row(0);
    if (cache) cache->inputs.push_back(std::move(h));
    h = detail::apply_activation(l.activation, pre);
    if (cache) cache->preacts.push_back(std::move(pre));
  }
  return h;
}

/// Backpropagates `grad_out` (dL/d output). Parameter gradients are added to
/// `grads` (sized and zeroed on first use). Returns dL/d input.
inline Matrix mlp_backward(const Mlp& net, const MlpCache& cache, Matrix grad_out,
                           std::vector<Matrix>& grads) {
  const std::size_t n = net.layers.size();
  if (grads.empty()) {
    for (const auto& l : net.layers) {
      grads.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      grads.push_back(Matrix::Zero(1, l.bias.cols()));
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    const auto& l = net.layers[k];
    Matrix dpre = grad_out.cwiseProduct(
        detail::activation_derivative(l.activation, cache.preacts[k]));
    grads[2 * k].noalias() += cache.inputs[k].transpose() * dpre;
    grads[2 * k + 1] += dpre.colwise().sum();
    grad_out = dpre * l.weight.transpose();
  }
  return grad_out;
}

// ---------------------------------------------------------------------------
// Full network

struct NetworkParams {
  Matrix W;     // D x p selector
  Mlp encoder;  // p -> q
  Matrix A;     // q x d RSR layer
  Mlp decoder;  // d -> D

  Index D() const { return W.rows(); }
  Index p() const { return W.cols(); }
  Index q() const { return A.rows(); }
  Index d() const { return A.cols(); }

  void validate() const {
    encoder.validate("encoder");
    decoder.validate("decoder");
    if (W.cols() > W.rows())
      throw DimensionError("W must be D x p with p <= D, got " + shape_str(W));
    if (encoder.input_dim() != W.cols())
      throw DimensionError("encoder input width != p");
    if (encoder.output_dim() != A.rows())
      throw DimensionError("encoder output width != rows of A");
    if (A.rows() < A.cols())
      throw DimensionError("RSR layer A must be q x d with q >= d, got " + shape_str(A));
    if (decoder.input_dim() != A.cols())
      throw DimensionError("decoder input width != d");
    if (decoder.output_dim() != W.rows())
      throw DimensionError("decoder output width != D");
  }
};

struct NetworkShape {
  Index D = 0;
  Index p = 0;
  Index q = 0;
  Index d = 0;
  std::vector<Index> encoder_hidden;  // widths between p and q
  std::vector<Index> decoder_hidden;  // widths between d and D
  Activation hidden_activation = Activation::kLeakyRelu;
};

/// Draw order: W ~ N(0, 1/D), encoder, A (Gaussian then column-orthonormal),
/// decoder.
inline NetworkParams init_network(const NetworkShape& s, Rng& rng) {
  NetworkParams net;
  net.W = gaussian_matrix(s.D, s.p, rng) / std::sqrt(static_cast<double>(s.D));
  std::vector<Index> enc{s.p};
  enc.insert(enc.end(), s.encoder_hidden.begin(), s.encoder_hidden.end());
  enc.push_back(s.q);
  net.encoder = make_mlp(enc, s.hidden_activation, rng);
  net.A = orthonormalize_columns(gaussian_matrix(s.q, s.d, rng));
  std::vector<Index> dec{s.d};
  dec.insert(dec.end(), s.decoder_hidden.begin(), s.decoder_hidden.end());
  dec.push_back(s.D);
  net.decoder = make_mlp(dec, s.hidden_activation, rng);
  net.validate();
  return net;
}

struct ForwardCache {
  Matrix X_s;      // N x p
  Matrix Z;        // N x q
  Matrix Z_tilde;  // N x d
  Matrix X_tilde;  // N x D
  MlpCache encoder;
  MlpCache decoder;
};

/// X_s = X W, Z = E(X_s), Z~ = Z A, X~ = Dec(Z~).
inline ForwardCache forward(const Matrix& X, const NetworkParams& net) {
  if (X.cols() != net.W.rows())
    throw DimensionError("forward: X " + shape_str(X) + " incompatible with W " +
                         shape_str(net.W));
  ForwardCache c;
  c.X_s = X * net.W;
  c.Z = mlp_forward(net.encoder, c.X_s, &c.encoder);
  if (c.Z.cols() != net.A.rows())
    throw DimensionError("forward: encoder output width != rows of A");
  c.Z_tilde = c.Z * net.A;
  c.X_tilde = mlp_forward(net.decoder, c.Z_tilde, &c.decoder);
  if (c.X_tilde.cols() != X.cols())
    throw DimensionError("forward: decoder output width != D");
  return c;
}

// ---------------------------------------------------------------------------
// Losses. Norms are smoothed as sqrt(||r||^2 + eps_smooth).

inline constexpr double kDefaultSmoothing = 1e-8;

namespace detail {

inline Vector smoothed_row_norms(const Matrix& r, double eps) {
  return (r.rowwise().squaredNorm().array() + eps).sqrt().matrix();
}

}  // namespace detail

/// sum_i sqrt(||x_i - x~_i||^2 + eps)
inline double loss_ae(const Matrix& X, const Matrix& X_tilde, double eps_smooth) {
  require_same_shape(X, X_tilde, "loss_ae");
  return detail::smoothed_row_norms(X - X_tilde, eps_smooth).sum();
}

/// lambda1 * sum_i sqrt(||z_i - A A^T z_i||^2 + eps) + lambda2 ||A^T A - I||_F^2
inline double loss_rsr(const Matrix& Z, const Matrix& A, double lambda1, double lambda2,
                       double eps_smooth) {
  if (Z.cols() != A.rows())
    throw DimensionError("loss_rsr: Z " + shape_str(Z) + " incompatible with A " +
                         shape_str(A));
  const Matrix resid = Z - (Z * A) * A.transpose();
  const Matrix gram = A.transpose() * A - Matrix::Identity(A.cols(), A.cols());
  return lambda1 * detail::smoothed_row_norms(resid, eps_smooth).sum() +
         lambda2 * gram.squaredNorm();
}

/// Sum of row l2 norms.
inline double l21_norm(const Matrix& W) { return W.rowwise().norm().sum(); }

inline double l21_smoothed(const Matrix& W, double eps_smooth) {
  return detail::smoothed_row_norms(W, eps_smooth).sum();
}

struct LossWeights {
  double alpha = 1.0;
  double eta = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double eps_smooth = kDefaultSmoothing;
};

enum GradBlock : unsigned {
  kGradEncoderDecoder = 1u,
  kGradRsr = 2u,
  kGradSelector = 4u,
  kGradAll = 7u,
};

/// Each block's gradient is taken of its own alternating-minimization
/// subproblem:
///   encoder/decoder: loss_ae + eta ||Z~ - F||_F^2
///   A:               loss_rsr
///   W:               loss_ae + alpha * smoothed ||W||_{2,1}
struct NetGradients {
  std::vector<Matrix> encoder;
  std::vector<Matrix> decoder;
  Matrix A;
  Matrix W;
};

inline NetGradients grad_net(const ForwardCache& cache, const Matrix& X, const Matrix& F,
                             const NetworkParams& net, const LossWeights& w,
                             unsigned blocks = kGradAll) {
  NetGradients g;
  const double eps = w.eps_smooth;
  const bool want_net = blocks & kGradEncoderDecoder;
  const bool want_w = blocks & kGradSelector;

  if (want_net || want_w) {
    const Matrix resid = cache.X_tilde - X;
    const Vector norms = detail::smoothed_row_norms(resid, eps);
    const Matrix d_xt = norms.cwiseInverse().asDiagonal() * resid;
    std::vector<Matrix> dec_grads;
    const Matrix d_zt_ae = mlp_backward(net.decoder, cache.decoder, d_xt, dec_grads);
    if (want_net) {
      require_same_shape(cache.Z_tilde, F, "grad_net: Z_tilde vs F");
      g.decoder = std::move(dec_grads);
      const Matrix d_zt = d_zt_ae + 2.0 * w.eta * (cache.Z_tilde - F);
      mlp_backward(net.encoder, cache.encoder, d_zt * net.A.transpose(), g.encoder);
    }
    if (want_w) {
      std::vector<Matrix> scratch;
      const Matrix d_xs =
          mlp_backward(net.encoder, cache.encoder, d_zt_ae * net.A.transpose(), scratch);
      g.W = X.transpose() * d_xs;
      const Vector wn = detail::smoothed_row_norms(net.W, eps);
      g.W += w.alpha * (wn.cwiseInverse().asDiagonal() * net.W);
    }
  }

  if (blocks & kGradRsr) {
    const Matrix& Z = cache.Z;
    const Matrix& A = net.A;
    const Matrix ZA = Z * A;
    const Matrix resid = Z - ZA * A.transpose();
    const Vector norms = detail::smoothed_row_norms(resid, eps);
    const Matrix G = w.lambda1 * (norms.cwiseInverse().asDiagonal() * resid);
    const Matrix gram = A.transpose() * A - Matrix::Identity(A.cols(), A.cols());
    g.A = -(Z.transpose() * (G * A) + G.transpose() * ZA) + 4.0 * w.lambda2 * (A * gram);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
                      AdamState& st) {
  if (params.size() != grads.size())
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " parameters but " + std::to_string(grads.size()) + " gradients");
  if (st.m.empty()) {
    for (const Matrix* p : params) {
      st.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      st.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (st.m.size() != params.size())
    throw DimensionError("adam_step: optimizer state tracks a different tensor count");
  ++st.step;
  const auto& c = st.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "adam_step");
    require_same_shape(st.m[i], grads[i], "adam_step state");
    st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * grads[i];
    st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * grads[i].cwiseAbs2();
    params[i]->array() -= c.lr * (st.m[i].array() / bc1) /
                          ((st.v[i].array() / bc2).sqrt() + c.eps);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: "<prefix>.manifest" lists "name rows cols [tag]" per tensor;
// "<prefix>.tensors" holds the binary-matrix records in the same order.

struct NamedTensor {
  std::string name;
  Matrix value;
  std::string tag;
};

using TensorList = std::vector<NamedTensor>;

inline constexpr const char* kTensorManifestHeader = "raeufs-tensors 1";

inline void save_tensors(const std::string& prefix, const TensorList& tensors) {
  std::ofstream man(prefix + ".manifest");
  std::ofstream bin(prefix + ".tensors", std::ios::binary);
  if (!man || !bin) throw Error("save_tensors: cannot open " + prefix + ".*");
  man << kTensorManifestHeader << '\n';
  for (const auto& t : tensors) {
    man << t.name << ' ' << t.value.rows() << ' ' << t.value.cols();
    if (!t.tag.empty()) man << ' ' << t.tag;
    man << '\n';
    write_matrix_binary(bin, t.value);
  }
  if (!man || !bin) throw Error("save_tensors: write failed for " + prefix);
}

inline TensorList load_tensors(const std::string& prefix) {
  const std::string man_path = prefix + ".manifest";
  std::ifstream man(man_path);
  std::ifstream bin(prefix + ".tensors", std::ios::binary);
  if (!man || !bin) throw ParseError(man_path, 0, 0, "cannot open checkpoint");
  std::string line;
  std::getline(man, line);
  if (line != kTensorManifestHeader) throw ParseError(man_path, 1, 0, "bad header");
  TensorList out;
  std::size_t line_no = 1;
  while (std::getline(man, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    NamedTensor t;
    Index rows = 0, cols = 0;
    if (!(ls >> t.name >> rows >> cols)) throw ParseError(man_path, line_no, 0, "malformed entry");
    ls >> t.tag;
    auto m = read_matrix_binary(bin, prefix + ".tensors");
    if (!m || m->rows() != rows || m->cols() != cols)
      throw ParseError(man_path, line_no, 0, "tensor '" + t.name + "' shape mismatch");
    t.value = std::move(*m);
    out.push_back(std::move(t));
  }
  return out;
}

inline TensorList network_tensors(const NetworkParams& net) {
  TensorList out;
  out.push_back({"W", net.W, ""});
  auto add_mlp = [&](const Mlp& m, const std::string& name) {
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      const auto& l = m.layers[i];
      out.push_back({name + "." + std::to_string(i) + ".weight", l.weight,
                     to_string(l.activation)});
      out.push_back({name + "." + std::to_string(i) + ".bias", l.bias, ""});
    }
  };
  add_mlp(net.encoder, "encoder");
  out.push_back({"A", net.A, ""});
  add_mlp(net.decoder, "decoder");
  return out;
}

/// Inverse of network_tensors; entries with other names are ignored.
inline NetworkParams network_from_tensors(const TensorList& tensors) {
  NetworkParams net;
  bool have_w = false, have_a = false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    if (t.name == "W") {
      net.W = t.value;
      have_w = true;
    } else if (t.name == "A") {
      net.A = t.value;
      have_a = true;
    } else {
      const bool enc = t.name.rfind("encoder.", 0) == 0;
      const bool dec = t.name.rfind("decoder.", 0) == 0;
      if ((!enc && !dec) || t.name.size() < 7 ||
          t.name.compare(t.name.size() - 7, 7, ".weight") != 0)
        continue;
      if (i + 1 >= tensors.size())
        throw InvalidArgument("checkpoint: weight '" + t.name + "' has no bias");
      Layer l{t.value, tensors[i + 1].value, activation_from_string(t.tag)};
      (enc ? net.encoder : net.decoder).layers.push_back(std::move(l));
    }
  }
  if (!have_w || !have_a) throw InvalidArgument("checkpoint: missing W or A");
  net.validate();
  return net;
}

}  // namespace raeufs
