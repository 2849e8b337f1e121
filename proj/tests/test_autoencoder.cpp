#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "raeufs/autoencoder.hpp"

using namespace raeufs;

namespace {

NetworkShape small_shape(Activation act) {
  NetworkShape s;
  s.D = 10;
  s.p = 5;
  s.q = 4;
  s.d = 3;
  s.encoder_hidden = {6};
  s.decoder_hidden = {7};
  s.hidden_activation = act;
  return s;
}

Layer linear(const Matrix& w) { return {w, Matrix::Zero(1, w.cols()), Activation::kIdentity}; }

struct Instance {
  NetworkParams net;
  Matrix X;
  Matrix F;
};

Instance random_instance(std::uint64_t seed) {
  Rng rng(seed);
  Instance in;
  in.net = init_network(small_shape(seed % 2 ? Activation::kTanh : Activation::kLeakyRelu), rng);
  for (auto* p : in.net.encoder.parameters()) *p += 0.1 * gaussian_matrix(p->rows(), p->cols(), rng);
  for (auto* p : in.net.decoder.parameters()) *p += 0.1 * gaussian_matrix(p->rows(), p->cols(), rng);
  in.net.A += 0.2 * gaussian_matrix(in.net.A.rows(), in.net.A.cols(), rng);
  in.X = gaussian_matrix(8, 10, rng);
  in.F = gaussian_matrix(8, 3, rng);
  return in;
}

double rel(const Matrix& analytic, const Matrix& fd) {
  return (analytic - fd).norm() / std::max(fd.norm(), 1e-6);
}

// Block objectives evaluated from scratch.
double net_objective(const Instance& in, const LossWeights& w) {
  const ForwardCache c = forward(in.X, in.net);
  return loss_ae(in.X, c.X_tilde, w.eps_smooth) + w.eta * (c.Z_tilde - in.F).squaredNorm();
}
double a_objective(const Instance& in, const LossWeights& w) {
  const ForwardCache c = forward(in.X, in.net);
  return loss_rsr(c.Z, in.net.A, w.lambda1, w.lambda2, w.eps_smooth);
}
double w_objective(const Instance& in, const LossWeights& w) {
  const ForwardCache c = forward(in.X, in.net);
  return loss_ae(in.X, c.X_tilde, w.eps_smooth) + w.alpha * l21_smoothed(in.net.W, w.eps_smooth);
}

void check_all_blocks(Instance& in, const LossWeights& w, double tol) {
  const NetGradients g = grad_net(forward(in.X, in.net), in.X, in.F, in.net, w, kGradAll);
  auto enc = in.net.encoder.parameters();
  for (std::size_t i = 0; i < enc.size(); ++i) {
    const Matrix fd = oracle::finite_difference(*enc[i], [&] { return net_objective(in, w); });
    EXPECT_LE(rel(g.encoder[i], fd), tol) << "encoder tensor " << i;
  }
  auto dec = in.net.decoder.parameters();
  for (std::size_t i = 0; i < dec.size(); ++i) {
    const Matrix fd = oracle::finite_difference(*dec[i], [&] { return net_objective(in, w); });
    EXPECT_LE(rel(g.decoder[i], fd), tol) << "decoder tensor " << i;
  }
  const Matrix fa = oracle::finite_difference(in.net.A, [&] { return a_objective(in, w); });
  EXPECT_LE(rel(g.A, fa), tol) << "A";
  const Matrix fw = oracle::finite_difference(in.net.W, [&] { return w_objective(in, w); });
  EXPECT_LE(rel(g.W, fw), tol) << "W";
}

}  // namespace

TEST(Forward, IdentityComposition) {
  Rng rng(1);
  const Matrix X = gaussian_matrix(5, 4, rng);
  NetworkParams net;
  net.W = Matrix::Identity(4, 3);
  net.encoder.layers = {linear(Matrix::Identity(3, 3))};
  net.A = Matrix::Identity(3, 2);
  net.decoder.layers = {linear(Matrix::Identity(2, 4))};
  const ForwardCache c = forward(X, net);
  Matrix want = Matrix::Zero(5, 4);
  want.leftCols(2) = X.leftCols(2);
  EXPECT_LE((c.X_tilde - want).norm(), 1e-15);
}

TEST(Forward, SingleSampleAndShapes) {
  Rng rng(2);
  const NetworkParams net = init_network(small_shape(Activation::kLeakyRelu), rng);
  for (Index n : {1, 8}) {
    const ForwardCache c = forward(gaussian_matrix(n, 10, rng), net);
    EXPECT_EQ(c.X_s.rows(), n);
    EXPECT_EQ(c.X_s.cols(), 5);
    EXPECT_EQ(c.Z.cols(), 4);
    EXPECT_EQ(c.Z_tilde.cols(), 3);
    EXPECT_EQ(c.X_tilde.cols(), 10);
  }
}

TEST(Forward, ShapeMismatchThrows) {
  Rng rng(3);
  const NetworkParams net = init_network(small_shape(Activation::kTanh), rng);
  EXPECT_THROW(forward(Matrix::Zero(2, 9), net), DimensionError);
}

TEST(Forward, DeterministicGivenParameters) {
  Rng rng(4);
  const NetworkParams net = init_network(small_shape(Activation::kTanh), rng);
  const Matrix X = gaussian_matrix(6, 10, rng);
  EXPECT_EQ(forward(X, net).X_tilde, forward(X, net).X_tilde);
}

TEST(Init, DefaultArchitecture) {
  Rng rng(5);
  NetworkShape s;
  s.D = 20;
  s.p = 6;
  s.q = 4;
  s.d = 4;
  s.encoder_hidden = {64};
  s.decoder_hidden = {64};
  const NetworkParams net = init_network(s, rng);
  ASSERT_EQ(net.encoder.layers.size(), 2u);
  EXPECT_EQ(net.encoder.layers[0].activation, Activation::kLeakyRelu);
  EXPECT_EQ(net.encoder.layers[1].activation, Activation::kIdentity);
  EXPECT_LE(orthonormality_error(net.A), 1e-12);
  EXPECT_EQ(net.encoder.layers[0].bias, Matrix::Zero(1, 64));
}

TEST(LossAe, HandValues) {
  Matrix X(1, 2), Xt = Matrix::Zero(1, 2);
  X << 3, 4;
  EXPECT_DOUBLE_EQ(loss_ae(X, X, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(loss_ae(X, Xt, 0.0), 5.0);
  Matrix R(2, 2);
  R << 1, 0, 0, 2;
  EXPECT_DOUBLE_EQ(loss_ae(R, Matrix::Zero(2, 2), 0.0), 3.0);
}

TEST(LossAe, PermutationInvariant) {
  Rng rng(6);
  const Matrix X = gaussian_matrix(7, 3, rng), Y = gaussian_matrix(7, 3, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> P(7);
  P.setIdentity();
  std::swap(P.indices()[0], P.indices()[5]);
  std::swap(P.indices()[2], P.indices()[3]);
  EXPECT_NEAR(loss_ae(P * X, P * Y, 1e-8), loss_ae(X, Y, 1e-8), 1e-12);
  EXPECT_NEAR(loss_rsr(P * X, Matrix::Identity(3, 2), 1, 1, 1e-8),
              loss_rsr(X, Matrix::Identity(3, 2), 1, 1, 1e-8), 1e-12);
}

TEST(LossRsr, SubspaceFixedPoint) {
  Rng rng(7);
  const Matrix A = orthonormalize_columns(gaussian_matrix(5, 2, rng));
  const Matrix Z = gaussian_matrix(9, 2, rng) * A.transpose();
  EXPECT_NEAR(loss_rsr(Z, A, 1.0, 1.0, 0.0), 0.0, 1e-7);
}

TEST(LossRsr, ZeroLayer) {
  Matrix z(1, 3);
  z << 1, 0, 0;
  EXPECT_DOUBLE_EQ(loss_rsr(z, Matrix::Zero(3, 1), 1.0, 1.0, 0.0), 2.0);
}

TEST(LossRsr, MatchesScalarOracle) {
  Rng rng(8);
  const Matrix Z = gaussian_matrix(6, 4, rng), A = gaussian_matrix(4, 2, rng);
  const double l1 = 0.7, l2 = 1.9, eps = 1e-3;
  double want = 0.0;
  for (Index i = 0; i < 6; ++i) {
    double sq = 0.0;
    for (Index a = 0; a < 4; ++a) {
      double proj = 0.0;
      for (Index k = 0; k < 2; ++k) {
        double coord = 0.0;
        for (Index b = 0; b < 4; ++b) coord += Z(i, b) * A(b, k);
        proj += A(a, k) * coord;
      }
      sq += (Z(i, a) - proj) * (Z(i, a) - proj);
    }
    want += l1 * std::sqrt(sq + eps);
  }
  for (Index k = 0; k < 2; ++k)
    for (Index l = 0; l < 2; ++l) {
      double g = 0.0;
      for (Index a = 0; a < 4; ++a) g += A(a, k) * A(a, l);
      g -= (k == l);
      want += l2 * g * g;
    }
  EXPECT_NEAR(loss_rsr(Z, A, l1, l2, eps), want, 1e-12);
}

TEST(L21, HandValues) {
  EXPECT_EQ(l21_norm(Matrix::Zero(3, 2)), 0.0);
  EXPECT_EQ(l21_norm(Matrix::Identity(2, 2)), 2.0);
  Matrix m(2, 2);
  m << 3, 4, 0, 0;
  EXPECT_EQ(l21_norm(m), 5.0);
}

TEST(Gradients, MatchFiniteDifferencesOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Instance in = random_instance(seed);
    check_all_blocks(in, LossWeights{0.7, 0.3, 1.3, 0.9, 1e-8}, 1e-4);
  }
}

TEST(Gradients, EachTermInIsolation) {
  const std::vector<LossWeights> toggles = {
      {0, 0, 0, 0, 1e-8}, {1, 0, 0, 0, 1e-8}, {0, 1, 0, 0, 1e-8},
      {0, 0, 1, 0, 1e-8}, {0, 0, 0, 1, 1e-8}};
  for (std::uint64_t seed = 100; seed < 104; ++seed)
    for (const auto& w : toggles) {
      Instance in = random_instance(seed);
      check_all_blocks(in, w, 1e-4);
    }
}

TEST(Gradients, VanishAtPerfectReconstruction) {
  Rng rng(9);
  const Matrix X = gaussian_matrix(6, 4, rng);
  NetworkParams net;
  net.W = Matrix::Identity(4, 4);
  net.encoder.layers = {linear(Matrix::Identity(4, 4))};
  net.A = Matrix::Identity(4, 4);
  net.decoder.layers = {linear(Matrix::Identity(4, 4))};
  const LossWeights w{0.0, 0.0, 0.0, 1.0, 1e-8};
  // Residual rows are exactly zero; the smoothed norm's gradient is 0/sqrt(eps).
  const NetGradients g = grad_net(forward(X, net), X, Matrix::Zero(6, 4), net, w);
  for (const auto& m : g.encoder) EXPECT_LE(m.cwiseAbs().maxCoeff(), 1e-10);
  for (const auto& m : g.decoder) EXPECT_LE(m.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE(g.W.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE(g.A.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Gradients, L21Row) {
  // Only the l21 term contributes when the network reconstructs perfectly.
  NetworkParams net;
  net.W = Matrix(1, 2);
  net.W << 3, 4;
  net.encoder.layers = {linear(Matrix::Identity(2, 2))};
  net.A = Matrix::Identity(2, 2);
  Matrix dec(2, 1);
  dec << 0.12, 0.16;  // (3,4)·dec = 1: x = 1 reconstructs itself
  net.decoder.layers = {linear(dec)};
  const Matrix X = Matrix::Ones(1, 1);
  const LossWeights w{1.0, 0.0, 0.0, 0.0, 1e-12};
  const NetGradients g = grad_net(forward(X, net), X, Matrix::Zero(1, 2), net, w, kGradSelector);
  EXPECT_NEAR(g.W(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(g.W(0, 1), 0.8, 1e-12);
}

TEST(Adam, FirstStepIsSignTimesLr) {
  Matrix p = Matrix::Zero(1, 3);
  Matrix g(1, 3);
  g << 2.0, -0.001, 50.0;
  AdamState st{{0.1, 0.9, 0.999, 1e-8}, {}, {}, 0};
  adam_step({&p}, {g}, st);
  EXPECT_NEAR(p(0, 0), -0.1, 1e-6);
  EXPECT_NEAR(p(0, 1), 0.1, 1e-4);
  EXPECT_NEAR(p(0, 2), -0.1, 1e-6);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, ZeroGradientNoChange) {
  Matrix p = Matrix::Constant(2, 2, 1.5);
  AdamState st{};
  adam_step({&p}, {Matrix::Zero(2, 2)}, st);
  EXPECT_EQ(p, Matrix::Constant(2, 2, 1.5));
}

TEST(Adam, ScalarQuadraticConverges) {
  Matrix w = Matrix::Zero(1, 1);
  AdamState st{{0.3, 0.9, 0.999, 1e-8}, {}, {}, 0};
  for (int i = 0; i < 200; ++i) {
    Matrix g = 2.0 * (w.array() - 3.0).matrix();
    adam_step({&w}, {g}, st);
  }
  EXPECT_LT(std::abs(w(0, 0) - 3.0), 0.1);
}

TEST(Adam, ShapeMismatchThrows) {
  Matrix p = Matrix::Zero(2, 2);
  AdamState st{};
  EXPECT_THROW(adam_step({&p}, {Matrix::Zero(2, 3)}, st), DimensionError);
}

TEST(Adam, OrthogonalityPenaltyDrivesAToStiefel) {
  Rng rng(10);
  NetworkParams net = init_network(small_shape(Activation::kTanh), rng);
  net.A = gaussian_matrix(4, 3, rng);
  const LossWeights w{0, 0, 0, 1e3, 1e-8};
  const Matrix X = gaussian_matrix(5, 10, rng);
  AdamState st{{1e-2, 0.9, 0.999, 1e-8}, {}, {}, 0};
  for (int i = 0; i < 500; ++i) {
    const NetGradients g = grad_net(forward(X, net), X, Matrix::Zero(5, 3), net, w, kGradRsr);
    adam_step({&net.A}, {g.A}, st);
  }
  EXPECT_LT(orthonormality_error(net.A), 1e-2);
}

TEST(Checkpoint, RoundTrip) {
  Rng rng(11);
  const NetworkParams net = init_network(small_shape(Activation::kTanh), rng);
  const auto dir = std::filesystem::temp_directory_path() / "raeufs_test_ckpt";
  std::filesystem::create_directories(dir);
  TensorList t = network_tensors(net);
  t.push_back({"F", gaussian_matrix(4, 2, rng), "pseudo_labels"});
  save_tensors((dir / "m").string(), t);
  const TensorList back = load_tensors((dir / "m").string());
  ASSERT_EQ(back.size(), t.size());
  EXPECT_EQ(back.back().tag, "pseudo_labels");
  const NetworkParams net2 = network_from_tensors(back);
  const Matrix X = gaussian_matrix(3, 10, rng);
  EXPECT_EQ(forward(X, net).X_tilde, forward(X, net2).X_tilde);
}
