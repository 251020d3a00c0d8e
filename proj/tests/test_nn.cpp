#include "rlgan/nn.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace rlgan;
using namespace rlgan::nn;

namespace {

Matrix<double> random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST(Layers, ReluTanhExamples) {
  Matrix<double> x(1, 3);
  x << -1, 0, 2;
  const Matrix<double> y = relu_forward(x);
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_EQ(y(0, 1), 0.0);
  EXPECT_EQ(y(0, 2), 2.0);
  Matrix<double> up = Matrix<double>::Ones(1, 3);
  EXPECT_EQ(relu_backward(x, up)(0, 0), 0.0);
  EXPECT_EQ(relu_backward(x, up)(0, 2), 1.0);
  EXPECT_EQ(tanh_forward(Matrix<double>(Matrix<double>::Zero(1, 1)))(0, 0), 0.0);
}

TEST(Layers, MaxPoolExample) {
  Matrix<double> x(2, 2);
  x << 1, 5, 3, 2;
  std::vector<Eigen::Index> argmax;
  const Matrix<double> y = max_pool_forward(x, {}, argmax);
  ASSERT_EQ(y.rows(), 1);
  EXPECT_EQ(y(0, 0), 3.0);
  EXPECT_EQ(y(0, 1), 5.0);
}

TEST(Layers, MaxPoolBackwardRoutesToLowestArgmax) {
  Matrix<double> x(3, 1);
  x << 4, 4, 1;
  std::vector<Eigen::Index> argmax;
  max_pool_forward(x, {}, argmax);
  const Matrix<double> dx = max_pool_backward(Matrix<double>(Matrix<double>::Constant(1, 1, 2.0)), argmax, 3);
  EXPECT_EQ(dx(0, 0), 2.0);
  EXPECT_EQ(dx(1, 0), 0.0);
  EXPECT_EQ(dx(2, 0), 0.0);
}

TEST(Layers, MaxPoolGroupsAndPermutationInvariance) {
  std::mt19937_64 rng(1);
  const Matrix<double> x = random_matrix(rng, 7, 4);
  const std::vector<std::size_t> offsets{0, 3, 7};
  std::vector<Eigen::Index> argmax;
  const Matrix<double> y = max_pool_forward(x, offsets, argmax);
  ASSERT_EQ(y.rows(), 2);
  EXPECT_EQ(y.row(0), x.topRows(3).colwise().maxCoeff());
  EXPECT_EQ(y.row(1), x.bottomRows(4).colwise().maxCoeff());

  std::vector<Eigen::Index> perm{6, 5, 4, 3};
  Matrix<double> shuffled = x;
  for (int i = 0; i < 4; ++i) shuffled.row(3 + i) = x.row(perm[static_cast<std::size_t>(i)]);
  EXPECT_EQ(max_pool_forward(shuffled, offsets, argmax), y);
  EXPECT_THROW(max_pool_forward(x, std::vector<std::size_t>{0, 3, 6}, argmax), ShapeError);
}

TEST(Layers, DenseInputGradIsColumnSums) {
  std::mt19937_64 rng(2);
  const Matrix<double> w = random_matrix(rng, 4, 3);
  const Matrix<double> b = random_matrix(rng, 1, 4);
  const Matrix<double> x = random_matrix(rng, 2, 3);
  Matrix<double> gw = Matrix<double>::Zero(4, 3), gb = Matrix<double>::Zero(1, 4);
  const Matrix<double> dx = dense_backward(w, x, Matrix<double>(Matrix<double>::Ones(2, 4)), gw, gb);
  for (Eigen::Index r = 0; r < 2; ++r) {
    for (Eigen::Index c = 0; c < 3; ++c) EXPECT_NEAR(dx(r, c), w.col(c).sum(), 1e-15);
  }
}

TEST(Layers, ShapeErrorsNameBothShapes) {
  Matrix<double> w(4, 3), b(1, 4), x(2, 5);
  try {
    dense_forward(w, b, x);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2 x 5)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4 x 3)"), std::string::npos) << msg;
  }
}

// ---------------------------------------------------------------------------

TEST(Sequential, ForwardMatchesPredictAndIsDeterministic) {
  Sequential<double> net("n");
  net.pointwise_conv(3, 8).relu().pointwise_conv(8, 6).relu().max_pool_over_points().dense(6, 5).tanh();
  std::mt19937_64 rng(3);
  net.init(rng);
  const Matrix<double> x = random_matrix(rng, 10, 3);
  const std::vector<std::size_t> offsets{0, 4, 10};
  EXPECT_EQ(net.forward(x, offsets), net.predict(x, offsets));
  EXPECT_EQ(net.predict(x, offsets), net.predict(x, offsets));
}

TEST(Sequential, PointwiseRowsIndependentOfPosition) {
  Sequential<float> net("n");
  net.pointwise_conv(3, 64).relu().pointwise_conv(64, 128);
  std::mt19937_64 rng(9);
  net.init(rng);
  for (Eigen::Index n : {1, 17, 47, 49, 100, 513}) {
    const Matrix<float> x = random_matrix(rng, n, 3).cast<float>();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix<float> shuffled(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) shuffled.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    const Matrix<float> y = net.predict(x);
    const Matrix<float> ys = net.predict(shuffled);
    for (Eigen::Index i = 0; i < n; ++i) {
      ASSERT_TRUE(ys.row(i) == y.row(perm[static_cast<std::size_t>(i)])) << "n=" << n << " row " << i;
    }
    EXPECT_EQ(net.forward(x), y);
  }
}

TEST(Sequential, InitBounds) {
  Sequential<double> net;
  net.dense(10, 20);
  std::mt19937_64 rng(4);
  net.init(rng);
  const double bound = std::sqrt(6.0 / 30.0);
  EXPECT_LE(net.layers()[0].weight.value.cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(net.layers()[0].bias.value.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(net.parameter_count(), 10u * 20u + 20u);
}

TEST(Sequential, ParamNames) {
  Sequential<float> net("enc");
  net.dense(2, 3).relu().dense(3, 1);
  const auto p = net.params();
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(p[0]->name, "enc.0.weight");
  EXPECT_EQ(p[1]->name, "enc.0.bias");
  EXPECT_EQ(p[2]->name, "enc.2.weight");
  EXPECT_EQ(p[2]->shape, (std::vector<std::uint32_t>{1, 3}));
}

TEST(Sequential, FrozenRejectsBackward) {
  Sequential<float> net;
  net.dense(2, 2);
  std::mt19937_64 rng(5);
  net.init(rng);
  net.freeze();
  net.forward(Matrix<float>::Ones(1, 2));
  EXPECT_THROW(net.backward(Matrix<float>::Ones(1, 2)), FrozenError);
  EXPECT_NO_THROW(net.input_gradient(Matrix<float>::Ones(1, 2)));
}

TEST(Sequential, BackwardBeforeForward) {
  Sequential<double> net;
  net.dense(2, 2);
  EXPECT_THROW(net.backward(Matrix<double>::Ones(1, 2)), ShapeError);
}

TEST(Sequential, SoftUpdate) {
  Sequential<float> a, b;
  a.dense(1, 1);
  b.dense(1, 1);
  a.layers()[0].weight.value(0, 0) = 1.0f;
  b.layers()[0].weight.value(0, 0) = 0.0f;
  b.soft_update_from(a, 0.005f);
  EXPECT_FLOAT_EQ(b.layers()[0].weight.value(0, 0), 0.005f);
}

TEST(Sequential, SoftUpdateTauOneIsExactCopy) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 1000; ++t) {
    Sequential<float> a, b;
    a.dense(5, 7).relu().dense(7, 2);
    b.dense(5, 7).relu().dense(7, 2);
    a.init(rng);
    b.init(rng);
    b.soft_update_from(a, 1.0f);
    const auto pa = a.params();
    const auto pb = b.params();
    for (std::size_t i = 0; i < pa.size(); ++i) ASSERT_EQ(pa[i]->value, pb[i]->value);
  }
}

TEST(Sequential, SoftUpdateDistanceNonIncreasing) {
  std::mt19937_64 rng(7);
  Sequential<float> a, b;
  a.dense(4, 4);
  b.dense(4, 4);
  a.init(rng);
  b.init(rng);
  auto dist = [&] { return (a.layers()[0].weight.value - b.layers()[0].weight.value).norm(); };
  double prev = dist();
  for (int i = 0; i < 200; ++i) {
    b.soft_update_from(a, 0.005f);
    const double d = dist();
    EXPECT_LE(d, prev);
    prev = d;
  }
}

TEST(Sequential, CastRoundTrip) {
  Sequential<float> f("x");
  f.dense(3, 4).tanh();
  std::mt19937_64 rng(8);
  f.init(rng);
  const Sequential<double> d = f.cast<double>();
  const Sequential<float> back = d.cast<float>();
  EXPECT_EQ(back.params()[0]->value, f.params()[0]->value);
  EXPECT_EQ(d.name(), "x");
}

// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientIsNoOp) {
  Sequential<float> net;
  net.dense(3, 3);
  std::mt19937_64 rng(9);
  net.init(rng);
  const Matrix<float> before = net.layers()[0].weight.value;
  Adam<float> opt(net.params(), {});
  net.zero_grad();
  for (int i = 0; i < 5; ++i) opt.step();
  EXPECT_EQ(net.layers()[0].weight.value, before);
  EXPECT_EQ(opt.steps(), 5u);
}

TEST(Adam, FirstStepClosedForm) {
  Param<double> p{"p", {1, 1}, Matrix<double>::Constant(1, 1, 0.5), Matrix<double>::Constant(1, 1, 1.0)};
  Adam<double> opt({&p}, {1e-4, 0.9, 0.999, 1e-8});
  opt.step();
  // m̂ = 1, v̂ = 1  =>  Δ = -lr / (1 + eps).
  EXPECT_NEAR(p.value(0, 0) - 0.5, -1e-4 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ZeroBetasGiveSignSgd) {
  Param<double> p{"p", {1, 3}, Matrix<double>::Zero(1, 3), Matrix<double>(1, 3)};
  p.grad << 3.0, -0.25, 7.0;
  Adam<double> opt({&p}, {0.01, 0.0, 0.0, 0.0});
  for (int i = 0; i < 3; ++i) opt.step();
  EXPECT_NEAR(p.value(0, 0), -0.03, 1e-15);
  EXPECT_NEAR(p.value(0, 1), 0.03, 1e-15);
  EXPECT_NEAR(p.value(0, 2), -0.03, 1e-15);
}

TEST(Adam, MomentShapesMatch) {
  Sequential<float> net;
  net.dense(3, 5).dense(5, 2);
  Adam<float> opt(net.params(), {});
  const auto params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(opt.first_moments()[i].rows(), params[i]->value.rows());
    EXPECT_EQ(opt.second_moments()[i].cols(), params[i]->value.cols());
  }
}

// ---------------------------------------------------------------------------

TEST(GradCheck, DenseTanhStack) {
  Sequential<double> net;
  net.dense(4, 6).tanh().dense(6, 3).tanh();
  std::mt19937_64 rng(10);
  net.init(rng);
  const auto report = finite_difference_check(net, random_matrix(rng, 5, 4));
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst;
  EXPECT_GT(report.checked, 0u);
}

TEST(GradCheck, PointwiseReluMaxPool) {
  Sequential<double> net;
  net.pointwise_conv(3, 8).relu().pointwise_conv(8, 5).relu().max_pool_over_points().dense(5, 2);
  std::mt19937_64 rng(11);
  net.init(rng);
  const std::vector<std::size_t> offsets{0, 6, 13};
  const auto report = finite_difference_check(net, random_matrix(rng, 13, 3), offsets);
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst;
  EXPECT_GT(report.checked, report.skipped);
}

TEST(GradCheck, IdentityNetworkHasZeroError) {
  Sequential<double> net;
  net.dense(3, 3);
  net.layers()[0].weight.value = Matrix<double>::Identity(3, 3);
  std::mt19937_64 rng(12);
  const Matrix<double> x = random_matrix(rng, 2, 3);
  Matrix<double> xv = x;
  const Matrix<double> c = random_matrix(rng, 2, 3);
  GradCheckTarget t{"x", {}, {}};
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    t.coords.push_back(xv.data() + i);
    t.analytic.push_back(c.data()[i]);
  }
  std::vector<GradCheckTarget> targets{t};
  // A linear loss has an exact central difference up to rounding.
  const auto report = check_gradients([&] { return (net.predict(xv).array() * c.array()).sum(); }, targets);
  EXPECT_LT(report.max_relative_error, 1e-9);
}

TEST(GradCheck, CorruptedRuleIsCaught) {
  std::mt19937_64 rng(13);
  Matrix<double> x = random_matrix(rng, 3, 4);
  const Matrix<double> c = random_matrix(rng, 3, 4);
  const Matrix<double> y = tanh_forward(x);
  // Faulty rule: (1 - y) instead of (1 - y^2).
  const Matrix<double> wrong = (c.array() * (1.0 - y.array())).matrix();
  GradCheckTarget t{"x", {}, {}};
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    t.coords.push_back(x.data() + i);
    t.analytic.push_back(wrong.data()[i]);
  }
  std::vector<GradCheckTarget> targets{t};
  const auto report = check_gradients([&] { return (tanh_forward(x).array() * c.array()).sum(); }, targets);
  EXPECT_GT(report.max_relative_error, 1e-2);
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_NEAR(relative_error(1e-9, 0.0), 1e-3, 1e-15);
  EXPECT_NEAR(relative_error(2.0, 1.0), 0.5, 1e-15);
}
