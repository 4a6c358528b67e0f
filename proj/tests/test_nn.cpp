#include "doctest.h"

#include "mfg/checkpoint.hpp"
#include "mfg/nn.hpp"
#include "oracles.hpp"

#include <numbers>

using namespace mfg;
using namespace mfg::nn;

namespace {

Matrix random_matrix(Rng &rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = n(rng);
  return m;
}

MlpParams random_params(Rng &rng, const std::vector<std::size_t> &sizes) {
  MlpParams p = init_params(rng, sizes);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto &b : p.biases)
    for (auto &v : b)
      v = n(rng);
  return p;
}

} // namespace

TEST_CASE("forward pass examples") {
  MlpParams zero = MlpParams::zeros({3, 5, 5, 2});
  Vec x(3);
  x << 1, -2, 3;
  CHECK(mlp_forward(zero, x) == Vec::Zero(2));

  MlpParams id = MlpParams::zeros({2, 2, 2});
  id.weights[0] = Matrix::Identity(2, 2);
  id.weights[1] = Matrix::Identity(2, 2);
  Vec in(2);
  in << 1, -1;
  Vec expect(2);
  expect << 1, 0;
  CHECK(mlp_forward(id, in) == expect);

  Rng rng(1);
  MlpParams p = random_params(rng, {3, 8, 8, 2});
  const Vec base = mlp_forward(p, x);
  p.weights.back() *= -2.5;
  CHECK((mlp_forward(p, x) - (-2.5) * base).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK_THROWS(mlp_forward(p, Vec::Zero(4)));
}

TEST_CASE("forward pass agrees with a scalar loop and is bit-reproducible") {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const MlpParams p = random_params(rng, {4, 7, 5, 3});
    const Matrix xs = random_matrix(rng, 4, 6);
    const Matrix batch = mlp_forward_batch(p, xs);
    for (Eigen::Index c = 0; c < 6; ++c) {
      const std::vector<double> xv(xs.col(c).data(), xs.col(c).data() + 4);
      const auto ref = oracle::naive_forward(p, xv);
      for (Eigen::Index r = 0; r < 3; ++r)
        CHECK(batch(r, c) == doctest::Approx(ref[static_cast<std::size_t>(r)]).epsilon(1e-13));
      CHECK(mlp_forward(p, xs.col(c)) == mlp_forward(p, xs.col(c)));
    }
    CHECK(mlp_forward_batch(p, xs) == batch);
  }
}

TEST_CASE("loss values") {
  Vec a(3);
  a << 1, 2, 3;
  CHECK(loss_value(LossKind::L2, a, a) == 0.0);
  CHECK(loss_value(LossKind::SmoothL1, a, a) == 0.0);
  Vec z(1), h(1), t(1);
  z << 0.0;
  h << 0.5;
  t << 2.0;
  CHECK(loss_value(LossKind::SmoothL1, h, z) == doctest::Approx(0.125));
  CHECK(loss_value(LossKind::SmoothL1, t, z) == doctest::Approx(1.5));
  Vec b(3);
  b << 0, 2, 5;
  CHECK(loss_value(LossKind::L2, a, b) == doctest::Approx(1 + 0 + 4));
  CHECK(loss_value(LossKind::SmoothL1, a, b) == doctest::Approx((0.5 + 0 + 1.5) / 3));
  CHECK_THROWS(loss_value(LossKind::L2, a, z));
}

TEST_CASE("batch loss is the mean of per-sample losses and duplication-invariant") {
  Rng rng(3);
  const MlpParams p = random_params(rng, {2, 6, 6, 3});
  const Matrix x = random_matrix(rng, 2, 5), y = random_matrix(rng, 3, 5);
  Matrix x2(2, 10), y2(3, 10);
  x2 << x, x;
  y2 << y, y;
  for (LossKind kind : {LossKind::L2, LossKind::SmoothL1}) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < 5; ++c)
      mean += loss_value(kind, mlp_forward(p, x.col(c)), y.col(c)) / 5.0;
    CHECK(batch_loss(p, x, y, kind) == doctest::Approx(mean).epsilon(1e-14));
    const auto g1 = loss_and_grad(p, x, y, kind);
    const auto g2 = loss_and_grad(p, x2, y2, kind);
    CHECK(g1.loss == doctest::Approx(g2.loss).epsilon(1e-14));
    for (std::size_t i = 0; i < p.parameter_count(); ++i)
      CHECK(g1.grad.at(i) == doctest::Approx(g2.grad.at(i)).epsilon(1e-12).scale(1e-12));
  }
}

TEST_CASE("gradients match central differences") {
  Rng rng(4);
  std::uniform_int_distribution<std::size_t> width(2, 6), depth(1, 3), io(1, 4);
  int checked = 0;
  while (checked < 20) {
    std::vector<std::size_t> sizes{io(rng)};
    const std::size_t L = depth(rng);
    for (std::size_t l = 0; l < L; ++l)
      sizes.push_back(width(rng));
    sizes.push_back(io(rng));
    const MlpParams p = random_params(rng, sizes);
    if (p.parameter_count() > 200)
      continue;
    const Matrix x = random_matrix(rng, static_cast<Eigen::Index>(sizes.front()), 4);
    const Matrix y = random_matrix(rng, static_cast<Eigen::Index>(sizes.back()), 4);
    if (min_preactivation_magnitude(p, x) < 1e-6)
      continue;
    for (LossKind kind : {LossKind::L2, LossKind::SmoothL1})
      CHECK(oracle::check_gradient(p, x, y, kind, 1e-6, 1e-6).max_relative_error < 1e-5);
    ++checked;
  }
}

TEST_CASE("dead network only propagates through the output path") {
  MlpParams p = MlpParams::zeros({2, 3, 2});
  Matrix x(2, 1);
  x << 1, 1;
  Matrix y(2, 1);
  y << 1, -1;
  const auto g = loss_and_grad(p, x, y, LossKind::L2);
  CHECK(g.grad.weights.back().cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.grad.weights.front().cwiseAbs().maxCoeff() == 0.0); // relu'(0) = 0
  CHECK(g.loss == doctest::Approx(2.0));
}

TEST_CASE("optimizer steps") {
  MlpParams p = MlpParams::zeros({1, 1, 1});
  MlpParams g = MlpParams::zeros({1, 1, 1});
  OptimState sgd = OptimState::make(OptimizerKind::SGD, p);
  p.at(0) = 0.3;
  const MlpParams before = p;
  optimizer_step(sgd, p, g, 0.1);
  CHECK(p == before);

  MlpParams theta = MlpParams::zeros({1, 1, 1});
  MlpParams ones = theta;
  for (std::size_t i = 0; i < 3; ++i)
    ones.at(i) = 1.0;
  OptimState adamw = OptimState::make(OptimizerKind::AdamW, theta, 0.01);
  optimizer_step(adamw, theta, ones, 1e-3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(theta.at(i) == doctest::Approx(-1e-3 / (1 + 1e-8)).epsilon(1e-15));
  CHECK(adamw.step == 1);

  Rng rng(5);
  MlpParams a = random_params(rng, {3, 4, 2}), b = a;
  OptimState s_adam = OptimState::make(OptimizerKind::Adam, a);
  OptimState s_w0 = OptimState::make(OptimizerKind::AdamW, b, 0.0);
  for (int k = 0; k < 5; ++k) {
    const MlpParams grad = random_params(rng, {3, 4, 2});
    optimizer_step(s_adam, a, grad, 1e-2);
    optimizer_step(s_w0, b, grad, 1e-2);
  }
  CHECK(a == b);
  CHECK(OptimState::make(OptimizerKind::Adam, a, 0.5).weight_decay == 0.0);
}

TEST_CASE("AdamW minimizes a quadratic bowl") {
  // theta = (A_0, b_0) of a 1-1-1 network; A_1 stays at zero.
  MlpParams theta = MlpParams::zeros({1, 1, 1});
  const double target[2] = {0.5, -0.3};
  OptimState st = OptimState::make(OptimizerKind::AdamW, theta, 0.01);
  std::size_t steps = 0;
  for (; steps < 5000; ++steps) {
    const double d0 = theta.at(0) - target[0], d1 = theta.at(1) - target[1];
    if (std::hypot(d0, d1) < 1e-3)
      break;
    MlpParams g = MlpParams::zeros({1, 1, 1});
    g.at(0) = 2 * d0;
    g.at(1) = 2 * d1;
    optimizer_step(st, theta, g, 1e-2);
  }
  CHECK(steps < 5000);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 8e-4) == 8e-4);
  CHECK(cosine_lr(100, 100, 8e-4) == 0.0);
  CHECK(cosine_lr(50, 100, 8e-4) == doctest::Approx(4e-4).epsilon(1e-14));
  CHECK(cosine_lr(25, 100, 1.0) ==
        doctest::Approx(0.5 * (1 + std::cos(std::numbers::pi / 4))).epsilon(1e-14));
  CHECK_THROWS(cosine_lr(101, 100, 1.0));
}

TEST_CASE("weight bound") {
  MlpParams p = MlpParams::zeros({1, 1, 1});
  p.weights[1](0, 0) = 2.0;
  p.weights[0](0, 0) = 0.3;
  p.biases[0][0] = 0.4; // ||(A_0 | b_0)|| = 0.5
  CHECK(weight_bound(p) == doctest::Approx(2.0));
  p.weights[0](0, 0) = 0.6;
  p.biases[0][0] = 0.8; // norm exactly 1
  CHECK(weight_bound(p) == doctest::Approx(2.0));
  p.weights[1] *= -3.0;
  CHECK(weight_bound(p) == doctest::Approx(6.0));

  Rng rng(6);
  MlpParams q = random_params(rng, {3, 6, 6, 2});
  q.weights[1] *= 10.0;
  q.biases[1] *= 10.0;
  const double w0 = weight_bound(q);
  q.weights[1] *= 1.5;
  q.biases[1] *= 1.5;
  CHECK(weight_bound(q) > w0);
  CHECK(weight_bound(q, MatrixNorm::Spectral) <= weight_bound(q, MatrixNorm::Frobenius));
}

TEST_CASE("He initialization") {
  Rng a(7), b(7);
  const MlpParams p = init_params(a, {100, 200, 50, 3});
  CHECK(p == init_params(b, {100, 200, 50, 3}));
  for (const auto &bias : p.biases)
    CHECK(bias.cwiseAbs().maxCoeff() == 0.0);
  const Matrix &A0 = p.weights[0];
  const double mean = A0.mean();
  const double sd = std::sqrt((A0.array() - mean).square().sum() / static_cast<double>(A0.size() - 1));
  CHECK(std::abs(sd - std::sqrt(2.0 / 100.0)) <= 0.1 * std::sqrt(2.0 / 100.0));
  const Matrix &A1 = p.weights[1];
  const double sd1 = std::sqrt(A1.array().square().mean());
  CHECK(std::abs(sd1 - std::sqrt(2.0 / 200.0)) <= 0.1 * std::sqrt(2.0 / 200.0));
}

TEST_CASE("checkpoint round trip is exact") {
  Rng rng(8);
  Checkpoint ck;
  ck.params = random_params(rng, {4, 9, 9, 3});
  ck.optim = OptimState::make(OptimizerKind::AdamW, ck.params);
  optimizer_step(ck.optim, ck.params, random_params(rng, {4, 9, 9, 3}), 1e-3);
  ck.epoch = 17;
  ck.rng_state = rng_to_string(rng);
  ck.metadata = {{"mode", "pointwise"}, {"d", "3"}};
  const std::string bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back == ck);
  CHECK(encode_checkpoint(back) == bytes);

  Rng restored = rng_from_string(back.rng_state);
  CHECK(restored() == rng());

  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), IoError);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
}
