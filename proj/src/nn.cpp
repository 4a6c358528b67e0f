#include "mfg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mfg::nn {

namespace {

Matrix relu(const Matrix &z) { return z.cwiseMax(0.0); }

void require_layers(const std::vector<std::size_t> &sizes) {
  if (sizes.size() < 3)
    throw std::invalid_argument("an MLP needs at least one hidden layer");
  for (std::size_t s : sizes)
    if (s == 0)
      throw std::invalid_argument("layer sizes must be positive");
}

template <class Fn> void for_each_block(MlpParams &p, Fn &&fn) {
  for (std::size_t j = 0; j < p.weights.size(); ++j) {
    fn(p.weights[j].data(), static_cast<std::size_t>(p.weights[j].size()));
    if (j < p.biases.size())
      fn(p.biases[j].data(), static_cast<std::size_t>(p.biases[j].size()));
  }
}

} // namespace

// ------------------------------------------------------------------ MlpParams

MlpParams MlpParams::zeros(const std::vector<std::size_t> &sizes) {
  require_layers(sizes);
  MlpParams p;
  const std::size_t depth = sizes.size() - 2;
  for (std::size_t j = 0; j <= depth; ++j) {
    p.weights.push_back(Matrix::Zero(static_cast<Eigen::Index>(sizes[j + 1]),
                                     static_cast<Eigen::Index>(sizes[j])));
    if (j < depth)
      p.biases.push_back(Vec::Zero(static_cast<Eigen::Index>(sizes[j + 1])));
  }
  return p;
}

std::vector<std::size_t> MlpParams::layer_sizes() const {
  std::vector<std::size_t> sizes;
  if (weights.empty())
    return sizes;
  sizes.push_back(static_cast<std::size_t>(weights.front().cols()));
  for (const auto &w : weights)
    sizes.push_back(static_cast<std::size_t>(w.rows()));
  return sizes;
}

std::size_t MlpParams::width() const {
  std::size_t w = 0;
  for (const auto &b : biases)
    w = std::max(w, static_cast<std::size_t>(b.size()));
  return w;
}

std::size_t MlpParams::input_dim() const {
  return weights.empty() ? 0 : static_cast<std::size_t>(weights.front().cols());
}

std::size_t MlpParams::output_dim() const {
  return weights.empty() ? 0 : static_cast<std::size_t>(weights.back().rows());
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto &w : weights)
    n += static_cast<std::size_t>(w.size());
  for (const auto &b : biases)
    n += static_cast<std::size_t>(b.size());
  return n;
}

double &MlpParams::at(std::size_t flat_index) {
  double *found = nullptr;
  std::size_t remaining = flat_index;
  for_each_block(*this, [&](double *data, std::size_t n) {
    if (found)
      return;
    if (remaining < n)
      found = data + remaining;
    else
      remaining -= n;
  });
  if (!found)
    throw std::out_of_range("parameter index out of range");
  return *found;
}

double MlpParams::at(std::size_t flat_index) const {
  return const_cast<MlpParams &>(*this).at(flat_index);
}

void MlpParams::validate() const {
  if (weights.size() != biases.size() + 1 || biases.empty())
    throw std::invalid_argument("MLP needs L >= 1 hidden layers and L+1 weight matrices");
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (j > 0 && weights[j].cols() != weights[j - 1].rows())
      throw std::invalid_argument("MLP weight shapes do not chain");
    if (j < biases.size() && biases[j].size() != weights[j].rows())
      throw std::invalid_argument("MLP bias length does not match its layer");
    if (!weights[j].allFinite() || (j < biases.size() && !biases[j].allFinite()))
      throw std::invalid_argument("MLP parameters must be finite");
  }
}

bool MlpParams::operator==(const MlpParams &other) const {
  if (weights.size() != other.weights.size() || biases.size() != other.biases.size())
    return false;
  for (std::size_t j = 0; j < weights.size(); ++j)
    if (weights[j].rows() != other.weights[j].rows() ||
        weights[j].cols() != other.weights[j].cols() || weights[j] != other.weights[j])
      return false;
  for (std::size_t j = 0; j < biases.size(); ++j)
    if (biases[j].size() != other.biases[j].size() || biases[j] != other.biases[j])
      return false;
  return true;
}

// -------------------------------------------------------------------- forward

Matrix mlp_forward_batch(const MlpParams &params, const Matrix &inputs) {
  if (params.weights.empty() ||
      static_cast<std::size_t>(inputs.rows()) != params.input_dim())
    throw std::invalid_argument("input dimension does not match the network");
  Matrix h = inputs;
  for (std::size_t j = 0; j < params.biases.size(); ++j)
    h = relu((params.weights[j] * h).colwise() + params.biases[j]);
  return params.weights.back() * h;
}

Vec mlp_forward(const MlpParams &params, const VecRef &x) {
  return mlp_forward_batch(params, Matrix(x));
}

// --------------------------------------------------------------------- losses

double loss_value(LossKind kind, const VecRef &pred, const VecRef &target) {
  if (pred.size() != target.size())
    throw std::invalid_argument("prediction and target shapes differ");
  const Vec z = pred - target;
  if (kind == LossKind::L2)
    return z.squaredNorm();
  if (z.size() == 0)
    return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double a = std::abs(z[i]);
    total += a < kSmoothL1Beta ? 0.5 * a * a / kSmoothL1Beta : a - 0.5 * kSmoothL1Beta;
  }
  return total / static_cast<double>(z.size());
}

namespace {

// Returns the mean batch loss; fills dloss/dpred when `dpred` is non-null.
double loss_matrix(LossKind kind, const Matrix &pred, const Matrix &targets,
                   Matrix *dpred) {
  if (pred.rows() != targets.rows() || pred.cols() != targets.cols())
    throw std::invalid_argument("prediction and target shapes differ");
  const double batch = static_cast<double>(pred.cols());
  const Matrix z = pred - targets;
  if (kind == LossKind::L2) {
    if (dpred)
      *dpred = (2.0 / batch) * z;
    return z.squaredNorm() / batch;
  }
  const double scale = 1.0 / (batch * static_cast<double>(pred.rows()));
  double total = 0.0;
  if (dpred)
    dpred->resize(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c)
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const double v = z(r, c);
      const double a = std::abs(v);
      if (a < kSmoothL1Beta) {
        total += 0.5 * a * a / kSmoothL1Beta;
        if (dpred)
          (*dpred)(r, c) = scale * v / kSmoothL1Beta;
      } else {
        total += a - 0.5 * kSmoothL1Beta;
        if (dpred)
          (*dpred)(r, c) = scale * (v > 0.0 ? 1.0 : -1.0);
      }
    }
  return total * scale;
}

} // namespace

double batch_loss(const MlpParams &params, const Matrix &inputs,
                  const Matrix &targets, LossKind kind) {
  if (inputs.cols() == 0)
    throw std::invalid_argument("empty batch");
  return loss_matrix(kind, mlp_forward_batch(params, inputs), targets, nullptr);
}

LossAndGrad loss_and_grad(const MlpParams &params, const Matrix &inputs,
                          const Matrix &targets, LossKind kind) {
  if (inputs.cols() == 0)
    throw std::invalid_argument("empty batch");
  if (inputs.cols() != targets.cols())
    throw std::invalid_argument("inputs and targets hold different batch sizes");
  if (static_cast<std::size_t>(inputs.rows()) != params.input_dim() ||
      static_cast<std::size_t>(targets.rows()) != params.output_dim())
    throw std::invalid_argument("batch shape does not match the network");

  const std::size_t depth = params.depth();
  std::vector<Matrix> activations; // h_0 .. h_L
  std::vector<Matrix> preacts;     // z_0 .. z_{L-1}
  activations.reserve(depth + 1);
  preacts.reserve(depth);
  activations.push_back(inputs);
  for (std::size_t j = 0; j < depth; ++j) {
    preacts.push_back((params.weights[j] * activations.back()).colwise() + params.biases[j]);
    activations.push_back(relu(preacts.back()));
  }
  const Matrix pred = params.weights.back() * activations.back();

  LossAndGrad out;
  Matrix delta;
  out.loss = loss_matrix(kind, pred, targets, &delta);
  out.grad.weights.resize(depth + 1);
  out.grad.biases.resize(depth);

  out.grad.weights[depth].noalias() = delta * activations[depth].transpose();
  Matrix upstream = params.weights[depth].transpose() * delta;
  for (std::size_t j = depth; j-- > 0;) {
    // relu'(0) is taken as 0
    delta = upstream.cwiseProduct((preacts[j].array() > 0.0).cast<double>().matrix());
    out.grad.weights[j].noalias() = delta * activations[j].transpose();
    out.grad.biases[j] = delta.rowwise().sum();
    if (j > 0)
      upstream = params.weights[j].transpose() * delta;
  }
  return out;
}

double min_preactivation_magnitude(const MlpParams &params, const Matrix &inputs) {
  double smallest = std::numeric_limits<double>::infinity();
  Matrix h = inputs;
  for (std::size_t j = 0; j < params.depth(); ++j) {
    const Matrix z = (params.weights[j] * h).colwise() + params.biases[j];
    smallest = std::min(smallest, z.cwiseAbs().minCoeff());
    h = relu(z);
  }
  return smallest;
}

// ------------------------------------------------------------------ optimizer

OptimState OptimState::make(OptimizerKind kind, const MlpParams &shape_like,
                            double weight_decay) {
  OptimState s;
  s.kind = kind;
  s.weight_decay = kind == OptimizerKind::AdamW ? weight_decay : 0.0;
  s.m = MlpParams::zeros(shape_like.layer_sizes());
  s.v = s.m;
  return s;
}

bool OptimState::operator==(const OptimState &o) const {
  return kind == o.kind && beta1 == o.beta1 && beta2 == o.beta2 && eps == o.eps &&
         weight_decay == o.weight_decay && step == o.step && m == o.m && v == o.v;
}

void optimizer_step(OptimState &state, MlpParams &params, const MlpParams &grads,
                    double lr) {
  if (grads.layer_sizes() != params.layer_sizes())
    throw std::invalid_argument("gradient shape does not match parameters");
  ++state.step;
  if (state.kind == OptimizerKind::SGD) {
    for (std::size_t j = 0; j < params.weights.size(); ++j)
      params.weights[j] -= lr * grads.weights[j];
    for (std::size_t j = 0; j < params.biases.size(); ++j)
      params.biases[j] -= lr * grads.biases[j];
    return;
  }
  if (state.m.layer_sizes() != params.layer_sizes())
    throw std::invalid_argument("optimizer state shape does not match parameters");

  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  const double decay = state.kind == OptimizerKind::AdamW ? state.weight_decay : 0.0;

  auto update = [&](auto &theta, const auto &g, auto &m, auto &v) {
    if (decay != 0.0)
      theta *= 1.0 - lr * decay;
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    theta.array() -=
        lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + state.eps);
  };
  for (std::size_t j = 0; j < params.weights.size(); ++j)
    update(params.weights[j], grads.weights[j], state.m.weights[j], state.v.weights[j]);
  for (std::size_t j = 0; j < params.biases.size(); ++j)
    update(params.biases[j], grads.biases[j], state.m.biases[j], state.v.biases[j]);
}

double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0) {
  if (total_epochs == 0 || epoch > total_epochs)
    throw std::out_of_range("epoch outside [0, total_epochs]");
  if (epoch == total_epochs)
    return 0.0;
  const double ratio = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr0 * (1.0 + std::cos(std::numbers::pi * ratio)) / 2.0;
}

// --------------------------------------------------------------- diagnostics

double weight_bound(const MlpParams &params, MatrixNorm norm) {
  auto measure = [norm](const Matrix &m) {
    if (norm == MatrixNorm::Frobenius)
      return m.norm();
    return Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
  };
  double p = measure(params.weights.back());
  for (std::size_t j = 0; j < params.depth(); ++j) {
    Matrix augmented(params.weights[j].rows(), params.weights[j].cols() + 1);
    augmented << params.weights[j], params.biases[j];
    p *= std::max(measure(augmented), 1.0);
  }
  return p;
}

MlpParams init_params(Rng &rng, const std::vector<std::size_t> &sizes) {
  MlpParams p = MlpParams::zeros(sizes);
  for (std::size_t j = 0; j < p.weights.size(); ++j) {
    std::normal_distribution<double> normal(
        0.0, std::sqrt(2.0 / static_cast<double>(sizes[j])));
    Matrix &w = p.weights[j];
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.data()[i] = normal(rng);
  }
  return p;
}

} // namespace mfg::nn
