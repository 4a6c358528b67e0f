#pragma once

// Fully-connected ReLU network with hand-written backpropagation.
//
//   h_0 = x,  h_{j+1} = relu(A_j h_j + b_j)  for j = 0..L-1,  phi(x) = A_L h_L.
//
// The output layer carries no bias. Batches are stored column-wise: an input
// batch is an N_0 x B matrix.

#include "mfg/core.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace mfg::nn {

using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

struct MlpParams {
  std::vector<Matrix> weights; // A_0 .. A_L, A_j is N_{j+1} x N_j
  std::vector<Vec> biases;     // b_0 .. b_{L-1}

  /// Zero-initialized parameters for layer sizes N_0, ..., N_{L+1}.
  static MlpParams zeros(const std::vector<std::size_t> &sizes);

  std::vector<std::size_t> layer_sizes() const;
  std::size_t depth() const { return biases.size(); }
  std::size_t width() const;
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;

  /// Flat view used by finite-difference checks and checkpoint I/O; the order
  /// is A_0, b_0, A_1, b_1, ..., A_L with each matrix column-major.
  double &at(std::size_t flat_index);
  double at(std::size_t flat_index) const;

  void validate() const;
  bool operator==(const MlpParams &other) const;
};

Vec mlp_forward(const MlpParams &params, const VecRef &x);
Matrix mlp_forward_batch(const MlpParams &params, const Matrix &inputs);

enum class LossKind { L2, SmoothL1 };

inline constexpr double kSmoothL1Beta = 1.0;

/// L2: squared Euclidean distance. SmoothL1 (beta = 1): mean over coordinates
/// of 0.5 z^2 / beta for |z| < beta, |z| - 0.5 beta otherwise.
double loss_value(LossKind kind, const VecRef &pred, const VecRef &target);

/// Mean per-sample loss over the batch columns.
double batch_loss(const MlpParams &params, const Matrix &inputs,
                  const Matrix &targets, LossKind kind);

struct LossAndGrad {
  double loss = 0.0;
  MlpParams grad;
};

LossAndGrad loss_and_grad(const MlpParams &params, const Matrix &inputs,
                          const Matrix &targets, LossKind kind);

/// Smallest |pre-activation| over every hidden unit and batch column.
double min_preactivation_magnitude(const MlpParams &params, const Matrix &inputs);

enum class OptimizerKind { SGD, Adam, AdamW };

struct OptimState {
  OptimizerKind kind = OptimizerKind::AdamW;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t step = 0;
  MlpParams m; // first moments
  MlpParams v; // second moments

  static OptimState make(OptimizerKind kind, const MlpParams &shape_like,
                         double weight_decay = 0.01);
  bool operator==(const OptimState &other) const;
};

/// AdamW: theta <- theta - lr*lambda*theta - lr * mhat / (sqrt(vhat) + eps).
/// Adam is the same step with lambda = 0; SGD is theta <- theta - lr * g.
void optimizer_step(OptimState &state, MlpParams &params, const MlpParams &grads,
                    double lr);

/// lr0 * (1 + cos(pi * epoch / total_epochs)) / 2.
double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0);

enum class MatrixNorm { Frobenius, Spectral };

/// ||A_L|| * prod_j max(||(A_j | b_j)||, 1).
double weight_bound(const MlpParams &params, MatrixNorm norm = MatrixNorm::Frobenius);

/// He initialization: weights ~ N(0, 2 / N_j), biases zero.
MlpParams init_params(Rng &rng, const std::vector<std::size_t> &sizes);

} // namespace mfg::nn
