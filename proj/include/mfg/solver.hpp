#pragma once

// Time-discretized forward-backward MFG solver.
//
// On the grid t_i = i*T/M the value function steps backward with
//   u(t_i, x) = u(t_{i+1}, x) + dt * Hbar(x, mu(t_{i+1}), grad_x u(t_*, .))
// where t_* = t_{i+1} (explicit) or t_i (implicit, solved by inner fixed
// point), and the distribution steps forward with
//   mu(t_{i+1}, x) = mu(t_i, x) + dt * sum_y mu(t_i, y) rate_{y->x},
// rates chosen by the model selector from grad_y u(t_{i+1}, .) and mu(t_i).

#include "mfg/core.hpp"

#include <functional>
#include <iosfwd>
#include <vector>

namespace mfg {

enum class BackwardMode { Explicit, Implicit };

struct HjbOptions {
  BackwardMode mode = BackwardMode::Explicit;
  double inner_tol = 1e-13;
  std::size_t inner_max_iter = 200;
};

struct PicardConfig {
  double tol = 1e-9;
  std::size_t max_iter = 500;
  /// delta^(k) for k = 0, 1, ...; the last entry repeats. Empty means no damping.
  std::vector<double> damping;
  HjbOptions hjb;

  double damping_at(std::size_t k) const;
  void validate() const;
};

struct DiscretizedSolution {
  TimeGrid grid;
  RowMajorMatrix u;  // (M+1) x d
  RowMajorMatrix mu; // (M+1) x d
};

struct PicardIterate {
  double du = 0.0;  // max |u^(k+1) - u^(k)|
  double dmu = 0.0; // max |mu^(k+1) - mu^(k)|
};

struct PicardResult {
  DiscretizedSolution solution;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<PicardIterate> history;
};

/// Throws NumericalError unless dt * max_exit_rate <= 1.
void check_cfl(const MfgModel &model, const TimeGrid &grid);

RowMajorMatrix hjb_backward_sweep(const MfgModel &model, const VecRef &kappa,
                                  const RowMajorMatrix &mu, const TimeGrid &grid,
                                  const HjbOptions &opts = {});

/// One forward Euler step of the KFP equation, repaired onto the simplex.
Vec kfp_step(const MfgModel &model, const VecRef &mu, const VecRef &u_next,
             double dt);

RowMajorMatrix kfp_forward_sweep(const MfgModel &model, const RowMajorMatrix &u,
                                 const SimplexDist &eta, const TimeGrid &grid);

/// Alternating backward/forward sweeps from u = 0, mu = eta at every time,
/// with the damped distribution mu~ feeding the backward sweep.
PicardResult picard_solve(const MfgModel &model, const SimplexDist &eta,
                          const VecRef &kappa, const TimeGrid &grid,
                          const PicardConfig &cfg);

using ValueEvaluator = std::function<Vec(std::size_t j, double t)>;

/// Forward sweep driven by an externally supplied value function.
RowMajorMatrix kfp_reconstruct(const MfgModel &model, const ValueEvaluator &u_eval,
                               const SimplexDist &eta, const TimeGrid &grid);

struct SystemResidual {
  double hjb = 0.0;      // max violation of the backward stepping rule
  double kfp = 0.0;      // max violation of the forward stepping rule
  double terminal = 0.0; // max |u[M][x] - g(x, mu[M])|
  double initial = 0.0;  // max |mu[0] - eta|
  double mass = 0.0;     // max per-step |sum mu[i+1] - sum mu[i]|

  double max() const;
};

/// Re-substitutes (u, mu) into the discretized system.
SystemResidual discretization_residual(const MfgModel &model, const VecRef &kappa,
                                       const SimplexDist &eta,
                                       const DiscretizedSolution &sol,
                                       const HjbOptions &opts = {});

struct StabilityPair {
  SimplexDist eta1;
  Vec kappa1;
  SimplexDist eta2;
  Vec kappa2;
};

struct StabilityRow {
  double input_distance = 0.0; // |eta1 - eta2| + |kappa1 - kappa2| (Euclidean)
  double u_distance = 0.0;     // max over grid and states
  double mu_distance = 0.0;

  double u_ratio() const;
  double mu_ratio() const;
};

std::vector<StabilityRow> stability_probe(const MfgModel &model,
                                          const std::vector<StabilityPair> &pairs,
                                          const TimeGrid &grid,
                                          const PicardConfig &cfg);

/// One JSON object per grid point: {"j", "t", "u", "mu"}.
void dump_trajectory(std::ostream &out, const DiscretizedSolution &sol);

} // namespace mfg
