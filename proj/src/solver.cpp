#include "mfg/solver.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace mfg {

double PicardConfig::damping_at(std::size_t k) const {
  if (damping.empty())
    return 0.0;
  return damping[std::min(k, damping.size() - 1)];
}

void PicardConfig::validate() const {
  if (!(tol > 0.0))
    throw ConfigError("Picard tolerance must be > 0");
  if (max_iter < 1)
    throw ConfigError("Picard max_iter must be >= 1");
  for (double delta : damping)
    if (!(delta >= 0.0 && delta < 1.0))
      throw ConfigError("damping parameters must lie in [0, 1)");
  if (!(hjb.inner_tol > 0.0) || hjb.inner_max_iter < 1)
    throw ConfigError("inner fixed-point settings must be positive");
}

void check_cfl(const MfgModel &model, const TimeGrid &grid) {
  const double courant = grid.dt() * model.max_exit_rate();
  if (courant > 1.0) {
    std::ostringstream msg;
    msg << "CFL violation: dt * max exit rate = " << courant
        << " > 1 (T=" << grid.horizon() << ", M=" << grid.steps() << ")";
    throw NumericalError(msg.str());
  }
}

namespace {

void check_shapes(const MfgModel &model, const RowMajorMatrix &m,
                  const TimeGrid &grid, const char *what) {
  if (static_cast<std::size_t>(m.rows()) != grid.points() ||
      static_cast<std::size_t>(m.cols()) != model.dim())
    throw std::invalid_argument(std::string(what) + " must be (M+1) x d");
}

// One backward step: returns u(t_i) given u(t_{i+1}) and mu(t_{i+1}).
Vec hjb_step(const MfgModel &model, const Vec &u_next, const Vec &mu_next,
             double dt, const HjbOptions &opts) {
  const std::size_t d = model.dim();
  Vec u(static_cast<Eigen::Index>(d));
  for (std::size_t x = 0; x < d; ++x)
    u[static_cast<Eigen::Index>(x)] =
        u_next[static_cast<Eigen::Index>(x)] +
        dt * extended_hamiltonian(model, x, mu_next, discrete_gradient(u_next, x));
  if (opts.mode == BackwardMode::Explicit)
    return u;

  Vec next(static_cast<Eigen::Index>(d));
  for (std::size_t it = 0; it < opts.inner_max_iter; ++it) {
    for (std::size_t x = 0; x < d; ++x)
      next[static_cast<Eigen::Index>(x)] =
          u_next[static_cast<Eigen::Index>(x)] +
          dt * extended_hamiltonian(model, x, mu_next, discrete_gradient(u, x));
    const double change = (next - u).cwiseAbs().maxCoeff();
    u.swap(next);
    if (change < opts.inner_tol)
      return u;
  }
  throw NumericalError("implicit HJB step did not converge within inner_max_iter");
}

double max_abs_diff(const RowMajorMatrix &a, const RowMajorMatrix &b) {
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

} // namespace

RowMajorMatrix hjb_backward_sweep(const MfgModel &model, const VecRef &kappa,
                                  const RowMajorMatrix &mu, const TimeGrid &grid,
                                  const HjbOptions &opts) {
  check_shapes(model, mu, grid, "mu");
  const std::size_t d = model.dim();
  const std::size_t m = grid.steps();
  RowMajorMatrix u(mu.rows(), mu.cols());
  const Vec mu_terminal = mu.row(static_cast<Eigen::Index>(m)).transpose();
  for (std::size_t x = 0; x < d; ++x)
    u(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(x)) =
        model.terminal_cost(kappa, x, mu_terminal);
  for (std::size_t i = m; i-- > 0;) {
    const Vec u_next = u.row(static_cast<Eigen::Index>(i + 1)).transpose();
    const Vec mu_next = mu.row(static_cast<Eigen::Index>(i + 1)).transpose();
    u.row(static_cast<Eigen::Index>(i)) =
        hjb_step(model, u_next, mu_next, grid.dt(), opts).transpose();
  }
  return u;
}

Vec kfp_step(const MfgModel &model, const VecRef &mu, const VecRef &u_next,
             double dt) {
  const std::size_t d = model.dim();
  Vec flow = Vec::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t y = 0; y < d; ++y) {
    const double mass = mu[static_cast<Eigen::Index>(y)];
    if (mass == 0.0)
      continue;
    flow += mass * model.selector(y, mu, discrete_gradient(u_next, y));
  }
  return SimplexDist::repair(mu + dt * flow);
}

RowMajorMatrix kfp_forward_sweep(const MfgModel &model, const RowMajorMatrix &u,
                                 const SimplexDist &eta, const TimeGrid &grid) {
  check_shapes(model, u, grid, "u");
  return kfp_reconstruct(
      model,
      [&u](std::size_t j, double) -> Vec {
        return u.row(static_cast<Eigen::Index>(j)).transpose();
      },
      eta, grid);
}

RowMajorMatrix kfp_reconstruct(const MfgModel &model, const ValueEvaluator &u_eval,
                               const SimplexDist &eta, const TimeGrid &grid) {
  if (eta.size() != model.dim())
    throw std::invalid_argument("eta dimension does not match the model");
  check_cfl(model, grid);
  const auto rows = static_cast<Eigen::Index>(grid.points());
  RowMajorMatrix mu(rows, static_cast<Eigen::Index>(model.dim()));
  mu.row(0) = eta.probs().transpose();
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const Vec u_next = u_eval(i + 1, grid.t(i + 1));
    if (static_cast<std::size_t>(u_next.size()) != model.dim())
      throw std::invalid_argument("value evaluator returned the wrong dimension");
    const Vec current = mu.row(static_cast<Eigen::Index>(i)).transpose();
    mu.row(static_cast<Eigen::Index>(i + 1)) =
        kfp_step(model, current, u_next, grid.dt()).transpose();
  }
  return mu;
}

PicardResult picard_solve(const MfgModel &model, const SimplexDist &eta,
                          const VecRef &kappa, const TimeGrid &grid,
                          const PicardConfig &cfg) {
  cfg.validate();
  if (eta.size() != model.dim())
    throw std::invalid_argument("eta dimension does not match the model");
  if (!model.param_box().contains(kappa, 1e-12))
    throw std::domain_error("kappa outside the model parameter box");
  check_cfl(model, grid);

  const auto rows = static_cast<Eigen::Index>(grid.points());
  const auto d = static_cast<Eigen::Index>(model.dim());
  RowMajorMatrix u = RowMajorMatrix::Zero(rows, d);
  RowMajorMatrix mu = eta.probs().transpose().replicate(rows, 1);
  RowMajorMatrix mu_damped = mu;

  PicardResult result{DiscretizedSolution{grid, u, mu}, 0, false, {}};
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t k = 0; k < cfg.max_iter; ++k) {
    RowMajorMatrix u_new = hjb_backward_sweep(model, kappa, mu_damped, grid, cfg.hjb);
    RowMajorMatrix mu_new = kfp_forward_sweep(model, u_new, eta, grid);
    const PicardIterate step{max_abs_diff(u_new, u), max_abs_diff(mu_new, mu)};
    result.history.push_back(step);

    const double delta = cfg.damping_at(k);
    mu_damped = delta * mu_damped + (1.0 - delta) * mu_new;
    u = std::move(u_new);
    mu = std::move(mu_new);
    result.iterations = k + 1;

    const double score = std::max(step.du, step.dmu);
    if (score < best) {
      best = score;
      result.solution.u = u;
      result.solution.mu = mu;
    }
    if (step.du < cfg.tol && step.dmu < cfg.tol) {
      result.converged = true;
      result.solution.u = u;
      result.solution.mu = mu;
      break;
    }
  }
  return result;
}

double SystemResidual::max() const {
  return std::max({hjb, kfp, terminal, initial, mass});
}

SystemResidual discretization_residual(const MfgModel &model, const VecRef &kappa,
                                       const SimplexDist &eta,
                                       const DiscretizedSolution &sol,
                                       const HjbOptions &opts) {
  const TimeGrid &grid = sol.grid;
  check_shapes(model, sol.u, grid, "u");
  check_shapes(model, sol.mu, grid, "mu");
  const std::size_t d = model.dim();
  const std::size_t m = grid.steps();
  const double dt = grid.dt();
  SystemResidual r;

  r.initial = (sol.mu.row(0).transpose() - eta.probs()).cwiseAbs().maxCoeff();
  const Vec mu_terminal = sol.mu.row(static_cast<Eigen::Index>(m)).transpose();
  for (std::size_t x = 0; x < d; ++x)
    r.terminal = std::max(
        r.terminal, std::abs(sol.u(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(x)) -
                             model.terminal_cost(kappa, x, mu_terminal)));

  for (std::size_t i = 0; i < m; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const Vec u_i = sol.u.row(ii).transpose();
    const Vec u_next = sol.u.row(ii + 1).transpose();
    const Vec mu_i = sol.mu.row(ii).transpose();
    const Vec mu_next = sol.mu.row(ii + 1).transpose();
    const Vec &grad_source = opts.mode == BackwardMode::Explicit ? u_next : u_i;
    for (std::size_t x = 0; x < d; ++x) {
      const double lhs = u_next[static_cast<Eigen::Index>(x)] - u_i[static_cast<Eigen::Index>(x)];
      const double rhs =
          -dt * extended_hamiltonian(model, x, mu_next, discrete_gradient(grad_source, x));
      r.hjb = std::max(r.hjb, std::abs(lhs - rhs));
    }
    Vec flow = Vec::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t y = 0; y < d; ++y)
      flow += mu_i[static_cast<Eigen::Index>(y)] *
              model.selector(y, mu_i, discrete_gradient(u_next, y));
    r.kfp = std::max(r.kfp, ((mu_next - mu_i) - dt * flow).cwiseAbs().maxCoeff());
    r.mass = std::max(r.mass, std::abs(mu_next.sum() - mu_i.sum()));
  }
  return r;
}

double StabilityRow::u_ratio() const {
  return input_distance == 0.0 ? 0.0 : u_distance / input_distance;
}

double StabilityRow::mu_ratio() const {
  return input_distance == 0.0 ? 0.0 : mu_distance / input_distance;
}

std::vector<StabilityRow> stability_probe(const MfgModel &model,
                                          const std::vector<StabilityPair> &pairs,
                                          const TimeGrid &grid,
                                          const PicardConfig &cfg) {
  std::vector<StabilityRow> rows;
  rows.reserve(pairs.size());
  for (const auto &pair : pairs) {
    const PicardResult a = picard_solve(model, pair.eta1, pair.kappa1, grid, cfg);
    const PicardResult b = picard_solve(model, pair.eta2, pair.kappa2, grid, cfg);
    if (!a.converged || !b.converged)
      throw NumericalError("stability probe: Picard iteration did not converge");
    StabilityRow row;
    row.input_distance = (pair.eta1.probs() - pair.eta2.probs()).norm() +
                         (pair.kappa1 - pair.kappa2).norm();
    row.u_distance = max_abs_diff(a.solution.u, b.solution.u);
    row.mu_distance = max_abs_diff(a.solution.mu, b.solution.mu);
    rows.push_back(row);
  }
  return rows;
}

void dump_trajectory(std::ostream &out, const DiscretizedSolution &sol) {
  for (std::size_t j = 0; j < sol.grid.points(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    nlohmann::json rec;
    rec["j"] = j;
    rec["t"] = sol.grid.t(j);
    rec["u"] = std::vector<double>(sol.u.row(jj).begin(), sol.u.row(jj).end());
    rec["mu"] = std::vector<double>(sol.mu.row(jj).begin(), sol.mu.row(jj).end());
    out << rec.dump() << '\n';
  }
}

} // namespace mfg
