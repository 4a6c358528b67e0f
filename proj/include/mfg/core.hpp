#pragma once

// Foundational types for finite-state mean-field games.
//
// States are numbered 1..d in prose and configuration files and stored
// 0-based everywhere in code: state x in documentation is index x-1 here.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfg {

using Vec = Eigen::VectorXd;
using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecRef = Eigen::Ref<const Vec>;

// Error taxonomy. The CLI maps each family to a distinct exit code.
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class NumericalError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kSimplexTolerance = 1e-12;
inline constexpr double kSimplexRepairTolerance = 1e-9;

/// A probability vector over d states.
///
/// Construction accepts inputs within 1e-12 of the simplex as-is. Inputs
/// within 1e-9 are repaired by clipping negatives to zero and renormalizing;
/// anything further away throws NumericalError.
class SimplexDist {
public:
  explicit SimplexDist(Vec probs);

  static SimplexDist uniform(std::size_t d);
  static SimplexDist point_mass(std::size_t d, std::size_t state);

  const Vec &probs() const { return probs_; }
  std::size_t size() const { return static_cast<std::size_t>(probs_.size()); }
  double operator[](std::size_t i) const { return probs_[static_cast<Eigen::Index>(i)]; }

  /// Returns the repaired copy of `v`, or throws if it is too far from the simplex.
  static Vec repair(const Vec &v);
  static bool on_simplex(const Vec &v, double tol);

private:
  Vec probs_;
};

struct StateSpace {
  std::size_t d = 0;
  std::vector<std::string> labels;

  StateSpace(std::size_t d, std::vector<std::string> labels = {});
  /// Accepts either a 1-based numeric label ("3") or one of `labels`.
  std::size_t index_of(const std::string &label) const;
  std::string label_of(std::size_t x) const;
};

/// Uniform grid t_j = j*T/M, j = 0..M. M = 0 is the degenerate terminal-only grid.
class TimeGrid {
public:
  TimeGrid(double horizon, std::size_t steps);

  double horizon() const { return horizon_; }
  std::size_t steps() const { return steps_; }
  std::size_t points() const { return steps_ + 1; }
  double dt() const { return dt_; }
  double t(std::size_t j) const;

private:
  double horizon_;
  std::size_t steps_;
  double dt_;
};

/// Axis-aligned parameter box K in R^k.
struct ParamBox {
  Vec lower;
  Vec upper;

  std::size_t dim() const { return static_cast<std::size_t>(lower.size()); }
  bool contains(const Vec &kappa, double tol = 0.0) const;
  void validate() const;
};

/// Behavioural contract for a finite-state MFG with parametrized terminal cost.
///
/// Every method is a pure function. `eta` is passed to the Hamiltonian and the
/// rate selector so that models whose uncontrolled dynamics depend on the
/// population (e.g. infection rates) fit the same interface; separable models
/// ignore it there and use it only in the mean-field cost.
class MfgModel {
public:
  virtual ~MfgModel() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t dim() const = 0;
  virtual const StateSpace &states() const = 0;
  virtual ParamBox param_box() const = 0;
  virtual double horizon() const = 0;
  /// Closed interval that off-diagonal rates of an admissible control lie in.
  virtual std::pair<double, double> action_bounds() const = 0;

  virtual double running_cost(std::size_t x, const VecRef &rates) const = 0;
  virtual double mean_field_cost(std::size_t x, const VecRef &eta) const = 0;
  virtual double terminal_cost(const VecRef &kappa, std::size_t x,
                               const VecRef &eta) const = 0;

  /// H(x, eta, p) = min over admissible controls of f(x, a) + sum_{y != x} a_y p_y.
  virtual double hamiltonian(std::size_t x, const VecRef &eta,
                             const VecRef &p) const = 0;
  /// Minimizing rate row; entry x is minus the sum of the others.
  virtual Vec selector(std::size_t x, const VecRef &eta, const VecRef &p) const = 0;

  /// Upper bound on the total exit rate out of any state, for the CFL check.
  virtual double max_exit_rate() const = 0;

  /// True when the selector is locally constant or smooth in a box of radius h
  /// around p, i.e. central differences of H in p are meaningful.
  virtual bool smooth_at(std::size_t x, const VecRef &eta, const VecRef &p,
                         double h) const = 0;
};

/// (u(y) - u(x))_y; entry x is zero.
Vec discrete_gradient(const VecRef &u_row, std::size_t x);

/// H(x, eta, p) + F(x, eta).
double extended_hamiltonian(const MfgModel &model, std::size_t x,
                            const VecRef &eta, const VecRef &p);

using DistCost = std::function<double(std::size_t, const Vec &)>;

struct MonotonicityEntry {
  double sum = 0.0;
  bool violation = false;
};

struct MonotonicityReport {
  std::vector<MonotonicityEntry> entries;
  std::size_t violations = 0;
  double min_sum = 0.0;
};

inline constexpr double kMonotonicityTolerance = 1e-10;

/// Lasry-Lions check: sum_x (phi(x, eta) - phi(x, eta_hat)) (eta_x - eta_hat_x)
/// per pair, flagged when below -1e-10.
MonotonicityReport
check_lasry_lions(const DistCost &cost,
                  const std::vector<std::pair<SimplexDist, SimplexDist>> &pairs);

/// Max over y != x of |selector_y - central difference of H in p_y|.
double selector_gradient_consistency(const MfgModel &model, std::size_t x,
                                     const VecRef &eta, const VecRef &p,
                                     double h);

} // namespace mfg
