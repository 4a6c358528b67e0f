#include "mfg/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace mfg {

namespace {

void require_state(std::size_t x, std::size_t d) {
  if (x >= d) {
    std::ostringstream msg;
    msg << "state index " << x << " out of range for d=" << d;
    throw std::out_of_range(msg.str());
  }
}

} // namespace

// ---------------------------------------------------------------- SimplexDist

bool SimplexDist::on_simplex(const Vec &v, double tol) {
  if (v.size() == 0 || !v.allFinite())
    return false;
  if (v.minCoeff() < -tol)
    return false;
  return std::abs(v.sum() - 1.0) <= tol;
}

Vec SimplexDist::repair(const Vec &v) {
  if (v.size() == 0)
    throw NumericalError("empty probability vector");
  if (!v.allFinite())
    throw NumericalError("non-finite probability vector");
  if (v.minCoeff() >= 0.0 && std::abs(v.sum() - 1.0) <= kSimplexTolerance)
    return v;
  if (!on_simplex(v, kSimplexRepairTolerance)) {
    std::ostringstream msg;
    msg << "vector is not on the probability simplex (sum=" << v.sum()
        << ", min=" << v.minCoeff() << ")";
    throw NumericalError(msg.str());
  }
  Vec clipped = v.cwiseMax(0.0);
  return clipped / clipped.sum();
}

SimplexDist::SimplexDist(Vec probs) : probs_(repair(probs)) {}

SimplexDist SimplexDist::uniform(std::size_t d) {
  if (d == 0)
    throw std::invalid_argument("uniform distribution needs d >= 1");
  return SimplexDist(Vec::Constant(static_cast<Eigen::Index>(d), 1.0 / static_cast<double>(d)));
}

SimplexDist SimplexDist::point_mass(std::size_t d, std::size_t state) {
  require_state(state, d);
  Vec v = Vec::Zero(static_cast<Eigen::Index>(d));
  v[static_cast<Eigen::Index>(state)] = 1.0;
  return SimplexDist(std::move(v));
}

// ----------------------------------------------------------------- StateSpace

StateSpace::StateSpace(std::size_t d_, std::vector<std::string> labels_)
    : d(d_), labels(std::move(labels_)) {
  if (d < 2)
    throw ConfigError("state space needs d >= 2");
  if (!labels.empty()) {
    if (labels.size() != d)
      throw ConfigError("state labels must number exactly d");
    std::set<std::string> seen(labels.begin(), labels.end());
    if (seen.size() != d)
      throw ConfigError("state labels must be distinct");
  }
}

std::size_t StateSpace::index_of(const std::string &label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it != labels.end())
    return static_cast<std::size_t>(it - labels.begin());
  try {
    std::size_t pos = 0;
    long one_based = std::stol(label, &pos);
    if (pos == label.size() && one_based >= 1 &&
        static_cast<std::size_t>(one_based) <= d)
      return static_cast<std::size_t>(one_based - 1);
  } catch (const std::exception &) {
  }
  throw std::out_of_range("unknown state label '" + label + "'");
}

std::string StateSpace::label_of(std::size_t x) const {
  require_state(x, d);
  return labels.empty() ? std::to_string(x + 1) : labels[x];
}

// ------------------------------------------------------------------- TimeGrid

TimeGrid::TimeGrid(double horizon, std::size_t steps)
    : horizon_(horizon), steps_(steps),
      dt_(steps == 0 ? 0.0 : horizon / static_cast<double>(steps)) {
  if (!std::isfinite(horizon) || horizon < 0.0)
    throw ConfigError("time horizon must be finite and non-negative");
  if (steps == 0 && horizon != 0.0)
    throw ConfigError("M = 0 is only valid for a zero horizon");
}

double TimeGrid::t(std::size_t j) const {
  if (j > steps_)
    throw std::out_of_range("grid index beyond M");
  if (j == steps_)
    return horizon_;
  return static_cast<double>(j) * horizon_ / static_cast<double>(steps_);
}

// ------------------------------------------------------------------- ParamBox

bool ParamBox::contains(const Vec &kappa, double tol) const {
  if (kappa.size() != lower.size() || !kappa.allFinite())
    return false;
  for (Eigen::Index i = 0; i < kappa.size(); ++i)
    if (kappa[i] < lower[i] - tol || kappa[i] > upper[i] + tol)
      return false;
  return true;
}

void ParamBox::validate() const {
  if (lower.size() != upper.size())
    throw ConfigError("parameter box bounds have mismatched sizes");
  for (Eigen::Index i = 0; i < lower.size(); ++i)
    if (!(lower[i] <= upper[i]))
      throw ConfigError("parameter box has lower > upper");
}

// ----------------------------------------------------------------- operations

Vec discrete_gradient(const VecRef &u_row, std::size_t x) {
  require_state(x, static_cast<std::size_t>(u_row.size()));
  const double ux = u_row[static_cast<Eigen::Index>(x)];
  Vec g = u_row.array() - ux;
  g[static_cast<Eigen::Index>(x)] = 0.0;
  return g;
}

double extended_hamiltonian(const MfgModel &model, std::size_t x,
                            const VecRef &eta, const VecRef &p) {
  if (!p.allFinite() || !eta.allFinite())
    throw NumericalError("extended Hamiltonian called with non-finite input");
  require_state(x, model.dim());
  return model.hamiltonian(x, eta, p) + model.mean_field_cost(x, eta);
}

MonotonicityReport
check_lasry_lions(const DistCost &cost,
                  const std::vector<std::pair<SimplexDist, SimplexDist>> &pairs) {
  MonotonicityReport report;
  report.entries.reserve(pairs.size());
  bool first = true;
  for (const auto &[a, b] : pairs) {
    const Vec &eta = a.probs();
    const Vec &eta_hat = b.probs();
    double sum = 0.0;
    for (Eigen::Index x = 0; x < eta.size(); ++x) {
      auto xs = static_cast<std::size_t>(x);
      sum += (cost(xs, eta) - cost(xs, eta_hat)) * (eta[x] - eta_hat[x]);
    }
    MonotonicityEntry e{sum, sum < -kMonotonicityTolerance};
    report.violations += e.violation ? 1 : 0;
    report.min_sum = first ? sum : std::min(report.min_sum, sum);
    first = false;
    report.entries.push_back(e);
  }
  return report;
}

double selector_gradient_consistency(const MfgModel &model, std::size_t x,
                                     const VecRef &eta, const VecRef &p,
                                     double h) {
  const Vec rates = model.selector(x, eta, p);
  double worst = 0.0;
  Vec shifted = p;
  for (Eigen::Index y = 0; y < p.size(); ++y) {
    if (static_cast<std::size_t>(y) == x)
      continue;
    shifted[y] = p[y] + h;
    const double up = model.hamiltonian(x, eta, shifted);
    shifted[y] = p[y] - h;
    const double down = model.hamiltonian(x, eta, shifted);
    shifted[y] = p[y];
    worst = std::max(worst, std::abs(rates[y] - (up - down) / (2.0 * h)));
  }
  return worst;
}

} // namespace mfg
