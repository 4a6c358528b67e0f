#include "mfg/models.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace mfg {

using nlohmann::json;

namespace {

void require_state(std::size_t x, std::size_t d) {
  if (x >= d)
    throw std::out_of_range("state index " + std::to_string(x) +
                            " out of range for d=" + std::to_string(d));
}

void require_finite_nonneg(double v, const char *name) {
  if (!std::isfinite(v) || v < 0.0)
    throw ConfigError(std::string(name) + " must be finite and >= 0");
}

} // namespace

// ------------------------------------------------------------------ quadratic

void QuadraticConfig::validate() const {
  if (d < 2)
    throw ConfigError("quadratic model needs d >= 2");
  if (!(b > 0.0) || !std::isfinite(b))
    throw ConfigError("quadratic model needs b > 0");
  if (!(action_lower <= action_upper) || action_lower < 0.0 ||
      !std::isfinite(action_upper))
    throw ConfigError("quadratic action bounds must satisfy 0 <= a_l <= a_u");
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw ConfigError("horizon T must be > 0");
  if (!std::isfinite(mean_field_weight) || !std::isfinite(terminal_crowd_weight))
    throw ConfigError("cost weights must be finite");
  if (!(kappa_lower <= kappa_upper))
    throw ConfigError("kappa box has lower > upper");
}

double quadratic_running_cost(const QuadraticConfig &cfg, std::size_t x,
                              const VecRef &rates) {
  require_state(x, static_cast<std::size_t>(rates.size()));
  double total = 0.0;
  for (Eigen::Index y = 0; y < rates.size(); ++y) {
    if (static_cast<std::size_t>(y) == x)
      continue;
    const double a = rates[y];
    if (!(a >= cfg.action_lower && a <= cfg.action_upper))
      throw std::domain_error("rate " + std::to_string(a) +
                              " outside the admissible action interval");
    const double dev = a - kQuadraticCenterRate;
    total += dev * dev;
  }
  return cfg.b * total;
}

Vec quadratic_selector(const QuadraticConfig &cfg, std::size_t x, const VecRef &p) {
  require_state(x, static_cast<std::size_t>(p.size()));
  Vec a(p.size());
  double row = 0.0;
  for (Eigen::Index y = 0; y < p.size(); ++y) {
    if (static_cast<std::size_t>(y) == x)
      continue;
    a[y] = std::clamp(kQuadraticCenterRate - p[y] / (2.0 * cfg.b),
                      cfg.action_lower, cfg.action_upper);
    row += a[y];
  }
  a[static_cast<Eigen::Index>(x)] = -row;
  return a;
}

double quadratic_terminal(const QuadraticConfig &cfg, const VecRef &kappa,
                          std::size_t x, const VecRef &eta) {
  require_state(x, static_cast<std::size_t>(eta.size()));
  if (kappa.size() != eta.size())
    throw std::invalid_argument("kappa must have one entry per state");
  for (Eigen::Index i = 0; i < kappa.size(); ++i)
    if (!(kappa[i] >= cfg.kappa_lower && kappa[i] <= cfg.kappa_upper))
      throw std::domain_error("kappa outside its parameter box");
  const auto xi = static_cast<Eigen::Index>(x);
  return kappa[xi] + cfg.terminal_crowd_weight * eta[xi];
}

QuadraticModel::QuadraticModel(QuadraticConfig cfg)
    : cfg_((cfg.validate(), cfg)), states_(cfg.d) {}

ParamBox QuadraticModel::param_box() const {
  const auto d = static_cast<Eigen::Index>(cfg_.d);
  return {Vec::Constant(d, cfg_.kappa_lower), Vec::Constant(d, cfg_.kappa_upper)};
}

double QuadraticModel::running_cost(std::size_t x, const VecRef &rates) const {
  return quadratic_running_cost(cfg_, x, rates);
}

double QuadraticModel::mean_field_cost(std::size_t x, const VecRef &eta) const {
  require_state(x, cfg_.d);
  return cfg_.mean_field_weight * eta[static_cast<Eigen::Index>(x)];
}

double QuadraticModel::terminal_cost(const VecRef &kappa, std::size_t x,
                                     const VecRef &eta) const {
  return quadratic_terminal(cfg_, kappa, x, eta);
}

double QuadraticModel::hamiltonian(std::size_t x, const VecRef &,
                                   const VecRef &p) const {
  require_state(x, cfg_.d);
  double h = 0.0;
  for (Eigen::Index y = 0; y < p.size(); ++y) {
    if (static_cast<std::size_t>(y) == x)
      continue;
    const double a = std::clamp(kQuadraticCenterRate - p[y] / (2.0 * cfg_.b),
                                cfg_.action_lower, cfg_.action_upper);
    const double dev = a - kQuadraticCenterRate;
    h += cfg_.b * dev * dev + a * p[y];
  }
  return h;
}

Vec QuadraticModel::selector(std::size_t x, const VecRef &, const VecRef &p) const {
  return quadratic_selector(cfg_, x, p);
}

double QuadraticModel::max_exit_rate() const {
  return static_cast<double>(cfg_.d - 1) * cfg_.action_upper;
}

bool QuadraticModel::smooth_at(std::size_t x, const VecRef &, const VecRef &p,
                               double h) const {
  // The clamp breakpoints sit at p_y = 2b(2 - a_l) and p_y = 2b(2 - a_u).
  const double lo_kink = 2.0 * cfg_.b * (kQuadraticCenterRate - cfg_.action_lower);
  const double hi_kink = 2.0 * cfg_.b * (kQuadraticCenterRate - cfg_.action_upper);
  for (Eigen::Index y = 0; y < p.size(); ++y) {
    if (static_cast<std::size_t>(y) == x)
      continue;
    if (std::abs(p[y] - lo_kink) <= h || std::abs(p[y] - hi_kink) <= h)
      return false;
  }
  return true;
}

// -------------------------------------------------------------- cybersecurity

void CyberConfig::validate() const {
  require_finite_nonneg(k_D, "k_D");
  require_finite_nonneg(k_I, "k_I");
  require_finite_nonneg(rho, "rho");
  require_finite_nonneg(rates.hacker_intensity, "hacker_intensity");
  require_finite_nonneg(rates.hacker_success_D, "hacker_success_D");
  require_finite_nonneg(rates.hacker_success_U, "hacker_success_U");
  require_finite_nonneg(rates.infect_D_by_DI, "infect_D_by_DI");
  require_finite_nonneg(rates.infect_D_by_UI, "infect_D_by_UI");
  require_finite_nonneg(rates.infect_U_by_DI, "infect_U_by_DI");
  require_finite_nonneg(rates.infect_U_by_UI, "infect_U_by_UI");
  require_finite_nonneg(rates.recovery_D, "recovery_D");
  require_finite_nonneg(rates.recovery_U, "recovery_U");
  if (!(kappa_max > 0.0) || !std::isfinite(kappa_max))
    throw ConfigError("kappa_max must be > 0");
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw ConfigError("horizon T must be > 0");
}

double cyber_running_cost(const CyberConfig &cfg, std::size_t x) {
  switch (x) {
  case DS: return cfg.k_D;
  case DI: return cfg.k_D + cfg.k_I;
  case US: return 0.0;
  case UI: return cfg.k_I;
  default: throw std::out_of_range("cyber state index must be in 0..3");
  }
}

double cyber_terminal(const CyberConfig &cfg, double kappa, std::size_t x) {
  if (!(kappa >= 0.0 && kappa <= cfg.kappa_max))
    throw std::domain_error("kappa outside [0, kappa_max]");
  require_state(x, 4);
  return (x == DI || x == UI) ? kappa : 0.0;
}

Vec cyber_rate_row(const CyberConfig &cfg, std::size_t x, int a, const VecRef &eta) {
  require_state(x, 4);
  if (eta.size() != 4)
    throw std::invalid_argument("cyber model distributions have 4 entries");
  if (a != 0 && a != 1)
    throw std::invalid_argument("cyber action must be 0 or 1");
  const CyberRates &r = cfg.rates;
  const double sw = cfg.rho * a;
  Vec row = Vec::Zero(4);
  switch (x) {
  case DS:
    row[DI] = r.hacker_intensity * r.hacker_success_D + r.infect_D_by_DI * eta[DI] +
              r.infect_D_by_UI * eta[UI];
    row[US] = sw;
    break;
  case DI:
    row[DS] = r.recovery_D;
    row[UI] = sw;
    break;
  case US:
    row[UI] = r.hacker_intensity * r.hacker_success_U + r.infect_U_by_DI * eta[DI] +
              r.infect_U_by_UI * eta[UI];
    row[DS] = sw;
    break;
  case UI:
    row[US] = r.recovery_U;
    row[DI] = sw;
    break;
  }
  // Infection terms are nonnegative for eta on the simplex; clamp the
  // round-off that a slightly negative eta entry could introduce.
  row = row.cwiseMax(0.0);
  row[static_cast<Eigen::Index>(x)] = -row.sum();
  return row;
}

CyberHamiltonian cyber_hamiltonian(const CyberConfig &cfg, std::size_t x,
                                   const VecRef &eta, const VecRef &p) {
  const double f = cyber_running_cost(cfg, x);
  double values[2];
  for (int a = 0; a < 2; ++a) {
    const Vec row = cyber_rate_row(cfg, x, a, eta);
    double v = f;
    for (Eigen::Index y = 0; y < 4; ++y)
      if (static_cast<std::size_t>(y) != x)
        v += row[y] * p[y];
    values[a] = v;
  }
  return values[1] < values[0] ? CyberHamiltonian{values[1], 1}
                               : CyberHamiltonian{values[0], 0};
}

CyberModel::CyberModel(CyberConfig cfg)
    : cfg_((cfg.validate(), cfg)), states_(4, {"DS", "DI", "US", "UI"}) {}

ParamBox CyberModel::param_box() const {
  return {Vec::Zero(1), Vec::Constant(1, cfg_.kappa_max)};
}

double CyberModel::running_cost(std::size_t x, const VecRef &) const {
  return cyber_running_cost(cfg_, x);
}

double CyberModel::mean_field_cost(std::size_t x, const VecRef &) const {
  require_state(x, 4);
  return 0.0;
}

double CyberModel::terminal_cost(const VecRef &kappa, std::size_t x,
                                 const VecRef &) const {
  if (kappa.size() != 1)
    throw std::invalid_argument("cyber model takes a scalar kappa");
  return cyber_terminal(cfg_, kappa[0], x);
}

double CyberModel::hamiltonian(std::size_t x, const VecRef &eta,
                               const VecRef &p) const {
  return cyber_hamiltonian(cfg_, x, eta, p).value;
}

Vec CyberModel::selector(std::size_t x, const VecRef &eta, const VecRef &p) const {
  return cyber_rate_row(cfg_, x, cyber_hamiltonian(cfg_, x, eta, p).action, eta);
}

double CyberModel::max_exit_rate() const {
  const CyberRates &r = cfg_.rates;
  const double infect_D = r.hacker_intensity * r.hacker_success_D +
                          std::max(r.infect_D_by_DI, r.infect_D_by_UI);
  const double infect_U = r.hacker_intensity * r.hacker_success_U +
                          std::max(r.infect_U_by_DI, r.infect_U_by_UI);
  return cfg_.rho + std::max({infect_D, infect_U, r.recovery_D, r.recovery_U});
}

bool CyberModel::smooth_at(std::size_t x, const VecRef &, const VecRef &p,
                           double h) const {
  // The two candidate values differ by rho * p_partner, so the minimiser can
  // only flip when p_partner crosses zero.
  const std::size_t partner = (x + 2) % 4;
  return cfg_.rho == 0.0 || std::abs(p[static_cast<Eigen::Index>(partner)]) > 2.0 * h;
}

// ------------------------------------------------------------- configuration

namespace {

template <class T>
void read_field(const json &j, const char *key, T &out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception &e) {
      throw ConfigError(std::string("model config key '") + key + "': " + e.what());
    }
  }
}

void reject_unknown(const json &j, const std::set<std::string> &known,
                    const std::string &where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

} // namespace

json model_config_to_json(const ModelConfig &cfg) {
  return std::visit(
      [](const auto &c) -> json {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, QuadraticConfig>) {
          return json{{"schema", kModelSchema},
                      {"kind", "quadratic"},
                      {"d", c.d},
                      {"b", c.b},
                      {"action_lower", c.action_lower},
                      {"action_upper", c.action_upper},
                      {"horizon", c.horizon},
                      {"mean_field_weight", c.mean_field_weight},
                      {"terminal_crowd_weight", c.terminal_crowd_weight},
                      {"kappa_lower", c.kappa_lower},
                      {"kappa_upper", c.kappa_upper}};
        } else {
          const CyberRates &r = c.rates;
          return json{{"schema", kModelSchema},
                      {"kind", "cyber"},
                      {"k_D", c.k_D},
                      {"k_I", c.k_I},
                      {"rho", c.rho},
                      {"kappa_max", c.kappa_max},
                      {"horizon", c.horizon},
                      {"rates",
                       {{"hacker_intensity", r.hacker_intensity},
                        {"hacker_success_D", r.hacker_success_D},
                        {"hacker_success_U", r.hacker_success_U},
                        {"infect_D_by_DI", r.infect_D_by_DI},
                        {"infect_D_by_UI", r.infect_D_by_UI},
                        {"infect_U_by_DI", r.infect_U_by_DI},
                        {"infect_U_by_UI", r.infect_U_by_UI},
                        {"recovery_D", r.recovery_D},
                        {"recovery_U", r.recovery_U}}}};
        }
      },
      cfg);
}

ModelConfig model_config_from_json(const json &j) {
  if (!j.is_object())
    throw ConfigError("model config must be an object");
  if (auto it = j.find("schema"); it != j.end() && *it != kModelSchema)
    throw ConfigError("unsupported model schema " + it->dump());
  const auto kind_it = j.find("kind");
  if (kind_it == j.end() || !kind_it->is_string())
    throw ConfigError("model config needs a string 'kind'");
  const std::string kind = kind_it->get<std::string>();
  if (kind == "quadratic") {
    reject_unknown(j,
                   {"schema", "kind", "d", "b", "action_lower", "action_upper",
                    "horizon", "mean_field_weight", "terminal_crowd_weight",
                    "kappa_lower", "kappa_upper"},
                   "quadratic model config");
    QuadraticConfig c;
    read_field(j, "d", c.d);
    read_field(j, "b", c.b);
    read_field(j, "action_lower", c.action_lower);
    read_field(j, "action_upper", c.action_upper);
    read_field(j, "horizon", c.horizon);
    read_field(j, "mean_field_weight", c.mean_field_weight);
    read_field(j, "terminal_crowd_weight", c.terminal_crowd_weight);
    read_field(j, "kappa_lower", c.kappa_lower);
    read_field(j, "kappa_upper", c.kappa_upper);
    c.validate();
    return c;
  }
  if (kind == "cyber") {
    reject_unknown(j, {"schema", "kind", "k_D", "k_I", "rho", "kappa_max", "horizon", "rates"},
                   "cyber model config");
    CyberConfig c;
    read_field(j, "k_D", c.k_D);
    read_field(j, "k_I", c.k_I);
    read_field(j, "rho", c.rho);
    read_field(j, "kappa_max", c.kappa_max);
    read_field(j, "horizon", c.horizon);
    if (auto it = j.find("rates"); it != j.end()) {
      const json &r = *it;
      if (!r.is_object())
        throw ConfigError("cyber 'rates' must be an object");
      reject_unknown(r,
                     {"hacker_intensity", "hacker_success_D", "hacker_success_U",
                      "infect_D_by_DI", "infect_D_by_UI", "infect_U_by_DI",
                      "infect_U_by_UI", "recovery_D", "recovery_U"},
                     "cyber rates");
      read_field(r, "hacker_intensity", c.rates.hacker_intensity);
      read_field(r, "hacker_success_D", c.rates.hacker_success_D);
      read_field(r, "hacker_success_U", c.rates.hacker_success_U);
      read_field(r, "infect_D_by_DI", c.rates.infect_D_by_DI);
      read_field(r, "infect_D_by_UI", c.rates.infect_D_by_UI);
      read_field(r, "infect_U_by_DI", c.rates.infect_U_by_DI);
      read_field(r, "infect_U_by_UI", c.rates.infect_U_by_UI);
      read_field(r, "recovery_D", c.rates.recovery_D);
      read_field(r, "recovery_U", c.rates.recovery_U);
    }
    c.validate();
    return c;
  }
  throw ConfigError("unknown model kind '" + kind + "'");
}

std::string serialize_model_config(const ModelConfig &cfg) {
  return model_config_to_json(cfg).dump(2) + "\n";
}

ModelConfig parse_model_config(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  return model_config_from_json(j);
}

ModelConfig load_model_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open model config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model_config(buf.str());
}

std::string model_digest(const ModelConfig &cfg) {
  const std::string canonical = model_config_to_json(cfg).dump();
  unsigned char hash[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char *>(canonical.data()), canonical.size(),
         hash);
  std::ostringstream hex;
  for (unsigned char c : hash)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(c);
  return hex.str();
}

std::shared_ptr<const MfgModel> make_model(const ModelConfig &cfg) {
  return std::visit(
      [](const auto &c) -> std::shared_ptr<const MfgModel> {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, QuadraticConfig>)
          return std::make_shared<QuadraticModel>(c);
        else
          return std::make_shared<CyberModel>(c);
      },
      cfg);
}

} // namespace mfg
