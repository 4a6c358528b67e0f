#pragma once

// The two benchmark games: the d-state quadratic game and the 4-state
// cybersecurity game.

#include "mfg/core.hpp"

#include "json.hpp"

#include <memory>
#include <string>
#include <variant>

namespace mfg {

// ------------------------------------------------------------------ quadratic

/// f(x, a) = b * sum_{y != x} (a_y - 2)^2, F(x, eta) = w_F * eta_x,
/// g_kappa(x, eta) = kappa_x + w_g * eta_x with kappa in [kappa_lower, kappa_upper]^d.
///
/// The standard benchmark is w_F = w_g = 1. Setting both to zero (and kappa = 0)
/// switches off every cost except the running one.
struct QuadraticConfig {
  std::size_t d = 3;
  double b = 4.0;
  double action_lower = 1.0;
  double action_upper = 3.0;
  double horizon = 1.0;
  double mean_field_weight = 1.0;
  double terminal_crowd_weight = 1.0;
  double kappa_lower = 0.0;
  double kappa_upper = 1.0;

  void validate() const;
  bool operator==(const QuadraticConfig &) const = default;
};

inline constexpr double kQuadraticCenterRate = 2.0;

double quadratic_running_cost(const QuadraticConfig &cfg, std::size_t x,
                              const VecRef &rates);
/// Off-diagonal a*_y = clamp(2 - p_y / (2b), a_l, a_u); diagonal = -row sum.
Vec quadratic_selector(const QuadraticConfig &cfg, std::size_t x, const VecRef &p);
double quadratic_terminal(const QuadraticConfig &cfg, const VecRef &kappa,
                          std::size_t x, const VecRef &eta);

class QuadraticModel final : public MfgModel {
public:
  explicit QuadraticModel(QuadraticConfig cfg);

  const QuadraticConfig &config() const { return cfg_; }

  std::string kind() const override { return "quadratic"; }
  std::size_t dim() const override { return cfg_.d; }
  const StateSpace &states() const override { return states_; }
  ParamBox param_box() const override;
  double horizon() const override { return cfg_.horizon; }
  std::pair<double, double> action_bounds() const override {
    return {cfg_.action_lower, cfg_.action_upper};
  }

  double running_cost(std::size_t x, const VecRef &rates) const override;
  double mean_field_cost(std::size_t x, const VecRef &eta) const override;
  double terminal_cost(const VecRef &kappa, std::size_t x,
                       const VecRef &eta) const override;
  double hamiltonian(std::size_t x, const VecRef &eta,
                     const VecRef &p) const override;
  Vec selector(std::size_t x, const VecRef &eta, const VecRef &p) const override;
  double max_exit_rate() const override;
  bool smooth_at(std::size_t x, const VecRef &eta, const VecRef &p,
                 double h) const override;

private:
  QuadraticConfig cfg_;
  StateSpace states_;
};

// -------------------------------------------------------------- cybersecurity

/// Uncontrolled intensities of the cybersecurity game.
///
/// A susceptible computer is infected by the hacker at rate
/// `hacker_intensity * hacker_success_{D,U}` and by infected peers at rates
/// `infect_{D,U}_by_{DI,UI} * eta(DI|UI)`. Infected computers recover at
/// `recovery_{D,U}`.
struct CyberRates {
  double hacker_intensity = 0.2;
  double hacker_success_D = 0.3;
  double hacker_success_U = 0.4;
  double infect_D_by_DI = 0.3;
  double infect_D_by_UI = 0.3;
  double infect_U_by_DI = 0.4;
  double infect_U_by_UI = 0.4;
  double recovery_D = 0.5;
  double recovery_U = 0.4;

  bool operator==(const CyberRates &) const = default;
};

struct CyberConfig {
  double k_D = 0.3;
  double k_I = 0.5;
  double rho = 0.8;
  double kappa_max = 10.0;
  double horizon = 10.0;
  CyberRates rates;

  void validate() const;
  bool operator==(const CyberConfig &) const = default;
};

/// Fixed state order DS, DI, US, UI.
enum CyberState : std::size_t { DS = 0, DI = 1, US = 2, UI = 3 };

double cyber_running_cost(const CyberConfig &cfg, std::size_t x);
double cyber_terminal(const CyberConfig &cfg, double kappa, std::size_t x);
/// Rate row out of `x` under switch decision `a` in {0, 1}.
Vec cyber_rate_row(const CyberConfig &cfg, std::size_t x, int a, const VecRef &eta);

struct CyberHamiltonian {
  double value = 0.0;
  int action = 0;
};
/// Exhaustive minimisation over a in {0, 1}; ties go to a = 0.
CyberHamiltonian cyber_hamiltonian(const CyberConfig &cfg, std::size_t x,
                                   const VecRef &eta, const VecRef &p);

class CyberModel final : public MfgModel {
public:
  explicit CyberModel(CyberConfig cfg);

  const CyberConfig &config() const { return cfg_; }

  std::string kind() const override { return "cyber"; }
  std::size_t dim() const override { return 4; }
  const StateSpace &states() const override { return states_; }
  ParamBox param_box() const override;
  double horizon() const override { return cfg_.horizon; }
  std::pair<double, double> action_bounds() const override {
    return {0.0, max_exit_rate()};
  }

  double running_cost(std::size_t x, const VecRef &rates) const override;
  double mean_field_cost(std::size_t x, const VecRef &eta) const override;
  double terminal_cost(const VecRef &kappa, std::size_t x,
                       const VecRef &eta) const override;
  double hamiltonian(std::size_t x, const VecRef &eta,
                     const VecRef &p) const override;
  Vec selector(std::size_t x, const VecRef &eta, const VecRef &p) const override;
  double max_exit_rate() const override;
  bool smooth_at(std::size_t x, const VecRef &eta, const VecRef &p,
                 double h) const override;

private:
  CyberConfig cfg_;
  StateSpace states_;
};

// ------------------------------------------------------------- configuration

using ModelConfig = std::variant<QuadraticConfig, CyberConfig>;

inline constexpr const char *kModelSchema = "mfg-model/1";

nlohmann::json model_config_to_json(const ModelConfig &cfg);
ModelConfig model_config_from_json(const nlohmann::json &j);

/// Canonical text form; parse(serialize(c)) == c bit for bit.
std::string serialize_model_config(const ModelConfig &cfg);
ModelConfig parse_model_config(const std::string &text);
ModelConfig load_model_config(const std::string &path);

/// Hex SHA-256 of the canonical serialization.
std::string model_digest(const ModelConfig &cfg);

std::shared_ptr<const MfgModel> make_model(const ModelConfig &cfg);

} // namespace mfg
