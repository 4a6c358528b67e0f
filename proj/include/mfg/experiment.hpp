#pragma once

// Experiment configuration files: one JSON document bundling model, grid,
// solver, sampling, training, evaluation and output settings.

#include "mfg/pipeline.hpp"

#include "json.hpp"

#include <optional>
#include <string>

namespace mfg {

inline constexpr const char *kExperimentSchema = "mfgflow-experiment/1";

struct SamplingConfig {
  std::size_t n = 4000;
  std::uint64_t seed = 0;
  SampleMode mode = SampleMode::Pointwise;
};

struct EvaluationConfig {
  std::size_t pairs = 10;
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelConfig model = QuadraticConfig{};
  std::string model_file; // empty when the model is inline
  std::size_t M = 100;
  PicardConfig solver;
  SamplingConfig sampling;
  TrainConfig training;
  EvaluationConfig evaluation;
  std::string output = "out";

  TimeGrid grid() const;
  void validate() const;
};

/// Flags that take precedence over file values.
struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed; // applies to sampling and training
  std::optional<std::size_t> epochs;
  std::optional<SampleMode> mode;
};

void apply_overrides(ExperimentConfig &cfg, const Overrides &ov);

std::string to_string(nn::OptimizerKind kind);
nn::OptimizerKind optimizer_from_string(const std::string &name);
std::string to_string(nn::LossKind kind);
nn::LossKind loss_from_string(const std::string &name);
std::string to_string(BackwardMode mode);
BackwardMode backward_mode_from_string(const std::string &name);

/// `base_dir` resolves a relative "model_file".
ExperimentConfig experiment_from_json(const nlohmann::json &j, const std::string &base_dir = ".");
/// Always writes the model inline, so the result is self-contained.
nlohmann::json experiment_to_json(const ExperimentConfig &cfg);
ExperimentConfig load_experiment(const std::string &path);

} // namespace mfg
