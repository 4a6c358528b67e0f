#pragma once

// Sampling, label generation, flow-map training and evaluation.

#include "mfg/checkpoint.hpp"
#include "mfg/models.hpp"
#include "mfg/nn.hpp"
#include "mfg/solver.hpp"

#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mfg {

enum class SampleMode { Pointwise, Augmented };

std::string to_string(SampleMode mode);
SampleMode sample_mode_from_string(const std::string &name);

/// Pointwise: x = (t_j, eta, kappa), y = u(t_j) in R^d with j drawn from {1..M}.
/// Augmented: x = (eta, kappa), y = (u(t_0), ..., u(t_M)) flattened row by row.
struct SampleRecord {
  SampleMode mode = SampleMode::Pointwise;
  SimplexDist eta = SimplexDist::uniform(1);
  Vec kappa;
  std::size_t j = 0;
  double t = 0.0;
  Vec y;
};

inline constexpr const char *kDatasetSchema = "mfgflow-dataset/1";

struct DatasetHeader {
  std::string schema = kDatasetSchema;
  std::string model_digest;
  std::string model_kind;
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t M = 0;
  double T = 0.0;
  std::uint64_t seed = 0;
  SampleMode mode = SampleMode::Pointwise;
  std::size_t n = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<SampleRecord> records;
};

struct GenerationReportEntry {
  std::size_t index = 0;
  std::size_t iterations = 0;
  double increment = 0.0; // final max(|du|, |dmu|) of the accepted solve
  double residual = 0.0;  // discretized-system residual of the accepted solve
  std::size_t retries = 0;
};

struct GeneratedDataset {
  Dataset dataset;
  std::vector<GenerationReportEntry> report;
};

inline constexpr std::size_t kMaxSampleRetries = 10;

/// Flat Dirichlet draw via normalized unit exponentials.
SimplexDist sample_simplex(nn::Rng &rng, std::size_t d);
/// Independent uniform draw per coordinate of the box.
Vec sample_kappa(nn::Rng &rng, const ParamBox &box);

/// Deterministic RNG stream for a (seed, sample index, attempt) triple.
nn::Rng sample_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t attempt);

struct GenerationOptions {
  std::size_t n = 0;
  SampleMode mode = SampleMode::Pointwise;
  std::uint64_t seed = 0;
  PicardConfig solver;
  std::size_t threads = 1;
};

GeneratedDataset generate_dataset(const ModelConfig &model_cfg, const TimeGrid &grid,
                                  const GenerationOptions &opts);

void write_dataset(std::ostream &out, const Dataset &ds);
void write_dataset(const std::string &path, const Dataset &ds);
/// Throws ConfigError when `expected_digest` is given and differs from the header.
Dataset read_dataset(std::istream &in,
                     const std::optional<std::string> &expected_digest = std::nullopt);
Dataset read_dataset(const std::string &path,
                     const std::optional<std::string> &expected_digest = std::nullopt);

void write_report(const std::string &path,
                  const std::vector<GenerationReportEntry> &report);

// --------------------------------------------------------------- training

struct TrainConfig {
  std::size_t epochs = 2000;
  std::size_t batch_size = 64;
  std::size_t width = 64;
  std::size_t depth = 4;
  double lr0 = 8e-4;
  nn::OptimizerKind optimizer = nn::OptimizerKind::AdamW;
  nn::LossKind loss = nn::LossKind::SmoothL1;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  std::size_t test_every = 25;
  std::size_t patience = 0; // epochs without test improvement; 0 disables

  void validate() const;
};

/// Network inputs: time rescaled to t/T, eta as is, kappa mapped affinely
/// from its box onto [0, 1]^k (identity for the unit box).
struct FeatureMap {
  SampleMode mode = SampleMode::Pointwise;
  std::size_t d = 0;
  std::size_t M = 0;
  double T = 1.0;
  ParamBox kappa_box;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  Vec features(double t, const Vec &eta, const Vec &kappa) const;
};

FeatureMap feature_map_for(const Dataset &ds, const ParamBox &box);

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Pure function of (seed, n).
DataSplit split_indices(std::size_t n, double test_fraction, std::uint64_t seed);

struct EpochLog {
  std::size_t epoch = 0; // 1-based count of completed epochs
  double lr = 0.0;
  double train_loss = 0.0;
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double weight_bound = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> history;
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double final_test_loss = std::numeric_limits<double>::quiet_NaN();
  bool stopped_early = false;
};

/// Runs epochs [resume->epoch, cfg.epochs) of shuffled mini-batch training
/// under a cosine schedule. `box` is the model parameter box used for
/// feature scaling.
TrainResult train_flow_map(const Dataset &ds, const ParamBox &box,
                           const TrainConfig &cfg,
                           const std::optional<Checkpoint> &resume = std::nullopt);

void write_loss_history(const std::string &path, const std::vector<EpochLog> &history);

// ------------------------------------------------------------- evaluation

/// Something that maps (eta, kappa) to a value trajectory on the grid.
class FlowMapPredictor {
public:
  virtual ~FlowMapPredictor() = default;
  virtual RowMajorMatrix predict(const SimplexDist &eta, const Vec &kappa,
                                 const TimeGrid &grid) const = 0;
};

class NetworkPredictor final : public FlowMapPredictor {
public:
  NetworkPredictor(nn::MlpParams params, FeatureMap features);
  /// Validates the checkpoint metadata against the model and grid.
  static NetworkPredictor from_checkpoint(const Checkpoint &ckpt,
                                          const ModelConfig &model_cfg,
                                          const TimeGrid &grid);
  RowMajorMatrix predict(const SimplexDist &eta, const Vec &kappa,
                         const TimeGrid &grid) const override;
  const nn::MlpParams &params() const { return params_; }

private:
  nn::MlpParams params_;
  FeatureMap features_;
};

/// The Picard solver itself; its errors against the solver are zero.
class SolverOracle final : public FlowMapPredictor {
public:
  SolverOracle(std::shared_ptr<const MfgModel> model, PicardConfig cfg);
  RowMajorMatrix predict(const SimplexDist &eta, const Vec &kappa,
                         const TimeGrid &grid) const override;

private:
  std::shared_ptr<const MfgModel> model_;
  PicardConfig cfg_;
};

struct EvalPair {
  SimplexDist eta = SimplexDist::uniform(1);
  Vec kappa;
};

std::vector<EvalPair> sample_eval_pairs(const MfgModel &model, std::size_t count,
                                        std::uint64_t seed);

struct PairEvaluation {
  std::size_t index = 0;
  EvalPair pair;
  RowMajorMatrix u_true;
  RowMajorMatrix u_pred;
  RowMajorMatrix mu_true;
  RowMajorMatrix mu_hat; // only filled by evaluate_reconstruction
  Vec error_per_time;    // max over states of |u - u_pred| at each t_j
  Vec error_per_state;   // max over time
  double sup_error = 0.0;
  double mu_sup_error = 0.0;
};

struct EvalReport {
  std::vector<PairEvaluation> pairs;
  std::vector<std::size_t> skipped; // pairs whose reference solve failed
  double mean_sup_error = 0.0;
  double max_sup_error = 0.0;
  double mean_mu_error = 0.0;
  double max_mu_error = 0.0;
};

EvalReport evaluate_flow_map(const FlowMapPredictor &predictor, const MfgModel &model,
                             const TimeGrid &grid, const std::vector<EvalPair> &pairs,
                             const PicardConfig &cfg, std::size_t threads = 1);

EvalReport evaluate_reconstruction(const FlowMapPredictor &predictor,
                                   const MfgModel &model, const TimeGrid &grid,
                                   const std::vector<EvalPair> &pairs,
                                   const PicardConfig &cfg, std::size_t threads = 1);

// ------------------------------------------------------------------ sweep

struct SweepRow {
  std::size_t width = 0;
  std::size_t trials = 0;
  double mean_train = 0.0;
  double std_train = 0.0;
  double mean_test = 0.0;
  double std_test = 0.0;
};

struct SweepRun {
  std::size_t width = 0;
  std::size_t trial = 0;
  std::vector<EpochLog> history;
  double final_train = 0.0;
  double final_test = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepRun> runs;
};

/// Trial t trains with seed base.seed + t; widths share seeds.
SweepResult width_sweep(const Dataset &ds, const ParamBox &box, const TrainConfig &base,
                        const std::vector<std::size_t> &widths, std::size_t trials);

// ------------------------------------------------------------ threading

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Exceptions are
/// rethrown for the lowest failing index.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)> &fn);

} // namespace mfg
