#include "mfg/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace mfg {

using nlohmann::json;
namespace fs = std::filesystem;

TimeGrid ExperimentConfig::grid() const {
  return TimeGrid(make_model(model)->horizon(), M);
}

void ExperimentConfig::validate() const {
  std::visit([](const auto &m) { m.validate(); }, model);
  if (M == 0)
    throw ConfigError("grid.M must be positive");
  solver.validate();
  if (sampling.n == 0)
    throw ConfigError("sampling.n must be positive");
  training.validate();
  if (training.batch_size > sampling.n)
    throw ConfigError("training.batch_size exceeds sampling.n");
  if (output.empty())
    throw ConfigError("output directory must not be empty");
}

void apply_overrides(ExperimentConfig &cfg, const Overrides &ov) {
  if (ov.out)
    cfg.output = *ov.out;
  if (ov.seed) {
    cfg.sampling.seed = *ov.seed;
    cfg.training.seed = *ov.seed;
  }
  if (ov.epochs)
    cfg.training.epochs = *ov.epochs;
  if (ov.mode)
    cfg.sampling.mode = *ov.mode;
}

std::string to_string(nn::OptimizerKind kind) {
  switch (kind) {
  case nn::OptimizerKind::SGD:
    return "sgd";
  case nn::OptimizerKind::Adam:
    return "adam";
  case nn::OptimizerKind::AdamW:
    return "adamw";
  }
  return "?";
}

nn::OptimizerKind optimizer_from_string(const std::string &name) {
  if (name == "sgd")
    return nn::OptimizerKind::SGD;
  if (name == "adam")
    return nn::OptimizerKind::Adam;
  if (name == "adamw")
    return nn::OptimizerKind::AdamW;
  throw ConfigError("unknown optimizer '" + name + "' (sgd, adam, adamw)");
}

std::string to_string(nn::LossKind kind) {
  return kind == nn::LossKind::L2 ? "l2" : "smooth_l1";
}

nn::LossKind loss_from_string(const std::string &name) {
  if (name == "l2")
    return nn::LossKind::L2;
  if (name == "smooth_l1")
    return nn::LossKind::SmoothL1;
  throw ConfigError("unknown loss '" + name + "' (l2, smooth_l1)");
}

std::string to_string(BackwardMode mode) {
  return mode == BackwardMode::Explicit ? "explicit" : "implicit";
}

BackwardMode backward_mode_from_string(const std::string &name) {
  if (name == "explicit")
    return BackwardMode::Explicit;
  if (name == "implicit")
    return BackwardMode::Implicit;
  throw ConfigError("unknown backward mode '" + name + "' (explicit, implicit)");
}

namespace {

const json &section(const json &j, const char *key, const std::set<std::string> &known) {
  static const json empty = json::object();
  auto it = j.find(key);
  if (it == j.end())
    return empty;
  if (!it->is_object())
    throw ConfigError(std::string("config section '") + key + "' must be an object");
  for (auto k = it->begin(); k != it->end(); ++k)
    if (!known.count(k.key()))
      throw ConfigError("unknown key '" + k.key() + "' in section '" + key + "'");
  return *it;
}

template <class T> void read(const json &j, const char *key, T &out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception &e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

} // namespace

ExperimentConfig experiment_from_json(const json &j, const std::string &base_dir) {
  if (!j.is_object())
    throw ConfigError("experiment config must be a JSON object");
  static const std::set<std::string> top{"schema",   "name",     "model",      "model_file",
                                         "grid",     "solver",   "sampling",   "training",
                                         "evaluation", "output"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!top.count(it.key()))
      throw ConfigError("unknown top-level key '" + it.key() + "'");
  if (auto it = j.find("schema"); it != j.end() && *it != kExperimentSchema)
    throw ConfigError("unsupported experiment schema " + it->dump());

  ExperimentConfig cfg;
  read(j, "name", cfg.name);
  read(j, "output", cfg.output);

  const bool inline_model = j.contains("model");
  const bool file_model = j.contains("model_file");
  if (inline_model == file_model)
    throw ConfigError("experiment config needs exactly one of 'model' or 'model_file'");
  if (inline_model) {
    cfg.model = model_config_from_json(j.at("model"));
  } else {
    fs::path p = j.at("model_file").get<std::string>();
    if (p.is_relative())
      p = fs::path(base_dir) / p;
    if (!fs::exists(p))
      throw ConfigError("model file '" + p.string() + "' does not exist");
    cfg.model_file = p.string();
    cfg.model = load_model_config(cfg.model_file);
  }
  const double horizon = make_model(cfg.model)->horizon();

  const json &grid = section(j, "grid", {"M", "T"});
  read(grid, "M", cfg.M);
  if (grid.contains("T") && grid.at("T").get<double>() != horizon)
    throw ConfigError("grid.T differs from the model horizon");

  const json &solver = section(
      j, "solver", {"tol", "max_iter", "damping", "backward_mode", "inner_tol", "inner_max_iter"});
  read(solver, "tol", cfg.solver.tol);
  read(solver, "max_iter", cfg.solver.max_iter);
  if (auto it = solver.find("damping"); it != solver.end()) {
    if (it->is_number())
      cfg.solver.damping = {it->get<double>()};
    else
      read(solver, "damping", cfg.solver.damping);
  }
  if (solver.contains("backward_mode"))
    cfg.solver.hjb.mode = backward_mode_from_string(solver.at("backward_mode").get<std::string>());
  read(solver, "inner_tol", cfg.solver.hjb.inner_tol);
  read(solver, "inner_max_iter", cfg.solver.hjb.inner_max_iter);

  const json &sampling = section(j, "sampling", {"n", "seed", "mode"});
  read(sampling, "n", cfg.sampling.n);
  read(sampling, "seed", cfg.sampling.seed);
  if (sampling.contains("mode"))
    cfg.sampling.mode = sample_mode_from_string(sampling.at("mode").get<std::string>());

  const json &tr = section(j, "training",
                           {"epochs", "batch_size", "width", "depth", "lr0", "optimizer", "loss",
                            "weight_decay", "seed", "test_fraction", "test_every", "patience"});
  TrainConfig &t = cfg.training;
  read(tr, "epochs", t.epochs);
  read(tr, "batch_size", t.batch_size);
  read(tr, "width", t.width);
  read(tr, "depth", t.depth);
  read(tr, "lr0", t.lr0);
  if (tr.contains("optimizer"))
    t.optimizer = optimizer_from_string(tr.at("optimizer").get<std::string>());
  if (tr.contains("loss"))
    t.loss = loss_from_string(tr.at("loss").get<std::string>());
  t.weight_decay = t.optimizer == nn::OptimizerKind::AdamW ? 0.01 : 0.0;
  read(tr, "weight_decay", t.weight_decay);
  read(tr, "seed", t.seed);
  read(tr, "test_fraction", t.test_fraction);
  read(tr, "test_every", t.test_every);
  read(tr, "patience", t.patience);

  const json &ev = section(j, "evaluation", {"pairs", "seed"});
  read(ev, "pairs", cfg.evaluation.pairs);
  read(ev, "seed", cfg.evaluation.seed);

  cfg.validate();
  return cfg;
}

json experiment_to_json(const ExperimentConfig &cfg) {
  const TrainConfig &t = cfg.training;
  return json{
      {"schema", kExperimentSchema},
      {"name", cfg.name},
      {"model", model_config_to_json(cfg.model)},
      {"grid", {{"M", cfg.M}}},
      {"solver",
       {{"tol", cfg.solver.tol},
        {"max_iter", cfg.solver.max_iter},
        {"damping", cfg.solver.damping},
        {"backward_mode", to_string(cfg.solver.hjb.mode)},
        {"inner_tol", cfg.solver.hjb.inner_tol},
        {"inner_max_iter", cfg.solver.hjb.inner_max_iter}}},
      {"sampling",
       {{"n", cfg.sampling.n}, {"seed", cfg.sampling.seed}, {"mode", to_string(cfg.sampling.mode)}}},
      {"training",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"width", t.width},
        {"depth", t.depth},
        {"lr0", t.lr0},
        {"optimizer", to_string(t.optimizer)},
        {"loss", to_string(t.loss)},
        {"weight_decay", t.weight_decay},
        {"seed", t.seed},
        {"test_fraction", t.test_fraction},
        {"test_every", t.test_every},
        {"patience", t.patience}}},
      {"evaluation", {{"pairs", cfg.evaluation.pairs}, {"seed", cfg.evaluation.seed}}},
      {"output", cfg.output}};
}

ExperimentConfig load_experiment(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return experiment_from_json(j, fs::path(path).parent_path().string());
}

} // namespace mfg
