#include "mfg/pipeline.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace mfg {

using nlohmann::json;

std::string to_string(SampleMode mode) {
  return mode == SampleMode::Pointwise ? "pointwise" : "augmented";
}

SampleMode sample_mode_from_string(const std::string &name) {
  if (name == "pointwise")
    return SampleMode::Pointwise;
  if (name == "augmented")
    return SampleMode::Augmented;
  throw ConfigError("unknown sampling mode '" + name + "'");
}

// ------------------------------------------------------------------- sampling

SimplexDist sample_simplex(nn::Rng &rng, std::size_t d) {
  if (d == 0)
    throw std::invalid_argument("simplex dimension must be >= 1");
  std::exponential_distribution<double> expo(1.0);
  Vec draws(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < draws.size(); ++i)
    draws[i] = expo(rng);
  return SimplexDist(draws / draws.sum());
}

Vec sample_kappa(nn::Rng &rng, const ParamBox &box) {
  box.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec kappa(box.lower.size());
  for (Eigen::Index i = 0; i < kappa.size(); ++i) {
    const double width = box.upper[i] - box.lower[i];
    kappa[i] = width == 0.0 ? box.lower[i]
                            : std::min(box.upper[i], box.lower[i] + width * unit(rng));
  }
  return kappa;
}

nn::Rng sample_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(attempt)};
  return nn::Rng(seq);
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)> &fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  std::vector<std::exception_ptr> errors(count);
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < count && !failed; i = next++) {
            try {
              fn(i);
            } catch (...) {
              errors[i] = std::current_exception();
              failed = true;
            }
          }
        });
    }
  }
  for (const auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

GeneratedDataset generate_dataset(const ModelConfig &model_cfg, const TimeGrid &grid,
                                  const GenerationOptions &opts) {
  opts.solver.validate();
  if (opts.n == 0)
    throw ConfigError("dataset size n must be positive");
  if (grid.steps() == 0)
    throw ConfigError("dataset generation needs M >= 1");
  const auto model = make_model(model_cfg);
  check_cfl(*model, grid);
  const ParamBox box = model->param_box();
  const std::size_t d = model->dim();

  GeneratedDataset out;
  DatasetHeader &h = out.dataset.header;
  h.model_digest = model_digest(model_cfg);
  h.model_kind = model->kind();
  h.d = d;
  h.k = box.dim();
  h.M = grid.steps();
  h.T = grid.horizon();
  h.seed = opts.seed;
  h.mode = opts.mode;
  h.n = opts.n;
  out.dataset.records.resize(opts.n);
  out.report.resize(opts.n);

  parallel_for(opts.n, opts.threads, [&](std::size_t i) {
    for (std::size_t attempt = 0; attempt <= kMaxSampleRetries; ++attempt) {
      nn::Rng rng = sample_rng(opts.seed, i, attempt);
      SimplexDist eta = sample_simplex(rng, d);
      Vec kappa = sample_kappa(rng, box);
      const PicardResult res = picard_solve(*model, eta, kappa, grid, opts.solver);
      if (!res.converged)
        continue;

      SampleRecord rec;
      rec.mode = opts.mode;
      if (opts.mode == SampleMode::Pointwise) {
        std::uniform_int_distribution<std::size_t> pick(1, grid.steps());
        rec.j = pick(rng);
        rec.t = grid.t(rec.j);
        rec.y = res.solution.u.row(static_cast<Eigen::Index>(rec.j)).transpose();
      } else {
        rec.y = Eigen::Map<const Vec>(res.solution.u.data(), res.solution.u.size());
      }
      GenerationReportEntry &rep = out.report[i];
      rep.index = i;
      rep.iterations = res.iterations;
      rep.increment = std::max(res.history.back().du, res.history.back().dmu);
      rep.residual = discretization_residual(*model, kappa, eta, res.solution,
                                             opts.solver.hjb)
                         .max();
      rep.retries = attempt;
      rec.eta = std::move(eta);
      rec.kappa = std::move(kappa);
      out.dataset.records[i] = std::move(rec);
      return;
    }
    throw NumericalError("sample " + std::to_string(i) +
                         ": Picard iteration failed to converge after " +
                         std::to_string(kMaxSampleRetries) + " retries");
  });
  return out;
}

// ---------------------------------------------------------------- dataset I/O

namespace {

std::vector<double> to_std(const Vec &v) { return {v.data(), v.data() + v.size()}; }

Vec to_vec(const json &j, const char *what) {
  if (!j.is_array())
    throw IoError(std::string("dataset field '") + what + "' must be an array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number())
      throw IoError(std::string("dataset field '") + what + "' must hold numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

template <class T> T field(const json &j, const char *key) {
  auto it = j.find(key);
  if (it == j.end())
    throw IoError(std::string("dataset is missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception &e) {
    throw IoError(std::string("dataset field '") + key + "': " + e.what());
  }
}

} // namespace

void write_dataset(std::ostream &out, const Dataset &ds) {
  const DatasetHeader &h = ds.header;
  json header{{"schema", h.schema},      {"model_digest", h.model_digest},
              {"model_kind", h.model_kind}, {"d", h.d},
              {"k", h.k},                {"M", h.M},
              {"T", h.T},                {"seed", h.seed},
              {"mode", to_string(h.mode)}, {"n", ds.records.size()}};
  out << header.dump() << '\n';
  for (const auto &r : ds.records) {
    json rec{{"mode", to_string(r.mode)},
             {"eta", to_std(r.eta.probs())},
             {"kappa", to_std(r.kappa)}};
    if (r.mode == SampleMode::Pointwise) {
      rec["j"] = r.j;
      rec["t"] = r.t;
    } else {
      rec["j"] = nullptr;
      rec["t"] = nullptr;
    }
    rec["y"] = to_std(r.y);
    out << rec.dump() << '\n';
  }
}

void write_dataset(const std::string &path, const Dataset &ds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError("cannot open '" + path + "' for writing");
  write_dataset(out, ds);
  if (!out)
    throw IoError("failed writing dataset '" + path + "'");
}

Dataset read_dataset(std::istream &in, const std::optional<std::string> &expected_digest) {
  std::string line;
  if (!std::getline(in, line))
    throw IoError("dataset is empty");
  Dataset ds;
  try {
    const json header = json::parse(line);
    DatasetHeader &h = ds.header;
    h.schema = field<std::string>(header, "schema");
    if (h.schema != kDatasetSchema)
      throw IoError("unsupported dataset schema '" + h.schema + "'");
    h.model_digest = field<std::string>(header, "model_digest");
    h.model_kind = field<std::string>(header, "model_kind");
    h.d = field<std::size_t>(header, "d");
    h.k = field<std::size_t>(header, "k");
    h.M = field<std::size_t>(header, "M");
    h.T = field<double>(header, "T");
    h.seed = field<std::uint64_t>(header, "seed");
    h.mode = sample_mode_from_string(field<std::string>(header, "mode"));
    h.n = field<std::size_t>(header, "n");
  } catch (const json::parse_error &e) {
    throw IoError(std::string("dataset header is not valid JSON: ") + e.what());
  }
  const DatasetHeader &h = ds.header;
  if (expected_digest && *expected_digest != h.model_digest)
    throw ConfigError("dataset was generated for a different model configuration "
                      "(digest " + h.model_digest + ", expected " + *expected_digest + ")");

  const std::size_t y_dim = h.mode == SampleMode::Pointwise ? h.d : (h.M + 1) * h.d;
  ds.records.reserve(h.n);
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error &e) {
      throw IoError(std::string("dataset record is not valid JSON: ") + e.what());
    }
    SampleRecord r;
    r.mode = sample_mode_from_string(field<std::string>(rec, "mode"));
    if (r.mode != h.mode)
      throw IoError("dataset record mode differs from the header");
    Vec eta = to_vec(rec.at("eta"), "eta");
    if (static_cast<std::size_t>(eta.size()) != h.d)
      throw IoError("dataset record eta has the wrong length");
    r.eta = SimplexDist(std::move(eta));
    r.kappa = to_vec(rec.at("kappa"), "kappa");
    if (static_cast<std::size_t>(r.kappa.size()) != h.k)
      throw IoError("dataset record kappa has the wrong length");
    if (r.mode == SampleMode::Pointwise) {
      r.j = field<std::size_t>(rec, "j");
      r.t = field<double>(rec, "t");
      if (r.j > h.M)
        throw IoError("dataset record grid index beyond M");
    }
    r.y = to_vec(rec.at("y"), "y");
    if (static_cast<std::size_t>(r.y.size()) != y_dim || !r.y.allFinite())
      throw IoError("dataset record label has the wrong length or is not finite");
    ds.records.push_back(std::move(r));
  }
  if (ds.records.size() != h.n)
    throw IoError("dataset holds " + std::to_string(ds.records.size()) +
                  " records but the header announces " + std::to_string(h.n));
  return ds;
}

Dataset read_dataset(const std::string &path,
                     const std::optional<std::string> &expected_digest) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open dataset '" + path + "'");
  return read_dataset(in, expected_digest);
}

void write_report(const std::string &path,
                  const std::vector<GenerationReportEntry> &report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError("cannot open '" + path + "' for writing");
  for (const auto &e : report)
    out << json{{"index", e.index},
                {"iterations", e.iterations},
                {"increment", e.increment},
                {"residual", e.residual},
                {"retries", e.retries}}
               .dump()
        << '\n';
  if (!out)
    throw IoError("failed writing report '" + path + "'");
}

// ------------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || width == 0 || depth == 0)
    throw ConfigError("training counts (epochs, batch size, width, depth) must be positive");
  if (!(lr0 > 0.0))
    throw ConfigError("initial learning rate must be > 0");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test fraction must lie in (0, 1)");
  if (test_every == 0)
    throw ConfigError("test_every must be positive");
  if (weight_decay < 0.0)
    throw ConfigError("weight decay must be >= 0");
}

std::size_t FeatureMap::input_dim() const {
  return (mode == SampleMode::Pointwise ? 1 : 0) + d + kappa_box.dim();
}

std::size_t FeatureMap::output_dim() const {
  return mode == SampleMode::Pointwise ? d : (M + 1) * d;
}

Vec FeatureMap::features(double t, const Vec &eta, const Vec &kappa) const {
  Vec x(static_cast<Eigen::Index>(input_dim()));
  Eigen::Index pos = 0;
  if (mode == SampleMode::Pointwise)
    x[pos++] = T > 0.0 ? t / T : 0.0;
  x.segment(pos, eta.size()) = eta;
  pos += eta.size();
  for (Eigen::Index i = 0; i < kappa.size(); ++i) {
    const double width = kappa_box.upper[i] - kappa_box.lower[i];
    x[pos++] = width > 0.0 ? (kappa[i] - kappa_box.lower[i]) / width : 0.0;
  }
  return x;
}

FeatureMap feature_map_for(const Dataset &ds, const ParamBox &box) {
  if (box.dim() != ds.header.k)
    throw ConfigError("parameter box dimension does not match the dataset");
  return FeatureMap{ds.header.mode, ds.header.d, ds.header.M, ds.header.T, box};
}

DataSplit split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x5317u};
  nn::Rng rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t test = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * test_fraction));
  if (n >= 2)
    test = std::clamp<std::size_t>(test, 1, n - 1);
  else
    test = 0;
  DataSplit split;
  split.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(test), order.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

namespace {

std::string encode_box(const ParamBox &box) {
  return json{{"lower", to_std(box.lower)}, {"upper", to_std(box.upper)}}.dump();
}

ParamBox decode_box(const std::string &text) {
  const json j = json::parse(text);
  return {to_vec(j.at("lower"), "lower"), to_vec(j.at("upper"), "upper")};
}

std::string fmt_double(double v) { return json(v).dump(); }

double parse_double(const std::string &s) { return json::parse(s).get<double>(); }

nn::Matrix gather(const nn::Matrix &m, const std::vector<std::size_t> &cols,
                  std::size_t begin, std::size_t end) {
  nn::Matrix out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t c = begin; c < end; ++c)
    out.col(static_cast<Eigen::Index>(c - begin)) = m.col(static_cast<Eigen::Index>(cols[c]));
  return out;
}

} // namespace

TrainResult train_flow_map(const Dataset &ds, const ParamBox &box, const TrainConfig &cfg,
                           const std::optional<Checkpoint> &resume) {
  cfg.validate();
  if (ds.records.empty())
    throw ConfigError("cannot train on an empty dataset");
  const FeatureMap fmap = feature_map_for(ds, box);
  const std::size_t n = ds.records.size();

  nn::Matrix inputs(static_cast<Eigen::Index>(fmap.input_dim()), static_cast<Eigen::Index>(n));
  nn::Matrix targets(static_cast<Eigen::Index>(fmap.output_dim()), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const SampleRecord &r = ds.records[i];
    if (r.mode != fmap.mode || static_cast<std::size_t>(r.y.size()) != fmap.output_dim())
      throw ConfigError("dataset record does not match the dataset header dimensions");
    inputs.col(static_cast<Eigen::Index>(i)) = fmap.features(r.t, r.eta.probs(), r.kappa);
    targets.col(static_cast<Eigen::Index>(i)) = r.y;
  }

  const DataSplit split = split_indices(n, cfg.test_fraction, cfg.seed);
  const nn::Matrix test_x = gather(inputs, split.test, 0, split.test.size());
  const nn::Matrix test_y = gather(targets, split.test, 0, split.test.size());
  const std::size_t batch = std::min(cfg.batch_size, split.train.size());

  std::vector<std::size_t> sizes{fmap.input_dim()};
  for (std::size_t l = 0; l < cfg.depth; ++l)
    sizes.push_back(cfg.width);
  sizes.push_back(fmap.output_dim());

  TrainResult result;
  Checkpoint &ckpt = result.checkpoint;
  nn::Rng rng;
  if (resume) {
    ckpt = *resume;
    if (ckpt.params.layer_sizes() != sizes)
      throw ConfigError("resume checkpoint architecture does not match the config");
    rng = rng_from_string(ckpt.rng_state);
  } else {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                      static_cast<std::uint32_t>(cfg.seed >> 32), 0x7a11u};
    rng = nn::Rng(seq);
    ckpt.params = nn::init_params(rng, sizes);
    ckpt.optim = nn::OptimState::make(cfg.optimizer, ckpt.params, cfg.weight_decay);
    ckpt.epoch = 0;
  }
  ckpt.metadata["mode"] = to_string(fmap.mode);
  ckpt.metadata["model_digest"] = ds.header.model_digest;
  ckpt.metadata["model_kind"] = ds.header.model_kind;
  ckpt.metadata["d"] = std::to_string(fmap.d);
  ckpt.metadata["k"] = std::to_string(box.dim());
  ckpt.metadata["M"] = std::to_string(fmap.M);
  ckpt.metadata["T"] = fmt_double(fmap.T);
  ckpt.metadata["kappa_box"] = encode_box(box);
  ckpt.metadata["epochs_total"] = std::to_string(cfg.epochs);

  auto test_loss = [&](const nn::MlpParams &p) {
    return split.test.empty() ? std::numeric_limits<double>::quiet_NaN()
                              : nn::batch_loss(p, test_x, test_y, cfg.loss);
  };

  std::optional<nn::MlpParams> best_params;
  double best_test = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order = split.train;

  for (std::size_t epoch = ckpt.epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = nn::cosine_lr(epoch, cfg.epochs, cfg.lr0);
    std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const nn::Matrix bx = gather(inputs, order, start, end);
      const nn::Matrix by = gather(targets, order, start, end);
      const nn::LossAndGrad lg = nn::loss_and_grad(ckpt.params, bx, by, cfg.loss);
      nn::optimizer_step(ckpt.optim, ckpt.params, lg.grad, lr);
      weighted += lg.loss * static_cast<double>(end - start);
    }
    ckpt.epoch = epoch + 1;

    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = lr;
    log.train_loss = weighted / static_cast<double>(order.size());
    const bool evaluate = (epoch + 1) % cfg.test_every == 0 || epoch + 1 == cfg.epochs;
    if (evaluate) {
      log.test_loss = test_loss(ckpt.params);
      log.weight_bound = nn::weight_bound(ckpt.params);
    }
    result.history.push_back(log);

    if (cfg.patience > 0 && evaluate && std::isfinite(log.test_loss)) {
      if (log.test_loss < best_test) {
        best_test = log.test_loss;
        best_params = ckpt.params;
        since_best = 0;
      } else {
        since_best += cfg.test_every;
        if (since_best >= cfg.patience) {
          result.stopped_early = epoch + 1 < cfg.epochs;
          break;
        }
      }
    }
  }
  if (cfg.patience > 0 && best_params)
    ckpt.params = *best_params;
  ckpt.rng_state = rng_to_string(rng);

  const nn::Matrix train_x = gather(inputs, split.train, 0, split.train.size());
  const nn::Matrix train_y = gather(targets, split.train, 0, split.train.size());
  result.final_train_loss = nn::batch_loss(ckpt.params, train_x, train_y, cfg.loss);
  result.final_test_loss = test_loss(ckpt.params);
  ckpt.metadata["weight_bound"] = fmt_double(nn::weight_bound(ckpt.params));
  return result;
}

void write_loss_history(const std::string &path, const std::vector<EpochLog> &history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError("cannot open '" + path + "' for writing");
  out << "epoch,lr,train_loss,test_loss,weight_bound\n";
  out << std::setprecision(17);
  for (const auto &e : history) {
    out << e.epoch << ',' << e.lr << ',' << e.train_loss << ',';
    if (std::isfinite(e.test_loss))
      out << e.test_loss << ',' << e.weight_bound;
    else
      out << ',';
    out << '\n';
  }
  if (!out)
    throw IoError("failed writing '" + path + "'");
}

// ----------------------------------------------------------------- predictors

NetworkPredictor::NetworkPredictor(nn::MlpParams params, FeatureMap features)
    : params_(std::move(params)), features_(std::move(features)) {
  params_.validate();
  if (params_.input_dim() != features_.input_dim() ||
      params_.output_dim() != features_.output_dim())
    throw ConfigError("network shape does not match the flow-map features");
}

NetworkPredictor NetworkPredictor::from_checkpoint(const Checkpoint &ckpt,
                                                   const ModelConfig &model_cfg,
                                                   const TimeGrid &grid) {
  auto meta = [&](const char *key) -> const std::string & {
    auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end())
      throw ConfigError(std::string("checkpoint metadata lacks '") + key + "'");
    return it->second;
  };
  if (meta("model_digest") != model_digest(model_cfg))
    throw ConfigError("checkpoint was trained for a different model configuration");
  FeatureMap fmap;
  fmap.mode = sample_mode_from_string(meta("mode"));
  fmap.d = std::stoul(meta("d"));
  fmap.M = std::stoul(meta("M"));
  fmap.T = parse_double(meta("T"));
  fmap.kappa_box = decode_box(meta("kappa_box"));
  if (fmap.mode == SampleMode::Augmented && fmap.M != grid.steps())
    throw ConfigError("augmented checkpoint was trained on a different time grid");
  if (fmap.T != grid.horizon())
    throw ConfigError("checkpoint horizon differs from the evaluation grid");
  return NetworkPredictor(ckpt.params, std::move(fmap));
}

RowMajorMatrix NetworkPredictor::predict(const SimplexDist &eta, const Vec &kappa,
                                         const TimeGrid &grid) const {
  const auto d = static_cast<Eigen::Index>(features_.d);
  const auto rows = static_cast<Eigen::Index>(grid.points());
  if (features_.mode == SampleMode::Augmented) {
    const Vec out = nn::mlp_forward(params_, features_.features(0.0, eta.probs(), kappa));
    RowMajorMatrix u(rows, d);
    std::copy(out.data(), out.data() + out.size(), u.data());
    return u;
  }
  nn::Matrix x(static_cast<Eigen::Index>(features_.input_dim()), rows);
  for (std::size_t j = 0; j < grid.points(); ++j)
    x.col(static_cast<Eigen::Index>(j)) = features_.features(grid.t(j), eta.probs(), kappa);
  return nn::mlp_forward_batch(params_, x).transpose();
}

SolverOracle::SolverOracle(std::shared_ptr<const MfgModel> model, PicardConfig cfg)
    : model_(std::move(model)), cfg_(std::move(cfg)) {}

RowMajorMatrix SolverOracle::predict(const SimplexDist &eta, const Vec &kappa,
                                     const TimeGrid &grid) const {
  const PicardResult res = picard_solve(*model_, eta, kappa, grid, cfg_);
  if (!res.converged)
    throw NumericalError("oracle solve did not converge");
  return res.solution.u;
}

// ----------------------------------------------------------------- evaluation

std::vector<EvalPair> sample_eval_pairs(const MfgModel &model, std::size_t count,
                                        std::uint64_t seed) {
  std::vector<EvalPair> pairs;
  const ParamBox box = model.param_box();
  for (std::size_t i = 0; i < count; ++i) {
    nn::Rng rng = sample_rng(seed, i, 0xe7a1u);
    SimplexDist eta = sample_simplex(rng, model.dim());
    pairs.push_back({std::move(eta), sample_kappa(rng, box)});
  }
  return pairs;
}

namespace {

EvalReport evaluate(const FlowMapPredictor &predictor, const MfgModel &model,
                    const TimeGrid &grid, const std::vector<EvalPair> &pairs,
                    const PicardConfig &cfg, std::size_t threads, bool reconstruct) {
  std::vector<std::optional<PairEvaluation>> slots(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const EvalPair &pair = pairs[i];
    const PicardResult ref = picard_solve(model, pair.eta, pair.kappa, grid, cfg);
    if (!ref.converged)
      return;
    PairEvaluation ev;
    ev.index = i;
    ev.pair = pair;
    ev.u_true = ref.solution.u;
    ev.mu_true = ref.solution.mu;
    ev.u_pred = predictor.predict(pair.eta, pair.kappa, grid);
    if (ev.u_pred.rows() != ev.u_true.rows() || ev.u_pred.cols() != ev.u_true.cols())
      throw ConfigError("predictor returned a trajectory of the wrong shape");
    const RowMajorMatrix err = (ev.u_true - ev.u_pred).cwiseAbs();
    ev.error_per_time = err.rowwise().maxCoeff();
    ev.error_per_state = err.colwise().maxCoeff().transpose();
    ev.sup_error = err.maxCoeff();
    if (reconstruct) {
      ev.mu_hat = kfp_reconstruct(
          model,
          [&ev](std::size_t j, double) -> Vec {
            return ev.u_pred.row(static_cast<Eigen::Index>(j)).transpose();
          },
          pair.eta, grid);
      ev.mu_sup_error = (ev.mu_hat - ev.mu_true).cwiseAbs().maxCoeff();
    }
    slots[i] = std::move(ev);
  });

  EvalReport report;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i]) {
      report.skipped.push_back(i);
      continue;
    }
    report.pairs.push_back(std::move(*slots[i]));
  }
  if (!report.pairs.empty()) {
    for (const auto &p : report.pairs) {
      report.mean_sup_error += p.sup_error;
      report.max_sup_error = std::max(report.max_sup_error, p.sup_error);
      report.mean_mu_error += p.mu_sup_error;
      report.max_mu_error = std::max(report.max_mu_error, p.mu_sup_error);
    }
    report.mean_sup_error /= static_cast<double>(report.pairs.size());
    report.mean_mu_error /= static_cast<double>(report.pairs.size());
  }
  return report;
}

} // namespace

EvalReport evaluate_flow_map(const FlowMapPredictor &predictor, const MfgModel &model,
                             const TimeGrid &grid, const std::vector<EvalPair> &pairs,
                             const PicardConfig &cfg, std::size_t threads) {
  return evaluate(predictor, model, grid, pairs, cfg, threads, false);
}

EvalReport evaluate_reconstruction(const FlowMapPredictor &predictor,
                                   const MfgModel &model, const TimeGrid &grid,
                                   const std::vector<EvalPair> &pairs,
                                   const PicardConfig &cfg, std::size_t threads) {
  return evaluate(predictor, model, grid, pairs, cfg, threads, true);
}

// ---------------------------------------------------------------------- sweep

SweepResult width_sweep(const Dataset &ds, const ParamBox &box, const TrainConfig &base,
                        const std::vector<std::size_t> &widths, std::size_t trials) {
  if (widths.empty() || trials == 0)
    throw ConfigError("a sweep needs at least one width and one trial");
  SweepResult result;
  for (std::size_t w : widths) {
    std::vector<double> train, test;
    for (std::size_t t = 0; t < trials; ++t) {
      TrainConfig cfg = base;
      cfg.width = w;
      cfg.seed = base.seed + t;
      TrainResult tr = train_flow_map(ds, box, cfg);
      train.push_back(tr.final_train_loss);
      test.push_back(tr.final_test_loss);
      result.runs.push_back({w, t, std::move(tr.history), tr.final_train_loss,
                             tr.final_test_loss});
    }
    auto mean_std = [](const std::vector<double> &v) {
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v)
        var += (x - mean) * (x - mean);
      return std::pair{mean, v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0};
    };
    const auto [mtr, str] = mean_std(train);
    const auto [mte, ste] = mean_std(test);
    result.rows.push_back({w, trials, mtr, str, mte, ste});
  }
  return result;
}

} // namespace mfg
