#include "mfg/commands.hpp"

#include "CLI11.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace mfg {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  if (!std::isfinite(v))
    return "";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

fs::path prepare_out(const ExperimentConfig &cfg, bool curves) {
  const fs::path out = cfg.output;
  std::error_code ec;
  fs::create_directories(curves ? out / "curves" : out, ec);
  if (ec)
    throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  std::ofstream f(out / "config.json", std::ios::trunc);
  if (!f)
    throw IoError("cannot write '" + (out / "config.json").string() + "'");
  f << experiment_to_json(cfg).dump(2) << '\n';
  return out;
}

std::ofstream open_csv(const fs::path &path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f)
    throw IoError("cannot open '" + path.string() + "' for writing");
  return f;
}

void header_cols(std::ostream &f, const std::string &prefix, std::size_t count) {
  for (std::size_t i = 1; i <= count; ++i)
    f << ',' << prefix << i;
}

template <class V> void row_cols(std::ostream &f, const V &v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    f << ',' << num(v[i]);
}

std::string dataset_or_default(const ExperimentConfig &cfg, const std::string &path) {
  return path.empty() ? (fs::path(cfg.output) / "dataset.jsonl").string() : path;
}

} // namespace

int cmd_sample(const ExperimentConfig &cfg, std::size_t threads, std::ostream &log) {
  const fs::path out = prepare_out(cfg, false);
  GenerationOptions opts;
  opts.n = cfg.sampling.n;
  opts.mode = cfg.sampling.mode;
  opts.seed = cfg.sampling.seed;
  opts.solver = cfg.solver;
  opts.threads = threads;
  const GeneratedDataset gen = generate_dataset(cfg.model, cfg.grid(), opts);
  write_dataset((out / "dataset.jsonl").string(), gen.dataset);
  write_report((out / "report.jsonl").string(), gen.report);

  std::size_t retries = 0, max_iter = 0;
  double max_res = 0.0;
  for (const auto &e : gen.report) {
    retries += e.retries;
    max_iter = std::max(max_iter, e.iterations);
    max_res = std::max(max_res, e.residual);
  }
  log << "sample: " << gen.dataset.records.size() << " records (" << to_string(opts.mode)
      << ", M=" << cfg.M << ") -> " << (out / "dataset.jsonl").string() << "\n"
      << "  max Picard iterations " << max_iter << ", max residual " << max_res << ", retries "
      << retries << "\n";
  return kExitOk;
}

int cmd_train(const ExperimentConfig &cfg, const std::string &dataset_path,
              const std::optional<std::string> &resume, std::ostream &log) {
  const Dataset ds = read_dataset(dataset_path, model_digest(cfg.model));
  if (ds.header.M != cfg.M)
    throw ConfigError("dataset grid M=" + std::to_string(ds.header.M) +
                      " differs from config M=" + std::to_string(cfg.M));
  const fs::path out = prepare_out(cfg, true);
  std::optional<Checkpoint> start;
  if (resume) {
    start = read_checkpoint(*resume);
    if (auto it = start->metadata.find("model_digest");
        it == start->metadata.end() || it->second != ds.header.model_digest)
      throw ConfigError("resume checkpoint belongs to a different model");
    log << "train: resuming at epoch " << start->epoch << "\n";
  }
  const auto box = make_model(cfg.model)->param_box();
  const TrainResult res = train_flow_map(ds, box, cfg.training, start);
  write_checkpoint((out / "checkpoint.bin").string(), res.checkpoint);
  write_loss_history((out / "curves" / "loss.csv").string(), res.history);
  log << "train: epoch " << res.checkpoint.epoch << "/" << cfg.training.epochs
      << (res.stopped_early ? " (early stop)" : "") << ", train loss "
      << res.final_train_loss << ", test loss " << res.final_test_loss << ", p(.) "
      << nn::weight_bound(res.checkpoint.params) << "\n";
  return kExitOk;
}

int cmd_eval(const ExperimentConfig &cfg, const std::optional<std::string> &checkpoint,
             std::size_t threads, std::ostream &log) {
  const auto model = make_model(cfg.model);
  const TimeGrid grid = cfg.grid();
  std::unique_ptr<FlowMapPredictor> predictor;
  if (checkpoint)
    predictor = std::make_unique<NetworkPredictor>(
        NetworkPredictor::from_checkpoint(read_checkpoint(*checkpoint), cfg.model, grid));
  else
    predictor = std::make_unique<SolverOracle>(model, cfg.solver);

  const auto pairs = sample_eval_pairs(*model, cfg.evaluation.pairs, cfg.evaluation.seed);
  const EvalReport rep = evaluate_reconstruction(*predictor, *model, grid, pairs, cfg.solver, threads);
  const fs::path out = prepare_out(cfg, true);
  const std::size_t d = model->dim();
  const std::size_t k = model->param_box().dim();

  for (const auto &p : rep.pairs) {
    auto f = open_csv(out / "curves" / ("eval_pair_" + std::to_string(p.index) + ".csv"));
    f << "j,t";
    header_cols(f, "u_true_", d);
    header_cols(f, "u_pred_", d);
    header_cols(f, "abs_err_", d);
    header_cols(f, "mu_true_", d);
    header_cols(f, "mu_hat_", d);
    f << '\n';
    for (std::size_t j = 0; j < grid.points(); ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      f << j << ',' << num(grid.t(j));
      row_cols(f, p.u_true.row(r));
      row_cols(f, p.u_pred.row(r));
      row_cols(f, (p.u_true.row(r) - p.u_pred.row(r)).cwiseAbs());
      row_cols(f, p.mu_true.row(r));
      row_cols(f, p.mu_hat.row(r));
      f << '\n';
    }
  }

  {
    auto f = open_csv(out / "curves" / "error_per_time.csv");
    f << "j,t";
    for (const auto &p : rep.pairs)
      f << ",pair_" << p.index;
    f << '\n';
    for (std::size_t j = 0; j < grid.points(); ++j) {
      f << j << ',' << num(grid.t(j));
      for (const auto &p : rep.pairs)
        f << ',' << num(p.error_per_time[static_cast<Eigen::Index>(j)]);
      f << '\n';
    }
  }

  {
    auto f = open_csv(out / "metrics.csv");
    f << "pair,status";
    header_cols(f, "eta_", d);
    header_cols(f, "kappa_", k);
    f << ",sup_error,mu_sup_error\n";
    std::size_t next = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const bool ok = next < rep.pairs.size() && rep.pairs[next].index == i;
      f << i << ',' << (ok ? "ok" : "skipped");
      row_cols(f, pairs[i].eta.probs());
      row_cols(f, pairs[i].kappa);
      if (ok) {
        f << ',' << num(rep.pairs[next].sup_error) << ',' << num(rep.pairs[next].mu_sup_error);
        ++next;
      } else {
        f << ",,";
      }
      f << '\n';
    }
  }

  log << "eval: " << rep.pairs.size() << " pairs (" << rep.skipped.size() << " skipped), "
      << (checkpoint ? "network" : "solver oracle") << "\n"
      << "  u sup error mean " << rep.mean_sup_error << " max " << rep.max_sup_error << "\n"
      << "  mu reconstruction error mean " << rep.mean_mu_error << " max " << rep.max_mu_error
      << "\n";
  return kExitOk;
}

int cmd_sweep(const ExperimentConfig &cfg, const std::string &dataset_path,
              const std::vector<std::size_t> &widths, std::size_t trials, std::ostream &log) {
  const Dataset ds = read_dataset(dataset_path, model_digest(cfg.model));
  const fs::path out = prepare_out(cfg, true);
  const SweepResult res =
      width_sweep(ds, make_model(cfg.model)->param_box(), cfg.training, widths, trials);
  for (const auto &run : res.runs)
    write_loss_history((out / "curves" /
                        ("sweep_w" + std::to_string(run.width) + "_trial" +
                         std::to_string(run.trial) + ".csv"))
                           .string(),
                       run.history);
  auto f = open_csv(out / "summary.csv");
  f << "width,trials,mean_train,std_train,mean_test,std_test\n";
  for (const auto &r : res.rows) {
    f << r.width << ',' << r.trials << ',' << num(r.mean_train) << ',' << num(r.std_train) << ','
      << num(r.mean_test) << ',' << num(r.std_test) << '\n';
    log << "sweep: W=" << r.width << " train " << r.mean_train << " +- " << r.std_train
        << ", test " << r.mean_test << " +- " << r.std_test << "\n";
  }
  return kExitOk;
}

int cmd_check(const ExperimentConfig &cfg, const std::optional<std::string> &checkpoint,
              std::ostream &log) {
  const auto model = make_model(cfg.model);
  const std::size_t d = model->dim();
  const ParamBox box = model->param_box();
  bool all_ok = true;
  auto report = [&](bool ok, const std::string &name, const std::string &detail) {
    all_ok = all_ok && ok;
    log << (ok ? "PASS " : "FAIL ") << name << "  " << detail << "\n";
  };

  nn::Rng rng = sample_rng(cfg.sampling.seed, 0, 0xc4ecu);
  constexpr std::size_t kPairs = 1000;
  std::vector<std::pair<SimplexDist, SimplexDist>> pairs;
  for (std::size_t i = 0; i < kPairs; ++i) {
    SimplexDist a = sample_simplex(rng, d);
    pairs.emplace_back(std::move(a), sample_simplex(rng, d));
  }

  const MonotonicityReport mf = check_lasry_lions(
      [&](std::size_t x, const Vec &eta) { return model->mean_field_cost(x, eta); }, pairs);
  report(mf.violations == 0, "monotonicity-F",
         "pairs=" + std::to_string(kPairs) + " violations=" + std::to_string(mf.violations) +
             " min_sum=" + num(mf.min_sum));

  std::size_t g_viol = 0;
  double g_min = std::numeric_limits<double>::infinity();
  constexpr std::size_t kKappas = 10;
  for (std::size_t c = 0; c < kKappas; ++c) {
    const Vec kappa = sample_kappa(rng, box);
    const MonotonicityReport mg = check_lasry_lions(
        [&](std::size_t x, const Vec &eta) { return model->terminal_cost(kappa, x, eta); },
        pairs);
    g_viol += mg.violations;
    g_min = std::min(g_min, mg.min_sum);
  }
  report(g_viol == 0, "monotonicity-g",
         "pairs=" + std::to_string(kPairs) + " kappas=" + std::to_string(kKappas) +
             " violations=" + std::to_string(g_viol) + " min_sum=" + num(g_min));

  // p is drawn on a scale that straddles every kink of both benchmark models.
  constexpr double kStep = 1e-5;
  const double scale = 4.0 * std::max(1.0, model->max_exit_rate()) *
                       std::max(1.0, std::visit([](const auto &m) { return m.horizon; }, cfg.model));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> state(0, d - 1);
  double sel_err = 0.0, concave_gap = 0.0;
  std::size_t sel_points = 0;
  for (std::size_t i = 0; i < kPairs; ++i) {
    const std::size_t x = state(rng);
    const Vec eta = sample_simplex(rng, d).probs();
    Vec p(static_cast<Eigen::Index>(d)), q(static_cast<Eigen::Index>(d));
    for (Eigen::Index y = 0; y < p.size(); ++y) {
      p[y] = scale * unit(rng);
      q[y] = scale * unit(rng);
    }
    p[static_cast<Eigen::Index>(x)] = q[static_cast<Eigen::Index>(x)] = 0.0;
    if (model->smooth_at(x, eta, p, kStep)) {
      sel_err = std::max(sel_err, selector_gradient_consistency(*model, x, eta, p, kStep));
      ++sel_points;
    }
    const double mid = model->hamiltonian(x, eta, 0.5 * (p + q));
    const double chord = 0.5 * (model->hamiltonian(x, eta, p) + model->hamiltonian(x, eta, q));
    concave_gap = std::max(concave_gap, chord - mid);
  }
  report(sel_err <= 1e-6, "selector-gradient",
         "points=" + std::to_string(sel_points) + " max_err=" + num(sel_err));
  report(concave_gap <= 1e-10, "hamiltonian-concavity",
         "pairs=" + std::to_string(kPairs) + " max_gap=" + num(concave_gap));

  const TimeGrid grid = cfg.grid();
  const double cfl = grid.dt() * model->max_exit_rate();
  report(cfl <= 1.0, "cfl", "dt*max_exit_rate=" + num(cfl) + " (M=" + std::to_string(cfg.M) + ")");

  if (checkpoint) {
    const Checkpoint ckpt = read_checkpoint(*checkpoint);
    const NetworkPredictor net = NetworkPredictor::from_checkpoint(ckpt, cfg.model, grid);
    log << "INFO weight-bound  p_frobenius="
        << num(nn::weight_bound(net.params(), nn::MatrixNorm::Frobenius))
        << " p_spectral=" << num(nn::weight_bound(net.params(), nn::MatrixNorm::Spectral))
        << " parameters=" << net.params().parameter_count() << " epoch=" << ckpt.epoch << "\n";
  }
  return all_ok ? kExitOk : kExitCheckFailed;
}

int cmd_solve(const ExperimentConfig &cfg, const std::vector<double> &eta,
              const std::vector<double> &kappa, std::ostream &log) {
  const auto model = make_model(cfg.model);
  const SimplexDist e = eta.empty() ? SimplexDist::uniform(model->dim())
                                    : SimplexDist(Eigen::Map<const Vec>(eta.data(),
                                                                        static_cast<Eigen::Index>(eta.size())));
  if (e.size() != model->dim())
    throw ConfigError("--eta needs " + std::to_string(model->dim()) + " entries");
  const Vec k = kappa.empty() ? model->param_box().lower
                              : Vec(Eigen::Map<const Vec>(kappa.data(),
                                                          static_cast<Eigen::Index>(kappa.size())));
  const PicardResult res = picard_solve(*model, e, k, cfg.grid(), cfg.solver);
  if (!res.converged)
    throw NumericalError("Picard iteration did not converge in " +
                         std::to_string(res.iterations) + " iterations");
  const fs::path out = prepare_out(cfg, false);
  std::ofstream f(out / "trajectory.jsonl", std::ios::trunc);
  if (!f)
    throw IoError("cannot write trajectory");
  dump_trajectory(f, res.solution);
  log << "solve: converged in " << res.iterations << " iterations, residual "
      << discretization_residual(*model, k, e, res.solution, cfg.solver.hjb).max() << "\n";
  return kExitOk;
}

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"Learn flow maps of finite-state mean-field games."};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_dir, mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  std::string dataset, resume, checkpoint;
  bool oracle = false;
  std::vector<std::size_t> widths{32, 64, 128};
  std::size_t trials = 5;
  std::vector<double> eta, kappa;

  auto common = [&](CLI::App *sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "seed for sampling and training");
    sub->add_option("--threads", threads, "worker cap")->check(CLI::PositiveNumber);
    sub->add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
    sub->add_option("--mode", mode, "pointwise | augmented")
        ->check(CLI::IsMember({"pointwise", "augmented"}));
  };
  auto *sample = app.add_subcommand("sample", "generate a labeled dataset");
  auto *train = app.add_subcommand("train", "train the flow-map network");
  auto *eval = app.add_subcommand("eval", "compare a checkpoint against the solver");
  auto *sweep = app.add_subcommand("sweep", "width sweep over several seeds");
  auto *check = app.add_subcommand("check", "preflight diagnostics");
  auto *solve = app.add_subcommand("solve", "solve one MFG and dump the trajectory");
  for (auto *sub : {sample, train, eval, sweep, check, solve})
    common(sub);
  for (auto *sub : {train, sweep})
    sub->add_option("--dataset", dataset, "dataset path (default <out>/dataset.jsonl)");
  train->add_option("--resume", resume, "checkpoint to continue from");
  auto *ck = eval->add_option("--checkpoint", checkpoint, "trained checkpoint");
  eval->add_flag("--oracle", oracle, "evaluate the solver against itself")->excludes(ck);
  check->add_option("--checkpoint", checkpoint, "report p(.) for this checkpoint");
  sweep->add_option("--widths", widths, "hidden widths")->delimiter(',');
  sweep->add_option("--trials", trials, "seeds per width")->check(CLI::PositiveNumber);
  solve->add_option("--eta", eta, "initial distribution")->delimiter(',');
  solve->add_option("--kappa", kappa, "terminal-cost parameter")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    ExperimentConfig cfg = load_experiment(config_path);
    Overrides ov;
    ov.out = out_dir;
    ov.seed = seed;
    ov.epochs = epochs;
    if (mode)
      ov.mode = sample_mode_from_string(*mode);
    apply_overrides(cfg, ov);
    cfg.validate();

    if (sample->parsed())
      return cmd_sample(cfg, threads, out);
    if (train->parsed())
      return cmd_train(cfg, dataset_or_default(cfg, dataset),
                       resume.empty() ? std::nullopt : std::optional(resume), out);
    if (eval->parsed()) {
      if (!oracle && checkpoint.empty())
        throw ConfigError("eval needs --checkpoint or --oracle");
      return cmd_eval(cfg, oracle ? std::nullopt : std::optional(checkpoint), threads, out);
    }
    if (sweep->parsed())
      return cmd_sweep(cfg, dataset_or_default(cfg, dataset), widths, trials, out);
    if (check->parsed())
      return cmd_check(cfg, checkpoint.empty() ? std::nullopt : std::optional(checkpoint), out);
    return cmd_solve(cfg, eta, kappa, out);
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError &e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError &e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

} // namespace mfg
