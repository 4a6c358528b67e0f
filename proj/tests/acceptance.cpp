// Acceptance run: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number (default: all). The report is also written to
// acceptance_report.txt in the working directory.

#include "mfg/commands.hpp"
#include "mfg/experiment.hpp"
#include "mfg/pipeline.hpp"
#include "oracles.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace mfg;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kC1MaxIterations = 200;
constexpr double kC1Residual = 1e-8;
constexpr double kC1MassDrift = 1e-14;
constexpr double kC1SolveSeconds = 1.0;
constexpr double kC2GridStep = 2e-5;
constexpr double kC2Seconds = 10.0;
constexpr double kC3FdStep = 1e-6;
constexpr double kC3RelError = 1e-5;
constexpr double kC3Floor = 1e-6;
constexpr double kC3Seconds = 30.0;
constexpr double kC4MeanTestLoss = 2.5e-3;
constexpr double kC4TrialSeconds = 45 * 60;
constexpr double kReferenceTestLoss[] = {0.000831, 0.00200, 0.00527}; // d = 3, 4, 5
constexpr double kC5Factor = 3.0;
constexpr double kC7OracleMu = 1e-12;
constexpr double kC7NetworkMu = 0.05;
constexpr double kC8RatioSpread = 20.0;
constexpr double kC10Lower = 0.3, kC10Upper = 0.7;
constexpr std::uint64_t kSeeds[] = {0, 1, 2};

const fs::path kConfigs = MFGFLOW_CONFIG_DIR;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::ostringstream report;
bool all_passed = true;

void line(const std::string &text) {
  std::cout << text << std::endl;
  report << text << "\n";
}

void verdict(int id, bool ok, const std::string &detail) {
  all_passed = all_passed && ok;
  line(std::string(ok ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + ": " + detail);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

struct Trial {
  double test_loss = 0.0;
  double train_loss = 0.0;
  double seconds = 0.0;
  Checkpoint checkpoint;
};

/// One full pipeline run of a preset: dataset and training both seeded by `seed`.
class TrialCache {
public:
  const Dataset &dataset(const std::string &preset, std::uint64_t seed) {
    const auto key = std::pair{preset, seed};
    auto it = datasets_.find(key);
    if (it != datasets_.end())
      return it->second;
    ExperimentConfig cfg = load_experiment((kConfigs / (preset + ".json")).string());
    GenerationOptions opts{cfg.sampling.n, cfg.sampling.mode, seed, cfg.solver, 1};
    return datasets_.emplace(key, generate_dataset(cfg.model, cfg.grid(), opts).dataset)
        .first->second;
  }

  const Trial &trial(const std::string &preset, std::uint64_t seed, std::size_t width = 0) {
    ExperimentConfig cfg = load_experiment((kConfigs / (preset + ".json")).string());
    if (width == 0)
      width = cfg.training.width;
    const auto key = std::tuple{preset, seed, width};
    auto it = trials_.find(key);
    if (it != trials_.end())
      return it->second;
    const Dataset &ds = dataset(preset, seed);
    cfg.training.seed = seed;
    cfg.training.width = width;
    const auto t0 = Clock::now();
    TrainResult r = train_flow_map(ds, make_model(cfg.model)->param_box(), cfg.training);
    Trial t{r.final_test_loss, r.final_train_loss, seconds_since(t0), std::move(r.checkpoint)};
    line("  trial " + preset + " W=" + std::to_string(width) + " seed=" + std::to_string(seed) +
         ": test " + fmt(t.test_loss) + ", train " + fmt(t.train_loss) + ", " +
         fmt(t.seconds) + " s");
    return trials_.emplace(key, std::move(t)).first->second;
  }

  double mean_test(const std::string &preset, std::size_t width = 0) {
    double sum = 0.0;
    for (std::uint64_t s : kSeeds)
      sum += trial(preset, s, width).test_loss;
    return sum / static_cast<double>(std::size(kSeeds));
  }

private:
  std::map<std::pair<std::string, std::uint64_t>, Dataset> datasets_;
  std::map<std::tuple<std::string, std::uint64_t, std::size_t>, Trial> trials_;
};

TrialCache cache;

QuadraticConfig quad3() { return QuadraticConfig{}; }

// ---------------------------------------------------------------- criteria

void criterion1() {
  const auto model = make_model(quad3());
  const TimeGrid grid(1.0, 100);
  PicardConfig cfg;
  cfg.tol = 1e-9;
  std::size_t worst_iter = 0, failures = 0;
  double worst_res = 0.0, worst_mass = 0.0, worst_time = 0.0;
  const std::size_t instances = 50;
  for (std::size_t i = 0; i < instances; ++i) {
    nn::Rng rng = sample_rng(2024, i, 0);
    const SimplexDist eta = sample_simplex(rng, 3);
    const Vec kappa = sample_kappa(rng, model->param_box());
    const auto t0 = Clock::now();
    const PicardResult r = picard_solve(*model, eta, kappa, grid, cfg);
    worst_time = std::max(worst_time, seconds_since(t0));
    failures += r.converged ? 0 : 1;
    worst_iter = std::max(worst_iter, r.iterations);
    const SystemResidual res = discretization_residual(*model, kappa, eta, r.solution, cfg.hjb);
    worst_res = std::max({worst_res, res.hjb, res.kfp, res.terminal, res.initial});
    worst_mass = std::max(worst_mass, res.mass);
  }
  const bool ok = failures == 0 && static_cast<double>(worst_iter) <= kC1MaxIterations &&
                  worst_res <= kC1Residual && worst_mass <= kC1MassDrift &&
                  worst_time < kC1SolveSeconds;
  verdict(1, ok,
          std::to_string(instances) + " solves, d=3 M=100: " + std::to_string(failures) +
              " unconverged, max iterations " + std::to_string(worst_iter) + " (<= 200), residual " +
              fmt(worst_res) + " (<= 1e-8), mass drift " + fmt(worst_mass) +
              " (<= 1e-14), slowest solve " + fmt(worst_time) + " s (< 1 s)");
}

void criterion2() {
  const QuadraticConfig cfg = quad3();
  nn::Rng rng(77);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  std::uniform_int_distribution<std::size_t> state(0, 2);
  double worst = 0.0;
  const auto t0 = Clock::now();
  for (int i = 0; i < 1000; ++i) {
    const std::size_t x = state(rng);
    Vec p(3);
    for (auto &v : p)
      v = u(rng);
    p[static_cast<Eigen::Index>(x)] = 0.0;
    const Vec a = quadratic_selector(cfg, x, p);
    for (Eigen::Index y = 0; y < 3; ++y)
      if (static_cast<std::size_t>(y) != x)
        worst = std::max(worst, std::abs(a[y] - oracle::grid_argmin_rate(cfg.b, p[y], cfg.action_lower,
                                                                          cfg.action_upper, kC2GridStep)));
  }
  const double secs = seconds_since(t0);
  verdict(2, worst <= kC2GridStep && secs < kC2Seconds,
          "1000 random p: max |closed form - grid| " + fmt(worst) + " (<= 2e-5), " + fmt(secs) +
              " s (< 10 s)");
}

void criterion3() {
  nn::Rng rng(99);
  std::uniform_int_distribution<std::size_t> width(2, 6), depth(1, 3), io(1, 4);
  std::normal_distribution<double> normal;
  double worst = 0.0, worst_at = 0.0;
  std::size_t networks = 0, resampled = 0, biggest = 0;
  const auto t0 = Clock::now();
  while (networks < 20) {
    std::vector<std::size_t> sizes{io(rng)};
    const std::size_t L = depth(rng);
    for (std::size_t l = 0; l < L; ++l)
      sizes.push_back(width(rng));
    sizes.push_back(io(rng));
    nn::MlpParams p = nn::init_params(rng, sizes);
    for (auto &b : p.biases)
      for (auto &v : b)
        v = 0.1 * normal(rng);
    if (p.parameter_count() > 200)
      continue;
    nn::Matrix x(static_cast<Eigen::Index>(sizes.front()), 4), y(static_cast<Eigen::Index>(sizes.back()), 4);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      x.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < y.size(); ++i)
      y.data()[i] = normal(rng);
    if (nn::min_preactivation_magnitude(p, x) < 1e-6) {
      ++resampled; // a ReLU kink within reach of the difference stencil
      continue;
    }
    for (nn::LossKind kind : {nn::LossKind::L2, nn::LossKind::SmoothL1}) {
      const auto g = oracle::check_gradient(p, x, y, kind, kC3FdStep, kC3Floor);
      if (g.max_relative_error > worst) {
        worst = g.max_relative_error;
        worst_at = g.worst_analytic;
      }
    }
    biggest = std::max(biggest, p.parameter_count());
    ++networks;
  }
  const double secs = seconds_since(t0);
  verdict(3, worst < kC3RelError && secs < kC3Seconds,
          "20 networks (<= " + std::to_string(biggest) + " params, " + std::to_string(resampled) +
              " resampled near a kink), L2 and SmoothL1: max relative error " + fmt(worst) +
              " at a coordinate of size " + fmt(std::abs(worst_at)) + " (< 1e-5, denominator floor 1e-6), " + fmt(secs) + " s (< 30 s)");
}

void criterion4() {
  const double mean = cache.mean_test("quad-d3");
  double slowest = 0.0;
  for (std::uint64_t s : kSeeds)
    slowest = std::max(slowest, cache.trial("quad-d3", s).seconds);
  verdict(4, mean <= kC4MeanTestLoss && slowest <= kC4TrialSeconds,
          "quad-d3 mean test loss over 3 seeds " + fmt(mean) + " (<= 2.5e-3; reference 0.000831), "
          "slowest trial " + fmt(slowest / 60) + " min (<= 45 min)");
}

void criterion5() {
  const char *presets[] = {"quad-d3", "quad-d4", "quad-d5"};
  double means[3];
  bool ok = true;
  std::string detail;
  for (int i = 0; i < 3; ++i) {
    means[i] = cache.mean_test(presets[i]);
    ok = ok && means[i] <= kC5Factor * kReferenceTestLoss[i];
    detail += std::string(i ? ", " : "") + "d=" + std::to_string(i + 3) + " " + fmt(means[i]) +
              " (<= " + fmt(kC5Factor * kReferenceTestLoss[i]) + ")";
  }
  const bool increasing = means[0] < means[1] && means[1] < means[2];
  verdict(5, ok && increasing, detail + (increasing ? ", strictly increasing" : ", NOT strictly increasing"));
  line("SKIPPED criterion 5 extension: d=10 row (reference 0.0208, tolerance 5x) not run on this "
       "single-core host; run the quad-d10 preset to check it");
}

void criterion6() {
  const std::size_t widths[] = {32, 64, 128};
  double means[3];
  std::string detail;
  for (int i = 0; i < 3; ++i) {
    means[i] = cache.mean_test("quad-d3", widths[i]);
    detail += std::string(i ? ", " : "") + "W=" + std::to_string(widths[i]) + " " + fmt(means[i]);
  }
  const bool ok = means[0] >= means[1] && means[1] >= means[2];
  verdict(6, ok, "d=3 mean test loss over 3 seeds: " + detail + (ok ? ", non-increasing" : ", NOT non-increasing"));
}

void criterion7() {
  const ExperimentConfig cfg = load_experiment((kConfigs / "quad-d3.json").string());
  const auto model = make_model(cfg.model);
  const TimeGrid grid = cfg.grid();
  const auto pairs = sample_eval_pairs(*model, 10, 0x5eed7);
  const SolverOracle oracle(model, cfg.solver);
  const EvalReport exact = evaluate_reconstruction(oracle, *model, grid, pairs, cfg.solver);
  const NetworkPredictor net =
      NetworkPredictor::from_checkpoint(cache.trial("quad-d3", kSeeds[0]).checkpoint, cfg.model, grid);
  const EvalReport learned = evaluate_reconstruction(net, *model, grid, pairs, cfg.solver);
  const bool ok = exact.skipped.empty() && learned.skipped.empty() && exact.pairs.size() == 10 &&
                  exact.max_mu_error <= kC7OracleMu && learned.max_mu_error <= kC7NetworkMu;
  verdict(7, ok,
          "10 fresh pairs: oracle sup|mu_hat - mu| " + fmt(exact.max_mu_error) +
              " (<= 1e-12); criterion-4 network sup|mu_hat - mu| " + fmt(learned.max_mu_error) +
              " (<= 0.05), sup|u - u_hat| " + fmt(learned.max_sup_error));
}

void criterion8() {
  const auto model = make_model(quad3());
  const TimeGrid grid(1.0, 100);
  const double scales[] = {1e-1, 1e-2, 1e-3};
  nn::Rng rng(808);
  std::normal_distribution<double> normal;
  bool ok = true;
  double worst_spread = 0.0;
  const std::size_t bases = 5;
  for (std::size_t b = 0; b < bases; ++b) {
    SimplexDist eta = sample_simplex(rng, 3);
    while (eta.probs().minCoeff() < 0.15)
      eta = sample_simplex(rng, 3);
    Vec kappa = Vec::Constant(3, 0.1) + 0.8 * sample_kappa(rng, model->param_box());
    Vec v(3), w(3);
    for (Eigen::Index i = 0; i < 3; ++i) {
      v[i] = normal(rng);
      w[i] = normal(rng);
    }
    v.array() -= v.mean();
    v /= v.cwiseAbs().maxCoeff();
    w /= w.cwiseAbs().maxCoeff();
    std::vector<StabilityPair> pairs;
    for (double s : scales)
      pairs.push_back({eta, kappa, SimplexDist(Vec(eta.probs() + s * v)), Vec(kappa + s * w)});
    const auto rows = stability_probe(*model, pairs, grid, PicardConfig{});
    for (auto ratio : {&StabilityRow::u_ratio, &StabilityRow::mu_ratio}) {
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
      for (const auto &r : rows) {
        const double q = (r.*ratio)();
        ok = ok && std::isfinite(q) && q > 0.0;
        lo = std::min(lo, q);
        hi = std::max(hi, q);
      }
      worst_spread = std::max(worst_spread, hi / lo);
    }
    for (std::size_t i = 1; i < rows.size(); ++i)
      ok = ok && rows[i].u_distance < rows[i - 1].u_distance &&
           rows[i].mu_distance < rows[i - 1].mu_distance;
  }
  ok = ok && worst_spread < kC8RatioSpread;
  verdict(8, ok,
          std::to_string(bases) + " base pairs at scales 1e-1/1e-2/1e-3: worst ratio spread " +
              fmt(worst_spread) + " (< 20), output distances " +
              (ok ? "shrink with the input" : "checked"));
}

std::string sha256_file(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

void criterion9(const fs::path &work) {
  std::ostringstream sink;
  std::string digests[2][2];
  bool ran = true;
  for (int run = 0; run < 2; ++run) {
    ExperimentConfig cfg = load_experiment((kConfigs / "quad-d3.json").string());
    Overrides ov;
    ov.out = (work / ("determinism_" + std::to_string(run))).string();
    ov.epochs = 20;
    apply_overrides(cfg, ov);
    ran = ran && cmd_sample(cfg, run == 0 ? 1 : 2, sink) == kExitOk;
    ran = ran && cmd_train(cfg, cfg.output + "/dataset.jsonl", std::nullopt, sink) == kExitOk;
    digests[run][0] = sha256_file(fs::path(cfg.output) / "dataset.jsonl");
    digests[run][1] = sha256_file(fs::path(cfg.output) / "checkpoint.bin");
  }
  const bool ok = ran && digests[0][0] == digests[1][0] && digests[0][1] == digests[1][1];
  verdict(9, ok,
          "quad-d3 sample (1 vs 2 threads) + train (20 epochs) rerun: dataset " +
              digests[0][0].substr(0, 16) + (digests[0][0] == digests[1][0] ? " == " : " != ") +
              digests[1][0].substr(0, 16) + ", checkpoint " + digests[0][1].substr(0, 16) +
              (digests[0][1] == digests[1][1] ? " == " : " != ") + digests[1][1].substr(0, 16));
}

void criterion10() {
  const auto model = make_model(quad3());
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    nn::Rng rng = sample_rng(1010, i, 0);
    const SimplexDist eta = sample_simplex(rng, 3);
    const Vec kappa = sample_kappa(rng, model->param_box());
    RowMajorMatrix u[3];
    for (std::size_t r = 0; r < 3; ++r)
      u[r] = picard_solve(*model, eta, kappa, TimeGrid(1.0, 100u << r), PicardConfig{}).solution.u;
    auto gap = [&](std::size_t r) {
      double g = 0.0;
      for (Eigen::Index j = 0; j < u[r].rows(); ++j)
        g = std::max(g, (u[r].row(j) - u[r + 1].row(2 * j)).cwiseAbs().maxCoeff());
      return g;
    };
    const double ratio = gap(1) / gap(0);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  verdict(10, lo >= kC10Lower && hi <= kC10Upper,
          "5 instances, |u_200 - u_400| / |u_100 - u_200| in [" + fmt(lo) + ", " + fmt(hi) +
              "] (within [0.3, 0.7])");
}

void cyber_note() {
  const auto model = make_model(CyberConfig{});
  const TimeGrid grid(model->horizon(), 100);
  std::size_t converged = 0;
  double worst_res = 0.0, worst_mass = 0.0;
  const std::size_t instances = 200;
  for (std::size_t i = 0; i < instances; ++i) {
    nn::Rng rng = sample_rng(31337, i, 0);
    const SimplexDist eta = sample_simplex(rng, 4);
    const Vec kappa = sample_kappa(rng, model->param_box());
    const PicardResult r = picard_solve(*model, eta, kappa, grid, PicardConfig{});
    const SystemResidual res = discretization_residual(*model, kappa, eta, r.solution);
    worst_mass = std::max(worst_mass, res.mass);
    if (r.converged) {
      ++converged;
      worst_res = std::max(worst_res, res.max());
    }
  }
  line("NOTE cybersecurity model: reproducible only qualitatively, the rate constants are "
       "implementation baselines. Default config, M=100: " + std::to_string(converged) + "/" +
       std::to_string(instances) + " random pairs converge (the rest oscillate between bang-bang "
       "controls and are resampled during generation), residual of converged " + fmt(worst_res) +
       ", mass drift " + fmt(worst_mass));
}

} // namespace

int main(int argc, char **argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i)
    selected.insert(std::stoi(argv[i]));
  auto want = [&](int id) { return selected.empty() || selected.count(id) > 0; };

  const fs::path work = fs::temp_directory_path() / ("mfgflow_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);
  const auto t0 = Clock::now();
  try {
    if (want(1)) criterion1();
    if (want(2)) criterion2();
    if (want(3)) criterion3();
    if (want(10)) criterion10();
    if (want(8)) criterion8();
    if (want(9)) criterion9(work);
    if (want(4)) criterion4();
    if (want(7)) criterion7();
    if (want(5)) criterion5();
    if (want(6)) criterion6();
    if (selected.empty()) cyber_note();
  } catch (const std::exception &e) {
    all_passed = false;
    line(std::string("FAIL acceptance aborted: ") + e.what());
  }
  line("total " + fmt(seconds_since(t0) / 60) + " min, " + (all_passed ? "all selected criteria pass" : "FAILURES present"));
  fs::remove_all(work);
  std::ofstream("acceptance_report.txt") << report.str();
  return all_passed ? 0 : 1;
}
