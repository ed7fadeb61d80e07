// Acceptance runner: one PASS/FAIL line per criterion with the measured
// values. Always exits 0 unless the runner itself cannot start; the lines are
// the result.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "../tests/oracles.hpp"
#include "eolt/experiment.hpp"
#include "eolt/gradient_suite.hpp"
#include "eolt/ops.hpp"

namespace fs = std::filesystem;
using namespace eolt;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Report lines also go to <workdir>/acceptance.txt.
std::ofstream report_file;

void report(int id, bool pass, const std::string& detail) {
  const std::string line = fmt::format("criterion {} {} {}", id, pass ? "PASS" : "FAIL", detail);
  std::cout << line << std::endl;
  if (report_file) report_file << line << std::endl;
}

Tensor random_image(std::size_t h, std::size_t w, Rng& rng) {
  Tensor x({3, h, w});
  for (double& v : x.values()) {
    const double u = rng.uniform();
    // Some pixels sit on the box faces so the [0,1] projection is exercised.
    v = u < 0.05 ? 0.0 : (u > 0.95 ? 1.0 : rng.uniform());
  }
  return x;
}

bool feasible(const Tensor& delta, const Tensor& x, double eps) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (std::abs(delta[i]) > eps + 1e-9) return false;
    const double v = x[i] + delta[i];
    if (v < 0.0 || v > 1.0) return false;
  }
  return true;
}

void gradient_suite() {
  const auto t0 = Clock::now();
  std::size_t checked = 0, skipped = 0, failed = 0;
  double worst = 0.0;
  std::string first_failure;
  for (const auto& r : run_gradient_suite()) {
    if (r.skipped) {
      ++skipped;
      continue;
    }
    ++checked;
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) {
      if (failed++ == 0) first_failure = r.stage;
    }
  }
  const double secs = seconds_since(t0);
  report(1, failed == 0 && secs <= 120.0,
         fmt::format("checked={} straight_through={} failed={} max_rel_err={:.3e} (tol 1e-5) time={:.1f}s (limit 120s){}",
                     checked, skipped, failed, worst, secs, first_failure.empty() ? "" : " first=" + first_failure));
}

void attack_feasibility() {
  const std::vector<TransformId> all(all_transforms().begin(), all_transforms().end());
  const SwapModel plain(11, SwapVariant::toy), blur(12, SwapVariant::blur_bottleneck);
  Rng rng(2024);
  int infeasible_runs = 0;
  long steps_checked = 0;
  for (int run = 0; run < 1000; ++run) {
    const Tensor x = random_image(16, 16, rng);
    AttackBudget b;
    b.epsilon = rng.uniform(0.005, 0.2);
    b.alpha = b.epsilon * rng.uniform(0.05, 1.0);
    b.steps = 1 + static_cast<int>(rng.below(12));
    b.init = rng.below(2) == 0 ? InitMode::zero : InitMode::uniform;
    const std::size_t m = 1 + rng.below(2);
    TransformSampler sampler = TransformSampler::none(m);
    switch (rng.below(3)) {
      case 0:
        break;
      case 1:
        sampler = TransformSampler::uniform(all, m);
        break;
      default:
        sampler = TransformSampler::fixed({all[rng.below(all.size())], static_cast<int>(rng.below(9))}, m);
    }
    const DiffStage& model = rng.below(2) == 0 ? static_cast<const DiffStage&>(plain) : blur;
    bool ok = true;
    Rng attack_rng = rng.child("attack", static_cast<std::uint64_t>(run));
    const auto r = pgd(model, x, sampler, b, attack_rng, [&](int, const Tensor& d, double) {
      ok = ok && feasible(d, x, b.epsilon);
      ++steps_checked;
    });
    ok = ok && feasible(r.delta, x, b.epsilon);
    for (double v : r.x_adv.values()) ok = ok && v >= 0.0 && v <= 1.0;
    if (!ok) ++infeasible_runs;
  }

  int monotone_failures = 0, ordering_failures = 0;
  double worst_drop = 0.0;
  for (int toy = 0; toy < 10; ++toy) {
    Rng trng = Rng(77).child("toy", static_cast<std::uint64_t>(toy));
    const LinearToyModel model({trng.uniform(-2, 2), trng.uniform(-2, 2), trng.uniform(-2, 2)},
                               {trng.uniform(-0.2, 0.2), trng.uniform(-0.2, 0.2), trng.uniform(-0.2, 0.2)});
    const Tensor x = random_image(8, 8, trng);
    const AttackBudget budget{0.05, 0.01, 150, InitMode::uniform};
    Rng r1 = trng.child("pgd"), r2 = trng.child("pgd");
    const auto p = pgd(model, x, TransformSampler::none(), budget, r1);
    const auto f = fgsm(model, x, TransformSampler::none(), budget, r2);
    bool monotone = true;
    for (std::size_t i = 1; i < p.loss_trace.size(); ++i)
      if (p.loss_trace[i] < p.loss_trace[i - 1]) {
        monotone = false;
        worst_drop = std::max(worst_drop, p.loss_trace[i - 1] - p.loss_trace[i]);
      }
    if (!monotone) ++monotone_failures;
    if (p.final_loss() < f.final_loss()) ++ordering_failures;
  }
  report(2, infeasible_runs == 0 && monotone_failures == 0 && ordering_failures == 0,
         fmt::format("pgd_runs=1000 steps_checked={} infeasible_runs={} (tol eps+1e-9) toy_models=10 "
                     "non_monotone={} worst_drop={:.3e} pgd150_below_fgsm={}",
                     steps_checked, infeasible_runs, monotone_failures, worst_drop, ordering_failures));
}

void cap_oracle() {
  Rng rng(31);
  double worst = 0.0;
  int cases = 0;
  for (double c : {1.0 / 10, 1.0 / 8, 1.0 / 6, 1.0 / 5}) {
    for (int trial = 0; trial < 1000; ++trial) {
      // Logit scales from flat to sharply peaked distributions.
      const double scale = std::exp(rng.uniform(-3.0, 3.0));
      Tensor logits({81});
      for (double& v : logits.values()) v = scale * rng.normal();
      const Tensor p = ops::softmax(logits);
      const auto got = cap_probabilities(p.values(), c);
      const auto want = oracle::water_fill(p.values(), c);
      for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
      ++cases;
    }
  }
  report(3, worst <= 1e-9, fmt::format("cases={} caps=1/10,1/8,1/6,1/5 max_abs_err={:.3e} (tol 1e-9)", cases, worst));
}

void bandit(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  const Catalog catalog = Catalog::full();
  TrainerConfig tc = cfg.trainer;
  tc.cap = 1.0 / 6.0;
  const std::size_t winner = 40;
  const RolloutFn rigged = [winner](std::size_t, const Trajectory& t, Rng&, const Rng&) {
    double hits = 0.0;
    for (std::size_t i : t.indices) hits += i == winner ? 1.0 : 0.0;
    return hits / static_cast<double>(t.indices.size());
  };
  std::string detail;
  int passed = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    PolicyNet net(catalog, cfg.backbone, seed);
    Rng img_rng = Rng(seed).child("bandit-image");
    const std::vector<Tensor> images = {random_image(32, 32, img_rng)};
    PolicyOptimizer opt;
    const Rng root = Rng(seed).child("bandit");
    int reached = -1;
    double prob = 0.0;
    for (int step = 1; step <= 500; ++step) {
      reinforce_step(net, opt, images, rigged, tc, tc.lr, root.child("step", static_cast<std::uint64_t>(step)));
      prob = policy_distribution(net, images[0], tc.cap)[winner];
      if (std::abs(prob - tc.cap) <= 0.01) {
        reached = step;
        break;
      }
    }
    if (reached > 0) ++passed;
    detail += fmt::format(" seed{}:{}", seed, reached > 0 ? fmt::format("updates={}", reached)
                                                           : fmt::format("not_reached(p={:.4f})", prob));
  }
  const double secs = seconds_since(t0);
  report(4, passed == 3 && secs <= 60.0,
         fmt::format("sub_policies=81 lr={} cap=1/6 tol=0.01 max_updates=500{} time={:.1f}s (limit 60s)", tc.lr,
                     detail, secs));
}

struct SeedResult {
  std::uint64_t seed = 0;
  double no_attack = 0, pgd = 0, eot = 0, eolt = 0;
  std::vector<double> curve;
  double blur_mass = 0.0;
  double blur_cols_nonblur_rows = 0.0, blur_cols_blur_rows = 0.0;
  double table_seconds = 0.0;
};

SeedResult run_seed(ExperimentConfig cfg, std::uint64_t seed, const fs::path& workdir) {
  cfg.seed = seed;
  cfg.output = (workdir / fmt::format("seed{}", seed)).string();
  SeedResult res;
  res.seed = seed;
  const auto t0 = Clock::now();
  const Experiment ex(cfg, false);
  PolicyNet policy = ex.fresh_policy();
  TrainOptions opts;
  opts.progress = [seed](const std::string& s) { std::cerr << fmt::format("[seed {}] {}\n", seed, s); };
  res.curve = ex.train_policy(policy, opts).curve;

  EvalSetup s = ex.setup();
  s.policy = &policy;
  const std::vector<TrainSpec> methods = {TrainSpec::parse("no_attack"), TrainSpec::parse("pgd"),
                                          TrainSpec::parse("eot"), TrainSpec::parse("eolt")};
  const CategoryReport table = category_table(s, methods, ex.split.test, ex.root.child("eval"), "test");
  write_text(ex.out / "categories.csv", table.to_csv());
  res.no_attack = table.table[0][7];
  res.pgd = table.table[1][7];
  res.eot = table.table[2][7];
  res.eolt = table.table[3][7];
  res.table_seconds = seconds_since(t0);

  const auto rows = export_distribution(policy, ex.images, cfg.trainer.cap);
  write_text(ex.out / "distribution.csv", distribution_csv(rows));
  res.blur_mass = category_mass(rows)[2];

  std::cerr << fmt::format("[seed {}] cross matrix\n", seed);
  const MatrixReport m = cross_matrix(ex.setup(), Catalog(cfg.transforms), ex.root.child("eval"));
  write_text(ex.out / "matrix.csv", m.to_csv());
  double sum_nb = 0.0, sum_b = 0.0;
  int n_nb = 0, n_b = 0;
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    const TrainSpec row = TrainSpec::parse(m.rows[r]);
    if (row.kind != TrainSpec::Kind::transform) continue;
    const bool blur_row = category_of(row.transform) == Category::blur;
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      if (m.cols[c] == "clean" || category_of(TrainSpec::parse(m.cols[c]).transform) != Category::blur) continue;
      (blur_row ? sum_b : sum_nb) += m.values[r][c];
      ++(blur_row ? n_b : n_nb);
    }
  }
  res.blur_cols_blur_rows = n_b > 0 ? sum_b / n_b : std::nan("");
  res.blur_cols_nonblur_rows = n_nb > 0 ? sum_nb / n_nb : std::nan("");
  return res;
}

void desk_criteria(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds, const fs::path& workdir) {
  std::vector<SeedResult> results;
  for (std::uint64_t seed : seeds) results.push_back(run_seed(cfg, seed, workdir));
  const std::size_t need = (seeds.size() * 2 + 2) / 3;

  std::size_t ordered = 0;
  double table_seconds = 0.0;
  std::string detail;
  for (const auto& r : results) {
    const bool ok = r.eolt < r.eot && r.eot < r.pgd && r.pgd < r.no_attack;
    ordered += ok ? 1 : 0;
    table_seconds += r.table_seconds;
    detail += fmt::format(" seed{}:[eolt={:.6f} eot={:.6f} pgd={:.6f} no_attack={:.6f} {}]", r.seed, r.eolt, r.eot,
                          r.pgd, r.no_attack, ok ? "ordered" : "not_ordered");
  }
  report(5, ordered >= need && table_seconds <= 1800.0,
         fmt::format("ordered_seeds={}/{} (need {}){} time={:.0f}s (limit 1800s)", ordered, results.size(), need,
                     detail, table_seconds));

  std::size_t n_catalog = 0, n_catalog_blur = 0;
  for (TransformId t : cfg.transforms) {
    ++n_catalog;
    n_catalog_blur += category_of(t) == Category::blur ? 1 : 0;
  }
  const double uniform_share = static_cast<double>(n_catalog_blur) / static_cast<double>(n_catalog);
  double mass = 0.0, nb = 0.0, b = 0.0;
  detail.clear();
  for (const auto& r : results) {
    mass += r.blur_mass;
    nb += r.blur_cols_nonblur_rows;
    b += r.blur_cols_blur_rows;
    detail += fmt::format(" seed{}:[blur_mass={:.4f} nonblur_rows={:.6f} blur_rows={:.6f}]", r.seed, r.blur_mass,
                          r.blur_cols_nonblur_rows, r.blur_cols_blur_rows);
  }
  const double k = static_cast<double>(results.size());
  mass /= k;
  nb /= k;
  b /= k;
  report(6, mass >= 2.0 * uniform_share && nb > b,
         fmt::format("mean_blur_mass={:.4f} (need >= {:.4f}, uniform share {}/{}) blur_columns: mean_nonblur_rows={:.6f} "
                     "mean_blur_rows={:.6f} (need nonblur > blur){}",
                     mass, 2.0 * uniform_share, n_catalog_blur, n_catalog, nb, b, detail));

  std::size_t rising = 0;
  detail.clear();
  for (const auto& r : results) {
    const bool ok = !r.curve.empty() && r.curve.back() >= r.curve.front();
    rising += ok ? 1 : 0;
    detail += fmt::format(" seed{}:[first={:.7g} final={:.7g}]", r.seed, r.curve.empty() ? NAN : r.curve.front(),
                          r.curve.empty() ? NAN : r.curve.back());
  }
  report(7, rising >= need,
         fmt::format("cap={:.4f} rising_seeds={}/{} (need {}){}", cfg.trainer.cap, rising, results.size(), need,
                     detail));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void determinism(const std::string& cli, const fs::path& config, const fs::path& workdir) {
  const fs::path out = workdir / "determinism";
  const std::vector<std::string> files = {"matrix.csv", "training_curve.csv", "train_log.csv", "policy.ckpt"};
  std::vector<std::vector<std::string>> runs;
  bool ran = true;
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(out);
    for (const char* sub : {"eval-matrix", "train-policy"}) {
      const std::string cmd = fmt::format("\"{}\" {} --config \"{}\" --output \"{}\" --quiet > /dev/null 2>&1", cli,
                                          sub, config.string(), out.string());
      ran = ran && std::system(cmd.c_str()) == 0;
    }
    std::vector<std::string> contents;
    for (const auto& f : files) contents.push_back(slurp(out / f));
    runs.push_back(std::move(contents));
  }
  std::string detail;
  bool same = ran;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const bool eq = !runs[0][i].empty() && runs[0][i] == runs[1][i];
    same = same && eq;
    detail += fmt::format(" {}={}", files[i], eq ? "identical" : "differs");
  }
  report(8, same, fmt::format("runs=2 config={} exit_ok={}{}", config.filename().string(), ran, detail));
}

void algebra() {
  Rng rng(99);
  double worst_sum = 0.0, worst_elem = 0.0;
  int nonzero_constant = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> r(1 + rng.below(32));
    const double offset = rng.uniform(-1e3, 1e3), spread = std::exp(rng.uniform(-8.0, 4.0));
    const bool constant = trial % 10 == 0;
    for (double& v : r) v = constant ? offset : offset + spread * rng.uniform(-1, 1);
    const auto adv = advantages(r);
    long double mean = 0.0L;
    for (double v : r) mean += v;
    mean /= static_cast<long double>(r.size());
    long double sum = 0.0L;
    for (std::size_t i = 0; i < r.size(); ++i) {
      sum += adv[i];
      worst_elem = std::max(worst_elem, static_cast<double>(std::abs(adv[i] - (r[i] - mean))));
      if (constant && adv[i] != 0.0) ++nonzero_constant;
    }
    worst_sum = std::max(worst_sum, static_cast<double>(std::abs(sum)));
  }

  const std::vector<TransformId> all(all_transforms().begin(), all_transforms().end());
  double worst_agg = 0.0;
  int nan_mismatch = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<TransformId> subset;
    std::vector<double> cells;
    const double keep = rng.uniform(0.05, 1.0);
    for (TransformId t : all)
      if (rng.uniform() < keep) {
        subset.push_back(t);
        cells.push_back(rng.uniform(-1, 1));
      }
    if (subset.empty()) {
      subset.push_back(all[rng.below(all.size())]);
      cells.push_back(rng.uniform(-1, 1));
    }
    const double clean = rng.uniform(-1, 1);
    const auto got = aggregate_categories(clean, subset, cells);
    const auto want = oracle::category_row(clean, subset, cells);
    for (std::size_t c = 0; c < got.size(); ++c) {
      if (std::isnan(want[c]) || std::isnan(got[c])) {
        nan_mismatch += std::isnan(want[c]) != std::isnan(got[c]) ? 1 : 0;
        continue;
      }
      worst_agg = std::max(worst_agg, std::abs(got[c] - want[c]));
    }
  }
  report(9, worst_sum <= 1e-9 && worst_elem <= 1e-9 && nonzero_constant == 0 && worst_agg <= 1e-12 && nan_mismatch == 0,
         fmt::format("advantage_cases=10000 max_abs_sum={:.3e} max_elem_err={:.3e} (tol 1e-9) constant_nonzero={} "
                     "aggregation_cases=10000 max_err={:.3e} (tol 1e-12) empty_category_mismatch={}",
                     worst_sum, worst_elem, nonzero_constant, worst_agg, nan_mismatch));
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  for (std::string s; std::getline(ss, s, ',');)
    if (!s.empty()) seeds.push_back(std::stoull(s));
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string desk = std::string(EOLT_CONFIG_DIR) + "/desk.ini";
  std::string smoke = std::string(EOLT_CONFIG_DIR) + "/smoke.ini";
  std::string cli = EOLT_CLI_PATH;
  std::string workdir = "acceptance_out";
  std::string seeds = "0,1,2";
  std::vector<int> only;
  app.add_option("--desk-config", desk, "Config for the desk-scale criteria")->check(CLI::ExistingFile);
  app.add_option("--smoke-config", smoke, "Config for the determinism criterion")->check(CLI::ExistingFile);
  app.add_option("--cli", cli, "Path to the eolt executable");
  app.add_option("--workdir", workdir, "Scratch output directory");
  app.add_option("--seeds", seeds, "Seeds for the desk-scale criteria");
  app.add_option("--only", only, "Run only these criteria (5, 6 and 7 run together)");
  CLI11_PARSE(app, argc, argv);

  const auto selected = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  const auto guarded = [](int id, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::exception& e) {
      report(id, false, fmt::format("error: {}", e.what()));
    }
  };
  ExperimentConfig cfg;
  try {
    cfg = ExperimentConfig::load(desk);
  } catch (const std::exception& e) {
    std::cerr << "cannot load " << desk << ": " << e.what() << '\n';
    return 1;
  }
  fs::create_directories(workdir);
  report_file.open(fs::path(workdir) / "acceptance.txt");

  if (selected(1)) guarded(1, gradient_suite);
  if (selected(2)) guarded(2, attack_feasibility);
  if (selected(3)) guarded(3, cap_oracle);
  if (selected(4)) guarded(4, [&] { bandit(cfg); });
  if (selected(5) || selected(6) || selected(7)) {
    try {
      desk_criteria(cfg, parse_seeds(seeds), workdir);
    } catch (const std::exception& e) {
      for (int id : {5, 6, 7}) report(id, false, fmt::format("error: {}", e.what()));
    }
  }
  if (selected(8)) guarded(8, [&] { determinism(cli, smoke, workdir); });
  if (selected(9)) guarded(9, algebra);
  return 0;
}
