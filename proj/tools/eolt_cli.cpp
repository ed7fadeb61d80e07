// Command-line front end: one subcommand per pipeline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "eolt/config.hpp"
#include "eolt/errors.hpp"
#include "eolt/eval.hpp"
#include "eolt/experiment.hpp"
#include "eolt/gradient_suite.hpp"
#include "eolt/io.hpp"
#include "eolt/kernels.hpp"

namespace fs = std::filesystem;
using namespace eolt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  int jobs = 0;
  bool quiet = false;
};

void progress(const GlobalOptions& g, const std::string& line) {
  if (!g.quiet) std::cerr << line << '\n';
}

ExperimentConfig resolve_config(const GlobalOptions& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(g.config_path);
  if (const char* env = std::getenv("EOLT_SEED")) {
    try {
      std::size_t used = 0;
      cfg.seed = std::stoull(env, &used);
      if (used != std::string_view(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("EOLT_SEED must be an unsigned integer, got '{}'", env));
    }
  }
  if (g.seed) cfg.seed = *g.seed;
  if (g.output) cfg.output = *g.output;
  cfg.validate();
  return cfg;
}

TrainResult train_policy(const Experiment& ex, PolicyNet& net, const GlobalOptions& g, bool write_artifacts) {
  TrainOptions opts;
  if (write_artifacts) {
    opts.log_csv = ex.out / "train_log.csv";
    opts.checkpoint_dir = ex.out / "checkpoints";
  }
  opts.progress = [&g](const std::string& s) { progress(g, s); };
  return ex.train_policy(net, opts);
}

// Loads --policy when given, otherwise trains one with the configured trainer.
PolicyNet obtain_policy(const Experiment& ex, const std::string& path, const GlobalOptions& g) {
  PolicyNet net = ex.fresh_policy();
  if (!path.empty()) {
    net.load(fs::path(path));
    return net;
  }
  progress(g, "no --policy given, training one");
  train_policy(ex, net, g, false);
  return net;
}

std::string curve_csv(const std::vector<double>& curve) {
  std::string out = "epoch,validation_reward\n";
  for (std::size_t e = 0; e < curve.size(); ++e) out += fmt::format("{},{:.9g}\n", e + 1, curve[e]);
  return out;
}

int cmd_check_gradients(const GlobalOptions& g) {
  GradientSuiteOptions opts;
  if (g.seed) opts.check.seed = *g.seed;
  std::size_t failed = 0, skipped = 0, total = 0;
  opts.on_report = [&](const GradCheckReport& r) {
    ++total;
    if (r.skipped) ++skipped;
    if (!r.passed) ++failed;
    std::cout << fmt::format("{:<28} {:>12} {}\n", r.stage,
                             r.skipped ? std::string("-") : fmt::format("{:.3e}", r.max_rel_error),
                             r.skipped ? "straight-through" : (r.passed ? "ok" : "FAIL " + r.note));
  };
  run_gradient_suite(opts);
  std::cout << fmt::format("{} stages, {} checked, {} straight-through, {} failed\n", total, total - skipped,
                           skipped, failed);
  return failed == 0 ? kExitOk : kExitRuntime;
}

int cmd_attack(const GlobalOptions& g, const std::string& method, const std::string& policy_path, bool dump) {
  TrainSpec spec;
  try {
    spec = TrainSpec::parse(method);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  Experiment ex(resolve_config(g));
  EvalSetup s = ex.setup();
  std::optional<PolicyNet> policy;
  if (spec.kind == TrainSpec::Kind::eolt) {
    policy.emplace(obtain_policy(ex, policy_path, g));
    s.policy = &*policy;
  }
  const auto results = perturb_traced(s, spec, ex.root.child("attack"));
  const fs::path dir = ex.out / "attack";
  fs::create_directories(dir);
  std::string trace = "image,step,loss\n";
  double final_sum = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const std::string& id = ex.records[i].id;
    save_ppm(r.x_adv, dir / (id + "_adv.ppm"));
    for (std::size_t k = 0; k < r.loss_trace.size(); ++k) trace += fmt::format("{},{},{:.9g}\n", id, k, r.loss_trace[k]);
    if (!r.loss_trace.empty()) final_sum += r.final_loss();
    if (dump) {
      save_ppm(ex.images[i], dir / (id + "_x.ppm"));
      save_ppm((*ex.model)(ex.images[i]), dir / (id + "_fx.ppm"));
      save_ppm((*ex.model)(r.x_adv), dir / (id + "_fxadv.ppm"));
    }
  }
  write_text(dir / "loss_trace.csv", trace);
  std::cout << fmt::format("{}: {} images, mean final objective {:.6g}\n", spec.name(), results.size(),
                           final_sum / static_cast<double>(results.size()));
  return kExitOk;
}

int cmd_train_policy(const GlobalOptions& g) {
  Experiment ex(resolve_config(g));
  PolicyNet net = ex.fresh_policy();
  const TrainResult res = train_policy(ex, net, g, true);
  net.save(ex.out / "policy.ckpt");
  write_text(ex.out / "training_curve.csv", curve_csv(res.curve));
  for (std::size_t e = 0; e < res.curve.size(); ++e)
    std::cout << fmt::format("epoch {} validation reward {:.9g}\n", e + 1, res.curve[e]);
  return kExitOk;
}

int cmd_eval_matrix(const GlobalOptions& g) {
  Experiment ex(resolve_config(g));
  const MatrixReport rep = cross_matrix(ex.setup(), Catalog(ex.cfg.transforms), ex.root.child("eval"),
                                        [&g](const std::string& s) { progress(g, s); });
  write_text(ex.out / "matrix.csv", rep.to_csv());
  write_text(ex.out / "matrix.svg", rep.to_svg());
  std::cout << fmt::format("wrote {} ({} x {})\n", (ex.out / "matrix.csv").string(), rep.rows.size(),
                           rep.cols.size());
  return kExitOk;
}

int cmd_eval_categories(const GlobalOptions& g, const std::string& policy_path) {
  Experiment ex(resolve_config(g));
  const PolicyNet policy = obtain_policy(ex, policy_path, g);
  EvalSetup s = ex.setup();
  s.policy = &policy;
  const std::vector<TrainSpec> methods = {TrainSpec::parse("no_attack"), TrainSpec::parse("pgd"),
                                          TrainSpec::parse("eot"), TrainSpec::parse("eolt")};
  const CategoryReport rep = category_table(s, methods, ex.split.test, ex.root.child("eval"), "test");
  write_text(ex.out / "categories.csv", rep.to_csv());
  std::cout << rep.to_csv();
  return kExitOk;
}

int cmd_eval_splits(const GlobalOptions& g) {
  Experiment ex(resolve_config(g));
  const SplitReports rep = split_eval(ex.setup(), ex.cfg.split, ex.cfg.trainer, ex.cfg.backbone,
                                      ex.root.child("splits"), [&g](const std::string& s) { progress(g, s); });
  const fs::path dir = ex.out / "splits";
  write_text(dir / "train.csv", rep.train.to_csv());
  write_text(dir / "val.csv", rep.val.to_csv());
  write_text(dir / "test.csv", rep.test.to_csv());
  write_text(dir / "training_curve.csv", curve_csv(rep.training_curve));
  std::cout << rep.test.to_csv();
  return kExitOk;
}

int cmd_export_dist(const GlobalOptions& g, const std::string& policy_path) {
  Experiment ex(resolve_config(g));
  const PolicyNet policy = obtain_policy(ex, policy_path, g);
  const auto rows = export_distribution(policy, ex.images, ex.cfg.trainer.cap);
  write_text(ex.out / "distribution.csv", distribution_csv(rows));
  write_text(ex.out / "distribution.svg", distribution_svg(rows));
  const auto mass = category_mass(rows);
  for (std::size_t c = 0; c < kCategories.size(); ++c)
    std::cout << fmt::format("{:<12} {:.4f}\n", category_name(kCategories[c]), mass[c]);
  return kExitOk;
}

int cmd_sweep(const GlobalOptions& g, const std::string& parameter, const std::string& values) {
  ExperimentConfig cfg = resolve_config(g);
  if (!parameter.empty()) {
    const auto p = parse_sweep_parameter(parameter);
    if (!p) throw ConfigError("unknown sweep parameter '" + parameter + "'");
    cfg.sweep_parameter = *p;
  }
  if (!values.empty()) {
    std::vector<std::string> list;
    std::stringstream ss(values);
    for (std::string v; std::getline(ss, v, ',');)
      if (!v.empty()) list.push_back(v);
    cfg.sweep_values = list;
  }
  Experiment ex(cfg);
  SweepBase base;
  base.setup = ex.setup();
  base.trainer = cfg.trainer;
  base.backbone = cfg.backbone;
  base.policy_seed = cfg.seed;
  base.perturbation = ex.split.train;
  base.validation = ex.split.val;
  base.test = ex.split.test;
  const auto points = sweep(cfg.sweep_parameter, cfg.sweep_values, base, ex.root.child("sweep"),
                            [&g](const std::string& s) { progress(g, s); });
  const std::string csv = sweep_csv(cfg.sweep_parameter, points);
  write_text(ex.out / "sweep.csv", csv);
  std::cout << csv;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned transformation policies for robust protective perturbations"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config_path, "INI experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Overrides the config seed and EOLT_SEED");
  app.add_option("--output", g.output, "Output directory");
  app.add_option("--jobs", g.jobs, "Worker threads (default: all processors)")->check(CLI::NonNegativeNumber);
  app.add_flag("--quiet", g.quiet, "No progress output");

  std::string method = "pgd", policy_path, sweep_param, sweep_values;
  bool dump = false;
  auto* attack = app.add_subcommand("attack", "Perturb the dataset with one generation method");
  attack->add_option("--method", method, "pgd, eot, eolt or a transformation name");
  attack->add_option("--policy", policy_path, "Policy checkpoint for --method eolt");
  attack->add_flag("--dump", dump, "Also write x, F(x) and F(x_adv) images");
  auto* train_cmd = app.add_subcommand("train-policy", "Train the transformation policy");
  auto* matrix = app.add_subcommand("eval-matrix", "Cross-transformation similarity matrix");
  auto* categories = app.add_subcommand("eval-categories", "Category table for no_attack, pgd, eot and eolt");
  categories->add_option("--policy", policy_path, "Policy checkpoint (trained when omitted)");
  auto* splits = app.add_subcommand("eval-splits", "Train and evaluate on the configured split");
  auto* dist = app.add_subcommand("export-dist", "Export the learned distribution");
  dist->add_option("--policy", policy_path, "Policy checkpoint (trained when omitted)");
  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep one parameter");
  sweep_cmd->add_option("--parameter", sweep_param, "pgd_steps, cap, lr or backbone");
  sweep_cmd->add_option("--values", sweep_values, "Comma-separated values");
  auto* grads = app.add_subcommand("check-gradients", "Finite-difference check of every differentiable stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  if (g.jobs > 0) kernels::set_worker_count(g.jobs);
  try {
    if (*grads) return cmd_check_gradients(g);
    if (*attack) return cmd_attack(g, method, policy_path, dump);
    if (*train_cmd) return cmd_train_policy(g);
    if (*matrix) return cmd_eval_matrix(g);
    if (*categories) return cmd_eval_categories(g, policy_path);
    if (*splits) return cmd_eval_splits(g);
    if (*dist) return cmd_export_dist(g, policy_path);
    if (*sweep_cmd) return cmd_sweep(g, sweep_param, sweep_values);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
