#include "eolt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "eolt/errors.hpp"
#include "parallel.hpp"

namespace eolt {

// ---------------------------------------------------------------- specs

TrainSpec TrainSpec::parse(std::string_view name) {
  if (name == "no_attack") return {Kind::no_attack};
  if (name == "pgd_clean" || name == "pgd") return {Kind::pgd_clean};
  if (name == "eot") return {Kind::eot};
  if (name == "eolt") return {Kind::eolt};
  if (auto t = parse_transform(name)) return {Kind::transform, *t};
  throw std::invalid_argument("unknown train spec '" + std::string(name) + "'");
}

std::string TrainSpec::name() const {
  switch (kind) {
    case Kind::no_attack: return "no_attack";
    case Kind::pgd_clean: return "pgd_clean";
    case Kind::transform: return std::string(transform_name(transform));
    case Kind::eot: return "eot";
    case Kind::eolt: return "eolt";
  }
  return "?";
}

// ---------------------------------------------------------------- perturb and score

namespace {

void check_setup(const EvalSetup& s) {
  if (!s.model || !s.embedder) throw std::invalid_argument("evaluation needs a swap model and an embedder");
  if (s.images.empty()) throw std::invalid_argument("evaluation needs at least one image");
  if (s.magnitudes.empty()) throw std::invalid_argument("evaluation needs at least one magnitude");
}

std::vector<std::vector<Tensor>> all_adv(const EvalSetup& setup, const std::vector<TrainSpec>& methods,
                                         const Rng& rng) {
  std::vector<std::vector<Tensor>> out;
  for (const auto& m : methods) out.push_back(perturb_images(setup, m, rng));
  return out;
}

}  // namespace

std::vector<AttackResult> perturb_traced(const EvalSetup& setup, const TrainSpec& spec, const Rng& rng) {
  check_setup(setup);
  std::optional<TransformSampler> sampler;
  switch (spec.kind) {
    case TrainSpec::Kind::no_attack: break;
    case TrainSpec::Kind::pgd_clean: sampler = TransformSampler::none(setup.samples_per_step); break;
    case TrainSpec::Kind::transform:
      sampler = TransformSampler::uniform({spec.transform}, setup.samples_per_step);
      break;
    case TrainSpec::Kind::eot:
      if (setup.eot_transforms.empty()) throw std::invalid_argument("eot row needs a perturbation set");
      sampler = TransformSampler::uniform(setup.eot_transforms, setup.samples_per_step);
      break;
    case TrainSpec::Kind::eolt:
      if (!setup.policy) throw std::invalid_argument("eolt row requires a trained policy");
      break;
  }
  std::vector<AttackResult> out(setup.images.size());
  detail::parallel_jobs(setup.images.size(), [&](std::size_t i) {
    const Tensor& x = setup.images[i];
    Rng r = rng.child("attack", i);
    if (spec.kind == TrainSpec::Kind::no_attack) {
      out[i].x_adv = x;
      out[i].delta = Tensor::zeros_like(x);
    } else if (spec.kind == TrainSpec::Kind::eolt) {
      out[i] = eolt_attack(*setup.model, x, *setup.policy, setup.cap, setup.budget, r, setup.samples_per_step);
    } else {
      out[i] = pgd(*setup.model, x, *sampler, setup.budget, r);
    }
  });
  return out;
}

std::vector<Tensor> perturb_images(const EvalSetup& setup, const TrainSpec& spec, const Rng& rng) {
  std::vector<Tensor> out;
  for (auto& r : perturb_traced(setup, spec, rng)) out.push_back(std::move(r.x_adv));
  return out;
}

double score_images(const EvalSetup& setup, const std::vector<Tensor>& adv, std::optional<TransformId> test,
                    const Rng& rng) {
  check_setup(setup);
  if (adv.size() != setup.images.size()) throw std::invalid_argument("score_images: image count mismatch");
  std::vector<double> per_image(adv.size());
  detail::parallel_jobs(adv.size(), [&](std::size_t i) {
    const Tensor source = setup.embedder->embed(setup.images[i]);
    auto sim = [&](const Tensor& input) { return cosine(setup.embedder->embed((*setup.model)(input)), source); };
    if (!test) {
      per_image[i] = sim(adv[i]);
      return;
    }
    double acc = 0.0;
    for (int m : setup.magnitudes) {
      Rng r = rng.child(fmt::format("test/{}/{}", transform_name(*test), m), i);
      acc += sim(apply_image(adv[i], {*test, m}, r));
    }
    per_image[i] = acc / static_cast<double>(setup.magnitudes.size());
  });
  return std::accumulate(per_image.begin(), per_image.end(), 0.0) / static_cast<double>(per_image.size());
}

EvalRecord eval_cell(const EvalSetup& setup, const TrainSpec& spec, std::optional<TransformId> test,
                     const Rng& rng) {
  const auto adv = perturb_images(setup, spec, rng.child("perturb"));
  EvalRecord rec;
  rec.train_spec = spec.name();
  rec.test_spec = test ? std::string(transform_name(*test)) : "clean";
  rec.mean_id_sim = score_images(setup, adv, test, rng.child("score"));
  rec.n_images = setup.images.size();
  if (test) rec.magnitudes_used = setup.magnitudes;
  return rec;
}

// ---------------------------------------------------------------- matrix

namespace {

std::string join_ints(const std::vector<int>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? std::string(1, sep) : "") + std::to_string(v[i]);
  return out;
}

// Eight-step ramp from dark purple to yellow.
std::string ramp_colour(double t) {
  static const char* kRamp[] = {"#440154", "#46327e", "#365c8d", "#277f8e",
                                "#1fa187", "#4ac16d", "#a0da39", "#fde725"};
  const int k = std::clamp(static_cast<int>(t * 8.0), 0, 7);
  return kRamp[k];
}

}  // namespace

std::string MatrixReport::to_csv() const {
  std::string out = fmt::format("# fingerprint={} magnitudes={}\n", fingerprint, join_ints(magnitudes, ';'));
  out += "train\\test";
  for (const auto& c : cols) out += "," + c;
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += rows[r];
    for (double v : values[r]) out += fmt::format(",{:.6f}", v);
    out += "\n";
  }
  return out;
}

std::string MatrixReport::to_svg() const {
  const int cell = 34, left = 90, top = 90;
  const int width = left + cell * static_cast<int>(cols.size()) + 10;
  const int height = top + cell * static_cast<int>(rows.size()) + 10;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& row : values)
    for (double v : row) lo = std::min(lo, v), hi = std::max(hi, v);
  const double span = hi > lo ? hi - lo : 1.0;
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"monospace\" "
      "font-size=\"8\">\n",
      width, height);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const int x = left + cell * static_cast<int>(c) + cell / 2;
    out += fmt::format("<text x=\"{}\" y=\"{}\" transform=\"rotate(-60 {} {})\">{}</text>\n", x, top - 4, x, top - 4,
                       cols[c]);
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int y = top + cell * static_cast<int>(r);
    out += fmt::format("<text x=\"2\" y=\"{}\">{}</text>\n", y + cell / 2 + 3, rows[r]);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const int x = left + cell * static_cast<int>(c);
      const double t = (values[r][c] - lo) / span;
      out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>", x, y, cell, cell,
                         ramp_colour(t));
      out += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{:.2f}</text>\n", x + 4, y + cell / 2 + 3,
                         t > 0.6 ? "black" : "white", values[r][c]);
    }
  }
  out += "</svg>\n";
  return out;
}

MatrixReport cross_matrix(const EvalSetup& setup, const Catalog& catalog, const Rng& rng,
                          const std::function<void(const std::string&)>& progress) {
  MatrixReport rep;
  rep.fingerprint = setup.fingerprint;
  rep.magnitudes = setup.magnitudes;
  std::vector<TrainSpec> rows = {{TrainSpec::Kind::no_attack}, {TrainSpec::Kind::pgd_clean}};
  for (TransformId t : catalog.entries()) rows.push_back({TrainSpec::Kind::transform, t});
  rep.cols.emplace_back("clean");
  for (TransformId t : catalog.entries()) rep.cols.emplace_back(transform_name(t));

  const Rng perturb_rng = rng.child("perturb"), score_rng = rng.child("score");
  for (const auto& spec : rows) {
    rep.rows.push_back(spec.name());
    const auto adv = perturb_images(setup, spec, perturb_rng);
    std::vector<double> line{score_images(setup, adv, std::nullopt, score_rng)};
    for (TransformId t : catalog.entries()) line.push_back(score_images(setup, adv, t, score_rng));
    rep.values.push_back(std::move(line));
    if (progress) progress(fmt::format("row {}/{} {}", rep.rows.size(), rows.size(), spec.name()));
  }
  return rep;
}

// ---------------------------------------------------------------- category tables

std::array<double, 8> aggregate_categories(double clean, const std::vector<TransformId>& transforms,
                                           const std::vector<double>& cells) {
  if (transforms.size() != cells.size()) throw std::invalid_argument("aggregate_categories: size mismatch");
  std::array<double, 8> row;
  row[0] = clean;
  double overall = 0.0;
  int used = 0;
  for (std::size_t c = 0; c < kCategories.size(); ++c) {
    double acc = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < transforms.size(); ++k) {
      if (category_of(transforms[k]) == kCategories[c]) {
        acc += cells[k];
        ++n;
      }
    }
    row[c + 1] = n ? acc / n : std::numeric_limits<double>::quiet_NaN();
    if (n) {
      overall += row[c + 1];
      ++used;
    }
  }
  row[7] = used ? overall / used : std::numeric_limits<double>::quiet_NaN();
  return row;
}

std::string CategoryReport::to_csv() const {
  std::string out = fmt::format("# set={} transforms={} fingerprint={} magnitudes={}\n", label, transforms.size(),
                                fingerprint, join_ints(magnitudes, ';'));
  out += "method";
  for (auto c : kCategoryColumns) out += fmt::format(",{}", c);
  out += "\n";
  for (std::size_t m = 0; m < methods.size(); ++m) {
    out += methods[m];
    for (double v : table[m]) out += std::isnan(v) ? std::string(",") : fmt::format(",{:.6f}", v);
    out += "\n";
  }
  return out;
}

double CategoryReport::overall(std::string_view method) const {
  for (std::size_t m = 0; m < methods.size(); ++m)
    if (methods[m] == method) return table[m][7];
  throw std::out_of_range("no method " + std::string(method) + " in report");
}

namespace {

CategoryReport table_from_adv(const EvalSetup& setup, const std::vector<TrainSpec>& methods,
                              const std::vector<std::vector<Tensor>>& advs, const std::vector<TransformId>& transforms,
                              const Rng& score_rng, const std::string& label) {
  CategoryReport rep;
  rep.label = label;
  rep.transforms = transforms;
  rep.fingerprint = setup.fingerprint;
  rep.magnitudes = setup.magnitudes;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    rep.methods.push_back(methods[m].name());
    const double clean = score_images(setup, advs[m], std::nullopt, score_rng);
    std::vector<double> cells;
    for (TransformId t : transforms) cells.push_back(score_images(setup, advs[m], t, score_rng));
    rep.clean.push_back(clean);
    rep.table.push_back(aggregate_categories(clean, transforms, cells));
    rep.cells.push_back(std::move(cells));
  }
  return rep;
}

}  // namespace

CategoryReport category_table(const EvalSetup& setup, const std::vector<TrainSpec>& methods,
                              const std::vector<TransformId>& transforms, const Rng& rng, const std::string& label) {
  const auto advs = all_adv(setup, methods, rng.child("perturb"));
  return table_from_adv(setup, methods, advs, transforms, rng.child("score"), label);
}

namespace {

const std::vector<TrainSpec> kTableMethods = {{TrainSpec::Kind::no_attack},
                                              {TrainSpec::Kind::pgd_clean},
                                              {TrainSpec::Kind::eot},
                                              {TrainSpec::Kind::eolt}};

std::uint64_t policy_seed(const Rng& rng) { return rng.child("policy-init").seed(); }

}  // namespace

SplitReports split_eval(const EvalSetup& base, SplitKind kind, const TrainerConfig& trainer, Backbone backbone,
                        const Rng& rng, const std::function<void(const std::string&)>& progress) {
  check_setup(base);
  SplitReports out;
  out.kind = kind;
  out.split = build_split(kind);
  PolicyNet net(Catalog(out.split.train), backbone, policy_seed(rng));
  TrainOptions opts;
  opts.progress = progress;
  out.training_curve = train(net, *base.model, base.images, out.split.val, trainer, rng.child("trainer"), opts).curve;

  EvalSetup setup = base;
  setup.eot_transforms = out.split.train;
  setup.policy = &net;
  setup.cap = trainer.cap;
  const auto advs = all_adv(setup, kTableMethods, rng.child("perturb"));
  const Rng score_rng = rng.child("score");
  out.train = table_from_adv(setup, kTableMethods, advs, out.split.train, score_rng, "train");
  out.val = table_from_adv(setup, kTableMethods, advs, out.split.val, score_rng, "val");
  out.test = table_from_adv(setup, kTableMethods, advs, out.split.test, score_rng, "test");
  return out;
}

// ---------------------------------------------------------------- distribution export

std::vector<DistributionRow> export_distribution(const PolicyNet& policy, const std::vector<Tensor>& images,
                                                 double cap) {
  if (images.empty()) throw std::invalid_argument("export_distribution: no images");
  std::vector<CappedDistribution> dists(images.size());
  detail::parallel_jobs(images.size(), [&](std::size_t i) { dists[i] = policy_distribution(policy, images[i], cap); });
  const Catalog& cat = policy.catalog();
  std::vector<DistributionRow> rows;
  for (std::size_t k = 0; k < cat.logit_count(); ++k) {
    double acc = 0.0;
    for (const auto& d : dists) acc += d[k];
    const SubPolicy sp = cat.decode(k);
    rows.push_back({subpolicy_name(sp), sp.transform, sp.magnitude, acc / static_cast<double>(dists.size())});
  }
  return rows;
}

std::string distribution_csv(const std::vector<DistributionRow>& rows) {
  std::string out = "subpolicy,transform,magnitude,probability\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{:.9f}\n", r.name, transform_name(r.transform), r.magnitude, r.probability);
  return out;
}

std::string distribution_svg(const std::vector<DistributionRow>& rows) {
  const int bar = 6, height = 220, base = 190;
  double hi = 0.0;
  for (const auto& r : rows) hi = std::max(hi, r.probability);
  if (hi <= 0.0) hi = 1.0;
  const int width = 40 + bar * static_cast<int>(rows.size());
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"monospace\" "
      "font-size=\"8\">\n",
      width, height);
  out += fmt::format("<text x=\"2\" y=\"10\">max p = {:.4f}</text>\n", hi);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double h = 170.0 * rows[k].probability / hi;
    const int x = 30 + bar * static_cast<int>(k);
    out += fmt::format("<rect x=\"{}\" y=\"{:.2f}\" width=\"{}\" height=\"{:.2f}\" fill=\"{}\"><title>{} {:.5f}</title></rect>\n",
                       x, base - h, bar - 1, h, ramp_colour(static_cast<double>(category_of(rows[k].transform)) / 6.0),
                       rows[k].name, rows[k].probability);
    if (rows[k].magnitude == 0) {
      out += fmt::format("<text x=\"{}\" y=\"{}\" transform=\"rotate(60 {} {})\">{}</text>\n", x, base + 6, x, base + 6,
                         transform_name(rows[k].transform));
    }
  }
  out += "</svg>\n";
  return out;
}

std::array<double, 6> category_mass(const std::vector<DistributionRow>& rows) {
  std::array<double, 6> mass{};
  for (const auto& r : rows) mass[static_cast<std::size_t>(category_of(r.transform))] += r.probability;
  return mass;
}

// ---------------------------------------------------------------- sweeps

std::optional<SweepParameter> parse_sweep_parameter(std::string_view name) {
  if (name == "pgd_steps") return SweepParameter::pgd_steps;
  if (name == "cap") return SweepParameter::cap;
  if (name == "lr") return SweepParameter::lr;
  if (name == "backbone") return SweepParameter::backbone;
  return std::nullopt;
}

std::string_view sweep_parameter_name(SweepParameter p) {
  switch (p) {
    case SweepParameter::pgd_steps: return "pgd_steps";
    case SweepParameter::cap: return "cap";
    case SweepParameter::lr: return "lr";
    case SweepParameter::backbone: return "backbone";
  }
  return "?";
}

namespace {

double parse_number(const std::string& s) {
  // Accepts fractions such as "1/6".
  const auto slash = s.find('/');
  try {
    if (slash != std::string::npos) return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
    return std::stod(s);
  } catch (const std::exception&) {
    throw ConfigError("sweep value '" + s + "' is not a number");
  }
}

}  // namespace

std::vector<SweepPoint> sweep(SweepParameter parameter, const std::vector<std::string>& values, const SweepBase& base,
                              const Rng& rng, const std::function<void(const std::string&)>& progress) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<SweepPoint> points;
  std::optional<PolicyNet> shared;
  for (const std::string& value : values) {
    TrainerConfig trainer = base.trainer;
    Backbone backbone = base.backbone;
    EvalSetup setup = base.setup;
    setup.eot_transforms = base.perturbation;
    switch (parameter) {
      case SweepParameter::pgd_steps: setup.budget.steps = static_cast<int>(parse_number(value)); break;
      case SweepParameter::cap: trainer.cap = parse_number(value); break;
      case SweepParameter::lr: trainer.lr = parse_number(value); break;
      case SweepParameter::backbone: {
        auto b = parse_backbone(value);
        if (!b) throw ConfigError("unknown backbone '" + value + "'");
        backbone = *b;
        break;
      }
    }
    setup.budget.validate();
    SweepPoint point;
    point.value = value;
    // The step sweep reuses one policy; every other parameter changes training.
    PolicyNet* net = nullptr;
    std::optional<PolicyNet> own;
    if (parameter == SweepParameter::pgd_steps && shared) {
      net = &*shared;
    } else {
      own.emplace(Catalog(base.perturbation), backbone, base.policy_seed);
      TrainOptions opts;
      opts.progress = progress;
      point.training_curve =
          train(*own, *setup.model, setup.images, base.validation, trainer, rng.child("trainer"), opts).curve;
      if (parameter == SweepParameter::pgd_steps) {
        shared = std::move(own);
        own.reset();
        net = &*shared;
      } else {
        net = &*own;
      }
    }
    setup.policy = net;
    setup.cap = trainer.cap;
    point.report = category_table(setup, kTableMethods, base.test, rng.child("eval"), fmt::format("{}={}",
                                  sweep_parameter_name(parameter), value));
    if (parameter == SweepParameter::pgd_steps) {
      for (const auto& spec : kTableMethods) {
        if (spec.kind == TrainSpec::Kind::no_attack) continue;
        const auto results = perturb_traced(setup, spec, rng.child("traces"));
        std::vector<double> trace(static_cast<std::size_t>(setup.budget.steps) + 1, 0.0);
        for (const auto& r : results)
          for (std::size_t k = 0; k < trace.size(); ++k) trace[k] += r.loss_trace[k] / static_cast<double>(results.size());
        point.loss_traces.push_back(std::move(trace));
      }
    }
    if (progress) progress(fmt::format("{}={} done", sweep_parameter_name(parameter), value));
    points.push_back(std::move(point));
  }
  return points;
}

std::string sweep_csv(SweepParameter parameter, const std::vector<SweepPoint>& points) {
  std::string out = fmt::format("{},method", sweep_parameter_name(parameter));
  for (auto c : kCategoryColumns) out += fmt::format(",{}", c);
  out += ",final_validation_reward\n";
  for (const auto& p : points) {
    for (std::size_t m = 0; m < p.report.methods.size(); ++m) {
      out += fmt::format("{},{}", p.value, p.report.methods[m]);
      for (double v : p.report.table[m]) out += std::isnan(v) ? std::string(",") : fmt::format(",{:.6f}", v);
      out += p.training_curve.empty() ? std::string(",") : fmt::format(",{:.9g}", p.training_curve.back());
      out += "\n";
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

}  // namespace eolt
