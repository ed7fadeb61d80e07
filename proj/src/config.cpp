#include "eolt/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "eolt/errors.hpp"
#include "eolt/rng.hpp"

namespace eolt {

namespace {

namespace pt = boost::property_tree;

[[noreturn]] void bad_value(const std::string& key, const std::string& value, std::string_view expected) {
  throw ConfigError(fmt::format("config: {}: expected {}, got '{}'", key, expected, value));
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "an integer");
  return out;
}

// Accepts plain numbers and fractions such as 1/6.
double parse_double(const std::string& key, const std::string& value) {
  auto number = [&](std::string_view s) {
    double out = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) bad_value(key, value, "a number");
    return out;
  };
  const auto slash = value.find('/');
  if (slash == std::string::npos) return number(value);
  const double den = number(trim(std::string_view(value).substr(slash + 1)));
  if (den == 0.0) bad_value(key, value, "a non-zero denominator");
  return number(trim(std::string_view(value).substr(0, slash))) / den;
}

template <class T, class Parse>
T parse_named(const std::string& key, const std::string& value, Parse parse, std::string_view expected) {
  const auto v = parse(value);
  if (!v) bad_value(key, value, expected);
  return *v;
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

// One entry per accepted key: how to read it into the config and how to
// write it back.
struct Field {
  std::string section;  // "" for top-level keys
  std::string key;
  std::function<void(ExperimentConfig&, const std::string& full_key, const std::string& value)> read;
  std::function<std::string(const ExperimentConfig&)> write;
};

#define EOLT_INT_FIELD(SEC, KEY, MEMBER, TYPE)                                                             \
  Field {                                                                                                  \
    SEC, KEY, [](ExperimentConfig& c, const std::string& k, const std::string& v) {                        \
      c.MEMBER = parse_integer<TYPE>(k, v);                                                                \
    },                                                                                                     \
        [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }                                 \
  }
#define EOLT_DOUBLE_FIELD(SEC, KEY, MEMBER)                                                                \
  Field {                                                                                                  \
    SEC, KEY, [](ExperimentConfig& c, const std::string& k, const std::string& v) {                        \
      c.MEMBER = parse_double(k, v);                                                                       \
    },                                                                                                     \
        [](const ExperimentConfig& c) { return fmt_double(c.MEMBER); }                                     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      EOLT_INT_FIELD("", "seed", seed, std::uint64_t),
      {"", "precision",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.precision = parse_named<Precision>(k, v, parse_precision, "f64 or f32");
       },
       [](const ExperimentConfig& c) { return std::string(precision_name(c.precision)); }},
      {"", "output", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output = v; },
       [](const ExperimentConfig& c) { return c.output; }},

      {"data", "path", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.path = v; },
       [](const ExperimentConfig& c) { return c.data.path; }},
      EOLT_INT_FIELD("data", "count", data.count, int),
      EOLT_INT_FIELD("data", "height", data.height, int),
      EOLT_INT_FIELD("data", "width", data.width, int),

      {"catalog", "transforms",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         if (v == "all") {
           c.transforms.assign(all_transforms().begin(), all_transforms().end());
           return;
         }
         c.transforms.clear();
         for (const auto& name : split_list(v))
           c.transforms.push_back(parse_named<TransformId>(k, name, parse_transform, "a transformation name"));
       },
       [](const ExperimentConfig& c) {
         if (std::ranges::equal(c.transforms, all_transforms())) return std::string("all");
         std::vector<std::string> names;
         for (TransformId t : c.transforms) names.emplace_back(transform_name(t));
         return join(names);
       }},
      {"catalog", "split",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.split = parse_named<SplitKind>(k, v, parse_split, "all_seen, intra or inter");
       },
       [](const ExperimentConfig& c) { return std::string(split_name(c.split)); }},

      {"models", "swap",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.swap = parse_named<SwapVariant>(k, v, parse_swap_variant, "toy or blur-bottleneck");
       },
       [](const ExperimentConfig& c) { return std::string(swap_variant_name(c.swap)); }},
      {"models", "backbone",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.backbone = parse_named<Backbone>(k, v, parse_backbone, "small-cnn or preact-resnet18");
       },
       [](const ExperimentConfig& c) { return std::string(backbone_name(c.backbone)); }},

      EOLT_DOUBLE_FIELD("attack", "epsilon", budget.epsilon),
      EOLT_DOUBLE_FIELD("attack", "alpha", budget.alpha),
      EOLT_INT_FIELD("attack", "steps", budget.steps, int),
      {"attack", "init",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.budget.init = parse_named<InitMode>(k, v, parse_init_mode, "zero or uniform");
       },
       [](const ExperimentConfig& c) { return std::string(init_mode_name(c.budget.init)); }},
      EOLT_INT_FIELD("attack", "samples_per_step", samples_per_step, std::size_t),
      {"attack", "magnitudes",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.magnitudes.clear();
         for (const auto& item : split_list(v)) c.magnitudes.push_back(parse_integer<int>(k, item));
       },
       [](const ExperimentConfig& c) {
         std::vector<std::string> items;
         for (int m : c.magnitudes) items.push_back(std::to_string(m));
         return join(items);
       }},

      EOLT_INT_FIELD("trainer", "epochs", trainer.epochs, int),
      EOLT_INT_FIELD("trainer", "batch_size", trainer.batch_size, int),
      EOLT_INT_FIELD("trainer", "n_traj", trainer.n_traj, int),
      EOLT_INT_FIELD("trainer", "traj_len", trainer.traj_len, int),
      EOLT_DOUBLE_FIELD("trainer", "lr", trainer.lr),
      EOLT_DOUBLE_FIELD("trainer", "momentum", trainer.momentum),
      EOLT_INT_FIELD("trainer", "warmup_epochs", trainer.warmup_epochs, int),
      EOLT_DOUBLE_FIELD("trainer", "cap", trainer.cap),
      EOLT_INT_FIELD("trainer", "inner_pgd_steps", trainer.inner_pgd_steps, int),
      EOLT_DOUBLE_FIELD("trainer", "epsilon", trainer.epsilon),
      EOLT_DOUBLE_FIELD("trainer", "alpha", trainer.alpha),
      EOLT_INT_FIELD("trainer", "reward_magnitude", trainer.reward_magnitude, int),
      EOLT_DOUBLE_FIELD("trainer", "reward_scale", trainer.reward_scale),
      EOLT_DOUBLE_FIELD("trainer", "max_grad_norm", trainer.max_grad_norm),

      {"sweep", "parameter",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.sweep_parameter = parse_named<SweepParameter>(k, v, parse_sweep_parameter, "pgd_steps, cap, lr or backbone");
       },
       [](const ExperimentConfig& c) { return std::string(sweep_parameter_name(c.sweep_parameter)); }},
      {"sweep", "values",
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.sweep_values = split_list(v); },
       [](const ExperimentConfig& c) { return join(c.sweep_values); }},
  };
  return table;
}

#undef EOLT_INT_FIELD
#undef EOLT_DOUBLE_FIELD

std::string full_key(const Field& f) { return f.section.empty() ? f.key : f.section + "." + f.key; }

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("config: line {}: {}", e.line(), e.message()));
  }

  std::map<std::string, const Field*> by_key;
  std::set<std::string> sections;
  for (const Field& f : fields()) {
    by_key[full_key(f)] = &f;
    if (!f.section.empty()) sections.insert(f.section);
  }

  ExperimentConfig cfg;
  auto apply = [&](const std::string& key, const std::string& raw) {
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second->read(cfg, key, trim(raw));
  };
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      if (sections.contains(name) && node.data().empty()) continue;  // section without keys
      apply(name, node.data());
      continue;
    }
    if (!sections.contains(name)) throw ConfigError("config: unknown section [" + name + "]");
    for (const auto& [key, leaf] : node) apply(name + "." + key, leaf.data());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

std::string ExperimentConfig::to_ini() const {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      section = f.section;
      out += "\n[" + section + "]\n";
    }
    out += f.key + " = " + f.write(*this) + "\n";
  }
  return out;
}

std::string ExperimentConfig::fingerprint() const { return fmt::format("{:016x}", fnv1a64(to_ini())); }

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (data.path.empty()) {
    if (data.count < 1) fail("data.count must be >= 1");
    if (data.height < 8 || data.width < 8 || data.height % 4 || data.width % 4) {
      fail("data.height and data.width must be >= 8 and multiples of 4");
    }
  }
  if (transforms.empty()) fail("catalog.transforms must not be empty");
  std::set<TransformId> seen(transforms.begin(), transforms.end());
  if (seen.size() != transforms.size()) fail("catalog.transforms lists a transformation twice");
  if (samples_per_step < 1) fail("attack.samples_per_step must be >= 1");
  if (magnitudes.empty()) fail("attack.magnitudes must not be empty");
  for (int m : magnitudes)
    if (m < 0 || m >= kMagnitudes) fail(fmt::format("attack.magnitudes: {} outside [0, {}]", m, kMagnitudes - 1));
  try {
    budget.validate();
  } catch (const std::invalid_argument& e) {
    fail(std::string("attack: ") + e.what());
  }
  trainer.validate(resolved_split().train.size() * kMagnitudes);
  if (sweep_values.empty()) fail("sweep.values must not be empty");
  if (output.empty()) fail("output must not be empty");
}

Split ExperimentConfig::resolved_split() const {
  if (split == SplitKind::all_seen) return Split{transforms, transforms, transforms};
  return build_split(split);
}

}  // namespace eolt
