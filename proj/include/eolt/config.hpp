#pragma once

// Experiment configuration in INI form. Every key has a default; unknown
// sections or keys are rejected so typos cannot pass silently.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eolt/attack.hpp"
#include "eolt/eval.hpp"
#include "eolt/models.hpp"
#include "eolt/nn.hpp"
#include "eolt/policy.hpp"
#include "eolt/trainer.hpp"
#include "eolt/transforms.hpp"

namespace eolt {

struct DataConfig {
  /// Directory of P6 PPM files; empty selects the synthetic generator.
  std::string path;
  int count = 32;
  int height = 32;
  int width = 32;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;
  std::string output = "out";

  DataConfig data;

  std::vector<TransformId> transforms{all_transforms().begin(), all_transforms().end()};
  SplitKind split = SplitKind::all_seen;

  SwapVariant swap = SwapVariant::blur_bottleneck;
  Backbone backbone = Backbone::small_cnn;

  AttackBudget budget;
  std::size_t samples_per_step = 1;
  std::vector<int> magnitudes = {2, 5, 8};

  TrainerConfig trainer;

  SweepParameter sweep_parameter = SweepParameter::pgd_steps;
  std::vector<std::string> sweep_values = {"50", "100", "150"};

  /// Throws ConfigError on malformed values or unknown keys.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Canonical text; parse(to_ini()) reproduces the config exactly.
  std::string to_ini() const;
  /// Hex digest of to_ini().
  std::string fingerprint() const;
  void validate() const;

  /// all-seen uses `transforms` for all three sets; the other kinds use the
  /// fixed category splits.
  Split resolved_split() const;
};

}  // namespace eolt
