#pragma once

// Data, models and rng root built from one resolved config. Shared by the CLI
// and the acceptance runner so both see identical experiments.

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "eolt/config.hpp"
#include "eolt/eval.hpp"
#include "eolt/io.hpp"

namespace eolt {

struct Experiment {
  ExperimentConfig cfg;
  std::filesystem::path out;
  std::vector<ImageRecord> records;
  std::vector<Tensor> images;
  std::unique_ptr<SwapModel> model;
  std::unique_ptr<IdentityEmbedder> embedder;
  Split split;
  Rng root;

  /// Loads the data and builds the models. With write_config the resolved
  /// config is written to <output>/config.ini.
  explicit Experiment(ExperimentConfig c, bool write_config = true);

  EvalSetup setup() const;
  PolicyNet fresh_policy() const;
  TrainResult train_policy(PolicyNet& net, const TrainOptions& opts) const;
};

}  // namespace eolt
