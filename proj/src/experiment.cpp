#include "eolt/experiment.hpp"

#include "eolt/errors.hpp"

namespace eolt {

Experiment::Experiment(ExperimentConfig c, bool write_config) : cfg(std::move(c)), out(cfg.output), root(cfg.seed) {
  records = cfg.data.path.empty()
                ? synth_images(static_cast<std::size_t>(cfg.data.count), static_cast<std::size_t>(cfg.data.height),
                               static_cast<std::size_t>(cfg.data.width), cfg.seed)
                : load_ppm_dir(cfg.data.path);
  if (records.empty()) throw ConfigError("no images found in " + cfg.data.path);
  for (const auto& r : records) images.push_back(r.pixels);
  model = std::make_unique<SwapModel>(cfg.seed, cfg.swap, cfg.precision);
  embedder = std::make_unique<IdentityEmbedder>(cfg.seed, cfg.precision);
  split = cfg.resolved_split();
  if (write_config) write_text(out / "config.ini", cfg.to_ini());
}

EvalSetup Experiment::setup() const {
  EvalSetup s;
  s.model = model.get();
  s.embedder = embedder.get();
  s.images = images;
  s.budget = cfg.budget;
  s.magnitudes = cfg.magnitudes;
  s.eot_transforms = split.train;
  s.cap = cfg.trainer.cap;
  s.samples_per_step = cfg.samples_per_step;
  s.fingerprint = cfg.fingerprint();
  return s;
}

PolicyNet Experiment::fresh_policy() const { return PolicyNet(Catalog(split.train), cfg.backbone, cfg.seed); }

TrainResult Experiment::train_policy(PolicyNet& net, const TrainOptions& opts) const {
  return train(net, *model, images, split.val, cfg.trainer, root.child("trainer"), opts);
}

}  // namespace eolt
