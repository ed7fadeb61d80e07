#pragma once

// Measurement protocols: cross-transformation matrix, category tables,
// unseen-transformation splits, learned-distribution export and sweeps.
// Similarity is cos(embed(F(t(x_adv))), embed(x)); lower means stronger
// protection.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eolt/attack.hpp"
#include "eolt/models.hpp"
#include "eolt/policy.hpp"
#include "eolt/trainer.hpp"

namespace eolt {

/// How the perturbation of a row is generated.
struct TrainSpec {
  enum class Kind { no_attack, pgd_clean, transform, eot, eolt };
  Kind kind = Kind::no_attack;
  TransformId transform = TransformId::normal;  // Kind::transform only

  static TrainSpec parse(std::string_view name);
  std::string name() const;
};

struct EvalRecord {
  std::string train_spec;
  std::string test_spec;  // "clean" or a transform name
  double mean_id_sim = 0.0;
  std::size_t n_images = 0;
  std::vector<int> magnitudes_used;
};

/// Everything the protocols share.
struct EvalSetup {
  const DiffStage* model = nullptr;
  const IdentityEmbedder* embedder = nullptr;
  std::vector<Tensor> images;
  AttackBudget budget;
  /// Magnitudes at which test transforms are evaluated and averaged.
  std::vector<int> magnitudes = {2, 5, 8};
  /// Perturbation set used by the eot row.
  std::vector<TransformId> eot_transforms;
  const PolicyNet* policy = nullptr;  // eolt row
  double cap = 1.0 / 6.0;
  std::size_t samples_per_step = 1;
  /// Embedded verbatim in reports.
  std::string fingerprint;
};

/// Attack results for one row, including loss traces. Row randomness is
/// keyed by image index.
std::vector<AttackResult> perturb_traced(const EvalSetup& setup, const TrainSpec& spec, const Rng& rng);

/// Adversarial images for one row, one per input image. Row randomness is
/// keyed by image index so all rows share the same per-image streams.
std::vector<Tensor> perturb_images(const EvalSetup& setup, const TrainSpec& spec, const Rng& rng);

/// Mean similarity of perturbed images under one test transform (nullopt =
/// clean), averaged over images and the magnitude convention. Test-time
/// noise is keyed by (image, transform, magnitude), identical across rows.
double score_images(const EvalSetup& setup, const std::vector<Tensor>& adv, std::optional<TransformId> test,
                    const Rng& rng);

EvalRecord eval_cell(const EvalSetup& setup, const TrainSpec& spec, std::optional<TransformId> test,
                     const Rng& rng);

struct MatrixReport {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<std::vector<double>> values;
  std::string fingerprint;
  std::vector<int> magnitudes;

  std::string to_csv() const;
  std::string to_svg() const;
};

/// Rows {no_attack, pgd_clean} + catalog, columns {clean} + catalog.
MatrixReport cross_matrix(const EvalSetup& setup, const Catalog& catalog, const Rng& rng,
                          const std::function<void(const std::string&)>& progress = {});

inline constexpr std::array<std::string_view, 8> kCategoryColumns = {
    "No-Transformation", "Noise", "Color-space", "Blur", "Stylization", "Compression", "Geometric", "Overall"};

struct CategoryReport {
  std::string label;  // e.g. "test"
  std::vector<std::string> methods;
  std::vector<TransformId> transforms;
  /// cells[method][k] for transforms[k]
  std::vector<std::vector<double>> cells;
  std::vector<double> clean;
  /// table[method][column] in kCategoryColumns order; empty categories are NaN.
  std::vector<std::array<double, 8>> table;
  std::string fingerprint;
  std::vector<int> magnitudes;

  std::string to_csv() const;
  double overall(std::string_view method) const;
};

/// Category means over member transforms; Overall is the mean of the
/// non-empty category means.
std::array<double, 8> aggregate_categories(double clean, const std::vector<TransformId>& transforms,
                                           const std::vector<double>& cells);

/// Table over `transforms` for the given methods (no_attack, pgd, eot, eolt).
CategoryReport category_table(const EvalSetup& setup, const std::vector<TrainSpec>& methods,
                              const std::vector<TransformId>& transforms, const Rng& rng,
                              const std::string& label = "all");

struct SplitReports {
  SplitKind kind;
  Split split;
  CategoryReport train, val, test;
  std::vector<double> training_curve;
};

/// Trains the policy on the split's perturbation/validation sets, then
/// evaluates no_attack, pgd, eot and eolt on each of the three sets.
SplitReports split_eval(const EvalSetup& base, SplitKind kind, const TrainerConfig& trainer, Backbone backbone,
                        const Rng& rng, const std::function<void(const std::string&)>& progress = {});

struct DistributionRow {
  std::string name;
  TransformId transform;
  int magnitude;
  double probability;
};

/// Capped distributions averaged over images.
std::vector<DistributionRow> export_distribution(const PolicyNet& policy, const std::vector<Tensor>& images,
                                                 double cap);
std::string distribution_csv(const std::vector<DistributionRow>& rows);
std::string distribution_svg(const std::vector<DistributionRow>& rows);
/// Total probability per category.
std::array<double, 6> category_mass(const std::vector<DistributionRow>& rows);

enum class SweepParameter { pgd_steps, cap, lr, backbone };
std::optional<SweepParameter> parse_sweep_parameter(std::string_view name);
std::string_view sweep_parameter_name(SweepParameter p);

struct SweepPoint {
  std::string value;
  CategoryReport report;
  std::vector<double> training_curve;
  std::vector<std::vector<double>> loss_traces;  // pgd_steps: mean eolt trace per step
};

struct SweepBase {
  EvalSetup setup;
  TrainerConfig trainer;
  Backbone backbone = Backbone::small_cnn;
  std::uint64_t policy_seed = 0;
  std::vector<TransformId> perturbation;
  std::vector<TransformId> validation;
  std::vector<TransformId> test;
};

std::vector<SweepPoint> sweep(SweepParameter parameter, const std::vector<std::string>& values, const SweepBase& base,
                              const Rng& rng, const std::function<void(const std::string&)>& progress = {});
std::string sweep_csv(SweepParameter parameter, const std::vector<SweepPoint>& points);

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace eolt
