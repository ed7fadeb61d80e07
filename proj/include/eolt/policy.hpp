#pragma once

// Policy network over sub-policies, the probability cap and trajectory
// sampling.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "eolt/io.hpp"
#include "eolt/nn.hpp"
#include "eolt/rng.hpp"
#include "eolt/transforms.hpp"

namespace eolt {

enum class Backbone { small_cnn, preact_resnet18 };

std::string_view backbone_name(Backbone b);
std::optional<Backbone> parse_backbone(std::string_view name);

/// Backbone followed by a linear head with one logit per sub-policy. The head
/// starts at zero, so an untrained policy is uniform.
class PolicyNet {
 public:
  PolicyNet(Catalog catalog, Backbone backbone = Backbone::small_cnn, std::uint64_t seed = 0,
            std::size_t input_size = 64);

  const Catalog& catalog() const { return catalog_; }
  Backbone backbone() const { return backbone_; }
  std::size_t input_size() const { return input_size_; }

  /// Image resized to the policy input resolution.
  Tensor prepare(const Tensor& image) const;
  Tensor logits(const Tensor& image) const;
  Tensor forward(const Tensor& image, Context& ctx) const;
  /// Parameter gradients for an upstream gradient on the logits.
  std::vector<Tensor> backward(const Context& ctx, const Tensor& grad_logits) const;

  Sequential& network() { return net_; }
  const Sequential& network() const { return net_; }

  Checkpoint to_checkpoint() const;
  /// Throws FormatError on fingerprint, name or shape mismatch.
  void load(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const { save_checkpoint(path, to_checkpoint()); }
  void load(const std::filesystem::path& path) { load(load_checkpoint(path)); }

 private:
  Catalog catalog_;
  Backbone backbone_;
  std::size_t input_size_;
  Sequential net_;
};

class CappedDistribution {
 public:
  CappedDistribution() = default;
  CappedDistribution(std::vector<double> probs, double cap) : probs_(std::move(probs)), cap_(cap) {}

  const std::vector<double>& probs() const { return probs_; }
  double cap() const { return cap_; }
  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

  /// Inverse-CDF draw from one uniform variate.
  std::size_t sample(Rng& rng) const;

 private:
  std::vector<double> probs_;
  double cap_ = 1.0;
};

/// Water-filling: clip entries above c, rescale the rest onto the remaining
/// mass, repeat. Throws std::invalid_argument when c < 1 / len(p).
CappedDistribution cap_probabilities(std::span<const double> p, double c);

/// softmax(logits) followed by the cap.
CappedDistribution policy_distribution(const PolicyNet& net, const Tensor& image, double cap);

struct Trajectory {
  std::vector<std::size_t> indices;
  std::vector<SubPolicy> subpolicies;
  double log_prob = 0.0;
  double reward = 0.0;
  double advantage = 0.0;
};

/// traj_len independent draws with replacement.
Trajectory sample_trajectory(const CappedDistribution& dist, const Catalog& catalog, std::size_t traj_len,
                             Rng& rng);

/// Gradient on the logits of sum_k log softmax(logits)[indices[k]], using the
/// uncapped softmax.
Tensor log_prob_logit_gradient(const Tensor& logits, std::span<const std::size_t> indices);

/// Gradient over the policy parameters of the trajectory's uncapped
/// log-probability.
std::vector<Tensor> log_prob_gradient(const PolicyNet& net, const Tensor& image, const Trajectory& traj);

}  // namespace eolt
