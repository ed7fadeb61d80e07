#include "eolt/policy.hpp"

#include <cmath>
#include <stdexcept>

#include "eolt/errors.hpp"

namespace eolt {

std::string_view backbone_name(Backbone b) { return b == Backbone::small_cnn ? "small-cnn" : "preact-resnet18"; }

std::optional<Backbone> parse_backbone(std::string_view name) {
  if (name == "small-cnn") return Backbone::small_cnn;
  if (name == "preact-resnet18") return Backbone::preact_resnet18;
  return std::nullopt;
}

PolicyNet::PolicyNet(Catalog catalog, Backbone backbone, std::uint64_t seed, std::size_t input_size)
    : catalog_(std::move(catalog)), backbone_(backbone), input_size_(input_size), net_("policy") {
  if (input_size_ < 8) throw std::invalid_argument("policy input size must be >= 8");
  Rng root = Rng(seed).child("policy-net");
  std::size_t features = 0;
  if (backbone == Backbone::small_cnn) {
    Rng r1 = root.child("conv1"), r2 = root.child("conv2"), r3 = root.child("conv3");
    net_.add("conv1", Conv2d::init(3, 16, 3, 2, 1, r1))
        .add("relu1", Relu{})
        .add("conv2", Conv2d::init(16, 32, 3, 2, 1, r2))
        .add("relu2", Relu{})
        .add("conv3", Conv2d::init(32, 64, 3, 2, 1, r3))
        .add("relu3", Relu{})
        .add("pool", GlobalAvgPool{});
    features = 64;
  } else {
    // ResNet-18 layout (stem + 4 stages of 2 pre-activation blocks) at a
    // quarter of the usual width.
    Rng stem = root.child("stem");
    net_.add("stem", Conv2d::init(3, 16, 3, 1, 1, stem));
    const std::size_t widths[] = {16, 32, 64, 128};
    std::size_t in = 16;
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t b = 0; b < 2; ++b) {
        Rng r = root.child("block", s * 2 + b);
        const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
        net_.add("stage" + std::to_string(s + 1) + "." + std::to_string(b), PreActBlock(in, widths[s], stride, r));
        in = widths[s];
      }
    }
    net_.add("relu", Relu{}).add("pool", GlobalAvgPool{});
    features = in;
  }
  net_.add("head", Linear::zeros(features, catalog_.logit_count()));
}

Tensor PolicyNet::prepare(const Tensor& image) const {
  require_chw(image, "policy input");
  if (image.dim(1) == input_size_ && image.dim(2) == input_size_) return image;
  return ops::resize_bilinear(image, input_size_, input_size_);
}

Tensor PolicyNet::logits(const Tensor& image) const {
  Context ctx;
  return forward(image, ctx);
}

Tensor PolicyNet::forward(const Tensor& image, Context& ctx) const {
  Tensor out = net_.forward(prepare(image), ctx);
  if (out.size() != catalog_.logit_count()) {
    throw DimensionError("policy head produces " + std::to_string(out.size()) + " logits, catalog needs " +
                         std::to_string(catalog_.logit_count()));
  }
  return out;
}

std::vector<Tensor> PolicyNet::backward(const Context& ctx, const Tensor& grad_logits) const {
  std::vector<Tensor> grads = net_.zero_grads();
  net_.backward(ctx, grad_logits, grads);
  return grads;
}

Checkpoint PolicyNet::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.fingerprint = catalog_.fingerprint();
  for (const auto& [name, t] : net_.named_parameters()) ckpt.entries.emplace_back(name, *t);
  return ckpt;
}

void PolicyNet::load(const Checkpoint& ckpt) {
  if (ckpt.fingerprint != catalog_.fingerprint()) {
    throw FormatError("checkpoint was trained for a different catalog (fingerprint mismatch)");
  }
  auto params = net_.named_parameters();
  if (params.size() != ckpt.entries.size()) {
    throw FormatError("checkpoint has " + std::to_string(ckpt.entries.size()) + " tensors, network needs " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = ckpt.entries[i];
    if (name != params[i].first || !t.same_shape(*params[i].second)) {
      throw FormatError("checkpoint entry " + name + " " + shape_str(t.shape()) + " does not match " +
                        params[i].first + " " + shape_str(params[i].second->shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = ckpt.entries[i].second;
}

std::size_t CappedDistribution::sample(Rng& rng) const {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    if (probs_[i] <= 0.0) continue;
    cum += probs_[i];
    last = i;
    if (u < cum) return i;
  }
  return last;  // u fell into the rounding gap above the final cumulative sum
}

CappedDistribution cap_probabilities(std::span<const double> p, double c) {
  const std::size_t n = p.size();
  if (n == 0) throw std::invalid_argument("cap_probabilities: empty distribution");
  if (c * static_cast<double>(n) < 1.0 - 1e-12) {
    throw std::invalid_argument("infeasible cap " + std::to_string(c) + " for " + std::to_string(n) +
                                " entries (needs c >= 1/n)");
  }
  std::vector<double> q(p.begin(), p.end());
  std::vector<bool> clipped(n, false);
  std::size_t n_clipped = 0;
  for (;;) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!clipped[i] && q[i] > c) {
        clipped[i] = true;
        ++n_clipped;
        changed = true;
      }
    }
    if (!changed) break;
    const double residual = 1.0 - c * static_cast<double>(n_clipped);
    double free_mass = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!clipped[i]) free_mass += q[i];
    for (std::size_t i = 0; i < n; ++i) {
      if (clipped[i]) {
        q[i] = c;
      } else if (free_mass > 0.0) {
        q[i] *= residual / free_mass;
      } else {
        q[i] = residual / static_cast<double>(n - n_clipped);
      }
    }
  }
  return CappedDistribution(std::move(q), c);
}

CappedDistribution policy_distribution(const PolicyNet& net, const Tensor& image, double cap) {
  const Tensor probs = ops::softmax(net.logits(image));
  return cap_probabilities(probs.values(), cap);
}

Trajectory sample_trajectory(const CappedDistribution& dist, const Catalog& catalog, std::size_t traj_len,
                             Rng& rng) {
  if (traj_len == 0) throw std::invalid_argument("trajectory length must be >= 1");
  if (dist.size() != catalog.logit_count()) {
    throw DimensionError("distribution over " + std::to_string(dist.size()) + " entries vs catalog of " +
                         std::to_string(catalog.logit_count()));
  }
  Trajectory t;
  for (std::size_t k = 0; k < traj_len; ++k) {
    const std::size_t i = dist.sample(rng);
    t.indices.push_back(i);
    t.subpolicies.push_back(catalog.decode(i));
    t.log_prob += std::log(dist[i]);
  }
  return t;
}

Tensor log_prob_logit_gradient(const Tensor& logits, std::span<const std::size_t> indices) {
  const Tensor p = ops::softmax(logits);
  Tensor g = p * -static_cast<double>(indices.size());
  for (std::size_t i : indices) {
    if (i >= logits.size()) {
      throw std::out_of_range("draw index " + std::to_string(i) + " outside " + std::to_string(logits.size()) +
                              " logits");
    }
    g[i] += 1.0;
  }
  return g;
}

std::vector<Tensor> log_prob_gradient(const PolicyNet& net, const Tensor& image, const Trajectory& traj) {
  Context ctx;
  const Tensor logits = net.forward(image, ctx);
  return net.backward(ctx, log_prob_logit_gradient(logits, traj.indices));
}

}  // namespace eolt
