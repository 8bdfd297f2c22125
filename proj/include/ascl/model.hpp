#pragma once

// Small MLP classifiers h(x) = g(f(x)) with an exposed penultimate latent
// z = f(x) and an optional projection head used only by the contrastive loss.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ascl/tensor.hpp"

namespace ascl {

enum class Activation { relu, identity };
enum class ProjectionKind { identity, linear, two_layer };

struct ProjectionSpec {
  ProjectionKind kind = ProjectionKind::identity;
  std::size_t mid = 200;
  std::size_t out_dim = 128;
};

struct ModelSpec {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_layers{64, 64};
  std::size_t num_classes = 2;
  Activation activation = Activation::relu;
  ProjectionSpec projection;

  /// Width of the last hidden layer.
  std::size_t latent_dim() const;
  /// Throws ConfigError. Requires at least one hidden layer and relu activation.
  void validate() const;
};

/// Predictions on paired natural/adversarial batches, row-major N x C.
struct PredictionSnapshot {
  std::size_t n = 0;
  std::size_t num_classes = 0;
  std::vector<double> logits_nat;
  std::vector<double> logits_adv;
  std::vector<double> probs_nat;
  std::vector<double> probs_adv;
  std::vector<std::size_t> preds_nat;
  std::vector<std::size_t> preds_adv;
};

/// Builds a snapshot from two N x C logit tensors (values only).
PredictionSnapshot make_snapshot(const Tensor& logits_nat, const Tensor& logits_adv);

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed);

  /// Copies are deep: parameters are duplicated as fresh leaves with zeroed gradients.
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }

  /// Penultimate activations z = f(x), shape N x latent_dim.
  Tensor encode(const Tensor& x) const;
  /// Logits g(z), shape N x C.
  Tensor classify(const Tensor& z) const;
  Tensor forward(const Tensor& x) const;
  /// Projection head applied to latents; identity head returns z itself.
  Tensor project(const Tensor& z) const;

  PredictionSnapshot snapshot(const Tensor& x_nat, const Tensor& x_adv) const;

  /// Trainable parameters in declaration order: encoder (W, b) per layer,
  /// classifier (W, b), projection weights.
  std::vector<Tensor> parameters() const;

  /// Deep copy whose parameters do not require gradients.
  Model frozen() const;

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

 private:
  struct Linear {
    Tensor weight;
    std::optional<Tensor> bias;
  };
  static Linear copy_linear(const Linear& l, bool requires_grad);
  Model copy_with(bool requires_grad) const;
  Model() = default;

  ModelSpec spec_;
  std::vector<Linear> encoder_;
  Linear classifier_;
  std::vector<Linear> projection_;
};

}  // namespace ascl
