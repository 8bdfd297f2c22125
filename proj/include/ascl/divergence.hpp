#pragma once

// Latent-space divergence diagnostics.
//
// For a pool of natural latents z_i and (optionally) adversarial latents z_i^a,
// every slot serves as an anchor. Its positive set holds all slots of other
// samples with the same label, its negative set all slots of other samples with
// a different label. With d = 1 - cosine similarity:
//
//   d_a+ = mean over anchors with a nonempty positive set of the mean d to positives
//   d_a- = the same over negative sets
//   r_div = d_a+ / d_a-
//
// Large pools are processed in mini-batches and the per-batch divergences averaged.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ascl/adversary.hpp"
#include "ascl/data.hpp"
#include "ascl/model.hpp"
#include "ascl/tensor.hpp"

namespace ascl {

inline constexpr double kDivergenceTolerance = 1e-12;
inline constexpr std::size_t kDivergenceBatch = 128;

/// 1 - cosine similarity, in [0, 2]. Zero vectors raise DomainError.
double cosine_distance(std::span<const double> a, std::span<const double> b);

struct Divergences {
  double d_a_plus = 0.0;
  double d_a_minus = 0.0;
};

/// Exact divergences over one pool. `z_adv` may be omitted for a benign-only pool.
/// Throws DegenerateInputError when no anchor has a positive (or negative) set.
Divergences absolute_divergences(const Tensor& z_nat, const std::optional<Tensor>& z_adv,
                                 std::span<const std::size_t> labels);

/// d_plus / d_minus, or nullopt when d_minus <= kDivergenceTolerance.
std::optional<double> relative_divergence(double d_plus, double d_minus);

struct DivergenceReport {
  double d_a_plus = 0.0;
  double d_a_minus = 0.0;
  std::optional<double> r_div;
  std::string layer_name = "penultimate";
  std::size_t n_samples = 0;
  std::string distance_kind = "cosine_distance";
};

/// Mini-batched report (consecutive chunks of `batch` samples; degenerate chunks skipped).
DivergenceReport divergence_report(const Tensor& z_nat, const std::optional<Tensor>& z_adv,
                                   std::span<const std::size_t> labels, std::size_t batch = kDivergenceBatch,
                                   std::string layer_name = "penultimate");

/// Report at the model's penultimate layer for a dataset and optional adversarial inputs.
DivergenceReport analyze_model(const Model& model, const Dataset& data, const std::optional<Tensor>& x_adv);

struct DivergenceRow {
  double epsilon = 0.0;
  DivergenceReport report;
  double robust_acc = 0.0;
};

/// One row per epsilon (ascending). The step size is rescaled to keep eta / epsilon
/// equal to that of `base`. Epsilon 0 uses the benign-only pool.
std::vector<DivergenceRow> divergence_sweep(const Model& model, const Dataset& data, const AttackConfig& base,
                                            std::span<const double> epsilons, AttackKind kind, std::uint64_t seed);

/// CSV: epsilon,d_a_plus,d_a_minus,r_div,robust_acc,n_samples,layer_name (empty r_div when undefined).
void write_divergence_csv(std::ostream& out, std::span<const DivergenceRow> rows);

}  // namespace ascl
