#pragma once

// L-infinity gradient attacks: PGD with random start, multi-targeted PGD and
// robust-accuracy evaluation.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ascl/data.hpp"
#include "ascl/model.hpp"
#include "ascl/tensor.hpp"

namespace ascl {

enum class AttackLoss { cross_entropy, targeted_cross_entropy };
enum class AttackKind { none, pgd, mpgd };

AttackKind parse_attack_kind(std::string_view name);
std::string_view to_string(AttackKind kind);

struct AttackConfig {
  double epsilon = 0.05;
  double eta = 0.0125;
  std::size_t steps = 10;
  bool random_init = true;
  AttackLoss loss = AttackLoss::cross_entropy;
  double clip_lo = 0.0;
  double clip_hi = 1.0;

  /// Throws ContractError.
  void validate() const;

  /// k=10, eps=8/255, eta=2/255.
  static AttackConfig cifar10_train();
  /// k=250, eps=8/255, eta=2/255.
  static AttackConfig cifar10_eval();
};

/// Clamps x_adv into the eps-ball around x_orig intersected with [lo, hi]. Values only.
Tensor project_linf(const Tensor& x_adv, const Tensor& x_orig, double epsilon, double clip_lo = 0.0,
                    double clip_hi = 1.0);

/// Gradient w.r.t. the input of the summed attack objective: cross-entropy against
/// `labels`, or negative cross-entropy towards `labels` when targeted. Each row's
/// gradient depends on that row only.
std::vector<double> attack_gradient(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                                    AttackLoss loss);

/// PGD: optional uniform random start (projected), then `steps` signed-gradient
/// ascent steps with projection. For a targeted loss `labels` are the targets.
/// Row r draws its random start from the stream derived from (seed, first_index + r).
Tensor pgd_attack(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
                  std::uint64_t seed, std::size_t first_index = 0);

/// Targeted PGD towards every wrong class. Per sample the first candidate (targets
/// in order y+1, y+2, ... mod C) whose prediction differs from the true label is
/// kept, otherwise the candidate with the largest untargeted cross-entropy.
Tensor multi_targeted_pgd(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                          const AttackConfig& cfg, std::uint64_t seed, std::size_t first_index = 0);

/// Dispatches on kind; `none` returns a copy of x.
Tensor run_attack(AttackKind kind, const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                  const AttackConfig& cfg, std::uint64_t seed, std::size_t first_index = 0);

/// Attacked inputs for a whole dataset, row-aligned with it.
Tensor attack_dataset(AttackKind kind, const Model& model, const Dataset& data, const AttackConfig& cfg,
                      std::uint64_t seed);

/// Fraction of rows of `x` whose prediction equals the label.
double accuracy(const Model& model, const Tensor& x, std::span<const std::size_t> labels);

/// Fraction of samples still classified correctly after the attack.
double robust_accuracy(const Model& model, const Dataset& data, AttackKind kind, const AttackConfig& cfg,
                       std::uint64_t seed);

}  // namespace ascl
