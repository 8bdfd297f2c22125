#pragma once

// Adversarial supervised contrastive objective.
//
// Latent pool layout: for a batch of N samples the pool has 2N rows, slots
// 0..N-1 hold the natural latents z_i and slots N..2N-1 the adversarial
// latents z_i^a of the same samples.
//
// Selection strategies decide, per anchor sample i, which other pool slots are
// positives and negatives:
//
//   Global     positives: every slot of j != i with y_j == y_i
//              negatives: every slot of j != i with y_j != y_i
//   Hard-LS    positives as Global; a negative slot is kept only when its
//              prediction (p_j for natural, p_j^a for adversarial) equals y_i
//   Soft-LS    positives as Global; negatives kept when the prediction equals p_i
//   Leaked-LS  negatives as Soft-LS; positives kept when the prediction equals p_i
//
// The anchor's own slots (i and i + N) are never in either set.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ascl/model.hpp"
#include "ascl/tensor.hpp"

namespace ascl {

enum class SelectionStrategy { global, hard_ls, soft_ls, leaked_ls };

inline constexpr SelectionStrategy kAllStrategies[] = {SelectionStrategy::global, SelectionStrategy::hard_ls,
                                                       SelectionStrategy::soft_ls, SelectionStrategy::leaked_ls};

/// Accepts global, hard, soft, leaked.
SelectionStrategy parse_strategy(std::string_view name);
std::string_view to_string(SelectionStrategy s);

struct SelectionResult {
  std::vector<std::size_t> positives;  // ascending slot indices
  std::vector<std::size_t> negatives;  // ascending slot indices
  std::size_t anchor_nat_slot = 0;
  std::size_t anchor_adv_slot = 0;
};

SelectionResult select(SelectionStrategy strategy, std::span<const std::size_t> labels,
                       std::span<const std::size_t> preds_nat, std::span<const std::size_t> preds_adv,
                       std::size_t anchor);
SelectionResult select(SelectionStrategy strategy, std::span<const std::size_t> labels,
                       const PredictionSnapshot& snapshot, std::size_t anchor);

struct SelectionStats {
  double mean_positives = 0.0;  // includes the anchor's adversarial counterpart
  double mean_negatives = 0.0;
};

SelectionStats selection_stats(SelectionStrategy strategy, std::span<const std::size_t> labels,
                               std::span<const std::size_t> preds_nat, std::span<const std::size_t> preds_adv);
SelectionStats selection_stats(SelectionStrategy strategy, std::span<const std::size_t> labels,
                               const PredictionSnapshot& snapshot);

enum class SimilarityKind { cosine, neg_lp };

struct Similarity {
  SimilarityKind kind = SimilarityKind::cosine;
  double p = 2.0;  // only for neg_lp

  /// "cosine" or "lp:<p>".
  static Similarity parse(std::string_view text);
  std::string to_string() const;
};

struct LossWeights {
  double lambda_scl = 1.0;
  double lambda_vat = 2.0;
  double tau = 0.07;
  Similarity similarity;

  /// Throws ConfigError.
  void validate() const;
};

struct LossFlags {
  bool nat_ce = true;   // natural-image cross-entropy term of the AT loss
  bool use_vat = true;  // KL smoothness term
};

/// sim(a_i, b_j) for every row pair: cosine similarity or -||a_i - b_j||_p.
/// Cosine raises DomainError on a zero row.
Tensor similarity_matrix(const Similarity& sim, const Tensor& a, const Tensor& b);
/// Scalar similarity of two latents given as vectors or 1 x h rows.
Tensor similarity(const Similarity& sim, const Tensor& za, const Tensor& zb);

/// Fused contrastive term per row of `logits` (R x K):
///   loss_r = -1/|num_r| * sum_{j in num_r} log( exp(x_rj) / sum_{k in den_r} exp(x_rk) )
/// Masks are R x K with num_r a nonempty subset of den_r. Returns R x 1.
Tensor contrastive_rows(const Tensor& logits, std::span<const std::uint8_t> numerator_mask,
                        std::span<const std::uint8_t> denominator_mask);

/// Contrastive loss of natural anchor i: numerator terms positives + {z_i^a},
/// denominator positives + negatives + {z_i^a}, similarities against z_i.
Tensor scl_anchor_nat(std::size_t anchor, const Tensor& pool, const SelectionResult& sel, const LossWeights& w);
/// Contrastive loss of adversarial anchor i: z_i^a as anchor, z_i as the special slot.
Tensor scl_anchor_adv(std::size_t anchor, const Tensor& pool, const SelectionResult& sel, const LossWeights& w);

/// (1/N) sum_i (L_i^nat + L_i^adv); both anchor views of sample i share one selection.
Tensor scl_batch(const Tensor& pool, std::span<const std::size_t> labels, std::span<const std::size_t> preds_nat,
                 std::span<const std::size_t> preds_adv, SelectionStrategy strategy, const LossWeights& w);

/// (1/N) sum_i [CE(h(x_i), y_i) + CE(h(x_i^a), y_i)], first term dropped when nat_ce is false.
Tensor at_loss(const Tensor& logits_nat, const Tensor& logits_adv, std::span<const std::size_t> labels,
               bool nat_ce = true);

/// (1/N) sum_i KL(h(x_i) || h(x_i^a)).
Tensor vat_loss(const Tensor& logits_nat, const Tensor& logits_adv);

struct LossBreakdown {
  Tensor total;
  double at = 0.0;
  double scl = 0.0;  // evaluated even when its weight is zero
  double vat = 0.0;  // zero when the VAT term is disabled
  SelectionStats selection;
  PredictionSnapshot snapshot;
};

/// L = L_AT + lambda_scl * L_SCL + lambda_vat * L_VAT from one joint forward of
/// the natural and adversarial batch. Terms with zero weight stay out of the graph.
LossBreakdown total_loss(const Model& model, const Tensor& x_nat, const Tensor& x_adv,
                         std::span<const std::size_t> labels, SelectionStrategy strategy, const LossWeights& w,
                         const LossFlags& flags = {});

}  // namespace ascl
