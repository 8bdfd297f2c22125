#include <string>

#include "ascl/errors.hpp"
#include "ascl/loss.hpp"

namespace ascl {

SelectionStrategy parse_strategy(std::string_view name) {
  if (name == "global") return SelectionStrategy::global;
  if (name == "hard") return SelectionStrategy::hard_ls;
  if (name == "soft") return SelectionStrategy::soft_ls;
  if (name == "leaked") return SelectionStrategy::leaked_ls;
  throw ConfigError("unknown strategy '" + std::string(name) + "' (expected global, hard, soft or leaked)");
}

std::string_view to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::global:
      return "global";
    case SelectionStrategy::hard_ls:
      return "hard";
    case SelectionStrategy::soft_ls:
      return "soft";
    case SelectionStrategy::leaked_ls:
      return "leaked";
  }
  return "global";
}

SelectionResult select(SelectionStrategy strategy, std::span<const std::size_t> labels,
                       std::span<const std::size_t> preds_nat, std::span<const std::size_t> preds_adv,
                       std::size_t anchor) {
  const std::size_t n = labels.size();
  if (anchor >= n) throw ContractError("select: anchor index out of range");
  const bool needs_preds = strategy != SelectionStrategy::global;
  if (needs_preds && (preds_nat.size() != n || preds_adv.size() != n)) {
    throw ContractError("select: predictions must cover the batch");
  }

  SelectionResult out;
  out.anchor_nat_slot = anchor;
  out.anchor_adv_slot = anchor + n;
  const std::size_t y_i = labels[anchor];
  // Reference label the negatives' (and, for Leaked-LS, positives') predictions must match.
  const std::size_t ref = strategy == SelectionStrategy::hard_ls ? y_i : (needs_preds ? preds_nat[anchor] : 0);
  const bool filter_pos = strategy == SelectionStrategy::leaked_ls;
  const bool filter_neg = needs_preds;

  std::vector<std::size_t> adv_pos, adv_neg;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == anchor) continue;
    const bool same = labels[j] == y_i;
    const bool filter = same ? filter_pos : filter_neg;
    auto& nat_set = same ? out.positives : out.negatives;
    auto& adv_set = same ? adv_pos : adv_neg;
    if (!filter || preds_nat[j] == ref) nat_set.push_back(j);
    if (!filter || preds_adv[j] == ref) adv_set.push_back(j + n);
  }
  out.positives.insert(out.positives.end(), adv_pos.begin(), adv_pos.end());
  out.negatives.insert(out.negatives.end(), adv_neg.begin(), adv_neg.end());
  return out;
}

SelectionResult select(SelectionStrategy strategy, std::span<const std::size_t> labels,
                       const PredictionSnapshot& snapshot, std::size_t anchor) {
  if (snapshot.n != labels.size()) throw ContractError("select: snapshot size does not match labels");
  return select(strategy, labels, snapshot.preds_nat, snapshot.preds_adv, anchor);
}

SelectionStats selection_stats(SelectionStrategy strategy, std::span<const std::size_t> labels,
                               std::span<const std::size_t> preds_nat, std::span<const std::size_t> preds_adv) {
  const std::size_t n = labels.size();
  if (n < 2) throw ContractError("selection_stats: need at least two samples");
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto sel = select(strategy, labels, preds_nat, preds_adv, i);
    pos += static_cast<double>(sel.positives.size() + 1);
    neg += static_cast<double>(sel.negatives.size());
  }
  return {pos / static_cast<double>(n), neg / static_cast<double>(n)};
}

SelectionStats selection_stats(SelectionStrategy strategy, std::span<const std::size_t> labels,
                               const PredictionSnapshot& snapshot) {
  if (snapshot.n != labels.size()) throw ContractError("selection_stats: snapshot size does not match labels");
  return selection_stats(strategy, labels, snapshot.preds_nat, snapshot.preds_adv);
}

}  // namespace ascl
