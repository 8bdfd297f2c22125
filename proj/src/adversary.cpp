#include "ascl/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ascl/errors.hpp"
#include "ascl/rng.hpp"

namespace ascl {

namespace {

constexpr std::size_t kEvalChunk = 256;

void check_labels(const Tensor& x, std::span<const std::size_t> labels, const Model& model) {
  if (x.rank() != 2 || x.rows() != labels.size()) throw ContractError("attack: one label per input row required");
  for (std::size_t y : labels) {
    if (y >= model.spec().num_classes) throw ContractError("attack: label out of range");
  }
}

std::vector<double> per_row_cross_entropy(const Model& frozen, const Tensor& x, std::span<const std::size_t> labels) {
  const Tensor lp = log_softmax(frozen.forward(x), 1);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = -lp.at(i, labels[i]);
  return out;
}

std::vector<double> input_gradient(const Model& frozen, const Tensor& x, std::span<const std::size_t> labels,
                                   AttackLoss loss) {
  Tensor input(x.shape(), {x.data().begin(), x.data().end()}, true);
  const Tensor picked = pick(log_softmax(frozen.forward(input), 1), labels);
  // Untargeted: ascend CE = -sum(log p_y). Targeted: ascend -CE(target) = sum(log p_t).
  const Tensor objective = loss == AttackLoss::cross_entropy ? neg(sum(picked)) : sum(picked);
  backward(objective);
  return {input.grad().begin(), input.grad().end()};
}

}  // namespace

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "none") return AttackKind::none;
  if (name == "pgd") return AttackKind::pgd;
  if (name == "mpgd") return AttackKind::mpgd;
  throw ConfigError("unknown attack '" + std::string(name) + "' (expected none, pgd or mpgd)");
}

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::none:
      return "none";
    case AttackKind::pgd:
      return "pgd";
    case AttackKind::mpgd:
      return "mpgd";
  }
  return "none";
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ContractError("attack epsilon must be >= 0");
  if (steps > 0 && !(eta > 0.0)) throw ContractError("attack step size must be > 0 when steps > 0");
  if (!(clip_lo < clip_hi)) throw ContractError("attack clip range must satisfy lower < upper");
}

AttackConfig AttackConfig::cifar10_train() {
  AttackConfig c;
  c.epsilon = 8.0 / 255.0;
  c.eta = 2.0 / 255.0;
  c.steps = 10;
  return c;
}

AttackConfig AttackConfig::cifar10_eval() {
  AttackConfig c = cifar10_train();
  c.steps = 250;
  return c;
}

Tensor project_linf(const Tensor& x_adv, const Tensor& x_orig, double epsilon, double clip_lo, double clip_hi) {
  if (!(epsilon >= 0.0)) throw ContractError("project_linf: epsilon must be >= 0");
  if (x_adv.shape() != x_orig.shape()) throw DimensionError("project_linf: shape mismatch");
  const auto a = x_adv.data();
  const auto o = x_orig.data();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double lo = std::max(o[i] - epsilon, clip_lo);
    const double hi = std::min(o[i] + epsilon, clip_hi);
    out[i] = std::clamp(a[i], lo, std::max(lo, hi));
  }
  return Tensor(x_adv.shape(), std::move(out));
}

std::vector<double> attack_gradient(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                                    AttackLoss loss) {
  check_labels(x, labels, model);
  return input_gradient(model.frozen(), x, labels, loss);
}

Tensor pgd_attack(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
                  std::uint64_t seed, std::size_t first_index) {
  cfg.validate();
  check_labels(x, labels, model);
  const Tensor origin = x.detach();
  if (cfg.epsilon == 0.0) return origin;
  const Model frozen = model.frozen();

  Tensor cur = origin;
  if (cfg.random_init) {
    const std::size_t rows = x.rows(), cols = x.cols();
    std::vector<double> start(origin.data().begin(), origin.data().end());
    for (std::size_t r = 0; r < rows; ++r) {
      Rng rng(derive_seed(seed, first_index + r));
      for (std::size_t k = 0; k < cols; ++k) start[r * cols + k] += rng.uniform(-cfg.epsilon, cfg.epsilon);
    }
    cur = project_linf(Tensor(x.shape(), std::move(start)), origin, cfg.epsilon, cfg.clip_lo, cfg.clip_hi);
  }
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto g = input_gradient(frozen, cur, labels, cfg.loss);
    std::vector<double> next(cur.data().begin(), cur.data().end());
    for (std::size_t i = 0; i < next.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      next[i] += cfg.eta * s;
    }
    cur = project_linf(Tensor(x.shape(), std::move(next)), origin, cfg.epsilon, cfg.clip_lo, cfg.clip_hi);
  }
  return cur;
}

Tensor multi_targeted_pgd(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                          const AttackConfig& cfg, std::uint64_t seed, std::size_t first_index) {
  cfg.validate();
  check_labels(x, labels, model);
  const std::size_t classes = model.spec().num_classes;
  if (classes < 2) throw ContractError("multi_targeted_pgd: needs at least two classes");
  const std::size_t rows = x.rows(), cols = x.cols();
  if (cfg.epsilon == 0.0) return x.detach();

  AttackConfig targeted = cfg;
  targeted.loss = AttackLoss::targeted_cross_entropy;
  const Model frozen = model.frozen();

  std::vector<double> chosen(rows * cols);
  std::vector<bool> flipped(rows, false);
  std::vector<double> best_loss(rows, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> targets(rows);
  for (std::size_t offset = 1; offset < classes; ++offset) {
    for (std::size_t r = 0; r < rows; ++r) targets[r] = (labels[r] + offset) % classes;
    const Tensor cand = pgd_attack(model, x, targets, targeted, derive_seed(seed, offset), first_index);
    const Tensor logits = frozen.forward(cand);
    const auto preds = argmax(logits, 1);
    const auto ce = per_row_cross_entropy(frozen, cand, labels);
    for (std::size_t r = 0; r < rows; ++r) {
      if (flipped[r]) continue;
      const bool flips = preds[r] != labels[r];
      if (flips || ce[r] > best_loss[r]) {
        best_loss[r] = ce[r];
        std::copy_n(cand.data().begin() + static_cast<std::ptrdiff_t>(r * cols), cols,
                    chosen.begin() + static_cast<std::ptrdiff_t>(r * cols));
      }
      if (flips) flipped[r] = true;
    }
  }
  return Tensor(x.shape(), std::move(chosen));
}

Tensor run_attack(AttackKind kind, const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                  const AttackConfig& cfg, std::uint64_t seed, std::size_t first_index) {
  switch (kind) {
    case AttackKind::none:
      return x.detach();
    case AttackKind::pgd:
      return pgd_attack(model, x, labels, cfg, seed, first_index);
    case AttackKind::mpgd:
      return multi_targeted_pgd(model, x, labels, cfg, seed, first_index);
  }
  return x.detach();
}

Tensor attack_dataset(AttackKind kind, const Model& model, const Dataset& data, const AttackConfig& cfg,
                      std::uint64_t seed) {
  if (data.size() == 0) throw ContractError("attack_dataset: empty dataset");
  std::vector<double> out;
  out.reserve(data.features.size());
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const std::size_t end = std::min(data.size(), start + kEvalChunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor xb = data.feature_tensor(idx);
    const auto yb = data.labels_at(idx);
    const Tensor adv = run_attack(kind, model, xb, yb, cfg, seed, start);
    out.insert(out.end(), adv.data().begin(), adv.data().end());
  }
  return Tensor::matrix(data.size(), data.dim, std::move(out));
}

double accuracy(const Model& model, const Tensor& x, std::span<const std::size_t> labels) {
  if (labels.empty()) throw ContractError("accuracy: empty input");
  if (x.rank() != 2 || x.rows() != labels.size()) throw ContractError("accuracy: one label per row required");
  const auto preds = argmax(model.frozen().forward(x.detach()), 1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double robust_accuracy(const Model& model, const Dataset& data, AttackKind kind, const AttackConfig& cfg,
                       std::uint64_t seed) {
  if (data.size() == 0) throw ContractError("robust_accuracy: empty dataset");
  const Tensor adv = attack_dataset(kind, model, data, cfg, seed);
  return accuracy(model, adv, data.labels);
}

}  // namespace ascl
