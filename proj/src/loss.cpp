#include <charconv>
#include <cmath>
#include <string>

#include "ascl/errors.hpp"
#include "ascl/loss.hpp"

namespace ascl {

namespace {

Tensor as_row(const Tensor& z) {
  if (z.rank() == 1) return Tensor::matrix(1, z.numel(), {z.data().begin(), z.data().end()}, false);
  return z;
}

// Row of the similarity logits for one anchor against the whole pool, plus masks.
Tensor anchor_term(std::size_t anchor_slot, std::size_t special_slot, const Tensor& pool, const SelectionResult& sel,
                   const LossWeights& w) {
  if (pool.rank() != 2) throw DimensionError("scl: pool must be 2N x h");
  const std::size_t slots = pool.rows();
  if (anchor_slot >= slots || special_slot >= slots) throw ContractError("scl: anchor slot outside pool");
  const std::size_t idx[] = {anchor_slot};
  const Tensor logits = scale(similarity_matrix(w.similarity, gather_rows(pool, idx), pool), 1.0 / w.tau);
  std::vector<std::uint8_t> num(slots, 0), den(slots, 0);
  for (std::size_t s : sel.positives) {
    if (s >= slots) throw ContractError("scl: selection slot outside pool");
    num[s] = den[s] = 1;
  }
  for (std::size_t s : sel.negatives) {
    if (s >= slots) throw ContractError("scl: selection slot outside pool");
    den[s] = 1;
  }
  num[special_slot] = den[special_slot] = 1;
  return sum(contrastive_rows(logits, num, den));
}

}  // namespace

Similarity Similarity::parse(std::string_view text) {
  if (text == "cosine") return {SimilarityKind::cosine, 2.0};
  if (text.starts_with("lp:")) {
    double p = 0.0;
    const auto body = text.substr(3);
    auto res = std::from_chars(body.data(), body.data() + body.size(), p);
    if (res.ec == std::errc() && res.ptr == body.data() + body.size() && p >= 1.0 && std::isfinite(p)) {
      return {SimilarityKind::neg_lp, p};
    }
  }
  throw ConfigError("unknown similarity '" + std::string(text) + "' (expected cosine or lp:<p> with p >= 1)");
}

std::string Similarity::to_string() const {
  if (kind == SimilarityKind::cosine) return "cosine";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, p);
  return "lp:" + std::string(buf, res.ptr);
}

void LossWeights::validate() const {
  if (!(tau > 0.0)) throw ConfigError("temperature tau must be > 0");
  if (!(lambda_scl >= 0.0)) throw ConfigError("lambda_scl must be >= 0");
  if (!(lambda_vat >= 0.0)) throw ConfigError("lambda_vat must be >= 0");
  if (similarity.kind == SimilarityKind::neg_lp && !(similarity.p >= 1.0)) throw ConfigError("lp similarity needs p >= 1");
}

Tensor similarity_matrix(const Similarity& sim, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) throw DimensionError("similarity: width mismatch");
  if (sim.kind == SimilarityKind::cosine) return matmul(normalize_rows(a), transpose(normalize_rows(b)));
  return neg(pairwise_lp_distance(a, b, sim.p));
}

Tensor similarity(const Similarity& sim, const Tensor& za, const Tensor& zb) {
  const Tensor a = as_row(za);
  const Tensor b = as_row(zb);
  if (a.rows() != 1 || b.rows() != 1) throw DimensionError("similarity: expected single latents");
  return sum(similarity_matrix(sim, a, b));
}

Tensor contrastive_rows(const Tensor& logits, std::span<const std::uint8_t> numerator_mask,
                        std::span<const std::uint8_t> denominator_mask) {
  if (logits.rank() != 2) throw DimensionError("contrastive_rows: logits must be rank 2");
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (numerator_mask.size() != rows * cols || denominator_mask.size() != rows * cols) {
    throw DimensionError("contrastive_rows: mask shape mismatch");
  }
  const auto x = logits.data();
  std::vector<double> out(rows);
  // Per row: max over the denominator, normalizer 1 + sum of the other shifted exponentials.
  auto row_max = std::make_shared<std::vector<double>>(rows);
  auto row_norm = std::make_shared<std::vector<double>>(rows);
  auto row_count = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    const std::uint8_t* num = numerator_mask.data() + r * cols;
    const std::uint8_t* den = denominator_mask.data() + r * cols;
    std::size_t top = cols;
    std::size_t count = 0;
    for (std::size_t k = 0; k < cols; ++k) {
      if (num[k] && !den[k]) throw ContractError("contrastive_rows: numerator term missing from denominator");
      if (den[k] && (top == cols || xr[k] > xr[top])) top = k;
      count += num[k] ? 1 : 0;
    }
    if (count == 0) throw ContractError("contrastive_rows: empty numerator set");
    const double m = xr[top];
    double rest = 0.0;
    for (std::size_t k = 0; k < cols; ++k) {
      if (den[k] && k != top) rest += std::exp(xr[k] - m);
    }
    // Every (m - x_j) is >= 0, so the sum has no cancellation.
    double gap = 0.0;
    for (std::size_t k = 0; k < cols; ++k) {
      if (num[k]) gap += m - xr[k];
    }
    out[r] = gap / static_cast<double>(count) + std::log1p(rest);
    (*row_max)[r] = m;
    (*row_norm)[r] = 1.0 + rest;
    (*row_count)[r] = static_cast<double>(count);
  }
  auto num_copy = std::make_shared<std::vector<std::uint8_t>>(numerator_mask.begin(), numerator_mask.end());
  auto den_copy = std::make_shared<std::vector<std::uint8_t>>(denominator_mask.begin(), denominator_mask.end());
  return make_op({rows, 1}, std::move(out), {logits},
                 [logits, num_copy, den_copy, row_max, row_norm, row_count, rows, cols](const GradContext& ctx) {
                   const auto x = logits.data();
                   auto gx = ctx.input_grads[0];
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double g = ctx.out_grad[r];
                     const double inv_count = 1.0 / (*row_count)[r];
                     for (std::size_t k = 0; k < cols; ++k) {
                       const std::size_t idx = r * cols + k;
                       double d = 0.0;
                       if ((*den_copy)[idx]) d += std::exp(x[idx] - (*row_max)[r]) / (*row_norm)[r];
                       if ((*num_copy)[idx]) d -= inv_count;
                       gx[idx] += g * d;
                     }
                   }
                 });
}

Tensor scl_anchor_nat(std::size_t anchor, const Tensor& pool, const SelectionResult& sel, const LossWeights& w) {
  if (sel.anchor_nat_slot != anchor) throw ContractError("scl_anchor_nat: selection computed for another anchor");
  return anchor_term(sel.anchor_nat_slot, sel.anchor_adv_slot, pool, sel, w);
}

Tensor scl_anchor_adv(std::size_t anchor, const Tensor& pool, const SelectionResult& sel, const LossWeights& w) {
  if (sel.anchor_nat_slot != anchor) throw ContractError("scl_anchor_adv: selection computed for another anchor");
  return anchor_term(sel.anchor_adv_slot, sel.anchor_nat_slot, pool, sel, w);
}

Tensor scl_batch(const Tensor& pool, std::span<const std::size_t> labels, std::span<const std::size_t> preds_nat,
                 std::span<const std::size_t> preds_adv, SelectionStrategy strategy, const LossWeights& w) {
  w.validate();
  const std::size_t n = labels.size();
  if (n == 0) throw ContractError("scl_batch: empty batch");
  if (pool.rank() != 2 || pool.rows() != 2 * n) throw DimensionError("scl_batch: pool must have 2N rows");
  const std::size_t slots = 2 * n;
  std::vector<std::uint8_t> num(slots * slots, 0), den(slots * slots, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto sel = select(strategy, labels, preds_nat, preds_adv, i);
    // Row i: natural anchor, special slot i + N. Row i + N: adversarial anchor, special slot i.
    for (const std::size_t row : {i, i + n}) {
      std::uint8_t* nr = num.data() + row * slots;
      std::uint8_t* dr = den.data() + row * slots;
      for (std::size_t s : sel.positives) nr[s] = dr[s] = 1;
      for (std::size_t s : sel.negatives) dr[s] = 1;
    }
    num[i * slots + i + n] = den[i * slots + i + n] = 1;
    num[(i + n) * slots + i] = den[(i + n) * slots + i] = 1;
  }
  const Tensor logits = scale(similarity_matrix(w.similarity, pool, pool), 1.0 / w.tau);
  return scale(sum(contrastive_rows(logits, num, den)), 1.0 / static_cast<double>(n));
}

Tensor at_loss(const Tensor& logits_nat, const Tensor& logits_adv, std::span<const std::size_t> labels, bool nat_ce) {
  if (logits_nat.shape() != logits_adv.shape() || logits_nat.rank() != 2 || logits_nat.rows() != labels.size()) {
    throw DimensionError("at_loss: logits must be N x C with one label per row");
  }
  if (labels.empty()) throw ContractError("at_loss: empty batch");
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  Tensor adv_term = sum(pick(log_softmax(logits_adv, 1), labels));
  if (!nat_ce) return scale(adv_term, -inv_n);
  Tensor nat_term = sum(pick(log_softmax(logits_nat, 1), labels));
  return scale(add(nat_term, adv_term), -inv_n);
}

Tensor vat_loss(const Tensor& logits_nat, const Tensor& logits_adv) {
  if (logits_nat.shape() != logits_adv.shape() || logits_nat.rank() != 2) {
    throw DimensionError("vat_loss: logits must both be N x C");
  }
  const Tensor log_p = log_softmax(logits_nat, 1);
  const Tensor log_q = log_softmax(logits_adv, 1);
  const Tensor kl = sum(mul(exp(log_p), sub(log_p, log_q)));
  return scale(kl, 1.0 / static_cast<double>(logits_nat.rows()));
}

LossBreakdown total_loss(const Model& model, const Tensor& x_nat, const Tensor& x_adv,
                         std::span<const std::size_t> labels, SelectionStrategy strategy, const LossWeights& w,
                         const LossFlags& flags) {
  w.validate();
  if (x_nat.shape() != x_adv.shape() || x_nat.rank() != 2 || x_nat.rows() != labels.size()) {
    throw ContractError("total_loss: batch must contain x, x^a and one label per sample");
  }
  const std::size_t n = labels.size();
  const Tensor z = model.encode(concat_rows(x_nat, x_adv));
  const Tensor logits = model.classify(z);
  const Tensor logits_nat = slice_rows(logits, 0, n);
  const Tensor logits_adv = slice_rows(logits, n, 2 * n);

  LossBreakdown out;
  out.snapshot = make_snapshot(logits_nat, logits_adv);
  out.selection = selection_stats(strategy, labels, out.snapshot);

  Tensor total = at_loss(logits_nat, logits_adv, labels, flags.nat_ce);
  out.at = total.item();

  const Tensor pool = model.project(w.lambda_scl > 0.0 ? z : z.detach());
  const Tensor scl = scl_batch(pool, labels, out.snapshot.preds_nat, out.snapshot.preds_adv, strategy, w);
  out.scl = scl.item();
  if (w.lambda_scl > 0.0) total = add(total, scale(scl, w.lambda_scl));

  if (flags.use_vat) {
    const Tensor vat =
        w.lambda_vat > 0.0 ? vat_loss(logits_nat, logits_adv) : vat_loss(logits_nat.detach(), logits_adv.detach());
    out.vat = vat.item();
    if (w.lambda_vat > 0.0) total = add(total, scale(vat, w.lambda_vat));
  }
  out.total = total;
  return out;
}

}  // namespace ascl
