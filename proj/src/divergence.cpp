#include "ascl/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ascl/errors.hpp"
#include "format.hpp"

namespace ascl {

namespace {

std::vector<double> unit_rows(const Tensor& z) {
  const std::size_t m = z.rows(), h = z.cols();
  std::vector<double> out(z.data().begin(), z.data().end());
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < h; ++k) sq += out[i * h + k] * out[i * h + k];
    if (!(sq > 0.0)) throw DomainError("cosine distance undefined for a zero latent (row " + std::to_string(i) + ")");
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t k = 0; k < h; ++k) out[i * h + k] *= inv;
  }
  return out;
}

}  // namespace

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_distance: width mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (!(na > 0.0) || !(nb > 0.0)) throw DomainError("cosine_distance: zero vector");
  const double cos = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
  return 1.0 - cos;
}

Divergences absolute_divergences(const Tensor& z_nat, const std::optional<Tensor>& z_adv,
                                 std::span<const std::size_t> labels) {
  const std::size_t n = labels.size();
  if (z_nat.rank() != 2 || z_nat.rows() != n) throw DimensionError("absolute_divergences: one label per latent row");
  if (z_adv && z_adv->shape() != z_nat.shape()) throw DimensionError("absolute_divergences: adversarial pool shape");
  const std::size_t h = z_nat.cols();
  std::vector<double> unit = unit_rows(z_nat);
  if (z_adv) {
    const auto adv = unit_rows(*z_adv);
    unit.insert(unit.end(), adv.begin(), adv.end());
  }
  const std::size_t slots = z_adv ? 2 * n : n;
  auto distance = [&](std::size_t s, std::size_t t) {
    double dot = 0.0;
    for (std::size_t k = 0; k < h; ++k) dot += unit[s * h + k] * unit[t * h + k];
    return 1.0 - std::clamp(dot, -1.0, 1.0);
  };

  double plus_total = 0.0, minus_total = 0.0;
  std::size_t plus_anchors = 0, minus_anchors = 0;
  for (std::size_t s = 0; s < slots; ++s) {
    const std::size_t i = s % n;
    double plus = 0.0, minus = 0.0;
    std::size_t n_plus = 0, n_minus = 0;
    for (std::size_t t = 0; t < slots; ++t) {
      const std::size_t j = t % n;
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        plus += distance(s, t);
        ++n_plus;
      } else {
        minus += distance(s, t);
        ++n_minus;
      }
    }
    if (n_plus) {
      plus_total += plus / static_cast<double>(n_plus);
      ++plus_anchors;
    }
    if (n_minus) {
      minus_total += minus / static_cast<double>(n_minus);
      ++minus_anchors;
    }
  }
  if (plus_anchors == 0) throw DegenerateInputError("absolute_divergences: every positive set is empty");
  if (minus_anchors == 0) throw DegenerateInputError("absolute_divergences: every negative set is empty");
  return {plus_total / static_cast<double>(plus_anchors), minus_total / static_cast<double>(minus_anchors)};
}

std::optional<double> relative_divergence(double d_plus, double d_minus) {
  if (!(d_minus > kDivergenceTolerance)) return std::nullopt;
  return d_plus / d_minus;
}

DivergenceReport divergence_report(const Tensor& z_nat, const std::optional<Tensor>& z_adv,
                                   std::span<const std::size_t> labels, std::size_t batch, std::string layer_name) {
  if (batch < 2) throw ContractError("divergence_report: batch must hold at least two samples");
  const std::size_t n = labels.size();
  if (z_nat.rank() != 2 || z_nat.rows() != n) throw DimensionError("divergence_report: one label per latent row");
  double plus = 0.0, minus = 0.0;
  std::size_t used = 0;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    try {
      Divergences d;
      if (start == 0 && end == n) {
        d = absolute_divergences(z_nat, z_adv, labels);
      } else {
        const Tensor zn = slice_rows(z_nat, start, end);
        std::optional<Tensor> za;
        if (z_adv) za = slice_rows(*z_adv, start, end);
        d = absolute_divergences(zn, za, labels.subspan(start, end - start));
      }
      plus += d.d_a_plus;
      minus += d.d_a_minus;
      ++used;
    } catch (const DegenerateInputError&) {
      // chunk without both positives and negatives contributes nothing
    }
  }
  if (used == 0) throw DegenerateInputError("divergence_report: no chunk has both positive and negative sets");
  DivergenceReport r;
  r.d_a_plus = plus / static_cast<double>(used);
  r.d_a_minus = minus / static_cast<double>(used);
  r.r_div = relative_divergence(r.d_a_plus, r.d_a_minus);
  r.layer_name = std::move(layer_name);
  r.n_samples = n;
  return r;
}

DivergenceReport analyze_model(const Model& model, const Dataset& data, const std::optional<Tensor>& x_adv) {
  const Model frozen = model.frozen();
  const Tensor z_nat = frozen.encode(data.feature_tensor());
  std::optional<Tensor> z_adv;
  if (x_adv) z_adv = frozen.encode(x_adv->detach());
  return divergence_report(z_nat, z_adv, data.labels);
}

std::vector<DivergenceRow> divergence_sweep(const Model& model, const Dataset& data, const AttackConfig& base,
                                            std::span<const double> epsilons, AttackKind kind, std::uint64_t seed) {
  std::vector<double> grid(epsilons.begin(), epsilons.end());
  std::sort(grid.begin(), grid.end());
  const double ratio = base.epsilon > 0.0 ? base.eta / base.epsilon : 0.0;
  std::vector<DivergenceRow> rows;
  for (double eps : grid) {
    AttackConfig cfg = base;
    cfg.epsilon = eps;
    if (ratio > 0.0 && eps > 0.0) cfg.eta = eps * ratio;
    cfg.validate();
    DivergenceRow row;
    row.epsilon = eps;
    if (eps == 0.0 || kind == AttackKind::none) {
      row.report = analyze_model(model, data, std::nullopt);
      row.robust_acc = accuracy(model, data.feature_tensor(), data.labels);
    } else {
      const Tensor adv = attack_dataset(kind, model, data, cfg, seed);
      row.report = analyze_model(model, data, adv);
      row.robust_acc = accuracy(model, adv, data.labels);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_divergence_csv(std::ostream& out, std::span<const DivergenceRow> rows) {
  out << "epsilon,d_a_plus,d_a_minus,r_div,robust_acc,n_samples,layer_name\n";
  for (const auto& r : rows) {
    out << format_number(r.epsilon) << ',' << format_number(r.report.d_a_plus) << ','
        << format_number(r.report.d_a_minus) << ',' << (r.report.r_div ? format_number(*r.report.r_div) : "") << ','
        << format_number(r.robust_acc) << ',' << r.report.n_samples << ',' << r.report.layer_name << '\n';
  }
}

}  // namespace ascl
