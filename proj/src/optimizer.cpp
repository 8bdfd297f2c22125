#include "ascl/optimizer.hpp"

#include <cmath>

#include "ascl/errors.hpp"

namespace ascl {

Optimizer::Optimizer(const OptimizerConfig& cfg, std::vector<Tensor> params)
    : cfg_(cfg), lr_(cfg.lr), params_(std::move(params)) {
  for (const auto& p : params_) {
    if (!p.is_leaf() || !p.requires_grad()) throw ContractError("optimizer: parameters must be trainable leaves");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(cfg_.kind == OptimizerKind::adam ? p.numel() : 0, 0.0);
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
  ++t_;
  const double bias1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  constexpr double kAdamEps = 1e-8;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    const auto g = params_[i].grad();
    auto& m = m_[i];
    if (cfg_.kind == OptimizerKind::adam) {
      auto& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        const double m_hat = m[k] / bias1;
        const double v_hat = v[k] / bias2;
        w[k] -= lr_ * m_hat / (std::sqrt(v_hat) + kAdamEps);
      }
    } else {
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double d = g[k] + cfg_.weight_decay * w[k];
        m[k] = cfg_.momentum * m[k] + d;
        w[k] -= lr_ * m[k];
      }
    }
  }
}

}  // namespace ascl
