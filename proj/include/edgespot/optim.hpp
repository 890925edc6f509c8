#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "edgespot/checkpoint.hpp"
#include "edgespot/nn.hpp"

namespace edgespot {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;  // global gradient-norm clip; 0 disables
};

/// AdamW with decoupled weight decay (applied to matrices only) and global
/// norm clipping.
template <class T>
class AdamW {
 public:
  AdamW(ParamSet<T> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& [_, p] : params_.items) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long steps_taken() const { return t_; }

  /// Returns the pre-clip global gradient norm.
  double step() {
    double sq = 0;
    for (auto& [name, p] : params_.items) {
      for (T g : p.grad()) {
        if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in " + name);
        sq += static_cast<double>(g) * static_cast<double>(g);
      }
    }
    const double norm = std::sqrt(sq);
    const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.items.size(); ++i) {
      auto& p = params_.items[i].second;
      auto g = p.grad();
      auto w = p.mutable_data();
      const bool decay = p.dim() >= 2;
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]) * clip;
        m_[i][j] = static_cast<T>(cfg_.beta1 * m_[i][j] + (1 - cfg_.beta1) * gj);
        v_[i][j] = static_cast<T>(cfg_.beta2 * v_[i][j] + (1 - cfg_.beta2) * gj * gj);
        double wj = w[j];
        if (decay) wj -= cfg_.lr * cfg_.weight_decay * wj;
        wj -= cfg_.lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + cfg_.eps);
        w[j] = static_cast<T>(wj);
      }
    }
    return norm;
  }

  void save_state(Checkpoint& ck) const {
    for (std::size_t i = 0; i < params_.items.size(); ++i) {
      const auto& [name, p] = params_.items[i];
      ck.put("adamw.m." + name, p.shape(), std::vector<float>(m_[i].begin(), m_[i].end()));
      ck.put("adamw.v." + name, p.shape(), std::vector<float>(v_[i].begin(), v_[i].end()));
    }
    ck.meta["adamw_step"] = t_;
  }

  void load_state(const Checkpoint& ck) {
    for (std::size_t i = 0; i < params_.items.size(); ++i) {
      const auto& name = params_.items[i].first;
      const auto& m = ck.tensors.at("adamw.m." + name).values;
      const auto& v = ck.tensors.at("adamw.v." + name).values;
      if (m.size() != m_[i].size() || v.size() != v_[i].size())
        throw DataError("optimizer state shape mismatch for " + name);
      m_[i].assign(m.begin(), m.end());
      v_[i].assign(v.begin(), v.end());
    }
    t_ = ck.meta.at("adamw_step").get<long>();
  }

 private:
  ParamSet<T> params_;
  AdamWConfig cfg_;
  std::vector<Buffer<T>> m_, v_;
  long t_ = 0;
};

}  // namespace edgespot
