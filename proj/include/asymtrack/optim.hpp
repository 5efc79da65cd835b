#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "asymtrack/tensor.hpp"

namespace asymtrack {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWSlot {
  std::vector<double> m;
  std::vector<double> v;
};

// Decoupled weight decay followed by the bias-corrected Adam moment update.
// One optimizer instance per parameter group (different learning rates).
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long step_count() const { return step_; }

  // Applies one step over a named parameter set; gradients are read from the
  // tensors and cleared afterwards.
  void step(std::vector<std::pair<std::string, Tensor>>& params) {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, t] : params) {
      auto& slot = slots_[name];
      auto& val = t.data_mut();
      const auto& g = t.grad();
      if (slot.m.size() != val.size()) {
        slot.m.assign(val.size(), 0.0);
        slot.v.assign(val.size(), 0.0);
      }
      for (double gv : g)
        if (!std::isfinite(gv))
          throw std::runtime_error("adamw: non-finite gradient for " + name);
      for (std::size_t i = 0; i < val.size(); ++i) {
        val[i] -= cfg_.lr * cfg_.weight_decay * val[i];
        slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
        slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        double mhat = slot.m[i] / bc1;
        double vhat = slot.v[i] / bc2;
        val[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      t.zero_grad();
    }
  }

 private:
  AdamWConfig cfg_;
  long step_ = 0;
  std::unordered_map<std::string, AdamWSlot> slots_;
};

}  // namespace asymtrack
