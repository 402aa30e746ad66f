#pragma once

#include <cmath>
#include <vector>

#include "cqil/layers.hpp"

namespace cqil {

// Adam with conventional beta/epsilon defaults. Slots are aligned with the
// parameter list passed to init and are part of the checkpoint state.
template <typename T>
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void init(const ParamList<T>& params) {
    slots_.clear();
    for (const auto& p : params)
      slots_.push_back(Slot{Tensor<T>(p.var.value().shape()),
                            Tensor<T>(p.var.value().shape())});
    step_count_ = 0;
  }

  size_t step_count() const { return step_count_; }
  size_t num_slots() const { return slots_.size(); }
  Tensor<T>& slot_m(size_t i) { return slots_[i].m; }
  Tensor<T>& slot_v(size_t i) { return slots_[i].v; }
  void set_step_count(size_t t) { step_count_ = t; }

  void step(ParamList<T>& params, double lr) {
    CQIL_CHECK_MSG(params.size() == slots_.size(), "optimizer not initialized");
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& var = params[i].var;
      if (!var.node()->requires_grad || !var.node()->grad_alloc) continue;
      Tensor<T>& w = var.value();
      const Tensor<T>& g = var.node()->grad;
      Tensor<T>& m = slots_[i].m;
      Tensor<T>& v = slots_[i].v;
      for (size_t j = 0; j < w.numel(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = static_cast<T>(beta1 * m[j] + (1.0 - beta1) * gj);
        v[j] = static_cast<T>(beta2 * v[j] + (1.0 - beta2) * gj * gj);
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        w[j] = static_cast<T>(w[j] - lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  std::vector<Slot> slots_;
  size_t step_count_ = 0;
};

}  // namespace cqil
