// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "dcd/autodiff.hpp"
#include "dcd/error.hpp"

namespace dcd {

struct OptimSpec {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// (epoch, multiplier): from that epoch on the rate is multiplied by it; entries compound.
  std::vector<std::pair<std::size_t, double>> schedule = {{15, 0.1}, {23, 0.1}};
  std::size_t epochs = 30;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    for (std::size_t i = 1; i < schedule.size(); ++i)
      if (schedule[i].first <= schedule[i - 1].first) throw ConfigError("schedule epochs must be strictly increasing");
  }

  double lr_at(std::size_t epoch) const {
    double r = lr;
    for (const auto& [e, m] : schedule)
      if (epoch >= e) r *= m;
    return r;
  }
};

/// One heavy-ball update: v <- m v + g + wd p ; p <- p - lr v ; then clamp to bounds.
inline void sgd_update(Parameter& p, Tensor& velocity, double lr, double momentum, double weight_decay) {
  if (velocity.shape() != p.value.shape()) velocity = Tensor(p.value.shape());
  if (p.grad && p.grad->shape() != p.value.shape())
    throw DimensionError("gradient shape " + shape_str(p.grad->shape()) + " for parameter " + p.name + " " +
                         shape_str(p.value.shape()));
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double g = p.grad ? (*p.grad)[i] : 0.0;
    velocity[i] = momentum * velocity[i] + g + weight_decay * p.value[i];
    p.value[i] -= lr * velocity[i];
  }
  p.project();
}

class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  /// Registers a parameter. `decay` selects whether weight decay applies to it.
  void add(Parameter& p, bool decay = true) { slots_.push_back({&p, Tensor(p.value.shape()), decay}); }

  void zero_grad() {
    for (auto& s : slots_) s.param->zero_grad();
  }

  void step(double lr) {
    for (auto& s : slots_) sgd_update(*s.param, s.velocity, lr, momentum_, s.decay ? weight_decay_ : 0.0);
  }

  std::size_t size() const { return slots_.size(); }

 private:
  struct Slot {
    Parameter* param;
    Tensor velocity;
    bool decay;
  };
  double momentum_;
  double weight_decay_;
  std::vector<Slot> slots_;
};

}  // namespace dcd
