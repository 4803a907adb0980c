#pragma once

#include <cmath>

#include "gma/ad/tape.hpp"

namespace gma::ad {

struct AdamConfig {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update from the accumulated gradients. Does not clear them.
inline void adam_step(ParamStore& store, const AdamConfig& cfg, const std::string& what = "parameters") {
  for (const auto& p : store.all())
    if (!p.grad.allFinite()) throw NumericError("non-finite gradient for " + what + " '" + p.name + "'");
  ++store.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(store.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(store.step));
  for (auto& p : store.all()) {
    p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * p.grad;
    p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= cfg.lr * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + cfg.eps);
  }
}

/// Polyak averaging: target <- eta * online + (1 - eta) * target.
inline void soft_update(ParamStore& target, const ParamStore& online, double eta) {
  if (!target.same_layout(online)) throw ConfigError("soft_update: parameter names or shapes differ");
  auto& tp = target.all();
  const auto& op = online.all();
  for (std::size_t i = 0; i < tp.size(); ++i) tp[i].value = eta * op[i].value + (1.0 - eta) * tp[i].value;
}

}  // namespace gma::ad
