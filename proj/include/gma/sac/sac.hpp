#pragma once

// Latent-conditioned soft actor-critic with a Tanh-normal actor over one continuous action that is
// mapped to a binary transmit decision (transmit iff a_hat >= 0).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>

#include "gma/ad/net.hpp"
#include "gma/ad/optim.hpp"
#include "gma/rng.hpp"

namespace gma::sac {

using ad::Matrix;
using ad::Var;
using Row = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct SacConfig {
  int state_dim = 100;
  int latent_dim = 6;  // 0 disables conditioning
  int hidden = 64;
  double gamma = 0.9;
  double target_entropy = -1.0;  // -dim(A)
  double init_log_alpha = 0.0;
  double log_std_min = -20.0;
  double log_std_max = 2.0;
};

/// Actor, twin critics, their targets, and the temperature.
class SacNets {
 public:
  SacNets() = default;
  SacNets(SacConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.state_dim < 1 || cfg_.latent_dim < 0 || cfg_.hidden < 1) throw ConfigError("invalid SAC dimensions");
    ad::init_params(actor_spec(), actor, "actor", derive_seed(seed, 11));
    ad::init_params(critic_spec(), critic1, "critic", derive_seed(seed, 12));
    ad::init_params(critic_spec(), critic2, "critic", derive_seed(seed, 13));
    target1 = critic1;
    target2 = critic2;
    temperature.add("log_alpha", Matrix::Constant(1, 1, cfg_.init_log_alpha));
  }

  const SacConfig& config() const noexcept { return cfg_; }

  /// input -> dense(hidden, ReLU) -> residual block -> dense(2): mean and log-std.
  ad::NetSpec actor_spec() const {
    using K = ad::LayerSpec::Kind;
    return ad::NetSpec{cfg_.state_dim + cfg_.latent_dim,
                       {{K::Dense, cfg_.hidden, ad::Activation::Relu},
                        {K::Residual, cfg_.hidden, ad::Activation::Relu},
                        {K::Dense, 2, ad::Activation::Identity}}};
  }

  /// Three-layer MLP over [state, a_hat, z].
  ad::NetSpec critic_spec() const {
    return ad::NetSpec::mlp(cfg_.state_dim + 1 + cfg_.latent_dim, {cfg_.hidden, cfg_.hidden}, 1);
  }

  double alpha() const { return std::exp(temperature.get("log_alpha").value(0, 0)); }
  void reset_temperature() {
    auto& p = temperature.get("log_alpha");
    p.value(0, 0) = cfg_.init_log_alpha;
    p.m.setZero();
    p.v.setZero();
    p.grad.setZero();
    temperature.step = 0;
  }

  ad::ParamStore actor, critic1, critic2, target1, target2, temperature;

 private:
  SacConfig cfg_;
};

struct PolicyOutput {
  double mean = 0.0;
  double log_std = 0.0;
  double squashed = 0.0;  // a_hat in (-1, 1)
  double log_prob = 0.0;  // Tanh-normal log density of a_hat
  int action = 0;
};

inline int binary_action(double squashed) { return squashed >= 0.0 ? 1 : 0; }

/// log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|.
inline double log_one_minus_tanh_sq(double u) {
  const double x = -2.0 * u;
  const double sp = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return 2.0 * (std::numbers::ln2 - u - sp);
}

/// Log density of a_hat = tanh(mean + std * eps) at the given eps.
inline double tanh_normal_log_prob(double eps, double log_std, double u) {
  return -0.5 * eps * eps - log_std - 0.5 * std::log(2.0 * std::numbers::pi) - log_one_minus_tanh_sq(u);
}

namespace detail {

inline Matrix join(const Row& a, const Row& b) {
  Matrix out(1, a.size() + b.size());
  out << a, b;
  return out;
}

inline Var with_latent(Var states, const std::optional<Var>& z) {
  if (!z) return states;
  return ad::concat_cols({states, ad::broadcast_rows(*z, states.rows())});
}

inline void check_latent(const SacConfig& cfg, bool has_z) {
  if (has_z != (cfg.latent_dim > 0)) throw ConfigError("task latent must be supplied iff latent_dim > 0");
}

}  // namespace detail

inline PolicyOutput act(const SacNets& nets, const Row& state, const Row& z, Rng& rng, bool deterministic = false) {
  const auto& cfg = nets.config();
  if (state.size() != cfg.state_dim) throw ConfigError("state width mismatch");
  if (z.size() != cfg.latent_dim) throw ConfigError("latent width mismatch");
  ad::Tape t;
  Var out = ad::forward(nets.actor_spec(), nets.actor, "actor", t.constant(detail::join(state, z)));
  ad::require_finite(out.value(), "actor output");
  PolicyOutput p;
  p.mean = out.value()(0, 0);
  p.log_std = std::clamp(out.value()(0, 1), cfg.log_std_min, cfg.log_std_max);
  const double eps = deterministic ? 0.0 : standard_normal(rng);
  const double u = p.mean + std::exp(p.log_std) * eps;
  p.squashed = std::tanh(u);
  p.log_prob = tanh_normal_log_prob(eps, p.log_std, u);
  p.action = binary_action(p.squashed);
  return p;
}

/// Reparameterized batch sample from the actor, recorded on the tape.
struct PolicySample {
  Var squashed;  // B x 1
  Var log_prob;  // B x 1
};

inline PolicySample sample_policy(Var actor_out, const Matrix& eps, const SacConfig& cfg) {
  ad::Tape& t = actor_out.tape();
  Var mean = ad::slice_cols(actor_out, 0, 1);
  Var log_std = ad::clamp(ad::slice_cols(actor_out, 1, 1), cfg.log_std_min, cfg.log_std_max);
  Var e = t.constant(eps);
  Var u = ad::add(mean, ad::mul(ad::exp(log_std), e));
  Var squashed = ad::tanh(u);
  // log(1 - tanh^2 u) = 2 (log 2 - u - softplus(-2u))
  Var correction = ad::scale(ad::sub(ad::neg(u), ad::softplus(ad::scale(u, -2.0))), 2.0);
  correction = ad::add_scalar(correction, 2.0 * std::numbers::ln2);
  Var gauss = ad::add_scalar(ad::neg(log_std), -0.5 * std::log(2.0 * std::numbers::pi));
  gauss = ad::add(gauss, t.constant(-0.5 * eps.cwiseProduct(eps)));
  return {squashed, ad::sub(gauss, correction)};
}

inline Matrix draw_eps(Eigen::Index rows, Rng& rng) {
  Matrix eps(rows, 1);
  for (Eigen::Index i = 0; i < rows; ++i) eps(i, 0) = standard_normal(rng);
  return eps;
}

/// Off-policy batch: one-hot states, continuous actions a_hat, rewards, next states.
struct Batch {
  Matrix states;
  Matrix actions;
  Matrix rewards;
  Matrix next_states;
  Eigen::Index size() const { return states.rows(); }
};

/// y = r + gamma * (min_i Qhat_i(s', a', z) - alpha * log pi(a'|s', z)) with a' drawn from the actor.
inline Matrix critic_target(const SacNets& nets, const Batch& b, const std::optional<Row>& z, double alpha,
                            const Matrix& eps) {
  const auto& cfg = nets.config();
  detail::check_latent(cfg, z.has_value());
  ad::Tape t;
  std::optional<Var> zv;
  if (z) zv = t.constant(*z);
  Var next = detail::with_latent(t.constant(b.next_states), zv);
  const auto pi = sample_policy(ad::forward(nets.actor_spec(), nets.actor, "actor", next), eps, cfg);
  Var qin = cfg.latent_dim > 0 ? ad::concat_cols({t.constant(b.next_states), pi.squashed,
                                                  ad::broadcast_rows(*zv, b.size())})
                               : ad::concat_cols({t.constant(b.next_states), pi.squashed});
  Var q1 = ad::forward(nets.critic_spec(), nets.target1, "critic", qin);
  Var q2 = ad::forward(nets.critic_spec(), nets.target2, "critic", qin);
  const Matrix soft_v = q1.value().cwiseMin(q2.value()) - alpha * pi.log_prob.value();
  Matrix y = b.rewards + cfg.gamma * soft_v;
  ad::require_finite(y, "critic target");
  return y;
}

struct CriticLosses {
  Var q1;
  Var q2;
};

/// Mean squared soft Bellman errors of both critics against the shared target y. The latent `z`
/// lives on the same tape so the error can flow back into the encoder.
inline CriticLosses critic_loss(ad::Tape& t, SacNets& nets, const Batch& b, const std::optional<Var>& z,
                                const Matrix& y) {
  if (b.size() == 0) throw UsageError("critic loss on an empty batch");
  detail::check_latent(nets.config(), z.has_value());
  std::vector<Var> parts{t.constant(b.states), t.constant(b.actions)};
  if (z) parts.push_back(ad::broadcast_rows(*z, b.size()));
  Var qin = ad::concat_cols(parts);
  Var target = t.constant(y);
  Var q1 = ad::forward(nets.critic_spec(), nets.critic1, "critic", qin, ad::Mode::Train);
  Var q2 = ad::forward(nets.critic_spec(), nets.critic2, "critic", qin, ad::Mode::Train);
  CriticLosses out{ad::mean_all(ad::square(ad::sub(q1, target))), ad::mean_all(ad::square(ad::sub(q2, target)))};
  ad::require_finite(out.q1.value(), "critic 1 loss");
  ad::require_finite(out.q2.value(), "critic 2 loss");
  return out;
}

struct ActorLoss {
  Var loss;
  Matrix log_prob;  // B x 1, for the temperature update
};

/// mean(alpha * log pi(a|s,z) - min_i Q_i(s, a, z)); critics and z are constants here.
inline ActorLoss actor_loss(ad::Tape& t, SacNets& nets, const Batch& b, const std::optional<Row>& z, double alpha,
                            const Matrix& eps) {
  if (b.size() == 0) throw UsageError("actor loss on an empty batch");
  const auto& cfg = nets.config();
  detail::check_latent(cfg, z.has_value());
  std::optional<Var> zv;
  if (z) zv = t.constant(*z);
  Var s = t.constant(b.states);
  Var in = detail::with_latent(s, zv);
  const auto pi = sample_policy(ad::forward(nets.actor_spec(), nets.actor, "actor", in, ad::Mode::Train), eps, cfg);
  std::vector<Var> parts{s, pi.squashed};
  if (zv) parts.push_back(ad::broadcast_rows(*zv, b.size()));
  Var qin = ad::concat_cols(parts);
  const SacNets& frozen = nets;
  Var q1 = ad::forward(frozen.critic_spec(), frozen.critic1, "critic", qin);
  Var q2 = ad::forward(frozen.critic_spec(), frozen.critic2, "critic", qin);
  Var loss = ad::mean_all(ad::sub(ad::scale(pi.log_prob, alpha), ad::minimum(q1, q2)));
  ad::require_finite(loss.value(), "actor loss");
  return {loss, pi.log_prob.value()};
}

/// mean(-alpha * log pi - alpha * H_target), differentiated with respect to log alpha only.
inline Var temperature_loss(ad::Tape& t, SacNets& nets, const Matrix& log_prob) {
  if (log_prob.size() == 0) throw UsageError("temperature loss on an empty batch");
  Var alpha = ad::exp(t.param(nets.temperature.get("log_alpha")));
  const double h = nets.config().target_entropy;
  Var inner = t.constant(-(log_prob.array() + h).matrix());
  Var loss = ad::mean_all(ad::scale_by(alpha, inner));
  ad::require_finite(loss.value(), "temperature loss");
  return loss;
}

/// J_en = (J_Q1 + J_Q2) + beta * KL.
inline Var encoder_loss(const CriticLosses& critic, Var kl, double beta) {
  return ad::add(ad::add(critic.q1, critic.q2), ad::scale(kl, beta));
}

}  // namespace gma::sac
