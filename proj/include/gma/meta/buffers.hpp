#pragma once

#include <cstdint>
#include <deque>
#include <numeric>
#include <vector>

#include "gma/env/mdp.hpp"
#include "gma/moe/encoder.hpp"
#include "gma/rng.hpp"
#include "gma/sac/sac.hpp"

namespace gma::meta {

/// (s, a, r, s') with the state windows in compact category form. `squashed` is the continuous
/// action a_hat the critics are trained on; `action` is its binary mapping.
struct Transition {
  std::vector<std::uint8_t> state;
  int action = 0;
  double squashed = 0.0;
  double reward = 0.0;
  std::vector<std::uint8_t> next_state;
  long t = 0;
};

inline int state_width(int history) { return history * env::kNumPairs; }
inline int context_width(int history) { return 2 * state_width(history) + 2; }

/// Writes the context row [one-hot s, a, r, one-hot s'] to dst.
inline void encode_context(const Transition& tr, double* dst) {
  const std::size_t w = tr.state.size() * env::kNumPairs;
  env::encode_categories(tr.state, dst);
  dst[w] = tr.action;
  dst[w + 1] = tr.reward;
  env::encode_categories(tr.next_state, dst + w + 2);
}

/// Bounded FIFO of transitions; oldest entries are evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("replay buffer capacity must be positive");
  }

  void push(Transition tr) {
    if (data_.size() == capacity_) data_.pop_front();
    data_.push_back(std::move(tr));
  }
  void clear() { data_.clear(); }

  std::size_t size() const noexcept { return data_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return data_.empty(); }
  const Transition& operator[](std::size_t i) const { return data_[i]; }
  const Transition& back() const { return data_.back(); }

  /// Indices of a uniform sample among the newest `window` entries (all entries when window = 0),
  /// without replacement when the window is large enough.
  std::vector<std::size_t> sample(std::size_t n, Rng& rng, std::size_t window = 0) const {
    if (data_.empty()) throw UsageError("sampling from an empty replay buffer");
    const std::size_t span = (window == 0 || window > data_.size()) ? data_.size() : window;
    const std::size_t offset = data_.size() - span;
    std::vector<std::size_t> out;
    out.reserve(n);
    if (n <= span) {
      std::vector<std::size_t> idx(span);
      std::iota(idx.begin(), idx.end(), offset);
      for (std::size_t i = 0; i < n; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, static_cast<int>(span - i)));
        std::swap(idx[i], idx[j]);
        out.push_back(idx[i]);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) out.push_back(offset + static_cast<std::size_t>(uniform_index(rng, static_cast<int>(span))));
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::deque<Transition> data_;
};

inline sac::Batch make_batch(const ReplayBuffer& buf, const std::vector<std::size_t>& idx) {
  const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
  const int sw = static_cast<int>(buf[idx.front()].state.size()) * env::kNumPairs;
  sac::Batch b{ad::Matrix(n, sw), ad::Matrix(n, 1), ad::Matrix(n, 1), ad::Matrix(n, sw)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& tr = buf[idx[static_cast<std::size_t>(i)]];
    env::encode_categories(tr.state, b.states.row(i).data());
    env::encode_categories(tr.next_state, b.next_states.row(i).data());
    b.actions(i, 0) = tr.squashed;
    b.rewards(i, 0) = tr.reward;
  }
  return b;
}

inline ad::Matrix make_context(const ReplayBuffer& buf, const std::vector<std::size_t>& idx, int history) {
  ad::Matrix c(static_cast<Eigen::Index>(idx.size()), context_width(history));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    encode_context(buf[idx[i]], c.row(static_cast<Eigen::Index>(i)).data());
  }
  return c;
}

/// The latest U transitions of the current task with their encoder factors cached. Valid only
/// while the encoder parameters stay fixed; clear() whenever they change.
class ContextCache {
 public:
  ContextCache(const moe::MoeEncoder& encoder, int history, std::size_t capacity = 150)
      : encoder_(&encoder), history_(history), capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("context capacity must be positive");
  }

  void clear() { entries_.clear(); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t capacity() const noexcept { return capacity_; }

  void push(const Transition& tr) {
    Entry e;
    e.row = ad::Matrix(1, context_width(history_));
    encode_context(tr, e.row.data());
    e.t = tr.t;
    ad::Tape t;
    const auto f = encoder_->factors(t, e.row);
    e.logits = f.gate_logits.value();
    const int m_count = encoder_->experts();
    for (int m = 0; m < m_count; ++m) {
      e.means.push_back(f.means[static_cast<std::size_t>(m)].value());
      e.vars.push_back(f.vars[static_cast<std::size_t>(m)].value());
    }
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(std::move(e));
  }

  /// Latest timestamp held (for the "context only sees the past" check).
  long newest_time() const { return entries_.empty() ? -1 : entries_.back().t; }

  struct Posterior {
    moe::Row weights;
    std::vector<moe::GaussianFactor> experts;
  };

  /// Gate weights and expert posteriors from the cached factors, aggregated in canonical row order.
  Posterior posterior() const {
    if (entries_.empty()) throw UsageError("posterior of an empty context");
    ad::Matrix rows(static_cast<Eigen::Index>(entries_.size()), context_width(history_));
    for (std::size_t i = 0; i < entries_.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = entries_[i].row;
    const auto order = moe::canonical_order(rows);
    const int m_count = encoder_->experts();
    moe::Row logits = moe::Row::Zero(m_count);
    for (int i : order) logits += entries_[static_cast<std::size_t>(i)].logits.row(0);
    logits /= static_cast<double>(entries_.size());
    Posterior p;
    p.weights = (logits.array() - logits.maxCoeff()).exp();
    p.weights /= p.weights.sum();
    const int d = encoder_->latent_dim();
    for (int m = 0; m < m_count; ++m) {
      moe::Row precision = moe::Row::Zero(d);
      moe::Row weighted = moe::Row::Zero(d);
      for (int i : order) {
        const auto& e = entries_[static_cast<std::size_t>(i)];
        const moe::Row lambda = e.vars[static_cast<std::size_t>(m)].row(0).cwiseInverse();
        precision += lambda;
        weighted += lambda.cwiseProduct(e.means[static_cast<std::size_t>(m)].row(0));
      }
      p.experts.push_back({weighted.cwiseQuotient(precision), precision.cwiseInverse()});
    }
    return p;
  }

  /// z from the gated mixture, or from the prior while the context is empty.
  moe::Row sample_z(Rng& rng, bool deterministic = false) const {
    if (entries_.empty()) return moe::prior_sample(encoder_->latent_dim(), rng, deterministic);
    const auto p = posterior();
    return moe::sample_mixture(p.experts, p.weights, rng, deterministic).z;
  }

 private:
  struct Entry {
    ad::Matrix row;
    ad::Matrix logits;
    std::vector<ad::Matrix> means, vars;
    long t = 0;
  };

  const moe::MoeEncoder* encoder_;
  int history_;
  std::size_t capacity_;
  std::deque<Entry> entries_;
};

}  // namespace gma::meta
