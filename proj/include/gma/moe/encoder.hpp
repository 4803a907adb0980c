#pragma once

// Mixture-of-experts probabilistic context encoder.
//
// Every context transition c_u passes through a shared trunk MLP. Expert m maps the trunk feature
// to a diagonal Gaussian factor N(mu_m(c_u), var_m(c_u)); the factors multiply into the expert's
// posterior. The gate applies one linear map to [trunk(c_u), c_u], averages the logits over the
// context and takes a softmax. The task latent is z = sum_m G_m * z_m with z_m drawn from expert m.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <vector>

#include "gma/ad/net.hpp"
#include "gma/rng.hpp"

namespace gma::moe {

using ad::Matrix;
using ad::Var;
using Row = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct EncoderConfig {
  int context_dim = 202;
  int hidden = 64;
  int trunk_layers = 2;
  int experts = 3;
  int latent_dim = 6;
  double var_floor = 1e-6;
};

/// Diagonal Gaussian; also used for per-expert posteriors.
struct GaussianFactor {
  Row mean;
  Row var;
};

/// Precision-weighted product of diagonal Gaussians (factors are combined in the order given).
inline GaussianFactor product_of_gaussians(std::span<const GaussianFactor> factors) {
  if (factors.empty()) throw UsageError("product of an empty set of Gaussian factors");
  const auto d = factors.front().mean.size();
  Row precision = Row::Zero(d);
  Row weighted = Row::Zero(d);
  for (const auto& f : factors) {
    if (f.mean.size() != d || f.var.size() != d) throw ConfigError("Gaussian factors of different dimension");
    if (!f.mean.allFinite() || !f.var.allFinite()) throw NumericError("non-finite Gaussian factor");
    if ((f.var.array() <= 0.0).any()) throw DomainError("Gaussian factor variance must be positive");
    const Row lambda = f.var.cwiseInverse();
    precision += lambda;
    weighted += lambda.cwiseProduct(f.mean);
  }
  return {weighted.cwiseQuotient(precision), precision.cwiseInverse()};
}

/// Sum over experts of KL(N(mean, var) || N(0, I)).
inline double kl_to_prior(std::span<const GaussianFactor> posteriors) {
  double kl = 0.0;
  for (const auto& p : posteriors) {
    if ((p.var.array() <= 0.0).any()) throw DomainError("posterior variance must be positive");
    kl += 0.5 * (p.mean.array().square() + p.var.array() - p.var.array().log() - 1.0).sum();
  }
  return kl;
}

/// Draw from the unit Gaussian prior p(z); the zero vector when `deterministic`.
inline Row prior_sample(int latent_dim, Rng& rng, bool deterministic = false) {
  Row z = Row::Zero(latent_dim);
  if (!deterministic)
    for (int i = 0; i < latent_dim; ++i) z(i) = standard_normal(rng);
  return z;
}

struct MixtureRepresentation {
  Row weights;
  std::vector<Row> expert_samples;
  Row z;
};

/// z_m = mean_m + sqrt(var_m) * eps_m with independent eps per expert (eps = 0 when deterministic).
inline MixtureRepresentation sample_mixture(std::span<const GaussianFactor> posteriors, const Row& weights, Rng& rng,
                                            bool deterministic = false) {
  if (static_cast<Eigen::Index>(posteriors.size()) != weights.size())
    throw ConfigError("one gate weight per expert is required");
  if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-9)
    throw DomainError("gate weights must lie on the simplex");
  MixtureRepresentation out;
  out.weights = weights;
  const auto d = posteriors.front().mean.size();
  out.z = Row::Zero(d);
  for (std::size_t m = 0; m < posteriors.size(); ++m) {
    Row eps = Row::Zero(d);
    if (!deterministic)
      for (Eigen::Index i = 0; i < d; ++i) eps(i) = standard_normal(rng);
    Row zm = posteriors[m].mean + posteriors[m].var.cwiseSqrt().cwiseProduct(eps);
    out.z += weights(static_cast<Eigen::Index>(m)) * zm;
    out.expert_samples.push_back(std::move(zm));
  }
  return out;
}

/// Row order that depends only on the multiset of rows: rows sorted by (hash, lexicographic).
inline std::vector<int> canonical_order(const Matrix& rows) {
  std::vector<std::uint64_t> key(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    std::uint64_t h = 1469598103934665603ULL;
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      std::uint64_t bits;
      const double v = rows(r, c) == 0.0 ? 0.0 : rows(r, c);
      std::memcpy(&bits, &v, sizeof bits);
      h = (h ^ bits) * 1099511628211ULL;
    }
    key[static_cast<std::size_t>(r)] = h;
  }
  std::vector<int> idx(static_cast<std::size_t>(rows.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const auto ka = key[static_cast<std::size_t>(a)], kb = key[static_cast<std::size_t>(b)];
    if (ka != kb) return ka < kb;
    const auto ra = rows.row(a), rb = rows.row(b);
    return std::lexicographical_compare(ra.data(), ra.data() + ra.size(), rb.data(), rb.data() + rb.size());
  });
  return idx;
}

inline Matrix reorder_rows(const Matrix& rows, const std::vector<int>& order) {
  Matrix out(rows.rows(), rows.cols());
  for (std::size_t i = 0; i < order.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows.row(order[i]);
  return out;
}

class MoeEncoder {
 public:
  /// Encoder outputs recorded on a tape.
  struct Posterior {
    Var weights;             // 1 x M
    std::vector<Var> means;  // M entries of 1 x D
    std::vector<Var> vars;   // M entries of 1 x D
  };

  /// Per-transition outputs before aggregation.
  struct Factors {
    Var gate_logits;         // U x M
    std::vector<Var> means;  // M entries of U x D
    std::vector<Var> vars;   // M entries of U x D
  };

  MoeEncoder() = default;
  MoeEncoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.experts < 1) throw ConfigError("encoder needs at least one expert");
    if (cfg_.latent_dim < 1) throw ConfigError("latent dimension must be positive");
    if (cfg_.context_dim < 1) throw ConfigError("context width must be positive");
    if (!(cfg_.var_floor > 0.0)) throw ConfigError("variance floor must be positive");
    ad::init_params(trunk_spec(), params, "trunk", derive_seed(seed, 1));
    ad::init_params(gate_spec(), params, "gate", derive_seed(seed, 2));
    ad::init_params(expert_spec(), params, "experts", derive_seed(seed, 3));
  }

  const EncoderConfig& config() const noexcept { return cfg_; }
  int experts() const noexcept { return cfg_.experts; }
  int latent_dim() const noexcept { return cfg_.latent_dim; }

  ad::NetSpec trunk_spec() const {
    ad::NetSpec s{cfg_.context_dim, {}};
    for (int i = 0; i < cfg_.trunk_layers; ++i)
      s.layers.push_back({ad::LayerSpec::Kind::Dense, cfg_.hidden, ad::Activation::Relu});
    return s;
  }
  ad::NetSpec gate_spec() const {
    return ad::NetSpec{trunk_width() + cfg_.context_dim,
                       {{ad::LayerSpec::Kind::Dense, cfg_.experts, ad::Activation::Identity}}};
  }
  ad::NetSpec expert_spec() const {
    return ad::NetSpec{trunk_width(),
                       {{ad::LayerSpec::Kind::Dense, 2 * cfg_.experts * cfg_.latent_dim, ad::Activation::Identity}}};
  }

  /// Per-transition gate logits and Gaussian factors for rows given in the order supplied.
  Factors factors(ad::Tape& t, const Matrix& context, ad::Mode mode) {
    return factors_impl(t, context, mode, params);
  }
  Factors factors(ad::Tape& t, const Matrix& context) const { return factors_impl(t, context, ad::Mode::Frozen, params); }

  /// Gate weights and expert posteriors. Rows are put in canonical order first, so the result is
  /// exactly invariant to the order of the context.
  Posterior posterior(ad::Tape& t, const Matrix& context, ad::Mode mode = ad::Mode::Train) {
    return aggregate(factors(t, canonical(context), mode));
  }
  Posterior posterior(ad::Tape& t, const Matrix& context) const { return aggregate(factors(t, canonical(context))); }

  /// Reparameterized mixture sample; `eps` is M x D standard-normal noise.
  static Var sample(const Posterior& post, const Matrix& eps) {
    ad::Tape& t = post.weights.tape();
    Var z;
    for (std::size_t m = 0; m < post.means.size(); ++m) {
      Var e = t.constant(eps.row(static_cast<Eigen::Index>(m)));
      Var zm = ad::add(post.means[m], ad::mul(ad::sqrt(post.vars[m]), e));
      Var gm = ad::slice_cols(post.weights, static_cast<Eigen::Index>(m), 1);
      Var term = ad::scale_by(gm, zm);
      z = z.valid() ? ad::add(z, term) : term;
    }
    return z;
  }

  /// sum_m 0.5 * sum_d (mean^2 + var - log var - 1).
  static Var kl(const Posterior& post) {
    Var total;
    for (std::size_t m = 0; m < post.means.size(); ++m) {
      Var inner = ad::sub(ad::add(ad::square(post.means[m]), post.vars[m]), ad::log(post.vars[m]));
      Var term = ad::scale(ad::add_scalar(inner, -1.0), 0.5);
      term = ad::sum_all(term);
      total = total.valid() ? ad::add(total, term) : term;
    }
    return total;
  }

  // Value-level conveniences over the same computation.

  Row gate_weights(const Matrix& context) const {
    require_context(context);
    ad::Tape t;
    return posterior(t, context).weights.value();
  }

  GaussianFactor expert_posterior(const Matrix& context, int m) const {
    require_context(context);
    if (m < 0 || m >= cfg_.experts) throw ConfigError("expert index out of range");
    ad::Tape t;
    const auto post = posterior(t, context);
    return {post.means[static_cast<std::size_t>(m)].value(), post.vars[static_cast<std::size_t>(m)].value()};
  }

  std::vector<GaussianFactor> posteriors(const Matrix& context) const {
    require_context(context);
    ad::Tape t;
    const auto post = posterior(t, context);
    std::vector<GaussianFactor> out;
    for (int m = 0; m < cfg_.experts; ++m)
      out.push_back({post.means[static_cast<std::size_t>(m)].value(), post.vars[static_cast<std::size_t>(m)].value()});
    return out;
  }

  /// Draws standard-normal noise of shape M x D (zeros when deterministic).
  Matrix draw_noise(Rng& rng, bool deterministic = false) const {
    Matrix eps = Matrix::Zero(cfg_.experts, cfg_.latent_dim);
    if (!deterministic)
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = standard_normal(rng);
    return eps;
  }

  ad::ParamStore params;

 private:
  int trunk_width() const { return cfg_.trunk_layers > 0 ? cfg_.hidden : cfg_.context_dim; }

  void require_context(const Matrix& context) const {
    if (context.rows() == 0) throw UsageError("posterior inference needs a non-empty context");
    if (context.cols() != cfg_.context_dim) throw ConfigError("context width mismatch");
  }

  static Matrix canonical(const Matrix& context) { return reorder_rows(context, canonical_order(context)); }

  template <class Store>
  Factors factors_impl(ad::Tape& t, const Matrix& context, ad::Mode mode, Store& store) const {
    require_context(context);
    const auto fwd = [&](const ad::NetSpec& spec, const char* prefix, Var x) {
      if constexpr (std::is_const_v<Store>) {
        return ad::forward(spec, store, prefix, x);
      } else {
        return ad::forward(spec, store, prefix, x, mode);
      }
    };
    Var c = t.constant(context);
    Var h = fwd(trunk_spec(), "trunk", c);
    Factors f;
    f.gate_logits = fwd(gate_spec(), "gate", ad::concat_cols({h, c}));
    Var heads = fwd(expert_spec(), "experts", h);
    const Eigen::Index d = cfg_.latent_dim;
    for (Eigen::Index m = 0; m < cfg_.experts; ++m) {
      f.means.push_back(ad::slice_cols(heads, 2 * m * d, d));
      Var log_var = ad::slice_cols(heads, 2 * m * d + d, d);
      f.vars.push_back(ad::floor_at(ad::exp(log_var), cfg_.var_floor));
    }
    return f;
  }

  static Posterior aggregate(const Factors& f) {
    Posterior p;
    p.weights = ad::softmax_rows(ad::mean_rows(f.gate_logits));
    for (std::size_t m = 0; m < f.means.size(); ++m) {
      Var precision = ad::reciprocal(f.vars[m]);
      Var total = ad::sum_rows(precision);
      Var weighted = ad::sum_rows(ad::mul(precision, f.means[m]));
      p.means.push_back(ad::div(weighted, total));
      p.vars.push_back(ad::reciprocal(total));
    }
    return p;
  }

  EncoderConfig cfg_;
};

}  // namespace gma::moe
