#pragma once

// Feed-forward network descriptions and their forward pass on a Tape.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gma/ad/ops.hpp"
#include "gma/rng.hpp"

namespace gma::ad {

enum class Activation { Identity, Relu, Tanh };

struct LayerSpec {
  enum class Kind { Dense, Residual };
  Kind kind = Kind::Dense;
  int width = 64;  // output width; a residual block keeps its input width
  Activation act = Activation::Relu;
};

struct NetSpec {
  int input = 0;
  std::vector<LayerSpec> layers;

  /// Dense ReLU hidden layers followed by a linear output layer.
  static NetSpec mlp(int input, const std::vector<int>& hidden, int output) {
    NetSpec s{input, {}};
    for (int h : hidden) s.layers.push_back({LayerSpec::Kind::Dense, h, Activation::Relu});
    s.layers.push_back({LayerSpec::Kind::Dense, output, Activation::Identity});
    return s;
  }

  int output() const {
    int w = input;
    for (const auto& l : layers) w = l.kind == LayerSpec::Kind::Residual ? w : l.width;
    return w;
  }

  void validate() const {
    if (input < 1) throw ConfigError("network input width must be positive");
    int w = input;
    for (const auto& l : layers) {
      if (l.kind == LayerSpec::Kind::Residual) {
        if (l.width != w) throw ConfigError("residual block width must equal its input width");
      } else if (l.width < 1) {
        throw ConfigError("dense layer width must be positive");
      }
      w = l.kind == LayerSpec::Kind::Residual ? w : l.width;
    }
  }
};

namespace detail {

inline std::string pname(const std::string& prefix, std::size_t layer, const char* what) {
  return prefix + ".l" + std::to_string(layer) + "." + what;
}

inline Matrix fan_in_uniform(int rows, int cols, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::Relu:
      return relu(x);
    case Activation::Tanh:
      return tanh(x);
    case Activation::Identity:
      break;
  }
  return x;
}

}  // namespace detail

/// Adds the network's parameters under `prefix`, uniform in +-1/sqrt(fan_in), one stream per layer.
inline void init_params(const NetSpec& spec, ParamStore& store, const std::string& prefix, std::uint64_t seed) {
  spec.validate();
  int w = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    Rng rng = make_rng(seed, i);
    if (l.kind == LayerSpec::Kind::Dense) {
      store.add(detail::pname(prefix, i, "w"), detail::fan_in_uniform(w, l.width, w, rng));
      store.add(detail::pname(prefix, i, "b"), detail::fan_in_uniform(1, l.width, w, rng));
      w = l.width;
    } else {
      store.add(detail::pname(prefix, i, "w1"), detail::fan_in_uniform(w, w, w, rng));
      store.add(detail::pname(prefix, i, "b1"), detail::fan_in_uniform(1, w, w, rng));
      store.add(detail::pname(prefix, i, "w2"), detail::fan_in_uniform(w, w, w, rng));
      store.add(detail::pname(prefix, i, "b2"), detail::fan_in_uniform(1, w, w, rng));
    }
  }
}

/// Whether a forward pass routes gradients into the parameters.
enum class Mode { Train, Frozen };

namespace detail {

template <class Store>
Var leaf(Tape& t, Store& store, const std::string& name, Mode mode) {
  if constexpr (std::is_const_v<Store>) {
    return t.frozen(store.get(name));
  } else {
    return mode == Mode::Train ? t.param(store.get(name)) : t.frozen(store.get(name));
  }
}

template <class Store>
Var forward_impl(const NetSpec& spec, Store& store, const std::string& prefix, Var x, Mode mode) {
  if (x.cols() != spec.input)
    throw ConfigError("network '" + prefix + "' expects input width " + std::to_string(spec.input) + ", got " +
                      std::to_string(x.cols()));
  Tape& t = x.tape();
  Var h = x;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind == LayerSpec::Kind::Dense) {
      h = activate(linear(h, leaf(t, store, pname(prefix, i, "w"), mode), leaf(t, store, pname(prefix, i, "b"), mode)),
                   l.act);
    } else {
      // linear -> ReLU -> linear, identity shortcut, then the block activation
      Var inner = relu(
          linear(h, leaf(t, store, pname(prefix, i, "w1"), mode), leaf(t, store, pname(prefix, i, "b1"), mode)));
      inner = linear(inner, leaf(t, store, pname(prefix, i, "w2"), mode), leaf(t, store, pname(prefix, i, "b2"), mode));
      h = activate(add(h, inner), l.act);
    }
  }
  return h;
}

}  // namespace detail

inline Var forward(const NetSpec& spec, ParamStore& store, const std::string& prefix, Var x, Mode mode = Mode::Train) {
  return detail::forward_impl(spec, store, prefix, x, mode);
}

inline Var forward(const NetSpec& spec, const ParamStore& store, const std::string& prefix, Var x) {
  return detail::forward_impl(spec, store, prefix, x, Mode::Frozen);
}

inline std::size_t parameter_count(const NetSpec& spec) {
  std::size_t n = 0;
  int w = spec.input;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerSpec::Kind::Dense) {
      n += static_cast<std::size_t>(w) * l.width + l.width;
      w = l.width;
    } else {
      n += 2 * (static_cast<std::size_t>(w) * w + w);
    }
  }
  return n;
}

}  // namespace gma::ad
