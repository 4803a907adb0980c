#pragma once

// Reverse-mode differentiation over dense row-major matrices. A Tape records one forward pass;
// backward() walks it once in reverse and accumulates into Parameter::grad.

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gma/errors.hpp"

namespace gma::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;  // Adam first moment
  Matrix v;  // Adam second moment
};

/// Named parameter arrays plus optimizer state. Shapes are fixed once added.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Matrix init) {
    if (index_.count(name) != 0) throw ConfigError("duplicate parameter '" + name + "'");
    index_.emplace(name, params_.size());
    Parameter p{name, std::move(init), {}, {}, {}};
    p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    p.m = Matrix::Zero(p.value.rows(), p.value.cols());
    p.v = Matrix::Zero(p.value.rows(), p.value.cols());
    params_.push_back(std::move(p));
    return params_.back();
  }

  Parameter& get(const std::string& name) { return params_[lookup(name)]; }
  const Parameter& get(const std::string& name) const { return params_[lookup(name)]; }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter>& all() noexcept { return params_; }
  const std::vector<Parameter>& all() const noexcept { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  std::size_t num_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  /// Same names in the same order with the same shapes.
  bool same_layout(const ParamStore& other) const {
    if (params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& a = params_[i];
      const auto& b = other.params_[i];
      if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) return false;
    }
    return true;
  }

  long step = 0;  // optimizer step count

 private:
  std::size_t lookup(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const {
    if (rows() != 1 || cols() != 1) throw ConfigError("scalar() on a non-1x1 value");
    return value()(0, 0);
  }
  Tape& tape() const {
    if (tape_ == nullptr) throw UsageError("empty Var");
    return *tape_;
  }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix v) { return push(std::move(v), false, nullptr); }

  /// Leaf whose gradient is accumulated into p.grad on backward.
  Var param(Parameter& p) {
    Parameter* target = &p;
    return push(p.value, true, [target](Tape&, const Matrix& g) { target->grad += g; });
  }

  /// Leaf holding a parameter's current value with no gradient.
  Var frozen(const Parameter& p) { return constant(p.value); }

  Var push(Matrix value, bool needs_grad, Backward fn) {
    nodes_.push_back(Node{std::move(value), Matrix{}, needs_grad, std::move(fn)});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Gradient slot of node `id`, zero-initialized on first use.
  Matrix& acc(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Gradient of the last backward() with respect to `v` (zeros if unreached).
  Matrix grad(Var v) const {
    check(v);
    const auto& n = nodes_[static_cast<std::size_t>(v.id())];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var out) {
    check(out);
    if (out.rows() != 1 || out.cols() != 1) throw UsageError("backward(out) without a seed needs a scalar output");
    backward(out, Matrix::Ones(1, 1));
  }

  void backward(Var out, const Matrix& seed) {
    check(out);
    if (seed.rows() != out.rows() || seed.cols() != out.cols()) throw ConfigError("backward seed shape mismatch");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    acc(out.id()) += seed;
    for (int i = out.id(); i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || !n.fn || n.grad.size() == 0) continue;
      n.fn(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad;
    Backward fn;
  };

  void check(Var v) const {
    if (nodes_.empty()) throw UsageError("backward on an empty tape (no forward recorded)");
    if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size())
      throw UsageError("variable was not recorded on this tape");
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape().value(id_); }

}  // namespace gma::ad
