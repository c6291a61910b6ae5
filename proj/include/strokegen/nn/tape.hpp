#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "strokegen/errors.hpp"

namespace strokegen::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Owns named parameters. Element addresses are stable for the store's
/// lifetime, including across moves.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Parameter& add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    Parameter& p = params_.emplace_back();
    p.name = name;
    p.value = std::move(init);
    p.zero_grad();
    return p;
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter: " + name);
    return params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter: " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  void set_trainable(bool on) {
    for (auto& p : params_) p.trainable = on;
  }

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double item() const { return value()(0, 0); }
  bool needs_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records a forward computation and replays it backwards. Gradients of
/// trainable parameter leaves are accumulated into Parameter::grad.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m) { return push(std::move(m), false, {}, nullptr); }

  Var param(Parameter& p) { return push(p.value, record_ && p.trainable, {}, &p); }

  /// `bw` runs during backward with this node's gradient available.
  Var make(Matrix value, bool needs_grad, std::function<void(const Matrix&)> bw) {
    needs_grad = needs_grad && record_;
    return push(std::move(value), needs_grad, needs_grad ? std::move(bw) : std::function<void(const Matrix&)>{},
                nullptr);
  }

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  bool recording() const { return record_; }

  Matrix& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(const Var& v, const Matrix& g) {
    if (!v.needs_grad()) return;
    grad(v.id()) += g;
  }

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 node (or `seed` for any shape).
  void backward(const Var& loss, const Matrix* seed = nullptr) {
    if (!record_) throw InvalidArgument("backward on a non-recording tape");
    if (seed) {
      grad(loss.id()) = *seed;
    } else {
      if (loss.rows() != 1 || loss.cols() != 1) throw InvalidArgument("backward needs a scalar loss");
      grad(loss.id()).setConstant(1.0);
    }
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.param) {
        n.param->grad += n.grad;
      } else if (n.backward) {
        n.backward(n.grad);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(const Matrix&)> backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Matrix value, bool needs_grad, std::function<void(const Matrix&)> bw, Parameter* p) {
    nodes_.push_back({std::move(value), Matrix(), std::move(bw), p, needs_grad});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::deque<Node> nodes_;
  bool record_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::needs_grad() const { return tape_->needs_grad(id_); }

}  // namespace strokegen::nn
