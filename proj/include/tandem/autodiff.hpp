// Copyright 2026 The Tandem Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef TANDEM_AUTODIFF_HPP_
#define TANDEM_AUTODIFF_HPP_

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tandem/error.hpp"

namespace tandem {

// Reverse-mode differentiation over dense matrices. Samples are columns.
// Values are recorded eagerly; backward() walks the nodes in reverse order.
template <typename Scalar>
class Tape {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  struct Var {
    int id = -1;
  };

  Var constant(Matrix value) { return push(Op::kLeaf, {}, std::move(value), false); }
  Var parameter(Matrix value) { return push(Op::kLeaf, {}, std::move(value), true); }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  // Gradient of the last backward() target; zero-sized if never reached.
  const Matrix& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::size_t size() const { return nodes_.size(); }

  // W x + b with b broadcast over columns.
  Var affine(Var w, Var b, Var x) {
    Matrix out = value(w) * value(x);
    out.colwise() += value(b).col(0);
    return push(Op::kAffine, {w.id, b.id, x.id}, std::move(out));
  }
  Var relu(Var x) { return push(Op::kRelu, {x.id}, value(x).cwiseMax(Scalar(0))); }
  Var tanh(Var x) { return push(Op::kTanh, {x.id}, value(x).array().tanh().matrix()); }
  Var exp(Var x) { return push(Op::kExp, {x.id}, value(x).array().exp().matrix()); }
  Var add(Var a, Var b) { return push(Op::kAdd, {a.id, b.id}, value(a) + value(b)); }
  Var sub(Var a, Var b) { return push(Op::kSub, {a.id, b.id}, value(a) - value(b)); }
  Var mul(Var a, Var b) {
    return push(Op::kMul, {a.id, b.id}, value(a).cwiseProduct(value(b)));
  }
  Var scale(Var x, Scalar s) {
    Var v = push(Op::kScale, {x.id}, value(x) * s);
    nodes_[v.id].p0 = s;
    return v;
  }
  Var add_scalar(Var x, Scalar s) {
    return push(Op::kAddScalar, {x.id}, (value(x).array() + s).matrix());
  }
  // Gradient 1 on the closed interval [lo, hi], 0 outside.
  Var clip(Var x, Scalar lo, Scalar hi) {
    Var v = push(Op::kClip, {x.id}, value(x).cwiseMax(lo).cwiseMin(hi));
    nodes_[v.id].p0 = lo;
    nodes_[v.id].p1 = hi;
    return v;
  }
  // Element-wise minimum; ties send the gradient to the first argument.
  Var min(Var a, Var b) { return push(Op::kMin, {a.id, b.id}, value(a).cwiseMin(value(b))); }
  Var square(Var x) { return push(Op::kSquare, {x.id}, value(x).cwiseAbs2()); }
  Var mean(Var x) {
    Matrix out(1, 1);
    out(0, 0) = value(x).mean();
    return push(Op::kMean, {x.id}, std::move(out));
  }
  Var sum(Var x) {
    Matrix out(1, 1);
    out(0, 0) = value(x).sum();
    return push(Op::kSum, {x.id}, std::move(out));
  }
  // Diagonal Gaussian log-density of the columns of u under (mean, exp(log_std));
  // log_std is a column broadcast over samples. Result is 1 x batch.
  Var gaussian_log_density(Var u, Var mean, Var log_std) {
    const Matrix& uu = value(u);
    const Matrix& mu = value(mean);
    const auto ls = value(log_std).col(0).array();
    const Scalar half_log_2pi = Scalar(0.5) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
    Matrix z = ((uu - mu).array().colwise() * (-ls).exp()).matrix();
    Matrix out = (Scalar(-0.5) * z.array().square()).colwise().sum().matrix();
    out.array() -= ls.sum() + half_log_2pi * static_cast<Scalar>(uu.rows());
    return push(Op::kGaussianLogDensity, {u.id, mean.id, log_std.id}, std::move(out));
  }
  // Forward-only transformation; differentiating through it is an error.
  Var apply(Var x, const std::function<Matrix(const Matrix&)>& fn) {
    return push(Op::kOpaque, {x.id}, fn(value(x)));
  }

  // Accumulates d(target)/d(node) for every node that depends on a parameter.
  void backward(Var target) {
    if (value(target).size() != 1) throw Error("backprop: target must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    Node& t = nodes_[target.id];
    t.grad = Matrix::Ones(1, 1);
    for (int i = target.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0 || n.op == Op::kLeaf) continue;
      propagate(n);
    }
  }

 private:
  enum class Op {
    kLeaf,
    kAffine,
    kRelu,
    kTanh,
    kExp,
    kAdd,
    kSub,
    kMul,
    kScale,
    kAddScalar,
    kClip,
    kMin,
    kSquare,
    kMean,
    kSum,
    kGaussianLogDensity,
    kOpaque,
  };

  struct Node {
    Op op = Op::kLeaf;
    std::vector<int> inputs;
    Matrix value;
    Matrix grad;
    Scalar p0 = 0;
    Scalar p1 = 0;
    bool requires_grad = false;
  };

  Var push(Op op, std::vector<int> inputs, Matrix value, bool leaf_grad = false) {
    Node n;
    n.op = op;
    n.requires_grad = leaf_grad;
    for (int id : inputs) {
      if (id < 0 || id >= static_cast<int>(nodes_.size())) throw Error("tape: invalid variable");
      n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
    }
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void accumulate(int id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void propagate(const Node& n) {
    const Matrix& g = n.grad;
    const auto in = [&](int k) -> const Matrix& { return nodes_[n.inputs[k]].value; };
    switch (n.op) {
      case Op::kAffine: {
        if (nodes_[n.inputs[0]].requires_grad) accumulate(n.inputs[0], g * in(2).transpose());
        if (nodes_[n.inputs[1]].requires_grad) accumulate(n.inputs[1], g.rowwise().sum());
        if (nodes_[n.inputs[2]].requires_grad) accumulate(n.inputs[2], in(0).transpose() * g);
        break;
      }
      case Op::kRelu:
        accumulate(n.inputs[0], (in(0).array() > Scalar(0)).select(g, Scalar(0)).matrix());
        break;
      case Op::kTanh:
        accumulate(n.inputs[0],
                   (g.array() * (Scalar(1) - n.value.array().square())).matrix());
        break;
      case Op::kExp:
        accumulate(n.inputs[0], g.cwiseProduct(n.value));
        break;
      case Op::kAdd:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g);
        break;
      case Op::kSub:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], -g);
        break;
      case Op::kMul:
        accumulate(n.inputs[0], g.cwiseProduct(in(1)));
        accumulate(n.inputs[1], g.cwiseProduct(in(0)));
        break;
      case Op::kScale:
        accumulate(n.inputs[0], g * n.p0);
        break;
      case Op::kAddScalar:
        accumulate(n.inputs[0], g);
        break;
      case Op::kClip: {
        const auto& x = in(0).array();
        accumulate(n.inputs[0], ((x >= n.p0) && (x <= n.p1)).select(g, Scalar(0)).matrix());
        break;
      }
      case Op::kMin: {
        const auto first = (in(0).array() <= in(1).array());
        accumulate(n.inputs[0], first.select(g, Scalar(0)).matrix());
        accumulate(n.inputs[1], first.select(Scalar(0), g).matrix());
        break;
      }
      case Op::kSquare:
        accumulate(n.inputs[0], Scalar(2) * g.cwiseProduct(in(0)));
        break;
      case Op::kMean: {
        const Matrix& x = in(0);
        accumulate(n.inputs[0],
                   Matrix::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<Scalar>(x.size())));
        break;
      }
      case Op::kSum: {
        const Matrix& x = in(0);
        accumulate(n.inputs[0], Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
        break;
      }
      case Op::kGaussianLogDensity: {
        const Matrix& u = in(0);
        const Matrix& mu = in(1);
        const auto ls = in(2).col(0).array();
        const auto inv_var = (Scalar(-2) * ls).exp();
        // d/dmu = (u - mu) / sigma^2 ; d/dlog_std = z^2 - 1 per component.
        const Matrix diff = u - mu;
        const Matrix dmu = (diff.array().colwise() * inv_var).matrix();
        const Matrix weighted = (dmu.array().rowwise() * g.row(0).array()).matrix();
        if (nodes_[n.inputs[1]].requires_grad) accumulate(n.inputs[1], weighted);
        if (nodes_[n.inputs[0]].requires_grad) accumulate(n.inputs[0], -weighted);
        if (nodes_[n.inputs[2]].requires_grad) {
          const Matrix z2 = (diff.array().square().colwise() * inv_var).matrix();
          const Matrix per = ((z2.array() - Scalar(1)).rowwise() * g.row(0).array()).matrix();
          accumulate(n.inputs[2], per.rowwise().sum());
        }
        break;
      }
      default:
        throw Error("backprop: unsupported primitive");
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace tandem

#endif  // TANDEM_AUTODIFF_HPP_
