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

#ifndef TANDEM_NEURAL_HPP_
#define TANDEM_NEURAL_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "tandem/autodiff.hpp"
#include "tandem/error.hpp"
#include "tandem/random.hpp"

namespace tandem {

enum class Head { kGaussianPolicy, kScalarValue };

struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden{256, 256, 128};
  int output_dim = 1;
  Head head = Head::kScalarValue;
  double log_std_init = -0.5;
  double output_gain = 1.0;  // orthogonal gain of the last layer

  void validate() const;
  bool operator==(const MlpSpec&) const = default;
};

nlohmann::json to_json(const MlpSpec& spec);
MlpSpec mlp_spec_from_json(const nlohmann::json& j);

// Fully connected ReLU network over one flat parameter vector. Layout, in
// order: per layer the row-major weight (out x in) then the bias; policy heads
// append the state-independent log_std.
template <typename Scalar>
class Mlp {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Mlp() = default;
  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    Eigen::Index at = 0;
    int in = spec_.input_dim;
    const auto add_layer = [&](int out) {
      shapes_.push_back({out, in});
      w_off_.push_back(at);
      at += static_cast<Eigen::Index>(out) * in;
      b_off_.push_back(at);
      at += out;
      in = out;
    };
    for (int h : spec_.hidden) add_layer(h);
    add_layer(spec_.output_dim);
    log_std_off_ = at;
    if (spec_.head == Head::kGaussianPolicy) at += spec_.output_dim;
    params_ = Vector::Zero(at);
  }

  const MlpSpec& spec() const { return spec_; }
  int num_layers() const { return static_cast<int>(shapes_.size()); }
  Eigen::Index size() const { return params_.size(); }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  std::pair<int, int> shape(int layer) const { return shapes_[layer]; }
  Eigen::Index weight_offset(int layer) const { return w_off_[layer]; }
  Eigen::Index bias_offset(int layer) const { return b_off_[layer]; }
  bool has_log_std() const { return spec_.head == Head::kGaussianPolicy; }

  Eigen::Map<RowMatrix> weight(int l) {
    return {params_.data() + w_off_[l], shapes_[l].first, shapes_[l].second};
  }
  Eigen::Map<const RowMatrix> weight(int l) const {
    return {params_.data() + w_off_[l], shapes_[l].first, shapes_[l].second};
  }
  Eigen::Map<Vector> bias(int l) { return {params_.data() + b_off_[l], shapes_[l].first}; }
  Eigen::Map<const Vector> bias(int l) const {
    return {params_.data() + b_off_[l], shapes_[l].first};
  }
  Eigen::Map<Vector> log_std() { return {params_.data() + log_std_off_, log_std_size()}; }
  Eigen::Map<const Vector> log_std() const {
    return {params_.data() + log_std_off_, log_std_size()};
  }

  // Network output (mean for policy heads) for the columns of x.
  Matrix forward(const Matrix& x) const {
    if (x.rows() != spec_.input_dim) throw Error("mlp: input dimension mismatch");
    Matrix h = x;
    for (int l = 0; l < num_layers(); ++l) {
      Matrix z = weight(l) * h;
      z.colwise() += bias(l);
      h = l + 1 < num_layers() ? Matrix(z.cwiseMax(Scalar(0))) : std::move(z);
    }
    return h;
  }

  // Parameter leaves on a tape, in layout order.
  struct Bound {
    std::vector<typename Tape<Scalar>::Var> weights;
    std::vector<typename Tape<Scalar>::Var> biases;
    typename Tape<Scalar>::Var log_std;
  };

  Bound bind(Tape<Scalar>& tape) const {
    Bound b;
    for (int l = 0; l < num_layers(); ++l) {
      b.weights.push_back(tape.parameter(Matrix(weight(l))));
      b.biases.push_back(tape.parameter(Matrix(bias(l))));
    }
    if (has_log_std()) b.log_std = tape.parameter(Matrix(log_std()));
    return b;
  }

  typename Tape<Scalar>::Var forward(Tape<Scalar>& tape, const Bound& b,
                                     typename Tape<Scalar>::Var x) const {
    if (tape.value(x).rows() != spec_.input_dim) throw Error("mlp: input dimension mismatch");
    auto h = x;
    for (int l = 0; l < num_layers(); ++l) {
      h = tape.affine(b.weights[l], b.biases[l], h);
      if (l + 1 < num_layers()) h = tape.relu(h);
    }
    return h;
  }

  // Flat gradient in layout order after tape.backward().
  Vector gradient(const Tape<Scalar>& tape, const Bound& b) const {
    Vector g = Vector::Zero(size());
    for (int l = 0; l < num_layers(); ++l) {
      const auto& gw = tape.grad(b.weights[l]);
      if (gw.size() != 0) {
        Eigen::Map<RowMatrix>(g.data() + w_off_[l], shapes_[l].first, shapes_[l].second) = gw;
      }
      const auto& gb = tape.grad(b.biases[l]);
      if (gb.size() != 0) g.segment(b_off_[l], shapes_[l].first) = gb.col(0);
    }
    if (has_log_std()) {
      const auto& gs = tape.grad(b.log_std);
      if (gs.size() != 0) g.segment(log_std_off_, log_std_size()) = gs.col(0);
    }
    return g;
  }

 private:
  Eigen::Index log_std_size() const { return has_log_std() ? spec_.output_dim : 0; }

  MlpSpec spec_;
  Vector params_;
  std::vector<std::pair<int, int>> shapes_;
  std::vector<Eigen::Index> w_off_;
  std::vector<Eigen::Index> b_off_;
  Eigen::Index log_std_off_ = 0;
};

// rows x cols matrix with orthonormal columns (rows >= cols) or rows
// (rows < cols), scaled by gain.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> orthogonal(int rows, int cols, Rng& rng,
                                                                 double gain = 1.0) {
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Matrix a(big, small);
  for (int c = 0; c < small; ++c) {
    for (int r = 0; r < big; ++r) a(r, c) = standard_normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(big, small);
  const Matrix r = qr.matrixQR().topRows(small).template triangularView<Eigen::Upper>();
  for (int c = 0; c < small; ++c) {
    if (r(c, c) < 0) q.col(c) = -q.col(c);
  }
  Matrix w = rows >= cols ? q : Matrix(q.transpose());
  return (gain * w).template cast<Scalar>();
}

// Orthogonal weights, zero biases, log_std at its configured constant.
template <typename Scalar>
Mlp<Scalar> init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  Mlp<Scalar> net(spec);
  Rng rng(seed);
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto [out, in] = net.shape(l);
    const double gain = l + 1 == net.num_layers() ? spec.output_gain : 1.0;
    net.weight(l) = orthogonal<Scalar>(out, in, rng, gain);
    net.bias(l).setZero();
  }
  if (net.has_log_std()) net.log_std().setConstant(static_cast<Scalar>(spec.log_std_init));
  return net;
}

// log(1 - tanh(u)^2), computed stably.
template <typename Derived>
auto log_one_minus_tanh2(const Eigen::ArrayBase<Derived>& u) {
  using Scalar = typename Derived::Scalar;
  const Scalar log2 = std::numbers::ln2_v<Scalar>;
  // softplus(-2u) = max(-2u, 0) + log1p(exp(-|2u|))
  const auto softplus = (-2 * u).cwiseMax(Scalar(0)) + (-(2 * u).abs()).exp().log1p();
  return Scalar(2) * (log2 - u - softplus);
}

template <typename Scalar>
struct PolicyOutput {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> action;    // tanh(u), in (-1, 1)
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> pre_squash;  // u
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> log_prob;                 // of the squashed action
};

enum class PolicyMode { kSample, kMean };

// Log-density of the squashed action given its pre-squash value u.
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> squashed_log_prob(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& u,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& mean,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& log_std) {
  const Scalar half_log_2pi = Scalar(0.5) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
  const auto z = ((u - mean).array().colwise() * (-log_std.array()).exp());
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> lp = (Scalar(-0.5) * z.square()).colwise().sum();
  lp.array() -= log_std.sum() + half_log_2pi * static_cast<Scalar>(u.rows());
  lp -= log_one_minus_tanh2(u.array()).matrix().colwise().sum();
  return lp;
}

template <typename Scalar>
PolicyOutput<Scalar> policy_forward(const Mlp<Scalar>& net,
                                    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& obs,
                                    PolicyMode mode, Rng* rng = nullptr) {
  if (!net.has_log_std()) throw Error("policy_forward: network has no gaussian policy head");
  if (!obs.allFinite()) throw Error("policy_forward: non-finite observation");
  PolicyOutput<Scalar> out;
  const auto mean = net.forward(obs);
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> log_std = net.log_std();
  out.pre_squash = mean;
  if (mode == PolicyMode::kSample) {
    if (rng == nullptr) throw Error("policy_forward: sampling requires a generator");
    const auto std_dev = log_std.array().exp();
    for (Eigen::Index c = 0; c < mean.cols(); ++c) {
      for (Eigen::Index r = 0; r < mean.rows(); ++r) {
        out.pre_squash(r, c) += std_dev(r) * static_cast<Scalar>(standard_normal(*rng));
      }
    }
  }
  out.action = out.pre_squash.array().tanh().matrix();
  out.log_prob = squashed_log_prob<Scalar>(out.pre_squash, mean, log_std);
  return out;
}

// Differential entropy of the pre-squash Gaussian.
template <typename Scalar>
Scalar gaussian_entropy(const Mlp<Scalar>& net) {
  const Scalar c = Scalar(0.5) * (Scalar(1) + std::log(Scalar(2) * std::numbers::pi_v<Scalar>));
  return net.log_std().sum() + c * static_cast<Scalar>(net.log_std().size());
}

template <typename Scalar>
Scalar value_forward(const Mlp<Scalar>& net, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x) {
  if (net.spec().head != Head::kScalarValue || net.spec().output_dim != 1) {
    throw Error("value_forward: network is not a scalar value head");
  }
  return net.forward(x)(0, 0);
}

struct PpoLossConfig {
  double clip_eps = 0.2;
  double entropy_coef = 0.01;
};

template <typename Scalar>
struct PolicyLoss {
  Scalar loss = 0;        // minimized: -(surrogate) - entropy_coef * entropy
  Scalar surrogate = 0;   // mean of min(r A, clip(r) A)
  Scalar entropy = 0;
  Scalar clip_fraction = 0;
  Scalar approx_kl = 0;   // mean(old_logp - new_logp)
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> grad;
};

// Clipped surrogate for one policy on a minibatch of stored pre-squash
// actions; returns the loss and its exact gradient.
template <typename Scalar>
PolicyLoss<Scalar> ppo_policy_loss(const Mlp<Scalar>& net,
                                   const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& obs,
                                   const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& u,
                                   const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& old_log_prob,
                                   const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& advantages,
                                   const PpoLossConfig& cfg, bool want_grad = true) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Tape<Scalar> tape;
  const auto bound = net.bind(tape);
  const auto x = tape.constant(obs);
  const auto mean = net.forward(tape, bound, x);
  const auto uu = tape.constant(u);
  const Matrix correction = log_one_minus_tanh2(u.array()).matrix().colwise().sum();
  auto log_prob = tape.gaussian_log_density(uu, mean, bound.log_std);
  log_prob = tape.sub(log_prob, tape.constant(correction));
  const auto ratio = tape.exp(tape.sub(log_prob, tape.constant(Matrix(old_log_prob))));
  const auto adv = tape.constant(Matrix(advantages));
  const auto unclipped = tape.mul(ratio, adv);
  const auto clipped =
      tape.mul(tape.clip(ratio, Scalar(1 - cfg.clip_eps), Scalar(1 + cfg.clip_eps)), adv);
  const auto surrogate = tape.mean(tape.min(unclipped, clipped));
  const Scalar entropy_const =
      Scalar(0.5) * (Scalar(1) + std::log(Scalar(2) * std::numbers::pi_v<Scalar>)) *
      static_cast<Scalar>(net.spec().output_dim);
  const auto entropy = tape.add_scalar(tape.sum(bound.log_std), entropy_const);
  const auto loss = tape.sub(tape.scale(surrogate, Scalar(-1)),
                             tape.scale(entropy, static_cast<Scalar>(cfg.entropy_coef)));
  PolicyLoss<Scalar> out;
  out.loss = tape.value(loss)(0, 0);
  out.surrogate = tape.value(surrogate)(0, 0);
  out.entropy = tape.value(entropy)(0, 0);
  const auto& r = tape.value(ratio).array();
  out.clip_fraction = ((r - Scalar(1)).abs() > Scalar(cfg.clip_eps)).template cast<Scalar>().mean();
  out.approx_kl = (old_log_prob - tape.value(log_prob)).mean();
  if (want_grad) {
    tape.backward(loss);
    out.grad = net.gradient(tape, bound);
  }
  return out;
}

template <typename Scalar>
struct CriticLoss {
  Scalar loss = 0;  // value_coef * mean((V - target)^2)
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> td_error;  // V - target
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> grad;
};

// Semi-gradient squared TD loss; targets are constants.
template <typename Scalar>
CriticLoss<Scalar> critic_loss(const Mlp<Scalar>& net,
                               const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& inputs,
                               const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& targets,
                               double value_coef, bool want_grad = true) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Tape<Scalar> tape;
  const auto bound = net.bind(tape);
  const auto v = net.forward(tape, bound, tape.constant(inputs));
  const auto err = tape.sub(v, tape.constant(Matrix(targets)));
  const auto loss = tape.scale(tape.mean(tape.square(err)), static_cast<Scalar>(value_coef));
  CriticLoss<Scalar> out;
  out.loss = tape.value(loss)(0, 0);
  out.td_error = tape.value(err);
  if (want_grad) {
    tape.backward(loss);
    out.grad = net.gradient(tape, bound);
  }
  return out;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  std::int64_t t = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> m;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v;

  explicit AdamState(Eigen::Index n = 0)
      : m(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n)),
        v(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n)) {}
};

// Factor applied to the gradient so that its global norm is at most clip_norm.
template <typename Scalar>
Scalar clip_scale(Scalar grad_norm, Scalar clip_norm) {
  return clip_norm > 0 && grad_norm > clip_norm ? clip_norm / grad_norm : Scalar(1);
}

// One bias-corrected AdamW update of a parameter chunk; `t` is the already
// incremented step count and `scale` the global clip factor.
template <typename Scalar, typename P, typename G, typename M, typename V>
void adam_update_chunk(P&& params, const G& grad, M&& m, V&& v, std::int64_t t, Scalar lr,
                       Scalar weight_decay, Scalar scale, const AdamConfig& cfg = {}) {
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(t));
  const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(t));
  const auto g = grad.array() * scale;
  m.array() = b1 * m.array() + (Scalar(1) - b1) * g;
  v.array() = b2 * v.array() + (Scalar(1) - b2) * g.square();
  params.array() -= lr * weight_decay * params.array();
  params.array() -=
      lr * (m.array() / c1) / ((v.array() / c2).sqrt() + static_cast<Scalar>(cfg.eps));
}

// Global-norm clipping, decoupled weight decay, bias-corrected moments.
template <typename Scalar>
void adam_step(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& params,
               const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& grad, AdamState<Scalar>& state,
               Scalar lr, Scalar weight_decay, Scalar clip_norm, const AdamConfig& cfg = {}) {
  if (grad.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw Error("adam: shape mismatch");
  }
  if (!grad.allFinite()) throw Error("adam: non-finite gradient");
  const Scalar scale = clip_scale(grad.norm(), clip_norm);
  ++state.t;
  adam_update_chunk(params, grad, state.m, state.v, state.t, lr, weight_decay, scale, cfg);
}

inline double cosine_lr(double step, double total_steps, double lr0) {
  if (total_steps <= 0) return lr0;
  const double s = std::clamp(step, 0.0, total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * s / total_steps));
}

// --- "ckpt_v1" ---

struct NamedNetwork {
  std::string name;
  Mlp<double> net;
};

struct Checkpoint {
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedNetwork> networks;

  const Mlp<double>& network(const std::string& name) const;
};

// Magic, version, JSON header, then 32-bit little-endian parameters.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace tandem

#endif  // TANDEM_NEURAL_HPP_
