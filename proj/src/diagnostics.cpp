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

#include "tandem/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "tandem/error.hpp"
#include "tandem/mdp.hpp"
#include "tandem/neural.hpp"
#include "tandem/random.hpp"

namespace tandem {

namespace {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = scale * standard_normal(rng);
  }
  return m;
}

std::vector<Eigen::Index> sample_coords(Eigen::Index size, int count, Eigen::Index tail, Rng& rng) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index k = size - tail; k < size; ++k) idx.push_back(k);
  for (int k = 0; k < count; ++k) {
    idx.push_back(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(size)));
  }
  return idx;
}

struct CoordError {
  double rel_error = 0.0;
  int kinks = 0;
};

// A coordinate whose forward and backward differences disagree straddles a
// ReLU or clip kink; there the gradient must match one of the one-sided
// derivatives instead of the central difference.
template <typename LossFn>
CoordError relative_error(Mlp<double> net, const Eigen::VectorXd& grad,
                          const std::vector<Eigen::Index>& coords, double h, LossFn loss) {
  const double base = loss(net);
  double diff = 0.0;
  double scale = 0.0;
  int kinks = 0;
  for (Eigen::Index i : coords) {
    const double saved = net.params()(i);
    net.params()(i) = saved + h;
    const double plus = loss(net);
    net.params()(i) = saved - h;
    const double minus = loss(net);
    net.params()(i) = saved;
    const double central = (plus - minus) / (2.0 * h);
    const double forward = (plus - base) / h;
    const double backward = (base - minus) / h;
    double err = std::abs(central - grad(i));
    const double one_sided = std::min(std::abs(forward - grad(i)), std::abs(backward - grad(i)));
    if (one_sided < err && std::abs(forward - backward) > 1e-4 * std::max(1e-3, std::abs(central))) {
      err = one_sided;
      ++kinks;
    }
    diff = std::max(diff, err);
    scale = std::max(scale, std::abs(central));
  }
  return {scale > 0 ? diff / scale : diff, kinks};
}

}  // namespace

GradCheckReport gradient_check(const GradCheckConfig& cfg) {
  if (cfg.instances < 1 || cfg.batch < 1 || cfg.coords < 0 || !(cfg.h > 0)) {
    throw Error("gradient check: bad configuration");
  }
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  const PpoLossConfig loss_cfg;
  for (int n = 0; n < cfg.instances; ++n) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(n)));
    GradCheckInstance inst;

    MlpSpec ps;
    ps.input_dim = kObsDim;
    ps.hidden = cfg.hidden;
    ps.output_dim = kActionDim;
    ps.head = Head::kGaussianPolicy;
    const Mlp<double> behaviour = init_mlp<double>(ps, rng());
    const Matrix obs = random_matrix(kObsDim, cfg.batch, rng, 1.0);
    const auto sampled = policy_forward<double>(behaviour, obs, PolicyMode::kSample, &rng);
    // The evaluated policy sits a little away from the behaviour policy so
    // that both clip branches occur.
    Mlp<double> policy = behaviour;
    policy.params() += random_matrix(policy.size(), 1, rng, 0.005);
    RowVector adv = random_matrix(1, cfg.batch, rng, 1.0);
    const auto policy_loss = [&](const Mlp<double>& net) {
      return ppo_policy_loss<double>(net, obs, sampled.pre_squash, sampled.log_prob, adv, loss_cfg,
                                     false)
          .loss;
    };
    const auto pl = ppo_policy_loss<double>(policy, obs, sampled.pre_squash, sampled.log_prob, adv,
                                            loss_cfg);
    inst.clip_fraction = pl.clip_fraction;
    const CoordError pe =
        relative_error(policy, pl.grad, sample_coords(policy.size(), cfg.coords, kActionDim, rng),
                       cfg.h, policy_loss);
    inst.policy_rel_error = pe.rel_error;

    MlpSpec cs;
    cs.input_dim = kCriticInputDim;
    cs.hidden = cfg.hidden;
    cs.output_dim = 1;
    cs.head = Head::kScalarValue;
    const Mlp<double> critic = init_mlp<double>(cs, rng());
    const Matrix x = random_matrix(kCriticInputDim, cfg.batch, rng, 1.0);
    const RowVector target = random_matrix(1, cfg.batch, rng, 1.0);
    const auto critic_fn = [&](const Mlp<double>& net) {
      return critic_loss<double>(net, x, target, 0.5, false).loss;
    };
    const auto cl = critic_loss<double>(critic, x, target, 0.5);
    const CoordError ce = relative_error(
        critic, cl.grad, sample_coords(critic.size(), cfg.coords, 1, rng), cfg.h, critic_fn);
    inst.critic_rel_error = ce.rel_error;
    inst.kink_coords = pe.kinks + ce.kinks;

    report.max_rel_error =
        std::max({report.max_rel_error, inst.policy_rel_error, inst.critic_rel_error});
    report.instances.push_back(inst);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

nlohmann::json to_json(const GradCheckReport& report) {
  nlohmann::json inst = nlohmann::json::array();
  for (const auto& i : report.instances) {
    inst.push_back({{"policy_rel_error", i.policy_rel_error},
                    {"critic_rel_error", i.critic_rel_error},
                    {"clip_fraction", i.clip_fraction},
                    {"kink_coords", i.kink_coords}});
  }
  return {{"max_rel_error", report.max_rel_error},
          {"seconds", report.seconds},
          {"instances", inst}};
}

}  // namespace tandem
