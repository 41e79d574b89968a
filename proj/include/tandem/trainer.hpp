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

#ifndef TANDEM_TRAINER_HPP_
#define TANDEM_TRAINER_HPP_

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "tandem/mdp.hpp"
#include "tandem/neural.hpp"
#include "tandem/random.hpp"

namespace tandem {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

enum class MinibatchMode { kSize, kCount };

struct TrainConfig {
  std::string scenario = "corridor";
  EnvConfig env;
  // optimizer and PPO
  double lr = 1e-4;
  int epochs = 10;
  int minibatch = 16;
  MinibatchMode minibatch_mode = MinibatchMode::kSize;
  double entropy_coef = 0.01;
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_eps = 0.2;
  double value_coef = 0.5;
  double weight_decay = 1e-4;
  double grad_clip = 10.0;
  bool cosine_schedule = true;
  bool normalize_advantages = true;
  // networks
  std::vector<int> hidden{256, 256, 128};
  double log_std_init = -0.5;
  double policy_output_gain = 0.01;
  // rollout
  std::int64_t total_steps = 5'000'000;
  int num_envs = 16;
  int horizon = 256;
  std::uint64_t seed = 0;
  std::string solver = "joint_critic_ppo";
  bool single_agent = false;  // agent 0 learns, the partner runs the scripted policy
  int checkpoint_every = 0;   // updates; 0 keeps only the final checkpoint

  void validate() const;
  int batch_size() const { return num_envs * horizon; }
  int minibatch_size() const;
  std::int64_t num_updates() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Joint transitions stored time-major: column = t * num_envs + env.
struct RolloutBatch {
  int num_envs = 0;
  int horizon = 0;
  std::array<Matrix, 2> obs;         // 210 x n
  std::array<Matrix, 2> pre_squash;  // 11 x n
  std::array<Matrix, 2> actions;     // 11 x n, in (-1, 1)
  std::array<RowVector, 2> log_prob;
  std::array<RowVector, 2> rewards;  // per-agent copy of the shared reward
  Matrix critic_input;               // global state + joint action, 80 x n
  Matrix next_critic_input;          // successor state + next sampled joint action
  std::vector<std::uint8_t> done;    // episode ended at this transition
  RowVector values;
  RowVector next_values;  // 0 where done
  RowVector advantages;
  RowVector returns;
  // episodes finished during collection
  int episodes = 0;
  int successes = 0;
  int drops = 0;
  double return_sum = 0.0;

  int size() const { return num_envs * horizon; }
  int index(int t, int env) const { return t * num_envs + env; }
};

// GAE over one trajectory segment. next_values already hold the bootstrap
// (zero after a terminal step); the recursion restarts after every done.
RowVector gae(const RowVector& rewards, const RowVector& values, const RowVector& next_values,
              const std::vector<std::uint8_t>& done, double gamma, double lambda);

// Scripted baseline: the nominal controller alone (a = 0).
PolicyAction scripted_policy(const WorldState& state, int agent);

Matrix critic_inputs(const GlobalState& state, const JointAction& actions);

struct UpdateStats {
  double policy_loss = 0.0;
  double surrogate = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  int minibatches = 0;
};

// Epochs of clipped-surrogate minibatch updates for one agent's policy using
// the shared advantages.
UpdateStats ppo_update(Mlp<double>& policy, AdamState<double>& opt, const RolloutBatch& batch,
                       int agent, const TrainConfig& cfg, double lr, Rng& rng);

// Epochs of semi-gradient TD(0) updates: target R + gamma (1 - done) V(s', a').
double critic_update(Mlp<double>& critic, AdamState<double>& opt, const RolloutBatch& batch,
                     const TrainConfig& cfg, double lr, Rng& rng);

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  std::int64_t steps() const { return steps_; }
  std::int64_t updates() const { return updates_; }
  bool finished() const { return updates_ >= cfg_.num_updates(); }
  const Mlp<double>& policy(int agent) const { return policies_[agent]; }
  const Mlp<double>& critic() const { return critic_; }
  bool learns(int agent) const { return agent == 0 || !cfg_.single_agent; }

  RolloutBatch collect();
  // Computes values, next values, advantages and returns in place.
  void evaluate(RolloutBatch& batch) const;
  // One collect / GAE / policy / critic iteration; returns its metrics line.
  nlohmann::json update();

  Checkpoint checkpoint() const;
  // Full trainer state (exact parameters, moments, generators, env cursors).
  std::string save_state() const;
  static Trainer load_state(const std::string& bytes);

 private:
  double current_lr() const;
  std::array<StackedObservation, 2> reset_env(int e);

  TrainConfig cfg_;
  Scenario scenario_;
  std::vector<TransportEnv> envs_;
  std::vector<std::array<StackedObservation, 2>> obs_;
  std::vector<Rng> env_rngs_;
  std::vector<std::uint64_t> episode_counts_;
  std::vector<double> episode_returns_;
  std::array<Mlp<double>, 2> policies_;
  Mlp<double> critic_;
  std::array<AdamState<double>, 2> policy_opt_;
  AdamState<double> critic_opt_;
  Rng rng_;
  std::int64_t steps_ = 0;
  std::int64_t updates_ = 0;
};

struct TrainOptions {
  std::string out_dir;                      // empty: nothing written
  const std::atomic<bool>* stop = nullptr;  // checked between updates
  std::function<void(const nlohmann::json&)> on_metrics;
  std::optional<std::string> resume_state;  // path of a trainer-state sidecar
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<nlohmann::json> metrics;
  bool interrupted = false;
};

// Runs updates until the step budget (or a stop request). With an output
// directory: metrics.jsonl, timing.jsonl, ckpt/<name>.ckpt plus .state.
TrainResult train(const TrainConfig& cfg, const TrainOptions& options = {});

// Same loop with the partner fixed to scripted_policy.
TrainResult train_single_agent(TrainConfig cfg, const TrainOptions& options = {});

// --- target-drift diagnostic on a one-state two-agent game ---

struct Prop1Config {
  Matrix q;  // Q(a_i, a_-i), held fixed
  std::vector<Eigen::VectorXd> partner_schedule;  // partner distributions over time
};

struct Prop1Step {
  double joint_drift = 0.0;           // max |change| of joint-action targets
  Eigen::VectorXd marginal_drift;     // change of sum_j P(j) Q(a_i, j), per a_i
};

struct Prop1Report {
  std::vector<Prop1Step> steps;
  double max_joint_drift = 0.0;
  double max_marginal_drift = 0.0;
};

Prop1Config default_prop1_config(std::uint64_t seed, int own_actions = 3,
                                 int partner_actions = 4, int drift_steps = 20);
Prop1Report prop1_diagnostic(const Prop1Config& cfg);
nlohmann::json to_json(const Prop1Report& report);

}  // namespace tandem

#endif  // TANDEM_TRAINER_HPP_
