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

#include "tandem/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tandem/error.hpp"
#include "tandem/io.hpp"

namespace tandem {

namespace {

using json = nlohmann::json;

constexpr std::uint64_t kEnvSeedSalt = 0x1000;
constexpr std::uint64_t kEnvRngSalt = 0x2000;
constexpr std::uint64_t kPolicySalt = 0x3000;
constexpr std::uint64_t kCriticSalt = 0x4000;
constexpr std::uint64_t kShuffleSalt = 0x5000;

const char* policy_name(int agent) { return agent == 0 ? "policy0" : "policy1"; }

MlpSpec policy_spec(const TrainConfig& cfg) {
  MlpSpec s;
  s.input_dim = kObsDim;
  s.hidden = cfg.hidden;
  s.output_dim = kActionDim;
  s.head = Head::kGaussianPolicy;
  s.log_std_init = cfg.log_std_init;
  s.output_gain = cfg.policy_output_gain;
  return s;
}

MlpSpec critic_spec(const TrainConfig& cfg) {
  MlpSpec s;
  s.input_dim = kCriticInputDim;
  s.hidden = cfg.hidden;
  s.output_dim = 1;
  s.head = Head::kScalarValue;
  return s;
}

std::vector<int> permutation(int n, Rng& rng) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(p[i], p[j]);
  }
  return p;
}

template <typename Src>
Matrix gather(const Src& src, const std::vector<int>& idx, int begin, int count) {
  Matrix out(src.rows(), count);
  for (int k = 0; k < count; ++k) out.col(k) = src.col(idx[begin + k]);
  return out;
}

RowVector gather_row(const RowVector& src, const std::vector<int>& idx, int begin, int count) {
  RowVector out(count);
  for (int k = 0; k < count; ++k) out(k) = src(idx[begin + k]);
  return out;
}

std::string rng_string(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream ss(s);
  ss >> rng;
  if (!ss) throw Error("trainer state: bad generator state");
  return rng;
}

json vector_bytes(const Eigen::VectorXd& v) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(v.size()) * sizeof(double));
  std::memcpy(bytes.data(), v.data(), bytes.size());
  return json::binary(std::move(bytes));
}

Eigen::VectorXd vector_from_bytes(const json& j, Eigen::Index expected) {
  const auto& bytes = j.get_binary();
  if (bytes.size() != static_cast<std::size_t>(expected) * sizeof(double)) {
    throw Error("trainer state: parameter size mismatch");
  }
  Eigen::VectorXd v(expected);
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

json adam_json(const AdamState<double>& s) {
  return {{"t", s.t}, {"m", vector_bytes(s.m)}, {"v", vector_bytes(s.v)}};
}

void adam_from_json(const json& j, AdamState<double>& s) {
  s.t = j.at("t").get<std::int64_t>();
  s.m = vector_from_bytes(j.at("m"), s.m.size());
  s.v = vector_from_bytes(j.at("v"), s.v.size());
}

}  // namespace

// --- config ---

int TrainConfig::minibatch_size() const {
  return minibatch_mode == MinibatchMode::kSize ? minibatch : batch_size() / minibatch;
}

std::int64_t TrainConfig::num_updates() const {
  const std::int64_t b = batch_size();
  return (total_steps + b - 1) / b;
}

void TrainConfig::validate() const {
  if (num_envs < 1 || horizon < 1) throw Error("train config: num_envs and horizon must be >= 1");
  if (epochs < 1 || minibatch < 1) throw Error("train config: epochs and minibatch must be >= 1");
  if (total_steps < 0) throw Error("train config: total_steps must be >= 0");
  if (batch_size() % minibatch != 0) {
    throw Error("train config: minibatch " + std::to_string(minibatch) +
                " does not divide batch " + std::to_string(batch_size()));
  }
  if (!(lr > 0) || !(clip_eps > 0) || !(gamma >= 0 && gamma <= 1) ||
      !(lambda >= 0 && lambda <= 1) || !(value_coef >= 0) || !(weight_decay >= 0) ||
      !(grad_clip >= 0) || !(entropy_coef >= 0)) {
    throw Error("train config: optimizer value out of range");
  }
  if (solver != "joint_critic_ppo") throw Error("train config: unknown solver '" + solver + "'");
  if (checkpoint_every < 0) throw Error("train config: checkpoint_every must be >= 0");
  policy_spec(*this).validate();
}

json to_json(const TrainConfig& c) {
  return {{"scenario", c.scenario},
          {"env", to_json(c.env)},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"minibatch", c.minibatch},
          {"minibatch_mode", c.minibatch_mode == MinibatchMode::kSize ? "size" : "count"},
          {"entropy_coef", c.entropy_coef},
          {"gamma", c.gamma},
          {"lambda", c.lambda},
          {"clip_eps", c.clip_eps},
          {"value_coef", c.value_coef},
          {"weight_decay", c.weight_decay},
          {"grad_clip", c.grad_clip},
          {"cosine_schedule", c.cosine_schedule},
          {"normalize_advantages", c.normalize_advantages},
          {"hidden", c.hidden},
          {"log_std_init", c.log_std_init},
          {"policy_output_gain", c.policy_output_gain},
          {"total_steps", c.total_steps},
          {"num_envs", c.num_envs},
          {"horizon", c.horizon},
          {"seed", c.seed},
          {"solver", c.solver},
          {"single_agent", c.single_agent},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      static const std::vector<std::string> known{
          "scenario", "env", "lr", "epochs", "minibatch", "minibatch_mode", "entropy_coef",
          "gamma", "lambda", "clip_eps", "value_coef", "weight_decay", "grad_clip",
          "cosine_schedule", "normalize_advantages", "hidden", "log_std_init",
          "policy_output_gain", "total_steps", "num_envs", "horizon", "seed", "solver",
          "single_agent", "checkpoint_every"};
      if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
        throw Error("train config: unknown key '" + it.key() + "'");
      }
    }
    c.scenario = j.value("scenario", c.scenario);
    if (j.contains("env")) c.env = env_config_from_json(j.at("env"));
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.minibatch = j.value("minibatch", c.minibatch);
    const std::string mode = j.value("minibatch_mode", std::string("size"));
    if (mode == "size") {
      c.minibatch_mode = MinibatchMode::kSize;
    } else if (mode == "count") {
      c.minibatch_mode = MinibatchMode::kCount;
    } else {
      throw Error("train config: minibatch_mode must be 'size' or 'count'");
    }
    c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
    c.gamma = j.value("gamma", c.gamma);
    c.lambda = j.value("lambda", c.lambda);
    c.clip_eps = j.value("clip_eps", c.clip_eps);
    c.value_coef = j.value("value_coef", c.value_coef);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.cosine_schedule = j.value("cosine_schedule", c.cosine_schedule);
    c.normalize_advantages = j.value("normalize_advantages", c.normalize_advantages);
    c.hidden = j.value("hidden", c.hidden);
    c.log_std_init = j.value("log_std_init", c.log_std_init);
    c.policy_output_gain = j.value("policy_output_gain", c.policy_output_gain);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.num_envs = j.value("num_envs", c.num_envs);
    c.horizon = j.value("horizon", c.horizon);
    c.seed = j.value("seed", c.seed);
    c.solver = j.value("solver", c.solver);
    c.single_agent = j.value("single_agent", c.single_agent);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const json::exception& e) {
    throw Error(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- pieces ---

RowVector gae(const RowVector& rewards, const RowVector& values, const RowVector& next_values,
              const std::vector<std::uint8_t>& done, double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || next_values.size() != n || static_cast<Eigen::Index>(done.size()) != n) {
    throw Error("gae: length mismatch");
  }
  RowVector adv(n);
  double next_adv = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double live = done[t] ? 0.0 : 1.0;
    const double delta = rewards(t) + gamma * next_values(t) * live - values(t);
    next_adv = delta + gamma * lambda * live * next_adv;
    adv(t) = next_adv;
  }
  return adv;
}

PolicyAction scripted_policy(const WorldState&, int) { return PolicyAction::Zero(); }

Matrix critic_inputs(const GlobalState& state, const JointAction& actions) {
  Matrix x(kCriticInputDim, 1);
  x.col(0) << state, actions[0], actions[1];
  return x;
}

UpdateStats ppo_update(Mlp<double>& policy, AdamState<double>& opt, const RolloutBatch& batch,
                       int agent, const TrainConfig& cfg, double lr, Rng& rng) {
  const int n = batch.size();
  const int mb = cfg.minibatch_size();
  const PpoLossConfig loss_cfg{cfg.clip_eps, cfg.entropy_coef};
  UpdateStats stats;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = permutation(n, rng);
    for (int begin = 0; begin + mb <= n; begin += mb) {
      const Matrix obs = gather(batch.obs[agent], perm, begin, mb);
      const Matrix u = gather(batch.pre_squash[agent], perm, begin, mb);
      const RowVector old_lp = gather_row(batch.log_prob[agent], perm, begin, mb);
      const RowVector adv = gather_row(batch.advantages, perm, begin, mb);
      const auto loss = ppo_policy_loss<double>(policy, obs, u, old_lp, adv, loss_cfg);
      if (!std::isfinite(loss.loss)) {
        std::ostringstream msg;
        msg << "ppo_update: non-finite loss for agent " << agent << " at epoch " << epoch
            << ", minibatch offset " << begin << " (surrogate " << loss.surrogate
            << ", entropy " << loss.entropy << ", max |adv| " << adv.cwiseAbs().maxCoeff()
            << ")";
        throw Error(msg.str());
      }
      adam_step<double>(policy.params(), loss.grad, opt, lr, cfg.weight_decay, cfg.grad_clip);
      stats.policy_loss += loss.loss;
      stats.surrogate += loss.surrogate;
      stats.entropy += loss.entropy;
      stats.clip_fraction += loss.clip_fraction;
      stats.approx_kl += loss.approx_kl;
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    const double k = stats.minibatches;
    stats.policy_loss /= k;
    stats.surrogate /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    stats.approx_kl /= k;
  }
  return stats;
}

double critic_update(Mlp<double>& critic, AdamState<double>& opt, const RolloutBatch& batch,
                     const TrainConfig& cfg, double lr, Rng& rng) {
  const int n = batch.size();
  const int mb = cfg.minibatch_size();
  double total = 0.0;
  int count = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = permutation(n, rng);
    for (int begin = 0; begin + mb <= n; begin += mb) {
      const Matrix x = gather(batch.critic_input, perm, begin, mb);
      const Matrix x_next = gather(batch.next_critic_input, perm, begin, mb);
      const RowVector v_next = critic.forward(x_next);
      RowVector target(mb);
      for (int k = 0; k < mb; ++k) {
        const int i = perm[begin + k];
        target(k) = batch.rewards[0](i) + (batch.done[i] ? 0.0 : cfg.gamma * v_next(k));
      }
      const auto loss = critic_loss<double>(critic, x, target, cfg.value_coef);
      if (!std::isfinite(loss.loss)) {
        std::ostringstream msg;
        msg << "critic_update: non-finite loss at epoch " << epoch << ", minibatch offset "
            << begin << " (max |target| " << target.cwiseAbs().maxCoeff() << ")";
        throw Error(msg.str());
      }
      adam_step<double>(critic.params(), loss.grad, opt, lr, cfg.weight_decay, cfg.grad_clip);
      total += loss.loss;
      ++count;
    }
  }
  return count > 0 ? total / count : 0.0;
}

// --- trainer ---

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)), scenario_(load_scenario(cfg_.scenario)) {
  cfg_.validate();
  const int n = cfg_.num_envs;
  envs_.reserve(n);
  for (int e = 0; e < n; ++e) {
    envs_.emplace_back(scenario_, cfg_.env);
    env_rngs_.emplace_back(mix_seed(cfg_.seed, kEnvRngSalt + e));
  }
  episode_counts_.assign(n, 0);
  episode_returns_.assign(n, 0.0);
  obs_.resize(n);
  for (int e = 0; e < n; ++e) obs_[e] = reset_env(e);
  for (int i = 0; i < 2; ++i) {
    policies_[i] = init_mlp<double>(policy_spec(cfg_), mix_seed(cfg_.seed, kPolicySalt + i));
    policy_opt_[i] = AdamState<double>(policies_[i].size());
  }
  critic_ = init_mlp<double>(critic_spec(cfg_), mix_seed(cfg_.seed, kCriticSalt));
  critic_opt_ = AdamState<double>(critic_.size());
  rng_.seed(mix_seed(cfg_.seed, kShuffleSalt));
}

std::array<StackedObservation, 2> Trainer::reset_env(int e) {
  const std::uint64_t seed =
      mix_seed(mix_seed(cfg_.seed, kEnvSeedSalt + e), episode_counts_[e]);
  return envs_[e].reset(seed);
}

double Trainer::current_lr() const {
  if (!cfg_.cosine_schedule) return cfg_.lr;
  return cosine_lr(static_cast<double>(steps_), static_cast<double>(cfg_.total_steps), cfg_.lr);
}

RolloutBatch Trainer::collect() {
  const int n = cfg_.num_envs;
  const int horizon = cfg_.horizon;
  RolloutBatch b;
  b.num_envs = n;
  b.horizon = horizon;
  const int size = b.size();
  for (int i = 0; i < 2; ++i) {
    b.obs[i].resize(kObsDim, size);
    b.pre_squash[i].setZero(kActionDim, size);
    b.actions[i].setZero(kActionDim, size);
    b.log_prob[i].setZero(size);
    b.rewards[i].setZero(size);
  }
  b.critic_input.resize(kCriticInputDim, size);
  b.next_critic_input.setZero(kCriticInputDim, size);
  b.done.assign(size, 0);

  // Samples both agents' actions for every env at the current observations;
  // each env draws from its own generator, agent 0 first.
  const auto sample = [&](Matrix& u, Matrix& a, RowVector& lp, int agent) {
    u.setZero(kActionDim, n);
    a.setZero(kActionDim, n);
    lp.setZero(n);
    if (!learns(agent)) return;
    Matrix o(kObsDim, n);
    for (int e = 0; e < n; ++e) o.col(e) = obs_[e][agent];
    if (!o.allFinite()) throw Error("collect: non-finite observation");
    const Matrix mean = policies_[agent].forward(o);
    const Eigen::VectorXd log_std = policies_[agent].log_std();
    const Eigen::ArrayXd std_dev = log_std.array().exp();
    u = mean;
    for (int e = 0; e < n; ++e) {
      for (int r = 0; r < kActionDim; ++r) u(r, e) += std_dev(r) * standard_normal(env_rngs_[e]);
    }
    a = u.array().tanh().matrix();
    lp = squashed_log_prob<double>(u, mean, log_std);
  };
  const auto sample_all = [&](std::array<Matrix, 2>& u, std::array<Matrix, 2>& a,
                              std::array<RowVector, 2>& lp) {
    for (int i = 0; i < 2; ++i) sample(u[i], a[i], lp[i], i);
  };

  std::array<Matrix, 2> u, a;
  std::array<RowVector, 2> lp;
  for (int t = 0; t < horizon; ++t) {
    sample_all(u, a, lp);
    for (int e = 0; e < n; ++e) {
      const int idx = b.index(t, e);
      for (int i = 0; i < 2; ++i) {
        b.obs[i].col(idx) = obs_[e][i];
        b.pre_squash[i].col(idx) = u[i].col(e);
        b.actions[i].col(idx) = a[i].col(e);
        b.log_prob[i](idx) = lp[i](e);
      }
      b.critic_input.col(idx) << envs_[e].global_state(), a[0].col(e), a[1].col(e);
      if (t > 0 && !b.done[b.index(t - 1, e)]) {
        b.next_critic_input.col(b.index(t - 1, e)) = b.critic_input.col(idx);
      }
      const JointAction joint{PolicyAction(a[0].col(e)), PolicyAction(a[1].col(e))};
      EnvStep step;
      try {
        step = envs_[e].step(joint);
      } catch (const Error& err) {
        throw Error("collect: env " + std::to_string(e) + ": " + err.what());
      }
      b.rewards[0](idx) = step.rewards[0];
      b.rewards[1](idx) = step.rewards[1];
      episode_returns_[e] += step.rewards[0];
      if (step.done()) {
        b.done[idx] = 1;
        ++b.episodes;
        if (step.outcome == Outcome::kGoal) ++b.successes;
        if (step.outcome == Outcome::kDrop) ++b.drops;
        b.return_sum += episode_returns_[e];
        episode_returns_[e] = 0.0;
        ++episode_counts_[e];
        obs_[e] = reset_env(e);
      } else {
        obs_[e] = step.obs;
      }
    }
  }
  // Truncated segments bootstrap on the next sampled joint action.
  sample_all(u, a, lp);
  for (int e = 0; e < n; ++e) {
    const int idx = b.index(horizon - 1, e);
    if (b.done[idx]) continue;
    b.next_critic_input.col(idx) << envs_[e].global_state(), a[0].col(e), a[1].col(e);
  }
  return b;
}

void Trainer::evaluate(RolloutBatch& b) const {
  const int size = b.size();
  b.values = critic_.forward(b.critic_input);
  b.next_values = critic_.forward(b.next_critic_input);
  for (int k = 0; k < size; ++k) {
    if (b.done[k]) b.next_values(k) = 0.0;
  }
  b.advantages.resize(size);
  RowVector r(b.horizon), v(b.horizon), nv(b.horizon);
  std::vector<std::uint8_t> d(b.horizon);
  for (int e = 0; e < b.num_envs; ++e) {
    for (int t = 0; t < b.horizon; ++t) {
      const int k = b.index(t, e);
      r(t) = b.rewards[0](k);
      v(t) = b.values(k);
      nv(t) = b.next_values(k);
      d[t] = b.done[k];
    }
    const RowVector adv = gae(r, v, nv, d, cfg_.gamma, cfg_.lambda);
    for (int t = 0; t < b.horizon; ++t) b.advantages(b.index(t, e)) = adv(t);
  }
  b.returns = b.advantages + b.values;
  if (cfg_.normalize_advantages && size > 1) {
    const double mean = b.advantages.mean();
    const double var = (b.advantages.array() - mean).square().mean();
    b.advantages = ((b.advantages.array() - mean) / (std::sqrt(var) + 1e-8)).matrix();
  }
}

json Trainer::update() {
  const double lr = current_lr();
  RolloutBatch batch = collect();
  steps_ += batch.size();
  evaluate(batch);
  std::array<UpdateStats, 2> stats;
  int learners = 0;
  double clip = 0.0, entropy = 0.0, kl = 0.0, ploss = 0.0;
  for (int i = 0; i < 2; ++i) {
    if (!learns(i)) continue;
    stats[i] = ppo_update(policies_[i], policy_opt_[i], batch, i, cfg_, lr, rng_);
    ++learners;
    clip += stats[i].clip_fraction;
    entropy += stats[i].entropy;
    kl += stats[i].approx_kl;
    ploss += stats[i].policy_loss;
  }
  const double vloss = critic_update(critic_, critic_opt_, batch, cfg_, lr, rng_);
  ++updates_;
  json line;
  line["update"] = updates_;
  line["step"] = steps_;
  line["episodes"] = batch.episodes;
  line["return_mean"] =
      batch.episodes > 0 ? json(batch.return_sum / batch.episodes) : json(nullptr);
  line["sr"] = batch.episodes > 0 ? json(static_cast<double>(batch.successes) / batch.episodes)
                                  : json(nullptr);
  line["drop_rate"] = batch.episodes > 0
                          ? json(static_cast<double>(batch.drops) / batch.episodes)
                          : json(nullptr);
  line["step_reward_mean"] = batch.rewards[0].mean();
  line["clip_frac"] = clip / learners;
  line["entropy"] = entropy / learners;
  line["approx_kl"] = kl / learners;
  line["policy_loss"] = ploss / learners;
  line["value_loss"] = vloss;
  line["lr"] = lr;
  return line;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.seed = cfg_.seed;
  c.step = steps_;
  c.meta = {{"train_config", to_json(cfg_)},
            {"scenario", cfg_.scenario},
            {"updates", updates_},
            {"solver", cfg_.solver},
            {"single_agent", cfg_.single_agent}};
  for (int i = 0; i < 2; ++i) {
    if (learns(i)) c.networks.push_back({policy_name(i), policies_[i]});
  }
  c.networks.push_back({"critic", critic_});
  return c;
}

std::string Trainer::save_state() const {
  json j;
  j["format"] = "trainer_state_v1";
  j["config"] = to_json(cfg_);
  j["steps"] = steps_;
  j["updates"] = updates_;
  j["rng"] = rng_string(rng_);
  json envs = json::array();
  for (std::size_t e = 0; e < envs_.size(); ++e) {
    envs.push_back({{"env", envs_[e].save()},
                    {"rng", rng_string(env_rngs_[e])},
                    {"episodes", episode_counts_[e]},
                    {"return", episode_returns_[e]}});
  }
  j["envs"] = std::move(envs);
  json nets;
  for (int i = 0; i < 2; ++i) {
    nets[policy_name(i)] = {{"params", vector_bytes(policies_[i].params())},
                            {"adam", adam_json(policy_opt_[i])}};
  }
  nets["critic"] = {{"params", vector_bytes(critic_.params())}, {"adam", adam_json(critic_opt_)}};
  j["nets"] = std::move(nets);
  const auto bytes = json::to_cbor(j);
  return std::string(bytes.begin(), bytes.end());
}

Trainer Trainer::load_state(const std::string& bytes) {
  json j;
  try {
    j = json::from_cbor(bytes);
  } catch (const json::exception& e) {
    throw Error(std::string("trainer state: ") + e.what());
  }
  if (j.value("format", "") != "trainer_state_v1") throw Error("trainer state: unknown format");
  try {
    Trainer t(train_config_from_json(j.at("config")));
    t.steps_ = j.at("steps").get<std::int64_t>();
    t.updates_ = j.at("updates").get<std::int64_t>();
    t.rng_ = rng_from_string(j.at("rng").get<std::string>());
    const auto& envs = j.at("envs");
    if (envs.size() != t.envs_.size()) throw Error("trainer state: env count mismatch");
    for (std::size_t e = 0; e < t.envs_.size(); ++e) {
      t.envs_[e].load(envs[e].at("env"));
      t.env_rngs_[e] = rng_from_string(envs[e].at("rng").get<std::string>());
      t.episode_counts_[e] = envs[e].at("episodes").get<std::uint64_t>();
      t.episode_returns_[e] = envs[e].at("return").get<double>();
      t.obs_[e] = t.envs_[e].observations();
    }
    const auto& nets = j.at("nets");
    for (int i = 0; i < 2; ++i) {
      const auto& n = nets.at(policy_name(i));
      t.policies_[i].params() = vector_from_bytes(n.at("params"), t.policies_[i].size());
      adam_from_json(n.at("adam"), t.policy_opt_[i]);
    }
    t.critic_.params() = vector_from_bytes(nets.at("critic").at("params"), t.critic_.size());
    adam_from_json(nets.at("critic").at("adam"), t.critic_opt_);
    return t;
  } catch (const json::exception& e) {
    throw Error(std::string("trainer state: ") + e.what());
  }
}

// --- loop ---

namespace {

void write_snapshot(const Trainer& t, const std::string& dir, const std::string& name) {
  make_directories(dir);
  write_checkpoint(dir + "/" + name + ".ckpt", t.checkpoint());
  write_file(dir + "/" + name + ".state", t.save_state());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const TrainOptions& options) {
  Trainer t = options.resume_state ? Trainer::load_state(read_file(*options.resume_state))
                                   : Trainer(cfg);
  const bool writing = !options.out_dir.empty();
  const std::string ckpt_dir = options.out_dir + "/ckpt";
  std::ofstream metrics;
  if (writing) {
    make_directories(options.out_dir);
    write_json(options.out_dir + "/config.json", to_json(t.config()));
    metrics.open(options.out_dir + "/metrics.jsonl",
                 options.resume_state ? std::ios::app : std::ios::trunc);
    if (!metrics) throw Error("cannot write " + options.out_dir + "/metrics.jsonl");
  }
  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  while (!t.finished()) {
    if (options.stop != nullptr && options.stop->load()) {
      result.interrupted = true;
      break;
    }
    json line;
    try {
      line = t.update();
    } catch (const Error&) {
      if (writing) write_snapshot(t, ckpt_dir, "final");
      throw;
    }
    line["wallclock"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (writing) metrics << line.dump() << '\n' << std::flush;
    if (options.on_metrics) options.on_metrics(line);
    result.metrics.push_back(std::move(line));
    const int every = t.config().checkpoint_every;
    if (writing && every > 0 && t.updates() % every == 0) {
      write_snapshot(t, ckpt_dir, "update_" + std::to_string(t.updates()));
    }
  }
  if (writing) write_snapshot(t, ckpt_dir, "final");
  result.checkpoint = t.checkpoint();
  return result;
}

TrainResult train_single_agent(TrainConfig cfg, const TrainOptions& options) {
  cfg.single_agent = true;
  return train(cfg, options);
}

// --- drift diagnostic ---

Prop1Config default_prop1_config(std::uint64_t seed, int own_actions, int partner_actions,
                                 int drift_steps) {
  if (own_actions < 1 || partner_actions < 2 || drift_steps < 1) {
    throw Error("prop1: need >= 1 own action, >= 2 partner actions, >= 1 drift step");
  }
  Rng rng(seed);
  Prop1Config c;
  c.q.resize(own_actions, partner_actions);
  for (int r = 0; r < own_actions; ++r) {
    for (int k = 0; k < partner_actions; ++k) c.q(r, k) = 2.0 * uniform01(rng) - 1.0;
  }
  for (int s = 0; s <= drift_steps; ++s) {
    Eigen::VectorXd p(partner_actions);
    for (int k = 0; k < partner_actions; ++k) p(k) = 0.05 + uniform01(rng);
    c.partner_schedule.push_back(p / p.sum());
  }
  return c;
}

Prop1Report prop1_diagnostic(const Prop1Config& cfg) {
  const Eigen::Index m = cfg.q.cols();
  for (const auto& p : cfg.partner_schedule) {
    if (p.size() != m) throw Error("prop1: partner distribution size does not match Q");
  }
  Prop1Report report;
  // Targets as each critic form sees them: the joint critic conditions on the
  // partner action, the marginalized one averages it out under P.
  const auto marginal = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd { return cfg.q * p; };
  for (std::size_t s = 1; s < cfg.partner_schedule.size(); ++s) {
    const Matrix joint_before = cfg.q;
    const Matrix joint_after = cfg.q;
    Prop1Step step;
    step.joint_drift = (joint_after - joint_before).cwiseAbs().maxCoeff();
    step.marginal_drift =
        marginal(cfg.partner_schedule[s]) - marginal(cfg.partner_schedule[s - 1]);
    report.max_joint_drift = std::max(report.max_joint_drift, step.joint_drift);
    report.max_marginal_drift =
        std::max(report.max_marginal_drift, step.marginal_drift.cwiseAbs().maxCoeff());
    report.steps.push_back(std::move(step));
  }
  return report;
}

json to_json(const Prop1Report& report) {
  json steps = json::array();
  for (const auto& s : report.steps) {
    steps.push_back({{"joint_drift", s.joint_drift},
                     {"marginal_drift", std::vector<double>(s.marginal_drift.data(),
                                                            s.marginal_drift.data() +
                                                                s.marginal_drift.size())}});
  }
  return {{"steps", steps},
          {"max_joint_drift", report.max_joint_drift},
          {"max_marginal_drift", report.max_marginal_drift}};
}

}  // namespace tandem
