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

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tandem/eval.hpp"
#include "tandem/io.hpp"
#include "tandem/trainer.hpp"

namespace tandem {
namespace {

using Vec = Eigen::VectorXd;

RowVector random_row(int n, Rng& rng) {
  RowVector r(n);
  for (int i = 0; i < n; ++i) r(i) = standard_normal(rng);
  return r;
}

// Direct sum of discounted TD residuals up to the end of the episode.
RowVector gae_oracle(const RowVector& r, const RowVector& v, const RowVector& nv,
                     const std::vector<std::uint8_t>& done, double gamma, double lambda) {
  const int n = static_cast<int>(r.size());
  RowVector delta(n);
  for (int t = 0; t < n; ++t) delta(t) = r(t) + gamma * (done[t] ? 0.0 : nv(t)) - v(t);
  RowVector adv = RowVector::Zero(n);
  for (int t = 0; t < n; ++t) {
    double w = 1.0;
    for (int k = t; k < n; ++k) {
      adv(t) += w * delta(k);
      if (done[k]) break;
      w *= gamma * lambda;
    }
  }
  return adv;
}

TEST(Gae, OneStepTerminalEpisode) {
  const RowVector r = RowVector::Constant(1, 1.0);
  const RowVector z = RowVector::Zero(1);
  const RowVector adv = gae(r, z, z, {1}, 0.99, 0.95);
  EXPECT_EQ(adv(0), 1.0);
  EXPECT_EQ((adv + z)(0), 1.0);
}

TEST(Gae, LambdaZeroIsTdResidual) {
  Rng rng(1);
  const int n = 12;
  const RowVector r = random_row(n, rng);
  const RowVector v = random_row(n, rng);
  const RowVector nv = random_row(n, rng);
  std::vector<std::uint8_t> done(n, 0);
  done[5] = 1;
  const RowVector adv = gae(r, v, nv, done, 0.9, 0.0);
  for (int t = 0; t < n; ++t) {
    EXPECT_EQ(adv(t), r(t) + 0.9 * (done[t] ? 0.0 : nv(t)) - v(t));
  }
}

TEST(Gae, MatchesDirectSumOnRandomEpisodes) {
  Rng rng(2);
  double worst = 0.0;
  for (int ep = 0; ep < 1000; ++ep) {
    const int n = 10;
    const RowVector r = random_row(n, rng);
    const RowVector v = random_row(n, rng);
    RowVector nv(n);
    for (int t = 0; t + 1 < n; ++t) nv(t) = v(t + 1);
    nv(n - 1) = standard_normal(rng);
    std::vector<std::uint8_t> done(n, 0);
    for (int t = 0; t < n; ++t) done[t] = uniform01(rng) < 0.15;
    const double gamma = 0.9 + 0.1 * uniform01(rng);
    const double lambda = uniform01(rng);
    const RowVector adv = gae(r, v, nv, done, gamma, lambda);
    worst = std::max(worst, (adv - gae_oracle(r, v, nv, done, gamma, lambda)).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(GaeProperty, TelescopesToDiscountedReturn) {
  Rng rng(3);
  const int n = 20;
  const RowVector r = random_row(n, rng);
  const RowVector z = RowVector::Zero(n);
  std::vector<std::uint8_t> done(n, 0);
  done[7] = 1;
  done[n - 1] = 1;
  const RowVector adv = gae(r, z, z, done, 0.97, 1.0);
  for (int t = 0; t < n; ++t) {
    double g = 0.0;
    double w = 1.0;
    for (int k = t; k < n; ++k) {
      g += w * r(k);
      if (done[k]) break;
      w *= 0.97;
    }
    EXPECT_NEAR(adv(t), g, 1e-12) << t;
  }
}

TEST(Gae, LengthMismatchThrows) {
  const RowVector a = RowVector::Zero(3);
  EXPECT_THROW(gae(a, a, a, {0, 0}, 0.9, 0.9), Error);
}

// --- clipped surrogate ---

struct PpoFixture {
  Mlp<double> net;
  Matrix obs;
  Matrix u;
  RowVector log_prob;  // under the current parameters
};

PpoFixture make_ppo_fixture(int batch, std::uint64_t seed) {
  MlpSpec spec;
  spec.input_dim = kObsDim;
  spec.hidden = {32, 16};
  spec.output_dim = kActionDim;
  spec.head = Head::kGaussianPolicy;
  PpoFixture f;
  f.net = init_mlp<double>(spec, seed);
  Rng rng(seed + 1);
  f.obs.resize(kObsDim, batch);
  for (int c = 0; c < batch; ++c) {
    for (int r = 0; r < kObsDim; ++r) f.obs(r, c) = standard_normal(rng);
  }
  const auto out = policy_forward(f.net, f.obs, PolicyMode::kSample, &rng);
  f.u = out.pre_squash;
  f.log_prob = out.log_prob;
  return f;
}

// Stored log-probs that produce the requested ratios.
RowVector old_for_ratio(const PpoFixture& f, const RowVector& ratio) {
  return (f.log_prob.array() - ratio.array().log()).matrix();
}

TEST(PpoLoss, UnitRatioIsUnclippedEstimator) {
  const auto f = make_ppo_fixture(6, 4);
  Rng rng(5);
  const RowVector adv = random_row(6, rng);
  const auto clipped = ppo_policy_loss(f.net, f.obs, f.u, f.log_prob, adv, {0.2, 0.01});
  const auto open = ppo_policy_loss(f.net, f.obs, f.u, f.log_prob, adv, {1e9, 0.01});
  EXPECT_NEAR(clipped.surrogate, adv.mean(), 1e-12);
  EXPECT_EQ(clipped.grad, open.grad);
  EXPECT_EQ(clipped.clip_fraction, 0.0);
  EXPECT_NEAR(clipped.approx_kl, 0.0, 1e-12);
}

TEST(PpoLoss, ClippedBranchHasZeroGradient) {
  const auto f = make_ppo_fixture(1, 6);
  const RowVector adv = RowVector::Constant(1, 2.0);
  const auto loss = ppo_policy_loss(f.net, f.obs, f.u, old_for_ratio(f, RowVector::Constant(1, 1.5)),
                                    adv, {0.2, 0.0});
  EXPECT_NEAR(loss.surrogate, 1.2 * 2.0, 1e-12);
  EXPECT_TRUE(loss.grad.isZero(0.0));
  EXPECT_EQ(loss.clip_fraction, 1.0);
}

TEST(PpoLoss, NegativeAdvantageLowRatioHasZeroGradient) {
  const auto f = make_ppo_fixture(1, 7);
  const RowVector adv = RowVector::Constant(1, -1.0);
  const auto loss = ppo_policy_loss(f.net, f.obs, f.u, old_for_ratio(f, RowVector::Constant(1, 0.5)),
                                    adv, {0.2, 0.0});
  EXPECT_NEAR(loss.surrogate, -0.8, 1e-12);
  EXPECT_TRUE(loss.grad.isZero(0.0));
  // The other side of the pessimistic bound keeps its gradient.
  const auto open = ppo_policy_loss(f.net, f.obs, f.u, old_for_ratio(f, RowVector::Constant(1, 1.5)),
                                    adv, {0.2, 0.0});
  EXPECT_NEAR(open.surrogate, -1.5, 1e-12);
  EXPECT_GT(open.grad.norm(), 0.0);
}

TEST(PpoLoss, HandBuiltTwoSampleMinibatch) {
  const auto f = make_ppo_fixture(2, 8);
  RowVector ratio(2);
  ratio << 1.1, 0.7;
  RowVector adv(2);
  adv << 2.0, 1.0;
  const auto loss = ppo_policy_loss(f.net, f.obs, f.u, old_for_ratio(f, ratio), adv, {0.2, 0.01});
  // min(2.2, 2.2) and min(0.7, 0.8)
  const double surrogate = (2.2 + 0.7) / 2.0;
  const double entropy = f.net.log_std().sum() + 11 * 0.5 * (1.0 + std::log(2.0 * kPi));
  EXPECT_NEAR(loss.surrogate, surrogate, 1e-10);
  EXPECT_NEAR(loss.entropy, entropy, 1e-10);
  EXPECT_NEAR(loss.loss, -surrogate - 0.01 * entropy, 1e-10);
  EXPECT_EQ(loss.clip_fraction, 0.5);
}

TEST(PpoProperty, ScaleCorrect) {
  const auto f = make_ppo_fixture(16, 9);
  Rng rng(10);
  RowVector ratio(16);
  for (int i = 0; i < 16; ++i) ratio(i) = 0.5 + uniform01(rng);
  const RowVector old = old_for_ratio(f, ratio);
  const RowVector adv = random_row(16, rng);
  const auto base = ppo_policy_loss(f.net, f.obs, f.u, old, adv, {0.2, 0.0});
  for (double c : {0.5, 3.0, 17.0}) {
    const auto scaled = ppo_policy_loss(f.net, f.obs, f.u, old, RowVector(c * adv), {0.2, 0.0});
    EXPECT_NEAR(scaled.surrogate, c * base.surrogate, 1e-12 * c);
  }
}

TEST(PpoProperty, ClipInactiveInsideTrustRegion) {
  const auto f = make_ppo_fixture(16, 11);
  Rng rng(12);
  RowVector ratio(16);
  for (int i = 0; i < 16; ++i) ratio(i) = 0.85 + 0.3 * uniform01(rng);
  const RowVector old = old_for_ratio(f, ratio);
  const RowVector adv = random_row(16, rng);
  const auto clipped = ppo_policy_loss(f.net, f.obs, f.u, old, adv, {0.2, 0.01});
  const auto open = ppo_policy_loss(f.net, f.obs, f.u, old, adv, {1e9, 0.01});
  EXPECT_EQ(clipped.surrogate, open.surrogate);
  EXPECT_EQ(clipped.loss, open.loss);
  EXPECT_EQ(clipped.grad, open.grad);
}

// --- critic ---

TEST(CriticLoss, ZeroCriticUnitTarget) {
  MlpSpec spec;
  spec.input_dim = kCriticInputDim;
  Mlp<double> net(spec);
  const auto loss = critic_loss(net, Matrix(Matrix::Ones(kCriticInputDim, 3)),
                                RowVector(RowVector::Ones(3)), 1.0);
  EXPECT_EQ(loss.loss, 1.0);
  EXPECT_TRUE((loss.td_error.array() == -1.0).all());
}

// One full-batch Adam step on a linear critic against the hand-derived
// semi-gradient, with one terminal sample.
TEST(CriticUpdate, LinearCriticClosedForm) {
  TrainConfig cfg;
  cfg.num_envs = 1;
  cfg.horizon = 4;
  cfg.epochs = 1;
  cfg.minibatch_mode = MinibatchMode::kCount;
  cfg.minibatch = 1;
  cfg.gamma = 0.9;
  cfg.value_coef = 0.5;
  cfg.weight_decay = 0.0;
  cfg.grad_clip = 0.0;

  MlpSpec spec;
  spec.input_dim = kCriticInputDim;
  spec.hidden = {};
  Mlp<double> critic(spec);
  Rng rng(13);
  for (Eigen::Index i = 0; i < critic.size(); ++i) critic.params()(i) = 0.1 * standard_normal(rng);

  RolloutBatch b;
  b.num_envs = 1;
  b.horizon = 4;
  b.critic_input.resize(kCriticInputDim, 4);
  b.next_critic_input.resize(kCriticInputDim, 4);
  for (int c = 0; c < 4; ++c) {
    for (int r = 0; r < kCriticInputDim; ++r) {
      b.critic_input(r, c) = standard_normal(rng);
      b.next_critic_input(r, c) = standard_normal(rng);
    }
  }
  b.rewards[0] = random_row(4, rng);
  b.rewards[1] = b.rewards[0];
  b.done = {0, 1, 0, 0};

  const Vec w = critic.weight(0).row(0).transpose();
  const double bias = critic.bias(0)(0);
  Vec grad_w = Vec::Zero(kCriticInputDim);
  double grad_b = 0.0;
  for (int c = 0; c < 4; ++c) {
    const double v = w.dot(b.critic_input.col(c)) + bias;
    const double v_next = w.dot(b.next_critic_input.col(c)) + bias;
    const double target = b.rewards[0](c) + (b.done[c] ? 0.0 : 0.9 * v_next);
    const double e = v - target;
    grad_w += 0.5 * 2.0 * e * b.critic_input.col(c) / 4.0;
    grad_b += 0.5 * 2.0 * e / 4.0;
  }
  Vec expected(critic.size());
  expected << grad_w, grad_b;
  // First Adam step: m_hat = g, v_hat = g^2.
  const double lr = 1e-3;
  expected = critic.params().array() - lr * expected.array() / (expected.array().abs() + 1e-8);

  AdamState<double> opt(critic.size());
  Rng shuffle(14);
  critic_update(critic, opt, b, cfg, lr, shuffle);
  EXPECT_LT((critic.params() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

// --- trainer ---

TrainConfig small_config(std::uint64_t seed = 1) {
  TrainConfig c;
  c.scenario = "corridor";
  c.num_envs = 2;
  c.horizon = 16;
  c.hidden = {32, 32};
  c.epochs = 2;
  c.minibatch_mode = MinibatchMode::kCount;
  c.minibatch = 4;
  c.total_steps = 96;
  c.seed = seed;
  return c;
}

std::vector<nlohmann::json> strip_wallclock(std::vector<nlohmann::json> lines) {
  for (auto& l : lines) l.erase("wallclock");
  return lines;
}

TEST(Collect, BatchShapeAndSharedReward) {
  TrainConfig c = small_config();
  c.horizon = 4;
  Trainer t(c);
  const auto b = t.collect();
  EXPECT_EQ(b.size(), 8);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(b.obs[i].cols(), 8);
    EXPECT_EQ(b.obs[i].rows(), kObsDim);
    EXPECT_EQ(b.actions[i].rows(), kActionDim);
    EXPECT_LT(b.actions[i].cwiseAbs().maxCoeff(), 1.0);
  }
  EXPECT_EQ(b.critic_input.rows(), kCriticInputDim);
  EXPECT_EQ(b.rewards[0], b.rewards[1]);
  // Critic input carries the joint action.
  EXPECT_EQ(Matrix(b.critic_input.bottomRows(22).topRows(11)), b.actions[0]);
  EXPECT_EQ(Matrix(b.critic_input.bottomRows(11)), b.actions[1]);
}

TEST(Collect, DeterministicAndRewardSumsAgree) {
  TrainConfig c = small_config(5);
  c.horizon = 64;
  Trainer a(c);
  Trainer b(c);
  for (int k = 0; k < 2; ++k) {
    const auto x = a.collect();
    const auto y = b.collect();
    for (int i = 0; i < 2; ++i) {
      EXPECT_EQ(x.obs[i], y.obs[i]);
      EXPECT_EQ(x.pre_squash[i], y.pre_squash[i]);
      EXPECT_EQ(x.log_prob[i], y.log_prob[i]);
    }
    EXPECT_EQ(x.critic_input, y.critic_input);
    EXPECT_EQ(x.next_critic_input, y.next_critic_input);
    EXPECT_EQ(x.done, y.done);
    EXPECT_EQ(x.rewards[0].sum(), x.rewards[1].sum());
  }
}

TEST(Evaluate, AdvantagesNormalizedReturnsConsistent) {
  Trainer t(small_config());
  auto b = t.collect();
  t.evaluate(b);
  EXPECT_NEAR(b.advantages.mean(), 0.0, 1e-10);
  EXPECT_NEAR((b.advantages.array() - b.advantages.mean()).square().mean(), 1.0, 1e-6);
  for (int k = 0; k < b.size(); ++k) {
    if (b.done[k]) EXPECT_EQ(b.next_values(k), 0.0);
  }
  TrainConfig raw = small_config();
  raw.normalize_advantages = false;
  Trainer u(raw);
  auto c = u.collect();
  u.evaluate(c);
  EXPECT_LT((c.returns - c.advantages - c.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TrainerProperty, AgentUpdatesIndependent) {
  TrainConfig c = small_config();
  Trainer t(c);
  auto b = t.collect();
  t.evaluate(b);
  Mlp<double> p0 = t.policy(0);
  Mlp<double> p1 = t.policy(1);
  const Vec p0_before = p0.params();
  AdamState<double> o0(p0.size());
  AdamState<double> o1(p1.size());
  Rng r1(20);
  ppo_update(p1, o1, b, 1, c, 1e-3, r1);
  EXPECT_EQ(p0.params(), p0_before);
  EXPECT_NE(p1.params(), t.policy(1).params());

  // Agent 0's result is the same whether or not agent 1 moved first.
  Mlp<double> q0 = t.policy(0);
  AdamState<double> oq(q0.size());
  Rng ra(21);
  Rng rb(21);
  ppo_update(p0, o0, b, 0, c, 1e-3, ra);
  ppo_update(q0, oq, b, 0, c, 1e-3, rb);
  EXPECT_EQ(p0.params(), q0.params());
}

TEST(Train, MetricLogsDeterministic) {
  const auto a = strip_wallclock(train(small_config(3)).metrics);
  const auto b = strip_wallclock(train(small_config(3)).metrics);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a, b);
  const auto c = strip_wallclock(train(small_config(4)).metrics);
  EXPECT_NE(a, c);
  for (const char* key : {"step", "return_mean", "sr", "clip_frac", "entropy", "lr"}) {
    EXPECT_TRUE(a[0].contains(key)) << key;
  }
}

TEST(Train, ResumeIsBitExact) {
  Trainer a(small_config(6));
  a.update();
  const std::string state = a.save_state();
  Trainer b = Trainer::load_state(state);
  EXPECT_EQ(b.steps(), a.steps());
  EXPECT_EQ(b.updates(), a.updates());
  EXPECT_EQ(serialize_checkpoint(b.checkpoint()), serialize_checkpoint(a.checkpoint()));
  EXPECT_EQ(b.save_state(), state);
  EXPECT_EQ(a.update(), b.update());
  EXPECT_EQ(a.policy(0).params(), b.policy(0).params());
  EXPECT_EQ(a.critic().params(), b.critic().params());
  EXPECT_THROW(Trainer::load_state("garbage"), Error);
}

TEST(Train, ResumeThroughFilesMatchesUninterrupted) {
  const std::string dir = ::testing::TempDir() + "/resume_run";
  TrainConfig c = small_config(7);
  const auto full = strip_wallclock(train(c).metrics);
  Trainer t(c);
  t.update();
  write_file(dir + ".state", t.save_state());
  TrainOptions o;
  o.resume_state = dir + ".state";
  const auto rest = strip_wallclock(train(c, o).metrics);
  ASSERT_EQ(rest.size(), 2u);
  EXPECT_EQ(rest[0], full[1]);
  EXPECT_EQ(rest[1], full[2]);
}

TEST(Train, BudgetRespected) {
  TrainConfig c = small_config();
  c.total_steps = 100;  // batch 32
  const auto r = train(c);
  ASSERT_EQ(r.metrics.size(), 4u);
  const auto steps = r.metrics.back()["step"].get<std::int64_t>();
  EXPECT_GE(steps, c.total_steps);
  EXPECT_LT(steps, c.total_steps + c.batch_size());
  EXPECT_EQ(r.checkpoint.step, steps);
}

TEST(Train, StopFlagInterrupts) {
  std::atomic<bool> stop{true};
  TrainOptions o;
  o.stop = &stop;
  const auto r = train(small_config(), o);
  EXPECT_TRUE(r.interrupted);
  EXPECT_TRUE(r.metrics.empty());
}

TEST(Train, OutputDirectoryLayout) {
  const std::string dir = ::testing::TempDir() + "/train_out";
  TrainOptions o;
  o.out_dir = dir;
  TrainConfig c = small_config();
  c.checkpoint_every = 2;
  train(c, o);
  for (const char* f : {"/metrics.jsonl", "/config.json", "/ckpt/final.ckpt", "/ckpt/final.state",
                        "/ckpt/update_2.ckpt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir + f)) << f;
  }
  const auto ck = read_checkpoint(dir + "/ckpt/final.ckpt");
  EXPECT_EQ(ck.meta["scenario"], "corridor");
}

TEST(SingleAgent, PartnerScriptedAndAbsent) {
  TrainConfig c = small_config();
  c.single_agent = true;
  Trainer t(c);
  const Vec before = t.policy(0).params();
  for (int k = 0; k < 2; ++k) {
    const auto b = t.collect();
    EXPECT_TRUE(b.actions[1].isZero(0.0));
    EXPECT_TRUE(b.pre_squash[1].isZero(0.0));
  }
  t.update();
  EXPECT_NE(t.policy(0).params(), before);
  EXPECT_FALSE(t.learns(1));
  const auto ck = train_single_agent(small_config()).checkpoint;
  EXPECT_THROW(ck.network("policy1"), Error);
  EXPECT_NO_THROW(ck.network("policy0"));
  EXPECT_EQ(ck.meta["single_agent"], true);
}

TEST(TrainConfigTest, ValidationAndJson) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.minibatch_size(), 16);
  EXPECT_EQ(train_config_from_json(to_json(c)).minibatch, 16);
  EXPECT_EQ(to_json(train_config_from_json(to_json(c))), to_json(c));
  TrainConfig bad = c;
  bad.minibatch = 7;
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.solver = "happo";
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.gamma = 1.5;
  EXPECT_THROW(bad.validate(), Error);
  c.minibatch_mode = MinibatchMode::kCount;
  EXPECT_EQ(c.minibatch_size(), c.batch_size() / 16);
}

TEST(Scripted, ZeroActionAndCorridorFloor) {
  Scenario s = load_scenario("corridor");
  const WorldState w = Simulator(s).reset(3);
  EXPECT_TRUE(scripted_policy(w, 0).isZero(0.0));
  EXPECT_TRUE(scripted_policy(w, 1).isZero(0.0));
  int goals = 0;
  const int n = 20;
  for (int k = 0; k < n; ++k) {
    goals += run_episode(s, EnvConfig{}, scripted_pair(), mix_seed(11, k)).success;
  }
  EXPECT_GE(goals, 19);
}

// --- drift diagnostic ---

TEST(TargetDrift, FrozenPartnerNoDrift) {
  Prop1Config c = default_prop1_config(1);
  for (auto& p : c.partner_schedule) p = c.partner_schedule.front();
  const auto r = prop1_diagnostic(c);
  EXPECT_EQ(r.max_joint_drift, 0.0);
  EXPECT_EQ(r.max_marginal_drift, 0.0);
}

TEST(TargetDrift, TenthOfMassAcrossUnitGap) {
  Prop1Config c;
  c.q.resize(1, 2);
  c.q << 1.0, 0.0;
  Vec p0(2), p1(2);
  p0 << 0.5, 0.5;
  p1 << 0.6, 0.4;
  c.partner_schedule = {p0, p1};
  const auto r = prop1_diagnostic(c);
  ASSERT_EQ(r.steps.size(), 1u);
  EXPECT_EQ(r.steps[0].joint_drift, 0.0);
  EXPECT_NEAR(r.steps[0].marginal_drift(0), 0.1, 1e-12);
}

TEST(TargetDrift, RandomSchedulesMatchExactSum) {
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto c = default_prop1_config(seed, 4, 5, 30);
    const auto r = prop1_diagnostic(c);
    EXPECT_EQ(r.max_joint_drift, 0.0);
    for (std::size_t s = 0; s < r.steps.size(); ++s) {
      for (int i = 0; i < c.q.rows(); ++i) {
        double exact = 0.0;
        for (int j = 0; j < c.q.cols(); ++j) {
          exact += (c.partner_schedule[s + 1](j) - c.partner_schedule[s](j)) * c.q(i, j);
        }
        EXPECT_NEAR(r.steps[s].marginal_drift(i), exact, 1e-12);
      }
    }
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 10.0);
  Prop1Config bad = default_prop1_config(0);
  bad.partner_schedule[1] = Vec::Ones(9);
  EXPECT_THROW(prop1_diagnostic(bad), Error);
}

// Empirical smoke: later updates earn more than the first ones.
TEST(TrainSmoke, CorridorReturnImproves) {
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig c;
    c.scenario = "corridor";
    c.num_envs = 8;
    c.horizon = 64;
    c.minibatch_mode = MinibatchMode::kCount;
    c.minibatch = 16;
    c.total_steps = 20 * c.batch_size();
    c.seed = seed;
    const auto m = train(c).metrics;
    const auto window = [&](int begin) {
      double sum = 0.0;
      int n = 0;
      for (int k = begin; k < begin + 5; ++k) {
        if (!m[k]["return_mean"].is_null()) {
          sum += m[k]["return_mean"].get<double>();
          ++n;
        }
      }
      return n > 0 ? sum / n : -1e9;
    };
    const double first = window(0);
    const double last = window(15);
    improved += last > first;
    std::printf("seed %llu: first %.3f last %.3f\n", static_cast<unsigned long long>(seed), first,
                last);
  }
  EXPECT_GE(improved, 4);
}

}  // namespace
}  // namespace tandem
