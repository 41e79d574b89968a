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

#include <bit>
#include <cmath>

#include "tandem/mdp.hpp"
#include "tandem/random.hpp"

namespace tandem {
namespace {

PolicyAction random_action(Rng& rng) {
  PolicyAction a;
  for (int k = 0; k < kActionDim; ++k) a(k) = 2.0 * uniform01(rng) - 1.0;
  return a;
}

Scenario unjittered(const std::string& id) {
  Scenario s = builtin_scenario(id);
  s.start_jitter_position = 0.0;
  s.start_jitter_heading = 0.0;
  return s;
}

TEST(Dimensions, LayoutArithmetic) {
  EXPECT_EQ(kFrameDim, 94);
  EXPECT_EQ(kCompressedDim, 58);
  EXPECT_EQ(kObsDim, 210);
  EXPECT_EQ(kActionDim, 11);
  EXPECT_EQ(FrameLayout::kEnv + kRayCount, kFrameDim);
  const auto schema = observation_schema();
  int total = 0;
  for (const auto& f : schema["frame"]) total += f["size"].get<int>();
  EXPECT_EQ(total, kFrameDim);
  int critic = 0;
  for (const auto& f : schema["critic_input"]) critic += f["size"].get<int>();
  EXPECT_EQ(critic, kCriticInputDim);
  EXPECT_EQ(schema["action"].size(), static_cast<std::size_t>(kActionDim));
}

TEST(Dimensions, EveryScenarioAndMode) {
  Rng rng(1);
  for (const auto& id : builtin_scenario_ids()) {
    for (bool cognition : {true, false}) {
      EnvConfig cfg;
      cfg.use_cognition = cognition;
      TransportEnv env(builtin_scenario(id), cfg);
      auto obs = env.reset(3);
      for (const auto& o : obs) EXPECT_EQ(o.size(), 210);
      for (int t = 0; t < 3; ++t) {
        const auto step = env.step({random_action(rng), random_action(rng)});
        for (const auto& o : step.obs) {
          EXPECT_EQ(o.size(), 210);
          EXPECT_TRUE(o.allFinite());
        }
        if (step.done()) break;
      }
      EXPECT_EQ(env.global_state().size() + 2 * kActionDim, kCriticInputDim);
    }
  }
}

TEST(RayFeature, EndpointsAndLinearity) {
  EXPECT_EQ(ray_feature(0.0, 4.0), 1.0);
  EXPECT_EQ(ray_feature(4.0, 4.0), 0.0);
  EXPECT_EQ(ray_feature(9.0, 4.0), 0.0);
  EXPECT_EQ(ray_feature(2.0, 4.0), 0.5);
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) {
    const double d = 6.0 * uniform01(rng);
    const double f = ray_feature(d, 4.0);
    if (d >= 4.0) {
      EXPECT_EQ(f, 0.0);
    } else {
      EXPECT_NEAR(f, 1.0 - d / 4.0, 1e-12);
    }
  }
}

TEST(BuildFrame, ObjectAtAnchorGivesZeroTask) {
  const Simulator sim(builtin_scenario("S21"));
  const WorldState s = sim.reset(0);
  const auto tracker = make_tracker({{s.object.pose.position()}, 1.0}, s.object.pose.position(), 0.3);
  const Frame f = build_frame(sim, s, 0, tracker);
  EXPECT_TRUE(f.segment<kTaskDim>(FrameLayout::kTask).isZero(0.0));
}

TEST(BuildFrame, LastAnchorRepeated) {
  const Simulator sim(builtin_scenario("S21"));
  const WorldState s = sim.reset(0);
  const Vec2 w(7.0, 2.5);
  const auto tracker = make_tracker({{w}, 1.0}, s.object.pose.position(), 0.3);
  const Frame f = build_frame(sim, s, 0, tracker);
  for (int k = 1; k < kAnchorWindow; ++k) {
    EXPECT_EQ(f.segment<2>(2 * k), f.segment<2>(0));
  }
  EXPECT_NEAR(f.segment<2>(0).norm(), (w - s.object.pose.position()).norm(), 1e-12);
}

TEST(BuildFrame, WindowStartsAtFirstUnreachedAnchor) {
  const Simulator sim(builtin_scenario("corridor"));
  const WorldState s = sim.reset(0);
  const Vec2 p = s.object.pose.position();
  AnchorSequence seq;
  for (int k = 0; k < 8; ++k) seq.anchors.push_back(p + Vec2(0.2 + k, 0.0));
  const auto tracker = make_tracker(seq, p, 0.3);
  EXPECT_EQ(tracker.cursor, 1);
  const auto window = anchor_window(tracker);
  EXPECT_EQ(window[0], seq.anchors[1]);
  EXPECT_EQ(window[4], seq.anchors[5]);
}

TEST(BuildFrame, EnvFeaturesInUnitInterval) {
  Rng rng(3);
  for (const auto& id : builtin_scenario_ids()) {
    TransportEnv env(builtin_scenario(id), {});
    env.reset(rng());
    for (int t = 0; t < 20; ++t) {
      const auto step = env.step({random_action(rng), random_action(rng)});
      for (const auto& o : step.obs) {
        const auto env_block = o.segment<kRayCount>(FrameLayout::kEnv);
        EXPECT_GE(env_block.minCoeff(), 0.0);
        EXPECT_LE(env_block.maxCoeff(), 1.0);
      }
      if (step.done()) break;
    }
  }
}

TEST(Stack, StartCopiesCurrentIntoHistory) {
  TransportEnv env(builtin_scenario("S22"), {});
  const auto obs = env.reset(1);
  for (const auto& o : obs) {
    const auto head = o.head<kCompressedDim>();
    EXPECT_EQ(o.segment<kCompressedDim>(kFrameDim), head);
    EXPECT_EQ(o.segment<kCompressedDim>(kFrameDim + kCompressedDim), head);
  }
}

TEST(Stack, HistoryIsPreviousCompressedFrames) {
  const Simulator sim(builtin_scenario("S22"));
  Frame f0 = Frame::Random();
  Frame f1 = Frame::Random();
  Frame f2 = Frame::Random();
  FrameHistory h;
  push_history(h, f0);
  push_history(h, f1);
  const auto o = stack(f2, h);
  EXPECT_EQ(o.head<kFrameDim>(), f2);
  EXPECT_EQ(o.segment<kCompressedDim>(kFrameDim), compress(f1));
  EXPECT_EQ(o.segment<kCompressedDim>(kFrameDim + kCompressedDim), compress(f0));
  push_history(h, f2);
  EXPECT_EQ(h.size(), 2u);
}

TEST(Nominal, ObjectAtAnchorGivesZeroVelocity) {
  const Simulator sim(unjittered("S21"));
  const WorldState s = sim.reset(0);
  const Vec2 p = s.object.pose.position();
  const auto tracker = make_tracker({{p}, 1.0}, p, 0.3);
  for (int i = 0; i < 2; ++i) {
    const auto c = nominal_controller(sim, s, i, tracker);
    EXPECT_NEAR(c.v_base.norm(), 0.0, 1e-12) << i;
  }
}

TEST(Nominal, ClampedProportionalLaw) {
  Scenario sc = unjittered("corridor");
  const Simulator sim(sc);
  const WorldState s = sim.reset(0);
  const Vec2 p = s.object.pose.position();
  NominalConfig cfg;
  cfg.k_p = 0.5;
  cfg.v_max = 0.4;
  const auto tracker = make_tracker({{p + Vec2(1.0, 0.0)}, 1.0}, p, 0.3);
  const auto c = nominal_controller(sim, s, 0, tracker, cfg);
  EXPECT_NEAR(c.v_base.x(), 0.4, 1e-12);
  EXPECT_NEAR(c.v_base.y(), 0.0, 1e-12);
  // Unclamped: 0.5 * 0.6 m.
  const auto near = make_tracker({{p + Vec2(0.6, 0.0)}, 1.0}, p, 0.3);
  EXPECT_NEAR(nominal_controller(sim, s, 0, near, cfg).v_base.x(), 0.3, 1e-12);
}

TEST(Nominal, DefaultWristsOnHandlesAtReset) {
  for (const char* id : {"S21", "S31", "corridor"}) {
    const Simulator sim(builtin_scenario(id));
    const WorldState s = sim.reset(4);
    const auto tracker = make_tracker({{sim.scenario().goal.center}, 1.0},
                                      s.object.pose.position(), 0.3);
    const auto handles = sim.realized_handles(s.object.pose);
    for (int i = 0; i < 2; ++i) {
      const auto c = nominal_controller(sim, s, i, tracker);
      for (int side = 0; side < 2; ++side) {
        const Vec3 t = sim.wrist_target_world(s.agents[i], c, side);
        EXPECT_NEAR((t.head<2>() - handles[2 * i + side]).norm(), 0.0, 1e-9) << id;
        EXPECT_NEAR(t.z(), sim.scenario().object.grip_height, 1e-9) << id;
      }
    }
  }
}

TEST(ResidualMap, ZeroActionIsBase) {
  const Simulator sim(builtin_scenario("S21"));
  const WorldState s = sim.reset(0);
  const auto tracker = make_tracker(plan_anchors(sim.scenario(), s, {}), s.object.pose.position(), 0.3);
  const RewardConfig rc;
  for (int i = 0; i < 2; ++i) {
    const auto base = nominal_controller(sim, s, i, tracker);
    const auto u = residual_map(PolicyAction::Zero(), base, rc.scaling, sim, i);
    const auto clamped = sim.clamp_command(i, base);
    EXPECT_EQ(u.v_base, clamped.v_base);
    EXPECT_EQ(u.com_height, clamped.com_height);
    EXPECT_EQ(u.wrist[0], clamped.wrist[0]);
    EXPECT_EQ(u.wrist[1], clamped.wrist[1]);
    const auto& e = sim.scenario().embodiments[i];
    if (std::abs(base.v_base.x()) < e.max_vx && std::abs(base.v_base.y()) < e.max_vy &&
        std::abs(base.v_base.z()) < e.max_yaw_rate) {
      EXPECT_EQ(u.v_base, base.v_base);
    }
  }
}

TEST(ResidualMap, ClampAndArithmetic) {
  Scenario sc = builtin_scenario("S21");
  sc.embodiments[0].max_vx = 0.4;
  const Simulator sim(sc);
  std::array<double, kActionDim> m = RewardConfig{}.scaling;
  m[ActionLayout::kVx] = 0.3;
  m[ActionLayout::kCom] = 0.1;
  TaskSpaceCommand base;
  base.v_base.x() = 0.2;
  base.com_height = 0.7;
  base.wrist = sim.default_wrists(0);
  PolicyAction a = PolicyAction::Zero();
  a(ActionLayout::kVx) = 1.0;
  EXPECT_DOUBLE_EQ(residual_map(a, base, m, sim, 0).v_base.x(), 0.4);
  a.setZero();
  a(ActionLayout::kCom) = -1.0;
  EXPECT_NEAR(residual_map(a, base, m, sim, 0).com_height, 0.6, 1e-15);
  a.setZero();
  a(ActionLayout::kWristLeft + 1) = 0.5;
  const auto u = residual_map(a, base, m, sim, 0);
  EXPECT_NEAR(u.wrist[0].y() - base.wrist[0].y(), 0.5 * m[ActionLayout::kWristLeft + 1], 1e-15);
}

TEST(Reward, StillLevelIsZero) {
  const Simulator sim(builtin_scenario("S21"));
  const WorldState s = sim.reset(0);
  auto tracker = make_tracker({{sim.scenario().goal.center}, 1.0}, s.object.pose.position(), 0.3);
  const auto r = compute_reward(s, s, tracker, {}, TaskMode::kCarry);
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_FALSE(r.terminal_drop);
}

TEST(Reward, ProgressTerm) {
  const Simulator sim(unjittered("corridor"));
  const WorldState s0 = sim.reset(0);
  const Vec2 p = s0.object.pose.position();
  auto tracker = make_tracker({{p + Vec2(4.0, 0.0)}, 1.0}, p, 0.3);
  WorldState s1 = s0;
  s1.object.pose.x += 0.1;
  RewardConfig rc;
  rc.alpha = 1.0;
  const auto r = compute_reward(s0, s1, tracker, rc, TaskMode::kCarry);
  EXPECT_NEAR(r.reward, 0.1, 1e-12);
  EXPECT_FALSE(r.gated);
}

TEST(Reward, GatedBeyondDeviation) {
  const Simulator sim(unjittered("corridor"));
  const WorldState s0 = sim.reset(0);
  const Vec2 p = s0.object.pose.position();
  auto tracker = make_tracker({{p + Vec2(4.0, 0.0)}, 1.0}, p, 0.3);
  WorldState s1 = s0;
  s1.object.pose.y += 1.5;
  s1.object.pose.x += 0.5;
  const auto r = compute_reward(s0, s1, tracker, {}, TaskMode::kCarry);
  EXPECT_TRUE(r.gated);
  EXPECT_EQ(r.reward, 0.0);
}

TEST(Reward, DropTerm) {
  const Simulator sim(builtin_scenario("S21"));
  const WorldState s0 = sim.reset(0);
  WorldState s1 = s0;
  s1.dropped = true;
  auto tracker = make_tracker({{sim.scenario().goal.center}, 1.0}, s0.object.pose.position(), 0.3);
  RewardConfig rc;
  rc.gamma_drop = 10.0;
  const auto r = compute_reward(s0, s1, tracker, rc, TaskMode::kCarry);
  EXPECT_TRUE(r.terminal_drop);
  EXPECT_NEAR(r.reward, -10.0, 1e-12);
}

TEST(Reward, PushModeHasNoTilt) {
  const Simulator sim(builtin_scenario("S11"));
  const WorldState s0 = sim.reset(0);
  WorldState s1 = s0;
  s1.object.corner_heights = {0.1, 0.9, 0.3, 0.5};
  auto tracker = make_tracker({{sim.scenario().goal.center}, 1.0}, s0.object.pose.position(), 0.3);
  EXPECT_EQ(compute_reward(s0, s1, tracker, {}, TaskMode::kPush).tilt, 0.0);
}

TEST(RewardProperty, TiltTranslationInvariant) {
  const Simulator sim(builtin_scenario("S31"));
  const WorldState s0 = sim.reset(0);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    WorldState s1 = s0;
    for (double& z : s1.object.corner_heights) z = uniform01(rng);
    WorldState s2 = s1;
    const double c = 4.0 * uniform01(rng) - 2.0;
    for (double& z : s2.object.corner_heights) z += c;
    auto t1 = make_tracker({{sim.scenario().goal.center}, 1.0}, s0.object.pose.position(), 0.3);
    auto t2 = t1;
    EXPECT_NEAR(compute_reward(s0, s1, t1, {}, TaskMode::kCarry).tilt,
                compute_reward(s0, s2, t2, {}, TaskMode::kCarry).tilt, 1e-12);
  }
}

// Shared reward: for a unilateral deviation of either agent, both agents'
// reward differences are bit-identical (Phi = R).
TEST(RewardProperty, PotentialConditionUnderSharedReward) {
  Rng rng(6);
  int pairs = 0;
  for (const auto& id : builtin_scenario_ids()) {
    TransportEnv env(builtin_scenario(id), {});
    env.reset(rng());
    for (int k = 0; k < 100; ++k) {
      const int deviator = static_cast<int>(rng() % 2);
      JointAction a{random_action(rng), random_action(rng)};
      JointAction b = a;
      b[deviator] = random_action(rng);
      TransportEnv ea = env;
      TransportEnv eb = env;
      const auto ra = ea.step(a);
      const auto rb = eb.step(b);
      ASSERT_EQ(std::bit_cast<std::uint64_t>(ra.rewards[0]),
                std::bit_cast<std::uint64_t>(ra.rewards[1]));
      ASSERT_EQ(std::bit_cast<std::uint64_t>(rb.rewards[0]),
                std::bit_cast<std::uint64_t>(rb.rewards[1]));
      const double d0 = rb.rewards[0] - ra.rewards[0];
      const double d1 = rb.rewards[1] - ra.rewards[1];
      ASSERT_EQ(std::bit_cast<std::uint64_t>(d0), std::bit_cast<std::uint64_t>(d1));
      ++pairs;
      const auto step = env.step({random_action(rng), random_action(rng)});
      if (step.done()) env.reset(rng());
    }
  }
  EXPECT_EQ(pairs, 1000);
}

TEST(RewardProperty, UngatedProgressBoundedByPathLength) {
  Rng rng(7);
  for (const auto& id : builtin_scenario_ids()) {
    for (int episode = 0; episode < 3; ++episode) {
      TransportEnv env(builtin_scenario(id), {});
      env.reset(rng());
      const auto line = env.tracker().polyline();
      double bound = 0.0;
      for (std::size_t k = 1; k < line.size(); ++k) bound += (line[k] - line[k - 1]).norm();
      bound += env.tracker().anchors.size() * env.config().reward.capture_radius;
      double sum = 0.0;
      for (;;) {
        JointAction a{0.3 * random_action(rng), 0.3 * random_action(rng)};
        const auto step = env.step(a);
        if (!step.terms.gated) sum += step.terms.progress;
        if (step.done()) break;
      }
      EXPECT_LE(sum, bound) << id;
    }
  }
}

TEST(Env, NoCognitionZeroesTaskBlock) {
  EnvConfig cfg;
  cfg.use_cognition = false;
  TransportEnv env(builtin_scenario("S33"), cfg);
  auto obs = env.reset(2);
  for (int t = 0; t < 5; ++t) {
    for (const auto& o : obs) {
      EXPECT_TRUE(o.segment<kTaskDim>(FrameLayout::kTask).isZero(0.0));
      EXPECT_TRUE(o.segment<kTaskDim>(kFrameDim).isZero(0.0));
    }
    obs = env.step({PolicyAction::Zero(), PolicyAction::Zero()}).obs;
  }
}

TEST(Env, SaveLoadContinuesBitExactly) {
  Rng rng(8);
  TransportEnv a(builtin_scenario("S22"), {});
  a.reset(5);
  for (int t = 0; t < 4; ++t) a.step({random_action(rng), random_action(rng)});
  TransportEnv b(builtin_scenario("S22"), {});
  b.load(nlohmann::json::parse(a.save().dump()));
  for (int t = 0; t < 4; ++t) {
    const JointAction act{random_action(rng), random_action(rng)};
    const auto ra = a.step(act);
    const auto rb = b.step(act);
    EXPECT_EQ(ra.obs[0], rb.obs[0]);
    EXPECT_EQ(ra.rewards[0], rb.rewards[0]);
    EXPECT_TRUE(bitwise_equal(a.state(), b.state()));
  }
}

TEST(Env, TimeoutAtHorizon) {
  EnvConfig cfg;
  cfg.horizon = 3;
  TransportEnv env(builtin_scenario("S23"), cfg);
  env.reset(0);
  Outcome last = Outcome::kRunning;
  for (int t = 0; t < 3; ++t) last = env.step({PolicyAction::Zero(), PolicyAction::Zero()}).outcome;
  EXPECT_EQ(last, Outcome::kTimeout);
  EXPECT_THROW(env.step({PolicyAction::Zero(), PolicyAction::Zero()}), Error);
}

TEST(RewardConfigJson, RoundTripAndValidation) {
  RewardConfig c;
  c.beta = 0.25;
  const auto back = reward_config_from_json(to_json(c));
  EXPECT_EQ(back.beta, 0.25);
  EXPECT_EQ(back.scaling, c.scaling);
  nlohmann::json bad = to_json(c);
  bad["delta"] = 0.0;
  EXPECT_THROW(reward_config_from_json(bad), Error);
}

}  // namespace
}  // namespace tandem
