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

#ifndef TANDEM_SIM_HPP_
#define TANDEM_SIM_HPP_

#include <array>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "tandem/geometry.hpp"
#include "tandem/scenario.hpp"

namespace tandem {

// Planar physics-lite parameters. The low rate is the policy rate; the high
// rate is the tracking-proxy rate (substeps per policy step = f_high / f_low).
struct SimConfig {
  double f_low = 2.0;
  double f_high = 50.0;
  double tau_track = 0.15;
  double r_break = 0.25;
  double z_min = 0.2;
  double push_band = 0.1;
  double linear_damping = 2.0;   // 1/s, free-sliding object
  double angular_damping = 3.0;  // 1/s
  double torque_gain = 16.0;      // rad/s^2 per (m * m/s) of contact torque
  double torso_length = 0.4;
  double shoulder_half_width = 0.2;
  double shoulder_above_com = 0.35;

  int substeps() const;
  double dt_low() const { return 1.0 / f_low; }
  double dt_high() const { return 1.0 / f_high; }
};

struct AgentState {
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();  // world frame
  double yaw = 0.0;
  double yaw_rate = 0.0;
  double com_height = 0.0;
  double torso_pitch = 0.0;
  std::array<Vec3, 2> wrist_pos{Vec3::Zero(), Vec3::Zero()};  // world frame, {left, right}
  int embodiment_id = 0;
};

struct ObjectState {
  Pose2 pose;
  Vec2 planar_velocity = Vec2::Zero();
  double heading_rate = 0.0;
  std::array<double, 4> corner_heights{};
  double com_height = 0.0;
};

struct WorldState {
  double time = 0.0;
  std::array<AgentState, 2> agents;
  ObjectState object;
  // agent0 wrist L/R, agent1 wrist L/R
  std::array<bool, 4> contacts{};
  bool dropped = false;
};

bool bitwise_equal(const WorldState& a, const WorldState& b);

// Task-space command for one agent. Velocities are body frame; wrist targets
// are body-frame offsets whose z is measured from the agent's CoM height.
struct TaskSpaceCommand {
  Vec3 v_base = Vec3::Zero();  // v_x, v_y, yaw rate
  double com_height = 0.0;
  double torso_pitch = 0.0;
  std::array<Vec3, 2> wrist{Vec3::Zero(), Vec3::Zero()};
};

using JointCommand = std::array<TaskSpaceCommand, 2>;

struct StepEvents {
  bool drop = false;
  bool wall_hit = false;
  bool goal_entry = false;
};

struct StepResult {
  WorldState state;
  StepEvents events;
};

class Simulator {
 public:
  explicit Simulator(Scenario scenario, SimConfig config = {});

  const Scenario& scenario() const { return scenario_; }
  const SimConfig& config() const { return config_; }

  // Default body-frame wrist targets of an agent: the handle positions seen
  // from its reset station, z relative to its default CoM height.
  std::array<Vec3, 2> default_wrists(int agent) const { return default_wrists_[agent]; }

  WorldState reset(std::uint64_t seed) const;
  // Object pose used by reset for this seed (start pose plus jitter).
  Pose2 reset_pose(std::uint64_t seed) const;

  // One policy interval of substeps. Throws Error on non-finite commands.
  StepResult step(const WorldState& state, const JointCommand& commands) const;
  // A single tracking-proxy substep; `events` accumulates flags.
  WorldState substep(const WorldState& state, const JointCommand& commands,
                     StepEvents& events) const;

  // Distances of n rays fanned uniformly over [0, 2pi) from the agent yaw.
  std::vector<double> raycast(const WorldState& state, int agent, int n_rays,
                              double d_max) const;

  bool detect_goal(const WorldState& state) const;

  // Angle between the suspension-plane normal and vertical (radians).
  double tilt_angle(const WorldState& state) const;

  // Handle positions realized on the object (world xy).
  std::array<Vec2, 4> realized_handles(const Pose2& pose) const;

  // Wrist target in world coordinates, clamped to the workspace ball.
  Vec3 wrist_target_world(const AgentState& agent, const TaskSpaceCommand& cmd,
                          int side) const;

  // Clamps a command to the agent's embodiment bounds.
  TaskSpaceCommand clamp_command(int agent, const TaskSpaceCommand& cmd) const;

  const std::vector<Segment>& walls() const { return walls_; }

 private:
  void update_heights(WorldState& state) const;
  void update_push_contacts(WorldState& state) const;
  void resolve_collisions(AgentState& agent, double radius,
                          const std::vector<Segment>& obstacles) const;

  Scenario scenario_;
  SimConfig config_;
  std::vector<Segment> walls_;
  std::array<std::array<Vec3, 2>, 2> default_wrists_;
};

// Replay log records ("replay_v1").
nlohmann::json to_json(const WorldState& state);
WorldState world_state_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskSpaceCommand& cmd);
TaskSpaceCommand command_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StepEvents& events);

}  // namespace tandem

#endif  // TANDEM_SIM_HPP_
