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

#ifndef TANDEM_MDP_HPP_
#define TANDEM_MDP_HPP_

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "tandem/cognition.hpp"
#include "tandem/sim.hpp"

namespace tandem {

inline constexpr int kAnchorWindow = 5;
inline constexpr int kTaskDim = 2 * kAnchorWindow;
inline constexpr int kEgoDim = 13;
inline constexpr int kPartnerDim = 13;
inline constexpr int kObjectDim = 18;
inline constexpr int kContactDim = 4;
inline constexpr int kRayCount = 36;
inline constexpr int kFrameDim =
    kTaskDim + kEgoDim + kPartnerDim + kObjectDim + kContactDim + kRayCount;  // 94
inline constexpr int kCompressedDim = kFrameDim - kRayCount;                   // 58
inline constexpr int kHistoryFrames = 2;
inline constexpr int kObsDim = kFrameDim + kHistoryFrames * kCompressedDim;  // 210
inline constexpr int kActionDim = 11;
inline constexpr int kGlobalStateDim = 58;
inline constexpr int kCriticInputDim = kGlobalStateDim + 2 * kActionDim;  // 80

using Frame = Eigen::Matrix<double, kFrameDim, 1>;
using CompressedFrame = Eigen::Matrix<double, kCompressedDim, 1>;
using StackedObservation = Eigen::Matrix<double, kObsDim, 1>;
using PolicyAction = Eigen::Matrix<double, kActionDim, 1>;
using GlobalState = Eigen::Matrix<double, kGlobalStateDim, 1>;
using JointAction = std::array<PolicyAction, 2>;

// Block offsets inside a frame; psi_env comes last so that compression is a
// prefix.
struct FrameLayout {
  static constexpr int kTask = 0;
  static constexpr int kEgo = kTask + kTaskDim;
  static constexpr int kPartner = kEgo + kEgoDim;
  static constexpr int kObject = kPartner + kPartnerDim;
  static constexpr int kContact = kObject + kObjectDim;
  static constexpr int kEnv = kContact + kContactDim;
};

// Action component order: v_x, v_y, yaw rate, CoM height, torso pitch,
// left wrist xyz, right wrist xyz.
struct ActionLayout {
  static constexpr int kVx = 0;
  static constexpr int kVy = 1;
  static constexpr int kYawRate = 2;
  static constexpr int kCom = 3;
  static constexpr int kTorso = 4;
  static constexpr int kWristLeft = 5;
  static constexpr int kWristRight = 8;
};

struct ObservationConfig {
  double ray_max = 4.0;  // d_max, m
};

// Normalized rangefinder feature: 1 at contact, 0 at or beyond d_max.
double ray_feature(double distance, double d_max);

// Anchor sequence with the index of the first unreached anchor. `origin` is
// the object position the plan started from; it closes the deviation
// polyline at the front.
struct AnchorTracker {
  Vec2 origin = Vec2::Zero();
  std::vector<Vec2> anchors;
  int cursor = 0;

  const Vec2& current() const { return anchors[cursor]; }
  std::vector<Vec2> polyline() const;
  bool operator==(const AnchorTracker&) const = default;
};

AnchorTracker make_tracker(const AnchorSequence& seq, const Vec2& origin,
                           double capture_radius);

// The L-anchor window starting at the cursor, padded with the final anchor.
std::array<Vec2, kAnchorWindow> anchor_window(const AnchorTracker& tracker);

Frame build_frame(const Simulator& sim, const WorldState& state, int agent,
                  const AnchorTracker& anchors, const ObservationConfig& config = {});

inline CompressedFrame compress(const Frame& frame) { return frame.head<kCompressedDim>(); }

// Most recent compressed frames, newest first.
using FrameHistory = std::deque<CompressedFrame>;

// Concatenates the current frame with the two previous compressed frames;
// missing history slots take the current compressed frame.
StackedObservation stack(const Frame& current, const FrameHistory& history);
void push_history(FrameHistory& history, const Frame& frame);

struct NominalConfig {
  double k_p = 1.0;             // 1/s
  double v_max = 0.4;           // m/s
  double k_yaw = 1.0;           // 1/s
  double yaw_rate_max = 0.15;   // rad/s
  double k_station = 1.0;       // 1/s, push mode station keeping
  double push_creep = 0.0;      // m/s, minimum push speed while turning
  double lookahead = 1.0;       // m, pure-pursuit distance over the window
};

// Anchor-tracking base command. Both agents move their station with the
// object so that the formation is kept; posture and wrists at defaults.
TaskSpaceCommand nominal_controller(const Simulator& sim, const WorldState& state, int agent,
                                    const AnchorTracker& anchors,
                                    const NominalConfig& config = {});

// Nominal command with zero object motion (used when no anchors are given).
TaskSpaceCommand hold_command(const Simulator& sim, const WorldState& state, int agent);

struct RewardConfig {
  double alpha = 1.0;
  double beta = 0.5;
  double gamma_drop = 10.0;
  double delta = 1.0;            // path-deviation gate, m
  double capture_radius = 0.3;   // anchor advancement radius, m
  std::array<double, kActionDim> scaling{0.15, 0.15, 0.2, 0.1, 0.2,
                                         0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
};

void validate(const RewardConfig& config);
nlohmann::json to_json(const RewardConfig& config);
RewardConfig reward_config_from_json(const nlohmann::json& j);

// u = clamp(u_base + M a); wrist residuals offset the base wrist targets.
TaskSpaceCommand residual_map(const PolicyAction& action, const TaskSpaceCommand& base,
                              const std::array<double, kActionDim>& scaling,
                              const Simulator& sim, int agent);

struct RewardTerms {
  double reward = 0.0;
  double progress = 0.0;  // ungated anchor-distance decrease, m
  double tilt = 0.0;      // sum |z_j - mean z|
  bool gated = false;
  bool terminal_drop = false;
};

// Shared team reward for one policy step. Advances `tracker.cursor` past
// anchors captured by the successor state.
RewardTerms compute_reward(const WorldState& prev, const WorldState& next,
                           AnchorTracker& tracker, const RewardConfig& config, TaskMode mode);

// Object lateral deviation from the anchor polyline.
double path_deviation(const AnchorTracker& tracker, const Vec2& p);

// Centralized critic state (world frame).
GlobalState global_state(const Simulator& sim, const WorldState& state,
                         const AnchorTracker& anchors, int step, int horizon);

// Observation / action / critic layout with names, offsets and units.
nlohmann::json observation_schema();

struct EnvConfig {
  SimConfig sim;
  CognitionConfig cognition;
  ObservationConfig observation;
  RewardConfig reward;
  NominalConfig nominal;
  bool use_cognition = true;  // false: no anchors, zero psi_task, nominal holds
  int horizon = 0;            // policy steps; 0 takes the scenario horizon
};

nlohmann::json to_json(const EnvConfig& config);
EnvConfig env_config_from_json(const nlohmann::json& j);

enum class Outcome { kRunning, kGoal, kDrop, kTimeout };

struct EnvStep {
  std::array<StackedObservation, 2> obs;
  std::array<double, 2> rewards{};  // both entries carry the shared reward
  RewardTerms terms;
  StepEvents events;
  Outcome outcome = Outcome::kRunning;
  bool done() const { return outcome != Outcome::kRunning; }
};

// One transport episode: cognition at reset, residual actions through the
// nominal controller, shared reward, termination.
class TransportEnv {
 public:
  TransportEnv(Scenario scenario, EnvConfig config);

  std::array<StackedObservation, 2> reset(std::uint64_t seed);
  EnvStep step(const JointAction& actions);

  const Simulator& sim() const { return sim_; }
  const EnvConfig& config() const { return config_; }
  const WorldState& state() const { return state_; }
  const AnchorTracker& tracker() const { return tracker_; }
  int steps() const { return steps_; }
  int horizon() const { return horizon_; }
  GlobalState global_state() const;
  std::array<StackedObservation, 2> observations() const;
  JointCommand commands(const JointAction& actions) const;

  // Full mutable episode state for checkpointing.
  nlohmann::json save() const;
  void load(const nlohmann::json& j);

 private:
  Frame frame(int agent) const;

  Simulator sim_;
  EnvConfig config_;
  int horizon_;
  WorldState state_;
  AnchorTracker tracker_;
  std::array<FrameHistory, 2> history_;
  int steps_ = 0;
};

std::string_view to_string(Outcome outcome);

}  // namespace tandem

#endif  // TANDEM_MDP_HPP_
