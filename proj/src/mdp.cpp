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

#include "tandem/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tandem/error.hpp"

namespace tandem {

double ray_feature(double distance, double d_max) {
  return 1.0 - std::min(std::max(distance, 0.0), d_max) / d_max;
}

std::vector<Vec2> AnchorTracker::polyline() const {
  std::vector<Vec2> out{origin};
  out.insert(out.end(), anchors.begin(), anchors.end());
  return out;
}

namespace {

void advance(AnchorTracker& t, const Vec2& p, double capture_radius) {
  while (t.cursor + 1 < static_cast<int>(t.anchors.size()) &&
         (p - t.anchors[t.cursor]).norm() <= capture_radius) {
    ++t.cursor;
  }
}

template <int N, typename Vec>
void put(Frame& f, int& at, const Vec& v) {
  f.segment<N>(at) = v;
  at += N;
}

}  // namespace

AnchorTracker make_tracker(const AnchorSequence& seq, const Vec2& origin,
                           double capture_radius) {
  if (seq.anchors.empty()) throw Error("anchor tracker: empty anchor sequence");
  AnchorTracker t{origin, seq.anchors, 0};
  advance(t, origin, capture_radius);
  return t;
}

std::array<Vec2, kAnchorWindow> anchor_window(const AnchorTracker& tracker) {
  std::array<Vec2, kAnchorWindow> out;
  const int last = static_cast<int>(tracker.anchors.size()) - 1;
  for (int k = 0; k < kAnchorWindow; ++k) {
    out[k] = tracker.anchors[std::min(tracker.cursor + k, last)];
  }
  return out;
}

Frame build_frame(const Simulator& sim, const WorldState& state, int agent,
                  const AnchorTracker& anchors, const ObservationConfig& config) {
  const AgentState& ego = state.agents[agent];
  const AgentState& ptn = state.agents[1 - agent];
  const Mat2 to_ego = rotation(-ego.yaw);
  const Vec2 p_obj = state.object.pose.position();
  Frame f;
  int at = 0;

  if (anchors.anchors.empty()) {
    f.segment<kTaskDim>(at).setZero();
    at += kTaskDim;
  } else {
    for (const auto& w : anchor_window(anchors)) put<2>(f, at, to_ego * (w - p_obj));
  }

  const auto body_block = [&](const AgentState& a, int id) {
    Eigen::Matrix<double, 13, 1> b;
    b.segment<2>(0) = to_ego * (a.position - p_obj);
    b.segment<2>(2) = to_ego * a.velocity;
    b(4) = wrap_angle(a.yaw - (id == agent ? state.object.pose.heading : ego.yaw));
    b(5) = a.com_height;
    b(6) = a.torso_pitch;
    const Mat2 to_body = rotation(-a.yaw);
    const auto defaults = sim.default_wrists(id);
    for (int side = 0; side < 2; ++side) {
      const Vec3& w = a.wrist_pos[side];
      const Vec2 xy = to_body * (Vec2(w.x(), w.y()) - a.position);
      const Vec3 local(xy.x(), xy.y(), w.z() - a.com_height);
      b.segment<3>(7 + 3 * side) = local - defaults[side];
    }
    return b;
  };
  put<kEgoDim>(f, at, body_block(ego, agent));
  put<kPartnerDim>(f, at, body_block(ptn, 1 - agent));

  const auto corners = sim.scenario().object_box(state.object.pose).corners();
  for (int j = 0; j < 4; ++j) {
    const Vec2 c = to_ego * (corners[j] - ego.position);
    put<3>(f, at, Vec3(c.x(), c.y(), state.object.corner_heights[j]));
  }
  const Vec2 com = to_ego * (p_obj - ego.position);
  put<3>(f, at, Vec3(com.x(), com.y(), state.object.com_height));
  const Vec2 vel = to_ego * state.object.planar_velocity;
  put<3>(f, at, Vec3(vel.x(), vel.y(), state.object.heading_rate));

  for (int k : {2 * agent, 2 * agent + 1, 2 * (1 - agent), 2 * (1 - agent) + 1}) {
    f(at++) = state.contacts[k] ? 1.0 : 0.0;
  }

  const auto rays = sim.raycast(state, agent, kRayCount, config.ray_max);
  for (int k = 0; k < kRayCount; ++k) f(at++) = ray_feature(rays[k], config.ray_max);
  return f;
}

StackedObservation stack(const Frame& current, const FrameHistory& history) {
  StackedObservation out;
  out.head<kFrameDim>() = current;
  for (int k = 0; k < kHistoryFrames; ++k) {
    out.segment<kCompressedDim>(kFrameDim + k * kCompressedDim) =
        k < static_cast<int>(history.size()) ? history[k] : compress(current);
  }
  return out;
}

void push_history(FrameHistory& history, const Frame& frame) {
  history.push_front(compress(frame));
  while (static_cast<int>(history.size()) > kHistoryFrames) history.pop_back();
}

namespace {

TaskSpaceCommand default_posture(const Simulator& sim, int agent) {
  TaskSpaceCommand c;
  c.com_height = sim.scenario().embodiments[agent].com_default;
  c.torso_pitch = 0.0;
  c.wrist = sim.default_wrists(agent);
  return c;
}

}  // namespace

TaskSpaceCommand hold_command(const Simulator& sim, const WorldState&, int agent) {
  return default_posture(sim, agent);
}

TaskSpaceCommand nominal_controller(const Simulator& sim, const WorldState& state, int agent,
                                    const AnchorTracker& anchors,
                                    const NominalConfig& config) {
  if (anchors.anchors.empty()) return hold_command(sim, state, agent);
  const Scenario& sc = sim.scenario();
  const Pose2& pose = state.object.pose;
  const Vec2 p_obj = pose.position();
  // Pure pursuit: project onto the remaining anchor polyline and chase the
  // point one lookahead further along it.
  std::vector<Vec2> route{anchors.cursor > 0 ? anchors.anchors[anchors.cursor - 1]
                                             : anchors.origin};
  route.insert(route.end(), anchors.anchors.begin() + anchors.cursor, anchors.anchors.end());
  double best = std::numeric_limits<double>::infinity();
  std::size_t seg = 0;
  double along = 0.0;
  for (std::size_t i = 0; i + 1 < route.size(); ++i) {
    const Vec2 d = route[i + 1] - route[i];
    const double len2 = d.squaredNorm();
    const double t = len2 > 0 ? std::clamp((p_obj - route[i]).dot(d) / len2, 0.0, 1.0) : 0.0;
    const double dist = (route[i] + t * d - p_obj).norm();
    if (dist < best) {
      best = dist;
      seg = i;
      along = t * std::sqrt(len2);
    }
  }
  Vec2 target = route.back();
  double remaining = config.lookahead + along;
  for (std::size_t i = seg; i + 1 < route.size(); ++i) {
    const double len = (route[i + 1] - route[i]).norm();
    if (remaining <= len) {
      target = route[i] + (remaining / len) * (route[i + 1] - route[i]);
      break;
    }
    remaining -= len;
  }

  Vec2 v_obj = config.k_p * (target - p_obj);
  if (v_obj.norm() > config.v_max) v_obj *= config.v_max / v_obj.norm();

  double heading = sc.start_pose.heading;
  if (sc.task_mode == TaskMode::kPush) {
    // A pushed box only moves along its own axis: steer it at the anchor and
    // push forward, never slower than the creep speed needed to turn it.
    const Vec2 to_target = target - p_obj;
    if (to_target.norm() > 1e-9) heading = std::atan2(to_target.y(), to_target.x());
  } else if (sc.heading_mode == HeadingMode::kTangent) {
    const Vec2 from = anchors.cursor > 0 ? anchors.anchors[anchors.cursor - 1] : anchors.origin;
    Vec2 dir = target - from;
    if (dir.norm() < 1e-9) dir = target - p_obj;
    heading = dir.norm() < 1e-9 ? pose.heading : std::atan2(dir.y(), dir.x());
  }
  heading += sc.heading_offset;
  const double error = wrap_angle(heading - pose.heading);
  const double omega =
      std::clamp(config.k_yaw * error, -config.yaw_rate_max, config.yaw_rate_max);
  if (sc.task_mode == TaskMode::kPush) {
    const double forward =
        std::max(config.push_creep, v_obj.norm() * std::max(0.0, std::cos(error)));
    v_obj = forward * Vec2(std::cos(pose.heading), std::sin(pose.heading));
  }

  const AgentState& a = state.agents[agent];
  const Vec2 r = a.position - p_obj;
  Vec2 v_station = v_obj + omega * Vec2(-r.y(), r.x());
  if (sc.task_mode == TaskMode::kPush) {
    // Pushers have no grip, so they servo back onto their station.
    v_station += config.k_station * (pose.transform(sc.stations[agent].position()) - a.position);
  }
  const Vec2 v_body = rotation(-a.yaw) * v_station;

  TaskSpaceCommand c = default_posture(sim, agent);
  const double facing = pose.heading + sc.stations[agent].heading;
  c.v_base = Vec3(v_body.x(), v_body.y(), omega + config.k_yaw * wrap_angle(facing - a.yaw));
  return c;
}

void validate(const RewardConfig& c) {
  if (!(c.alpha >= 0 && c.beta >= 0 && c.gamma_drop >= 0)) {
    throw Error("reward: alpha, beta and gamma_drop must be nonnegative");
  }
  if (!(c.delta > 0)) throw Error("reward: delta must be positive");
  if (!(c.capture_radius > 0)) throw Error("reward: capture_radius must be positive");
  for (double m : c.scaling) {
    if (!(m > 0) || !std::isfinite(m)) throw Error("reward: scaling entries must be positive");
  }
}

nlohmann::json to_json(const RewardConfig& c) {
  return {{"alpha", c.alpha},         {"beta", c.beta},
          {"gamma_drop", c.gamma_drop}, {"delta", c.delta},
          {"capture_radius", c.capture_radius}, {"scaling", c.scaling}};
}

RewardConfig reward_config_from_json(const nlohmann::json& j) {
  RewardConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.gamma_drop = j.value("gamma_drop", c.gamma_drop);
  c.delta = j.value("delta", c.delta);
  c.capture_radius = j.value("capture_radius", c.capture_radius);
  if (j.contains("scaling")) {
    const auto& s = j.at("scaling");
    if (!s.is_array() || s.size() != kActionDim) {
      throw Error("reward: scaling must have 11 entries");
    }
    for (int k = 0; k < kActionDim; ++k) c.scaling[k] = s[k].get<double>();
  }
  validate(c);
  return c;
}

TaskSpaceCommand residual_map(const PolicyAction& a, const TaskSpaceCommand& base,
                              const std::array<double, kActionDim>& m, const Simulator& sim,
                              int agent) {
  TaskSpaceCommand u = base;
  u.v_base.x() += m[ActionLayout::kVx] * a(ActionLayout::kVx);
  u.v_base.y() += m[ActionLayout::kVy] * a(ActionLayout::kVy);
  u.v_base.z() += m[ActionLayout::kYawRate] * a(ActionLayout::kYawRate);
  u.com_height += m[ActionLayout::kCom] * a(ActionLayout::kCom);
  u.torso_pitch += m[ActionLayout::kTorso] * a(ActionLayout::kTorso);
  for (int side = 0; side < 2; ++side) {
    const int off = side == 0 ? ActionLayout::kWristLeft : ActionLayout::kWristRight;
    for (int d = 0; d < 3; ++d) u.wrist[side](d) += m[off + d] * a(off + d);
  }
  return sim.clamp_command(agent, u);
}

double path_deviation(const AnchorTracker& tracker, const Vec2& p) {
  const auto line = tracker.polyline();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    best = std::min(best, point_segment_distance(p, {line[i], line[i + 1]}));
  }
  return line.size() == 1 ? (p - line[0]).norm() : best;
}

RewardTerms compute_reward(const WorldState& prev, const WorldState& next,
                           AnchorTracker& tracker, const RewardConfig& config, TaskMode mode) {
  RewardTerms t;
  const Vec2 p0 = prev.object.pose.position();
  const Vec2 p1 = next.object.pose.position();
  const Vec2 w = tracker.current();
  t.progress = (p0 - w).norm() - (p1 - w).norm();
  advance(tracker, p1, config.capture_radius);
  t.gated = path_deviation(tracker, p1) > config.delta;
  if (mode == TaskMode::kCarry) {
    const auto& z = next.object.corner_heights;
    const double mean = 0.25 * (z[0] + z[1] + z[2] + z[3]);
    for (double zj : z) t.tilt += std::abs(zj - mean);
  }
  t.terminal_drop = next.dropped && !prev.dropped;
  t.reward = (t.gated ? 0.0 : config.alpha * t.progress) - config.beta * t.tilt -
             (t.terminal_drop ? config.gamma_drop : 0.0);
  return t;
}

GlobalState global_state(const Simulator& sim, const WorldState& state,
                         const AnchorTracker& anchors, int step, int horizon) {
  GlobalState g;
  const ObjectState& o = state.object;
  const Vec2 p = o.pose.position();
  int at = 0;
  g(at++) = p.x();
  g(at++) = p.y();
  g(at++) = std::cos(o.pose.heading);
  g(at++) = std::sin(o.pose.heading);
  g(at++) = o.planar_velocity.x();
  g(at++) = o.planar_velocity.y();
  g(at++) = o.heading_rate;
  for (double z : o.corner_heights) g(at++) = z;
  for (int i = 0; i < 2; ++i) {
    const AgentState& a = state.agents[i];
    g(at++) = a.position.x() - p.x();
    g(at++) = a.position.y() - p.y();
    g(at++) = a.velocity.x();
    g(at++) = a.velocity.y();
    g(at++) = std::cos(a.yaw);
    g(at++) = std::sin(a.yaw);
    g(at++) = a.yaw_rate;
    g(at++) = a.com_height;
    g(at++) = a.torso_pitch;
    for (const auto& w : a.wrist_pos) {
      g(at++) = w.x() - p.x();
      g(at++) = w.y() - p.y();
      g(at++) = w.z();
    }
    g(at++) = state.contacts[2 * i] ? 1.0 : 0.0;
    g(at++) = state.contacts[2 * i + 1] ? 1.0 : 0.0;
  }
  if (anchors.anchors.empty()) {
    for (int k = 0; k < kTaskDim; ++k) g(at++) = 0.0;
  } else {
    for (const auto& w : anchor_window(anchors)) {
      g(at++) = w.x() - p.x();
      g(at++) = w.y() - p.y();
    }
  }
  const Vec2 goal = sim.scenario().goal.center - p;
  g(at++) = goal.x();
  g(at++) = goal.y();
  g(at++) = horizon > 0 ? static_cast<double>(step) / horizon : 0.0;
  return g;
}

namespace {

nlohmann::json field(const std::string& name, int offset, int size, const std::string& unit,
                     const std::string& frame) {
  return {{"name", name}, {"offset", offset}, {"size", size}, {"unit", unit}, {"frame", frame}};
}

}  // namespace

nlohmann::json observation_schema() {
  nlohmann::json frame = nlohmann::json::array();
  int at = 0;
  const auto add = [&](const std::string& name, int size, const std::string& unit,
                       const std::string& fr) {
    frame.push_back(field(name, at, size, unit, fr));
    at += size;
  };
  add("psi_task.anchor_window_minus_object_xy", kTaskDim, "m", "ego");
  add("psi_ego.position_minus_object_xy", 2, "m", "ego");
  add("psi_ego.velocity_xy", 2, "m/s", "ego");
  add("psi_ego.yaw_minus_object_heading", 1, "rad", "");
  add("psi_ego.com_height", 1, "m", "");
  add("psi_ego.torso_pitch", 1, "rad", "");
  add("psi_ego.wrist_offset_from_default_lr_xyz", 6, "m", "ego body");
  add("psi_ptn.position_minus_object_xy", 2, "m", "ego");
  add("psi_ptn.velocity_xy", 2, "m/s", "ego");
  add("psi_ptn.yaw_minus_ego_yaw", 1, "rad", "");
  add("psi_ptn.com_height", 1, "m", "");
  add("psi_ptn.torso_pitch", 1, "rad", "");
  add("psi_ptn.wrist_offset_from_default_lr_xyz", 6, "m", "partner body");
  add("psi_obj.corners_xyz", 12, "m", "ego (xy), world (z)");
  add("psi_obj.com_xyz", 3, "m", "ego (xy), world (z)");
  add("psi_obj.com_velocity_xy_heading_rate", 3, "m/s, rad/s", "ego");
  add("psi_cont.ego_lr_partner_lr", kContactDim, "bool", "");
  add("psi_env.rays", kRayCount, "1 - min(d, d_max)/d_max", "ego, fan from yaw");

  nlohmann::json stacked = nlohmann::json::array();
  stacked.push_back(field("frame_t", 0, kFrameDim, "", ""));
  for (int k = 0; k < kHistoryFrames; ++k) {
    stacked.push_back(field("compressed_frame_t-" + std::to_string(k + 1),
                            kFrameDim + k * kCompressedDim, kCompressedDim, "",
                            "frame prefix without psi_env"));
  }

  nlohmann::json action = nlohmann::json::array();
  const RewardConfig defaults;
  const char* names[kActionDim] = {"v_x",        "v_y",        "yaw_rate",   "com_height",
                                   "torso_pitch", "wrist_l_x",  "wrist_l_y",  "wrist_l_z",
                                   "wrist_r_x",  "wrist_r_y",  "wrist_r_z"};
  const char* units[kActionDim] = {"m/s", "m/s", "rad/s", "m", "rad", "m",
                                   "m",   "m",   "m",     "m", "m"};
  for (int k = 0; k < kActionDim; ++k) {
    action.push_back({{"name", names[k]},
                      {"offset", k},
                      {"unit", units[k]},
                      {"default_scaling", defaults.scaling[k]},
                      {"range", {-1.0, 1.0}}});
  }

  nlohmann::json critic = nlohmann::json::array();
  at = 0;
  const auto cadd = [&](const std::string& name, int size) {
    critic.push_back({{"name", name}, {"offset", at}, {"size", size}});
    at += size;
  };
  cadd("object.xy", 2);
  cadd("object.heading_cos_sin", 2);
  cadd("object.velocity_xy", 2);
  cadd("object.heading_rate", 1);
  cadd("object.corner_heights", 4);
  for (int i = 0; i < 2; ++i) {
    const std::string p = "agent" + std::to_string(i) + ".";
    cadd(p + "position_minus_object_xy", 2);
    cadd(p + "velocity_xy", 2);
    cadd(p + "yaw_cos_sin", 2);
    cadd(p + "yaw_rate", 1);
    cadd(p + "com_height", 1);
    cadd(p + "torso_pitch", 1);
    cadd(p + "wrists_minus_object_xy_and_z", 6);
    cadd(p + "contacts", 2);
  }
  cadd("anchor_window_minus_object_xy", kTaskDim);
  cadd("goal_minus_object_xy", 2);
  cadd("time_fraction", 1);
  cadd("joint_action.agent0", kActionDim);
  cadd("joint_action.agent1", kActionDim);

  return {{"schema", "obs_v1"},
          {"frame_dim", kFrameDim},
          {"compressed_dim", kCompressedDim},
          {"observation_dim", kObsDim},
          {"action_dim", kActionDim},
          {"critic_input_dim", kCriticInputDim},
          {"frame", frame},
          {"observation", stacked},
          {"action", action},
          {"critic_input", critic}};
}

nlohmann::json to_json(const EnvConfig& c) {
  return {{"sim",
           {{"f_low", c.sim.f_low},
            {"f_high", c.sim.f_high},
            {"tau_track", c.sim.tau_track},
            {"r_break", c.sim.r_break},
            {"z_min", c.sim.z_min},
            {"push_band", c.sim.push_band}}},
          {"cognition",
           {{"grid_size", c.cognition.grid_size},
            {"spacing", c.cognition.spacing},
            {"merge_radius", c.cognition.merge_radius}}},
          {"observation", {{"ray_max", c.observation.ray_max}}},
          {"reward", to_json(c.reward)},
          {"nominal",
           {{"k_p", c.nominal.k_p},
            {"v_max", c.nominal.v_max},
            {"k_yaw", c.nominal.k_yaw},
            {"yaw_rate_max", c.nominal.yaw_rate_max},
            {"k_station", c.nominal.k_station},
            {"push_creep", c.nominal.push_creep},
            {"lookahead", c.nominal.lookahead}}},
          {"use_cognition", c.use_cognition},
          {"horizon", c.horizon}};
}

EnvConfig env_config_from_json(const nlohmann::json& j) {
  EnvConfig c;
  if (j.contains("sim")) {
    const auto& s = j.at("sim");
    c.sim.f_low = s.value("f_low", c.sim.f_low);
    c.sim.f_high = s.value("f_high", c.sim.f_high);
    c.sim.tau_track = s.value("tau_track", c.sim.tau_track);
    c.sim.r_break = s.value("r_break", c.sim.r_break);
    c.sim.z_min = s.value("z_min", c.sim.z_min);
    c.sim.push_band = s.value("push_band", c.sim.push_band);
    c.sim.substeps();
  }
  if (j.contains("cognition")) {
    const auto& s = j.at("cognition");
    c.cognition.grid_size = s.value("grid_size", c.cognition.grid_size);
    c.cognition.spacing = s.value("spacing", c.cognition.spacing);
    c.cognition.merge_radius = s.value("merge_radius", c.cognition.merge_radius);
  }
  if (j.contains("observation")) {
    c.observation.ray_max = j.at("observation").value("ray_max", c.observation.ray_max);
    if (!(c.observation.ray_max > 0)) throw Error("observation: ray_max must be positive");
  }
  if (j.contains("reward")) c.reward = reward_config_from_json(j.at("reward"));
  if (j.contains("nominal")) {
    const auto& s = j.at("nominal");
    c.nominal.k_p = s.value("k_p", c.nominal.k_p);
    c.nominal.v_max = s.value("v_max", c.nominal.v_max);
    c.nominal.k_yaw = s.value("k_yaw", c.nominal.k_yaw);
    c.nominal.yaw_rate_max = s.value("yaw_rate_max", c.nominal.yaw_rate_max);
    c.nominal.k_station = s.value("k_station", c.nominal.k_station);
    c.nominal.push_creep = s.value("push_creep", c.nominal.push_creep);
    c.nominal.lookahead = s.value("lookahead", c.nominal.lookahead);
  }
  c.use_cognition = j.value("use_cognition", c.use_cognition);
  c.horizon = j.value("horizon", c.horizon);
  return c;
}

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::kRunning: return "running";
    case Outcome::kGoal: return "goal";
    case Outcome::kDrop: return "drop";
    case Outcome::kTimeout: return "timeout";
  }
  return "unknown";
}

TransportEnv::TransportEnv(Scenario scenario, EnvConfig config)
    : sim_(std::move(scenario), config.sim),
      config_(std::move(config)),
      horizon_(config_.horizon > 0 ? config_.horizon : sim_.scenario().episode_horizon) {
  validate(config_.reward);
}

Frame TransportEnv::frame(int agent) const {
  Frame f = build_frame(sim_, state_, agent, tracker_, config_.observation);
  if (!config_.use_cognition) f.segment<kTaskDim>(FrameLayout::kTask).setZero();
  return f;
}

std::array<StackedObservation, 2> TransportEnv::observations() const {
  return {stack(frame(0), history_[0]), stack(frame(1), history_[1])};
}

std::array<StackedObservation, 2> TransportEnv::reset(std::uint64_t seed) {
  state_ = sim_.reset(seed);
  steps_ = 0;
  const Vec2 origin = state_.object.pose.position();
  if (config_.use_cognition) {
    tracker_ = make_tracker(plan_anchors(sim_.scenario(), state_, config_.cognition), origin,
                            config_.reward.capture_radius);
  } else {
    tracker_ = make_tracker(AnchorSequence{{sim_.scenario().goal.center}, 1.0}, origin,
                            config_.reward.capture_radius);
  }
  history_[0].clear();
  history_[1].clear();
  return observations();
}

JointCommand TransportEnv::commands(const JointAction& actions) const {
  JointCommand out;
  for (int i = 0; i < 2; ++i) {
    if (!actions[i].allFinite()) throw Error("env: non-finite action");
    const TaskSpaceCommand base = config_.use_cognition
                                      ? nominal_controller(sim_, state_, i, tracker_,
                                                           config_.nominal)
                                      : hold_command(sim_, state_, i);
    out[i] = residual_map(actions[i], base, config_.reward.scaling, sim_, i);
  }
  return out;
}

EnvStep TransportEnv::step(const JointAction& actions) {
  if (steps_ >= horizon_) throw Error("env: step after episode end");
  const JointCommand cmds = commands(actions);
  const Frame f0 = frame(0);
  const Frame f1 = frame(1);
  StepResult r = sim_.step(state_, cmds);
  EnvStep out;
  out.terms = compute_reward(state_, r.state, tracker_, config_.reward,
                             sim_.scenario().task_mode);
  out.rewards = {out.terms.reward, out.terms.reward};
  out.events = r.events;
  state_ = r.state;
  ++steps_;
  push_history(history_[0], f0);
  push_history(history_[1], f1);
  out.obs = observations();
  if (state_.dropped) {
    out.outcome = Outcome::kDrop;
  } else if (sim_.detect_goal(state_)) {
    out.outcome = Outcome::kGoal;
  } else if (steps_ >= horizon_) {
    out.outcome = Outcome::kTimeout;
  }
  return out;
}

GlobalState TransportEnv::global_state() const {
  return tandem::global_state(sim_, state_, tracker_, steps_, horizon_);
}

namespace {

nlohmann::json vector_json(const auto& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

nlohmann::json TransportEnv::save() const {
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& a : tracker_.anchors) anchors.push_back({a.x(), a.y()});
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : history_) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : h) frames.push_back(vector_json(f));
    hist.push_back(frames);
  }
  return {{"state", to_json(state_)},
          {"tracker",
           {{"origin", {tracker_.origin.x(), tracker_.origin.y()}},
            {"anchors", anchors},
            {"cursor", tracker_.cursor}}},
          {"history", hist},
          {"steps", steps_}};
}

void TransportEnv::load(const nlohmann::json& j) {
  state_ = world_state_from_json(j.at("state"));
  const auto& t = j.at("tracker");
  tracker_.origin = {t.at("origin").at(0).get<double>(), t.at("origin").at(1).get<double>()};
  tracker_.anchors.clear();
  for (const auto& a : t.at("anchors")) {
    tracker_.anchors.emplace_back(a.at(0).get<double>(), a.at(1).get<double>());
  }
  tracker_.cursor = t.at("cursor").get<int>();
  for (int i = 0; i < 2; ++i) {
    history_[i].clear();
    for (const auto& f : j.at("history").at(i)) {
      const auto v = f.get<std::vector<double>>();
      if (v.size() != kCompressedDim) throw Error("env: bad history frame size");
      history_[i].push_back(Eigen::Map<const CompressedFrame>(v.data()));
    }
  }
  steps_ = j.at("steps").get<int>();
}

}  // namespace tandem
