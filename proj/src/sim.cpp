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

#include "tandem/sim.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "tandem/error.hpp"

namespace tandem {

namespace {

bool finite(const TaskSpaceCommand& c) {
  bool ok = c.v_base.allFinite() && std::isfinite(c.com_height) &&
            std::isfinite(c.torso_pitch);
  for (const auto& w : c.wrist) ok = ok && w.allFinite();
  return ok;
}

// Inward normal of the box face nearest to the local point.
Vec2 inward_normal(const OrientedBox& box, const Vec2& world) {
  const Vec2 l = box.pose.inverse_transform(world);
  const Vec2 h = box.half_extents;
  Vec2 outward;
  if (std::abs(l.x()) / h.x() >= std::abs(l.y()) / h.y()) {
    outward = Vec2(l.x() >= 0.0 ? 1.0 : -1.0, 0.0);
  } else {
    outward = Vec2(0.0, l.y() >= 0.0 ? 1.0 : -1.0);
  }
  return -(rotation(box.pose.heading) * outward);
}

double box_boundary_distance(const OrientedBox& box, const Vec2& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : box.edges()) best = std::min(best, point_segment_distance(p, e));
  return best;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

template <int N>
bool same_bits(const Eigen::Matrix<double, N, 1>& a, const Eigen::Matrix<double, N, 1>& b) {
  for (int i = 0; i < N; ++i) {
    if (!same_bits(a[i], b[i])) return false;
  }
  return true;
}

}  // namespace

int SimConfig::substeps() const {
  const double n = f_high / f_low;
  const auto rounded = static_cast<int>(std::lround(n));
  if (rounded < 1 || std::abs(n - rounded) > 1e-9) {
    throw Error("sim: f_high must be an integer multiple of f_low");
  }
  return rounded;
}

bool bitwise_equal(const WorldState& a, const WorldState& b) {
  if (!same_bits(a.time, b.time) || a.dropped != b.dropped || a.contacts != b.contacts) {
    return false;
  }
  for (int i = 0; i < 2; ++i) {
    const auto& x = a.agents[i];
    const auto& y = b.agents[i];
    if (!same_bits<2>(x.position, y.position) || !same_bits<2>(x.velocity, y.velocity) ||
        !same_bits(x.yaw, y.yaw) || !same_bits(x.yaw_rate, y.yaw_rate) ||
        !same_bits(x.com_height, y.com_height) || !same_bits(x.torso_pitch, y.torso_pitch) ||
        !same_bits<3>(x.wrist_pos[0], y.wrist_pos[0]) ||
        !same_bits<3>(x.wrist_pos[1], y.wrist_pos[1]) || x.embodiment_id != y.embodiment_id) {
      return false;
    }
  }
  const auto& o = a.object;
  const auto& p = b.object;
  if (!same_bits(o.pose.x, p.pose.x) || !same_bits(o.pose.y, p.pose.y) ||
      !same_bits(o.pose.heading, p.pose.heading) ||
      !same_bits<2>(o.planar_velocity, p.planar_velocity) ||
      !same_bits(o.heading_rate, p.heading_rate) || !same_bits(o.com_height, p.com_height)) {
    return false;
  }
  for (int j = 0; j < 4; ++j) {
    if (!same_bits(o.corner_heights[j], p.corner_heights[j])) return false;
  }
  return true;
}

Simulator::Simulator(Scenario scenario, SimConfig config)
    : scenario_(std::move(scenario)), config_(config), walls_(scenario_.wall_segments()) {
  config_.substeps();
  for (int i = 0; i < 2; ++i) {
    const Pose2& station = scenario_.stations[i];
    const double z = scenario_.object.grip_height - scenario_.embodiments[i].com_default;
    for (int side = 0; side < 2; ++side) {
      const Vec2 body = rotation(-station.heading) *
                        (scenario_.object.handles[2 * i + side] - station.position());
      default_wrists_[i][side] = Vec3(body.x(), body.y(), z);
    }
  }
}

Pose2 Simulator::reset_pose(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int attempt = 0; attempt < 16; ++attempt) {
    Pose2 p = scenario_.start_pose;
    p.x += scenario_.start_jitter_position * unit(rng);
    p.y += scenario_.start_jitter_position * unit(rng);
    p.heading += scenario_.start_jitter_heading * unit(rng);
    const OrientedBox box = scenario_.object_box(p);
    bool clear = true;
    for (const auto& w : walls_) clear = clear && !box.intersects(w);
    if (clear) return p;
  }
  return scenario_.start_pose;
}

WorldState Simulator::reset(std::uint64_t seed) const {
  WorldState s;
  const Pose2 pose = reset_pose(seed);
  s.object.pose = pose;
  for (int i = 0; i < 2; ++i) {
    AgentState& a = s.agents[i];
    const Pose2& station = scenario_.stations[i];
    a.position = pose.transform(station.position());
    a.yaw = wrap_angle(pose.heading + station.heading);
    a.com_height = scenario_.embodiments[i].com_default;
    a.embodiment_id = i;
    TaskSpaceCommand nominal;
    nominal.com_height = a.com_height;
    nominal.wrist = default_wrists_[i];
    for (int side = 0; side < 2; ++side) {
      a.wrist_pos[side] = wrist_target_world(a, nominal, side);
    }
  }
  if (scenario_.task_mode == TaskMode::kCarry) {
    const auto handles = realized_handles(pose);
    for (int k = 0; k < 4; ++k) {
      Vec3& w = s.agents[k / 2].wrist_pos[k % 2];
      w.x() = handles[k].x();
      w.y() = handles[k].y();
      s.contacts[k] = true;
    }
  } else {
    update_push_contacts(s);
  }
  update_heights(s);
  return s;
}

std::array<Vec2, 4> Simulator::realized_handles(const Pose2& pose) const {
  std::array<Vec2, 4> out;
  for (int k = 0; k < 4; ++k) out[k] = pose.transform(scenario_.object.handles[k]);
  return out;
}

TaskSpaceCommand Simulator::clamp_command(int agent, const TaskSpaceCommand& cmd) const {
  const Embodiment& e = scenario_.embodiments[agent];
  TaskSpaceCommand c = cmd;
  c.v_base.x() = std::clamp(c.v_base.x(), -e.max_vx, e.max_vx);
  c.v_base.y() = std::clamp(c.v_base.y(), -e.max_vy, e.max_vy);
  c.v_base.z() = std::clamp(c.v_base.z(), -e.max_yaw_rate, e.max_yaw_rate);
  c.com_height = std::clamp(c.com_height, e.com_min, e.com_max);
  c.torso_pitch = std::clamp(c.torso_pitch, -e.max_torso_pitch, e.max_torso_pitch);
  for (int side = 0; side < 2; ++side) {
    const Vec3 shoulder(0.0, side == 0 ? config_.shoulder_half_width
                                       : -config_.shoulder_half_width,
                        config_.shoulder_above_com);
    const Vec3 d = c.wrist[side] - shoulder;
    if (d.norm() > e.wrist_workspace_radius) {
      c.wrist[side] = shoulder + d * (e.wrist_workspace_radius / d.norm());
    }
  }
  return c;
}

Vec3 Simulator::wrist_target_world(const AgentState& agent, const TaskSpaceCommand& cmd,
                                   int side) const {
  const Embodiment& e = scenario_.embodiments[agent.embodiment_id];
  const double lt = config_.torso_length;
  Vec3 body = cmd.wrist[side];
  body.x() += lt * std::sin(agent.torso_pitch);
  body.z() -= lt * (1.0 - std::cos(agent.torso_pitch));
  const Vec3 shoulder(0.0, side == 0 ? config_.shoulder_half_width
                                     : -config_.shoulder_half_width,
                      config_.shoulder_above_com);
  const Vec3 d = body - shoulder;
  if (d.norm() > e.wrist_workspace_radius) {
    body = shoulder + d * (e.wrist_workspace_radius / d.norm());
  }
  const Vec2 xy = agent.position + rotation(agent.yaw) * Vec2(body.x(), body.y());
  return {xy.x(), xy.y(), agent.com_height + body.z()};
}

void Simulator::resolve_collisions(AgentState& agent, double radius,
                                   const std::vector<Segment>& obstacles) const {
  for (int pass = 0; pass < 3; ++pass) {
    bool moved = false;
    for (const auto& seg : obstacles) {
      const Vec2 d = seg.b - seg.a;
      const double len2 = d.squaredNorm();
      const double t =
          len2 > 0.0 ? std::clamp((agent.position - seg.a).dot(d) / len2, 0.0, 1.0) : 0.0;
      const Vec2 closest = seg.a + t * d;
      const Vec2 away = agent.position - closest;
      const double dist = away.norm();
      if (dist >= radius || dist == 0.0) continue;
      const Vec2 n = away / dist;
      agent.position = closest + radius * n;
      const double into = agent.velocity.dot(n);
      if (into < 0.0) agent.velocity -= into * n;
      moved = true;
    }
    if (!moved) break;
  }
}

void Simulator::update_heights(WorldState& s) const {
  ObjectState& o = s.object;
  if (scenario_.task_mode == TaskMode::kPush) {
    o.corner_heights.fill(scenario_.object.rest_height);
    o.com_height = scenario_.object.rest_height;
    return;
  }
  if (s.dropped) return;
  const Vec3 g0 = 0.5 * (s.agents[0].wrist_pos[0] + s.agents[0].wrist_pos[1]);
  const Vec3 g1 = 0.5 * (s.agents[1].wrist_pos[0] + s.agents[1].wrist_pos[1]);
  const Vec2 base(g0.x(), g0.y());
  const Vec2 axis = Vec2(g1.x(), g1.y()) - base;
  const double len2 = axis.squaredNorm();
  const auto height = [&](const Vec2& p) {
    if (len2 == 0.0) return 0.5 * (g0.z() + g1.z());
    const double t = (p - base).dot(axis) / len2;
    return g0.z() + t * (g1.z() - g0.z());
  };
  const auto corners = scenario_.object_box(o.pose).corners();
  for (int j = 0; j < 4; ++j) o.corner_heights[j] = height(corners[j]);
  o.com_height = height(o.pose.position());
}

double Simulator::tilt_angle(const WorldState& s) const {
  if (scenario_.task_mode == TaskMode::kPush) return 0.0;
  const Vec3 g0 = 0.5 * (s.agents[0].wrist_pos[0] + s.agents[0].wrist_pos[1]);
  const Vec3 g1 = 0.5 * (s.agents[1].wrist_pos[0] + s.agents[1].wrist_pos[1]);
  const double horizontal = Vec2(g1.x() - g0.x(), g1.y() - g0.y()).norm();
  return std::atan2(std::abs(g1.z() - g0.z()), horizontal);
}

void Simulator::update_push_contacts(WorldState& s) const {
  const OrientedBox box = scenario_.object_box(s.object.pose);
  for (int k = 0; k < 4; ++k) {
    const Vec3& w = s.agents[k / 2].wrist_pos[k % 2];
    const Vec2 p(w.x(), w.y());
    s.contacts[k] = box.contains(p) || box_boundary_distance(box, p) <= config_.push_band;
  }
}

WorldState Simulator::substep(const WorldState& state, const JointCommand& commands,
                              StepEvents& events) const {
  const double dt = config_.dt_high();
  const double lag = std::exp(-dt / config_.tau_track);
  WorldState s = state;
  JointCommand cmd;
  for (int i = 0; i < 2; ++i) {
    if (!finite(commands[i])) throw Error("sim: non-finite command");
    cmd[i] = clamp_command(i, commands[i]);
  }

  for (int i = 0; i < 2; ++i) {
    AgentState& a = s.agents[i];
    const Embodiment& e = scenario_.embodiments[i];
    a.yaw_rate = cmd[i].v_base.z() + (a.yaw_rate - cmd[i].v_base.z()) * lag;
    a.yaw = wrap_angle(a.yaw + a.yaw_rate * dt);
    const Vec2 target = rotation(a.yaw) * Vec2(cmd[i].v_base.x(), cmd[i].v_base.y());
    a.velocity = target + (a.velocity - target) * lag;
    Vec2 body = rotation(-a.yaw) * a.velocity;
    body.x() = std::clamp(body.x(), -e.max_vx, e.max_vx);
    body.y() = std::clamp(body.y(), -e.max_vy, e.max_vy);
    a.velocity = rotation(a.yaw) * body;
    a.com_height = cmd[i].com_height + (a.com_height - cmd[i].com_height) * lag;
    a.torso_pitch = cmd[i].torso_pitch + (a.torso_pitch - cmd[i].torso_pitch) * lag;
    a.position += a.velocity * dt;
    const Vec2 before = a.position;
    resolve_collisions(a, e.body_radius, walls_);
    if (a.position != before) events.wall_hit = true;
  }

  std::array<Vec3, 4> targets;
  for (int k = 0; k < 4; ++k) {
    targets[k] = wrist_target_world(s.agents[k / 2], cmd[k / 2], k % 2);
  }

  ObjectState& o = s.object;
  if (scenario_.task_mode == TaskMode::kCarry) {
    if (s.dropped) {
      for (int k = 0; k < 4; ++k) s.agents[k / 2].wrist_pos[k % 2] = targets[k];
    } else {
      // Least-squares SE(2) fit of the handle points onto the wrist targets.
      Vec2 hc = Vec2::Zero();
      Vec2 wc = Vec2::Zero();
      for (int k = 0; k < 4; ++k) {
        hc += scenario_.object.handles[k];
        wc += Vec2(targets[k].x(), targets[k].y());
      }
      hc /= 4.0;
      wc /= 4.0;
      double sin_sum = 0.0;
      double cos_sum = 0.0;
      for (int k = 0; k < 4; ++k) {
        const Vec2 h = scenario_.object.handles[k] - hc;
        const Vec2 w = Vec2(targets[k].x(), targets[k].y()) - wc;
        sin_sum += cross(h, w);
        cos_sum += h.dot(w);
      }
      const double heading = std::atan2(sin_sum, cos_sum);
      const Vec2 position = wc - rotation(heading) * hc;
      const Pose2 previous = o.pose;
      o.pose = {position.x(), position.y(), wrap_angle(heading)};
      o.planar_velocity = (o.pose.position() - previous.position()) / dt;
      o.heading_rate = wrap_angle(o.pose.heading - previous.heading) / dt;

      const auto handles = realized_handles(o.pose);
      bool broken = false;
      for (int k = 0; k < 4; ++k) {
        Vec3& wrist = s.agents[k / 2].wrist_pos[k % 2];
        const Vec2 t(targets[k].x(), targets[k].y());
        if ((t - handles[k]).norm() > config_.r_break) {
          broken = true;
          s.contacts[k] = false;
          wrist = targets[k];
        } else {
          wrist = Vec3(handles[k].x(), handles[k].y(), targets[k].z());
        }
      }
      update_heights(s);
      if (broken || o.com_height < config_.z_min) {
        s.dropped = true;
        s.contacts.fill(false);
        o.planar_velocity.setZero();
        o.heading_rate = 0.0;
        events.drop = true;
      }
    }
  } else {
    for (int k = 0; k < 4; ++k) s.agents[k / 2].wrist_pos[k % 2] = targets[k];
    update_push_contacts(s);
    const OrientedBox box = scenario_.object_box(o.pose);
    Vec2 push = Vec2::Zero();
    double torque = 0.0;
    int pushing = 0;
    for (int i = 0; i < 2; ++i) {
      const bool left = s.contacts[2 * i];
      const bool right = s.contacts[2 * i + 1];
      if (!left && !right) continue;
      Vec2 point = Vec2::Zero();
      int n = 0;
      for (int side = 0; side < 2; ++side) {
        if (s.contacts[2 * i + side]) {
          point += s.agents[i].wrist_pos[side].head<2>();
          ++n;
        }
      }
      point /= n;
      const Vec2 normal = inward_normal(box, point);
      const double speed = std::max(0.0, s.agents[i].velocity.dot(normal));
      push += speed * normal;
      torque += cross(point - o.pose.position(), speed * normal);
      ++pushing;
    }
    const double rot_decay = std::exp(-config_.angular_damping * dt);
    if (pushing > 0) {
      o.planar_velocity = push / pushing;
      o.heading_rate = o.heading_rate * rot_decay + config_.torque_gain * torque * dt;
    } else {
      o.planar_velocity *= std::exp(-config_.linear_damping * dt);
      o.heading_rate *= rot_decay;
    }
    Pose2 next = o.pose;
    next.x += o.planar_velocity.x() * dt;
    next.y += o.planar_velocity.y() * dt;
    next.heading = wrap_angle(next.heading + o.heading_rate * dt);
    const OrientedBox moved = scenario_.object_box(next);
    bool blocked = false;
    for (const auto& w : walls_) blocked = blocked || moved.intersects(w);
    if (blocked) {
      o.planar_velocity.setZero();
      o.heading_rate = 0.0;
      events.wall_hit = true;
    } else {
      o.pose = next;
    }
    const auto edges = scenario_.object_box(o.pose).edges();
    const std::vector<Segment> obstacle(edges.begin(), edges.end());
    for (int i = 0; i < 2; ++i) {
      resolve_collisions(s.agents[i], scenario_.embodiments[i].body_radius, obstacle);
      for (int side = 0; side < 2; ++side) {
        s.agents[i].wrist_pos[side] = wrist_target_world(s.agents[i], cmd[i], side);
      }
    }
    update_push_contacts(s);
    update_heights(s);
  }
  s.time = state.time + dt;
  return s;
}

StepResult Simulator::step(const WorldState& state, const JointCommand& commands) const {
  for (const auto& c : commands) {
    if (!finite(c)) throw Error("sim: non-finite command");
  }
  StepResult out{state, {}};
  const bool was_in_goal = detect_goal(state);
  const int n = config_.substeps();
  for (int k = 0; k < n; ++k) out.state = substep(out.state, commands, out.events);
  out.events.goal_entry = !was_in_goal && detect_goal(out.state);
  return out;
}

std::vector<double> Simulator::raycast(const WorldState& state, int agent, int n_rays,
                                       double d_max) const {
  if (n_rays < 1) throw Error("raycast: n_rays must be >= 1");
  const AgentState& a = state.agents[agent];
  const auto edges = scenario_.object_box(state.object.pose).edges();
  std::vector<double> out(n_rays, d_max);
  const double step = 2.0 * kPi / n_rays;
  for (int k = 0; k < n_rays; ++k) {
    const double angle = a.yaw + step * k;
    const Vec2 dir(std::cos(angle), std::sin(angle));
    double best = d_max;
    for (const auto& w : walls_) {
      if (auto t = ray_segment_hit(a.position, dir, w)) best = std::min(best, *t);
    }
    for (const auto& e : edges) {
      if (auto t = ray_segment_hit(a.position, dir, e)) best = std::min(best, *t);
    }
    out[k] = std::max(0.0, best);
  }
  return out;
}

bool Simulator::detect_goal(const WorldState& state) const {
  return !state.dropped && scenario_.goal.contains(state.object.pose.position());
}

namespace {

nlohmann::json vec(const auto& v) {
  nlohmann::json out = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

template <int N>
Eigen::Matrix<double, N, 1> vec_from(const nlohmann::json& j) {
  Eigen::Matrix<double, N, 1> v;
  if (!j.is_array() || j.size() != N) throw Error("replay: malformed vector");
  for (int i = 0; i < N; ++i) v[i] = j[i].get<double>();
  return v;
}

}  // namespace

nlohmann::json to_json(const WorldState& s) {
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : s.agents) {
    agents.push_back({{"position", vec(a.position)},
                      {"velocity", vec(a.velocity)},
                      {"yaw", a.yaw},
                      {"yaw_rate", a.yaw_rate},
                      {"com_height", a.com_height},
                      {"torso_pitch", a.torso_pitch},
                      {"wrist_pos", {vec(a.wrist_pos[0]), vec(a.wrist_pos[1])}},
                      {"embodiment_id", a.embodiment_id}});
  }
  const auto& o = s.object;
  return {{"time", s.time},
          {"agents", agents},
          {"object",
           {{"pose", {o.pose.x, o.pose.y, o.pose.heading}},
            {"planar_velocity", vec(o.planar_velocity)},
            {"heading_rate", o.heading_rate},
            {"corner_heights", o.corner_heights},
            {"com_height", o.com_height}}},
          {"contacts", s.contacts},
          {"dropped", s.dropped}};
}

WorldState world_state_from_json(const nlohmann::json& j) {
  try {
    WorldState s;
    s.time = j.at("time").get<double>();
    for (int i = 0; i < 2; ++i) {
      const auto& a = j.at("agents").at(i);
      AgentState& out = s.agents[i];
      out.position = vec_from<2>(a.at("position"));
      out.velocity = vec_from<2>(a.at("velocity"));
      out.yaw = a.at("yaw").get<double>();
      out.yaw_rate = a.at("yaw_rate").get<double>();
      out.com_height = a.at("com_height").get<double>();
      out.torso_pitch = a.at("torso_pitch").get<double>();
      out.wrist_pos[0] = vec_from<3>(a.at("wrist_pos").at(0));
      out.wrist_pos[1] = vec_from<3>(a.at("wrist_pos").at(1));
      out.embodiment_id = a.at("embodiment_id").get<int>();
    }
    const auto& o = j.at("object");
    const auto& p = o.at("pose");
    s.object.pose = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
    s.object.planar_velocity = vec_from<2>(o.at("planar_velocity"));
    s.object.heading_rate = o.at("heading_rate").get<double>();
    s.object.corner_heights = o.at("corner_heights").get<std::array<double, 4>>();
    s.object.com_height = o.at("com_height").get<double>();
    s.contacts = j.at("contacts").get<std::array<bool, 4>>();
    s.dropped = j.at("dropped").get<bool>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("replay: malformed world_state: ") + e.what());
  }
}

nlohmann::json to_json(const TaskSpaceCommand& c) {
  return {{"v_base", vec(c.v_base)},
          {"com_height", c.com_height},
          {"torso_pitch", c.torso_pitch},
          {"wrist", {vec(c.wrist[0]), vec(c.wrist[1])}}};
}

TaskSpaceCommand command_from_json(const nlohmann::json& j) {
  try {
    TaskSpaceCommand c;
    c.v_base = vec_from<3>(j.at("v_base"));
    c.com_height = j.at("com_height").get<double>();
    c.torso_pitch = j.at("torso_pitch").get<double>();
    c.wrist[0] = vec_from<3>(j.at("wrist").at(0));
    c.wrist[1] = vec_from<3>(j.at("wrist").at(1));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("replay: malformed command: ") + e.what());
  }
}

nlohmann::json to_json(const StepEvents& e) {
  return {{"drop", e.drop}, {"wall_hit", e.wall_hit}, {"goal_entry", e.goal_entry}};
}

}  // namespace tandem
