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

// Builtin maps for the nine-scenario matrix plus a toy corridor.
//
// Geometry is authored for this testbed: the three categories are
//   OSP (S11-S13): two agents push a box from behind,
//   SCT (S21-S23): a 1.2 m table carried end-to-end through confined space,
//   SLH (S31-S33): a 2.4 m beam carried end-to-end.
// In every S-map agent 0 is the robot and agent 1 the human partner; the
// human walks faster than the robot can, so the nominal controller alone
// lets the grip separate. The corridor pairs two identical robots.

#include <map>

#include "tandem/scenario.hpp"

namespace tandem {

namespace {

Embodiment robot() {
  Embodiment e;
  e.name = "humanoid_robot";
  e.max_vx = 0.35;
  e.max_vy = 0.25;
  e.max_yaw_rate = 0.8;
  e.com_min = 0.55;
  e.com_max = 0.8;
  e.com_default = 0.7;
  e.max_torso_pitch = 0.4;
  e.wrist_workspace_radius = 0.65;
  e.body_radius = 0.25;
  return e;
}

Embodiment human() {
  Embodiment e;
  e.name = "human_partner";
  e.max_vx = 0.5;
  e.max_vy = 0.35;
  e.max_yaw_rate = 1.0;
  e.com_min = 0.8;
  e.com_max = 1.05;
  e.com_default = 0.95;
  e.max_torso_pitch = 0.5;
  e.wrist_workspace_radius = 0.75;
  e.body_radius = 0.25;
  return e;
}

Embodiment fast_robot() {
  Embodiment e = robot();
  e.name = "humanoid_robot_fast";
  e.max_vx = 0.5;
  e.max_vy = 0.35;
  return e;
}

// Box pushed from behind by two agents standing side by side.
void push_box(Scenario& s) {
  s.task_mode = TaskMode::kPush;
  s.object.extents = {0.8, 1.0};
  s.object.handles = {Vec2(-0.4, 0.42), Vec2(-0.4, 0.18), Vec2(-0.4, -0.18),
                      Vec2(-0.4, -0.42)};
  s.object.grip_height = 0.8;
  s.object.rest_height = 0.4;
  s.stations = {Pose2{-0.7, 0.3, 0.0}, Pose2{-0.7, -0.3, 0.0}};
}

// End-to-end carry: agents face each other across the payload.
void carry(Scenario& s, double length, double width, double grip_half_width) {
  s.task_mode = TaskMode::kCarry;
  const double h = 0.5 * length;
  s.object.extents = {length, width};
  s.object.handles = {Vec2(-h, grip_half_width), Vec2(-h, -grip_half_width),
                      Vec2(h, -grip_half_width), Vec2(h, grip_half_width)};
  s.object.grip_height = 0.8;
  s.object.rest_height = 0.4;
  s.stations = {Pose2{-h - 0.35, 0.0, 0.0}, Pose2{h + 0.35, 0.0, kPi}};
}

std::vector<Vec2> box_outline(double x0, double y0, double x1, double y1) {
  return {Vec2(x0, y0), Vec2(x1, y0), Vec2(x1, y1), Vec2(x0, y1), Vec2(x0, y0)};
}

Scenario make(const std::string& id) {
  Scenario s;
  s.id = id;
  s.embodiments = {robot(), human()};
  if (id == "corridor") {
    s.description = "Straight 5 m free corridor, matched robots, carry";
    carry(s, 1.2, 0.5, 0.2);
    s.embodiments = {fast_robot(), fast_robot()};
    s.walls = {{Vec2(-1.0, 0.0), Vec2(8.5, 0.0)}, {Vec2(-1.0, 2.4), Vec2(8.5, 2.4)}};
    s.start_pose = {1.5, 1.2, 0.0};
    s.goal = {Vec2(6.5, 1.2), 0.5};
    s.episode_horizon = 80;
  } else if (id == "S11") {
    s.description = "OSP alignment: push the box straight into a walled bay";
    push_box(s);
    s.walls = {{Vec2(-0.5, -0.5), Vec2(8.5, -0.5), Vec2(8.5, 3.5), Vec2(-0.5, 3.5),
                Vec2(-0.5, -0.5)},
               {Vec2(5.5, -0.5), Vec2(5.5, 0.75)},
               {Vec2(5.5, 2.25), Vec2(5.5, 3.5)}};
    s.start_pose = {1.2, 1.5, 0.2};
    s.goal = {Vec2(7.2, 1.5), 0.5};
    s.episode_horizon = 100;
  } else if (id == "S12") {
    s.description = "OSP turnaround: push around a divider and come back";
    push_box(s);
    s.walls = {box_outline(0.0, 0.0, 9.0, 6.0), {Vec2(0.0, 3.0), Vec2(5.5, 3.0)}};
    s.start_pose = {1.5, 1.5, 0.0};
    s.goal = {Vec2(1.8, 4.5), 0.6};
    s.episode_horizon = 200;
  } else if (id == "S13") {
    s.description = "OSP corner entry: push into a side corridor";
    push_box(s);
    s.walls = {{Vec2(0.0, 0.0), Vec2(9.0, 0.0), Vec2(9.0, 8.0)},
               {Vec2(0.0, 0.0), Vec2(0.0, 3.0), Vec2(6.0, 3.0), Vec2(6.0, 8.0)}};
    s.start_pose = {1.5, 1.5, 0.0};
    s.goal = {Vec2(7.5, 6.5), 0.6};
    s.episode_horizon = 160;
  } else if (id == "S21") {
    s.description = "SCT narrow gate: 1.2 m gap in a dividing wall";
    carry(s, 1.2, 0.5, 0.2);
    s.walls = {box_outline(0.0, 0.0, 9.0, 4.0),
               {Vec2(4.5, 0.0), Vec2(4.5, 1.4)},
               {Vec2(4.5, 2.6), Vec2(4.5, 4.0)}};
    s.start_pose = {1.8, 1.2, 0.0};
    s.goal = {Vec2(7.4, 2.6), 0.5};
    s.episode_horizon = 120;
  } else if (id == "S22") {
    s.description = "SCT S-shaped path between two offset dividers";
    carry(s, 1.2, 0.5, 0.2);
    s.walls = {box_outline(0.0, 0.0, 10.0, 5.0),
               {Vec2(3.5, 0.0), Vec2(3.5, 3.1)},
               {Vec2(6.5, 5.0), Vec2(6.5, 1.9)}};
    s.start_pose = {1.6, 1.2, 0.0};
    s.goal = {Vec2(8.6, 1.2), 0.5};
    s.episode_horizon = 200;
  } else if (id == "S23") {
    s.description = "SCT U-shaped path around a long divider";
    carry(s, 1.2, 0.5, 0.2);
    s.walls = {box_outline(0.0, 0.0, 9.0, 6.0), {Vec2(0.0, 3.0), Vec2(6.0, 3.0)}};
    s.start_pose = {1.8, 1.5, 0.0};
    s.goal = {Vec2(2.2, 4.5), 0.6};
    s.episode_horizon = 240;
  } else if (id == "S31") {
    s.description = "SLH facing mode: beam carried past a wall stub";
    carry(s, 2.4, 0.4, 0.15);
    s.walls = {box_outline(0.0, 0.0, 11.0, 3.0), {Vec2(5.5, 0.0), Vec2(5.5, 0.8)}};
    s.start_pose = {2.4, 1.6, 0.0};
    s.goal = {Vec2(8.8, 1.5), 0.5};
    s.episode_horizon = 120;
  } else if (id == "S32") {
    s.description = "SLH lateral shuffle: beam carried sideways down a hall";
    carry(s, 2.4, 0.4, 0.15);
    s.walls = {box_outline(0.6, 0.0, 5.4, 9.0)};
    s.start_pose = {3.0, 1.5, 0.0};
    s.goal = {Vec2(3.0, 7.3), 0.5};
    s.heading_mode = HeadingMode::kHold;
    s.episode_horizon = 120;
  } else if (id == "S33") {
    s.description = "SLH pivoting: beam turned through an L corner";
    carry(s, 2.4, 0.4, 0.15);
    s.walls = {{Vec2(0.0, 3.2), Vec2(0.0, 0.0), Vec2(9.2, 0.0), Vec2(9.2, 10.0)},
               {Vec2(0.0, 3.2), Vec2(6.0, 3.2), Vec2(6.0, 10.0)}};
    s.start_pose = {2.2, 1.6, 0.0};
    s.goal = {Vec2(7.6, 7.2), 0.6};
    s.episode_horizon = 200;
  } else {
    throw Error("unknown builtin scenario '" + id + "'");
  }
  validate(s);
  return s;
}

}  // namespace

const std::vector<std::string>& builtin_scenario_ids() {
  static const std::vector<std::string> ids = {"S11", "S12", "S13", "S21", "S22",
                                               "S23", "S31", "S32", "S33", "corridor"};
  return ids;
}

bool is_builtin_scenario(const std::string& id) {
  const auto& ids = builtin_scenario_ids();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

Scenario builtin_scenario(const std::string& id) { return make(id); }

std::string scenario_category(const std::string& id) {
  if (id.size() == 3 && id[0] == 'S') {
    switch (id[1]) {
      case '1': return "OSP";
      case '2': return "SCT";
      case '3': return "SLH";
      default: break;
    }
  }
  return "custom";
}

}  // namespace tandem
