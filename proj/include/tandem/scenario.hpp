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

#ifndef TANDEM_SCENARIO_HPP_
#define TANDEM_SCENARIO_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tandem/error.hpp"
#include "tandem/geometry.hpp"

namespace tandem {

enum class TaskMode { kPush, kCarry };

std::string_view to_string(TaskMode mode);

// Kinematic limits of one agent. Velocities are body-frame absolute bounds.
struct Embodiment {
  std::string name;
  double max_vx = 0.5;
  double max_vy = 0.3;
  double max_yaw_rate = 0.8;
  double com_min = 0.55;
  double com_max = 0.8;
  double com_default = 0.7;
  double max_torso_pitch = 0.4;
  double wrist_workspace_radius = 0.65;
  double body_radius = 0.25;
  // Extra lateral clearance this agent needs beside the payload.
  double side_margin = 0.0;
};

// Rigid payload. Handles are listed as agent0 {left, right}, agent1 {left, right}
// in the object frame; in push mode they are nominal contact points.
struct ObjectSpec {
  Vec2 extents{1.2, 0.5};
  std::array<Vec2, 4> handles;
  double grip_height = 0.8;
  double rest_height = 0.4;

  Vec2 half_extents() const { return 0.5 * extents; }
  double minor_extent() const { return std::min(extents.x(), extents.y()); }
};

struct GoalRegion {
  Vec2 center = Vec2::Zero();
  double radius = 0.5;

  // Closed disc.
  bool contains(const Vec2& p) const { return (p - center).norm() <= radius; }
};

// How the nominal controller orients the payload along the anchor path.
enum class HeadingMode { kTangent, kHold };

struct Scenario {
  std::string id;
  std::string description;
  TaskMode task_mode = TaskMode::kCarry;
  std::vector<std::vector<Vec2>> walls;  // polylines, meters
  ObjectSpec object;
  Pose2 start_pose;
  GoalRegion goal;
  std::array<Embodiment, 2> embodiments;
  // Reset pose of each agent expressed in the object frame.
  std::array<Pose2, 2> stations;
  int episode_horizon = 120;
  HeadingMode heading_mode = HeadingMode::kTangent;
  double heading_offset = 0.0;
  // Uniform reset perturbation of the object start pose.
  double start_jitter_position = 0.1;
  double start_jitter_heading = 0.05;

  std::vector<Segment> wall_segments() const;
  // Axis-aligned bounds of walls, start and goal: {min, max}.
  std::array<Vec2, 2> bounds() const;
  OrientedBox object_box(const Pose2& pose) const {
    return {pose, object.half_extents()};
  }
};

// Checks every Scenario invariant; throws Error naming the failing one.
void validate(const Scenario& scenario);

nlohmann::json to_json(const Scenario& scenario);
Scenario scenario_from_json(const nlohmann::json& j);
Scenario parse_scenario(std::string_view text);

// Loads a builtin id (S11..S33, corridor) or a scenario_v1 JSON file.
Scenario load_scenario(const std::string& id_or_path);

const std::vector<std::string>& builtin_scenario_ids();
bool is_builtin_scenario(const std::string& id);
Scenario builtin_scenario(const std::string& id);

// Scenario category label used by the evaluation report (OSP/SCT/SLH).
std::string scenario_category(const std::string& id);

struct OccupancyGrid {
  Vec2 origin = Vec2::Zero();  // world position of the lower-left corner of cell (0,0)
  double resolution = 1.0;     // meters per cell
  int size = 0;                // M
  std::vector<std::uint8_t> cells;  // row-major, index = row * M + col

  bool in_bounds(int col, int row) const {
    return col >= 0 && row >= 0 && col < size && row < size;
  }
  bool occupied(int col, int row) const { return cells[row * size + col] != 0; }
  void set(int col, int row, bool v) { cells[row * size + col] = v ? 1 : 0; }
  Vec2 cell_center(int col, int row) const {
    return origin + resolution * Vec2(col + 0.5, row + 0.5);
  }
  std::array<int, 2> cell_of(const Vec2& p) const;
  std::size_t count_occupied() const;
  bool operator==(const OccupancyGrid&) const = default;
};

inline constexpr int kDefaultGridSize = 32;

// Cell is occupied iff its square intersects a wall inflated by `inflation`.
// Negative inflation selects the default: half the object's minor extent.
OccupancyGrid rasterize(const Scenario& scenario, int grid_size = kDefaultGridSize,
                        double inflation = -1.0);

// 8-connected flood fill over free cells.
bool grid_connected(const OccupancyGrid& grid, std::array<int, 2> from,
                    std::array<int, 2> to);

}  // namespace tandem

#endif  // TANDEM_SCENARIO_HPP_
