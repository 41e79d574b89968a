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

#include "tandem/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>

namespace tandem {

namespace {

using nlohmann::json;

const json& require(const json& j, const char* field) {
  if (!j.is_object() || !j.contains(field)) {
    throw Error(std::string("scenario: missing field '") + field + "'");
  }
  return j.at(field);
}

double number(const json& j, const char* field) {
  const json& v = require(j, field);
  if (!v.is_number()) {
    throw Error(std::string("scenario: field '") + field + "' must be a number");
  }
  return v.get<double>();
}

Vec2 vec2(const json& v, const char* field) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw Error(std::string("scenario: field '") + field + "' must be [x, y]");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

Pose2 pose(const json& v, const char* field) {
  if (!v.is_array() || v.size() != 3) {
    throw Error(std::string("scenario: field '") + field + "' must be [x, y, heading]");
  }
  for (const auto& e : v) {
    if (!e.is_number()) {
      throw Error(std::string("scenario: field '") + field + "' must be numeric");
    }
  }
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

json to_json(const Embodiment& e) {
  return {{"name", e.name},
          {"max_vx", e.max_vx},
          {"max_vy", e.max_vy},
          {"max_yaw_rate", e.max_yaw_rate},
          {"com_min", e.com_min},
          {"com_max", e.com_max},
          {"com_default", e.com_default},
          {"max_torso_pitch", e.max_torso_pitch},
          {"wrist_workspace_radius", e.wrist_workspace_radius},
          {"body_radius", e.body_radius},
          {"side_margin", e.side_margin}};
}

Embodiment embodiment_from_json(const json& j) {
  Embodiment e;
  e.name = j.value("name", std::string("agent"));
  e.max_vx = number(j, "max_vx");
  e.max_vy = number(j, "max_vy");
  e.max_yaw_rate = number(j, "max_yaw_rate");
  e.com_min = number(j, "com_min");
  e.com_max = number(j, "com_max");
  e.com_default = number(j, "com_default");
  e.max_torso_pitch = number(j, "max_torso_pitch");
  e.wrist_workspace_radius = number(j, "wrist_workspace_radius");
  e.body_radius = number(j, "body_radius");
  e.side_margin = j.value("side_margin", 0.0);
  return e;
}

json pair(const Vec2& v) { return json::array({v.x(), v.y()}); }

// Closed distance between a segment and an axis-aligned box.
double segment_box_distance(const Segment& s, const Vec2& lo, const Vec2& hi) {
  const auto inside = [&](const Vec2& p) {
    return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y();
  };
  if (inside(s.a) || inside(s.b)) return 0.0;
  const std::array<Vec2, 4> c = {lo, Vec2(hi.x(), lo.y()), hi, Vec2(lo.x(), hi.y())};
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i) {
    const Segment edge{c[i], c[(i + 1) % 4]};
    best = std::min(best, segment_segment_distance(s, edge));
  }
  return best;
}

// Does the segment touch the half-open box [lo, hi)?
bool segment_hits_half_open_box(const Segment& s, const Vec2& lo, const Vec2& hi) {
  double t0 = 0.0;
  double t1 = 1.0;
  const Vec2 d = s.b - s.a;
  for (int axis = 0; axis < 2; ++axis) {
    if (d[axis] == 0.0) {
      if (s.a[axis] < lo[axis] || s.a[axis] > hi[axis]) return false;
      continue;
    }
    double ta = (lo[axis] - s.a[axis]) / d[axis];
    double tb = (hi[axis] - s.a[axis]) / d[axis];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  const auto strictly_below_hi = [&](const Vec2& p) {
    return p.x() < hi.x() && p.y() < hi.y() && p.x() >= lo.x() && p.y() >= lo.y();
  };
  const Vec2 pa = s.a + t0 * d;
  const Vec2 pb = s.a + t1 * d;
  return strictly_below_hi(pa) || strictly_below_hi(pb) ||
         strictly_below_hi(0.5 * (pa + pb));
}

}  // namespace

std::string_view to_string(TaskMode mode) {
  return mode == TaskMode::kPush ? "push" : "carry";
}

std::vector<Segment> Scenario::wall_segments() const {
  std::vector<Segment> out;
  for (const auto& line : walls) {
    for (std::size_t i = 0; i + 1 < line.size(); ++i) out.push_back({line[i], line[i + 1]});
  }
  return out;
}

std::array<Vec2, 2> Scenario::bounds() const {
  Vec2 lo = start_pose.position();
  Vec2 hi = lo;
  const auto grow = [&](const Vec2& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };
  for (const auto& line : walls) {
    for (const auto& p : line) grow(p);
  }
  grow(goal.center - Vec2::Constant(goal.radius));
  grow(goal.center + Vec2::Constant(goal.radius));
  return {lo, hi};
}

void validate(const Scenario& s) {
  const auto segments = s.wall_segments();
  for (const auto& seg : segments) {
    if (point_segment_distance(s.goal.center, seg) <= s.goal.radius) {
      throw Error("scenario " + s.id + ": goal_region intersects walls");
    }
  }
  const OrientedBox box = s.object_box(s.start_pose);
  for (const auto& seg : segments) {
    if (box.intersects(seg)) {
      throw Error("scenario " + s.id + ": object at start_pose collides with walls");
    }
  }
  if (s.goal.radius <= 0.0) throw Error("scenario " + s.id + ": goal radius must be positive");
  if (s.object.extents.x() <= 0.0 || s.object.extents.y() <= 0.0) {
    throw Error("scenario " + s.id + ": object extents must be positive");
  }
  for (const auto& e : s.embodiments) {
    const bool positive = e.max_vx > 0 && e.max_vy > 0 && e.max_yaw_rate > 0 &&
                          e.com_min > 0 && e.com_max > 0 && e.com_default > 0 &&
                          e.max_torso_pitch > 0 && e.wrist_workspace_radius > 0 &&
                          e.body_radius > 0 && e.side_margin >= 0;
    if (!positive) {
      throw Error("scenario " + s.id + ": embodiment limits must be strictly positive");
    }
    if (e.com_min > e.com_default || e.com_default > e.com_max) {
      throw Error("scenario " + s.id + ": com_default outside [com_min, com_max]");
    }
  }
  if (s.episode_horizon <= 0) {
    throw Error("scenario " + s.id + ": episode_horizon must be positive");
  }
}

nlohmann::json to_json(const Scenario& s) {
  json walls = json::array();
  for (const auto& line : s.walls) {
    json pts = json::array();
    for (const auto& p : line) pts.push_back(pair(p));
    walls.push_back(pts);
  }
  json handles = json::array();
  for (const auto& h : s.object.handles) handles.push_back(pair(h));
  return {
      {"version", "scenario_v1"},
      {"id", s.id},
      {"description", s.description},
      {"task_mode", std::string(to_string(s.task_mode))},
      {"walls", walls},
      {"object",
       {{"extents", pair(s.object.extents)},
        {"handles", handles},
        {"grip_height", s.object.grip_height},
        {"rest_height", s.object.rest_height}}},
      {"start_pose", {s.start_pose.x, s.start_pose.y, s.start_pose.heading}},
      {"goal", {{"center", pair(s.goal.center)}, {"radius", s.goal.radius}}},
      {"embodiments", {to_json(s.embodiments[0]), to_json(s.embodiments[1])}},
      {"stations",
       {{s.stations[0].x, s.stations[0].y, s.stations[0].heading},
        {s.stations[1].x, s.stations[1].y, s.stations[1].heading}}},
      {"episode_horizon", s.episode_horizon},
      {"heading_mode", s.heading_mode == HeadingMode::kTangent ? "tangent" : "hold"},
      {"heading_offset", s.heading_offset},
      {"start_jitter", {{"position", s.start_jitter_position},
                        {"heading", s.start_jitter_heading}}},
  };
}

Scenario scenario_from_json(const json& j) {
  if (!j.is_object()) throw Error("scenario: document must be a JSON object");
  const json& version = require(j, "version");
  if (version != "scenario_v1") {
    throw Error("scenario: field 'version' must be \"scenario_v1\"");
  }
  Scenario s;
  s.id = require(j, "id").get<std::string>();
  s.description = j.value("description", std::string());
  const auto mode = require(j, "task_mode").get<std::string>();
  if (mode == "push") {
    s.task_mode = TaskMode::kPush;
  } else if (mode == "carry") {
    s.task_mode = TaskMode::kCarry;
  } else {
    throw Error("scenario: field 'task_mode' must be \"push\" or \"carry\"");
  }
  const json& walls = require(j, "walls");
  if (!walls.is_array()) throw Error("scenario: field 'walls' must be an array");
  for (const auto& line : walls) {
    if (!line.is_array() || line.size() < 2) {
      throw Error("scenario: field 'walls' entries must be polylines of >= 2 points");
    }
    std::vector<Vec2> pts;
    for (const auto& p : line) pts.push_back(vec2(p, "walls"));
    s.walls.push_back(std::move(pts));
  }
  const json& obj = require(j, "object");
  s.object.extents = vec2(require(obj, "extents"), "object.extents");
  const json& handles = require(obj, "handles");
  if (!handles.is_array() || handles.size() != 4) {
    throw Error("scenario: field 'object.handles' must hold 4 points");
  }
  for (int i = 0; i < 4; ++i) s.object.handles[i] = vec2(handles[i], "object.handles");
  s.object.grip_height = number(obj, "grip_height");
  s.object.rest_height = number(obj, "rest_height");
  s.start_pose = pose(require(j, "start_pose"), "start_pose");
  const json& goal = require(j, "goal");
  s.goal.center = vec2(require(goal, "center"), "goal.center");
  s.goal.radius = number(goal, "radius");
  const json& emb = require(j, "embodiments");
  if (!emb.is_array() || emb.size() != 2) {
    throw Error("scenario: field 'embodiments' must hold exactly 2 entries");
  }
  s.embodiments = {embodiment_from_json(emb[0]), embodiment_from_json(emb[1])};
  const json& stations = require(j, "stations");
  if (!stations.is_array() || stations.size() != 2) {
    throw Error("scenario: field 'stations' must hold exactly 2 poses");
  }
  s.stations = {pose(stations[0], "stations"), pose(stations[1], "stations")};
  s.episode_horizon = require(j, "episode_horizon").get<int>();
  const std::string heading = j.value("heading_mode", std::string("tangent"));
  if (heading == "tangent") {
    s.heading_mode = HeadingMode::kTangent;
  } else if (heading == "hold") {
    s.heading_mode = HeadingMode::kHold;
  } else {
    throw Error("scenario: field 'heading_mode' must be \"tangent\" or \"hold\"");
  }
  s.heading_offset = j.value("heading_offset", 0.0);
  if (j.contains("start_jitter")) {
    s.start_jitter_position = j["start_jitter"].value("position", 0.0);
    s.start_jitter_heading = j["start_jitter"].value("heading", 0.0);
  }
  validate(s);
  return s;
}

Scenario parse_scenario(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + byte, '\n');
    throw Error("scenario: parse error at line " + std::to_string(line) + ": " + e.what());
  }
  try {
    return scenario_from_json(j);
  } catch (const json::exception& e) {
    throw Error(std::string("scenario: invalid field type: ") + e.what());
  }
}

Scenario load_scenario(const std::string& id_or_path) {
  if (is_builtin_scenario(id_or_path)) return builtin_scenario(id_or_path);
  std::ifstream in(id_or_path);
  if (!in) throw Error("scenario: cannot open '" + id_or_path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_scenario(buffer.str());
}

std::array<int, 2> OccupancyGrid::cell_of(const Vec2& p) const {
  const Vec2 q = (p - origin) / resolution;
  return {static_cast<int>(std::floor(q.x())), static_cast<int>(std::floor(q.y()))};
}

std::size_t OccupancyGrid::count_occupied() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1));
}

OccupancyGrid rasterize(const Scenario& scenario, int grid_size, double inflation) {
  if (grid_size < 8) throw Error("rasterize: grid size must be >= 8");
  if (inflation < 0.0) inflation = 0.5 * scenario.object.minor_extent();
  const auto [lo, hi] = scenario.bounds();
  constexpr double kMargin = 1.0;
  const double side = (hi - lo).maxCoeff() + 2.0 * kMargin;
  OccupancyGrid grid;
  grid.size = grid_size;
  grid.resolution = side / grid_size;
  grid.origin = 0.5 * (lo + hi) - Vec2::Constant(0.5 * side);
  grid.cells.assign(static_cast<std::size_t>(grid_size) * grid_size, 0);
  const auto segments = scenario.wall_segments();
  for (int row = 0; row < grid_size; ++row) {
    for (int col = 0; col < grid_size; ++col) {
      const Vec2 cell_lo = grid.origin + grid.resolution * Vec2(col, row);
      const Vec2 cell_hi = cell_lo + Vec2::Constant(grid.resolution);
      for (const auto& seg : segments) {
        if (segment_hits_half_open_box(seg, cell_lo, cell_hi) ||
            segment_box_distance(seg, cell_lo, cell_hi) < inflation) {
          grid.set(col, row, true);
          break;
        }
      }
    }
  }
  return grid;
}

bool grid_connected(const OccupancyGrid& grid, std::array<int, 2> from,
                    std::array<int, 2> to) {
  if (!grid.in_bounds(from[0], from[1]) || !grid.in_bounds(to[0], to[1])) return false;
  if (grid.occupied(from[0], from[1]) || grid.occupied(to[0], to[1])) return false;
  std::vector<std::uint8_t> seen(grid.cells.size(), 0);
  std::queue<std::array<int, 2>> frontier;
  frontier.push(from);
  seen[from[1] * grid.size + from[0]] = 1;
  while (!frontier.empty()) {
    const auto c = frontier.front();
    frontier.pop();
    if (c == to) return true;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = c[0] + dx;
        const int y = c[1] + dy;
        if ((dx == 0 && dy == 0) || !grid.in_bounds(x, y) || grid.occupied(x, y)) continue;
        // No diagonal step past a blocked orthogonal neighbour.
        if (dx != 0 && dy != 0 &&
            (grid.occupied(c[0] + dx, c[1]) || grid.occupied(c[0], c[1] + dy))) {
          continue;
        }
        auto& mark = seen[y * grid.size + x];
        if (mark) continue;
        mark = 1;
        frontier.push({x, y});
      }
    }
  }
  return false;
}

}  // namespace tandem
