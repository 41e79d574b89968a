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

#include "tandem/cognition.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <limits>
#include <queue>
#include <tuple>

#include "tandem/error.hpp"

namespace tandem {

namespace {

// Visits the grid cells crossed by segment a->b (Amanatides-Woo traversal).
// The visitor returns false to stop early.
template <typename Visitor>
void walk_cells(const OccupancyGrid& grid, const Vec2& a, const Vec2& b, Visitor&& visit) {
  const Vec2 p = (a - grid.origin) / grid.resolution;
  const Vec2 q = (b - grid.origin) / grid.resolution;
  int x = static_cast<int>(std::floor(p.x()));
  int y = static_cast<int>(std::floor(p.y()));
  const int x_end = static_cast<int>(std::floor(q.x()));
  const int y_end = static_cast<int>(std::floor(q.y()));
  const Vec2 d = q - p;
  const int step_x = d.x() > 0 ? 1 : -1;
  const int step_y = d.y() > 0 ? 1 : -1;
  const double inf = std::numeric_limits<double>::infinity();
  double t_max_x = d.x() != 0 ? ((step_x > 0 ? x + 1 - p.x() : p.x() - x) / std::abs(d.x())) : inf;
  double t_max_y = d.y() != 0 ? ((step_y > 0 ? y + 1 - p.y() : p.y() - y) / std::abs(d.y())) : inf;
  const double t_dx = d.x() != 0 ? 1.0 / std::abs(d.x()) : inf;
  const double t_dy = d.y() != 0 ? 1.0 / std::abs(d.y()) : inf;
  const int max_steps = 4 * grid.size + 4;
  for (int n = 0; n < max_steps; ++n) {
    if (!visit(x, y)) return;
    if (x == x_end && y == y_end) return;
    if (t_max_x < t_max_y) {
      if (t_max_x > 1.0) return;
      x += step_x;
      t_max_x += t_dx;
    } else {
      if (t_max_y > 1.0) return;
      y += step_y;
      t_max_y += t_dy;
    }
  }
}

bool allowed_cell(const OccupancyGrid& grid, const std::vector<std::uint8_t>& mask, int x,
                  int y) {
  if (!grid.in_bounds(x, y) || grid.occupied(x, y)) return false;
  return mask.empty() || mask[y * grid.size + x] != 0;
}

bool sight(const OccupancyGrid& grid, const Vec2& a, const Vec2& b,
           const std::vector<std::uint8_t>& mask) {
  bool clear = true;
  walk_cells(grid, a, b, [&](int x, int y) {
    clear = allowed_cell(grid, mask, x, y);
    return clear;
  });
  return clear;
}

// Greedy string pulling: keep the farthest waypoint still in sight.
std::vector<Vec2> smooth(const OccupancyGrid& grid, const std::vector<Vec2>& route,
                         const std::vector<std::uint8_t>& mask) {
  if (route.size() <= 2) return route;
  std::vector<Vec2> out{route.front()};
  std::size_t i = 0;
  while (i + 1 < route.size()) {
    std::size_t j = route.size() - 1;
    while (j > i + 1 && !sight(grid, route[i], route[j], mask)) --j;
    out.push_back(route[j]);
    i = j;
  }
  return out;
}

double distance_to_polyline(const std::vector<Vec2>& line, const Vec2& p) {
  if (line.size() == 1) return (line[0] - p).norm();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    best = std::min(best, point_segment_distance(p, {line[i], line[i + 1]}));
  }
  return best;
}

// Arc-length coordinate of the closest point of the polyline to p.
double arc_position(const std::vector<Vec2>& line, const Vec2& p) {
  double best = std::numeric_limits<double>::infinity();
  double best_s = 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec2 d = line[i + 1] - line[i];
    const double len = d.norm();
    const double t = len > 0 ? std::clamp((p - line[i]).dot(d) / (len * len), 0.0, 1.0) : 0.0;
    const double dist = (line[i] + t * d - p).norm();
    if (dist < best) {
      best = dist;
      best_s = s + t * len;
    }
    s += len;
  }
  return best_s;
}

Vec2 point_at(const std::vector<Vec2>& line, double s) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const double len = (line[i + 1] - line[i]).norm();
    if (acc + len >= s && len > 0) {
      return line[i] + (s - acc) / len * (line[i + 1] - line[i]);
    }
    acc += len;
  }
  return line.back();
}

std::vector<double> arc_fractions(const CandidateProposal& p) {
  std::vector<double> cumulative;
  double s = 0.0;
  Vec2 prev = p.path.empty() ? p.anchors.front() : p.path.front();
  for (const auto& a : p.anchors) {
    s += (a - prev).norm();
    cumulative.push_back(s);
    prev = a;
  }
  for (auto& c : cumulative) c = s > 0 ? c / s : 1.0;
  return cumulative;
}

bool cell_visible(const OccupancyGrid& grid, const std::vector<std::uint8_t>& mask,
                  const Vec2& p) {
  const auto c = grid.cell_of(p);
  if (!grid.in_bounds(c[0], c[1])) return false;
  return !mask.empty() && mask[c[1] * grid.size + c[0]] != 0;
}

}  // namespace

std::vector<std::uint8_t> visible_cells(const OccupancyGrid& grid, const Vec2& from) {
  std::vector<std::uint8_t> mask(grid.cells.size(), 0);
  for (int row = 0; row < grid.size; ++row) {
    for (int col = 0; col < grid.size; ++col) {
      bool seen = false;
      walk_cells(grid, from, grid.cell_center(col, row), [&](int x, int y) {
        if (!grid.in_bounds(x, y)) return false;
        if (x == col && y == row) {
          seen = true;
          return false;
        }
        return !grid.occupied(x, y);
      });
      if (seen) mask[row * grid.size + col] = 1;
    }
  }
  return mask;
}

bool line_of_sight(const OccupancyGrid& grid, const Vec2& a, const Vec2& b) {
  return sight(grid, a, b, {});
}

std::vector<Vec2> grid_shortest_path(const OccupancyGrid& grid, const Vec2& start,
                                     const Vec2& goal,
                                     const std::vector<std::uint8_t>& allowed) {
  const auto s = grid.cell_of(start);
  const auto g = grid.cell_of(goal);
  if (!allowed_cell(grid, allowed, s[0], s[1]) || !allowed_cell(grid, allowed, g[0], g[1])) {
    return {};
  }
  const int n = grid.size * grid.size;
  std::vector<double> cost(n, std::numeric_limits<double>::infinity());
  std::vector<int> parent(n, -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  const int start_idx = s[1] * grid.size + s[0];
  const int goal_idx = g[1] * grid.size + g[0];
  cost[start_idx] = 0.0;
  open.push({0.0, start_idx});
  while (!open.empty()) {
    const auto [c, idx] = open.top();
    open.pop();
    if (c > cost[idx]) continue;
    if (idx == goal_idx) break;
    const int x = idx % grid.size;
    const int y = idx / grid.size;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const int nx = x + dx;
        const int ny = y + dy;
        if (!allowed_cell(grid, allowed, nx, ny)) continue;
        if (dx != 0 && dy != 0 &&
            (!allowed_cell(grid, allowed, x + dx, y) || !allowed_cell(grid, allowed, x, y + dy))) {
          continue;
        }
        const double step = (dx != 0 && dy != 0) ? std::sqrt(2.0) : 1.0;
        const int nidx = ny * grid.size + nx;
        if (c + step < cost[nidx]) {
          cost[nidx] = c + step;
          parent[nidx] = idx;
          open.push({cost[nidx], nidx});
        }
      }
    }
  }
  if (!std::isfinite(cost[goal_idx])) return {};
  std::vector<Vec2> path;
  for (int idx = goal_idx; idx != -1; idx = parent[idx]) {
    path.push_back(grid.cell_center(idx % grid.size, idx / grid.size));
  }
  std::reverse(path.begin(), path.end());
  return path;
}

double polyline_length(const std::vector<Vec2>& points) {
  double len = 0.0;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) len += (points[i + 1] - points[i]).norm();
  return len;
}

std::vector<Vec2> resample(const std::vector<Vec2>& path, double spacing) {
  if (path.empty()) return {};
  const double total = polyline_length(path);
  std::vector<Vec2> out;
  constexpr double kEps = 1e-9;
  for (int k = 1; k * spacing < total - kEps; ++k) out.push_back(point_at(path, k * spacing));
  out.push_back(path.back());
  return out;
}

CandidateProposal propose(const OccupancyGrid& grid, const Vec2& object_pos,
                          const GoalRegion& goal, const Pose2& agent_view, int agent_idx,
                          const CognitionConfig& config,
                          const std::vector<std::uint8_t>& known) {
  const auto s = grid.cell_of(object_pos);
  const auto g = grid.cell_of(goal.center);
  if (!grid.in_bounds(s[0], s[1]) || grid.occupied(s[0], s[1]) ||
      !grid.in_bounds(g[0], g[1]) || grid.occupied(g[0], g[1])) {
    throw Error("propose: start or goal cell is not free");
  }
  CandidateProposal out;
  out.agent_idx = agent_idx;
  out.spacing = config.spacing;
  out.visibility_mask = visible_cells(grid, agent_view.position());
  if (!known.empty()) {
    for (std::size_t i = 0; i < known.size(); ++i) out.visibility_mask[i] |= known[i];
  }
  const auto cells = grid_shortest_path(grid, object_pos, goal.center, out.visibility_mask);
  if (cells.empty()) throw Error("propose: no visible path");
  std::vector<Vec2> route{object_pos};
  for (std::size_t i = 1; i + 1 < cells.size(); ++i) route.push_back(cells[i]);
  route.push_back(goal.center);
  out.path = smooth(grid, route, out.visibility_mask);
  out.anchors = resample(out.path, config.spacing);
  const double total = polyline_length(out.path);
  for (const auto& a : out.anchors) out.scores.push_back(-(total - arc_position(out.path, a)));
  return out;
}

double wall_clearance(const std::vector<Segment>& walls, const Vec2& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& w : walls) best = std::min(best, point_segment_distance(p, w));
  return best;
}

CandidateProposal feasibility_filter(const CandidateProposal& proposal,
                                     const Embodiment& embodiment,
                                     const ObjectSpec& object,
                                     const std::vector<Segment>& walls) {
  if (proposal.anchors.empty()) throw Error("feasibility_filter: empty proposal");
  const double required = 0.5 * object.minor_extent() + embodiment.side_margin;
  const auto feasible = [&](const Vec2& p) { return wall_clearance(walls, p) >= required; };
  const std::vector<Vec2>& route =
      proposal.path.empty() ? proposal.anchors : proposal.path;
  const double total = polyline_length(route);
  const double max_gap = 2.0 * proposal.spacing;

  struct Kept {
    Vec2 point;
    double s;
  };
  std::vector<Kept> kept;
  for (const auto& a : proposal.anchors) {
    if (feasible(a)) kept.push_back({a, arc_position(route, a)});
  }
  if (kept.empty()) throw Error("feasibility_filter: no feasible anchors");

  std::vector<Kept> out;
  Kept prev{route.front(), 0.0};
  for (const auto& k : kept) {
    if ((k.point - prev.point).norm() > max_gap) {
      for (double s = prev.s + proposal.spacing; s < k.s; s += proposal.spacing) {
        const Vec2 p = point_at(route, s);
        if (feasible(p)) out.push_back({p, s});
      }
    }
    out.push_back(k);
    prev = k;
  }
  const auto blocked = [&](const Vec2& p) {
    throw Error("feasibility_filter: no feasible anchors through the route near (" +
                std::to_string(p.x()) + ", " + std::to_string(p.y()) + ")");
  };
  Vec2 last = route.front();
  for (const auto& k : out) {
    if ((k.point - last).norm() > max_gap) blocked(k.point);
    last = k.point;
  }
  // Anchors may straddle a bottleneck; the route between them must fit too.
  const double step = 0.05;
  for (double s = out.front().s; s < out.back().s; s += step) {
    const Vec2 p = point_at(route, s);
    if (!feasible(p)) blocked(p);
  }
  CandidateProposal result = proposal;
  result.anchors.clear();
  result.scores.clear();
  for (const auto& k : out) {
    result.anchors.push_back(k.point);
    result.scores.push_back(-(total - k.s));
  }
  return result;
}

std::optional<std::string> check_anchor_sequence(const AnchorSequence& seq,
                                                 const OccupancyGrid& grid,
                                                 const GoalRegion& goal) {
  if (seq.anchors.empty()) return "anchor sequence is empty";
  for (std::size_t i = 0; i + 1 < seq.anchors.size(); ++i) {
    if ((seq.anchors[i + 1] - seq.anchors[i]).norm() > 2.0 * seq.spacing) {
      return "gap between anchors " + std::to_string(i) + " and " + std::to_string(i + 1) +
             " exceeds twice the spacing";
    }
  }
  if (!goal.contains(seq.anchors.back())) return "final anchor is outside the goal region";
  for (std::size_t i = 0; i < seq.anchors.size(); ++i) {
    const auto c = grid.cell_of(seq.anchors[i]);
    if (!grid.in_bounds(c[0], c[1]) || grid.occupied(c[0], c[1])) {
      return "anchor " + std::to_string(i) + " is not in free space";
    }
  }
  return std::nullopt;
}

AnchorSequence consensus(const CandidateProposal& a, const CandidateProposal& b,
                         const OccupancyGrid& grid, const GoalRegion& goal,
                         const CognitionConfig& config) {
  if (a.anchors.empty() || b.anchors.empty()) throw Error("consensus: empty proposal");
  const auto fa = arc_fractions(a);
  const auto fb = arc_fractions(b);
  const auto nearest = [](double f, const std::vector<double>& other) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < other.size(); ++j) {
      if (std::abs(other[j] - f) < std::abs(other[best] - f)) best = j;
    }
    return best;
  };
  std::vector<int> match_a(fa.size(), -1);
  std::vector<int> match_b(fb.size(), -1);
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const std::size_t j = nearest(fa[i], fb);
    if (nearest(fb[j], fa) == i &&
        (a.anchors[i] - b.anchors[j]).norm() <= config.merge_radius) {
      match_a[i] = static_cast<int>(j);
      match_b[j] = static_cast<int>(i);
    }
  }
  const double on_path = 0.5 * grid.resolution;
  const auto corroborated = [&](const Vec2& p) {
    const bool both_seen = cell_visible(grid, a.visibility_mask, p) &&
                           cell_visible(grid, b.visibility_mask, p);
    const bool both_paths = !a.path.empty() && !b.path.empty() &&
                            distance_to_polyline(a.path, p) <= on_path &&
                            distance_to_polyline(b.path, p) <= on_path;
    return both_seen || both_paths;
  };

  std::vector<std::tuple<double, double, double>> merged;  // fraction, x, y
  for (std::size_t i = 0; i < fa.size(); ++i) {
    if (match_a[i] >= 0) {
      const auto j = static_cast<std::size_t>(match_a[i]);
      const Vec2 m = 0.5 * (a.anchors[i] + b.anchors[j]);
      merged.emplace_back(0.5 * (fa[i] + fb[j]), m.x(), m.y());
    } else if (corroborated(a.anchors[i])) {
      merged.emplace_back(fa[i], a.anchors[i].x(), a.anchors[i].y());
    }
  }
  for (std::size_t j = 0; j < fb.size(); ++j) {
    if (match_b[j] < 0 && corroborated(b.anchors[j])) {
      merged.emplace_back(fb[j], b.anchors[j].x(), b.anchors[j].y());
    }
  }
  std::sort(merged.begin(), merged.end());
  merged.erase(std::unique(merged.begin(), merged.end(),
                           [](const auto& x, const auto& y) {
                             return std::get<1>(x) == std::get<1>(y) &&
                                    std::get<2>(x) == std::get<2>(y);
                           }),
               merged.end());
  AnchorSequence seq;
  seq.spacing = config.spacing;
  for (const auto& [f, x, y] : merged) seq.anchors.emplace_back(x, y);
  // The route starts at the object, so the first anchor must be reachable too.
  if (!a.path.empty() && !b.path.empty() && !seq.anchors.empty()) {
    const Vec2 origin = 0.5 * (a.path.front() + b.path.front());
    if ((seq.anchors.front() - origin).norm() > 2.0 * config.spacing) {
      throw Error("consensus failure: gap between the object and the first anchor exceeds "
                  "twice the spacing");
    }
  }
  if (auto problem = check_anchor_sequence(seq, grid, goal)) {
    throw Error("consensus failure: " + *problem);
  }
  return seq;
}

OccupancyGrid planning_grid(const Scenario& scenario, const CognitionConfig& config) {
  double inflation = 0.0;
  for (const auto& e : scenario.embodiments) {
    inflation = std::max(inflation, 0.5 * scenario.object.minor_extent() + e.side_margin);
  }
  return rasterize(scenario, config.grid_size, inflation);
}

namespace {

std::array<CandidateProposal, 2> proposals(const Scenario& scenario, const OccupancyGrid& grid,
                                           const WorldState& state,
                                           const CognitionConfig& config, bool full_map) {
  const std::vector<std::uint8_t> everything(grid.cells.size(), 1);
  const auto walls = scenario.wall_segments();
  std::array<CandidateProposal, 2> out;
  for (int i = 0; i < 2; ++i) {
    const Pose2 view{state.agents[i].position.x(), state.agents[i].position.y(),
                     state.agents[i].yaw};
    CandidateProposal p;
    if (full_map) {
      p = propose(grid, state.object.pose.position(), scenario.goal, view, i, config, everything);
    } else {
      try {
        p = propose(grid, state.object.pose.position(), scenario.goal, view, i, config);
      } catch (const Error&) {
        p = propose(grid, state.object.pose.position(), scenario.goal, view, i, config,
                    everything);
      }
    }
    out[i] = feasibility_filter(p, scenario.embodiments[i], scenario.object, walls);
  }
  return out;
}

}  // namespace

AnchorSequence plan_anchors(const Scenario& scenario, const WorldState& state,
                            const CognitionConfig& config) {
  const OccupancyGrid grid = planning_grid(scenario, config);
  try {
    const auto p = proposals(scenario, grid, state, config, false);
    return consensus(p[0], p[1], grid, scenario.goal, config);
  } catch (const Error&) {
    const auto p = proposals(scenario, grid, state, config, true);
    return consensus(p[0], p[1], grid, scenario.goal, config);
  }
}

nlohmann::json to_json(const PlannerRequest& r) {
  std::string bits(r.grid.cells.size(), '0');
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (r.grid.cells[i]) bits[i] = '1';
  }
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : r.views) views.push_back({{"pos", {v.x, v.y}}, {"yaw", v.heading}});
  return {{"version", "planner_v1"},
          {"grid",
           {{"M", r.grid.size},
            {"resolution", r.grid.resolution},
            {"origin", {r.grid.origin.x(), r.grid.origin.y()}},
            {"cells", bits}}},
          {"object_pos", {r.object_pos.x(), r.object_pos.y()}},
          {"goal", {{"center", {r.goal.center.x(), r.goal.center.y()}},
                    {"radius", r.goal.radius}}},
          {"views", views}};
}

PlannerRequest planner_request_from_json(const nlohmann::json& j) {
  try {
    PlannerRequest r;
    const auto& g = j.at("grid");
    r.grid.size = g.at("M").get<int>();
    r.grid.resolution = g.at("resolution").get<double>();
    r.grid.origin = {g.at("origin").at(0).get<double>(), g.at("origin").at(1).get<double>()};
    const auto bits = g.at("cells").get<std::string>();
    if (bits.size() != static_cast<std::size_t>(r.grid.size) * r.grid.size) {
      throw Error("planner_v1: cells bitstring has wrong length");
    }
    r.grid.cells.resize(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) r.grid.cells[i] = bits[i] == '1' ? 1 : 0;
    r.object_pos = {j.at("object_pos").at(0).get<double>(), j.at("object_pos").at(1).get<double>()};
    r.goal.center = {j.at("goal").at("center").at(0).get<double>(),
                     j.at("goal").at("center").at(1).get<double>()};
    r.goal.radius = j.at("goal").at("radius").get<double>();
    for (const auto& v : j.at("views")) {
      r.views.push_back({v.at("pos").at(0).get<double>(), v.at("pos").at(1).get<double>(),
                         v.at("yaw").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("planner_v1: malformed request: ") + e.what());
  }
}

nlohmann::json to_json(const AnchorSequence& seq) {
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& a : seq.anchors) anchors.push_back({a.x(), a.y()});
  return {{"anchors", anchors}, {"spacing", seq.spacing}};
}

std::vector<Vec2> parse_planner_response(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("planner_v1: response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("anchors") || !j["anchors"].is_array()) {
    throw Error("planner_v1: response lacks an 'anchors' array");
  }
  std::vector<Vec2> out;
  for (const auto& a : j["anchors"]) {
    if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number()) {
      throw Error("planner_v1: anchors must be [x, y] pairs");
    }
    const Vec2 p(a[0].get<double>(), a[1].get<double>());
    if (!p.allFinite()) throw Error("planner_v1: non-finite anchor");
    out.push_back(p);
  }
  return out;
}

std::string run_planner_process(const ExternalPlannerConfig& config,
                                const std::string& request) {
  if (config.command.empty()) throw Error("planner: no command configured");
  int to_child[2];
  int from_child[2];
  if (pipe2(to_child, O_CLOEXEC) != 0) throw Error("planner: pipe failed");
  if (pipe2(from_child, O_CLOEXEC) != 0) {
    close(to_child[0]);
    close(to_child[1]);
    throw Error("planner: pipe failed");
  }
  std::vector<char*> argv;
  for (const auto& a : config.command) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  const pid_t pid = fork();
  if (pid < 0) throw Error("planner: fork failed");
  if (pid == 0) {
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    execvp(argv[0], argv.data());
    _exit(127);
  }
  close(to_child[0]);
  close(from_child[1]);

  struct sigaction ignore {};
  struct sigaction previous {};
  ignore.sa_handler = SIG_IGN;
  sigaction(SIGPIPE, &ignore, &previous);
  std::size_t written = 0;
  while (written < request.size()) {
    const ssize_t n = write(to_child[1], request.data() + written, request.size() - written);
    if (n <= 0) break;
    written += static_cast<std::size_t>(n);
  }
  close(to_child[1]);
  sigaction(SIGPIPE, &previous, nullptr);

  const auto deadline = std::chrono::steady_clock::now() + config.timeout;
  std::string out;
  char buffer[4096];
  bool timed_out = false;
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      timed_out = true;
      break;
    }
    pollfd pfd{from_child[0], POLLIN, 0};
    const int ready = poll(&pfd, 1, static_cast<int>(left.count()));
    if (ready == 0) {
      timed_out = true;
      break;
    }
    if (ready < 0) {
      if (errno == EINTR) continue;
      break;
    }
    const ssize_t n = read(from_child[0], buffer, sizeof(buffer));
    if (n <= 0) break;
    out.append(buffer, static_cast<std::size_t>(n));
  }
  close(from_child[0]);
  if (timed_out) kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);
  if (timed_out) throw Error("planner: timeout");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw Error("planner: process exited abnormally");
  }
  return out;
}

AdapterResult external_adapter(const Scenario& scenario, const WorldState& state,
                               const CognitionConfig& cognition,
                               const ExternalPlannerConfig& planner) {
  AdapterResult result;
  const OccupancyGrid grid = planning_grid(scenario, cognition);
  PlannerRequest request;
  request.grid = grid;
  request.object_pos = state.object.pose.position();
  request.goal = scenario.goal;
  for (const auto& a : state.agents) request.views.push_back({a.position.x(), a.position.y(), a.yaw});
  try {
    const auto anchors =
        parse_planner_response(run_planner_process(planner, to_json(request).dump()));
    if (anchors.empty()) throw Error("planner_v1: empty anchor list");
    CandidateProposal candidate;
    candidate.anchors = anchors;
    candidate.spacing = cognition.spacing;
    candidate.path.push_back(request.object_pos);
    candidate.path.insert(candidate.path.end(), anchors.begin(), anchors.end());
    const auto walls = scenario.wall_segments();
    for (int i = 0; i < 2; ++i) {
      const auto filtered =
          feasibility_filter(candidate, scenario.embodiments[i], scenario.object, walls);
      if (filtered.anchors != anchors) throw Error("external plan violates clearance");
    }
    AnchorSequence seq{anchors, cognition.spacing};
    if (auto problem = check_anchor_sequence(seq, grid, scenario.goal)) {
      throw Error("external plan rejected: " + *problem);
    }
    result.anchors = std::move(seq);
    result.external_accepted = true;
  } catch (const Error& e) {
    const std::string warning = std::string("external planner rejected: ") + e.what();
    std::cerr << "[cognition] warning: " << warning << "\n";
    result.warnings.push_back(warning);
    result.anchors = plan_anchors(scenario, state, cognition);
  }
  return result;
}

}  // namespace tandem
