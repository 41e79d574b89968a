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

#ifndef TANDEM_COGNITION_HPP_
#define TANDEM_COGNITION_HPP_

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tandem/scenario.hpp"
#include "tandem/sim.hpp"

namespace tandem {

// Planner knobs shared by the per-agent proposal and the consensus step.
struct CognitionConfig {
  int grid_size = kDefaultGridSize;
  double spacing = 1.0;        // nominal inter-anchor distance, m
  double merge_radius = 0.5;   // consensus pairing radius, m
};

struct CandidateProposal {
  int agent_idx = 0;
  std::vector<Vec2> anchors;
  std::vector<std::uint8_t> visibility_mask;  // same layout as the grid cells
  std::vector<double> scores;                 // -(remaining path length)
  std::vector<Vec2> path;                     // smoothed route, object to goal
  double spacing = 1.0;
};

struct AnchorSequence {
  std::vector<Vec2> anchors;
  double spacing = 1.0;

  bool operator==(const AnchorSequence&) const = default;
};

// Cells visible from `from` by grid line of sight; occupied cells are seen
// but stop the sight line.
std::vector<std::uint8_t> visible_cells(const OccupancyGrid& grid, const Vec2& from);

// Free-space line of sight between two world points on the grid.
bool line_of_sight(const OccupancyGrid& grid, const Vec2& a, const Vec2& b);

// Shortest 8-connected route (unit / sqrt2 step costs, no corner cutting)
// restricted to cells with allowed[i] != 0; empty mask means all cells.
// Returns cell-center waypoints, empty if disconnected.
std::vector<Vec2> grid_shortest_path(const OccupancyGrid& grid, const Vec2& start,
                                     const Vec2& goal,
                                     const std::vector<std::uint8_t>& allowed = {});

double polyline_length(const std::vector<Vec2>& points);

// Resamples a route at `spacing`; the final point is always included.
std::vector<Vec2> resample(const std::vector<Vec2>& path, double spacing);

// Per-agent candidate anchors from the agent's egocentric view. `known`
// marks cells already known besides the current view (may be empty).
CandidateProposal propose(const OccupancyGrid& grid, const Vec2& object_pos,
                          const GoalRegion& goal, const Pose2& agent_view, int agent_idx,
                          const CognitionConfig& config,
                          const std::vector<std::uint8_t>& known = {});

// Distance from a point to the nearest wall segment.
double wall_clearance(const std::vector<Segment>& walls, const Vec2& p);

// Drops anchors without swept clearance (minor extent / 2 + side margin) and
// re-densifies the gaps along the proposal route.
CandidateProposal feasibility_filter(const CandidateProposal& proposal,
                                     const Embodiment& embodiment,
                                     const ObjectSpec& object,
                                     const std::vector<Segment>& walls);

// Reconciles two proposals into one anchor sequence.
AnchorSequence consensus(const CandidateProposal& a, const CandidateProposal& b,
                         const OccupancyGrid& grid, const GoalRegion& goal,
                         const CognitionConfig& config);

// Returns a description of the first violated AnchorSequence invariant.
std::optional<std::string> check_anchor_sequence(const AnchorSequence& seq,
                                                 const OccupancyGrid& grid,
                                                 const GoalRegion& goal);

// Planning grid for a scenario: walls inflated by the largest required
// half-width of the payload.
OccupancyGrid planning_grid(const Scenario& scenario, const CognitionConfig& config);

// Internal planning pipeline: propose per agent (falling back to the full map
// when the view alone is disconnected), filter, then reach consensus; on
// consensus failure both agents replan over the full map.
AnchorSequence plan_anchors(const Scenario& scenario, const WorldState& state,
                            const CognitionConfig& config);

// --- external planner adapter ("planner_v1") ---

struct PlannerRequest {
  OccupancyGrid grid;
  Vec2 object_pos = Vec2::Zero();
  GoalRegion goal;
  std::vector<Pose2> views;
};

nlohmann::json to_json(const PlannerRequest& request);
PlannerRequest planner_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnchorSequence& seq);
// Parses a planner_v1 response; throws Error on schema violations.
std::vector<Vec2> parse_planner_response(const std::string& text);

struct ExternalPlannerConfig {
  std::vector<std::string> command;  // argv of a local planner process
  std::chrono::milliseconds timeout{10000};
};

struct AdapterResult {
  AnchorSequence anchors;
  bool external_accepted = false;
  std::vector<std::string> warnings;
};

// Runs a planner process: writes the request to its stdin and reads the
// response from its stdout. Throws Error on timeout or process failure.
std::string run_planner_process(const ExternalPlannerConfig& config,
                                const std::string& request);

// Queries the external planner and validates its answer; any failure falls
// back to plan_anchors and records a warning.
AdapterResult external_adapter(const Scenario& scenario, const WorldState& state,
                               const CognitionConfig& cognition,
                               const ExternalPlannerConfig& planner);

}  // namespace tandem

#endif  // TANDEM_COGNITION_HPP_
