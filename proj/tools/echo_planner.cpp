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

// Stand-in for an external planner process speaking planner_v1 on
// stdin/stdout. Modes: good (grid shortest path), wall (one anchor moved
// into a wall), garbage (not JSON), sleep (never answers), fail (exit status 3),
// echo <file> (returns the anchors stored in a planner_v1 response file).

#include <chrono>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "tandem/cognition.hpp"

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "good";
  const std::string input{std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
  if (mode == "sleep") {
    std::this_thread::sleep_for(std::chrono::hours(1));
    return 0;
  }
  if (mode == "fail") return 3;
  if (mode == "garbage") {
    std::cout << "anchors: none, sorry" << std::endl;
    return 0;
  }
  if (mode == "echo") {
    if (argc < 3) return 2;
    std::ifstream file(argv[2]);
    std::cout << std::string{std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>()}
              << std::endl;
    return 0;
  }
  const auto request = tandem::planner_request_from_json(nlohmann::json::parse(input));
  const auto& g = request.grid;
  const auto path = tandem::grid_shortest_path(g, request.object_pos, request.goal.center);
  auto points = tandem::resample(path, 1.0);
  points.erase(points.begin());
  if (mode == "wall" && !points.empty()) {
    // Move the middle anchor onto the nearest occupied cell.
    auto& victim = points[points.size() / 2];
    double best = 1e300;
    tandem::Vec2 spot = victim;
    for (int i = 0; i < g.size * g.size; ++i) {
      if (g.cells[i] == 0) continue;
      const auto c = g.cell_center(i % g.size, i / g.size);
      if ((c - victim).norm() < best) {
        best = (c - victim).norm();
        spot = c;
      }
    }
    victim = spot;
  }
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& p : points) anchors.push_back({p.x(), p.y()});
  std::cout << nlohmann::json{{"anchors", anchors}}.dump() << std::endl;
  return 0;
}
