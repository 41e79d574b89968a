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

#ifndef TANDEM_DIAGNOSTICS_HPP_
#define TANDEM_DIAGNOSTICS_HPP_

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

namespace tandem {

// Backprop versus central finite differences on full-size policy and critic
// losses. Each instance draws fresh networks, a minibatch with a mix of
// clipped and unclipped ratios, and a random subset of coordinates (the
// log_std block is always included). Coordinates within h of a ReLU or
// clip kink are compared with the matching one-sided difference.
struct GradCheckConfig {
  int instances = 100;
  int batch = 8;
  int coords = 24;  // sampled parameters per network and instance
  double h = 1e-5;
  std::uint64_t seed = 0;
  std::vector<int> hidden{256, 256, 128};
};

struct GradCheckInstance {
  double policy_rel_error = 0.0;  // max |bp - fd| / max |fd| over sampled coordinates
  double critic_rel_error = 0.0;
  double clip_fraction = 0.0;
  int kink_coords = 0;  // coordinates checked against a one-sided difference
};

struct GradCheckReport {
  std::vector<GradCheckInstance> instances;
  double max_rel_error = 0.0;
  double seconds = 0.0;
};

GradCheckReport gradient_check(const GradCheckConfig& cfg);
nlohmann::json to_json(const GradCheckReport& report);

}  // namespace tandem

#endif  // TANDEM_DIAGNOSTICS_HPP_
