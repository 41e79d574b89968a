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

#ifndef TANDEM_RUN_CONFIG_HPP_
#define TANDEM_RUN_CONFIG_HPP_

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tandem {

// Applies "a.b.c=value". The value is parsed as JSON when possible and taken
// as a string otherwise. Intermediate objects are created; the key path must
// not pass through a non-object.
void apply_override(nlohmann::json& root, const std::string& assignment);

// defaults <- file (merge patch) <- overrides, in that order.
nlohmann::json resolve_config(const nlohmann::json& defaults, const std::string& file,
                              const std::vector<std::string>& overrides);

// Output directory: explicit path, else $TANDEM_OUT_ROOT (default "runs")
// joined with the run name.
std::string output_dir(const std::string& explicit_dir, const std::string& run_name);

}  // namespace tandem

#endif  // TANDEM_RUN_CONFIG_HPP_
