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

#include "tandem/run_config.hpp"

#include <cstdlib>

#include "tandem/error.hpp"
#include "tandem/io.hpp"

namespace tandem {

void apply_override(nlohmann::json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error("override '" + assignment + "' must look like key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw Error("override '" + assignment + "' has an empty key");
    if (!node->is_object()) {
      throw Error("override '" + assignment + "': '" + key + "' is below a non-object value");
    }
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

nlohmann::json resolve_config(const nlohmann::json& defaults, const std::string& file,
                              const std::vector<std::string>& overrides) {
  nlohmann::json cfg = defaults;
  if (!file.empty()) {
    const nlohmann::json patch = read_json(file);
    if (!patch.is_object()) throw Error(file + ": config must be a JSON object");
    cfg.merge_patch(patch);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

std::string output_dir(const std::string& explicit_dir, const std::string& run_name) {
  if (!explicit_dir.empty()) return explicit_dir;
  const char* root = std::getenv("TANDEM_OUT_ROOT");
  const std::string base = root != nullptr && *root != '\0' ? root : "runs";
  return base + "/" + run_name;
}

}  // namespace tandem
