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

#ifndef TANDEM_IO_HPP_
#define TANDEM_IO_HPP_

#include <string>

#include <nlohmann/json.hpp>

namespace tandem {

std::string read_file(const std::string& path);
// Writes through a temporary sibling and renames it into place.
void write_file(const std::string& path, const std::string& bytes);
void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);
void make_directories(const std::string& path);

}  // namespace tandem

#endif  // TANDEM_IO_HPP_
