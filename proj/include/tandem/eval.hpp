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

#ifndef TANDEM_EVAL_HPP_
#define TANDEM_EVAL_HPP_

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tandem/mdp.hpp"
#include "tandem/neural.hpp"

namespace tandem {

struct EpisodeMetrics {
  Outcome outcome = Outcome::kRunning;
  bool success = false;
  bool drop = false;
  bool timeout = false;
  std::optional<double> gamma_time;  // s, success only
  std::optional<double> tilt_rate;   // deg/s, carry only
  double path_deviation_max = 0.0;   // m
  int steps = 0;
  double return_sum = 0.0;

  bool operator==(const EpisodeMetrics&) const = default;
};

nlohmann::json to_json(const EpisodeMetrics& m);

// Accumulates EpisodeMetrics step by step; shared by evaluation and live
// sessions so both compute identical numbers.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(const TransportEnv& env);
  // Call after env.step with that step's result.
  void add(const TransportEnv& env, const EnvStep& step);
  bool ended() const { return outcome_ != Outcome::kRunning; }
  // Metrics of the finished episode; throws mid-episode.
  EpisodeMetrics result() const;
  // Running values for display; valid at any time.
  nlohmann::json live() const;

 private:
  bool carry_;
  double dt_;
  double last_tilt_;
  double tilt_sum_ = 0.0;
  double deviation_max_ = 0.0;
  double return_sum_ = 0.0;
  int steps_ = 0;
  Outcome outcome_ = Outcome::kRunning;
};

// Decentralized controller for one agent: scripted (a = 0) or a policy
// network acting in mean mode.
class AgentPolicy {
 public:
  static AgentPolicy scripted();
  static AgentPolicy learned(std::shared_ptr<const Mlp<double>> net);

  bool is_learned() const { return net_ != nullptr; }
  PolicyAction act(const StackedObservation& obs) const;

 private:
  std::shared_ptr<const Mlp<double>> net_;
};

using PolicyPair = std::array<AgentPolicy, 2>;

PolicyPair scripted_pair();
// policy0 / policy1 from the checkpoint; a missing policy runs scripted.
PolicyPair policies_from_checkpoint(const Checkpoint& ckpt);

// Deterministic evaluation episode. With `replay`, writes a "replay_v1"
// JSONL log: header, one record per policy step, final record.
EpisodeMetrics run_episode(const Scenario& scenario, const EnvConfig& config,
                           const PolicyPair& policies, std::uint64_t seed,
                           std::ostream* replay = nullptr);

struct ReplayCheck {
  bool ok = false;
  int steps = 0;
  int first_mismatch = -1;
  std::string message;
  std::optional<EpisodeMetrics> metrics;  // from the final record
};

// Re-simulates every stored (world_state, commands) pair and compares the
// successor bit for bit.
ReplayCheck verify_replay(std::istream& in);

struct SuiteConfig {
  std::vector<std::string> scenarios;
  int n_seeds = 5;
  int episodes_per_seed = 20;  // 100 episodes per cell at 5 seeds
  std::uint64_t base_seed = 0;
  EnvConfig env;

  void validate() const;
  int episodes_per_cell() const { return n_seeds * episodes_per_seed; }
};

nlohmann::json to_json(const SuiteConfig& cfg);
SuiteConfig suite_config_from_json(const nlohmann::json& j);

// Reset seed of episode k within evaluation seed s.
std::uint64_t eval_episode_seed(std::uint64_t base_seed, int seed_index, int episode);

struct CellStats {
  std::vector<double> per_seed_sr;
  double sr_mean = 0.0;
  double sr_std = 0.0;  // sample standard deviation over seeds
  std::optional<double> gamma_mean;
  std::optional<double> tilt_rate_mean;
  double drop_rate = 0.0;
};

CellStats evaluate_cell(const Scenario& scenario, const EnvConfig& env, const PolicyPair& policies,
                        const SuiteConfig& cfg);
// Mean and sample std of per-seed SRs.
CellStats aggregate_seeds(const std::vector<std::vector<EpisodeMetrics>>& per_seed);

// (learned - scripted) / scripted; absent when the baseline is 0.
std::optional<double> relative_gain(double learned, double scripted);

struct ScenarioRow {
  std::string id;
  std::string category;
  CellStats learned;
  CellStats scripted;
  std::optional<double> delta;
};

struct CategoryRow {
  std::string category;
  double learned_sr = 0.0;
  double scripted_sr = 0.0;
  std::optional<double> delta;
  int scenarios = 0;
};

struct SuiteReport {
  SuiteConfig config;
  std::vector<ScenarioRow> rows;
  std::vector<CategoryRow> categories;
};

SuiteReport run_suite(const PolicyPair& learned, const SuiteConfig& cfg);
// Category means over the rows present, OSP / SCT / SLH / custom order.
std::vector<CategoryRow> aggregate_categories(const std::vector<ScenarioRow>& rows);
nlohmann::json to_json(const SuiteReport& report);
std::string render_table(const SuiteReport& report);

enum class Variant { kFull, kNoSkill, kNoCognition };
std::string_view to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct AblationRow {
  Variant variant;
  CellStats stats;
};

struct AblationReport {
  std::string scenario;
  SuiteConfig config;
  std::vector<AblationRow> rows;
};

// Same episode seeds for every variant.
AblationReport ablate(const std::string& scenario_id, const PolicyPair& learned,
                      const SuiteConfig& cfg,
                      const std::vector<Variant>& variants = {Variant::kFull, Variant::kNoSkill,
                                                              Variant::kNoCognition});
nlohmann::json to_json(const AblationReport& report);
std::string render_table(const AblationReport& report);

}  // namespace tandem

#endif  // TANDEM_EVAL_HPP_
