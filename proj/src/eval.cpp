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

#include "tandem/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tandem/error.hpp"

namespace tandem {

namespace {

using json = nlohmann::json;

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string percent(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(1) << 100.0 * v;
  return ss.str();
}

std::string signed_percent(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream ss;
  ss << std::showpos << std::fixed << std::setprecision(1) << 100.0 * *v << "%";
  return ss.str();
}

json cell_json(const CellStats& c) {
  return {{"sr_mean", c.sr_mean},
          {"sr_std", c.sr_std},
          {"per_seed_sr", c.per_seed_sr},
          {"gamma_mean", optional_json(c.gamma_mean)},
          {"tilt_rate_mean", optional_json(c.tilt_rate_mean)},
          {"drop_rate", c.drop_rate}};
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace

json to_json(const EpisodeMetrics& m) {
  return {{"outcome", std::string(to_string(m.outcome))},
          {"success", m.success},
          {"drop", m.drop},
          {"timeout", m.timeout},
          {"gamma_time", optional_json(m.gamma_time)},
          {"tilt_rate", optional_json(m.tilt_rate)},
          {"path_deviation_max", m.path_deviation_max},
          {"steps", m.steps},
          {"return", m.return_sum}};
}

// --- metrics ---

MetricsAccumulator::MetricsAccumulator(const TransportEnv& env)
    : carry_(env.sim().scenario().task_mode == TaskMode::kCarry),
      dt_(env.sim().config().dt_low()),
      last_tilt_(env.sim().tilt_angle(env.state())) {}

void MetricsAccumulator::add(const TransportEnv& env, const EnvStep& step) {
  if (ended()) throw Error("metrics: step after episode end");
  const double tilt = env.sim().tilt_angle(env.state());
  tilt_sum_ += std::abs(tilt - last_tilt_) / dt_;
  last_tilt_ = tilt;
  deviation_max_ =
      std::max(deviation_max_, path_deviation(env.tracker(), env.state().object.pose.position()));
  return_sum_ += step.rewards[0];
  ++steps_;
  outcome_ = step.outcome;
}

EpisodeMetrics MetricsAccumulator::result() const {
  if (!ended()) throw Error("metrics: episode has not ended");
  EpisodeMetrics m;
  m.outcome = outcome_;
  m.success = outcome_ == Outcome::kGoal;
  m.drop = outcome_ == Outcome::kDrop;
  m.timeout = outcome_ == Outcome::kTimeout;
  if (m.success) m.gamma_time = steps_ * dt_;
  if (carry_ && steps_ > 0) m.tilt_rate = tilt_sum_ / steps_ * 180.0 / kPi;
  m.path_deviation_max = deviation_max_;
  m.steps = steps_;
  m.return_sum = return_sum_;
  return m;
}

json MetricsAccumulator::live() const {
  return {{"steps", steps_},
          {"time", steps_ * dt_},
          {"return", return_sum_},
          {"tilt_rate", carry_ && steps_ > 0 ? json(tilt_sum_ / steps_ * 180.0 / kPi)
                                             : json(nullptr)},
          {"path_deviation_max", deviation_max_},
          {"outcome", std::string(to_string(outcome_))}};
}

// --- policies ---

AgentPolicy AgentPolicy::scripted() { return AgentPolicy(); }

AgentPolicy AgentPolicy::learned(std::shared_ptr<const Mlp<double>> net) {
  if (!net) throw Error("policy: null network");
  if (net->spec().input_dim != kObsDim || net->spec().output_dim != kActionDim ||
      net->spec().head != Head::kGaussianPolicy) {
    throw Error("policy: checkpoint network does not match the " + std::to_string(kObsDim) +
                "-dim observation / " + std::to_string(kActionDim) + "-dim action layout");
  }
  AgentPolicy p;
  p.net_ = std::move(net);
  return p;
}

PolicyAction AgentPolicy::act(const StackedObservation& obs) const {
  if (!net_) return PolicyAction::Zero();
  const Eigen::MatrixXd x = obs;
  return policy_forward<double>(*net_, x, PolicyMode::kMean).action.col(0);
}

PolicyPair scripted_pair() { return {AgentPolicy::scripted(), AgentPolicy::scripted()}; }

PolicyPair policies_from_checkpoint(const Checkpoint& ckpt) {
  PolicyPair pair = scripted_pair();
  bool any = false;
  for (const auto& n : ckpt.networks) {
    const int agent = n.name == "policy0" ? 0 : n.name == "policy1" ? 1 : -1;
    if (agent < 0) continue;
    pair[agent] = AgentPolicy::learned(std::make_shared<Mlp<double>>(n.net));
    any = true;
  }
  if (!any) throw Error("checkpoint has no policy networks");
  return pair;
}

// --- episodes ---

EpisodeMetrics run_episode(const Scenario& scenario, const EnvConfig& config,
                           const PolicyPair& policies, std::uint64_t seed, std::ostream* replay) {
  TransportEnv env(scenario, config);
  auto obs = env.reset(seed);
  MetricsAccumulator acc(env);
  if (replay != nullptr) {
    *replay << json{{"format", "replay_v1"},
                    {"scenario", to_json(scenario)},
                    {"env", to_json(config)},
                    {"seed", seed},
                    {"learned", {policies[0].is_learned(), policies[1].is_learned()}}}
                   .dump()
            << '\n';
  }
  while (!acc.ended()) {
    const JointAction actions{policies[0].act(obs[0]), policies[1].act(obs[1])};
    if (replay != nullptr) {
      const JointCommand cmd = env.commands(actions);
      const json record{{"t", env.steps()},
                        {"world_state", to_json(env.state())},
                        {"commands", {to_json(cmd[0]), to_json(cmd[1])}}};
      const EnvStep step = env.step(actions);
      json r = record;
      r["events"] = to_json(step.events);
      r["reward"] = step.rewards[0];
      *replay << r.dump() << '\n';
      acc.add(env, step);
      obs = step.obs;
    } else {
      const EnvStep step = env.step(actions);
      acc.add(env, step);
      obs = step.obs;
    }
  }
  const EpisodeMetrics m = acc.result();
  if (replay != nullptr) {
    *replay << json{{"t", env.steps()},
                    {"world_state", to_json(env.state())},
                    {"final", true},
                    {"metrics", to_json(m)}}
                   .dump()
            << '\n';
  }
  return m;
}

ReplayCheck verify_replay(std::istream& in) {
  ReplayCheck check;
  std::vector<json> lines;
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (!line.empty()) lines.push_back(json::parse(line));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("replay: malformed line: ") + e.what());
  }
  if (lines.size() < 2) throw Error("replay: need a header and a final record");
  const json& header = lines.front();
  if (header.value("format", "") != "replay_v1") throw Error("replay: not a replay_v1 log");
  if (!lines.back().value("final", false)) throw Error("replay: missing final record");
  try {
    const EnvConfig cfg = env_config_from_json(header.at("env"));
    const Simulator sim(scenario_from_json(header.at("scenario")), cfg.sim);
    for (std::size_t k = 1; k + 1 < lines.size(); ++k) {
      const json& rec = lines[k];
      const WorldState state = world_state_from_json(rec.at("world_state"));
      const JointCommand cmd{command_from_json(rec.at("commands").at(0)),
                             command_from_json(rec.at("commands").at(1))};
      const WorldState expected = world_state_from_json(lines[k + 1].at("world_state"));
      const StepResult next = sim.step(state, cmd);
      ++check.steps;
      if (!bitwise_equal(next.state, expected)) {
        check.first_mismatch = rec.at("t").get<int>();
        check.message = "successor mismatch at t=" + std::to_string(check.first_mismatch);
        return check;
      }
    }
    const json& m = lines.back().at("metrics");
    EpisodeMetrics metrics;
    const std::string outcome = m.at("outcome").get<std::string>();
    metrics.outcome = outcome == "goal"  ? Outcome::kGoal
                      : outcome == "drop" ? Outcome::kDrop
                      : outcome == "timeout" ? Outcome::kTimeout
                                             : Outcome::kRunning;
    metrics.success = m.at("success").get<bool>();
    metrics.drop = m.at("drop").get<bool>();
    metrics.timeout = m.at("timeout").get<bool>();
    metrics.gamma_time = optional_from(m, "gamma_time");
    metrics.tilt_rate = optional_from(m, "tilt_rate");
    metrics.path_deviation_max = m.at("path_deviation_max").get<double>();
    metrics.steps = m.at("steps").get<int>();
    metrics.return_sum = m.at("return").get<double>();
    check.metrics = metrics;
  } catch (const json::exception& e) {
    throw Error(std::string("replay: ") + e.what());
  }
  check.ok = true;
  return check;
}

// --- suite ---

void SuiteConfig::validate() const {
  if (scenarios.empty()) throw Error("suite: no scenarios");
  if (n_seeds < 5) throw Error("suite: n_seeds must be >= 5 for seed statistics");
  if (episodes_per_seed < 1) throw Error("suite: episodes_per_seed must be >= 1");
}

json to_json(const SuiteConfig& c) {
  return {{"scenarios", c.scenarios},
          {"n_seeds", c.n_seeds},
          {"episodes_per_seed", c.episodes_per_seed},
          {"base_seed", c.base_seed},
          {"env", to_json(c.env)}};
}

SuiteConfig suite_config_from_json(const json& j) {
  SuiteConfig c;
  try {
    c.scenarios = j.value("scenarios", c.scenarios);
    c.n_seeds = j.value("n_seeds", c.n_seeds);
    c.episodes_per_seed = j.value("episodes_per_seed", c.episodes_per_seed);
    c.base_seed = j.value("base_seed", c.base_seed);
    if (j.contains("env")) c.env = env_config_from_json(j.at("env"));
  } catch (const json::exception& e) {
    throw Error(std::string("suite config: ") + e.what());
  }
  return c;
}

std::uint64_t eval_episode_seed(std::uint64_t base_seed, int seed_index, int episode) {
  return mix_seed(mix_seed(base_seed ^ 0xe7a1ULL, static_cast<std::uint64_t>(seed_index)),
                  static_cast<std::uint64_t>(episode));
}

CellStats aggregate_seeds(const std::vector<std::vector<EpisodeMetrics>>& per_seed) {
  CellStats c;
  std::vector<double> gammas, tilts;
  int drops = 0, total = 0;
  for (const auto& episodes : per_seed) {
    int wins = 0;
    for (const auto& m : episodes) {
      wins += m.success ? 1 : 0;
      drops += m.drop ? 1 : 0;
      ++total;
      if (m.gamma_time) gammas.push_back(*m.gamma_time);
      if (m.tilt_rate) tilts.push_back(*m.tilt_rate);
    }
    c.per_seed_sr.push_back(episodes.empty() ? 0.0
                                             : static_cast<double>(wins) / episodes.size());
  }
  c.sr_mean = mean_of(c.per_seed_sr);
  if (c.per_seed_sr.size() > 1) {
    double ss = 0.0;
    for (double v : c.per_seed_sr) ss += (v - c.sr_mean) * (v - c.sr_mean);
    c.sr_std = std::sqrt(ss / static_cast<double>(c.per_seed_sr.size() - 1));
  }
  if (!gammas.empty()) c.gamma_mean = mean_of(gammas);
  if (!tilts.empty()) c.tilt_rate_mean = mean_of(tilts);
  c.drop_rate = total > 0 ? static_cast<double>(drops) / total : 0.0;
  return c;
}

CellStats evaluate_cell(const Scenario& scenario, const EnvConfig& env, const PolicyPair& policies,
                        const SuiteConfig& cfg) {
  std::vector<std::vector<EpisodeMetrics>> per_seed(cfg.n_seeds);
  for (int s = 0; s < cfg.n_seeds; ++s) {
    for (int k = 0; k < cfg.episodes_per_seed; ++k) {
      per_seed[s].push_back(
          run_episode(scenario, env, policies, eval_episode_seed(cfg.base_seed, s, k)));
    }
  }
  return aggregate_seeds(per_seed);
}

std::optional<double> relative_gain(double learned, double scripted) {
  if (scripted <= 0.0) return std::nullopt;
  return (learned - scripted) / scripted;
}

std::vector<CategoryRow> aggregate_categories(const std::vector<ScenarioRow>& rows) {
  std::vector<CategoryRow> out;
  for (const char* name : {"OSP", "SCT", "SLH", "custom"}) {
    CategoryRow c;
    c.category = name;
    for (const auto& r : rows) {
      if (r.category != name) continue;
      c.learned_sr += r.learned.sr_mean;
      c.scripted_sr += r.scripted.sr_mean;
      ++c.scenarios;
    }
    if (c.scenarios == 0) continue;
    c.learned_sr /= c.scenarios;
    c.scripted_sr /= c.scenarios;
    c.delta = relative_gain(c.learned_sr, c.scripted_sr);
    out.push_back(c);
  }
  return out;
}

SuiteReport run_suite(const PolicyPair& learned, const SuiteConfig& cfg) {
  cfg.validate();
  SuiteReport report;
  report.config = cfg;
  for (const auto& id : cfg.scenarios) {
    const Scenario scenario = load_scenario(id);
    ScenarioRow row;
    row.id = scenario.id;
    row.category = scenario_category(scenario.id);
    row.learned = evaluate_cell(scenario, cfg.env, learned, cfg);
    row.scripted = evaluate_cell(scenario, cfg.env, scripted_pair(), cfg);
    row.delta = relative_gain(row.learned.sr_mean, row.scripted.sr_mean);
    report.rows.push_back(std::move(row));
  }
  report.categories = aggregate_categories(report.rows);
  return report;
}

json to_json(const SuiteReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"id", r.id},
                    {"category", r.category},
                    {"learned", cell_json(r.learned)},
                    {"scripted", cell_json(r.scripted)},
                    {"delta", optional_json(r.delta)}});
  }
  json cats = json::array();
  for (const auto& c : report.categories) {
    cats.push_back({{"category", c.category},
                    {"learned_sr", c.learned_sr},
                    {"scripted_sr", c.scripted_sr},
                    {"delta", optional_json(c.delta)},
                    {"scenarios", c.scenarios}});
  }
  return {{"format", "suite_v1"},
          {"config", to_json(report.config)},
          {"episodes_per_cell", report.config.episodes_per_cell()},
          {"scenarios", rows},
          {"categories", cats}};
}

std::string render_table(const SuiteReport& report) {
  std::ostringstream ss;
  ss << "# " << report.config.episodes_per_cell() << " episodes per cell ("
     << report.config.n_seeds << " seeds x " << report.config.episodes_per_seed
     << "), SR in %\n";
  ss << pad("scenario", 10) << pad("cat", 8) << pad("script", 16) << pad("learned", 16)
     << "delta\n";
  for (const auto& r : report.rows) {
    ss << pad(r.id, 10) << pad(r.category, 8)
       << pad(percent(r.scripted.sr_mean) + " +- " + percent(r.scripted.sr_std), 16)
       << pad(percent(r.learned.sr_mean) + " +- " + percent(r.learned.sr_std), 16)
       << signed_percent(r.delta) << '\n';
  }
  for (const auto& c : report.categories) {
    ss << pad("mean", 10) << pad(c.category, 8) << pad(percent(c.scripted_sr), 16)
       << pad(percent(c.learned_sr), 16) << signed_percent(c.delta) << '\n';
  }
  return ss.str();
}

// --- ablation ---

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoSkill: return "no_skill";
    case Variant::kNoCognition: return "no_cognition";
  }
  return "full";
}

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::kFull;
  if (s == "no_skill") return Variant::kNoSkill;
  if (s == "no_cognition") return Variant::kNoCognition;
  throw Error("unknown ablation variant '" + s + "'");
}

AblationReport ablate(const std::string& scenario_id, const PolicyPair& learned,
                      const SuiteConfig& cfg, const std::vector<Variant>& variants) {
  SuiteConfig c = cfg;
  c.scenarios = {scenario_id};
  c.validate();
  const Scenario scenario = load_scenario(scenario_id);
  AblationReport report;
  report.scenario = scenario.id;
  report.config = c;
  for (Variant v : variants) {
    EnvConfig env = c.env;
    PolicyPair policies = learned;
    if (v == Variant::kNoSkill) policies = scripted_pair();
    if (v == Variant::kNoCognition) env.use_cognition = false;
    report.rows.push_back({v, evaluate_cell(scenario, env, policies, c)});
  }
  return report;
}

json to_json(const AblationReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    json cell = cell_json(r.stats);
    cell["variant"] = std::string(to_string(r.variant));
    rows.push_back(std::move(cell));
  }
  return {{"format", "ablation_v1"},
          {"scenario", report.scenario},
          {"config", to_json(report.config)},
          {"episodes_per_cell", report.config.episodes_per_cell()},
          {"variants", rows}};
}

std::string render_table(const AblationReport& report) {
  std::ostringstream ss;
  ss << "# " << report.scenario << ", " << report.config.episodes_per_cell()
     << " episodes per variant, SR in %, gamma in s\n";
  ss << pad("variant", 14) << pad("SR", 16) << "gamma\n";
  for (const auto& r : report.rows) {
    std::ostringstream g;
    if (r.stats.gamma_mean) {
      g << std::fixed << std::setprecision(1) << *r.stats.gamma_mean;
    } else {
      g << "--";
    }
    ss << pad(std::string(to_string(r.variant)), 14)
       << pad(percent(r.stats.sr_mean) + " +- " + percent(r.stats.sr_std), 16) << g.str() << '\n';
  }
  return ss.str();
}

}  // namespace tandem
