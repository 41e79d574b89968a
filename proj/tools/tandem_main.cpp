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

// Command-line entry point: train, evaluate, replay, plan, diagnose, serve.

#include <malloc.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tandem/diagnostics.hpp"
#include "tandem/error.hpp"
#include "tandem/eval.hpp"
#include "tandem/hitl.hpp"
#include "tandem/io.hpp"
#include "tandem/run_config.hpp"
#include "tandem/trainer.hpp"

namespace {

using json = nlohmann::json;
using namespace tandem;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  bool print_config = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "JSON config file merged over the defaults")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Dotted override, e.g. --set env.reward.beta=1.0");
  cmd->add_flag("--print-config", c.print_config, "Print the resolved config and exit");
  cmd->add_option("--out", c.out, "Output directory (default $TANDEM_OUT_ROOT/<command>)");
}

// Resolves the command config; the stored copy carries the command name,
// which is dropped again when it is read back.
json resolve(const std::string& command, const json& defaults, const Common& c,
             const std::vector<std::string>& flags) {
  json cfg = defaults;
  if (!c.config_file.empty()) {
    json patch = read_json(c.config_file);
    if (!patch.is_object()) throw Error(c.config_file + ": config must be a JSON object");
    if (patch.contains("command")) {
      if (patch.at("command") != command) {
        throw Error(c.config_file + ": config was written by '" +
                    patch.at("command").get<std::string>() + "'");
      }
      patch.erase("command");
    }
    cfg.merge_patch(patch);
  }
  for (const auto& o : c.overrides) apply_override(cfg, o);
  for (const auto& f : flags) apply_override(cfg, f);
  return cfg;
}

std::string prepare_out(const std::string& command, const Common& c, const json& cfg) {
  const std::string dir = output_dir(c.out, command);
  make_directories(dir);
  json stored = cfg;
  stored["command"] = command;
  write_json(dir + "/config.json", stored);
  write_json(dir + "/schema.json", observation_schema());
  return dir;
}

std::string resolve_checkpoint(const std::string& p) {
  namespace fs = std::filesystem;
  const fs::path path(p);
  const std::vector<fs::path> candidates{path, fs::path(p + ".ckpt"),
                                         path.parent_path() / "ckpt" / (path.filename().string() + ".ckpt"),
                                         path / "ckpt" / "final.ckpt"};
  for (const auto& c : candidates) {
    if (fs::is_regular_file(c)) return c.string();
  }
  throw Error("checkpoint not found: " + p);
}

PolicyPair load_policies(const std::string& ckpt) {
  if (ckpt.empty()) return scripted_pair();
  return policies_from_checkpoint(read_checkpoint(resolve_checkpoint(ckpt)));
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

std::vector<std::string> nine_scenarios() {
  return {"S11", "S12", "S13", "S21", "S22", "S23", "S31", "S32", "S33"};
}

// --- commands ---

int cmd_train(const std::string& name, bool single, const Common& c,
              const std::vector<std::string>& flags, const std::string& resume) {
  TrainConfig defaults;
  defaults.single_agent = single;
  json cfg_json = resolve(name, to_json(defaults), c, flags);
  if (single) cfg_json["single_agent"] = true;
  TrainConfig cfg = train_config_from_json(cfg_json);
  if (c.print_config) {
    print(to_json(cfg));
    return 0;
  }
  const std::string dir = prepare_out(name, c, to_json(cfg));
  TrainOptions opt;
  opt.out_dir = dir;
  opt.stop = &g_stop;
  if (!resume.empty()) opt.resume_state = resume;
  opt.on_metrics = [](const json& m) {
    std::ostringstream line;
    line << "update " << m.at("update") << " step " << m.at("step") << " sr " << m.at("sr")
         << " return " << m.at("return_mean") << " lr " << m.at("lr");
    std::cerr << line.str() << std::endl;
  };
  const TrainResult r = single ? train_single_agent(cfg, opt) : train(cfg, opt);
  std::cerr << (r.interrupted ? "interrupted; " : "") << "checkpoint written to " << dir
            << "/ckpt/final.ckpt" << std::endl;
  return 0;
}

int cmd_eval(const Common& c, const std::vector<std::string>& flags) {
  SuiteConfig suite;
  suite.scenarios = nine_scenarios();
  const json defaults{{"ckpt", ""}, {"suite", to_json(suite)}};
  const json cfg = resolve("eval", defaults, c, flags);
  if (c.print_config) {
    print(cfg);
    return 0;
  }
  suite = suite_config_from_json(cfg.at("suite"));
  suite.validate();
  const PolicyPair policies = load_policies(cfg.value("ckpt", ""));
  const std::string dir = prepare_out("eval", c, cfg);
  const SuiteReport report = run_suite(policies, suite);
  write_json(dir + "/report.json", to_json(report));
  write_file(dir + "/report.txt", render_table(report));
  std::cout << render_table(report);
  return 0;
}

int cmd_ablate(const Common& c, const std::vector<std::string>& flags) {
  SuiteConfig suite;
  suite.scenarios = {"S33"};
  const json defaults{{"ckpt", ""},
                      {"scenario", "S33"},
                      {"variants", {"full", "no_skill", "no_cognition"}},
                      {"suite", to_json(suite)}};
  const json cfg = resolve("ablate", defaults, c, flags);
  if (c.print_config) {
    print(cfg);
    return 0;
  }
  if (cfg.value("ckpt", "").empty()) throw Error("ablate: --ckpt is required");
  suite = suite_config_from_json(cfg.at("suite"));
  std::vector<Variant> variants;
  for (const auto& v : cfg.at("variants")) variants.push_back(variant_from_string(v.get<std::string>()));
  const PolicyPair policies = load_policies(cfg.at("ckpt").get<std::string>());
  const std::string dir = prepare_out("ablate", c, cfg);
  const AblationReport report =
      ablate(cfg.at("scenario").get<std::string>(), policies, suite, variants);
  write_json(dir + "/report.json", to_json(report));
  write_file(dir + "/report.txt", render_table(report));
  std::cout << render_table(report);
  return 0;
}

int cmd_replay(const Common& c, const std::vector<std::string>& flags, const std::string& verify) {
  if (!verify.empty()) {
    std::ifstream in(verify);
    if (!in) throw Error("cannot open " + verify);
    const ReplayCheck check = verify_replay(in);
    print({{"ok", check.ok},
           {"steps", check.steps},
           {"first_mismatch", check.first_mismatch},
           {"message", check.message}});
    return check.ok ? 0 : 1;
  }
  const json defaults{{"scenario", "corridor"}, {"seed", 0}, {"ckpt", ""}, {"env", to_json(EnvConfig{})}};
  const json cfg = resolve("replay", defaults, c, flags);
  if (c.print_config) {
    print(cfg);
    return 0;
  }
  const Scenario scenario = load_scenario(cfg.at("scenario").get<std::string>());
  const EnvConfig env = env_config_from_json(cfg.at("env"));
  const PolicyPair policies = load_policies(cfg.value("ckpt", ""));
  const std::string dir = prepare_out("replay", c, cfg);
  const std::string path = dir + "/replay.jsonl";
  EpisodeMetrics m;
  {
    std::ofstream out(path, std::ios::trunc);
    m = run_episode(scenario, env, policies, cfg.at("seed").get<std::uint64_t>(), &out);
  }
  std::ifstream in(path);
  const ReplayCheck check = verify_replay(in);
  json result{{"metrics", to_json(m)}, {"replay", path}, {"verified", check.ok}, {"steps", check.steps}};
  write_json(dir + "/metrics.json", result);
  print(result);
  return check.ok ? 0 : 1;
}

int cmd_plan(const Common& c, const std::vector<std::string>& flags) {
  EnvConfig env;
  const json defaults{{"scenario", "S22"},
                      {"seed", 0},
                      {"cognition", to_json(env)["cognition"]},
                      {"planner", json::array()},
                      {"planner_timeout_ms", 10000}};
  const json cfg = resolve("plan", defaults, c, flags);
  if (c.print_config) {
    print(cfg);
    return 0;
  }
  json env_json = to_json(env);
  env_json["cognition"] = cfg.at("cognition");
  env = env_config_from_json(env_json);
  const Scenario scenario = load_scenario(cfg.at("scenario").get<std::string>());
  const Simulator sim(scenario, env.sim);
  const WorldState state = sim.reset(cfg.at("seed").get<std::uint64_t>());
  const auto start = std::chrono::steady_clock::now();
  json out;
  const auto planner = cfg.at("planner").get<std::vector<std::string>>();
  if (planner.empty()) {
    out = to_json(plan_anchors(scenario, state, env.cognition));
  } else {
    ExternalPlannerConfig pc;
    pc.command = planner;
    pc.timeout = std::chrono::milliseconds(cfg.at("planner_timeout_ms").get<int>());
    const AdapterResult r = external_adapter(scenario, state, env.cognition, pc);
    out = to_json(r.anchors);
    out["external_accepted"] = r.external_accepted;
    out["warnings"] = r.warnings;
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  const std::string dir = prepare_out("plan", c, cfg);
  write_json(dir + "/plan.json", out);
  write_json(dir + "/metrics.json", {{"anchors", out.at("anchors").size()}, {"planning_ms", ms}});
  std::cout << out.dump() << std::endl;
  return 0;
}

int cmd_diag_grad(const Common& c, const std::vector<std::string>& flags) {
  const GradCheckConfig d;
  const json defaults{{"instances", d.instances}, {"batch", d.batch}, {"coords", d.coords},
                      {"h", d.h}, {"seed", d.seed}, {"hidden", d.hidden}, {"threshold", 1e-4}};
  const json cfg = resolve("diag-grad", defaults, c, flags);
  if (c.print_config) {
    print(cfg);
    return 0;
  }
  GradCheckConfig g;
  g.instances = cfg.at("instances").get<int>();
  g.batch = cfg.at("batch").get<int>();
  g.coords = cfg.at("coords").get<int>();
  g.h = cfg.at("h").get<double>();
  g.seed = cfg.at("seed").get<std::uint64_t>();
  g.hidden = cfg.at("hidden").get<std::vector<int>>();
  const double threshold = cfg.at("threshold").get<double>();
  const std::string dir = prepare_out("diag-grad", c, cfg);
  const GradCheckReport r = gradient_check(g);
  write_json(dir + "/metrics.json", to_json(r));
  std::cout << "max relative error " << r.max_rel_error << " over " << r.instances.size()
            << " instances (" << r.seconds << " s)" << std::endl;
  return r.max_rel_error < threshold ? 0 : 1;
}

int cmd_diag_prop1(const Common& c, const std::vector<std::string>& flags) {
  const json defaults{{"seed", 0}, {"own_actions", 3}, {"partner_actions", 4}, {"steps", 20}};
  const json cfg = resolve("diag-prop1", defaults, c, flags);
  if (c.print_config) {
    print(cfg);
    return 0;
  }
  const Prop1Config toy = default_prop1_config(cfg.at("seed").get<std::uint64_t>(),
                                               cfg.at("own_actions").get<int>(),
                                               cfg.at("partner_actions").get<int>(),
                                               cfg.at("steps").get<int>());
  const Prop1Report r = prop1_diagnostic(toy);
  const std::string dir = prepare_out("diag-prop1", c, cfg);
  write_json(dir + "/metrics.json", to_json(r));
  std::cout << "joint-action target drift " << r.max_joint_drift
            << ", marginalized target drift " << r.max_marginal_drift << std::endl;
  return r.max_joint_drift == 0.0 ? 0 : 1;
}

int cmd_serve(const Common& c, const std::vector<std::string>& flags) {
  const ServerConfig sd;
  const SessionConfig ss;
  const json defaults{{"scenario", "S21"},     {"ckpt", ""},
                      {"seed", ss.seed},       {"stale_ms", ss.stale_ms},
                      {"host", sd.host},       {"port", sd.port},
                      {"speed", sd.speed},     {"broadcast_hz", sd.broadcast_hz},
                      {"env", to_json(EnvConfig{})}};
  const json cfg = resolve("serve", defaults, c, flags);
  if (c.print_config) {
    print(cfg);
    return 0;
  }
  const Scenario scenario = load_scenario(cfg.at("scenario").get<std::string>());
  SessionConfig session;
  session.env = env_config_from_json(cfg.at("env"));
  session.seed = cfg.at("seed").get<std::uint64_t>();
  session.stale_ms = cfg.at("stale_ms").get<double>();
  const PolicyPair policies = load_policies(cfg.value("ckpt", ""));
  const std::string dir = prepare_out("serve", c, cfg);
  ServerConfig sc;
  sc.host = cfg.at("host").get<std::string>();
  sc.port = cfg.at("port").get<int>();
  sc.speed = cfg.at("speed").get<double>();
  sc.broadcast_hz = cfg.at("broadcast_hz").get<double>();
  sc.command_log_path = dir + "/commands.jsonl";
  sc.metrics_path = dir + "/metrics.jsonl";
  Server server(scenario, session, policies[kRobotAgent], sc);
  const int port = server.start();
  std::cerr << "serving " << scenario.id << " (" << kHitlSchema << ") on " << sc.host << ":"
            << port << std::endl;
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  std::cerr << "session log written to " << sc.command_log_path << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees large temporaries in a tight loop.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  CLI::App app{"tandem: cooperative object transport with a cognition layer and CTDE training"};
  app.require_subcommand(1, 1);
  Common common;
  std::string scenario, ckpt, resume, verify, variants;
  std::vector<std::string> scenarios;
  std::int64_t steps = -1;
  long long seed = -1;
  int seeds = -1, episodes = -1, port = -1;

  auto* train = app.add_subcommand("train", "Train both agents (joint-critic PPO)");
  auto* train_single = app.add_subcommand("train-single", "Train the robot with a scripted partner");
  for (auto* cmd : {train, train_single}) {
    add_common(cmd, common);
    cmd->add_option("--scenario", scenario, "Scenario id or JSON path");
    cmd->add_option("--seed", seed, "Training seed");
    cmd->add_option("--steps", steps, "Total environment steps");
    cmd->add_option("--resume", resume, "Trainer-state sidecar (.state) to resume from")
        ->check(CLI::ExistingFile);
  }
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against the scripted baseline");
  add_common(eval, common);
  eval->add_option("--scenario", scenarios, "Scenario ids (default: all nine)");
  eval->add_option("--ckpt", ckpt, "Checkpoint (file, run dir, or run/final)");
  eval->add_option("--seeds", seeds, "Evaluation seeds (>= 5)");
  eval->add_option("--episodes", episodes, "Episodes per seed");
  auto* abl = app.add_subcommand("ablate", "Ablation: full, no_skill, no_cognition");
  add_common(abl, common);
  abl->add_option("--scenario", scenario, "Scenario id");
  abl->add_option("--ckpt", ckpt, "Checkpoint");
  abl->add_option("--variants", variants, "Comma-separated variants");
  abl->add_option("--seeds", seeds, "Evaluation seeds (>= 5)");
  abl->add_option("--episodes", episodes, "Episodes per seed");
  auto* replay = app.add_subcommand("replay", "Record and verify a replay log, or verify one");
  add_common(replay, common);
  replay->add_option("--scenario", scenario, "Scenario id");
  replay->add_option("--seed", seed, "Episode seed");
  replay->add_option("--ckpt", ckpt, "Checkpoint (scripted when absent)");
  replay->add_option("--verify", verify, "Existing replay_v1 log to verify")->check(CLI::ExistingFile);
  auto* plan = app.add_subcommand("plan", "Print the anchor sequence for a scenario");
  add_common(plan, common);
  plan->add_option("--scenario", scenario, "Scenario id");
  plan->add_option("--seed", seed, "Reset seed");
  auto* grad = app.add_subcommand("diag-grad", "Backprop versus finite differences");
  add_common(grad, common);
  grad->add_option("--seed", seed, "Seed");
  auto* prop1 = app.add_subcommand("diag-prop1", "Critic target drift under partner drift");
  add_common(prop1, common);
  prop1->add_option("--seed", seed, "Seed");
  auto* serve = app.add_subcommand("serve", "Live human-in-the-loop session server");
  add_common(serve, common);
  serve->add_option("--scenario", scenario, "Scenario id");
  serve->add_option("--ckpt", ckpt, "Robot checkpoint (scripted when absent)");
  serve->add_option("--port", port, "TCP port (0 picks one)");
  serve->add_option("--seed", seed, "Episode seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  std::vector<std::string> flags;
  const auto quoted = [](const std::string& s) { return json(s).dump(); };
  try {
    if (train->parsed() || train_single->parsed()) {
      if (!scenario.empty()) flags.push_back("scenario=" + quoted(scenario));
      if (seed >= 0) flags.push_back("seed=" + std::to_string(seed));
      if (steps >= 0) flags.push_back("total_steps=" + std::to_string(steps));
      const bool single = train_single->parsed();
      return cmd_train(single ? "train-single" : "train", single, common, flags, resume);
    }
    if (eval->parsed() || abl->parsed()) {
      if (!ckpt.empty()) flags.push_back("ckpt=" + quoted(ckpt));
      if (seeds >= 0) flags.push_back("suite.n_seeds=" + std::to_string(seeds));
      if (episodes >= 0) flags.push_back("suite.episodes_per_seed=" + std::to_string(episodes));
      if (eval->parsed()) {
        if (!scenarios.empty()) flags.push_back("suite.scenarios=" + json(scenarios).dump());
        return cmd_eval(common, flags);
      }
      if (!scenario.empty()) flags.push_back("scenario=" + quoted(scenario));
      if (!variants.empty()) {
        json list = json::array();
        std::stringstream ss(variants);
        for (std::string v; std::getline(ss, v, ',');) list.push_back(v);
        flags.push_back("variants=" + list.dump());
      }
      return cmd_ablate(common, flags);
    }
    if (replay->parsed()) {
      if (!scenario.empty()) flags.push_back("scenario=" + quoted(scenario));
      if (seed >= 0) flags.push_back("seed=" + std::to_string(seed));
      if (!ckpt.empty()) flags.push_back("ckpt=" + quoted(ckpt));
      return cmd_replay(common, flags, verify);
    }
    if (plan->parsed()) {
      if (!scenario.empty()) flags.push_back("scenario=" + quoted(scenario));
      if (seed >= 0) flags.push_back("seed=" + std::to_string(seed));
      return cmd_plan(common, flags);
    }
    if (grad->parsed()) {
      if (seed >= 0) flags.push_back("seed=" + std::to_string(seed));
      return cmd_diag_grad(common, flags);
    }
    if (prop1->parsed()) {
      if (seed >= 0) flags.push_back("seed=" + std::to_string(seed));
      return cmd_diag_prop1(common, flags);
    }
    if (serve->parsed()) {
      if (!scenario.empty()) flags.push_back("scenario=" + quoted(scenario));
      if (!ckpt.empty()) flags.push_back("ckpt=" + quoted(ckpt));
      if (port >= 0) flags.push_back("port=" + std::to_string(port));
      if (seed >= 0) flags.push_back("seed=" + std::to_string(seed));
      return cmd_serve(common, flags);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: config: " << e.what() << std::endl;
    return 1;
  }
  return 2;
}
