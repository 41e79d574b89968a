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

// Acceptance gate: one PASS/FAIL line per criterion. Exits non-zero when any
// primary criterion fails.

#include <arpa/inet.h>
#include <malloc.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tandem/diagnostics.hpp"
#include "tandem/eval.hpp"
#include "tandem/hitl.hpp"
#include "tandem/io.hpp"
#include "tandem/trainer.hpp"

namespace tandem {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

PolicyAction random_action(Rng& rng) {
  PolicyAction a;
  for (int k = 0; k < kActionDim; ++k) a(k) = 2.0 * uniform01(rng) - 1.0;
  return a;
}

// Desk-scale recipe shared by every training run below.
TrainConfig desk_config(const std::string& scenario, std::int64_t steps, std::uint64_t seed) {
  TrainConfig c;
  c.scenario = scenario;
  c.num_envs = 16;
  c.horizon = 64;
  c.minibatch_mode = MinibatchMode::kCount;
  c.minibatch = 16;
  c.total_steps = steps;
  c.seed = seed;
  return c;
}

SuiteConfig eval_suite(std::uint64_t base_seed) {
  SuiteConfig s;
  s.n_seeds = 5;
  s.episodes_per_seed = 20;
  s.base_seed = base_seed;
  return s;
}

// --- criteria ---

Verdict dimensions() {
  int checked = 0;
  bool ok = StackedObservation::RowsAtCompileTime == 210 && PolicyAction::RowsAtCompileTime == 11;
  const auto schema = observation_schema();
  const auto total = [&](const char* key) {
    int n = 0;
    for (const auto& f : schema.at(key)) n += f.value("size", 1);
    return n;
  };
  const int schema_total = total("observation");
  ok = ok && schema_total == 210 && total("frame") == kFrameDim && total("action") == 11;
  for (const auto& id : builtin_scenario_ids()) {
    for (bool cognition : {true, false}) {
      EnvConfig cfg;
      cfg.use_cognition = cognition;
      TransportEnv env(builtin_scenario(id), cfg);
      auto obs = env.reset(3);
      for (int t = 0; t < 3; ++t) {
        for (int i = 0; i < 2; ++i) {
          ok = ok && obs[i].size() == 210 && obs[i].allFinite();
          ++checked;
        }
        const auto step = env.step({PolicyAction::Zero(), PolicyAction::Zero()});
        if (step.done()) break;
        obs = step.obs;
      }
    }
  }
  // Policy networks built by the trainer map 210 -> 11.
  MlpSpec spec;
  spec.input_dim = kObsDim;
  spec.hidden = {16};
  spec.output_dim = kActionDim;
  spec.head = Head::kGaussianPolicy;
  const auto net = init_mlp<double>(spec, 1);
  const auto out = policy_forward(net, Eigen::MatrixXd(Eigen::MatrixXd::Zero(210, 3)), PolicyMode::kMean);
  ok = ok && out.action.rows() == 11 && out.action.cols() == 3;
  return {ok, std::to_string(checked) + " observations over " +
                  std::to_string(builtin_scenario_ids().size()) +
                  " scenarios x 2 modes; schema sums to " + std::to_string(schema_total)};
}

Verdict ray_endpoints() {
  const double d_max = 4.0;
  bool ends = ray_feature(0.0, d_max) == 1.0 && ray_feature(d_max, d_max) == 0.0 &&
              ray_feature(2.0 * d_max, d_max) == 0.0;
  Rng rng(11);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double d = 1.5 * d_max * uniform01(rng);
    const double expected = d >= d_max ? 0.0 : 1.0 - d / d_max;
    worst = std::max(worst, std::abs(ray_feature(d, d_max) - expected));
  }
  return {ends && worst <= 1e-12, "endpoints exact; max |err| over 1e4 draws " + fmt("%.2e", worst)};
}

Verdict potential_condition() {
  Rng rng(12);
  int pairs = 0;
  int mismatches = 0;
  const auto& ids = builtin_scenario_ids();
  const int per = 10000 / static_cast<int>(ids.size()) + 1;
  for (const auto& id : ids) {
    TransportEnv env(builtin_scenario(id), {});
    env.reset(rng());
    for (int k = 0; k < per && pairs < 10000; ++k) {
      const int deviator = static_cast<int>(rng() % 2);
      JointAction a{random_action(rng), random_action(rng)};
      JointAction b = a;
      b[deviator] = random_action(rng);
      TransportEnv ea = env;
      TransportEnv eb = env;
      const auto ra = ea.step(a);
      const auto rb = eb.step(b);
      const double d0 = rb.rewards[0] - ra.rewards[0];
      const double d1 = rb.rewards[1] - ra.rewards[1];
      if (std::bit_cast<std::uint64_t>(d0) != std::bit_cast<std::uint64_t>(d1)) ++mismatches;
      ++pairs;
      const auto step = env.step({random_action(rng), random_action(rng)});
      if (step.done()) env.reset(rng());
    }
  }
  return {pairs == 10000 && mismatches == 0,
          std::to_string(pairs) + " unilateral-deviation pairs, " + std::to_string(mismatches) +
              " non-identical deltas"};
}

Verdict gradient_oracle() {
  GradCheckConfig cfg;
  cfg.instances = 100;
  cfg.seed = 2026;
  const auto r = gradient_check(cfg);
  int kinks = 0;
  for (const auto& i : r.instances) kinks += i.kink_coords;
  return {r.max_rel_error < 1e-4 && r.seconds < 120.0,
          "max rel err " + fmt("%.2e", r.max_rel_error) + " over " +
              std::to_string(r.instances.size()) + " instances in " + fmt("%.1f", r.seconds) +
              " s (" + std::to_string(kinks) + " kink-side coordinates)"};
}

Verdict gae_oracle() {
  Rng rng(13);
  double worst = 0.0;
  for (int ep = 0; ep < 1000; ++ep) {
    const int n = 5 + static_cast<int>(rng() % 40);
    RowVector r(n), v(n), nv(n);
    std::vector<std::uint8_t> done(n, 0);
    for (int t = 0; t < n; ++t) {
      r(t) = standard_normal(rng);
      v(t) = standard_normal(rng);
      nv(t) = standard_normal(rng);
      done[t] = uniform01(rng) < 0.1;
    }
    const double gamma = 0.9 + 0.1 * uniform01(rng);
    const double lambda = uniform01(rng);
    const RowVector adv = gae(r, v, nv, done, gamma, lambda);
    for (int t = 0; t < n; ++t) {
      double direct = 0.0;
      double w = 1.0;
      for (int k = t; k < n; ++k) {
        direct += w * (r(k) + gamma * (done[k] ? 0.0 : nv(k)) - v(k));
        if (done[k]) break;
        w *= gamma * lambda;
      }
      worst = std::max(worst, std::abs(adv(t) - direct));
    }
  }
  return {worst <= 1e-10, "max |recursive - direct| over 1000 episodes " + fmt("%.2e", worst)};
}

Verdict clip_semantics() {
  MlpSpec spec;
  spec.input_dim = kObsDim;
  spec.output_dim = kActionDim;
  spec.head = Head::kGaussianPolicy;
  const auto net = init_mlp<double>(spec, 14);
  Rng rng(15);
  int zero = 0;
  int total = 0;
  int open_nonzero = 0;
  for (int k = 0; k < 40; ++k) {
    Eigen::MatrixXd obs(kObsDim, 1);
    for (int r = 0; r < kObsDim; ++r) obs(r, 0) = standard_normal(rng);
    const auto out = policy_forward(net, obs, PolicyMode::kSample, &rng);
    const bool positive = k % 2 == 0;
    const double ratio = positive ? 1.2 + 0.5 * uniform01(rng) + 1e-6 : 0.8 - 0.5 * uniform01(rng) - 1e-6;
    const double adv = positive ? 0.1 + uniform01(rng) : -0.1 - uniform01(rng);
    const RowVector old = (out.log_prob.array() - std::log(ratio)).matrix();
    const RowVector adv_row = RowVector::Constant(1, adv);
    const auto loss = ppo_policy_loss(net, obs, out.pre_squash, old, adv_row, {0.2, 0.0});
    zero += loss.grad.isZero(0.0) ? 1 : 0;
    ++total;
    // Opposite side of the bound keeps a gradient.
    const double inside = positive ? 0.7 : 1.3;
    const RowVector open_old = (out.log_prob.array() - std::log(inside)).matrix();
    const auto open = ppo_policy_loss(net, obs, out.pre_squash, open_old, adv_row, {0.2, 0.0});
    open_nonzero += open.grad.norm() > 0.0 ? 1 : 0;
  }
  return {zero == total && open_nonzero == total,
          std::to_string(zero) + "/" + std::to_string(total) +
              " clipped samples with exactly zero gradient (A>0,r>1+eps and A<0,r<1-eps); " +
              std::to_string(open_nonzero) + "/" + std::to_string(total) + " unclipped controls non-zero"};
}

Verdict prop1() {
  const auto t0 = Clock::now();
  double joint = 0.0;
  double oracle_err = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto c = default_prop1_config(seed, 3, 4, 20);
    const auto r = prop1_diagnostic(c);
    joint = std::max(joint, r.max_joint_drift);
    for (std::size_t s = 0; s < r.steps.size(); ++s) {
      for (int i = 0; i < c.q.rows(); ++i) {
        double exact = 0.0;
        for (int j = 0; j < c.q.cols(); ++j) {
          exact += (c.partner_schedule[s + 1](j) - c.partner_schedule[s](j)) * c.q(i, j);
        }
        oracle_err = std::max(oracle_err, std::abs(r.steps[s].marginal_drift(i) - exact));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {joint <= 1e-12 && oracle_err <= 1e-12 && secs < 10.0,
          "joint drift " + fmt("%.1e", joint) + ", marginal vs exact sum " + fmt("%.1e", oracle_err) +
              ", " + fmt("%.3f", secs) + " s"};
}

Checkpoint train_to(const TrainConfig& cfg, const std::string& dir, bool single = false) {
  TrainOptions o;
  o.out_dir = dir;
  return (single ? train_single_agent(cfg, o) : train(cfg, o)).checkpoint;
}

Verdict corridor_learning(const std::string& out) {
  const std::int64_t steps = 10240;
  int passing = 0;
  std::string per_seed;
  double worst_secs = 0.0;
  const Scenario corridor = load_scenario("corridor");
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t0 = Clock::now();
    const auto ck = train_to(desk_config("corridor", steps, seed), out + "/corridor_s" + std::to_string(seed));
    worst_secs = std::max(worst_secs, seconds_since(t0));
    const auto cell = evaluate_cell(corridor, EnvConfig{}, policies_from_checkpoint(ck), eval_suite(100 + seed));
    passing += cell.sr_mean >= 0.9 ? 1 : 0;
    per_seed += (per_seed.empty() ? "" : " ") + fmt("%.0f", 100.0 * cell.sr_mean);
  }
  const auto scripted = evaluate_cell(corridor, EnvConfig{}, scripted_pair(), eval_suite(100));
  return {passing >= 4 && steps <= 5'000'000 && worst_secs <= 7200.0,
          "SR% per seed [" + per_seed + "] over 100 episodes each, " + std::to_string(passing) +
              "/5 seeds >= 90 with " + std::to_string(steps) + " steps, max " +
              fmt("%.0f", worst_secs) + " s per run; scripted baseline " +
              fmt("%.0f", 100.0 * scripted.sr_mean) + "%"};
}

struct Trained {
  PolicyPair marl;
  PolicyPair single;
};

Verdict baseline_ordering(const std::string& out, std::map<std::string, Trained>& trained) {
  bool ok = true;
  std::string detail;
  for (const auto& [id, steps] : {std::pair<std::string, std::int64_t>{"S21", 20480}, {"S33", 40960}}) {
    const auto marl_ck = train_to(desk_config(id, steps, 1), out + "/" + id + "_marl");
    const auto single_ck = train_to(desk_config(id, 20480, 1), out + "/" + id + "_single", true);
    Trained t{policies_from_checkpoint(marl_ck), policies_from_checkpoint(single_ck)};
    const Scenario s = load_scenario(id);
    const auto suite = eval_suite(200);
    const double marl = evaluate_cell(s, EnvConfig{}, t.marl, suite).sr_mean;
    const double scripted = evaluate_cell(s, EnvConfig{}, scripted_pair(), suite).sr_mean;
    const double single = evaluate_cell(s, EnvConfig{}, t.single, suite).sr_mean;
    ok = ok && marl >= scripted && marl >= single;
    detail += id + " MARL " + fmt("%.0f", 100 * marl) + " / scripted " + fmt("%.0f", 100 * scripted) +
              " / single " + fmt("%.0f", 100 * single) + "; ";
    trained[id] = t;
  }
  const auto report = ablate("S33", trained["S33"].marl, eval_suite(300));
  const double full = report.rows[0].stats.sr_mean;
  const double no_skill = report.rows[1].stats.sr_mean;
  const double no_cog = report.rows[2].stats.sr_mean;
  ok = ok && full > no_skill && full > no_cog;
  detail += "S33 ablation full " + fmt("%.0f", 100 * full) + " / no_skill " + fmt("%.0f", 100 * no_skill) +
            " / no_cognition " + fmt("%.0f", 100 * no_cog) + " (SR%, 100 paired episodes per cell)";
  return {ok, detail};
}

std::vector<json> strip_wallclock(std::vector<json> lines) {
  for (auto& l : lines) l.erase("wallclock");
  return lines;
}

Verdict determinism_and_replay(const std::string& out, const std::map<std::string, Trained>& trained) {
  TrainConfig c = desk_config("S21", 3 * 4 * 32, 9);
  c.num_envs = 4;
  c.horizon = 32;
  c.minibatch = 4;
  const auto a = strip_wallclock(train(c).metrics);
  const auto b = strip_wallclock(train(c).metrics);
  const bool logs = a == b && !a.empty();

  const std::string dir = out + "/replays";
  make_directories(dir);
  int verified = 0;
  int total = 0;
  const auto record = [&](const std::string& id, const PolicyPair& p, std::uint64_t seed,
                          const std::string& tag) {
    const std::string path = dir + "/" + id + "_" + tag + "_" + std::to_string(seed) + ".jsonl";
    EpisodeMetrics m;
    {
      std::ofstream f(path);
      m = run_episode(load_scenario(id), EnvConfig{}, p, seed, &f);
    }
    std::ifstream in(path);
    const auto check = verify_replay(in);
    ++total;
    verified += check.ok && check.metrics && *check.metrics == m ? 1 : 0;
  };
  for (const auto& id : builtin_scenario_ids()) record(id, scripted_pair(), 5, "scripted");
  for (const auto& [id, t] : trained) {
    for (std::uint64_t s = 0; s < 3; ++s) record(id, t.marl, s, "marl");
  }
  return {logs && verified == total,
          std::string(logs ? "identical" : "DIFFERENT") + " metric logs across two runs (" +
              std::to_string(a.size()) + " updates); " + std::to_string(verified) + "/" +
              std::to_string(total) + " replays reload to bit-identical successors"};
}

// --- live session with a synthetic client ---

class Client {
 public:
  explicit Client(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }
  ~Client() {
    if (fd_ >= 0) ::close(fd_);
  }
  bool ok() const { return fd_ >= 0; }
  void send(const json& m) {
    const std::string bytes = encode_frame(m);
    (void)!::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
  }
  std::vector<json> poll_messages(int ms) {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, ms) > 0) {
      char chunk[16384];
      const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
      if (n <= 0) {
        closed = true;
        return {};
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
    return decode_frames(buffer_);
  }
  bool closed = false;

 private:
  int fd_ = -1;
  std::string buffer_;
};

Verdict hitl_loop(const std::string& out, const Trained& s21) {
  const Scenario scenario = load_scenario("S21");
  const AgentPolicy& robot = s21.marl[kRobotAgent];
  const AgentPolicy& partner = s21.marl[kHumanAgent];
  SessionConfig scfg;
  scfg.seed = 21;

  // Record a command log, with the trained partner standing in for the human.
  Session rec(scenario, scfg, robot);
  std::vector<PolicyAction> script;
  double now = 0.0;
  while (!rec.ended()) {
    const PolicyAction a = partner.act(rec.env().observations()[kHumanAgent]);
    script.push_back(a);
    rec.receive_command(a, now);
    rec.tick(now);
    now += 500.0;
  }

  // Serve it live and let the synthetic client replay the log step by step.
  ServerConfig cfg;
  cfg.port = 0;
  cfg.speed = 2.0;
  cfg.command_log_path = out + "/hitl_live_cmdlog.jsonl";
  Server server(scenario, scfg, robot, cfg);
  const int port = server.start();
  Client client(port);
  if (!client.ok()) return {false, "could not connect to the live server"};
  const auto cmd = [&](int step) {
    const PolicyAction& a = script[std::min<std::size_t>(step, script.size() - 1)];
    client.send({{"type", "cmd"}, {"a", std::vector<double>(a.data(), a.data() + a.size())}});
  };
  cmd(0);
  bool ended = false;
  bool live_success = false;
  int states = 0;
  const auto t0 = Clock::now();
  while (!ended && !client.closed && seconds_since(t0) < 300.0) {
    for (const auto& m : client.poll_messages(20)) {
      const std::string type = m.value("type", "");
      if (type == "state") {
        ++states;
        if (!m.value("ended", false)) cmd(m.at("step").get<int>());
      } else if (type == "end") {
        ended = true;
        live_success = m.at("result").at("success").get<bool>();
      }
    }
  }
  const double wall = seconds_since(t0);
  server.stop();
  const auto live = server.finished_episodes();

  std::ifstream l1(cfg.command_log_path);
  std::ifstream l2(cfg.command_log_path);
  const auto r1 = replay_command_log(l1, robot);
  const auto r2 = replay_command_log(l2, robot);
  const bool identical = r1.size() == 1 && r1 == r2 && live.size() == 1 && r1[0] == live[0];
  const bool matches_recording = live.size() == 1 && live[0] == rec.metrics();
  return {ended && live_success && identical && matches_recording,
          std::string("live S21 episode ") + (live_success ? "succeeded" : "did not succeed") +
              " in " + std::to_string(live.empty() ? 0 : live[0].steps) + " steps; two command-log replays " +
              (identical ? "identical" : "differ") + " and " +
              (matches_recording ? "match" : "do not match") + " the recording; " +
              fmt("%.1f", states / std::max(wall, 1e-9)) +
              " state frames/s at 2x speed (browser FPS and key latency belong to the UI)"};
}

}  // namespace
}  // namespace tandem

int main(int argc, char** argv) {
  using namespace tandem;
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  CLI::App app{"Acceptance gate"};
  std::string out = "acceptance_runs";
  app.add_option("--out", out, "Directory for training runs and replays");
  CLI11_PARSE(app, argc, argv);
  std::filesystem::remove_all(out);
  make_directories(out);

  int failed_primary = 0;
  std::map<std::string, Trained> trained;
  const auto report = [&](bool primary, const std::string& name, const std::function<Verdict()>& fn) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (primary && !v.pass) ++failed_primary;
    std::cout << (v.pass ? "PASS" : "FAIL") << (primary ? " [PRIMARY]   " : " [SECONDARY] ") << name
              << ": " << v.detail << " (" << fmt("%.1f", seconds_since(t0)) << " s)" << std::endl;
  };

  report(true, "dimension fidelity", dimensions);
  report(true, "ray feature endpoints", ray_endpoints);
  report(true, "potential condition", potential_condition);
  report(true, "gradient oracle", gradient_oracle);
  report(true, "GAE oracle", gae_oracle);
  report(true, "clip semantics", clip_semantics);
  report(true, "drift diagnostic", prop1);
  report(true, "desk-scale corridor learning", [&] { return corridor_learning(out); });
  report(true, "directional baseline and ablation ordering",
         [&] { return baseline_ordering(out, trained); });
  report(true, "determinism and replay", [&] { return determinism_and_replay(out, trained); });
  if (trained.count("S21")) {
    report(false, "HITL loop", [&] { return hitl_loop(out, trained.at("S21")); });
  } else {
    std::cout << "FAIL [SECONDARY] HITL loop: no trained S21 checkpoint" << std::endl;
  }
  std::cout << (failed_primary == 0 ? "ALL PRIMARY CRITERIA PASS" : std::to_string(failed_primary) + " PRIMARY CRITERIA FAIL")
            << std::endl;
  return failed_primary == 0 ? 0 : 1;
}
