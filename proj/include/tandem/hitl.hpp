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

#ifndef TANDEM_HITL_HPP_
#define TANDEM_HITL_HPP_

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tandem/eval.hpp"
#include "tandem/mdp.hpp"

namespace tandem {

inline constexpr const char* kHitlSchema = "hitl_v1";
inline constexpr int kRobotAgent = 0;
inline constexpr int kHumanAgent = 1;

struct SessionConfig {
  EnvConfig env;
  double stale_ms = 500.0;
  std::uint64_t seed = 0;
};

// --- wire messages ---

enum class ClientKind { kCmd, kReset, kPause, kResume };

struct ClientMessage {
  ClientKind kind = ClientKind::kCmd;
  std::int64_t seq = 0;
  PolicyAction a = PolicyAction::Zero();  // clamped to [-1, 1]
  std::uint64_t seed = 0;
};

// Validates a client message; protocol violations throw Error.
ClientMessage parse_client_message(const nlohmann::json& j);
nlohmann::json to_json(const ClientMessage& m);

// 4-byte big-endian length followed by UTF-8 JSON.
std::string encode_frame(const nlohmann::json& message);
// Pops every complete frame off the front of `buffer`.
std::vector<nlohmann::json> decode_frames(std::string& buffer, std::size_t max_frame = 1 << 20);

// --- browser upgrade path ---

std::string websocket_accept_key(const std::string& client_key);
// Full HTTP response to an upgrade request; throws on a non-upgrade request.
std::string websocket_handshake_response(const std::string& request);
std::string websocket_encode_text(const std::string& payload);

struct WebSocketFrame {
  int opcode = 0;
  std::string payload;
};

// Pops complete (unmasked on output) frames off `buffer`.
std::vector<WebSocketFrame> websocket_decode(std::string& buffer,
                                             std::size_t max_frame = 1 << 20);

// --- session ---

// One live episode stream with a human partner. The caller supplies the
// session clock (ms), so the core is deterministic and testable.
class Session {
 public:
  Session(Scenario scenario, SessionConfig cfg, AgentPolicy robot);

  void reset(std::uint64_t seed);
  void receive_command(const PolicyAction& a, double now_ms);
  // One policy step: robot on its own observation, partner on the latched
  // command (zeros when older than stale_ms). Throws after episode end.
  const EnvStep& tick(double now_ms);

  bool ended() const { return metrics_.ended(); }
  const TransportEnv& env() const { return env_; }
  const Scenario& scenario() const { return scenario_; }
  std::uint64_t seed() const { return seed_; }
  int episodes() const { return episodes_; }
  int successes() const { return successes_; }
  // Partner action that the next tick would apply.
  PolicyAction latched(double now_ms) const;

  EpisodeMetrics metrics() const;
  nlohmann::json hello_message() const;
  nlohmann::json state_message() const;
  nlohmann::json end_message() const;

  // JSONL: header, then per episode a reset record and one record per step
  // with the partner action actually applied.
  std::string command_log() const;

 private:
  Scenario scenario_;
  SessionConfig cfg_;
  AgentPolicy robot_;
  TransportEnv env_;
  MetricsAccumulator metrics_;
  std::array<StackedObservation, 2> obs_;
  EnvStep last_;
  std::optional<PolicyAction> command_;
  double command_ms_ = 0.0;
  std::uint64_t seed_ = 0;
  int episodes_ = 0;
  int successes_ = 0;
  std::vector<nlohmann::json> log_;
};

EpisodeMetrics session_metrics(const Session& session);

// Re-runs every episode of a command log offline.
std::vector<EpisodeMetrics> replay_command_log(std::istream& log, const AgentPolicy& robot);

// --- transport ---

// Bounded FIFO. State frames are droppable: when full, the oldest droppable
// entry gives way; other entries are always kept.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  // Returns false if a droppable entry could not be queued.
  bool push(T value, bool droppable) {
    std::lock_guard<std::mutex> lock(mu_);
    if (items_.size() >= capacity_) {
      auto it = std::find_if(items_.begin(), items_.end(), [](const Item& i) { return i.droppable; });
      if (it != items_.end()) {
        items_.erase(it);
        ++dropped_;
      } else if (droppable) {
        ++dropped_;
        return false;
      }
    }
    items_.push_back({std::move(value), droppable});
    cv_.notify_all();
    return true;
  }

  std::optional<T> pop() {
    std::lock_guard<std::mutex> lock(mu_);
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front().value);
    items_.pop_front();
    return v;
  }

  template <typename Clock, typename Duration>
  void wait_until(const std::chrono::time_point<Clock, Duration>& deadline) {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait_until(lock, deadline, [&] { return !items_.empty(); });
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return items_.size();
  }
  std::size_t dropped() const {
    std::lock_guard<std::mutex> lock(mu_);
    return dropped_;
  }

 private:
  struct Item {
    T value;
    bool droppable;
  };
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Item> items_;
  std::size_t capacity_;
  std::size_t dropped_ = 0;
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8765;               // 0 picks a free port
  double broadcast_hz = 20.0;
  double speed = 1.0;            // simulated seconds per wall second
  std::string command_log_path;  // written when non-empty
  std::string metrics_path;      // JSONL of finished episodes when non-empty
};

// Real-time session server: a simulation loop and a network loop joined by
// bounded queues. One client at a time.
class Server {
 public:
  Server(Scenario scenario, SessionConfig session, AgentPolicy robot, ServerConfig cfg);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts both loops; returns the bound port.
  int start();
  void stop();
  bool running() const { return running_.load(); }
  int port() const { return port_; }
  std::vector<EpisodeMetrics> finished_episodes() const;
  std::size_t dropped_frames() const { return outbound_.dropped(); }

 private:
  struct Inbound {
    enum Kind { kConnect, kDisconnect, kMessage } kind = kMessage;
    ClientMessage message;
    std::chrono::steady_clock::time_point arrival;
  };

  void sim_loop();
  void net_loop();
  void send(nlohmann::json message, bool droppable);
  double session_ms(std::chrono::steady_clock::time_point t) const;

  Session session_;
  ServerConfig cfg_;
  int listen_fd_ = -1;
  int wake_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::chrono::steady_clock::time_point start_;
  BoundedQueue<Inbound> inbound_{1024};
  BoundedQueue<nlohmann::json> outbound_{64};
  std::int64_t seq_ = 0;
  mutable std::mutex done_mu_;
  std::vector<EpisodeMetrics> done_;
  std::thread sim_thread_;
  std::thread net_thread_;
};

}  // namespace tandem

#endif  // TANDEM_HITL_HPP_
