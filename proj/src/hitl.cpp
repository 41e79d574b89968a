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

#include "tandem/hitl.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <sstream>

#include "tandem/error.hpp"

namespace tandem {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr const char* kWebSocketGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

json vec_json(const Vec2& v) { return {v.x(), v.y()}; }
json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

json action_json(const PolicyAction& a) {
  return std::vector<double>(a.data(), a.data() + a.size());
}

PolicyAction action_from_json(const json& j) {
  if (!j.is_array() || j.size() != kActionDim) {
    throw Error("protocol: cmd.a must be an array of " + std::to_string(kActionDim) + " numbers");
  }
  PolicyAction a;
  for (int k = 0; k < kActionDim; ++k) {
    if (!j[k].is_number()) throw Error("protocol: cmd.a entries must be numbers");
    const double v = j[k].get<double>();
    if (!std::isfinite(v)) throw Error("protocol: cmd.a entries must be finite");
    a(k) = std::clamp(v, -1.0, 1.0);
  }
  return a;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool send_all(int fd, const std::string& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) {
        pollfd p{fd, POLLOUT, 0};
        ::poll(&p, 1, 100);
        continue;
      }
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

// --- wire ---

ClientMessage parse_client_message(const json& j) {
  if (!j.is_object()) throw Error("protocol: message must be a JSON object");
  if (!j.contains("type") || !j.at("type").is_string()) {
    throw Error("protocol: message needs a string 'type'");
  }
  ClientMessage m;
  if (j.contains("seq")) {
    if (!j.at("seq").is_number_integer()) throw Error("protocol: seq must be an integer");
    m.seq = j.at("seq").get<std::int64_t>();
  }
  const std::string type = j.at("type").get<std::string>();
  if (type == "cmd") {
    m.kind = ClientKind::kCmd;
    if (!j.contains("a")) throw Error("protocol: cmd without 'a'");
    m.a = action_from_json(j.at("a"));
  } else if (type == "reset") {
    m.kind = ClientKind::kReset;
    if (j.contains("seed")) {
      if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer()) {
        throw Error("protocol: reset.seed must be a non-negative integer");
      }
      if (j.at("seed").is_number_integer() && j.at("seed").get<std::int64_t>() < 0) {
        throw Error("protocol: reset.seed must be a non-negative integer");
      }
      m.seed = j.at("seed").get<std::uint64_t>();
    }
  } else if (type == "pause") {
    m.kind = ClientKind::kPause;
  } else if (type == "resume") {
    m.kind = ClientKind::kResume;
  } else {
    throw Error("protocol: unknown message type '" + type + "'");
  }
  return m;
}

json to_json(const ClientMessage& m) {
  json j{{"seq", m.seq}};
  switch (m.kind) {
    case ClientKind::kCmd:
      j["type"] = "cmd";
      j["a"] = action_json(m.a);
      break;
    case ClientKind::kReset:
      j["type"] = "reset";
      j["seed"] = m.seed;
      break;
    case ClientKind::kPause: j["type"] = "pause"; break;
    case ClientKind::kResume: j["type"] = "resume"; break;
  }
  return j;
}

std::string encode_frame(const json& message) {
  const std::string body = message.dump();
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out += body;
  return out;
}

std::vector<json> decode_frames(std::string& buffer, std::size_t max_frame) {
  std::vector<json> out;
  std::size_t at = 0;
  while (buffer.size() - at >= 4) {
    const auto* p = reinterpret_cast<const unsigned char*>(buffer.data() + at);
    const std::size_t n = (std::size_t{p[0]} << 24) | (std::size_t{p[1]} << 16) |
                          (std::size_t{p[2]} << 8) | std::size_t{p[3]};
    if (n > max_frame) throw Error("protocol: frame of " + std::to_string(n) + " bytes too large");
    if (buffer.size() - at - 4 < n) break;
    try {
      out.push_back(json::parse(buffer.begin() + static_cast<std::ptrdiff_t>(at + 4),
                                buffer.begin() + static_cast<std::ptrdiff_t>(at + 4 + n)));
    } catch (const json::exception& e) {
      throw Error(std::string("protocol: invalid JSON frame: ") + e.what());
    }
    at += 4 + n;
  }
  buffer.erase(0, at);
  return out;
}

std::string websocket_accept_key(const std::string& client_key) {
  const std::string text = client_key + kWebSocketGuid;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(text.data()), text.size(), digest);
  unsigned char encoded[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int n = EVP_EncodeBlock(encoded, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<const char*>(encoded), static_cast<std::size_t>(n));
}

std::string websocket_handshake_response(const std::string& request) {
  std::istringstream in(request);
  std::string line;
  std::getline(in, line);
  if (line.rfind("GET ", 0) != 0) throw Error("http: expected a GET request");
  std::string key;
  bool upgrade = false;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) break;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string name = lower(trim(line.substr(0, colon)));
    const std::string value = trim(line.substr(colon + 1));
    if (name == "upgrade" && lower(value) == "websocket") upgrade = true;
    if (name == "sec-websocket-key") key = value;
  }
  if (!upgrade || key.empty()) throw Error("http: not a websocket upgrade request");
  return "HTTP/1.1 101 Switching Protocols\r\n"
         "Upgrade: websocket\r\n"
         "Connection: Upgrade\r\n"
         "Sec-WebSocket-Protocol: " +
         std::string(kHitlSchema) +
         "\r\n"
         "Sec-WebSocket-Accept: " +
         websocket_accept_key(key) + "\r\n\r\n";
}

std::string websocket_encode_text(const std::string& payload) {
  std::string out;
  out.push_back(static_cast<char>(0x81));
  const std::size_t n = payload.size();
  if (n < 126) {
    out.push_back(static_cast<char>(n));
  } else if (n <= 0xffff) {
    out.push_back(static_cast<char>(126));
    out.push_back(static_cast<char>((n >> 8) & 0xff));
    out.push_back(static_cast<char>(n & 0xff));
  } else {
    out.push_back(static_cast<char>(127));
    for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<char>((n >> s) & 0xff));
  }
  out += payload;
  return out;
}

std::vector<WebSocketFrame> websocket_decode(std::string& buffer, std::size_t max_frame) {
  std::vector<WebSocketFrame> out;
  std::size_t at = 0;
  while (true) {
    const std::size_t avail = buffer.size() - at;
    if (avail < 2) break;
    const auto* p = reinterpret_cast<const unsigned char*>(buffer.data() + at);
    if ((p[0] & 0x80) == 0) throw Error("protocol: fragmented websocket frames are not supported");
    const int opcode = p[0] & 0x0f;
    const bool masked = (p[1] & 0x80) != 0;
    std::size_t len = p[1] & 0x7f;
    std::size_t head = 2;
    if (len == 126) {
      if (avail < 4) break;
      len = (std::size_t{p[2]} << 8) | p[3];
      head = 4;
    } else if (len == 127) {
      if (avail < 10) break;
      len = 0;
      for (int k = 0; k < 8; ++k) len = (len << 8) | p[2 + k];
      head = 10;
    }
    if (len > max_frame) throw Error("protocol: websocket frame too large");
    const std::size_t mask_at = head;
    if (masked) head += 4;
    if (avail < head + len) break;
    WebSocketFrame f;
    f.opcode = opcode;
    f.payload.assign(buffer, at + head, len);
    if (masked) {
      for (std::size_t k = 0; k < len; ++k) f.payload[k] ^= static_cast<char>(p[mask_at + k % 4]);
    }
    out.push_back(std::move(f));
    at += head + len;
  }
  buffer.erase(0, at);
  return out;
}

// --- session ---

Session::Session(Scenario scenario, SessionConfig cfg, AgentPolicy robot)
    : scenario_(std::move(scenario)),
      cfg_(std::move(cfg)),
      robot_(std::move(robot)),
      env_(scenario_, cfg_.env),
      metrics_(env_) {
  if (!(cfg_.stale_ms >= 0)) throw Error("session: stale_ms must be >= 0");
  log_.push_back({{"format", "hitl_cmdlog_v1"},
                  {"schema", kHitlSchema},
                  {"scenario", to_json(scenario_)},
                  {"env", to_json(cfg_.env)},
                  {"stale_ms", cfg_.stale_ms},
                  {"robot", robot_.is_learned() ? "learned" : "scripted"}});
  reset(cfg_.seed);
}

void Session::reset(std::uint64_t seed) {
  seed_ = seed;
  obs_ = env_.reset(seed);
  metrics_ = MetricsAccumulator(env_);
  last_ = EnvStep{};
  command_.reset();
  log_.push_back({{"reset", seed}});
}

void Session::receive_command(const PolicyAction& a, double now_ms) {
  if (!a.allFinite()) throw Error("session: non-finite command");
  command_ = a.cwiseMax(-1.0).cwiseMin(1.0);
  command_ms_ = now_ms;
}

PolicyAction Session::latched(double now_ms) const {
  if (command_ && now_ms - command_ms_ <= cfg_.stale_ms) return *command_;
  return PolicyAction::Zero();
}

const EnvStep& Session::tick(double now_ms) {
  if (ended()) throw Error("session: episode has ended; send reset");
  const JointAction actions{robot_.act(obs_[kRobotAgent]), latched(now_ms)};
  last_ = env_.step(actions);
  metrics_.add(env_, last_);
  obs_ = last_.obs;
  log_.push_back({{"step", env_.steps() - 1}, {"a", action_json(actions[kHumanAgent])}});
  if (ended()) {
    ++episodes_;
    if (last_.outcome == Outcome::kGoal) ++successes_;
  }
  return last_;
}

EpisodeMetrics Session::metrics() const { return metrics_.result(); }

EpisodeMetrics session_metrics(const Session& session) { return session.metrics(); }

json Session::hello_message() const {
  return {{"type", "hello"},
          {"schema", kHitlSchema},
          {"scenario", to_json(scenario_)},
          {"robot_agent", kRobotAgent},
          {"human_agent", kHumanAgent},
          {"dt", env_.sim().config().dt_low()},
          {"stale_ms", cfg_.stale_ms}};
}

json Session::state_message() const {
  const WorldState& s = env_.state();
  const Simulator& sim = env_.sim();
  json agents = json::array();
  for (int i = 0; i < 2; ++i) {
    const AgentState& a = s.agents[i];
    agents.push_back({{"position", vec_json(a.position)},
                      {"velocity", vec_json(a.velocity)},
                      {"yaw", a.yaw},
                      {"com_height", a.com_height},
                      {"torso_pitch", a.torso_pitch},
                      {"wrists", {vec_json(a.wrist_pos[0]), vec_json(a.wrist_pos[1])}},
                      {"role", i == kRobotAgent ? "robot" : "human"}});
  }
  json corners = json::array();
  for (const Vec2& c : scenario_.object_box(s.object.pose).corners()) corners.push_back(vec_json(c));
  json anchors = json::array();
  for (const Vec2& p : env_.tracker().anchors) anchors.push_back(vec_json(p));
  json rays = json::array();
  for (int i = 0; i < 2; ++i) {
    rays.push_back(sim.raycast(s, i, kRayCount, env_.config().observation.ray_max));
  }
  json metrics = metrics_.live();
  metrics["episodes"] = episodes_;
  metrics["successes"] = successes_;
  metrics["sr"] = episodes_ > 0 ? json(static_cast<double>(successes_) / episodes_) : json(nullptr);
  return {{"type", "state"},
          {"t", s.time},
          {"step", env_.steps()},
          {"agents", agents},
          {"object",
           {{"pose", {s.object.pose.x, s.object.pose.y, s.object.pose.heading}},
            {"corners", corners},
            {"corner_heights", s.object.corner_heights},
            {"dropped", s.dropped},
            {"contacts", s.contacts}}},
          {"anchors", {{"points", anchors}, {"cursor", env_.tracker().cursor}}},
          {"rays", rays},
          {"metrics", metrics},
          {"ended", ended()}};
}

json Session::end_message() const {
  return {{"type", "end"}, {"result", to_json(metrics())}, {"seed", seed_}};
}

std::string Session::command_log() const {
  std::string out;
  for (const auto& j : log_) out += j.dump() + "\n";
  return out;
}

std::vector<EpisodeMetrics> replay_command_log(std::istream& log, const AgentPolicy& robot) {
  std::vector<json> lines;
  std::string line;
  try {
    while (std::getline(log, line)) {
      if (!line.empty()) lines.push_back(json::parse(line));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("command log: ") + e.what());
  }
  if (lines.empty() || lines.front().value("format", "") != "hitl_cmdlog_v1") {
    throw Error("command log: missing hitl_cmdlog_v1 header");
  }
  std::vector<EpisodeMetrics> out;
  try {
    const Scenario scenario = scenario_from_json(lines.front().at("scenario"));
    const EnvConfig cfg = env_config_from_json(lines.front().at("env"));
    TransportEnv env(scenario, cfg);
    std::optional<MetricsAccumulator> acc;
    std::array<StackedObservation, 2> obs;
    for (std::size_t k = 1; k < lines.size(); ++k) {
      const json& rec = lines[k];
      if (rec.contains("reset")) {
        obs = env.reset(rec.at("reset").get<std::uint64_t>());
        acc.emplace(env);
        continue;
      }
      if (!acc) throw Error("command log: step before reset");
      if (rec.at("step").get<int>() != env.steps()) throw Error("command log: step out of order");
      const JointAction actions{robot.act(obs[kRobotAgent]), action_from_json(rec.at("a"))};
      const EnvStep step = env.step(actions);
      acc->add(env, step);
      obs = step.obs;
      if (acc->ended()) out.push_back(acc->result());
    }
  } catch (const json::exception& e) {
    throw Error(std::string("command log: ") + e.what());
  }
  return out;
}

// --- server ---

Server::Server(Scenario scenario, SessionConfig session, AgentPolicy robot, ServerConfig cfg)
    : session_(std::move(scenario), std::move(session), std::move(robot)), cfg_(std::move(cfg)) {
  if (!(cfg_.broadcast_hz >= 20.0)) throw Error("server: broadcast_hz must be >= 20");
  if (!(cfg_.speed > 0)) throw Error("server: speed must be positive");
}

Server::~Server() { stop(); }

int Server::start() {
  if (running_) return port_;
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) throw Error(std::string("server: socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(cfg_.port));
  if (::inet_pton(AF_INET, cfg_.host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw Error("server: bad host '" + cfg_.host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 4) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error("server: cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port) +
                ": " + why);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  wake_fd_ = ::eventfd(0, EFD_NONBLOCK | EFD_CLOEXEC);
  start_ = Clock::now();
  running_ = true;
  sim_thread_ = std::thread([this] { sim_loop(); });
  net_thread_ = std::thread([this] { net_loop(); });
  return port_;
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  const std::uint64_t v = 1;
  if (wake_fd_ >= 0) (void)!::write(wake_fd_, &v, sizeof(v));
  inbound_.push({Inbound::kDisconnect, {}, Clock::now()}, false);
  if (sim_thread_.joinable()) sim_thread_.join();
  if (net_thread_.joinable()) net_thread_.join();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  if (wake_fd_ >= 0) ::close(wake_fd_);
  listen_fd_ = wake_fd_ = -1;
  if (!cfg_.command_log_path.empty()) {
    std::ofstream out(cfg_.command_log_path, std::ios::trunc);
    out << session_.command_log();
  }
}

std::vector<EpisodeMetrics> Server::finished_episodes() const {
  std::lock_guard<std::mutex> lock(done_mu_);
  return done_;
}

double Server::session_ms(Clock::time_point t) const {
  return std::chrono::duration<double, std::milli>(t - start_).count() * cfg_.speed;
}

void Server::send(json message, bool droppable) {
  message["seq"] = seq_++;
  outbound_.push(std::move(message), droppable);
  const std::uint64_t v = 1;
  (void)!::write(wake_fd_, &v, sizeof(v));
}

void Server::sim_loop() {
  using std::chrono::duration_cast;
  const auto tick_period = duration_cast<Clock::duration>(
      std::chrono::duration<double>(session_.env().sim().config().dt_low() / cfg_.speed));
  const auto frame_period =
      duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / cfg_.broadcast_hz));
  bool connected = false;
  bool paused = false;
  auto next_tick = Clock::now() + tick_period;
  auto next_frame = Clock::now();
  std::ofstream metrics_out;
  if (!cfg_.metrics_path.empty()) metrics_out.open(cfg_.metrics_path, std::ios::app);

  while (running_) {
    while (auto in = inbound_.pop()) {
      switch (in->kind) {
        case Inbound::kConnect:
          connected = true;
          paused = false;
          send(session_.hello_message(), false);
          send(session_.state_message(), true);
          next_tick = Clock::now() + tick_period;
          break;
        case Inbound::kDisconnect: connected = false; break;
        case Inbound::kMessage: {
          const ClientMessage& m = in->message;
          switch (m.kind) {
            case ClientKind::kCmd: session_.receive_command(m.a, session_ms(in->arrival)); break;
            case ClientKind::kReset:
              session_.reset(m.seed);
              next_tick = Clock::now() + tick_period;
              send(session_.state_message(), false);
              break;
            case ClientKind::kPause: paused = true; break;
            case ClientKind::kResume:
              if (paused) next_tick = Clock::now() + tick_period;
              paused = false;
              break;
          }
          break;
        }
      }
    }
    const auto now = Clock::now();
    // No client, paused or finished: the world holds.
    if (connected && !paused && !session_.ended() && now >= next_tick) {
      session_.tick(session_ms(now));
      next_tick += tick_period;
      send(session_.state_message(), false);
      if (session_.ended()) {
        const EpisodeMetrics m = session_.metrics();
        {
          std::lock_guard<std::mutex> lock(done_mu_);
          done_.push_back(m);
        }
        if (metrics_out) metrics_out << to_json(m).dump() << '\n' << std::flush;
        send(session_.end_message(), false);
      }
    } else if (connected && now >= next_frame) {
      send(session_.state_message(), true);
    }
    if (now >= next_frame) next_frame = now + frame_period;
    auto wake = next_frame;
    if (connected && !paused && !session_.ended()) wake = std::min(wake, next_tick);
    inbound_.wait_until(wake);
  }
}

void Server::net_loop() {
  enum class Mode { kUnknown, kFramed, kWebSocket };
  int client = -1;
  Mode mode = Mode::kUnknown;
  std::string buffer;

  const auto close_client = [&] {
    if (client < 0) return;
    ::close(client);
    client = -1;
    buffer.clear();
    mode = Mode::kUnknown;
    while (inbound_.size() >= 1024 && running_) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    inbound_.push({Inbound::kDisconnect, {}, Clock::now()}, false);
  };
  const auto write_message = [&](const json& m) {
    if (client < 0 || mode == Mode::kUnknown) return true;
    const std::string bytes =
        mode == Mode::kWebSocket ? websocket_encode_text(m.dump()) : encode_frame(m);
    return send_all(client, bytes);
  };
  const auto reject = [&](const std::string& why) {
    json err{{"type", "error"}, {"message", why}};
    if (mode == Mode::kUnknown) mode = Mode::kFramed;
    write_message(err);
    close_client();
  };
  const auto deliver = [&](const json& j) {
    ClientMessage m = parse_client_message(j);
    while (inbound_.size() >= 1024 && running_) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    inbound_.push({Inbound::kMessage, m, Clock::now()}, false);
  };

  while (running_) {
    std::vector<pollfd> fds{{listen_fd_, POLLIN, 0}, {wake_fd_, POLLIN, 0}};
    if (client >= 0) fds.push_back({client, POLLIN, 0});
    if (::poll(fds.data(), fds.size(), 100) < 0 && errno != EINTR) break;
    if (!running_) break;
    if (fds[1].revents & POLLIN) {
      std::uint64_t v;
      (void)!::read(wake_fd_, &v, sizeof(v));
    }
    while (auto out = outbound_.pop()) {
      if (!write_message(*out)) {
        close_client();
        break;
      }
    }
    if (fds[0].revents & POLLIN) {
      const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
      if (fd >= 0) {
        if (client >= 0) {
          send_all(fd, encode_frame({{"type", "error"}, {"message", "session busy"}}));
          ::close(fd);
        } else {
          client = fd;
          const int one = 1;
          ::setsockopt(client, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        }
      }
    }
    if (client >= 0 && fds.size() > 2 && (fds[2].revents & (POLLIN | POLLHUP | POLLERR))) {
      char chunk[4096];
      const ssize_t n = ::recv(client, chunk, sizeof(chunk), 0);
      if (n <= 0) {
        close_client();
        continue;
      }
      buffer.append(chunk, static_cast<std::size_t>(n));
      try {
        if (mode == Mode::kUnknown) {
          if (buffer.size() < 4) continue;
          if (buffer.rfind("GET ", 0) == 0) {
            const auto end = buffer.find("\r\n\r\n");
            if (end == std::string::npos) {
              if (buffer.size() > 16384) throw Error("http: request header too large");
              continue;
            }
            const std::string request = buffer.substr(0, end + 4);
            buffer.erase(0, end + 4);
            std::string response;
            try {
              response = websocket_handshake_response(request);
            } catch (const Error&) {
              send_all(client,
                       "HTTP/1.1 426 Upgrade Required\r\nUpgrade: websocket\r\n"
                       "Content-Length: 0\r\nConnection: close\r\n\r\n");
              ::close(client);
              client = -1;
              buffer.clear();
              continue;
            }
            send_all(client, response);
            mode = Mode::kWebSocket;
          } else {
            mode = Mode::kFramed;
          }
          inbound_.push({Inbound::kConnect, {}, Clock::now()}, false);
        }
        if (mode == Mode::kFramed) {
          for (const json& j : decode_frames(buffer)) deliver(j);
        } else if (mode == Mode::kWebSocket) {
          for (auto& f : websocket_decode(buffer)) {
            if (f.opcode == 0x8) {
              close_client();
              break;
            }
            if (f.opcode == 0x9) {
              std::string pong;
              pong.push_back(static_cast<char>(0x8a));
              pong.push_back(static_cast<char>(f.payload.size()));
              send_all(client, pong + f.payload);
              continue;
            }
            if (f.opcode != 0x1) throw Error("protocol: only text websocket frames are accepted");
            try {
              deliver(json::parse(f.payload));
            } catch (const json::exception& e) {
              throw Error(std::string("protocol: invalid JSON: ") + e.what());
            }
          }
        }
      } catch (const Error& e) {
        reject(e.what());
      }
    }
  }
  if (client >= 0) ::close(client);
}

}  // namespace tandem
