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

#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "tandem/hitl.hpp"

namespace tandem {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

PolicyAction walk_away() {
  PolicyAction a = PolicyAction::Zero();
  a(ActionLayout::kVx) = -1.0;
  a(ActionLayout::kVy) = 1.0;
  return a;
}

// --- wire ---

TEST(Frames, LengthPrefixBigEndian) {
  const std::string f = encode_frame(json{{"a", 1}});
  ASSERT_EQ(f.size(), 4u + 7u);
  EXPECT_EQ(f.substr(0, 4), std::string("\0\0\0\x07", 4));
  EXPECT_EQ(f.substr(4), "{\"a\":1}");
}

TEST(Frames, DecodeHandlesPartialAndConcatenated) {
  const std::string a = encode_frame(json{{"type", "pause"}});
  const std::string b = encode_frame(json{{"type", "resume"}, {"seq", 4}});
  std::string buffer = a + b.substr(0, 5);
  auto out = decode_frames(buffer);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0]["type"], "pause");
  EXPECT_EQ(buffer, b.substr(0, 5));
  buffer += b.substr(5);
  out = decode_frames(buffer);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0]["seq"], 4);
  EXPECT_TRUE(buffer.empty());
}

TEST(Frames, RejectsOversizeAndBadJson) {
  std::string big = std::string("\x00\x20\x00\x00", 4);
  EXPECT_THROW(decode_frames(big, 1024), Error);
  std::string bad = std::string("\0\0\0\x03", 4) + "{x}";
  EXPECT_THROW(decode_frames(bad), Error);
}

TEST(Protocol, CommandParsingAndClamping) {
  json j{{"type", "cmd"}, {"seq", 3}, {"a", std::vector<double>(11, 0.5)}};
  j["a"][0] = 4.0;
  j["a"][1] = -2.0;
  const auto m = parse_client_message(j);
  EXPECT_EQ(m.kind, ClientKind::kCmd);
  EXPECT_EQ(m.seq, 3);
  EXPECT_EQ(m.a(0), 1.0);
  EXPECT_EQ(m.a(1), -1.0);
  EXPECT_EQ(m.a(2), 0.5);
  EXPECT_EQ(parse_client_message(to_json(m)).a, m.a);
}

TEST(Protocol, ViolationsThrow) {
  EXPECT_THROW(parse_client_message(json::array()), Error);
  EXPECT_THROW(parse_client_message(json{{"seq", 1}}), Error);
  EXPECT_THROW(parse_client_message(json{{"type", "fly"}}), Error);
  EXPECT_THROW(parse_client_message(json{{"type", "cmd"}}), Error);
  EXPECT_THROW(parse_client_message(json{{"type", "cmd"}, {"a", {1, 2, 3}}}), Error);
  json strings{{"type", "cmd"}, {"a", std::vector<std::string>(11, "x")}};
  EXPECT_THROW(parse_client_message(strings), Error);
  EXPECT_THROW(parse_client_message(json{{"type", "reset"}, {"seed", -1}}), Error);
  EXPECT_THROW(parse_client_message(json{{"type", "pause"}, {"seq", "one"}}), Error);
  const auto r = parse_client_message(json{{"type", "reset"}, {"seed", 12}});
  EXPECT_EQ(r.kind, ClientKind::kReset);
  EXPECT_EQ(r.seed, 12u);
}

// --- websocket ---

TEST(WebSocket, AcceptKeyKnownAnswer) {
  EXPECT_EQ(websocket_accept_key("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

TEST(WebSocket, HandshakeResponse) {
  const std::string req =
      "GET /session HTTP/1.1\r\nHost: localhost\r\nUpgrade: WebSocket\r\n"
      "Connection: Upgrade\r\nSec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\n"
      "Sec-WebSocket-Version: 13\r\n\r\n";
  const std::string resp = websocket_handshake_response(req);
  EXPECT_EQ(resp.rfind("HTTP/1.1 101", 0), 0u);
  EXPECT_NE(resp.find("Sec-WebSocket-Accept: s3pPLMBiTxaQ9kYGzzhZRbK+xOo=\r\n"), std::string::npos);
  EXPECT_THROW(websocket_handshake_response("GET / HTTP/1.1\r\nHost: x\r\n\r\n"), Error);
  EXPECT_THROW(websocket_handshake_response("POST / HTTP/1.1\r\n\r\n"), Error);
}

TEST(WebSocket, EncodeAndDecodeMasked) {
  EXPECT_EQ(websocket_encode_text("Hello"), std::string("\x81\x05Hello"));
  const std::string medium(300, 'x');
  const std::string enc = websocket_encode_text(medium);
  EXPECT_EQ(static_cast<unsigned char>(enc[1]), 126);
  std::string buffer = enc;
  auto frames = websocket_decode(buffer);
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(frames[0].payload, medium);

  // Masked "Hello" from the protocol's worked example.
  const unsigned char masked[] = {0x81, 0x85, 0x37, 0xfa, 0x21, 0x3d, 0x7f, 0x9f, 0x4d, 0x51, 0x58};
  buffer.assign(reinterpret_cast<const char*>(masked), sizeof(masked));
  std::string partial = buffer.substr(0, 6);
  EXPECT_TRUE(websocket_decode(partial).empty());
  frames = websocket_decode(buffer);
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(frames[0].opcode, 1);
  EXPECT_EQ(frames[0].payload, "Hello");
  std::string fragment("\x01\x00", 2);
  EXPECT_THROW(websocket_decode(fragment), Error);
}

// --- session ---

Session corridor_session(std::uint64_t seed = 1) {
  SessionConfig cfg;
  cfg.seed = seed;
  return Session(load_scenario("corridor"), cfg, AgentPolicy::scripted());
}

TEST(Session, CommandLatchAndStaleness) {
  Session s = corridor_session();
  EXPECT_TRUE(s.latched(0.0).isZero(0.0));
  PolicyAction a = PolicyAction::Constant(0.3);
  a(0) = 5.0;
  s.receive_command(a, 100.0);
  EXPECT_EQ(s.latched(100.0)(0), 1.0);
  EXPECT_EQ(s.latched(600.0)(1), 0.3);
  EXPECT_TRUE(s.latched(600.5).isZero(0.0));
  PolicyAction bad = PolicyAction::Zero();
  bad(2) = std::nan("");
  EXPECT_THROW(s.receive_command(bad, 0.0), Error);
}

TEST(Session, NoCommandsFollowNominalController) {
  Session s = corridor_session(7);
  TransportEnv env(load_scenario("corridor"), EnvConfig{});
  env.reset(7);
  for (int t = 0; t < 10; ++t) {
    s.tick(1e9);  // every command stale
    env.step({PolicyAction::Zero(), PolicyAction::Zero()});
    EXPECT_TRUE(bitwise_equal(s.env().state(), env.state())) << t;
  }
}

TEST(Session, ZeroCommandsSucceedAndLogReplays) {
  Session s = corridor_session(3);
  double now = 0.0;
  for (int episode = 0; episode < 2; ++episode) {
    while (!s.ended()) {
      s.receive_command(PolicyAction::Zero(), now);
      s.tick(now);
      now += 500.0;
    }
    EXPECT_TRUE(s.metrics().success);
    EXPECT_EQ(s.end_message()["type"], "end");
    if (episode == 0) {
      EXPECT_THROW(s.tick(now), Error);
      s.reset(11);
    }
  }
  EXPECT_EQ(s.episodes(), 2);
  EXPECT_EQ(s.successes(), 2);
  std::istringstream a(s.command_log());
  std::istringstream b(s.command_log());
  const auto first = replay_command_log(a, AgentPolicy::scripted());
  const auto second = replay_command_log(b, AgentPolicy::scripted());
  ASSERT_EQ(first.size(), 2u);
  EXPECT_EQ(first, second);
  EXPECT_EQ(first[1], s.metrics());
  EXPECT_TRUE(first[0].success);
}

TEST(Session, WalkingAwayDrops) {
  Session s = corridor_session(2);
  double now = 0.0;
  while (!s.ended()) {
    s.receive_command(walk_away(), now);
    s.tick(now);
    now += 500.0;
  }
  EXPECT_TRUE(s.metrics().drop);
  EXPECT_FALSE(s.metrics().success);
}

TEST(Session, MessagesCarryTheViewerFields) {
  Session s = corridor_session();
  const json hello = s.hello_message();
  EXPECT_EQ(hello["type"], "hello");
  EXPECT_EQ(hello["schema"], kHitlSchema);
  EXPECT_EQ(hello["human_agent"], kHumanAgent);
  s.tick(0.0);
  const json st = s.state_message();
  EXPECT_EQ(st["type"], "state");
  EXPECT_EQ(st["step"], 1);
  EXPECT_EQ(st["agents"].size(), 2u);
  EXPECT_EQ(st["rays"].size(), 2u);
  EXPECT_EQ(st["rays"][0].size(), static_cast<std::size_t>(kRayCount));
  EXPECT_EQ(st["object"]["corners"].size(), 4u);
  EXPECT_FALSE(st["anchors"]["points"].empty());
  EXPECT_TRUE(st["metrics"].contains("tilt_rate"));
}

TEST(CommandLog, RejectsMalformedLogs) {
  std::istringstream empty("");
  EXPECT_THROW(replay_command_log(empty, AgentPolicy::scripted()), Error);
  Session s = corridor_session();
  s.tick(0.0);
  std::string log = s.command_log();
  // Drop the reset record so the step has no episode.
  const auto first_nl = log.find('\n');
  const auto second_nl = log.find('\n', first_nl + 1);
  log.erase(first_nl + 1, second_nl - first_nl);
  std::istringstream broken(log);
  EXPECT_THROW(replay_command_log(broken, AgentPolicy::scripted()), Error);
}

// --- transport ---

TEST(BoundedQueue, DropsOldestDroppableOnly) {
  BoundedQueue<int> q(2);
  EXPECT_TRUE(q.push(1, true));
  EXPECT_TRUE(q.push(2, false));
  EXPECT_TRUE(q.push(3, false));  // evicts 1
  EXPECT_EQ(q.dropped(), 1u);
  EXPECT_FALSE(q.push(4, true));  // nothing droppable to evict
  EXPECT_EQ(q.dropped(), 2u);
  EXPECT_TRUE(q.push(5, false));  // kept beyond capacity
  EXPECT_EQ(q.size(), 3u);
  EXPECT_EQ(*q.pop(), 2);
  EXPECT_EQ(*q.pop(), 3);
  EXPECT_EQ(*q.pop(), 5);
  EXPECT_FALSE(q.pop().has_value());
}

// Minimal blocking TCP client.
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
  ~Client() { close(); }
  bool ok() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void send(const std::string& bytes) {
    ASSERT_EQ(::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL),
              static_cast<ssize_t>(bytes.size()));
  }
  // Appends whatever arrives within `ms`; false on EOF.
  bool read_some(int ms) {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, ms) <= 0) return true;
    char chunk[8192];
    const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
    if (n <= 0) return false;
    buffer.append(chunk, static_cast<std::size_t>(n));
    return true;
  }
  // Framed messages until one of type `type` arrives or the deadline passes.
  std::vector<json> read_until(const std::string& type, double seconds) {
    std::vector<json> out;
    const auto deadline = Clock::now() + std::chrono::duration<double>(seconds);
    while (Clock::now() < deadline) {
      const bool open = read_some(50);
      for (auto& m : decode_frames(buffer)) {
        out.push_back(m);
        if (m.value("type", "") == type) return out;
      }
      if (!open) break;
    }
    return out;
  }

  std::string buffer;

 private:
  int fd_ = -1;
};

std::string masked_text(const std::string& payload) {
  std::string out;
  out.push_back(static_cast<char>(0x81));
  out.push_back(static_cast<char>(0x80 | payload.size()));
  const char mask[4] = {0x11, 0x22, 0x33, 0x44};
  out.append(mask, 4);
  for (std::size_t k = 0; k < payload.size(); ++k) out.push_back(payload[k] ^ mask[k % 4]);
  return out;
}

TEST(Server, LiveEpisodeOverTcp) {
  const std::string log_path = ::testing::TempDir() + "/hitl_cmdlog.jsonl";
  const std::string metrics_path = ::testing::TempDir() + "/hitl_metrics.jsonl";
  std::remove(metrics_path.c_str());
  SessionConfig scfg;
  scfg.seed = 5;
  ServerConfig cfg;
  cfg.port = 0;
  cfg.speed = 10.0;
  cfg.command_log_path = log_path;
  cfg.metrics_path = metrics_path;
  Server server(load_scenario("corridor"), scfg, AgentPolicy::scripted(), cfg);
  const int port = server.start();
  ASSERT_GT(port, 0);
  std::this_thread::sleep_for(std::chrono::milliseconds(300));

  Client c(port);
  ASSERT_TRUE(c.ok());
  c.send(encode_frame(json{{"type", "cmd"}, {"seq", 0}, {"a", std::vector<double>(11, 0.0)}}));
  const auto opening = c.read_until("state", 5.0);
  ASSERT_GE(opening.size(), 2u);
  EXPECT_EQ(opening[0]["type"], "hello");
  // Nothing advanced while no client was connected.
  EXPECT_EQ(opening[1]["step"], 0);

  {
    Client busy(port);
    ASSERT_TRUE(busy.ok());
    const auto reply = busy.read_until("error", 5.0);
    ASSERT_FALSE(reply.empty());
    EXPECT_EQ(reply.back()["message"], "session busy");
  }

  const auto rest = c.read_until("end", 30.0);
  ASSERT_FALSE(rest.empty());
  ASSERT_EQ(rest.back()["type"], "end");
  EXPECT_TRUE(rest.back()["result"]["success"].get<bool>());
  std::int64_t last_seq = -1;
  for (const auto& m : rest) {
    EXPECT_GT(m["seq"].get<std::int64_t>(), last_seq);
    last_seq = m["seq"].get<std::int64_t>();
  }
  c.close();
  std::this_thread::sleep_for(std::chrono::milliseconds(300));

  // A plain HTTP request gets the upgrade-required answer.
  {
    Client http(port);
    ASSERT_TRUE(http.ok());
    http.send("GET / HTTP/1.1\r\nHost: localhost\r\n\r\n");
    for (int k = 0; k < 20 && http.buffer.find("\r\n\r\n") == std::string::npos; ++k) {
      if (!http.read_some(100)) break;
    }
    EXPECT_EQ(http.buffer.rfind("HTTP/1.1 426", 0), 0u);
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(200));

  server.stop();
  const auto done = server.finished_episodes();
  ASSERT_EQ(done.size(), 1u);
  EXPECT_TRUE(done[0].success);
  std::ifstream log(log_path);
  const auto replayed = replay_command_log(log, AgentPolicy::scripted());
  ASSERT_EQ(replayed.size(), 1u);
  EXPECT_EQ(replayed[0], done[0]);
  std::ifstream mf(metrics_path);
  std::string line;
  ASSERT_TRUE(static_cast<bool>(std::getline(mf, line)));
  EXPECT_EQ(json::parse(line), to_json(done[0]));
}

TEST(Server, BrowserUpgradePath) {
  ServerConfig cfg;
  cfg.port = 0;
  Server server(load_scenario("S21"), SessionConfig{}, AgentPolicy::scripted(), cfg);
  const int port = server.start();
  Client c(port);
  ASSERT_TRUE(c.ok());
  c.send("GET /session HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\n"
         "Connection: Upgrade\r\nSec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\n"
         "Sec-WebSocket-Version: 13\r\n\r\n");
  std::vector<WebSocketFrame> frames;
  bool upgraded = false;
  for (int k = 0; k < 50 && frames.size() < 2; ++k) {
    ASSERT_TRUE(c.read_some(100));
    if (!upgraded) {
      const auto end = c.buffer.find("\r\n\r\n");
      if (end == std::string::npos) continue;
      ASSERT_EQ(c.buffer.rfind("HTTP/1.1 101", 0), 0u);
      EXPECT_NE(c.buffer.find("s3pPLMBiTxaQ9kYGzzhZRbK+xOo="), std::string::npos);
      c.buffer.erase(0, end + 4);
      upgraded = true;
    }
    for (auto& f : websocket_decode(c.buffer)) frames.push_back(f);
  }
  ASSERT_GE(frames.size(), 2u);
  EXPECT_EQ(json::parse(frames[0].payload)["type"], "hello");
  EXPECT_EQ(json::parse(frames[1].payload)["type"], "state");
  c.send(masked_text(R"({"type":"pause"})"));
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  EXPECT_TRUE(server.running());
  server.stop();
  EXPECT_FALSE(server.running());
}

TEST(Server, ProtocolViolationClosesWithError) {
  ServerConfig cfg;
  cfg.port = 0;
  Server server(load_scenario("corridor"), SessionConfig{}, AgentPolicy::scripted(), cfg);
  const int port = server.start();
  Client c(port);
  ASSERT_TRUE(c.ok());
  c.send(encode_frame(json{{"type", "teleport"}}));
  const auto reply = c.read_until("error", 5.0);
  ASSERT_FALSE(reply.empty());
  EXPECT_EQ(reply.back()["type"], "error");
  EXPECT_NE(reply.back()["message"].get<std::string>().find("unknown message type"),
            std::string::npos);
  server.stop();
}

TEST(Server, ConfigValidation) {
  ServerConfig slow;
  slow.port = 0;
  slow.broadcast_hz = 5.0;
  EXPECT_THROW(Server(load_scenario("corridor"), SessionConfig{}, AgentPolicy::scripted(), slow),
               Error);
  ServerConfig bad_host;
  bad_host.port = 0;
  bad_host.host = "not-an-ip";
  Server b(load_scenario("corridor"), SessionConfig{}, AgentPolicy::scripted(), bad_host);
  EXPECT_THROW(b.start(), Error);
}

}  // namespace
}  // namespace tandem
