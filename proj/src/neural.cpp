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

#include "tandem/neural.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tandem {

void MlpSpec::validate() const {
  if (input_dim <= 0 || output_dim <= 0) throw Error("mlp spec: dimensions must be positive");
  for (int h : hidden) {
    if (h <= 0) throw Error("mlp spec: hidden sizes must be positive");
  }
  if (!std::isfinite(log_std_init)) throw Error("mlp spec: log_std_init must be finite");
  if (!(output_gain > 0)) throw Error("mlp spec: output_gain must be positive");
}

nlohmann::json to_json(const MlpSpec& s) {
  return {{"input_dim", s.input_dim},
          {"hidden", s.hidden},
          {"output_dim", s.output_dim},
          {"activation", "relu"},
          {"head", s.head == Head::kGaussianPolicy ? "gaussian_policy" : "scalar_value"},
          {"log_std_init", s.log_std_init},
          {"output_gain", s.output_gain}};
}

MlpSpec mlp_spec_from_json(const nlohmann::json& j) {
  try {
    MlpSpec s;
    s.input_dim = j.at("input_dim").get<int>();
    s.hidden = j.at("hidden").get<std::vector<int>>();
    s.output_dim = j.at("output_dim").get<int>();
    const auto head = j.at("head").get<std::string>();
    if (head == "gaussian_policy") {
      s.head = Head::kGaussianPolicy;
    } else if (head == "scalar_value") {
      s.head = Head::kScalarValue;
    } else {
      throw Error("mlp spec: unknown head '" + head + "'");
    }
    if (j.value("activation", std::string("relu")) != "relu") {
      throw Error("mlp spec: only relu activation is supported");
    }
    s.log_std_init = j.value("log_std_init", s.log_std_init);
    s.output_gain = j.value("output_gain", s.output_gain);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("mlp spec: ") + e.what());
  }
}

const Mlp<double>& Checkpoint::network(const std::string& name) const {
  for (const auto& n : networks) {
    if (n.name == name) return n.net;
  }
  throw Error("checkpoint: no network named '" + name + "'");
}

namespace {

constexpr char kMagic[8] = {'T', 'N', 'D', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + k])) << (8 * k);
  }
  return v;
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json nets = nlohmann::json::array();
  for (const auto& n : ckpt.networks) {
    nets.push_back({{"name", n.name}, {"spec", to_json(n.net.spec())}, {"count", n.net.size()}});
  }
  const nlohmann::json header = {{"format", "ckpt_v1"},
                                 {"version", kVersion},
                                 {"seed", ckpt.seed},
                                 {"step", ckpt.step},
                                 {"networks", nets},
                                 {"meta", ckpt.meta}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& n : ckpt.networks) {
    const auto& p = n.net.params();
    for (Eigen::Index i = 0; i < p.size(); ++i) put_f32(out, static_cast<float>(p(i)));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error("checkpoint: not a ckpt_v1 file");
  }
  if (get_u32(bytes, 8) != kVersion) throw Error("checkpoint: unsupported version");
  const std::uint32_t len = get_u32(bytes, 12);
  if (bytes.size() < 16 + static_cast<std::size_t>(len)) throw Error("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != "ckpt_v1") throw Error("checkpoint: wrong format tag");
  Checkpoint ckpt;
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.step = header.at("step").get<std::int64_t>();
  ckpt.meta = header.value("meta", nlohmann::json::object());
  std::size_t at = 16 + len;
  for (const auto& n : header.at("networks")) {
    Mlp<double> net(mlp_spec_from_json(n.at("spec")));
    if (n.at("count").get<Eigen::Index>() != net.size()) {
      throw Error("checkpoint: parameter count does not match spec");
    }
    if (bytes.size() < at + 4 * static_cast<std::size_t>(net.size())) {
      throw Error("checkpoint: truncated parameters");
    }
    for (Eigen::Index i = 0; i < net.size(); ++i, at += 4) {
      net.params()(i) = std::bit_cast<float>(get_u32(bytes, at));
    }
    ckpt.networks.push_back({n.at("name").get<std::string>(), std::move(net)});
  }
  if (at != bytes.size()) throw Error("checkpoint: trailing bytes");
  return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot write " + path);
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("checkpoint: write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace tandem
