// Copyright 2026 The MixNN Authors
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

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "mixnn/crypto.h"
#include "mixnn/nn.h"
#include "mixnn/onion.h"

namespace mixnn {

enum class NodeRole { kUninitialized, kActual, kDummy };

std::string to_string(NodeRole role);

struct NodeStats {
  uint64_t packets = 0;       // handle_packet invocations
  uint64_t nn_calls = 0;      // layer_forward / layer_backward invocations
  uint64_t relayed = 0;
  uint64_t replies = 0;
  uint64_t dropped = 0;
  uint64_t protocol_errors = 0;
  uint64_t covers_emitted = 0;
};

// What handle_packet decided to do with one packet.
struct NodeAction {
  enum class Kind {
    kRelay,          // forward `out` to the next server
    kReply,          // send `out` to the designer
    kDone,           // handled, nothing to send (terminal init)
    kDrop,           // undecryptable, malformed, or cover traffic at its end
    kProtocolError,  // valid packet in the wrong state; `out` may carry an error reply
  };

  Kind kind = Kind::kDrop;
  std::optional<Routed> out;
  std::string detail;
};

std::string to_string(NodeAction::Kind kind);

using LogSink = std::function<void(const std::string& line)>;

// Sees every decrypted record and payload; used by tests to check what a
// server can learn.
using PlaintextObserver =
    std::function<void(const OnionRecord& record, const std::optional<Bytes>& payload)>;

// Sees every inbound packet together with what the node did with it.
using PacketTap = std::function<void(const Packet& inbound, const NodeAction& action)>;

// Writes a structured log line to standard error.
void stderr_log_sink(const std::string& line);

// One layer server. Processes packets strictly one at a time; the caller
// owns the transport and serializes calls.
class Node {
 public:
  Node(std::string node_id, KeyPair keys, size_t packet_size = kDefaultPacketSize);

  const std::string& id() const { return id_; }
  const PublicKey& public_key() const { return keys_.pk; }
  size_t packet_size() const { return packet_size_; }

  NodeAction handle_packet(const Packet& packet);

  // Single-hop cover packet to an adjacent peer learned from traffic.
  // Throws ProtocolError for an unknown peer.
  Routed emit_cover(const Address& target);

  // Poisson cover emission; rate <= 0 disables it (the default).
  void set_cover_rate(double per_second, uint64_t seed);
  // Time until the next cover emission, or nullopt when disabled.
  std::optional<std::chrono::nanoseconds> next_cover_interval();

  void set_log_sink(LogSink sink) { log_ = std::move(sink); }
  void set_observer(PlaintextObserver observer) { observer_ = std::move(observer); }
  void set_packet_tap(PacketTap tap) { tap_ = std::move(tap); }
  // Fault injection: negate every incoming gradient before using it.
  void set_tamper_gradient_sign(bool on) { tamper_ = on; }

  NodeRole role() const { return role_; }
  const LayerState* layer() const { return layer_ ? &*layer_ : nullptr; }
  const NodeStats& stats() const { return stats_; }
  const std::map<Address, PublicKey>& peers() const { return peers_; }
  bool forward_pending() const { return forward_pending_; }

 private:
  NodeAction do_init(const OnionRecord& record);
  NodeAction do_forward(const OnionRecord& record, const std::optional<Bytes>& payload);
  NodeAction do_backward(const OnionRecord& record, const std::optional<Bytes>& payload);
  NodeAction do_test(const OnionRecord& record, const std::optional<Bytes>& payload);
  NodeAction relay_cover(const OnionRecord& record, const std::optional<Bytes>& payload);

  NodeAction relay(const OnionRecord& record, std::optional<ByteSpan> payload);
  NodeAction reply(const OnionRecord& record, Reply message);
  Matrix decode_payload(const std::optional<Bytes>& payload) const;
  void log(const std::string& op, const NodeAction& action);

  std::string id_;
  KeyPair keys_;
  size_t packet_size_;

  NodeRole role_ = NodeRole::kUninitialized;
  std::optional<LayerState> layer_;
  bool forward_pending_ = false;
  bool tamper_ = false;

  std::map<Address, PublicKey> peers_;
  NodeStats stats_;
  LogSink log_ = stderr_log_sink;
  PlaintextObserver observer_;
  PacketTap tap_;

  double cover_rate_ = 0.0;
  std::mt19937_64 cover_rng_;
};

}  // namespace mixnn
