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

// Fixed-length packets and the layered routing records carried inside them.
//
// Wire layout of a packet, always exactly L bytes:
//
//   "MXNN" | 0x01 | payload_ct_len u32 BE | payload_ct
//          | onion_ct_len u32 BE | onion_ct | random padding
//
// onion_ct is a record sealed to the receiving hop. The record names the
// next hop and carries the (still sealed) record for that hop, so each
// server learns only its immediate successor. payload_ct carries the data
// or gradient matrix, re-sealed by every hop to its successor.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mixnn/bytes.h"
#include "mixnn/crypto.h"
#include "mixnn/matrix.h"
#include "mixnn/nn.h"

namespace mixnn {

inline constexpr size_t kDefaultPacketSize = 524288;
inline constexpr uint8_t kWireVersion = 0x01;
inline constexpr size_t kPacketHeaderBytes = 4 + 1 + 4 + 4;

enum class OpCode : uint8_t {
  kInit = 0,
  kForward = 1,
  kBackward = 2,
  kTest = 3,
};

std::string to_string(OpCode op);

// An address together with the public key that reaches it.
struct Hop {
  Address address;
  PublicKey pk;

  bool operator==(const Hop&) const = default;
};

struct InitFields {
  bool dummy = false;
  LayerSpec layer;
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  uint64_t seed = 0;

  bool operator==(const InitFields&) const = default;
};

struct ForwardFields {
  // Present only in the record of the layer that evaluates the loss.
  std::optional<std::vector<int32_t>> labels;

  bool operator==(const ForwardFields&) const = default;
};

struct BackwardFields {
  // Ask the terminal hop to return its input gradient to the designer
  // (used when the designer holds the first layer itself).
  bool return_gradient = false;

  bool operator==(const BackwardFields&) const = default;
};

struct TestFields {
  bool end_layer = false;

  bool operator==(const TestFields&) const = default;
};

using PhaseFields = std::variant<InitFields, ForwardFields, BackwardFields, TestFields>;

struct OnionRecord {
  OpCode op = OpCode::kForward;
  bool cover = false;
  PhaseFields fields = ForwardFields{};
  std::optional<Bytes> inner;  // the successor's sealed record
  std::optional<Hop> next;     // successor, or the designer at a terminal hop
  Bytes filler;                // random bytes in cover records

  bool operator==(const OnionRecord&) const = default;
};

Bytes encode_record(const OnionRecord& record);
OnionRecord decode_record(ByteSpan bytes);

// [rows u32 BE][cols u32 BE][rows*cols float32 LE]
Bytes encode_matrix(const Matrix& m);
Matrix decode_matrix(ByteSpan bytes);

Bytes encode_labels(std::span<const int32_t> labels);

// ---- packets --------------------------------------------------------------

struct Packet {
  Bytes wire;

  size_t size() const { return wire.size(); }
};

struct PacketSegments {
  Bytes payload_ct;
  Bytes onion_ct;
};

// Throws CapacityError (naming the required size) if the segments do not
// fit in `packet_size` bytes.
Packet frame_packet(ByteSpan payload_ct, ByteSpan onion_ct, size_t packet_size);
// Throws FramingError on a length mismatch, bad magic/version or
// inconsistent segment lengths.
PacketSegments parse_packet(const Packet& packet, size_t packet_size);

// A packet plus where to send it.
struct Routed {
  Address to;
  Packet packet;
};

// ---- cascades -------------------------------------------------------------

struct CascadeEntry {
  std::string node_id;
  Hop hop;
  std::optional<LayerSpec> layer;  // nullopt: dummy relay
  uint64_t seed = 0;               // parameter initialization seed

  bool is_dummy() const { return !layer.has_value(); }
};

struct CascadeSpec {
  std::vector<CascadeEntry> entries;
  Hop designer;
  size_t packet_size = kDefaultPacketSize;
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  // True when the designer evaluates the loss locally, so the last remote
  // layer returns activations instead of a loss.
  bool loss_held_by_designer = false;

  size_t size() const { return entries.size(); }
  size_t actual_count() const;
  // Throws ConfigError if the cascade breaks its invariants.
  void validate() const;
};

Routed pack_init(const CascadeSpec& cascade);

// `labels` must be given exactly when the last remote layer evaluates the
// loss; they are placed only in that layer's record.
Routed pack_forward(const CascadeSpec& cascade, const Matrix& data,
                    const std::optional<std::vector<int32_t>>& labels);

// Routes from the last node back to the first. `gradient`, when given,
// seeds the last node (the designer evaluated the loss itself).
Routed pack_backward(const CascadeSpec& cascade, const std::optional<Matrix>& gradient = {},
                     bool return_gradient = false);

// One-way sweep through nodes 1..end_layer (1-based); node end_layer
// returns its activations to the designer.
Routed pack_test(const CascadeSpec& cascade, const Matrix& data, size_t end_layer);

struct LoopPacket {
  Routed routed;
  Bytes token;
};

// Cover-flagged forward-shaped onion through every node and back to the
// designer, whose own sealed blob (carrying `token`) rides innermost.
LoopPacket pack_cover_loop(const CascadeSpec& cascade);

// A single-hop cover packet that the receiver decrypts and drops.
Packet pack_cover_hop(const PublicKey& target, size_t packet_size);

struct Unwrapped {
  OnionRecord record;
  std::optional<Bytes> payload;  // decrypted payload, if the packet had one
};

// Strips one layer. Throws FramingError for a wrong-length packet and
// AuthError when the onion or payload was not sealed to `sk` or was altered.
Unwrapped unwrap(const SecretKey& sk, const Packet& packet, size_t packet_size);

// Builds the successor's packet: `payload_plain` re-sealed to the next hop,
// the inner record as onion, fresh random padding. nullopt at a terminal.
std::optional<Routed> next_packet(const OnionRecord& record,
                                  std::optional<ByteSpan> payload_plain, size_t packet_size);

// ---- messages to the designer ---------------------------------------------

enum class ReplyKind : uint8_t {
  kLoss = 0,    // 1x1 training loss
  kAck = 1,     // backward sweep finished (may carry the input gradient)
  kOutput = 2,  // activations of a test end layer / last remote layer
  kLoop = 3,    // the designer's own loop message came back
  kError = 4,   // protocol error at a terminal hop
};

std::string to_string(ReplyKind kind);

struct Reply {
  ReplyKind kind = ReplyKind::kAck;
  OpCode op = OpCode::kForward;
  Bytes token;
  std::string error;
  std::optional<Matrix> value;
};

Bytes encode_reply_header(const Reply& reply);
Packet pack_reply(const Reply& reply, const PublicKey& designer_pk, size_t packet_size);
// Throws AuthError/FramingError/DecodeError on anything not addressed to
// `designer_sk`.
Reply open_reply(const SecretKey& designer_sk, const Packet& packet, size_t packet_size);

}  // namespace mixnn
