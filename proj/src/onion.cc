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

#include "mixnn/onion.h"

#include <sodium.h>

#include <bit>
#include <cstring>
#include <limits>
#include <set>

#include "mixnn/errors.h"

namespace mixnn {

namespace {

constexpr char kMagic[4] = {'M', 'X', 'N', 'N'};

// Record tags.
enum : uint8_t {
  kTagOp = 1,
  kTagCover = 2,
  kTagInit = 3,
  kTagForward = 4,
  kTagBackward = 5,
  kTagTest = 6,
  kTagInner = 7,
  kTagNext = 8,
  kTagFiller = 9,
};

// Nested tags; each phase block has its own small namespace.
enum : uint8_t {
  kTagInitDummy = 1,
  kTagInitChain = 2,
  kTagInitLearningRate = 3,
  kTagInitMomentum = 4,
  kTagInitSeed = 5,
  kTagForwardLabels = 1,
  kTagBackwardReturnGradient = 1,
  kTagTestEnd = 1,
  kTagHopAddress = 1,
  kTagHopKey = 2,
  kTagReplyKind = 1,
  kTagReplyOp = 2,
  kTagReplyToken = 3,
  kTagReplyError = 4,
};

void put_tlv(ByteWriter& w, uint8_t tag, ByteSpan value) {
  w.u8(tag);
  w.u32(static_cast<uint32_t>(value.size()));
  w.raw(value);
}

void put_u8(ByteWriter& w, uint8_t tag, uint8_t v) {
  const uint8_t b[1] = {v};
  put_tlv(w, tag, b);
}

struct Tlv {
  uint8_t tag;
  ByteSpan value;
};

// Splits a TLV sequence, rejecting duplicate tags.
std::vector<Tlv> split_tlv(ByteSpan bytes) {
  std::vector<Tlv> out;
  std::set<uint8_t> seen;
  ByteReader r(bytes);
  while (!r.done()) {
    const uint8_t tag = r.u8();
    const uint32_t len = r.u32();
    if (!seen.insert(tag).second) {
      throw DecodeError("duplicate record tag " + std::to_string(tag));
    }
    out.push_back({tag, r.raw(len)});
  }
  return out;
}

uint8_t single_byte(const Tlv& t) {
  if (t.value.size() != 1) throw DecodeError("expected a one-byte field");
  return t.value[0];
}

bool flag(const Tlv& t) {
  const uint8_t v = single_byte(t);
  if (v > 1) throw DecodeError("flag field out of range");
  return v == 1;
}

uint32_t f32_bits(float v) { return std::bit_cast<uint32_t>(v); }

float read_f32(const Tlv& t) {
  ByteReader r(t.value);
  const float v = std::bit_cast<float>(r.u32());
  if (!r.done()) throw DecodeError("float field has trailing bytes");
  return v;
}

Bytes encode_hop(const Hop& hop) {
  ByteWriter w;
  put_tlv(w, kTagHopAddress, to_bytes(hop.address.to_string()));
  put_tlv(w, kTagHopKey, hop.pk.bytes);
  return std::move(w).take();
}

Hop decode_hop(ByteSpan bytes) {
  std::optional<Address> addr;
  std::optional<PublicKey> pk;
  for (const Tlv& t : split_tlv(bytes)) {
    if (t.tag == kTagHopAddress) {
      try {
        addr = Address::parse(to_string(t.value));
      } catch (const ConfigError& e) {
        throw DecodeError(e.what());
      }
    } else if (t.tag == kTagHopKey) {
      pk = PublicKey::from_bytes(t.value);
    } else {
      throw DecodeError("unknown hop tag " + std::to_string(t.tag));
    }
  }
  if (!addr || !pk) throw DecodeError("hop is missing its address or key");
  return Hop{*addr, *pk};
}

Bytes encode_chain(const LayerSpec& spec) {
  ByteWriter w;
  w.u32(static_cast<uint32_t>(spec.ops.size()));
  for (const auto& op : spec.ops) {
    w.u8(static_cast<uint8_t>(op.kind));
    w.u32(op.in_dim);
    w.u32(op.out_dim);
  }
  return std::move(w).take();
}

LayerSpec decode_chain(ByteSpan bytes) {
  ByteReader r(bytes);
  const uint32_t count = r.u32();
  if (count > r.remaining() / 9) throw DecodeError("chain length exceeds record");
  LayerSpec spec;
  for (uint32_t i = 0; i < count; ++i) {
    const uint8_t kind = r.u8();
    if (kind > static_cast<uint8_t>(PrimitiveKind::kIdentity)) {
      throw DecodeError("unknown primitive " + std::to_string(kind));
    }
    PrimitiveOp op{static_cast<PrimitiveKind>(kind), r.u32(), r.u32()};
    spec.ops.push_back(op);
  }
  if (!r.done()) throw DecodeError("chain has trailing bytes");
  return spec;
}

std::vector<int32_t> decode_labels(ByteSpan bytes) {
  ByteReader r(bytes);
  const uint32_t count = r.u32();
  if (count != r.remaining() / 4 || r.remaining() % 4 != 0) {
    throw DecodeError("label block length mismatch");
  }
  std::vector<int32_t> labels(count);
  for (auto& l : labels) l = static_cast<int32_t>(r.u32());
  return labels;
}

Bytes encode_phase(const PhaseFields& fields) {
  ByteWriter w;
  if (const auto* f = std::get_if<InitFields>(&fields)) {
    put_u8(w, kTagInitDummy, f->dummy ? 1 : 0);
    put_tlv(w, kTagInitChain, encode_chain(f->layer));
    ByteWriter lr, mom, seed;
    lr.u32(f32_bits(f->learning_rate));
    mom.u32(f32_bits(f->momentum));
    seed.u64(f->seed);
    put_tlv(w, kTagInitLearningRate, lr.bytes());
    put_tlv(w, kTagInitMomentum, mom.bytes());
    put_tlv(w, kTagInitSeed, seed.bytes());
  } else if (const auto* f = std::get_if<ForwardFields>(&fields)) {
    if (f->labels) put_tlv(w, kTagForwardLabels, encode_labels(*f->labels));
  } else if (const auto* f = std::get_if<BackwardFields>(&fields)) {
    put_u8(w, kTagBackwardReturnGradient, f->return_gradient ? 1 : 0);
  } else if (const auto* f = std::get_if<TestFields>(&fields)) {
    put_u8(w, kTagTestEnd, f->end_layer ? 1 : 0);
  }
  return std::move(w).take();
}

PhaseFields decode_phase(uint8_t tag, ByteSpan bytes) {
  const auto tlvs = split_tlv(bytes);
  switch (tag) {
    case kTagInit: {
      InitFields f;
      bool have_chain = false, have_seed = false;
      for (const Tlv& t : tlvs) {
        switch (t.tag) {
          case kTagInitDummy: f.dummy = flag(t); break;
          case kTagInitChain: f.layer = decode_chain(t.value); have_chain = true; break;
          case kTagInitLearningRate: f.learning_rate = read_f32(t); break;
          case kTagInitMomentum: f.momentum = read_f32(t); break;
          case kTagInitSeed: {
            ByteReader r(t.value);
            f.seed = r.u64();
            if (!r.done()) throw DecodeError("seed has trailing bytes");
            have_seed = true;
            break;
          }
          default: throw DecodeError("unknown init tag " + std::to_string(t.tag));
        }
      }
      if (!have_chain || !have_seed) throw DecodeError("init fields incomplete");
      return f;
    }
    case kTagForward: {
      ForwardFields f;
      for (const Tlv& t : tlvs) {
        if (t.tag != kTagForwardLabels) throw DecodeError("unknown forward tag");
        f.labels = decode_labels(t.value);
      }
      return f;
    }
    case kTagBackward: {
      BackwardFields f;
      for (const Tlv& t : tlvs) {
        if (t.tag != kTagBackwardReturnGradient) throw DecodeError("unknown backward tag");
        f.return_gradient = flag(t);
      }
      return f;
    }
    case kTagTest: {
      TestFields f;
      for (const Tlv& t : tlvs) {
        if (t.tag != kTagTestEnd) throw DecodeError("unknown test tag");
        f.end_layer = flag(t);
      }
      return f;
    }
  }
  throw DecodeError("not a phase tag");
}

uint8_t phase_tag(OpCode op) {
  switch (op) {
    case OpCode::kInit: return kTagInit;
    case OpCode::kForward: return kTagForward;
    case OpCode::kBackward: return kTagBackward;
    case OpCode::kTest: return kTagTest;
  }
  throw DecodeError("bad op");
}

size_t phase_index(OpCode op) { return static_cast<size_t>(op); }

Bytes seal_record(const PublicKey& pk, const OnionRecord& rec) {
  return seal(pk, encode_record(rec));
}

Routed frame_for(const Hop& first, ByteSpan payload_ct, ByteSpan onion_ct, size_t L) {
  return Routed{first.address, frame_packet(payload_ct, onion_ct, L)};
}

Bytes random_filler() {
  // 16..79 bytes, enough to make cover records vary in size.
  Bytes len = random_bytes(1);
  return random_bytes(16 + (len[0] % 64));
}

}  // namespace

std::string to_string(OpCode op) {
  switch (op) {
    case OpCode::kInit: return "init";
    case OpCode::kForward: return "forward";
    case OpCode::kBackward: return "backward";
    case OpCode::kTest: return "test";
  }
  return "unknown";
}

std::string to_string(ReplyKind kind) {
  switch (kind) {
    case ReplyKind::kLoss: return "loss";
    case ReplyKind::kAck: return "ack";
    case ReplyKind::kOutput: return "output";
    case ReplyKind::kLoop: return "loop";
    case ReplyKind::kError: return "error";
  }
  return "unknown";
}

Bytes encode_record(const OnionRecord& rec) {
  if (rec.fields.index() != phase_index(rec.op)) {
    throw Error("record phase fields do not match op " + to_string(rec.op));
  }
  ByteWriter w;
  put_u8(w, kTagOp, static_cast<uint8_t>(rec.op));
  put_u8(w, kTagCover, rec.cover ? 1 : 0);
  put_tlv(w, phase_tag(rec.op), encode_phase(rec.fields));
  if (rec.inner) put_tlv(w, kTagInner, *rec.inner);
  if (rec.next) put_tlv(w, kTagNext, encode_hop(*rec.next));
  if (!rec.filler.empty()) put_tlv(w, kTagFiller, rec.filler);
  return std::move(w).take();
}

OnionRecord decode_record(ByteSpan bytes) {
  OnionRecord rec;
  std::optional<OpCode> op;
  std::optional<std::pair<uint8_t, ByteSpan>> phase;
  for (const Tlv& t : split_tlv(bytes)) {
    switch (t.tag) {
      case kTagOp: {
        const uint8_t v = single_byte(t);
        if (v > static_cast<uint8_t>(OpCode::kTest)) {
          throw DecodeError("op code " + std::to_string(v) + " out of range");
        }
        op = static_cast<OpCode>(v);
        break;
      }
      case kTagCover: rec.cover = flag(t); break;
      case kTagInit:
      case kTagForward:
      case kTagBackward:
      case kTagTest:
        if (phase) throw DecodeError("record carries two phase blocks");
        phase = std::make_pair(t.tag, t.value);
        break;
      case kTagInner: rec.inner = Bytes(t.value.begin(), t.value.end()); break;
      case kTagNext: rec.next = decode_hop(t.value); break;
      case kTagFiller: rec.filler = Bytes(t.value.begin(), t.value.end()); break;
      default: throw DecodeError("unknown record tag " + std::to_string(t.tag));
    }
  }
  if (!op) throw DecodeError("record has no op code");
  if (!phase || phase->first != phase_tag(*op)) {
    throw DecodeError("record phase block does not match op " + to_string(*op));
  }
  rec.op = *op;
  rec.fields = decode_phase(phase->first, phase->second);
  return rec;
}

Bytes encode_matrix(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) throw ShapeError("cannot encode empty matrix " + m.shape());
  ByteWriter w(8 + 4 * m.size());
  w.u32(static_cast<uint32_t>(m.rows()));
  w.u32(static_cast<uint32_t>(m.cols()));
  for (float v : m.values()) w.f32_le(v);
  return std::move(w).take();
}

Matrix decode_matrix(ByteSpan bytes) {
  ByteReader r(bytes);
  const uint64_t rows = r.u32();
  const uint64_t cols = r.u32();
  if (rows == 0 || cols == 0) throw DecodeError("matrix header has a zero dimension");
  if (rows * cols * 4 != r.remaining()) {
    throw DecodeError("matrix header " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " does not match " + std::to_string(r.remaining()) + " data bytes");
  }
  std::vector<float> data(rows * cols);
  for (float& v : data) v = r.f32_le();
  return Matrix(rows, cols, std::move(data));
}

Bytes encode_labels(std::span<const int32_t> labels) {
  ByteWriter w(4 + 4 * labels.size());
  w.u32(static_cast<uint32_t>(labels.size()));
  for (int32_t l : labels) w.u32(static_cast<uint32_t>(l));
  return std::move(w).take();
}

Packet frame_packet(ByteSpan payload_ct, ByteSpan onion_ct, size_t packet_size) {
  const size_t needed = kPacketHeaderBytes + payload_ct.size() + onion_ct.size();
  if (needed > packet_size) {
    throw CapacityError("packet needs " + std::to_string(needed) + " bytes but L is " +
                        std::to_string(packet_size));
  }
  Packet p;
  p.wire.resize(packet_size);
  uint8_t* out = p.wire.data();
  std::memcpy(out, kMagic, 4);
  out[4] = kWireVersion;
  size_t pos = 5;
  auto put_len = [&](size_t n) {
    for (int shift = 24; shift >= 0; shift -= 8) out[pos++] = static_cast<uint8_t>(n >> shift);
  };
  put_len(payload_ct.size());
  if (!payload_ct.empty()) std::memcpy(out + pos, payload_ct.data(), payload_ct.size());
  pos += payload_ct.size();
  put_len(onion_ct.size());
  if (!onion_ct.empty()) std::memcpy(out + pos, onion_ct.data(), onion_ct.size());
  pos += onion_ct.size();
  fill_random(std::span<uint8_t>(out + pos, packet_size - pos));
  return p;
}

PacketSegments parse_packet(const Packet& packet, size_t packet_size) {
  if (packet.size() != packet_size) {
    throw FramingError("packet is " + std::to_string(packet.size()) + " bytes, expected " +
                       std::to_string(packet_size));
  }
  if (packet_size < kPacketHeaderBytes || std::memcmp(packet.wire.data(), kMagic, 4) != 0) {
    throw FramingError("bad packet magic");
  }
  if (packet.wire[4] != kWireVersion) {
    throw FramingError("unsupported packet version " + std::to_string(packet.wire[4]));
  }
  try {
    ByteReader r(packet.wire);
    r.raw(5);
    PacketSegments seg;
    const uint32_t payload_len = r.u32();
    auto payload = r.raw(payload_len);
    seg.payload_ct.assign(payload.begin(), payload.end());
    const uint32_t onion_len = r.u32();
    auto onion = r.raw(onion_len);
    seg.onion_ct.assign(onion.begin(), onion.end());
    return seg;
  } catch (const DecodeError& e) {
    throw FramingError(std::string("inconsistent segment lengths: ") + e.what());
  }
}

size_t CascadeSpec::actual_count() const {
  size_t n = 0;
  for (const auto& e : entries) n += e.is_dummy() ? 0 : 1;
  return n;
}

void CascadeSpec::validate() const {
  if (entries.empty()) throw ConfigError("cascade has no nodes");
  if (actual_count() == 0) throw ConfigError("cascade has no actual layer");
  for (const auto& e : entries) {
    if (e.layer) validate_chain(*e.layer);
  }
  const CascadeEntry& last = entries.back();
  if (last.is_dummy()) throw ConfigError("the last cascade node must be an actual layer");
  if (!loss_held_by_designer && !last.layer->ends_with_loss()) {
    throw ConfigError("the final actual layer must end in NLLLoss");
  }
  if (loss_held_by_designer && last.layer->ends_with_loss()) {
    throw ConfigError("loss is held by the designer but the last remote layer ends in NLLLoss");
  }
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.node_id).second) throw ConfigError("node " + e.node_id + " used twice");
  }
}

Routed pack_init(const CascadeSpec& cascade) {
  cascade.validate();
  const auto& es = cascade.entries;
  std::optional<Bytes> inner;
  for (size_t step = 0; step < es.size(); ++step) {
    const size_t i = es.size() - 1 - step;
    OnionRecord rec;
    rec.op = OpCode::kInit;
    InitFields f;
    f.dummy = es[i].is_dummy();
    if (es[i].layer) f.layer = *es[i].layer;
    f.learning_rate = cascade.learning_rate;
    f.momentum = cascade.momentum;
    f.seed = es[i].seed;
    rec.fields = f;
    if (inner) {
      rec.inner = std::move(inner);
      rec.next = es[i + 1].hop;
    }
    inner = seal_record(es[i].hop.pk, rec);
  }
  return frame_for(es.front().hop, {}, *inner, cascade.packet_size);
}

Routed pack_forward(const CascadeSpec& cascade, const Matrix& data,
                    const std::optional<std::vector<int32_t>>& labels) {
  cascade.validate();
  if (data.rows() == 0 || data.cols() == 0) throw ShapeError("empty batch");
  const bool loss_remote = cascade.entries.back().layer->ends_with_loss();
  if (loss_remote != labels.has_value()) {
    throw ConfigError(loss_remote ? "labels are required by the last layer"
                                  : "labels must not leave the designer");
  }
  if (labels && labels->size() != data.rows()) {
    throw ShapeError("batch has " + std::to_string(data.rows()) + " rows but " +
                     std::to_string(labels->size()) + " labels");
  }
  const auto& es = cascade.entries;
  std::optional<Bytes> inner;
  for (size_t step = 0; step < es.size(); ++step) {
    const size_t i = es.size() - 1 - step;
    OnionRecord rec;
    rec.op = OpCode::kForward;
    ForwardFields f;
    if (step == 0) {
      f.labels = labels;
      rec.next = cascade.designer;
    } else {
      rec.inner = std::move(inner);
      rec.next = es[i + 1].hop;
    }
    rec.fields = f;
    inner = seal_record(es[i].hop.pk, rec);
  }
  const Bytes payload = seal(es.front().hop.pk, encode_matrix(data));
  return frame_for(es.front().hop, payload, *inner, cascade.packet_size);
}

Routed pack_backward(const CascadeSpec& cascade, const std::optional<Matrix>& gradient,
                     bool return_gradient) {
  cascade.validate();
  if (cascade.loss_held_by_designer != gradient.has_value()) {
    throw ConfigError(gradient ? "the last layer evaluates the loss; no gradient expected"
                               : "a loss gradient is required when the designer holds the loss");
  }
  const auto& es = cascade.entries;
  std::optional<Bytes> inner;
  // Innermost record belongs to node 1, outermost to node n.
  for (size_t i = 0; i < es.size(); ++i) {
    OnionRecord rec;
    rec.op = OpCode::kBackward;
    BackwardFields f;
    if (i == 0) {
      f.return_gradient = return_gradient;
      rec.next = cascade.designer;
    } else {
      rec.inner = std::move(inner);
      rec.next = es[i - 1].hop;
    }
    rec.fields = f;
    inner = seal_record(es[i].hop.pk, rec);
  }
  Bytes payload;
  if (gradient) payload = seal(es.back().hop.pk, encode_matrix(*gradient));
  return frame_for(es.back().hop, payload, *inner, cascade.packet_size);
}

Routed pack_test(const CascadeSpec& cascade, const Matrix& data, size_t end_layer) {
  cascade.validate();
  const auto& es = cascade.entries;
  if (end_layer < 1 || end_layer > es.size()) {
    throw IndexError("end layer " + std::to_string(end_layer) + " outside [1, " +
                     std::to_string(es.size()) + "]");
  }
  if (es[end_layer - 1].is_dummy()) {
    throw IndexError("end layer " + std::to_string(end_layer) + " is a dummy node");
  }
  if (data.rows() == 0 || data.cols() == 0) throw ShapeError("empty batch");
  std::optional<Bytes> inner;
  for (size_t step = 0; step < end_layer; ++step) {
    const size_t i = end_layer - 1 - step;
    OnionRecord rec;
    rec.op = OpCode::kTest;
    TestFields f;
    if (step == 0) {
      f.end_layer = true;
      rec.next = cascade.designer;
    } else {
      rec.inner = std::move(inner);
      rec.next = es[i + 1].hop;
    }
    rec.fields = f;
    inner = seal_record(es[i].hop.pk, rec);
  }
  const Bytes payload = seal(es.front().hop.pk, encode_matrix(data));
  return frame_for(es.front().hop, payload, *inner, cascade.packet_size);
}

LoopPacket pack_cover_loop(const CascadeSpec& cascade) {
  if (cascade.entries.empty()) throw ConfigError("cascade has no nodes");
  const auto& es = cascade.entries;
  LoopPacket out;
  out.token = random_bytes(16);
  Reply own;
  own.kind = ReplyKind::kLoop;
  own.token = out.token;
  std::optional<Bytes> inner = seal(cascade.designer.pk, encode_reply_header(own));
  std::optional<Hop> next = cascade.designer;
  for (size_t step = 0; step < es.size(); ++step) {
    const size_t i = es.size() - 1 - step;
    OnionRecord rec;
    rec.op = OpCode::kForward;
    rec.cover = true;
    rec.fields = ForwardFields{};
    rec.inner = std::move(inner);
    rec.next = next;
    rec.filler = random_filler();
    inner = seal_record(es[i].hop.pk, rec);
    next = es[i].hop;
  }
  const Bytes payload = seal(es.front().hop.pk, random_bytes(1024));
  out.routed = frame_for(es.front().hop, payload, *inner, cascade.packet_size);
  return out;
}

Packet pack_cover_hop(const PublicKey& target, size_t packet_size) {
  OnionRecord rec;
  rec.op = static_cast<OpCode>(random_bytes(1)[0] % 4);
  switch (rec.op) {
    case OpCode::kInit: rec.fields = InitFields{}; break;
    case OpCode::kForward: rec.fields = ForwardFields{}; break;
    case OpCode::kBackward: rec.fields = BackwardFields{}; break;
    case OpCode::kTest: rec.fields = TestFields{}; break;
  }
  rec.cover = true;
  rec.filler = random_filler();
  const Bytes payload = seal(target, random_bytes(1024));
  return frame_packet(payload, seal_record(target, rec), packet_size);
}

Unwrapped unwrap(const SecretKey& sk, const Packet& packet, size_t packet_size) {
  PacketSegments seg = parse_packet(packet, packet_size);
  Unwrapped out;
  out.record = decode_record(open(sk, seg.onion_ct));
  if (!seg.payload_ct.empty()) out.payload = open(sk, seg.payload_ct);
  return out;
}

std::optional<Routed> next_packet(const OnionRecord& record,
                                  std::optional<ByteSpan> payload_plain, size_t packet_size) {
  if (!record.next || !record.inner) return std::nullopt;
  Bytes payload_ct;
  if (payload_plain) payload_ct = seal(record.next->pk, *payload_plain);
  return Routed{record.next->address, frame_packet(payload_ct, *record.inner, packet_size)};
}

Bytes encode_reply_header(const Reply& reply) {
  ByteWriter w;
  put_u8(w, kTagReplyKind, static_cast<uint8_t>(reply.kind));
  put_u8(w, kTagReplyOp, static_cast<uint8_t>(reply.op));
  if (!reply.token.empty()) put_tlv(w, kTagReplyToken, reply.token);
  if (!reply.error.empty()) put_tlv(w, kTagReplyError, to_bytes(reply.error));
  return std::move(w).take();
}

Packet pack_reply(const Reply& reply, const PublicKey& designer_pk, size_t packet_size) {
  Bytes payload_ct;
  if (reply.value) payload_ct = seal(designer_pk, encode_matrix(*reply.value));
  return frame_packet(payload_ct, seal(designer_pk, encode_reply_header(reply)), packet_size);
}

Reply open_reply(const SecretKey& designer_sk, const Packet& packet, size_t packet_size) {
  PacketSegments seg = parse_packet(packet, packet_size);
  Reply reply;
  bool have_kind = false;
  const Bytes header = open(designer_sk, seg.onion_ct);
  for (const Tlv& t : split_tlv(header)) {
    switch (t.tag) {
      case kTagReplyKind: {
        const uint8_t v = single_byte(t);
        if (v > static_cast<uint8_t>(ReplyKind::kError)) throw DecodeError("bad reply kind");
        reply.kind = static_cast<ReplyKind>(v);
        have_kind = true;
        break;
      }
      case kTagReplyOp: {
        const uint8_t v = single_byte(t);
        if (v > static_cast<uint8_t>(OpCode::kTest)) throw DecodeError("bad reply op");
        reply.op = static_cast<OpCode>(v);
        break;
      }
      case kTagReplyToken: reply.token.assign(t.value.begin(), t.value.end()); break;
      case kTagReplyError: reply.error = to_string(t.value); break;
      default: throw DecodeError("unknown reply tag " + std::to_string(t.tag));
    }
  }
  if (!have_kind) throw DecodeError("reply has no kind");
  if (!seg.payload_ct.empty()) {
    Bytes plain = open(designer_sk, seg.payload_ct);
    // A returning loop message carries random cover bytes, not a matrix.
    if (reply.kind != ReplyKind::kLoop) reply.value = decode_matrix(plain);
  }
  return reply;
}

}  // namespace mixnn
