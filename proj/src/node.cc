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

#include "mixnn/node.h"

#include <cstdio>
#include <ctime>
#include <sstream>

#include "mixnn/errors.h"

namespace mixnn {

namespace {

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<int>(ms % 1000));
  return buf;
}

bool is_terminal(const OnionRecord& record) { return !record.inner.has_value(); }

}  // namespace

std::string to_string(NodeRole role) {
  switch (role) {
    case NodeRole::kUninitialized: return "uninitialized";
    case NodeRole::kActual: return "actual";
    case NodeRole::kDummy: return "dummy";
  }
  return "?";
}

std::string to_string(NodeAction::Kind kind) {
  switch (kind) {
    case NodeAction::Kind::kRelay: return "relay";
    case NodeAction::Kind::kReply: return "reply";
    case NodeAction::Kind::kDone: return "done";
    case NodeAction::Kind::kDrop: return "drop";
    case NodeAction::Kind::kProtocolError: return "protocol_error";
  }
  return "?";
}

void stderr_log_sink(const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); }

Node::Node(std::string node_id, KeyPair keys, size_t packet_size)
    : id_(std::move(node_id)), keys_(std::move(keys)), packet_size_(packet_size) {}

NodeAction Node::handle_packet(const Packet& packet) {
  ++stats_.packets;
  Unwrapped u;
  try {
    u = unwrap(keys_.sk, packet, packet_size_);
  } catch (const Error& e) {
    NodeAction drop{NodeAction::Kind::kDrop, std::nullopt, e.what()};
    ++stats_.dropped;
    log("?", drop);
    if (tap_) tap_(packet, drop);
    return drop;
  }
  if (observer_) observer_(u.record, u.payload);
  if (u.record.next) peers_[u.record.next->address] = u.record.next->pk;

  const std::string op = u.record.cover ? "cover" : to_string(u.record.op);
  NodeAction action;
  try {
    if (u.record.cover) {
      action = relay_cover(u.record, u.payload);
    } else {
      switch (u.record.op) {
        case OpCode::kInit: action = do_init(u.record); break;
        case OpCode::kForward: action = do_forward(u.record, u.payload); break;
        case OpCode::kBackward: action = do_backward(u.record, u.payload); break;
        case OpCode::kTest: action = do_test(u.record, u.payload); break;
      }
    }
  } catch (const Error& e) {
    action = NodeAction{NodeAction::Kind::kProtocolError, std::nullopt, e.what()};
    // Only a terminal hop knows it talks to the designer; elsewhere the
    // packet dies here and the designer's time bound takes over.
    if (is_terminal(u.record) && u.record.next) {
      Reply err;
      err.kind = ReplyKind::kError;
      err.op = u.record.op;
      err.error = id_ + ": " + e.what();
      action.out = Routed{u.record.next->address,
                          pack_reply(err, u.record.next->pk, packet_size_)};
    }
  }

  switch (action.kind) {
    case NodeAction::Kind::kRelay: ++stats_.relayed; break;
    case NodeAction::Kind::kReply: ++stats_.replies; break;
    case NodeAction::Kind::kDrop: ++stats_.dropped; break;
    case NodeAction::Kind::kProtocolError: ++stats_.protocol_errors; break;
    case NodeAction::Kind::kDone: break;
  }
  log(op, action);
  if (tap_) tap_(packet, action);
  return action;
}

NodeAction Node::do_init(const OnionRecord& record) {
  const auto& f = std::get<InitFields>(record.fields);
  if (f.dummy) {
    layer_.reset();
    role_ = NodeRole::kDummy;
  } else {
    validate_chain(f.layer);
    layer_ = make_layer(f.layer, f.seed, f.learning_rate, f.momentum);
    role_ = NodeRole::kActual;
  }
  forward_pending_ = false;
  if (is_terminal(record)) return NodeAction{NodeAction::Kind::kDone, std::nullopt, {}};
  return relay(record, std::nullopt);
}

NodeAction Node::do_forward(const OnionRecord& record, const std::optional<Bytes>& payload) {
  if (role_ == NodeRole::kUninitialized) throw ProtocolError("forward before init");
  if (forward_pending_) throw ProtocolError("forward while a backward is pending");
  const auto& f = std::get<ForwardFields>(record.fields);
  if (f.labels && !is_terminal(record)) throw ProtocolError("labels outside the last layer");

  if (role_ == NodeRole::kDummy) {
    if (f.labels) throw ProtocolError("labels sent to a dummy node");
    if (!payload) throw ProtocolError("forward without data");
    forward_pending_ = true;
    if (!is_terminal(record)) return relay(record, ByteSpan(*payload));
    Reply out;
    out.kind = ReplyKind::kOutput;
    out.op = OpCode::kForward;
    out.value = decode_matrix(*payload);
    return reply(record, std::move(out));
  }

  const Matrix input = decode_payload(payload);
  const bool loss = layer_->spec.ends_with_loss();
  if (loss && !f.labels) throw ProtocolError("labels missing for the loss layer");
  if (!loss && f.labels) throw ProtocolError("labels sent to a layer without loss");
  ++stats_.nn_calls;
  Matrix z = f.labels ? layer_forward(*layer_, input, Mode::kTrain, *f.labels)
                      : layer_forward(*layer_, input, Mode::kTrain);
  forward_pending_ = true;
  if (!is_terminal(record)) return relay(record, ByteSpan(encode_matrix(z)));
  Reply out;
  out.kind = loss ? ReplyKind::kLoss : ReplyKind::kOutput;
  out.op = OpCode::kForward;
  out.value = std::move(z);
  return reply(record, std::move(out));
}

NodeAction Node::do_backward(const OnionRecord& record, const std::optional<Bytes>& payload) {
  if (role_ == NodeRole::kUninitialized) throw ProtocolError("backward before init");
  if (!forward_pending_) throw ProtocolError("backward without a matching forward");
  const auto& f = std::get<BackwardFields>(record.fields);

  std::optional<Matrix> grad;
  if (payload) {
    grad = decode_matrix(*payload);
    if (tamper_) {
      Matrix& g = *grad;
      for (size_t r = 0; r < g.rows(); ++r)
        for (size_t c = 0; c < g.cols(); ++c) g(r, c) = -g(r, c);
    }
  }

  std::optional<Matrix> grad_in;
  if (role_ == NodeRole::kDummy) {
    grad_in = std::move(grad);
  } else {
    if (!grad) {
      if (!layer_->spec.ends_with_loss()) throw ProtocolError("backward without a gradient");
      grad = Matrix(1, 1, 1.0f);
    }
    const bool need_input = !is_terminal(record) || f.return_gradient;
    ++stats_.nn_calls;
    grad_in = layer_backward(*layer_, *grad, need_input);
  }
  forward_pending_ = false;

  if (!is_terminal(record)) {
    if (!grad_in) throw ProtocolError("no gradient to pass on");
    return relay(record, ByteSpan(encode_matrix(*grad_in)));
  }
  Reply out;
  out.kind = ReplyKind::kAck;
  out.op = OpCode::kBackward;
  if (f.return_gradient) out.value = std::move(grad_in);
  return reply(record, std::move(out));
}

NodeAction Node::do_test(const OnionRecord& record, const std::optional<Bytes>& payload) {
  if (role_ == NodeRole::kUninitialized) throw ProtocolError("test before init");
  if (forward_pending_) throw ProtocolError("test while a backward is pending");
  const auto& f = std::get<TestFields>(record.fields);
  if (f.end_layer != is_terminal(record)) throw ProtocolError("inconsistent end-layer marker");

  Matrix z;
  if (role_ == NodeRole::kDummy) {
    if (!payload) throw ProtocolError("test without data");
    if (!is_terminal(record)) return relay(record, ByteSpan(*payload));
    z = decode_matrix(*payload);
  } else {
    ++stats_.nn_calls;
    z = layer_forward(*layer_, decode_payload(payload), Mode::kEval);
    if (!is_terminal(record)) return relay(record, ByteSpan(encode_matrix(z)));
  }
  Reply out;
  out.kind = ReplyKind::kOutput;
  out.op = OpCode::kTest;
  out.value = std::move(z);
  return reply(record, std::move(out));
}

NodeAction Node::relay_cover(const OnionRecord& record, const std::optional<Bytes>& payload) {
  if (!record.inner || !record.next) {
    return NodeAction{NodeAction::Kind::kDrop, std::nullopt, "cover"};
  }
  if (payload) return relay(record, ByteSpan(*payload));
  return relay(record, std::nullopt);
}

NodeAction Node::relay(const OnionRecord& record, std::optional<ByteSpan> payload) {
  auto out = next_packet(record, payload, packet_size_);
  if (!out) throw ProtocolError("record has no successor");
  return NodeAction{NodeAction::Kind::kRelay, std::move(out), {}};
}

NodeAction Node::reply(const OnionRecord& record, Reply message) {
  if (!record.next) throw ProtocolError("terminal record names no designer");
  Packet p = pack_reply(message, record.next->pk, packet_size_);
  return NodeAction{NodeAction::Kind::kReply, Routed{record.next->address, std::move(p)}, {}};
}

Matrix Node::decode_payload(const std::optional<Bytes>& payload) const {
  if (!payload) throw ProtocolError("packet carries no data");
  return decode_matrix(*payload);
}

Routed Node::emit_cover(const Address& target) {
  auto it = peers_.find(target);
  if (it == peers_.end()) throw ProtocolError("no key known for peer " + target.to_string());
  ++stats_.covers_emitted;
  return Routed{target, pack_cover_hop(it->second, packet_size_)};
}

void Node::set_cover_rate(double per_second, uint64_t seed) {
  cover_rate_ = per_second;
  cover_rng_.seed(seed);
}

std::optional<std::chrono::nanoseconds> Node::next_cover_interval() {
  if (cover_rate_ <= 0.0) return std::nullopt;
  std::exponential_distribution<double> gap(cover_rate_);
  return std::chrono::nanoseconds(static_cast<int64_t>(gap(cover_rng_) * 1e9));
}

void Node::log(const std::string& op, const NodeAction& action) {
  if (!log_) return;
  std::ostringstream line;
  line << "ts=" << timestamp() << " node=" << id_ << " op=" << op
       << " outcome=" << to_string(action.kind);
  if (action.out) line << " peer=" << action.out->to.to_string();
  if (!action.detail.empty()) line << " detail=\"" << action.detail << '"';
  log_(line.str());
}

}  // namespace mixnn
