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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mixnn/errors.h"
#include "mixnn/node.h"
#include "mixnn/transport.h"

namespace mixnn {
namespace {

constexpr size_t kL = 262144;

// Real nodes wired by hand: packets go straight from one handle_packet to the
// next, and whatever is addressed to the designer is collected.
struct Chain {
  KeyPair designer = gen_keypair_from_seed(900);
  std::vector<std::unique_ptr<Node>> nodes;
  CascadeSpec cascade;
  size_t invocations = 0;
  std::vector<std::string> log;

  explicit Chain(const std::vector<std::optional<LayerSpec>>& layers) {
    cascade.packet_size = kL;
    cascade.designer = Hop{Address{"10.9.0.1", 1}, designer.pk};
    for (size_t i = 0; i < layers.size(); ++i) {
      KeyPair kp = gen_keypair_from_seed(300 + i);
      CascadeEntry e;
      e.node_id = "n" + std::to_string(i + 1);
      e.hop = Hop{Address{"10.8.0." + std::to_string(i + 1), 1}, kp.pk};
      e.layer = layers[i];
      e.seed = derive_seed(42, i);
      cascade.entries.push_back(e);
      nodes.push_back(std::make_unique<Node>(e.node_id, std::move(kp), kL));
      nodes.back()->set_log_sink([this](const std::string& l) { log.push_back(l); });
    }
  }

  static Chain mnist_mlp() {
    std::vector<std::optional<LayerSpec>> l;
    for (const auto& s : mnist_mlp_model()) l.push_back(s);
    return Chain(l);
  }

  Node* at(const Address& a) {
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (cascade.entries[i].hop.address == a) return nodes[i].get();
    }
    return nullptr;
  }

  // Delivers until the packet leaves the chain. Returns the last action.
  NodeAction deliver(Routed r) {
    NodeAction last;
    while (Node* n = at(r.to)) {
      ++invocations;
      last = n->handle_packet(r.packet);
      if (!last.out) break;
      r = *last.out;
    }
    return last;
  }

  Reply reply_of(const NodeAction& a) {
    EXPECT_TRUE(a.out.has_value());
    EXPECT_EQ(a.out->to, cascade.designer.address);
    return open_reply(designer.sk, a.out->packet, kL);
  }

  void init() {
    const NodeAction a = deliver(pack_init(cascade));
    EXPECT_EQ(a.kind, NodeAction::Kind::kDone);
  }
};

std::vector<int32_t> labels_for(size_t n) {
  std::vector<int32_t> y(n);
  for (size_t i = 0; i < n; ++i) y[i] = static_cast<int32_t>(i % 10);
  return y;
}

Matrix batch(size_t n, uint64_t seed = 1) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  Matrix m(n, 784);
  for (float& v : m.values()) v = d(gen);
  return m;
}

// The same layers run back to back in one process.
std::vector<LayerState> reference_layers(const Chain& c) {
  std::vector<LayerState> out;
  for (const auto& e : c.cascade.entries) {
    if (e.layer) out.push_back(make_layer(*e.layer, e.seed, 0.01f, 0.9f));
  }
  return out;
}

TEST(NodeState, ForwardBeforeInitIsAProtocolError) {
  Chain c = Chain::mnist_mlp();
  NodeAction a = c.deliver(pack_forward(c.cascade, batch(2), labels_for(2)));
  EXPECT_EQ(a.kind, NodeAction::Kind::kProtocolError);
  EXPECT_EQ(c.invocations, 1u);
  EXPECT_EQ(c.nodes[0]->role(), NodeRole::kUninitialized);
  EXPECT_EQ(c.nodes[0]->stats().protocol_errors, 1u);
}

TEST(NodeState, TerminalProtocolErrorIsReported) {
  Chain c({LayerSpec{{PrimitiveOp::linear(784, 10), PrimitiveOp::log_softmax(),
                      PrimitiveOp::nll_loss()}}});
  NodeAction a = c.deliver(pack_backward(c.cascade));
  EXPECT_EQ(a.kind, NodeAction::Kind::kProtocolError);
  EXPECT_EQ(c.reply_of(a).kind, ReplyKind::kError);
}

TEST(NodeState, OutOfOrderOpsAreRejected) {
  Chain c = Chain::mnist_mlp();
  c.init();
  // Backward with no forward.
  EXPECT_EQ(c.deliver(pack_backward(c.cascade)).kind, NodeAction::Kind::kProtocolError);
  // Forward, then a second forward or a test before the backward.
  EXPECT_EQ(c.deliver(pack_forward(c.cascade, batch(2), labels_for(2))).kind,
            NodeAction::Kind::kReply);
  EXPECT_EQ(c.deliver(pack_forward(c.cascade, batch(2), labels_for(2))).kind,
            NodeAction::Kind::kProtocolError);
  EXPECT_EQ(c.deliver(pack_test(c.cascade, batch(2), 4)).kind, NodeAction::Kind::kProtocolError);
  // The proper backward still completes.
  EXPECT_EQ(c.reply_of(c.deliver(pack_backward(c.cascade))).kind, ReplyKind::kAck);
}

TEST(NodeState, InitAllocatesMlpParameters) {
  Chain c = Chain::mnist_mlp();
  c.init();
  const LayerState* second = c.nodes[1]->layer();
  ASSERT_NE(second, nullptr);
  ASSERT_EQ(second->params.size(), 1u);
  EXPECT_EQ(second->params[0].weight.rows(), 64u);
  EXPECT_EQ(second->params[0].weight.cols(), 128u);
  EXPECT_TRUE(c.nodes[4]->layer()->params.empty());
}

TEST(NodeState, DummyInitHasNoParameters) {
  Chain c({mnist_mlp_model()[0], std::nullopt, mnist_mlp_model()[1], mnist_mlp_model()[2],
           mnist_mlp_model()[3], mnist_mlp_model()[4]});
  c.init();
  EXPECT_EQ(c.nodes[1]->role(), NodeRole::kDummy);
  EXPECT_EQ(c.nodes[1]->layer(), nullptr);
}

TEST(NodeState, ReinitRestoresFreshParameters) {
  Chain c = Chain::mnist_mlp();
  c.init();
  c.deliver(pack_forward(c.cascade, batch(8), labels_for(8)));
  c.deliver(pack_backward(c.cascade));
  const auto fresh = reference_layers(c);
  EXPECT_FALSE(c.nodes[0]->layer()->params[0].weight.bitwise_equal(fresh[0].params[0].weight));
  c.init();
  for (size_t i = 0; i < fresh.size(); ++i) {
    for (size_t k = 0; k < fresh[i].params.size(); ++k) {
      EXPECT_TRUE(c.nodes[i]->layer()->params[k].weight.bitwise_equal(fresh[i].params[k].weight));
      EXPECT_TRUE(c.nodes[i]->layer()->params[k].bias.bitwise_equal(fresh[i].params[k].bias));
    }
  }
}

TEST(NodeSweep, FiveNodesFivePacketsAndBaselineLoss) {
  Chain c = Chain::mnist_mlp();
  c.init();
  const Matrix x = batch(16);
  const auto y = labels_for(16);
  c.invocations = 0;
  NodeAction a = c.deliver(pack_forward(c.cascade, x, y));
  EXPECT_EQ(c.invocations, 5u);
  Reply r = c.reply_of(a);
  ASSERT_EQ(r.kind, ReplyKind::kLoss);

  auto ref = reference_layers(c);
  Matrix z = x;
  for (size_t i = 0; i + 1 < ref.size(); ++i) z = layer_forward(ref[i], z, Mode::kTrain);
  const Matrix loss = layer_forward(ref.back(), z, Mode::kTrain, y);
  EXPECT_TRUE(r.value->bitwise_equal(loss));

  c.invocations = 0;
  Reply ack = c.reply_of(c.deliver(pack_backward(c.cascade)));
  EXPECT_EQ(c.invocations, 5u);
  EXPECT_EQ(ack.kind, ReplyKind::kAck);
  EXPECT_FALSE(ack.value);

  std::optional<Matrix> g = Matrix(1, 1, 1.0f);
  for (size_t i = ref.size(); i-- > 0;) g = layer_backward(ref[i], *g, i != 0);
  for (size_t i = 0; i < ref.size(); ++i) {
    for (size_t k = 0; k < ref[i].params.size(); ++k) {
      EXPECT_TRUE(c.nodes[i]->layer()->params[k].weight.bitwise_equal(ref[i].params[k].weight))
          << i;
      EXPECT_TRUE(c.nodes[i]->layer()->params[k].bias.bitwise_equal(ref[i].params[k].bias)) << i;
    }
  }
}

TEST(NodeSweep, PerfectPredictionGivesZeroLoss) {
  Chain c({LayerSpec{{PrimitiveOp::identity()}}, LayerSpec{{PrimitiveOp::nll_loss()}}});
  c.init();
  Matrix logp(2, 3, -30.0f);
  logp(0, 1) = 0.0f;
  logp(1, 2) = 0.0f;
  Reply r = c.reply_of(c.deliver(pack_forward(c.cascade, logp, std::vector<int32_t>{1, 2})));
  EXPECT_EQ((*r.value)(0, 0), 0.0f);
}

TEST(NodeSweep, ZeroGradientWithZeroVelocityLeavesParameters) {
  Chain c({LayerSpec{{PrimitiveOp::linear(784, 10)}}, LayerSpec{{PrimitiveOp::identity()}}});
  c.cascade.loss_held_by_designer = true;
  c.init();
  const Matrix before = c.nodes[0]->layer()->params[0].weight;
  c.deliver(pack_forward(c.cascade, batch(3), std::nullopt));
  Reply ack = c.reply_of(c.deliver(pack_backward(c.cascade, Matrix(3, 10, 0.0f))));
  EXPECT_EQ(ack.kind, ReplyKind::kAck);
  EXPECT_TRUE(c.nodes[0]->layer()->params[0].weight.bitwise_equal(before));
}

TEST(NodeSweep, DummyPassesPayloadsThroughBitwise) {
  Chain c({mnist_mlp_model()[0], mnist_mlp_model()[1], std::nullopt, mnist_mlp_model()[2],
           mnist_mlp_model()[3], mnist_mlp_model()[4]});
  std::vector<std::optional<Bytes>> seen(c.nodes.size());
  for (size_t i = 0; i < c.nodes.size(); ++i) {
    c.nodes[i]->set_observer(
        [&seen, i](const OnionRecord&, const std::optional<Bytes>& p) { seen[i] = p; });
  }
  c.init();
  c.deliver(pack_forward(c.cascade, batch(4), labels_for(4)));
  ASSERT_TRUE(seen[2] && seen[3]);
  EXPECT_EQ(*seen[2], *seen[3]);
  EXPECT_EQ(c.nodes[2]->stats().nn_calls, 0u);
  // Backward: the gradient reaching node 2 (slot 1) equals what the dummy got.
  c.deliver(pack_backward(c.cascade));
  ASSERT_TRUE(seen[2] && seen[1]);
  EXPECT_EQ(*seen[2], *seen[1]);
  EXPECT_EQ(c.nodes[2]->stats().nn_calls, 0u);
}

TEST(NodeSweep, TestSweepIsReadOnly) {
  Chain c = Chain::mnist_mlp();
  c.init();
  c.deliver(pack_forward(c.cascade, batch(4), labels_for(4)));
  c.deliver(pack_backward(c.cascade));
  std::vector<LayerState> before;
  for (auto& n : c.nodes) before.push_back(*n->layer());
  Reply r = c.reply_of(c.deliver(pack_test(c.cascade, batch(5, 9), 4)));
  ASSERT_EQ(r.kind, ReplyKind::kOutput);
  EXPECT_EQ(r.value->rows(), 5u);
  EXPECT_EQ(r.value->cols(), 10u);
  for (size_t i = 0; i < c.nodes.size(); ++i) {
    for (size_t k = 0; k < before[i].params.size(); ++k) {
      EXPECT_TRUE(c.nodes[i]->layer()->params[k].weight.bitwise_equal(before[i].params[k].weight));
    }
    EXPECT_FALSE(c.nodes[i]->forward_pending());
  }
  // Still trainable afterwards.
  EXPECT_EQ(c.reply_of(c.deliver(pack_forward(c.cascade, batch(4), labels_for(4)))).kind,
            ReplyKind::kLoss);
}

TEST(NodeCover, LoopRelaysWithoutComputation) {
  Chain c = Chain::mnist_mlp();
  c.init();
  LoopPacket lp = pack_cover_loop(c.cascade);
  c.invocations = 0;
  Reply r = c.reply_of(c.deliver(lp.routed));
  EXPECT_EQ(c.invocations, 5u);
  EXPECT_EQ(r.kind, ReplyKind::kLoop);
  EXPECT_EQ(r.token, lp.token);
  for (auto& n : c.nodes) EXPECT_EQ(n->stats().nn_calls, 0u);
}

TEST(NodeCover, SingleHopCoverIsDroppedWithoutStateChange) {
  Chain c = Chain::mnist_mlp();
  c.init();
  Node& n = *c.nodes[1];
  const Matrix before = n.layer()->params[0].weight;
  const NodeAction a = n.handle_packet(pack_cover_hop(c.cascade.entries[1].hop.pk, kL));
  EXPECT_EQ(a.kind, NodeAction::Kind::kDrop);
  EXPECT_FALSE(a.out);
  EXPECT_EQ(n.stats().nn_calls, 0u);
  EXPECT_FALSE(n.forward_pending());
  EXPECT_TRUE(n.layer()->params[0].weight.bitwise_equal(before));
}

TEST(NodeCover, EmitCoverNeedsAKnownPeer) {
  Chain c = Chain::mnist_mlp();
  EXPECT_THROW(c.nodes[0]->emit_cover(c.cascade.entries[1].hop.address), ProtocolError);
  c.init();
  Routed r = c.nodes[0]->emit_cover(c.cascade.entries[1].hop.address);
  EXPECT_EQ(r.packet.size(), kL);
  EXPECT_EQ(c.nodes[1]->handle_packet(r.packet).kind, NodeAction::Kind::kDrop);
}

TEST(NodeCover, PeersAreOnlyTheImmediateSuccessors) {
  Chain c = Chain::mnist_mlp();
  c.init();
  c.deliver(pack_forward(c.cascade, batch(2), labels_for(2)));
  c.deliver(pack_backward(c.cascade));
  for (size_t i = 0; i < c.nodes.size(); ++i) EXPECT_LE(c.nodes[i]->peers().size(), 2u) << i;
}

TEST(NodeCover, PoissonEmissionCount) {
  constexpr double rate = 20.0;
  constexpr double seconds = 500.0;
  constexpr size_t L = 2048;
  SimNetwork net;
  KeyPair ka = gen_keypair_from_seed(1), kb = gen_keypair_from_seed(2);
  Node a("a", ka, L), b("b", kb, L);
  a.set_log_sink(nullptr);
  b.set_log_sink(nullptr);
  a.set_cover_rate(rate, 77);
  const Address aa{"10.0.0.1", 1}, ab{"10.0.0.2", 1};
  net.attach(a, aa);
  net.attach(b, ab);
  KeyPair d = gen_keypair_from_seed(3);
  auto designer = net.designer_endpoint(Address{"10.0.0.9", 1});
  // A two-node loop teaches a its successor.
  CascadeSpec cs;
  cs.packet_size = L;
  cs.designer = Hop{Address{"10.0.0.9", 1}, d.pk};
  cs.entries = {CascadeEntry{"a", Hop{aa, ka.pk}, LayerSpec{{PrimitiveOp::identity()}}, 1},
                CascadeEntry{"b", Hop{ab, kb.pk}, LayerSpec{{PrimitiveOp::nll_loss()}}, 2}};
  designer->send(pack_cover_loop(cs).routed);
  net.run_until(std::chrono::duration_cast<Duration>(std::chrono::duration<double>(seconds)));

  const double mean = rate * seconds;
  const double emitted = static_cast<double>(a.stats().covers_emitted);
  EXPECT_LE(std::fabs(emitted - mean), 3.0 * std::sqrt(mean)) << emitted;
  EXPECT_GE(b.stats().dropped, a.stats().covers_emitted - 1);
  EXPECT_EQ(b.stats().nn_calls, 0u);
}

TEST(NodeLog, MisroutedPacketIsDroppedAndLogged) {
  Chain c = Chain::mnist_mlp();
  Routed r = pack_init(c.cascade);
  NodeAction a = c.nodes[2]->handle_packet(r.packet);
  EXPECT_EQ(a.kind, NodeAction::Kind::kDrop);
  EXPECT_FALSE(a.out);
  ASSERT_FALSE(c.log.empty());
  const std::string& line = c.log.back();
  EXPECT_NE(line.find("node=n3"), std::string::npos) << line;
  EXPECT_NE(line.find("outcome=drop"), std::string::npos) << line;
  EXPECT_EQ(line.rfind("ts=", 0), 0u) << line;
}

TEST(NodeLog, WrongLengthIsDropped) {
  Chain c = Chain::mnist_mlp();
  Packet p = pack_init(c.cascade).packet;
  p.wire.resize(kL - 1);
  EXPECT_EQ(c.nodes[0]->handle_packet(p).kind, NodeAction::Kind::kDrop);
}

}  // namespace
}  // namespace mixnn
