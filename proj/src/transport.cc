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

#include "mixnn/transport.h"

#include <sys/socket.h>

#include <algorithm>

#include "mixnn/errors.h"

namespace mixnn {

using std::chrono::milliseconds;

// ---- simulation -----------------------------------------------------------

class SimDesignerTransport : public Transport {
 public:
  SimDesignerTransport(SimNetwork& net, Address address) : net_(net), address_(address) {
    net_.designers_[address_] = &inbox_;
  }
  ~SimDesignerTransport() override { net_.designers_.erase(address_); }

  const Address& local_address() const override { return address_; }

  void send(const Routed& message) override { net_.send_from(address_, message, net_.now_); }

  std::optional<Packet> receive(Duration timeout) override {
    const Duration deadline = net_.now_ + timeout;
    while (inbox_.empty()) {
      if (net_.queue_.empty() || net_.queue_.top().at > deadline) {
        net_.now_ = std::max(net_.now_, deadline);
        return std::nullopt;
      }
      net_.step();
    }
    Packet p = std::move(inbox_.front());
    inbox_.pop_front();
    return p;
  }

  Duration now() const override { return net_.now_; }

 private:
  SimNetwork& net_;
  Address address_;
  std::deque<Packet> inbox_;
};

SimNetwork::SimNetwork(SimConfig config) : config_(config), rng_(config.seed) {}

SimNetwork::~SimNetwork() = default;

void SimNetwork::attach(Node& node, const Address& address) {
  if (nodes_.count(address) || designers_.count(address)) {
    throw ConfigError("address " + address.to_string() + " already attached");
  }
  nodes_[address].node = &node;
  schedule_cover(address);
}

std::unique_ptr<Transport> SimNetwork::designer_endpoint(const Address& address) {
  if (nodes_.count(address) || designers_.count(address)) {
    throw ConfigError("address " + address.to_string() + " already attached");
  }
  return std::make_unique<SimDesignerTransport>(*this, address);
}

void SimNetwork::kill(const Address& address) {
  auto it = nodes_.find(address);
  if (it == nodes_.end()) throw IndexError("no node at " + address.to_string());
  it->second.alive = false;
}

bool SimNetwork::alive(const Address& address) const {
  auto it = nodes_.find(address);
  return it != nodes_.end() && it->second.alive;
}

void SimNetwork::set_extra_delay(const Address& address, Duration extra) {
  auto it = nodes_.find(address);
  if (it == nodes_.end()) throw IndexError("no node at " + address.to_string());
  it->second.extra = extra;
}

void SimNetwork::schedule(Duration at, std::function<void()> action) {
  Event ev{std::max(at, now_), seq_++, {}, {}, std::nullopt, std::move(action)};
  queue_.push(std::move(ev));
}

void SimNetwork::run_until(Duration until) {
  while (!queue_.empty() && queue_.top().at <= until) step();
  now_ = std::max(now_, until);
}

void SimNetwork::send_from(const Address& from, const Routed& message, Duration depart) {
  Duration at = depart + config_.hop_latency;
  if (config_.jitter > Duration::zero()) {
    std::uniform_int_distribution<int64_t> extra(0, config_.jitter.count());
    at += Duration(extra(rng_));
  }
  Duration& last = last_arrival_[{from, message.to}];
  at = std::max(at, last);
  last = at;
  queue_.push(Event{at, seq_++, from, message.to, message.packet, {}});
}

void SimNetwork::step() {
  Event ev = queue_.top();
  queue_.pop();
  now_ = std::max(now_, ev.at);
  if (ev.timer) {
    ev.timer();
    return;
  }
  deliver(ev);
}

void SimNetwork::deliver(Event& ev) {
  if (auto d = designers_.find(ev.to); d != designers_.end()) {
    ++delivered_;
    d->second->push_back(std::move(*ev.packet));
    return;
  }
  auto it = nodes_.find(ev.to);
  if (it == nodes_.end() || !it->second.alive) return;  // lost
  ++delivered_;
  NodeSlot& slot = it->second;
  const Duration start = std::max(now_, slot.busy_until);
  const Duration done = start + config_.processing + slot.extra;
  slot.busy_until = done;
  NodeAction action = slot.node->handle_packet(*ev.packet);
  if (action.out) send_from(ev.to, *action.out, done);
}

void SimNetwork::schedule_cover(const Address& address) {
  NodeSlot& slot = nodes_.at(address);
  auto gap = slot.node->next_cover_interval();
  if (!gap) return;
  schedule(now_ + *gap, [this, address] {
    NodeSlot& s = nodes_.at(address);
    if (!s.alive) return;
    const auto& peers = s.node->peers();
    if (!peers.empty()) {
      std::vector<Address> candidates;
      for (const auto& [addr, pk] : peers) {
        if (nodes_.count(addr)) candidates.push_back(addr);
      }
      if (!candidates.empty()) {
        std::uniform_int_distribution<size_t> pick(0, candidates.size() - 1);
        send_from(address, s.node->emit_cover(candidates[pick(rng_)]), now_);
      }
    }
    schedule_cover(address);
  });
}

// ---- sockets --------------------------------------------------------------

void send_packet(const Address& to, const Packet& packet, milliseconds timeout) {
  Socket s = connect_to(to, timeout);
  set_io_timeout(s, timeout);
  const uint8_t hello[1] = {kWireVersion};
  write_all(s, hello);
  write_all(s, packet.wire);
  ::shutdown(s.fd(), SHUT_WR);
}

SocketListener::SocketListener(const Address& bind, size_t packet_size)
    : packet_size_(packet_size), listener_(listen_on(bind)), address_(local_address(listener_)) {
  // Report the requested host when binding to a concrete one, so peers can
  // use the address as given.
  if (!bind.host.empty() && bind.host != "0.0.0.0" && bind.host != "::") {
    address_.host = bind.host;
  }
  thread_ = std::thread([this] { accept_loop(); });
}

SocketListener::~SocketListener() { close(); }

void SocketListener::close() {
  if (stop_.exchange(true)) return;
  listener_.shutdown();
  if (thread_.joinable()) thread_.join();
  listener_.close();
  cv_.notify_all();
}

std::optional<Packet> SocketListener::pop(Duration timeout) {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait_for(lock, timeout, [this] { return !inbox_.empty() || stop_; });
  if (inbox_.empty()) return std::nullopt;
  Packet p = std::move(inbox_.front());
  inbox_.pop_front();
  return p;
}

void SocketListener::accept_loop() {
  while (!stop_) {
    Socket conn;
    try {
      conn = accept_within(listener_, milliseconds(100));
    } catch (const IoError&) {
      if (stop_) return;
      continue;
    }
    if (!conn.valid()) continue;
    try {
      read_connection(std::move(conn));
    } catch (const Error& e) {
      stderr_log_sink(std::string("listener ") + address_.to_string() + ": " + e.what());
    }
  }
}

void SocketListener::read_connection(Socket conn) {
  set_io_timeout(conn, std::chrono::seconds(10));
  uint8_t hello[1];
  if (!read_exact(conn, hello)) return;
  if (hello[0] != kWireVersion) throw FramingError("unsupported wire version");
  for (;;) {
    Packet p;
    p.wire.resize(packet_size_);
    if (!read_exact(conn, p.wire)) return;
    {
      std::lock_guard<std::mutex> lock(mu_);
      inbox_.push_back(std::move(p));
    }
    cv_.notify_one();
  }
}

SocketDesignerTransport::SocketDesignerTransport(const Address& bind, size_t packet_size)
    : listener_(bind, packet_size) {}

void SocketDesignerTransport::send(const Routed& message) {
  try {
    send_packet(message.to, message.packet);
  } catch (const IoError& e) {
    // An unreachable node looks like any other crash: the time bound fires.
    stderr_log_sink(std::string("designer: send failed: ") + e.what());
  }
}

std::optional<Packet> SocketDesignerTransport::receive(Duration timeout) {
  return listener_.pop(timeout);
}

Duration SocketDesignerTransport::now() const {
  return std::chrono::steady_clock::now() - start_;
}

SocketNodeHost::SocketNodeHost(Node& node, const Address& bind)
    : node_(node), listener_(bind, node.packet_size()) {
  thread_ = std::thread([this] { serve(); });
}

SocketNodeHost::~SocketNodeHost() { stop(); }

void SocketNodeHost::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
  listener_.close();
}

void SocketNodeHost::serve() {
  using Clock = std::chrono::steady_clock;
  std::optional<Clock::time_point> next_cover;
  if (auto gap = node_.next_cover_interval()) next_cover = Clock::now() + *gap;

  while (!stop_) {
    Duration wait = milliseconds(100);
    if (next_cover) wait = std::clamp<Duration>(*next_cover - Clock::now(), Duration::zero(), wait);
    if (auto packet = listener_.pop(wait)) {
      NodeAction action = node_.handle_packet(*packet);
      if (action.out) {
        try {
          send_packet(action.out->to, action.out->packet);
        } catch (const IoError& e) {
          stderr_log_sink("node " + node_.id() + ": send failed: " + e.what());
        }
      }
    }
    if (next_cover && Clock::now() >= *next_cover) {
      const auto& peers = node_.peers();
      if (!peers.empty()) {
        try {
          Routed cover = node_.emit_cover(peers.begin()->first);
          send_packet(cover.to, cover.packet, milliseconds(500));
        } catch (const Error&) {
          // The peer may be gone; cover traffic is best effort.
        }
      }
      auto gap = node_.next_cover_interval();
      next_cover = gap ? std::optional(Clock::now() + *gap) : std::nullopt;
    }
  }
}

}  // namespace mixnn
