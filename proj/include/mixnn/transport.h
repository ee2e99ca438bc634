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

// Two ways of moving packets between the designer and the servers: a
// deterministic discrete-event simulation and real TCP sockets. Either way
// a packet is exactly L opaque bytes.

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <thread>
#include <vector>

#include "mixnn/net.h"
#include "mixnn/node.h"
#include "mixnn/onion.h"

namespace mixnn {

using Duration = std::chrono::nanoseconds;

// The designer's side of the network.
class Transport {
 public:
  virtual ~Transport() = default;

  virtual const Address& local_address() const = 0;
  virtual void send(const Routed& message) = 0;
  // Waits up to `timeout` for the next packet addressed to the designer.
  virtual std::optional<Packet> receive(Duration timeout) = 0;
  // Monotonic time; virtual time under simulation.
  virtual Duration now() const = 0;
  // Lower limit applied to the crash-detection time bound.
  virtual Duration minimum_time_bound() const { return Duration::zero(); }
};

// ---- simulation -----------------------------------------------------------

struct SimConfig {
  Duration hop_latency = std::chrono::milliseconds(1);
  Duration processing = std::chrono::milliseconds(1);
  Duration jitter = Duration::zero();  // uniform extra latency in [0, jitter]
  uint64_t seed = 1;
};

// Single-threaded virtual-time network. Nodes process one packet at a
// time; delivery is in order on every (sender, receiver) channel.
class SimNetwork {
 public:
  explicit SimNetwork(SimConfig config = {});
  ~SimNetwork();
  SimNetwork(const SimNetwork&) = delete;
  SimNetwork& operator=(const SimNetwork&) = delete;

  // The node must outlive the network. Starts its cover schedule if it has
  // a cover rate.
  void attach(Node& node, const Address& address);
  // At most one designer endpoint per address.
  std::unique_ptr<Transport> designer_endpoint(const Address& address);

  // A killed node silently drops everything that reaches it afterwards.
  void kill(const Address& address);
  bool alive(const Address& address) const;
  // Extra processing time added to every packet the node handles.
  void set_extra_delay(const Address& address, Duration extra);

  void schedule(Duration at, std::function<void()> action);
  Duration now() const { return now_; }
  uint64_t delivered() const { return delivered_; }

  // Processes events up to and including time `until`.
  void run_until(Duration until);

 private:
  friend class SimDesignerTransport;

  struct Event {
    Duration at;
    uint64_t seq;
    Address from;
    Address to;
    std::optional<Packet> packet;
    std::function<void()> timer;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };
  struct NodeSlot {
    Node* node = nullptr;
    bool alive = true;
    Duration busy_until{};
    Duration extra{};
  };

  void send_from(const Address& from, const Routed& message, Duration depart);
  void step();
  void deliver(Event& ev);
  void schedule_cover(const Address& address);

  SimConfig config_;
  Duration now_{};
  uint64_t seq_ = 0;
  uint64_t delivered_ = 0;
  std::mt19937_64 rng_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::map<Address, NodeSlot> nodes_;
  std::map<Address, std::deque<Packet>*> designers_;
  std::map<std::pair<Address, Address>, Duration> last_arrival_;
};

// ---- sockets --------------------------------------------------------------

// Framing on a TCP connection: one hello byte (kWireVersion), then any
// number of packets of exactly L bytes.
void send_packet(const Address& to, const Packet& packet,
                 std::chrono::milliseconds timeout = std::chrono::seconds(10));

// Accepts connections on a background thread and queues whole packets.
class SocketListener {
 public:
  SocketListener(const Address& bind, size_t packet_size);
  ~SocketListener();
  SocketListener(const SocketListener&) = delete;
  SocketListener& operator=(const SocketListener&) = delete;

  const Address& address() const { return address_; }
  std::optional<Packet> pop(Duration timeout);
  void close();

 private:
  void accept_loop();
  void read_connection(Socket conn);

  size_t packet_size_;
  Socket listener_;
  Address address_;
  std::atomic<bool> stop_{false};
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Packet> inbox_;
  std::thread thread_;
};

class SocketDesignerTransport : public Transport {
 public:
  SocketDesignerTransport(const Address& bind, size_t packet_size);

  const Address& local_address() const override { return listener_.address(); }
  void send(const Routed& message) override;
  std::optional<Packet> receive(Duration timeout) override;
  Duration now() const override;
  // Loop timing excludes layer compute, so real sockets get a floor.
  Duration minimum_time_bound() const override { return std::chrono::seconds(2); }

 private:
  SocketListener listener_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Runs one node behind a TCP listener with a sequential service loop.
class SocketNodeHost {
 public:
  SocketNodeHost(Node& node, const Address& bind);
  ~SocketNodeHost();
  SocketNodeHost(const SocketNodeHost&) = delete;
  SocketNodeHost& operator=(const SocketNodeHost&) = delete;

  const Address& address() const { return listener_.address(); }
  // Stops serving and closes the listener; idempotent.
  void stop();
  bool running() const { return !stop_; }

 private:
  void serve();

  Node& node_;
  SocketListener listener_;
  std::atomic<bool> stop_{false};
  std::thread thread_;
};

}  // namespace mixnn
