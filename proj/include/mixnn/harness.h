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

// Test and experiment plumbing: the single-process baseline, a pool of
// servers on either transport, and scripted faults.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mixnn/data.h"
#include "mixnn/designer.h"
#include "mixnn/directory.h"
#include "mixnn/metrics.h"
#include "mixnn/nn.h"
#include "mixnn/node.h"
#include "mixnn/transport.h"

namespace mixnn {

// ---- baseline -------------------------------------------------------------

// The whole model in one process, seeded exactly like a cascade.
struct BaselineModel {
  std::vector<LayerState> layers;
};

BaselineModel make_baseline(const std::vector<LayerSpec>& model, const TrainingConfig& config);

struct BaselineRun {
  BaselineModel model;
  RunMetrics metrics;
};

// Same batches, same nn-core calls and the same order of operations as a
// distributed run with `config`.
BaselineRun run_baseline(const std::vector<LayerSpec>& model, const Dataset& data,
                         const TrainingConfig& config, const Dataset* eval = nullptr);

// Eval-mode sweep through every layer (the loss passes log-probabilities
// through).
Matrix baseline_infer(BaselineModel& model, const Matrix& images, size_t batch_size = 64);
std::vector<int32_t> baseline_predict(BaselineModel& model, const Matrix& images,
                                      size_t batch_size = 64);
double baseline_accuracy(BaselineModel& model, const Dataset& data, size_t batch_size = 64);

// ---- server pools ---------------------------------------------------------

enum class TransportMode { kSimulated, kSocket };

std::string to_string(TransportMode mode);
TransportMode transport_mode_from_string(const std::string& text);

struct ClusterOptions {
  TransportMode mode = TransportMode::kSimulated;
  size_t pool_size = 5;
  size_t packet_size = kDefaultPacketSize;
  SimConfig sim;
  std::string host = "127.0.0.1";  // socket mode bind host
  // Non-zero: deterministic node keys derived from this seed.
  uint64_t key_seed = 0;
  std::string id_prefix = "node-";
  std::map<std::string, std::string> metadata;
  double cover_rate = 0.0;  // per node, per second
  // Echo node log lines to stderr in addition to capturing them.
  bool echo_logs = false;
};

// A pool of running servers, each registered with the directory.
class Cluster {
 public:
  Cluster(const ClusterOptions& options, DirectoryApi& directory);
  ~Cluster();
  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  const ClusterOptions& options() const { return options_; }
  TransportMode mode() const { return options_.mode; }

  // The designer's endpoint; created on first use.
  Transport& designer_transport();

  std::vector<std::string> node_ids() const;
  Node& node(const std::string& id);
  Address address_of(const std::string& id) const;
  std::vector<std::string> logs(const std::string& id) const;

  // Faults. kill works on both transports; delay only in simulation.
  void kill(const std::string& id);
  void delay(const std::string& id, Duration extra);
  void tamper(const std::string& id, bool on = true);

  // nullptr in socket mode.
  SimNetwork* sim() { return sim_.get(); }

  // Stops every server and closes every listener; idempotent.
  void teardown();
  size_t listening() const;

 private:
  struct Member {
    std::string id;
    Address address;
    std::unique_ptr<Node> node;
    std::unique_ptr<SocketNodeHost> host;
    std::vector<std::string> log;
  };

  Member& member(const std::string& id);
  const Member& member(const std::string& id) const;

  ClusterOptions options_;
  std::unique_ptr<SimNetwork> sim_;
  std::vector<std::unique_ptr<Member>> members_;
  std::unique_ptr<Transport> designer_;
  mutable std::mutex log_mu_;
};

// ---- faults ---------------------------------------------------------------

enum class FaultAction { kKill, kDelay, kTamperGradientSign };

struct FaultEvent {
  std::optional<uint64_t> at_iteration;  // fires before that training iteration
  std::optional<Duration> at_time;       // simulated time
  // A node id, or "cascade:K" for the K-th (1-based) slot of the deployment.
  std::string node;
  FaultAction action = FaultAction::kKill;
  Duration delay{};
};

struct FaultPlan {
  std::vector<FaultEvent> events;

  bool empty() const { return events.empty(); }
  // {"events":[{"iteration":5,"node":"cascade:3","action":"kill"},
  //            {"time_ms":20,"node":"node-02","action":"delay","delay_ms":5},
  //            {"iteration":1,"node":"cascade:2","action":"tamper"}]}
  static FaultPlan from_json(const nlohmann::json& j);
  static FaultPlan parse(const std::string& text);
  static FaultPlan load(const std::filesystem::path& path);
};

// Fires a plan against a simulated cluster.
class FaultInjector {
 public:
  // Throws ConfigError outside simulation.
  FaultInjector(Cluster& cluster, FaultPlan plan);

  // Resolves cascade slots, checks node ids (IndexError for unknown ones),
  // schedules timed events and hooks iteration events into the designer.
  void arm(Designer& designer, const Deployment& deployment);
  void on_iteration(uint64_t iteration);
  size_t fired() const { return fired_; }

 private:
  void fire(const FaultEvent& event, const std::string& id);

  Cluster& cluster_;
  FaultPlan plan_;
  std::vector<std::string> resolved_;
  std::vector<bool> done_;
  size_t fired_ = 0;
};

}  // namespace mixnn
