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

// The model owner's client. It picks servers from the directory, packs every
// phase into onions, and waits for each reply under a time bound. Only one
// message per cascade is ever in flight.

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mixnn/crypto.h"
#include "mixnn/data.h"
#include "mixnn/directory.h"
#include "mixnn/errors.h"
#include "mixnn/metrics.h"
#include "mixnn/nn.h"
#include "mixnn/onion.h"
#include "mixnn/transport.h"

namespace mixnn {

struct TrainingConfig {
  size_t epochs = 1;
  size_t batch_size = 64;
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  uint64_t seed = 1;
  bool shuffle = true;
  // Crash-detection bound; derived from the setup loop when absent.
  std::optional<Duration> time_bound;
  bool hold_first_layer = false;
  bool hold_last_layer = false;

  // Throws ConfigError.
  void validate() const;
};

struct ProvisionPlan {
  size_t dummies = 0;
  uint64_t selection_seed = 1;
  MetadataFilter filter;
  // Explicit 0-based cascade slots for the dummies; drawn with the selection
  // seed when absent. Slots 0 and n-1 always hold actual layers.
  std::optional<std::vector<size_t>> dummy_slots;
};

// Everything the designer knows about one provisioned model.
struct Deployment {
  CascadeSpec cascade;
  std::vector<LayerSpec> model;
  // Model layer index served by each cascade entry; nullopt for dummies.
  std::vector<std::optional<size_t>> model_index;
  ProvisionPlan plan;
  TrainingConfig config;
  std::optional<LayerState> held_first;
  std::optional<LayerState> held_last;
  size_t input_width = 1;  // width of the matrix entering the first node
  bool initialized = false;
  std::optional<Duration> loop_rtt;

  std::vector<std::string> node_ids() const;
};

struct ValidationResult {
  bool passed = false;
  double accuracy = 0.0;
  double threshold = 0.0;
};

// Thrown by train() when the time bound expires; carries the partial run.
class TrainingCrashed : public CrashDetected {
 public:
  TrainingCrashed(const std::string& what, RunMetrics metrics)
      : CrashDetected(what), metrics_(std::move(metrics)) {}
  const RunMetrics& metrics() const { return metrics_; }

 private:
  RunMetrics metrics_;
};

class Designer {
 public:
  Designer(Transport& transport, KeyPair keys, size_t packet_size = kDefaultPacketSize);

  Hop hop() const { return Hop{transport_.local_address(), keys_.pk}; }
  size_t packet_size() const { return packet_size_; }

  // Seeded selection of n = p + r servers from `pool` (after the metadata
  // filter, minus `exclude`). Throws PoolExhausted when too few remain.
  Deployment provision(const std::vector<KeyRecord>& pool, const std::vector<LayerSpec>& model,
                       const ProvisionPlan& plan, const TrainingConfig& config,
                       const std::set<std::string>& exclude = {});

  // Sends a cover loop through the cascade back to the designer and returns
  // the round-trip time, which also fixes the default time bound.
  Duration send_designer_loop(Deployment& deployment);

  // Fresh parameters on every node (and in held layers), then a one-row
  // zero test sweep to confirm that the whole cascade is initialized.
  void initialize_model(Deployment& deployment);

  // Throws TrainingCrashed when a reply misses the time bound.
  RunMetrics train(Deployment& deployment, const Dataset& data, const Dataset* eval = nullptr);

  // Output of the test sweep ending at `end_layer` (1-based cascade slot).
  Matrix infer(Deployment& deployment, const Matrix& images,
               std::optional<size_t> end_layer = std::nullopt);
  std::vector<int32_t> predict(Deployment& deployment, const Matrix& images,
                               std::optional<size_t> end_layer = std::nullopt);
  double test(Deployment& deployment, const Dataset& data,
              std::optional<size_t> end_layer = std::nullopt);

  ValidationResult validate_model(Deployment& deployment, const Dataset& holdout,
                                  double threshold);

  // A deployment of the same model on servers never used before.
  Deployment replace_cascade(const Deployment& old, const std::vector<KeyRecord>& pool);

  // Waits for a reply of one of the `expected` kinds. Unreadable packets and
  // other kinds are ignored; an Error reply raises ProtocolError. Throws
  // CrashDetected, naming no server, once `bound` elapses.
  Reply await_with_deadline(std::initializer_list<ReplyKind> expected, Duration bound);

  Duration time_bound(const Deployment& deployment) const;
  // Last actual slot that does more than evaluate the loss.
  size_t default_end_layer(const Deployment& deployment) const;

  const std::set<std::string>& used_nodes() const { return used_; }
  uint64_t iterations_started() const { return iterations_; }

  // Called before each training iteration with the global 1-based count.
  std::function<void(uint64_t)> on_iteration;
  // Sees every packet the designer sends.
  std::function<void(const Routed&)> on_send;
  // Sees every reply the designer accepts.
  std::function<void(const Reply&)> on_reply;

 private:
  void send(const Routed& message);

  Transport& transport_;
  KeyPair keys_;
  size_t packet_size_;
  std::set<std::string> used_;
  uint64_t iterations_ = 0;
  uint64_t replacements_ = 0;
};

// Train, validate, and replace the cascade on a crash or failed validation,
// restarting from scratch each time.
struct SessionOutcome {
  enum class Status { kOk, kCrashed, kValidationFailed };

  Status status = Status::kOk;
  RunMetrics metrics;  // of the last attempt, plus every crash seen
  std::optional<ValidationResult> validation;
  size_t replacements = 0;
  std::vector<std::string> used_node_sets;  // comma-joined ids per attempt
  std::optional<Deployment> deployment;      // the last one provisioned
};

struct SessionOptions {
  std::optional<double> validation_threshold;
  size_t max_replacements = 0;
  // Called with every freshly provisioned deployment, before initialization.
  std::function<void(const Deployment&)> on_deploy;
};

SessionOutcome run_training_session(Designer& designer, DirectoryApi& directory,
                                    const std::vector<LayerSpec>& model,
                                    const ProvisionPlan& plan, const TrainingConfig& config,
                                    const Dataset& train, const Dataset* eval,
                                    const SessionOptions& options);

}  // namespace mixnn
