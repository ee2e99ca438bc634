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

// Run configuration files (JSON). See README.md for the schema.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mixnn/data.h"
#include "mixnn/designer.h"
#include "mixnn/harness.h"

namespace mixnn {

struct DataConfig {
  std::optional<std::filesystem::path> train_images;
  std::optional<std::filesystem::path> train_labels;
  std::optional<std::filesystem::path> test_images;
  std::optional<std::filesystem::path> test_labels;
  std::optional<size_t> train_limit;
  std::optional<size_t> test_limit;
  // Used when no MNIST paths are given.
  size_t synthetic_examples = 512;
  size_t synthetic_test_examples = 128;
  size_t synthetic_features = 784;
  size_t synthetic_classes = 2;
  uint64_t synthetic_seed = 7;

  bool uses_mnist() const { return train_images.has_value(); }
};

struct RunConfig {
  TransportMode mode = TransportMode::kSimulated;
  size_t packet_size = kDefaultPacketSize;
  std::vector<LayerSpec> model = mnist_mlp_model();

  // Simulated mode spawns its own pool.
  size_t pool_size = 8;
  uint64_t key_seed = 0;
  MetadataFilter pool_metadata;
  SimConfig simulation;

  // Socket mode talks to a running directory and cascade.
  std::optional<Address> directory;
  Address designer_listen{"127.0.0.1", 0};
  std::optional<std::filesystem::path> designer_key;  // key file prefix

  ProvisionPlan plan;
  TrainingConfig training;
  DataConfig data;
  std::optional<double> validation_threshold;
  FaultPlan faults;
  size_t max_replacements = 0;

  std::optional<std::filesystem::path> metrics_path;
  std::optional<std::filesystem::path> deployment_path;

  // Throws ConfigError; syntax errors carry line and column, semantic
  // errors name the offending key.
  static RunConfig parse(const std::string& text, const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);
};

// "linear:784:128", "relu", "logsoftmax", "nllloss", "identity"
PrimitiveOp parse_primitive(const std::string& text);
std::string format_primitive(const PrimitiveOp& op);

// (train, test) as configured.
std::pair<Dataset, Dataset> load_datasets(const DataConfig& config);

// A provisioned cascade written by `train` so that `test` can reach the
// same servers later.
nlohmann::json deployment_to_json(const Deployment& deployment);
Deployment deployment_from_json(const nlohmann::json& j);

}  // namespace mixnn
