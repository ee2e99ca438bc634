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

#include "mixnn/config.h"

#include <fstream>
#include <set>
#include <sstream>

#include "mixnn/errors.h"

namespace mixnn {

using nlohmann::json;

namespace {

// Reads typed fields out of one JSON object and rejects unknown keys.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  T get(const std::string& key) {
    seen_.insert(key);
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (has(key)) out = get<T>(key);
  }

  template <typename T>
  void read(const std::string& key, std::optional<T>& out) {
    if (has(key)) out = get<T>(key);
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Duration millis(double ms) {
  return std::chrono::nanoseconds(static_cast<int64_t>(ms * 1e6));
}

std::vector<LayerSpec> parse_model(const json& j, const std::string& where) {
  if (j.is_string()) {
    if (j.get<std::string>() == "mlp") return mnist_mlp_model();
    throw ConfigError(where + ": unknown model '" + j.get<std::string>() + "'");
  }
  if (!j.is_array()) throw ConfigError(where + ": expected \"mlp\" or a list of layers");
  std::vector<LayerSpec> model;
  for (const auto& layer : j) {
    if (!layer.is_array()) throw ConfigError(where + ": each layer is a list of primitives");
    LayerSpec spec;
    for (const auto& op : layer) {
      if (!op.is_string()) throw ConfigError(where + ": primitives are strings");
      spec.ops.push_back(parse_primitive(op.get<std::string>()));
    }
    model.push_back(std::move(spec));
  }
  try {
    validate_model(model);
  } catch (const ShapeError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return model;
}

Address parse_address(Section& s, const std::string& key, bool allow_ephemeral) {
  try {
    return Address::parse(s.get<std::string>(key), allow_ephemeral);
  } catch (const ConfigError& e) {
    throw ConfigError(s.path(key) + ": " + e.what());
  }
}

}  // namespace

PrimitiveOp parse_primitive(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ':')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty primitive");
  const PrimitiveKind kind = primitive_kind_from_string(parts[0]);
  if (kind == PrimitiveKind::kLinear) {
    if (parts.size() != 3) throw ConfigError("linear needs 'linear:in:out', got '" + text + "'");
    try {
      const unsigned long in = std::stoul(parts[1]);
      const unsigned long out = std::stoul(parts[2]);
      if (in == 0 || out == 0 || in > 1u << 20 || out > 1u << 20) throw std::out_of_range(text);
      return PrimitiveOp::linear(static_cast<uint32_t>(in), static_cast<uint32_t>(out));
    } catch (const std::exception&) {
      throw ConfigError("bad linear dimensions in '" + text + "'");
    }
  }
  if (parts.size() != 1) throw ConfigError("'" + parts[0] + "' takes no arguments");
  return PrimitiveOp{kind, 0, 0};
}

std::string format_primitive(const PrimitiveOp& op) {
  if (op.kind == PrimitiveKind::kLinear) {
    return "linear:" + std::to_string(op.in_dim) + ":" + std::to_string(op.out_dim);
  }
  return to_string(op.kind);
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  RunConfig c;
  Section top(j, origin);

  if (top.has("mode")) c.mode = transport_mode_from_string(top.get<std::string>("mode"));
  top.read("packet_size", c.packet_size);
  if (top.has("model")) c.model = parse_model(top.raw("model"), top.path("model"));
  if (top.has("directory")) c.directory = parse_address(top, "directory", false);

  if (top.has("pool")) {
    Section s(top.raw("pool"), top.path("pool"));
    s.read("size", c.pool_size);
    s.read("key_seed", c.key_seed);
    s.read("metadata", c.pool_metadata);
    s.finish();
  }
  if (top.has("designer")) {
    Section s(top.raw("designer"), top.path("designer"));
    if (s.has("listen")) c.designer_listen = parse_address(s, "listen", true);
    if (s.has("key")) c.designer_key = s.get<std::string>("key");
    s.finish();
  }
  if (top.has("cascade")) {
    Section s(top.raw("cascade"), top.path("cascade"));
    s.read("dummies", c.plan.dummies);
    s.read("selection_seed", c.plan.selection_seed);
    s.read("filter", c.plan.filter);
    if (s.has("dummy_slots")) c.plan.dummy_slots = s.get<std::vector<size_t>>("dummy_slots");
    s.finish();
  }
  if (top.has("training")) {
    Section s(top.raw("training"), top.path("training"));
    s.read("epochs", c.training.epochs);
    s.read("batch_size", c.training.batch_size);
    s.read("learning_rate", c.training.learning_rate);
    s.read("momentum", c.training.momentum);
    s.read("seed", c.training.seed);
    s.read("shuffle", c.training.shuffle);
    if (s.has("time_bound_ms")) c.training.time_bound = millis(s.get<double>("time_bound_ms"));
    s.read("hold_first_layer", c.training.hold_first_layer);
    s.read("hold_last_layer", c.training.hold_last_layer);
    s.finish();
  }
  if (top.has("data")) {
    Section s(top.raw("data"), top.path("data"));
    auto path = [&s](const std::string& key, std::optional<std::filesystem::path>& out) {
      if (s.has(key)) out = s.get<std::string>(key);
    };
    path("train_images", c.data.train_images);
    path("train_labels", c.data.train_labels);
    path("test_images", c.data.test_images);
    path("test_labels", c.data.test_labels);
    s.read("train_limit", c.data.train_limit);
    s.read("test_limit", c.data.test_limit);
    if (s.has("synthetic")) {
      Section syn(s.raw("synthetic"), s.path("synthetic"));
      syn.read("examples", c.data.synthetic_examples);
      syn.read("test_examples", c.data.synthetic_test_examples);
      syn.read("features", c.data.synthetic_features);
      syn.read("classes", c.data.synthetic_classes);
      syn.read("seed", c.data.synthetic_seed);
      syn.finish();
    }
    s.finish();
    const int given = c.data.train_images.has_value() + c.data.train_labels.has_value() +
                      c.data.test_images.has_value() + c.data.test_labels.has_value();
    if (given != 0 && given != 4) {
      throw ConfigError(top.path("data") + ": give all four MNIST paths or none");
    }
  }
  if (top.has("validation_threshold")) {
    c.validation_threshold = top.get<double>("validation_threshold");
    if (*c.validation_threshold < 0.0 || *c.validation_threshold > 1.0) {
      throw ConfigError(top.path("validation_threshold") + ": must be in [0, 1]");
    }
  }
  if (top.has("faults")) c.faults = FaultPlan::from_json(top.raw("faults"));
  if (top.has("simulation")) {
    Section s(top.raw("simulation"), top.path("simulation"));
    if (s.has("hop_latency_ms")) c.simulation.hop_latency = millis(s.get<double>("hop_latency_ms"));
    if (s.has("processing_ms")) c.simulation.processing = millis(s.get<double>("processing_ms"));
    if (s.has("jitter_ms")) c.simulation.jitter = millis(s.get<double>("jitter_ms"));
    s.read("seed", c.simulation.seed);
    s.finish();
  }
  if (top.has("recovery")) {
    Section s(top.raw("recovery"), top.path("recovery"));
    s.read("max_replacements", c.max_replacements);
    s.finish();
  }
  if (top.has("metrics")) c.metrics_path = top.get<std::string>("metrics");
  if (top.has("deployment")) c.deployment_path = top.get<std::string>("deployment");
  top.finish();

  try {
    c.training.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(top.path("training") + ": " + e.what());
  }
  if (c.mode == TransportMode::kSocket && !c.directory) {
    throw ConfigError(origin + ": socket mode needs 'directory'");
  }
  if (c.mode == TransportMode::kSocket && !c.faults.empty()) {
    throw ConfigError(top.path("faults") + ": fault plans apply only to simulated mode");
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::pair<Dataset, Dataset> load_datasets(const DataConfig& c) {
  if (c.uses_mnist()) {
    return {load_mnist_idx(*c.train_images, *c.train_labels, c.train_limit),
            load_mnist_idx(*c.test_images, *c.test_labels, c.test_limit)};
  }
  // One draw split in two, so both halves share the class centres.
  Dataset all = make_synthetic(c.synthetic_examples + c.synthetic_test_examples,
                               c.synthetic_features, c.synthetic_classes, c.synthetic_seed);
  return {all.slice(0, c.synthetic_examples),
          all.slice(c.synthetic_examples, c.synthetic_test_examples)};
}

json deployment_to_json(const Deployment& d) {
  json entries = json::array();
  for (size_t i = 0; i < d.cascade.size(); ++i) {
    const auto& e = d.cascade.entries[i];
    json je{{"node_id", e.node_id},
            {"address", e.hop.address.to_string()},
            {"pk", e.hop.pk.to_base64()},
            {"seed", e.seed}};
    if (d.model_index[i]) je["model_index"] = *d.model_index[i];
    entries.push_back(je);
  }
  json model = json::array();
  for (const auto& layer : d.model) {
    json ops = json::array();
    for (const auto& op : layer.ops) ops.push_back(format_primitive(op));
    model.push_back(ops);
  }
  return json{{"entries", entries},
              {"model", model},
              {"packet_size", d.cascade.packet_size},
              {"batch_size", d.config.batch_size},
              {"hold_first_layer", d.config.hold_first_layer},
              {"hold_last_layer", d.config.hold_last_layer}};
}

Deployment deployment_from_json(const json& j) {
  try {
    Deployment d;
    d.model = parse_model(j.at("model"), "deployment.model");
    d.config.batch_size = j.at("batch_size").get<size_t>();
    d.config.hold_first_layer = j.at("hold_first_layer").get<bool>();
    d.config.hold_last_layer = j.at("hold_last_layer").get<bool>();
    if (d.config.hold_first_layer || d.config.hold_last_layer) {
      throw ConfigError("deployments with designer-held layers cannot be reopened");
    }
    d.cascade.packet_size = j.at("packet_size").get<size_t>();
    for (const auto& je : j.at("entries")) {
      CascadeEntry e;
      e.node_id = je.at("node_id").get<std::string>();
      e.hop.address = Address::parse(je.at("address").get<std::string>());
      e.hop.pk = PublicKey::from_base64(je.at("pk").get<std::string>());
      e.seed = je.at("seed").get<uint64_t>();
      if (je.contains("model_index")) {
        const size_t k = je.at("model_index").get<size_t>();
        if (k >= d.model.size()) throw ConfigError("model_index out of range");
        e.layer = d.model[k];
        d.model_index.push_back(k);
      } else {
        d.model_index.push_back(std::nullopt);
      }
      d.cascade.entries.push_back(std::move(e));
    }
    return d;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("deployment: ") + e.what());
  }
}

}  // namespace mixnn
