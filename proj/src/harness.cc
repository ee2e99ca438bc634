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

#include "mixnn/harness.h"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mixnn/errors.h"

namespace mixnn {

using nlohmann::json;

namespace {

double wall_seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

// ---- baseline -------------------------------------------------------------

BaselineModel make_baseline(const std::vector<LayerSpec>& model, const TrainingConfig& config) {
  validate_model(model);
  BaselineModel b;
  for (size_t k = 0; k < model.size(); ++k) {
    b.layers.push_back(make_layer(model[k], derive_seed(config.seed, k), config.learning_rate,
                                  config.momentum));
  }
  return b;
}

BaselineRun run_baseline(const std::vector<LayerSpec>& model, const Dataset& data,
                         const TrainingConfig& config, const Dataset* eval) {
  config.validate();
  BaselineRun run{make_baseline(model, config), {}};
  auto& layers = run.model.layers;
  const auto run_start = std::chrono::steady_clock::now();
  for (size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const auto order = epoch_order(data.size(), config.seed, epoch, config.shuffle);
    double loss_sum = 0.0;
    size_t batches = 0;
    for (auto batch : split_batches(order, config.batch_size)) {
      Matrix x = gather_rows(data.images, batch);
      const std::vector<int32_t> y = gather_labels(data.labels, batch);
      for (auto& layer : layers) {
        x = layer.spec.ends_with_loss() ? layer_forward(layer, x, Mode::kTrain, y)
                                        : layer_forward(layer, x, Mode::kTrain);
      }
      const float loss = x(0, 0);
      Matrix g(1, 1, 1.0f);
      for (size_t k = layers.size(); k-- > 0;) {
        auto gi = layer_backward(layers[k], g, k > 0);
        if (k > 0) g = std::move(*gi);
      }
      run.metrics.iteration_losses.push_back(loss);
      loss_sum += loss;
      ++batches;
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.loss_mean = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    em.wall_seconds = wall_seconds_since(epoch_start);
    if (eval) em.accuracy = baseline_accuracy(run.model, *eval, config.batch_size);
    run.metrics.epochs.push_back(em);
  }
  run.metrics.total_wall_seconds = wall_seconds_since(run_start);
  return run;
}

Matrix baseline_infer(BaselineModel& model, const Matrix& images, size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<float> values;
  size_t cols = 0;
  for (size_t begin = 0; begin < images.rows(); begin += batch_size) {
    const size_t count = std::min(batch_size, images.rows() - begin);
    std::vector<size_t> rows(count);
    std::iota(rows.begin(), rows.end(), begin);
    Matrix x = gather_rows(images, rows);
    for (auto& layer : model.layers) x = layer_forward(layer, x, Mode::kEval);
    cols = x.cols();
    values.insert(values.end(), x.values().begin(), x.values().end());
  }
  if (values.empty()) return Matrix();
  return Matrix(images.rows(), cols, std::move(values));
}

std::vector<int32_t> baseline_predict(BaselineModel& model, const Matrix& images,
                                      size_t batch_size) {
  if (images.rows() == 0) return {};
  return argmax_rows(baseline_infer(model, images, batch_size));
}

double baseline_accuracy(BaselineModel& model, const Dataset& data, size_t batch_size) {
  if (data.size() == 0) throw ConfigError("empty test set");
  const auto pred = baseline_predict(model, data.images, batch_size);
  size_t correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---- server pools ---------------------------------------------------------

std::string to_string(TransportMode mode) {
  return mode == TransportMode::kSimulated ? "simulated" : "socket";
}

TransportMode transport_mode_from_string(const std::string& text) {
  if (text == "simulated") return TransportMode::kSimulated;
  if (text == "socket") return TransportMode::kSocket;
  throw ConfigError("transport mode must be 'simulated' or 'socket', got '" + text + "'");
}

Cluster::Cluster(const ClusterOptions& options, DirectoryApi& directory) : options_(options) {
  if (options_.mode == TransportMode::kSimulated) sim_ = std::make_unique<SimNetwork>(options_.sim);
  try {
    for (size_t i = 0; i < options_.pool_size; ++i) {
      auto m = std::make_unique<Member>();
      char suffix[16];
      std::snprintf(suffix, sizeof(suffix), "%02zu", i + 1);
      m->id = options_.id_prefix + suffix;
      KeyPair keys = options_.key_seed ? gen_keypair_from_seed(derive_seed(options_.key_seed, i))
                                       : gen_keypair();
      m->node = std::make_unique<Node>(m->id, std::move(keys), options_.packet_size);
      Member* raw = m.get();
      const bool echo = options_.echo_logs;
      m->node->set_log_sink([this, raw, echo](const std::string& line) {
        std::lock_guard<std::mutex> lock(log_mu_);
        raw->log.push_back(line);
        if (echo) stderr_log_sink(line);
      });
      if (options_.cover_rate > 0.0) {
        m->node->set_cover_rate(options_.cover_rate, derive_seed(options_.sim.seed, 1000 + i));
      }
      if (sim_) {
        // Simulated hosts live in a private range; nothing is bound.
        m->address = Address{"10.0.0." + std::to_string(i + 1), 9000};
        sim_->attach(*m->node, m->address);
      } else {
        m->host = std::make_unique<SocketNodeHost>(*m->node, Address{options_.host, 0});
        m->address = m->host->address();
      }
      KeyRecord rec{m->id, m->address, m->node->public_key(), options_.metadata};
      directory.register_record(rec);
      members_.push_back(std::move(m));
    }
  } catch (...) {
    teardown();
    throw;
  }
}

Cluster::~Cluster() { teardown(); }

Transport& Cluster::designer_transport() {
  if (!designer_) {
    if (sim_) {
      designer_ = sim_->designer_endpoint(Address{"10.0.1.1", 9000});
    } else {
      designer_ = std::make_unique<SocketDesignerTransport>(Address{options_.host, 0},
                                                            options_.packet_size);
    }
  }
  return *designer_;
}

std::vector<std::string> Cluster::node_ids() const {
  std::vector<std::string> ids;
  for (const auto& m : members_) ids.push_back(m->id);
  return ids;
}

Cluster::Member& Cluster::member(const std::string& id) {
  for (auto& m : members_) {
    if (m->id == id) return *m;
  }
  throw IndexError("unknown node id '" + id + "'");
}

const Cluster::Member& Cluster::member(const std::string& id) const {
  for (const auto& m : members_) {
    if (m->id == id) return *m;
  }
  throw IndexError("unknown node id '" + id + "'");
}

Node& Cluster::node(const std::string& id) { return *member(id).node; }

Address Cluster::address_of(const std::string& id) const { return member(id).address; }

std::vector<std::string> Cluster::logs(const std::string& id) const {
  const Member& m = member(id);
  std::lock_guard<std::mutex> lock(log_mu_);
  return m.log;
}

void Cluster::kill(const std::string& id) {
  Member& m = member(id);
  if (sim_) {
    sim_->kill(m.address);
  } else if (m.host) {
    m.host->stop();
  }
}

void Cluster::delay(const std::string& id, Duration extra) {
  if (!sim_) throw ConfigError("delay faults need the simulated transport");
  sim_->set_extra_delay(member(id).address, extra);
}

void Cluster::tamper(const std::string& id, bool on) { member(id).node->set_tamper_gradient_sign(on); }

void Cluster::teardown() {
  for (auto& m : members_) {
    if (m->host) m->host->stop();
  }
  designer_.reset();
}

size_t Cluster::listening() const {
  size_t n = 0;
  for (const auto& m : members_) n += (m->host && m->host->running()) ? 1 : 0;
  return n;
}

// ---- faults ---------------------------------------------------------------

FaultPlan FaultPlan::from_json(const json& j) {
  FaultPlan plan;
  try {
    if (!j.contains("events")) return plan;
    for (const auto& e : j.at("events")) {
      FaultEvent ev;
      ev.node = e.at("node").get<std::string>();
      const std::string action = e.at("action").get<std::string>();
      if (action == "kill") {
        ev.action = FaultAction::kKill;
      } else if (action == "delay") {
        ev.action = FaultAction::kDelay;
        ev.delay = std::chrono::microseconds(
            static_cast<int64_t>(e.at("delay_ms").get<double>() * 1000.0));
      } else if (action == "tamper") {
        ev.action = FaultAction::kTamperGradientSign;
      } else {
        throw ConfigError("unknown fault action '" + action + "'");
      }
      if (e.contains("iteration")) ev.at_iteration = e.at("iteration").get<uint64_t>();
      if (e.contains("time_ms")) {
        ev.at_time = std::chrono::microseconds(
            static_cast<int64_t>(e.at("time_ms").get<double>() * 1000.0));
      }
      if (ev.at_iteration.has_value() == ev.at_time.has_value()) {
        throw ConfigError("each fault needs exactly one of 'iteration' or 'time_ms'");
      }
      plan.events.push_back(ev);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("fault plan: ") + e.what());
  }
  return plan;
}

FaultPlan FaultPlan::parse(const std::string& text) {
  try {
    return from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("fault plan: ") + e.what());
  }
}

FaultPlan FaultPlan::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read fault plan " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

FaultInjector::FaultInjector(Cluster& cluster, FaultPlan plan)
    : cluster_(cluster), plan_(std::move(plan)) {
  if (!plan_.empty() && !cluster_.sim()) {
    throw ConfigError("fault plans apply only to the simulated transport");
  }
}

void FaultInjector::arm(Designer& designer, const Deployment& deployment) {
  const std::string prefix = "cascade:";
  resolved_.clear();
  done_.assign(plan_.events.size(), false);
  for (const auto& ev : plan_.events) {
    std::string id = ev.node;
    if (id.rfind(prefix, 0) == 0) {
      size_t slot = 0;
      try {
        slot = std::stoul(id.substr(prefix.size()));
      } catch (const std::exception&) {
        throw IndexError("bad cascade slot in '" + id + "'");
      }
      if (slot < 1 || slot > deployment.cascade.size()) {
        throw IndexError("cascade slot " + std::to_string(slot) + " out of range");
      }
      id = deployment.cascade.entries[slot - 1].node_id;
    }
    cluster_.address_of(id);  // throws IndexError for unknown ids
    resolved_.push_back(id);
  }
  for (size_t i = 0; i < plan_.events.size(); ++i) {
    const FaultEvent& ev = plan_.events[i];
    if (!ev.at_time) continue;
    cluster_.sim()->schedule(*ev.at_time, [this, i] {
      if (done_[i]) return;
      done_[i] = true;
      fire(plan_.events[i], resolved_[i]);
    });
  }
  designer.on_iteration = [this](uint64_t it) { on_iteration(it); };
}

void FaultInjector::on_iteration(uint64_t iteration) {
  for (size_t i = 0; i < plan_.events.size() && i < resolved_.size(); ++i) {
    const FaultEvent& ev = plan_.events[i];
    if (done_[i] || !ev.at_iteration || *ev.at_iteration != iteration) continue;
    done_[i] = true;
    fire(ev, resolved_[i]);
  }
}

void FaultInjector::fire(const FaultEvent& event, const std::string& id) {
  ++fired_;
  switch (event.action) {
    case FaultAction::kKill: cluster_.kill(id); break;
    case FaultAction::kDelay: cluster_.delay(id, event.delay); break;
    case FaultAction::kTamperGradientSign: cluster_.tamper(id, true); break;
  }
}

}  // namespace mixnn
