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

#include "mixnn/designer.h"

#include <algorithm>
#include <chrono>
#include <map>
#include <numeric>
#include <random>

namespace mixnn {

namespace {

// Bound used before any loop timing is known.
constexpr Duration kSetupBound = std::chrono::seconds(10);

double seconds(Duration d) { return std::chrono::duration<double>(d).count(); }

double wall_seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::optional<size_t> first_linear_in(const LayerSpec& spec) {
  for (const auto& op : spec.ops) {
    if (op.kind == PrimitiveKind::kLinear) return op.in_dim;
  }
  return std::nullopt;
}

std::optional<size_t> last_linear_out(const LayerSpec& spec) {
  std::optional<size_t> out;
  for (const auto& op : spec.ops) {
    if (op.kind == PrimitiveKind::kLinear) out = op.out_dim;
  }
  return out;
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) out += (out.empty() ? "" : ",") + id;
  return out;
}

}  // namespace

void TrainingConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (time_bound && time_bound->count() <= 0) throw ConfigError("time bound T must be positive");
  if (!(learning_rate > 0.0f)) throw ConfigError("learning_rate must be positive");
  if (momentum < 0.0f || momentum >= 1.0f) throw ConfigError("momentum must be in [0, 1)");
}

std::vector<std::string> Deployment::node_ids() const {
  std::vector<std::string> ids;
  for (const auto& e : cascade.entries) ids.push_back(e.node_id);
  return ids;
}

Designer::Designer(Transport& transport, KeyPair keys, size_t packet_size)
    : transport_(transport), keys_(std::move(keys)), packet_size_(packet_size) {}

Deployment Designer::provision(const std::vector<KeyRecord>& pool,
                               const std::vector<LayerSpec>& model, const ProvisionPlan& plan,
                               const TrainingConfig& config, const std::set<std::string>& exclude) {
  config.validate();
  mixnn::validate_model(model);

  const size_t first = config.hold_first_layer ? 1 : 0;
  const size_t end = model.size() - (config.hold_last_layer ? 1 : 0);
  if (end <= first) throw ConfigError("no model layer is left for remote servers");
  const size_t p = end - first;
  const size_t r = plan.dummies;
  const size_t n = p + r;
  if (r > 0 && p < 2) throw ConfigError("dummy layers need at least two remote actual layers");

  // Candidates in node-id order, so the seeded draw does not depend on how
  // the pool was listed.
  std::map<std::string, const KeyRecord*> candidates;
  for (const auto& rec : pool) {
    if (exclude.count(rec.node_id) || !matches(rec, plan.filter)) continue;
    candidates.emplace(rec.node_id, &rec);
  }
  if (candidates.size() < n) {
    throw PoolExhausted("need " + std::to_string(n) + " servers but only " +
                        std::to_string(candidates.size()) + " are available");
  }
  std::vector<const KeyRecord*> chosen;
  for (const auto& [id, rec] : candidates) chosen.push_back(rec);
  std::mt19937_64 rng(derive_seed(plan.selection_seed, 1));
  std::shuffle(chosen.begin(), chosen.end(), rng);
  chosen.resize(n);

  std::vector<bool> dummy(n, false);
  if (plan.dummy_slots) {
    if (plan.dummy_slots->size() != r) throw ConfigError("dummy slot count differs from dummies");
    for (size_t s : *plan.dummy_slots) {
      if (s == 0 || s + 1 >= n || dummy[s]) {
        throw ConfigError("dummy slot " + std::to_string(s) + " is not a free interior slot");
      }
      dummy[s] = true;
    }
  } else if (r > 0) {
    std::vector<size_t> interior(n - 2);
    std::iota(interior.begin(), interior.end(), size_t{1});
    std::mt19937_64 slot_rng(derive_seed(plan.selection_seed, 2));
    std::shuffle(interior.begin(), interior.end(), slot_rng);
    for (size_t i = 0; i < r; ++i) dummy[interior[i]] = true;
  }

  Deployment d;
  d.model = model;
  d.plan = plan;
  d.config = config;
  d.cascade.designer = hop();
  d.cascade.packet_size = packet_size_;
  d.cascade.learning_rate = config.learning_rate;
  d.cascade.momentum = config.momentum;
  d.cascade.loss_held_by_designer = config.hold_last_layer;
  size_t next_layer = first;
  for (size_t slot = 0; slot < n; ++slot) {
    CascadeEntry e;
    e.node_id = chosen[slot]->node_id;
    e.hop = Hop{chosen[slot]->address, chosen[slot]->pk};
    if (dummy[slot]) {
      d.model_index.push_back(std::nullopt);
    } else {
      e.layer = model[next_layer];
      e.seed = derive_seed(config.seed, next_layer);
      d.model_index.push_back(next_layer);
      ++next_layer;
    }
    d.cascade.entries.push_back(std::move(e));
  }
  d.cascade.validate();

  std::optional<size_t> width;
  for (size_t k = first; k < end && !width; ++k) width = first_linear_in(model[k]);
  if (!width && first == 1) width = last_linear_out(model[0]);
  d.input_width = width.value_or(1);

  for (const auto& e : d.cascade.entries) used_.insert(e.node_id);
  return d;
}

void Designer::send(const Routed& message) {
  if (on_send) on_send(message);
  transport_.send(message);
}

Reply Designer::await_with_deadline(std::initializer_list<ReplyKind> expected, Duration bound) {
  const Duration deadline = transport_.now() + bound;
  for (;;) {
    const Duration left = deadline - transport_.now();
    if (left <= Duration::zero()) break;
    auto packet = transport_.receive(left);
    if (!packet) break;
    Reply reply;
    try {
      reply = open_reply(keys_.sk, *packet, packet_size_);
    } catch (const Error&) {
      continue;  // not for us, or garbled
    }
    if (reply.kind == ReplyKind::kError) throw ProtocolError("cascade reported: " + reply.error);
    if (std::find(expected.begin(), expected.end(), reply.kind) == expected.end()) continue;
    if (on_reply) on_reply(reply);
    return reply;
  }
  throw CrashDetected("no reply within the time bound of " + std::to_string(seconds(bound)) +
                      " s; the cascade is presumed crashed");
}

Duration Designer::time_bound(const Deployment& d) const {
  if (d.config.time_bound) return *d.config.time_bound;
  if (!d.loop_rtt) return std::max(kSetupBound, transport_.minimum_time_bound());
  // The loop crosses n + 1 links and n servers; charge each the same share
  // and scale T = 100 (n delta + (n - 1) t).
  const auto n = static_cast<int64_t>(d.cascade.size());
  const Duration unit = *d.loop_rtt / (2 * n + 1);
  const Duration bound = 100 * (n * unit + (n - 1) * unit);
  return std::max(bound, transport_.minimum_time_bound());
}

Duration Designer::send_designer_loop(Deployment& d) {
  const Duration bound = d.config.time_bound.value_or(
      std::max(kSetupBound, transport_.minimum_time_bound()));
  LoopPacket loop = pack_cover_loop(d.cascade);
  const Duration start = transport_.now();
  send(loop.routed);
  const Duration deadline = start + bound;
  for (;;) {
    const Duration left = deadline - transport_.now();
    if (left <= Duration::zero()) break;
    Reply reply = await_with_deadline({ReplyKind::kLoop}, left);
    if (reply.token == loop.token) {
      d.loop_rtt = std::max(transport_.now() - start, Duration(1));
      return *d.loop_rtt;
    }
  }
  throw CrashDetected("designer loop did not return; the cascade is presumed crashed");
}

void Designer::initialize_model(Deployment& d) {
  if (!d.loop_rtt && !d.config.time_bound) send_designer_loop(d);
  const TrainingConfig& c = d.config;
  d.held_first.reset();
  d.held_last.reset();
  if (c.hold_first_layer) {
    d.held_first = make_layer(d.model.front(), derive_seed(c.seed, 0), c.learning_rate,
                              c.momentum);
  }
  if (c.hold_last_layer) {
    d.held_last = make_layer(d.model.back(), derive_seed(c.seed, d.model.size() - 1),
                             c.learning_rate, c.momentum);
  }
  d.initialized = false;
  send(pack_init(d.cascade));
  send(pack_test(d.cascade, Matrix(1, d.input_width, 0.0f), d.cascade.size()));
  await_with_deadline({ReplyKind::kOutput}, time_bound(d));
  d.initialized = true;
}

RunMetrics Designer::train(Deployment& d, const Dataset& data, const Dataset* eval) {
  if (!d.initialized) throw ProtocolError("train before initialize_model");
  const TrainingConfig& c = d.config;
  const Duration bound = time_bound(d);
  const auto run_start = std::chrono::steady_clock::now();
  RunMetrics metrics;

  size_t epoch = 0;
  std::string phase = "forward";
  try {
    for (epoch = 1; epoch <= c.epochs; ++epoch) {
      const auto epoch_start = std::chrono::steady_clock::now();
      const auto order = epoch_order(data.size(), c.seed, epoch, c.shuffle);
      double loss_sum = 0.0;
      size_t batches = 0;
      for (auto batch : split_batches(order, c.batch_size)) {
        ++iterations_;
        if (on_iteration) on_iteration(iterations_);
        Matrix x = gather_rows(data.images, batch);
        std::vector<int32_t> y = gather_labels(data.labels, batch);
        if (d.held_first) x = layer_forward(*d.held_first, x, Mode::kTrain);

        phase = "forward";
        std::optional<std::vector<int32_t>> remote_labels;
        if (!d.held_last) remote_labels = y;
        send(pack_forward(d.cascade, x, remote_labels));
        Reply fwd = await_with_deadline({ReplyKind::kLoss, ReplyKind::kOutput}, bound);
        if (!fwd.value) throw ProtocolError("forward reply carries no value");

        float loss = 0.0f;
        std::optional<Matrix> seed_grad;
        if (d.held_last) {
          if (fwd.kind != ReplyKind::kOutput) throw ProtocolError("expected activations");
          loss = layer_forward(*d.held_last, *fwd.value, Mode::kTrain, y)(0, 0);
          seed_grad = layer_backward(*d.held_last, Matrix(1, 1, 1.0f), true);
        } else {
          if (fwd.kind != ReplyKind::kLoss) throw ProtocolError("expected a loss");
          loss = (*fwd.value)(0, 0);
        }

        phase = "backward";
        send(pack_backward(d.cascade, seed_grad, d.held_first.has_value()));
        Reply ack = await_with_deadline({ReplyKind::kAck}, bound);
        if (d.held_first) {
          if (!ack.value) throw ProtocolError("acknowledgment carries no input gradient");
          layer_backward(*d.held_first, *ack.value, false);
        }
        metrics.iteration_losses.push_back(loss);
        loss_sum += loss;
        ++batches;
      }
      EpochMetrics em;
      em.epoch = epoch;
      em.loss_mean = batches ? loss_sum / static_cast<double>(batches) : 0.0;
      em.wall_seconds = wall_seconds_since(epoch_start);
      if (eval) {
        phase = "test";
        em.accuracy = test(d, *eval);
      }
      metrics.epochs.push_back(em);
    }
  } catch (const CrashDetected& e) {
    CrashEvent ev;
    ev.iteration = iterations_;
    ev.epoch = epoch;
    ev.phase = phase;
    ev.at_seconds = seconds(transport_.now());
    ev.message = e.what();
    metrics.crashes.push_back(ev);
    metrics.total_wall_seconds = wall_seconds_since(run_start);
    throw TrainingCrashed(e.what(), std::move(metrics));
  }
  metrics.total_wall_seconds = wall_seconds_since(run_start);
  return metrics;
}

size_t Designer::default_end_layer(const Deployment& d) const {
  const auto& es = d.cascade.entries;
  for (size_t i = es.size(); i-- > 0;) {
    if (es[i].is_dummy()) continue;
    const auto& ops = es[i].layer->ops;
    const bool only_loss =
        std::all_of(ops.begin(), ops.end(), [](const PrimitiveOp& op) {
          return op.kind == PrimitiveKind::kNLLLoss || op.kind == PrimitiveKind::kIdentity;
        });
    if (!only_loss) return i + 1;
  }
  return es.size();
}

Matrix Designer::infer(Deployment& d, const Matrix& images, std::optional<size_t> end_layer) {
  if (!d.initialized) throw ProtocolError("test before initialize_model");
  const size_t end = end_layer.value_or(default_end_layer(d));
  const Duration bound = time_bound(d);
  const size_t batch = d.config.batch_size;
  Matrix out;
  std::vector<float> values;
  size_t cols = 0;
  for (size_t begin = 0; begin < images.rows(); begin += batch) {
    const size_t count = std::min(batch, images.rows() - begin);
    std::vector<size_t> rows(count);
    std::iota(rows.begin(), rows.end(), begin);
    Matrix x = gather_rows(images, rows);
    if (d.held_first) x = layer_forward(*d.held_first, x, Mode::kEval);
    send(pack_test(d.cascade, x, end));
    Reply reply = await_with_deadline({ReplyKind::kOutput}, bound);
    if (!reply.value || reply.value->rows() != count) throw ProtocolError("bad test reply");
    Matrix z = std::move(*reply.value);
    if (d.held_last && end == d.cascade.size()) z = layer_forward(*d.held_last, z, Mode::kEval);
    cols = z.cols();
    values.insert(values.end(), z.values().begin(), z.values().end());
  }
  if (values.empty()) return Matrix();
  return Matrix(images.rows(), cols, std::move(values));
}

std::vector<int32_t> Designer::predict(Deployment& d, const Matrix& images,
                                       std::optional<size_t> end_layer) {
  if (images.rows() == 0) return {};
  return argmax_rows(infer(d, images, end_layer));
}

double Designer::test(Deployment& d, const Dataset& data, std::optional<size_t> end_layer) {
  if (data.size() == 0) throw ConfigError("empty test set");
  const auto pred = predict(d, data.images, end_layer);
  size_t correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

ValidationResult Designer::validate_model(Deployment& d, const Dataset& holdout,
                                          double threshold) {
  ValidationResult r;
  r.threshold = threshold;
  r.accuracy = test(d, holdout);
  r.passed = r.accuracy >= threshold;
  return r;
}

Deployment Designer::replace_cascade(const Deployment& old, const std::vector<KeyRecord>& pool) {
  std::set<std::string> exclude = used_;
  for (const auto& id : old.node_ids()) exclude.insert(id);
  ProvisionPlan plan = old.plan;
  plan.selection_seed = derive_seed(old.plan.selection_seed, 100 + ++replacements_);
  return provision(pool, old.model, plan, old.config, exclude);
}

SessionOutcome run_training_session(Designer& designer, DirectoryApi& directory,
                                    const std::vector<LayerSpec>& model,
                                    const ProvisionPlan& plan, const TrainingConfig& config,
                                    const Dataset& train, const Dataset* eval,
                                    const SessionOptions& options) {
  SessionOutcome outcome;
  std::vector<CrashEvent> crashes;
  const auto pool = directory.list(plan.filter);
  std::optional<Deployment> d = designer.provision(pool, model, plan, config);

  for (;;) {
    outcome.used_node_sets.push_back(join_ids(d->node_ids()));
    if (options.on_deploy) options.on_deploy(*d);
    bool retry = false;
    try {
      designer.initialize_model(*d);
      outcome.metrics = designer.train(*d, train, eval);
      outcome.validation.reset();
      outcome.status = SessionOutcome::Status::kOk;
      if (options.validation_threshold) {
        const Dataset& holdout = eval ? *eval : train;
        outcome.validation = designer.validate_model(*d, holdout, *options.validation_threshold);
        if (!outcome.validation->passed) {
          outcome.status = SessionOutcome::Status::kValidationFailed;
          retry = true;
        }
      }
    } catch (const TrainingCrashed& e) {
      outcome.metrics = e.metrics();
      crashes.insert(crashes.end(), e.metrics().crashes.begin(), e.metrics().crashes.end());
      outcome.status = SessionOutcome::Status::kCrashed;
      retry = true;
    } catch (const CrashDetected& e) {
      outcome.metrics = RunMetrics{};
      CrashEvent ev;
      ev.iteration = designer.iterations_started();
      ev.phase = "setup";
      ev.message = e.what();
      crashes.push_back(ev);
      outcome.status = SessionOutcome::Status::kCrashed;
      retry = true;
    }
    if (!retry || outcome.replacements >= options.max_replacements) break;
    ++outcome.replacements;
    d = designer.replace_cascade(*d, directory.list(plan.filter));
  }
  outcome.metrics.crashes = crashes;
  outcome.deployment = std::move(d);
  return outcome;
}

}  // namespace mixnn
