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

// mixnn: key generation, directory service, node daemon, and designer runs.
//
// Exit codes: 0 ok, 2 usage or configuration, 3 crash detected,
// 4 validation failed, 5 I/O or registration failure.

#include <sys/stat.h>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "mixnn/config.h"
#include "mixnn/designer.h"
#include "mixnn/directory.h"
#include "mixnn/errors.h"
#include "mixnn/harness.h"
#include "mixnn/metrics.h"
#include "mixnn/transport.h"

namespace {

using namespace mixnn;

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kCrash = 3,
  kValidationFailed = 4,
  kIo = 5,
};

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void install_signal_handlers() {
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  sigaction(SIGTERM, &sa, nullptr);
  sigaction(SIGINT, &sa, nullptr);
}

void wait_for_signal() {
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

void write_text(const std::string& path, const std::string& text, mode_t mode) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text << '\n';
  out.close();
  if (!out || ::chmod(path.c_str(), mode) != 0) throw IoError("cannot write " + path);
}

KeyPair load_keys(const std::string& prefix) {
  KeyPair kp;
  kp.sk = SecretKey::from_base64(read_text(prefix + ".sk"));
  kp.pk = public_key_of(kp.sk);
  return kp;
}

// ---- keygen ---------------------------------------------------------------

struct KeygenArgs {
  std::string out;
  std::optional<uint64_t> seed;
};

int cmd_keygen(const KeygenArgs& a) {
  KeyPair kp = a.seed ? gen_keypair_from_seed(*a.seed) : gen_keypair();
  // Create the secret file with restrictive permissions from the start.
  const std::string sk_path = a.out + ".sk";
  ::umask(077);
  write_text(sk_path, kp.sk.to_base64(), 0600);
  write_text(a.out + ".pk", kp.pk.to_base64(), 0644);
  std::cout << "public key " << kp.pk.to_base64() << " written to " << a.out << ".pk\n";
  return kOk;
}

// ---- directory ------------------------------------------------------------

struct DirectoryArgs {
  std::string listen = "127.0.0.1:7000";
  std::string store;
};

int cmd_directory(const DirectoryArgs& a) {
  std::optional<std::filesystem::path> store;
  if (!a.store.empty()) store = a.store;
  Directory dir(store);
  DirectoryServer server(dir, Address::parse(a.listen, true));
  std::cout << "directory listening on " << server.address().to_string() << std::endl;
  install_signal_handlers();
  wait_for_signal();
  server.stop();
  return kOk;
}

// ---- node -----------------------------------------------------------------

struct NodeArgs {
  std::string listen;
  std::string key;
  std::string directory;
  std::string id;
  std::vector<std::string> metadata;
  double cover_rate = 0.0;
  size_t packet_size = kDefaultPacketSize;
};

int cmd_node(const NodeArgs& a) {
  const Address bind = Address::parse(a.listen, true);
  const Address dir_addr = Address::parse(a.directory);
  std::map<std::string, std::string> metadata;
  for (const auto& kv : a.metadata) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("metadata must be key=value");
    metadata[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  KeyPair keys = load_keys(a.key);
  const std::string id =
      a.id.empty() ? std::filesystem::path(a.key).filename().string() : a.id;

  Node node(id, std::move(keys), a.packet_size);
  if (a.cover_rate > 0.0) node.set_cover_rate(a.cover_rate, (uint64_t{std::random_device{}()} << 32) ^ std::random_device{}());
  SocketNodeHost host(node, bind);
  DirectoryClient directory(dir_addr);
  directory.register_record(KeyRecord{id, host.address(), node.public_key(), metadata});
  std::cerr << "node " << id << " serving on " << host.address().to_string() << std::endl;
  install_signal_handlers();
  wait_for_signal();
  host.stop();
  return kOk;
}

// ---- designer runs --------------------------------------------------------

struct RunArgs {
  std::string config;
  bool simulated = false;
  std::string metrics;
  std::optional<size_t> epochs;
  std::optional<uint64_t> seed;
  std::optional<double> time_bound_ms;
  std::optional<double> threshold;
  std::string deployment;
};

RunConfig load_run_config(const RunArgs& a) {
  RunConfig c = RunConfig::load(a.config);
  // Flags override file values.
  if (a.simulated) c.mode = TransportMode::kSimulated;
  if (!a.metrics.empty()) c.metrics_path = a.metrics;
  if (a.epochs) c.training.epochs = *a.epochs;
  if (a.seed) c.training.seed = *a.seed;
  if (a.time_bound_ms) {
    c.training.time_bound = std::chrono::nanoseconds(static_cast<int64_t>(*a.time_bound_ms * 1e6));
  }
  if (a.threshold) c.validation_threshold = *a.threshold;
  if (!a.deployment.empty()) c.deployment_path = a.deployment;
  c.training.validate();
  return c;
}

KeyPair designer_keys(const RunConfig& c) {
  if (c.designer_key) return load_keys(c.designer_key->string());
  return gen_keypair();
}

void print_summary(const RunMetrics& m) {
  write_metrics_csv(std::cout, m);
}

int report(const SessionOutcome& out, const RunConfig& c) {
  if (c.metrics_path) write_metrics_csv(*c.metrics_path, out.metrics);
  print_summary(out.metrics);
  if (out.validation) {
    std::cout << "validation accuracy=" << out.validation->accuracy
              << " threshold=" << out.validation->threshold
              << (out.validation->passed ? " PASS" : " FAIL") << '\n';
  }
  switch (out.status) {
    case SessionOutcome::Status::kOk: return kOk;
    case SessionOutcome::Status::kCrashed:
      std::cerr << "crash detected: the cascade did not answer within the time bound\n";
      return kCrash;
    case SessionOutcome::Status::kValidationFailed:
      std::cerr << "model validation failed\n";
      return kValidationFailed;
  }
  return kFailure;
}

// Train (and, for `test`, evaluate) on a cascade described by the config.
int run_session(const RunConfig& c, bool test_after) {
  auto [train, test] = load_datasets(c.data);
  SessionOptions opts;
  opts.validation_threshold = c.validation_threshold;
  opts.max_replacements = c.max_replacements;

  std::optional<Directory> local_dir;
  std::optional<DirectoryClient> remote_dir;
  std::unique_ptr<Cluster> cluster;
  std::unique_ptr<Transport> socket_transport;
  Transport* transport = nullptr;
  DirectoryApi* directory = nullptr;

  if (c.mode == TransportMode::kSimulated) {
    local_dir.emplace();
    directory = &*local_dir;
    ClusterOptions co;
    co.mode = TransportMode::kSimulated;
    co.pool_size = c.pool_size;
    co.packet_size = c.packet_size;
    co.sim = c.simulation;
    co.key_seed = c.key_seed;
    co.metadata = c.pool_metadata;
    cluster = std::make_unique<Cluster>(co, *directory);
    transport = &cluster->designer_transport();
  } else {
    remote_dir.emplace(*c.directory);
    directory = &*remote_dir;
    socket_transport = std::make_unique<SocketDesignerTransport>(c.designer_listen, c.packet_size);
    transport = socket_transport.get();
  }

  Designer designer(*transport, designer_keys(c), c.packet_size);
  std::optional<FaultInjector> injector;
  if (cluster && !c.faults.empty()) {
    injector.emplace(*cluster, c.faults);
    bool armed = false;
    opts.on_deploy = [&](const Deployment& d) {
      if (!armed) injector->arm(designer, d);
      armed = true;
    };
  }

  SessionOutcome out =
      run_training_session(designer, *directory, c.model, c.plan, c.training, train,
                           test_after ? nullptr : &test, opts);
  if (out.status == SessionOutcome::Status::kOk && c.deployment_path && out.deployment) {
    std::ofstream f(*c.deployment_path);
    f << deployment_to_json(*out.deployment).dump(2) << '\n';
    if (!f) throw IoError("cannot write " + c.deployment_path->string());
  }
  if (test_after && out.status == SessionOutcome::Status::kOk) {
    const double acc = designer.test(*out.deployment, test);
    std::cout << "test accuracy=" << acc << '\n';
  }
  return report(out, c);
}

int cmd_train(const RunArgs& a) { return run_session(load_run_config(a), false); }

int cmd_test(const RunArgs& a) {
  const RunConfig c = load_run_config(a);
  if (c.mode == TransportMode::kSimulated || !c.deployment_path ||
      !std::filesystem::exists(*c.deployment_path)) {
    // Nothing persists between simulated runs: train first, then test.
    return run_session(c, true);
  }
  auto [train, test] = load_datasets(c.data);
  (void)train;
  SocketDesignerTransport transport(c.designer_listen, c.packet_size);
  Designer designer(transport, designer_keys(c), c.packet_size);
  std::ifstream f(*c.deployment_path);
  Deployment d = deployment_from_json(nlohmann::json::parse(f));
  d.cascade.designer = designer.hop();
  d.config.time_bound = c.training.time_bound;
  designer.send_designer_loop(d);
  d.initialized = true;
  const double acc = designer.test(d, test);
  std::cout << "test accuracy=" << acc << '\n';
  if (c.validation_threshold && acc < *c.validation_threshold) return kValidationFailed;
  return kOk;
}

int cmd_baseline(const RunArgs& a) {
  const RunConfig c = load_run_config(a);
  auto [train, test] = load_datasets(c.data);
  BaselineRun run = run_baseline(c.model, train, c.training, &test);
  if (c.metrics_path) write_metrics_csv(*c.metrics_path, run.metrics);
  print_summary(run.metrics);
  return kOk;
}

// ---- compare --------------------------------------------------------------

struct CompareArgs {
  std::vector<std::string> metrics;
  double threshold = 0.001;
};

int cmd_compare(const CompareArgs& a) {
  const auto left = read_metrics_csv(a.metrics.at(0));
  const auto right = read_metrics_csv(a.metrics.at(1));
  const ComparisonReport r = compare_metrics(left, right, a.threshold);
  print_report(std::cout, r);
  return r.passed ? kOk : kValidationFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MixNN: layer-per-server training over onion-routed cascades"};
  app.require_subcommand(1);

  KeygenArgs keygen;
  auto* k = app.add_subcommand("keygen", "Generate a key pair (<out>.pk, <out>.sk)");
  k->add_option("--out", keygen.out, "Output path prefix")->required();
  k->add_option("--seed", keygen.seed, "Deterministic seed (tests only)");

  DirectoryArgs dir;
  auto* d = app.add_subcommand("directory", "Run the key directory");
  d->add_option("--listen", dir.listen, "host:port to listen on");
  d->add_option("--store", dir.store, "Append-only record file, replayed at startup");

  NodeArgs node;
  auto* n = app.add_subcommand("node", "Run a layer server");
  n->add_option("--listen", node.listen, "host:port to listen on")->required();
  n->add_option("--key", node.key, "Key file prefix from keygen")->required();
  n->add_option("--directory", node.directory, "Directory host:port")->required();
  n->add_option("--id", node.id, "Node id (default: key file name)");
  n->add_option("--metadata", node.metadata, "key=value, repeatable");
  n->add_option("--cover-rate", node.cover_rate, "Cover packets per second (0 = off)");
  n->add_option("--packet-size", node.packet_size, "Packet length L in bytes");

  RunArgs run;
  auto add_run_flags = [&run](CLI::App* sub) {
    sub->add_option("--config", run.config, "Run configuration (JSON)")->required();
    sub->add_flag("--simulated", run.simulated, "Force the simulated transport");
    sub->add_option("--metrics", run.metrics, "Write the metrics CSV here");
    sub->add_option("--epochs", run.epochs, "Override training.epochs");
    sub->add_option("--seed", run.seed, "Override training.seed");
    sub->add_option("--time-bound-ms", run.time_bound_ms, "Override the time bound T");
    sub->add_option("--threshold", run.threshold, "Override validation_threshold");
    sub->add_option("--deployment", run.deployment, "Deployment file written by train");
  };
  auto* tr = app.add_subcommand("train", "Train a model on a cascade");
  add_run_flags(tr);
  auto* te = app.add_subcommand("test", "Test a model on a cascade");
  add_run_flags(te);
  auto* ba = app.add_subcommand("baseline", "Train the same model in one process");
  add_run_flags(ba);

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "Compare two metrics files");
  c->add_option("--metrics", cmp.metrics, "Two metrics CSV files")->required()->expected(2);
  c->add_option("--threshold", cmp.threshold, "Maximum accuracy difference");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*k) return cmd_keygen(keygen);
    if (*d) return cmd_directory(dir);
    if (*n) return cmd_node(node);
    if (*tr) return cmd_train(run);
    if (*te) return cmd_test(run);
    if (*ba) return cmd_baseline(run);
    if (*c) return cmd_compare(cmp);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const CrashDetected& e) {
    std::cerr << "crash detected: " << e.what() << '\n';
    return kCrash;
  } catch (const ConflictError& e) {
    std::cerr << "registration failed: " << e.what() << '\n';
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const DecodeError& e) {
    std::cerr << "bad input: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
