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

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mixnn/errors.h"
#include "mixnn/harness.h"

namespace mixnn {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("mixnn-harness-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

void put_u32(std::ofstream& out, uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

// Writes n 2x3 images whose pixel k of image i is (i * 6 + k) mod 256.
void write_idx(const fs::path& images, const fs::path& labels, uint32_t n,
               uint32_t image_magic = 0x00000803) {
  std::ofstream im(images, std::ios::binary), lb(labels, std::ios::binary);
  put_u32(im, image_magic);
  put_u32(im, n);
  put_u32(im, 2);
  put_u32(im, 3);
  for (uint32_t i = 0; i < n; ++i) {
    for (uint32_t k = 0; k < 6; ++k) im.put(static_cast<char>((i * 6 + k) % 256));
  }
  put_u32(lb, 0x00000801);
  put_u32(lb, n);
  for (uint32_t i = 0; i < n; ++i) lb.put(static_cast<char>(i % 10));
}

TEST(Idx, LoadsScaledPixelsAndLabels) {
  const auto im = scratch("a-images"), lb = scratch("a-labels");
  write_idx(im, lb, 12);
  Dataset d = load_mnist_idx(im, lb);
  ASSERT_EQ(d.size(), 12u);
  EXPECT_EQ(d.features(), 6u);
  EXPECT_FLOAT_EQ(d.images(3, 4), static_cast<float>(3 * 6 + 4) / 255.0f);
  EXPECT_EQ(d.labels[11], 1);
  EXPECT_EQ(load_mnist_idx(im, lb, 5).size(), 5u);
}

TEST(Idx, RejectsBadFiles) {
  const auto im = scratch("b-images"), lb = scratch("b-labels");
  write_idx(im, lb, 4, 0x00000801);
  EXPECT_THROW(load_mnist_idx(im, lb), DecodeError);
  write_idx(im, lb, 4);
  fs::resize_file(im, fs::file_size(im) - 3);
  EXPECT_THROW(load_mnist_idx(im, lb), DecodeError);
  EXPECT_THROW(load_mnist_idx(scratch("missing"), lb), IoError);
}

TEST(Data, SyntheticIsSeededAndBalanced) {
  Dataset a = make_synthetic(200, 20, 4, 9), b = make_synthetic(200, 20, 4, 9);
  EXPECT_TRUE(a.images.bitwise_equal(b.images));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(a.images.bitwise_equal(make_synthetic(200, 20, 4, 10).images));
  std::set<int32_t> classes(a.labels.begin(), a.labels.end());
  EXPECT_EQ(classes, (std::set<int32_t>{0, 1, 2, 3}));
  EXPECT_THROW(make_synthetic(10, 20, 1, 1), ConfigError);
}

TEST(Data, EpochOrderIsAPermutation) {
  auto o1 = epoch_order(100, 3, 1, true);
  auto o2 = epoch_order(100, 3, 2, true);
  EXPECT_EQ(o1, epoch_order(100, 3, 1, true));
  EXPECT_NE(o1, o2);
  auto sorted = o1;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
  auto plain = epoch_order(5, 3, 1, false);
  EXPECT_EQ(plain, (std::vector<size_t>{0, 1, 2, 3, 4}));
}

TEST(Data, BatchesKeepAShortTail) {
  auto order = epoch_order(10, 1, 1, false);
  auto b = split_batches(order, 4);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[2].size(), 2u);
  EXPECT_THROW(split_batches(order, 0), ConfigError);
}

TEST(Metrics, CsvRoundTrip) {
  RunMetrics m;
  m.epochs = {{1, 0.5, 0.91, 1.0}, {2, 0.25, std::nullopt, 2.0}};
  m.iteration_losses = {1.0f, 0.5f};
  CrashEvent c;
  c.iteration = 7;
  c.phase = "forward";
  m.crashes.push_back(c);
  const auto path = scratch("m.csv");
  write_metrics_csv(path, m);
  auto back = read_metrics_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].epoch, 1u);
  EXPECT_DOUBLE_EQ(back[0].loss_mean, 0.5);
  EXPECT_DOUBLE_EQ(*back[0].accuracy, 0.91);
  EXPECT_FALSE(back[1].accuracy.has_value());

  std::ofstream(scratch("bad.csv")) << "epoch,loss\n1,2\n";
  EXPECT_THROW(read_metrics_csv(scratch("bad.csv")), DecodeError);
}

TEST(Metrics, ComparisonUsesStrictThreshold) {
  std::vector<EpochMetrics> a = {{1, 0, 0.9000, 0}, {2, 0, 0.9500, 0}};
  std::vector<EpochMetrics> b = {{1, 0, 0.9005, 0}, {2, 0, 0.9500, 0}};
  auto r = compare_metrics(a, b);
  EXPECT_TRUE(r.passed);
  EXPECT_NEAR(r.max_delta, 0.0005, 1e-12);
  b[1].accuracy = 0.9520;
  EXPECT_FALSE(compare_metrics(a, b).passed);
  EXPECT_TRUE(compare_metrics(a, a, 0.0).passed == false);  // 0 < 0 fails
  b.pop_back();
  EXPECT_THROW(compare_metrics(a, b), ConfigError);
}

TEST(Faults, ParsesAllActions) {
  FaultPlan p = FaultPlan::parse(R"({"events":[
      {"iteration":5,"node":"cascade:3","action":"kill"},
      {"time_ms":20,"node":"node-02","action":"delay","delay_ms":5},
      {"iteration":1,"node":"cascade:2","action":"tamper"}]})");
  ASSERT_EQ(p.events.size(), 3u);
  EXPECT_EQ(p.events[0].at_iteration, 5u);
  EXPECT_EQ(p.events[1].action, FaultAction::kDelay);
  EXPECT_EQ(p.events[1].at_time, std::chrono::milliseconds(20));
  EXPECT_EQ(p.events[1].delay, std::chrono::milliseconds(5));
  EXPECT_EQ(p.events[2].action, FaultAction::kTamperGradientSign);
}

TEST(Faults, RejectsMalformedPlans) {
  EXPECT_THROW(FaultPlan::parse(R"({"events":[{"node":"x","action":"kill"}]})"), ConfigError);
  EXPECT_THROW(FaultPlan::parse(R"({"events":[{"iteration":1,"time_ms":2,"node":"x"}]})"),
               ConfigError);
  EXPECT_THROW(FaultPlan::parse(R"({"events":[{"iteration":1,"node":"x","action":"melt"}]})"),
               ConfigError);
  EXPECT_THROW(FaultPlan::parse("{"), ConfigError);
}

TEST(Faults, InjectorResolvesSlotsAndFiresOnce) {
  Directory dir;
  ClusterOptions o;
  o.key_seed = 4;
  Cluster cluster(o, dir);
  Designer designer(cluster.designer_transport(), gen_keypair_from_seed(2));
  Deployment d = designer.provision(dir.list(), mnist_mlp_model(), {}, TrainingConfig{});

  FaultInjector bad(cluster, FaultPlan::parse(R"({"events":[{"iteration":1,"node":"cascade:9","action":"kill"}]})"));
  EXPECT_THROW(bad.arm(designer, d), IndexError);
  FaultInjector unknown(cluster, FaultPlan::parse(R"({"events":[{"iteration":1,"node":"ghost","action":"kill"}]})"));
  EXPECT_THROW(unknown.arm(designer, d), IndexError);

  FaultInjector inj(cluster, FaultPlan::parse(
      R"({"events":[{"iteration":2,"node":"cascade:1","action":"kill"}]})"));
  inj.arm(designer, d);
  inj.on_iteration(1);
  EXPECT_EQ(inj.fired(), 0u);
  inj.on_iteration(2);
  inj.on_iteration(2);
  EXPECT_EQ(inj.fired(), 1u);
  EXPECT_THROW(designer.send_designer_loop(d), CrashDetected);
}

TEST(Faults, TimedDelayShiftsTheLoop) {
  Directory dir;
  ClusterOptions o;
  o.key_seed = 4;
  Cluster cluster(o, dir);
  Designer designer(cluster.designer_transport(), gen_keypair_from_seed(2));
  Deployment d = designer.provision(dir.list(), mnist_mlp_model(), {}, TrainingConfig{});
  const Duration before = designer.send_designer_loop(d);
  FaultInjector inj(cluster, FaultPlan::parse(
      R"({"events":[{"time_ms":0,"node":"cascade:2","action":"delay","delay_ms":40}]})"));
  inj.arm(designer, d);
  cluster.sim()->run_until(cluster.sim()->now() + std::chrono::milliseconds(1));
  EXPECT_EQ(inj.fired(), 1u);
  EXPECT_EQ(designer.send_designer_loop(d) - before, std::chrono::milliseconds(40));
}

TEST(Faults, SocketClusterRefusesInjection) {
  Directory dir;
  ClusterOptions o;
  o.mode = TransportMode::kSocket;
  o.pool_size = 1;
  Cluster cluster(o, dir);
  EXPECT_NO_THROW(FaultInjector(cluster, FaultPlan{}));
  EXPECT_THROW(FaultInjector(cluster, FaultPlan::parse(
                   R"({"events":[{"iteration":1,"node":"node-01","action":"kill"}]})")),
               ConfigError);
}

TEST(Baseline, DeterministicAndLearns) {
  const Dataset data = make_synthetic(256, 784, 10, 3);
  TrainingConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  BaselineRun a = run_baseline(mnist_mlp_model(), data, cfg, &data);
  BaselineRun b = run_baseline(mnist_mlp_model(), data, cfg, &data);
  EXPECT_EQ(a.metrics.iteration_losses, b.metrics.iteration_losses);
  ASSERT_EQ(a.metrics.epochs.size(), 3u);
  EXPECT_LT(a.metrics.epochs[2].loss_mean, a.metrics.epochs[0].loss_mean);
  EXPECT_GT(*a.metrics.epochs[2].accuracy, *a.metrics.epochs[0].accuracy);
  EXPECT_GT(*a.metrics.epochs[2].accuracy, 0.5);
}

}  // namespace
}  // namespace mixnn
