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

#include "mixnn/harness.h"

namespace mixnn {
namespace {

TEST(Protocol, SmokeEquivalence) {
  Directory dir;
  ClusterOptions opts;
  opts.pool_size = 5;
  opts.key_seed = 3;
  Cluster cluster(opts, dir);
  Designer designer(cluster.designer_transport(), gen_keypair_from_seed(99));
  TrainingConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 11;
  Dataset data = make_synthetic(256, 784, 10, 5);
  auto model = mnist_mlp_model();
  Deployment d = designer.provision(dir.list(), model, ProvisionPlan{}, cfg);
  designer.initialize_model(d);
  RunMetrics m = designer.train(d, data);
  BaselineRun base = run_baseline(model, data, cfg);
  ASSERT_EQ(m.iteration_losses.size(), base.metrics.iteration_losses.size());
  for (size_t i = 0; i < m.iteration_losses.size(); ++i) {
    EXPECT_EQ(m.iteration_losses[i], base.metrics.iteration_losses[i]) << i;
  }
  for (size_t s = 0; s < d.cascade.size(); ++s) {
    const LayerState* node_layer = cluster.node(d.cascade.entries[s].node_id).layer();
    const LayerState& b = base.model.layers[*d.model_index[s]];
    ASSERT_EQ(node_layer->params.size(), b.params.size());
    for (size_t k = 0; k < b.params.size(); ++k) {
      EXPECT_TRUE(node_layer->params[k].weight.bitwise_equal(b.params[k].weight));
      EXPECT_TRUE(node_layer->params[k].bias.bitwise_equal(b.params[k].bias));
    }
  }
  EXPECT_EQ(designer.predict(d, data.images), baseline_predict(base.model, data.images));
}

}  // namespace
}  // namespace mixnn
