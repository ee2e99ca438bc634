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

// Dense neural-network kernel shared by every remote layer and by the
// single-process baseline.
//
// All reductions run in a fixed index order and no call reassociates float
// arithmetic, so two processes that feed the same bytes through the same
// sequence of calls obtain bitwise-identical results.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixnn/matrix.h"

namespace mixnn {

enum class PrimitiveKind : uint8_t {
  kLinear = 0,
  kReLU = 1,
  kLogSoftmax = 2,
  kNLLLoss = 3,
  kIdentity = 4,
};

std::string to_string(PrimitiveKind kind);
PrimitiveKind primitive_kind_from_string(const std::string& name);

struct PrimitiveOp {
  PrimitiveKind kind = PrimitiveKind::kIdentity;
  // Only meaningful for kLinear.
  uint32_t in_dim = 0;
  uint32_t out_dim = 0;

  static PrimitiveOp linear(uint32_t in, uint32_t out) {
    return {PrimitiveKind::kLinear, in, out};
  }
  static PrimitiveOp relu() { return {PrimitiveKind::kReLU}; }
  static PrimitiveOp log_softmax() { return {PrimitiveKind::kLogSoftmax}; }
  static PrimitiveOp nll_loss() { return {PrimitiveKind::kNLLLoss}; }
  static PrimitiveOp identity() { return {PrimitiveKind::kIdentity}; }

  bool operator==(const PrimitiveOp&) const = default;
};

// The operation chain one server runs. Several adjacent primitives may be
// composed on one node.
struct LayerSpec {
  std::vector<PrimitiveOp> ops;

  bool ends_with_loss() const {
    return !ops.empty() && ops.back().kind == PrimitiveKind::kNLLLoss;
  }
  bool has_parameters() const;
  std::string describe() const;

  bool operator==(const LayerSpec&) const = default;
};

// Throws ShapeError when Linear dimensions do not chain, or when NLLLoss
// appears anywhere but last.
void validate_chain(const LayerSpec& spec);

// Validates a whole model: every layer chain, the dimensions across layer
// boundaries, and that only the final layer carries the loss.
void validate_model(std::span<const LayerSpec> model);

// The five-server MLP used in the MNIST experiment.
std::vector<LayerSpec> mnist_mlp_model();

struct LinearParams {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out
};

struct OptimizerState {
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  // One buffer per parameter matrix, ordered W0, b0, W1, b1, ...
  std::vector<Matrix> velocity;
};

// What one primitive remembers between its forward and backward pass.
struct LayerCache {
  std::optional<Matrix> input;
  std::optional<Matrix> pre_activation;
  std::optional<Matrix> output;
  std::optional<std::vector<int32_t>> labels;
};

// ---- primitives -----------------------------------------------------------

// Y[r][c] = sum_k X[r][k] * W[c][k] + b[0][c]
Matrix linear_forward(const Matrix& weight, const Matrix& bias, const Matrix& input);

struct LinearGrads {
  Matrix weight;
  Matrix bias;
  Matrix input;  // empty when not requested
};

// dW = dY^T X, db = column sums of dY, dX = dY W. Throws ProtocolError when
// the cache has no input.
LinearGrads linear_backward(const LayerCache& cache, const Matrix& weight,
                            const Matrix& grad_output, bool need_input_grad = true);

Matrix relu_forward(const Matrix& input);
// The derivative at exactly zero is zero.
Matrix relu_backward(const Matrix& pre_activation, const Matrix& grad_output);

Matrix logsoftmax_forward(const Matrix& input);
Matrix logsoftmax_backward(const Matrix& output, const Matrix& grad_output);

struct NllResult {
  float loss = 0.0f;
  Matrix grad;  // d loss / d logp, already divided by the batch size
};

NllResult nll_loss(const Matrix& logp, std::span<const int32_t> targets);

// v <- momentum * v + g; p <- p - lr * v
void sgd_momentum_step(Matrix& param, const Matrix& grad, Matrix& velocity,
                       float learning_rate, float momentum);

// ---- layers ---------------------------------------------------------------

enum class Mode {
  kTrain,  // populate the cache, evaluate the loss
  kEval,   // read-only: no cache, NLLLoss passes log-probabilities through
};

struct LayerState {
  LayerSpec spec;
  std::vector<LinearParams> params;  // one per Linear primitive, chain order
  OptimizerState optimizer;
  std::vector<LayerCache> cache;     // one per primitive while valid
  bool cache_valid = false;
};

// Mixes a base seed with an index (splitmix64), used to give every model
// layer its own initialization stream.
uint64_t derive_seed(uint64_t base, uint64_t index);

// Allocates parameters drawn uniformly from [-1/sqrt(in), 1/sqrt(in)] and
// zeroed velocities.
LayerState make_layer(const LayerSpec& spec, uint64_t seed, float learning_rate,
                      float momentum);

// Applies each primitive in order. In kTrain mode the cache is rebuilt and,
// if the chain ends in NLLLoss, `labels` are required and the result is the
// 1x1 loss.
Matrix layer_forward(LayerState& state, const Matrix& input, Mode mode,
                     std::span<const int32_t> labels = {});

// Backpropagates `grad_output` (use [[1]] for a loss-terminated chain),
// steps every parameter, clears the cache, and returns the gradient with
// respect to the layer input when requested.
std::optional<Matrix> layer_backward(LayerState& state, const Matrix& grad_output,
                                     bool need_input_grad);

// Argmax per row; ties resolve to the lowest index.
std::vector<int32_t> argmax_rows(const Matrix& m);

}  // namespace mixnn
