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

#include "mixnn/nn.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "mixnn/errors.h"

namespace mixnn {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }
}

// Tracks the feature width flowing through a chain. Unknown until the first
// Linear fixes it.
struct WidthTracker {
  std::optional<uint32_t> width;

  void apply(const PrimitiveOp& op, const std::string& where) {
    if (op.kind == PrimitiveKind::kLinear) {
      if (op.in_dim == 0 || op.out_dim == 0) {
        throw ShapeError(where + ": Linear dimensions must be positive");
      }
      if (width && *width != op.in_dim) {
        throw ShapeError(where + ": Linear expects width " + std::to_string(op.in_dim) +
                         " but receives " + std::to_string(*width));
      }
      width = op.out_dim;
    }
  }
};

}  // namespace

std::string to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::kLinear: return "linear";
    case PrimitiveKind::kReLU: return "relu";
    case PrimitiveKind::kLogSoftmax: return "logsoftmax";
    case PrimitiveKind::kNLLLoss: return "nllloss";
    case PrimitiveKind::kIdentity: return "identity";
  }
  return "unknown";
}

PrimitiveKind primitive_kind_from_string(const std::string& name) {
  for (auto k : {PrimitiveKind::kLinear, PrimitiveKind::kReLU, PrimitiveKind::kLogSoftmax,
                 PrimitiveKind::kNLLLoss, PrimitiveKind::kIdentity}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown primitive '" + name + "'");
}

bool LayerSpec::has_parameters() const {
  return std::any_of(ops.begin(), ops.end(),
                     [](const PrimitiveOp& op) { return op.kind == PrimitiveKind::kLinear; });
}

std::string LayerSpec::describe() const {
  std::string out;
  for (const auto& op : ops) {
    if (!out.empty()) out += "+";
    out += to_string(op.kind);
    if (op.kind == PrimitiveKind::kLinear) {
      out += "(" + std::to_string(op.in_dim) + "," + std::to_string(op.out_dim) + ")";
    }
  }
  return out.empty() ? "empty" : out;
}

void validate_chain(const LayerSpec& spec) {
  if (spec.ops.empty()) throw ShapeError("layer chain is empty");
  WidthTracker tracker;
  for (size_t i = 0; i < spec.ops.size(); ++i) {
    if (spec.ops[i].kind == PrimitiveKind::kNLLLoss && i + 1 != spec.ops.size()) {
      throw ShapeError("NLLLoss must be the last primitive of a chain");
    }
    tracker.apply(spec.ops[i], "primitive " + std::to_string(i));
  }
}

void validate_model(std::span<const LayerSpec> model) {
  if (model.empty()) throw ShapeError("model has no layers");
  WidthTracker tracker;
  for (size_t l = 0; l < model.size(); ++l) {
    validate_chain(model[l]);
    if (model[l].ends_with_loss() && l + 1 != model.size()) {
      throw ShapeError("only the final layer may end in NLLLoss");
    }
    for (const auto& op : model[l].ops) tracker.apply(op, "layer " + std::to_string(l + 1));
  }
  if (!model.back().ends_with_loss()) {
    throw ShapeError("the final layer must end in NLLLoss");
  }
}

std::vector<LayerSpec> mnist_mlp_model() {
  return {
      LayerSpec{{PrimitiveOp::linear(784, 128), PrimitiveOp::relu()}},
      LayerSpec{{PrimitiveOp::linear(128, 64), PrimitiveOp::relu()}},
      LayerSpec{{PrimitiveOp::linear(64, 10)}},
      LayerSpec{{PrimitiveOp::log_softmax()}},
      LayerSpec{{PrimitiveOp::nll_loss()}},
  };
}

Matrix linear_forward(const Matrix& weight, const Matrix& bias, const Matrix& input) {
  const size_t out = weight.rows();
  const size_t in = weight.cols();
  if (input.cols() != in) {
    throw ShapeError("linear_forward: input " + input.shape() + " incompatible with weight " +
                     weight.shape());
  }
  if (bias.rows() != 1 || bias.cols() != out) {
    throw ShapeError("linear_forward: bias " + bias.shape() + " incompatible with weight " +
                     weight.shape());
  }
  // Accumulating column-wise keeps each output's sum in ascending k order
  // while letting the compiler vectorize across outputs.
  const Matrix wt = weight.transposed();
  Matrix y(input.rows(), out);
  std::vector<float> acc(out);
  for (size_t r = 0; r < input.rows(); ++r) {
    std::fill(acc.begin(), acc.end(), 0.0f);
    const auto x = input.row(r);
    for (size_t k = 0; k < in; ++k) {
      const float xk = x[k];
      const auto w = wt.row(k);
      for (size_t c = 0; c < out; ++c) acc[c] += xk * w[c];
    }
    auto yr = y.row(r);
    for (size_t c = 0; c < out; ++c) yr[c] = acc[c] + bias(0, c);
  }
  return y;
}

LinearGrads linear_backward(const LayerCache& cache, const Matrix& weight,
                            const Matrix& grad_output, bool need_input_grad) {
  if (!cache.input) throw ProtocolError("linear_backward: no cached forward input");
  const Matrix& x = *cache.input;
  const size_t out = weight.rows();
  const size_t in = weight.cols();
  if (x.cols() != in || grad_output.cols() != out || grad_output.rows() != x.rows()) {
    throw ShapeError("linear_backward: input " + x.shape() + ", weight " + weight.shape() +
                     ", grad " + grad_output.shape());
  }
  LinearGrads g{Matrix(out, in), Matrix(1, out), Matrix()};
  for (size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    const auto dy = grad_output.row(r);
    for (size_t c = 0; c < out; ++c) {
      const float d = dy[c];
      auto dw = g.weight.row(c);
      for (size_t k = 0; k < in; ++k) dw[k] += d * xr[k];
      g.bias(0, c) += d;
    }
  }
  if (need_input_grad) {
    g.input = Matrix(x.rows(), in);
    for (size_t r = 0; r < x.rows(); ++r) {
      const auto dy = grad_output.row(r);
      auto dx = g.input.row(r);
      for (size_t c = 0; c < out; ++c) {
        const float d = dy[c];
        const auto w = weight.row(c);
        for (size_t k = 0; k < in; ++k) dx[k] += d * w[k];
      }
    }
  }
  return g;
}

Matrix relu_forward(const Matrix& input) {
  Matrix y = input;
  for (float& v : y.values()) v = v > 0.0f ? v : 0.0f;
  return y;
}

Matrix relu_backward(const Matrix& pre_activation, const Matrix& grad_output) {
  require_same_shape(pre_activation, grad_output, "relu_backward");
  Matrix dx(grad_output.rows(), grad_output.cols());
  const auto pre = pre_activation.values();
  const auto dy = grad_output.values();
  auto out = dx.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pre[i] > 0.0f ? dy[i] : 0.0f;
  return dx;
}

Matrix logsoftmax_forward(const Matrix& input) {
  if (input.cols() == 0) throw ShapeError("logsoftmax_forward: zero columns");
  Matrix y(input.rows(), input.cols());
  for (size_t r = 0; r < input.rows(); ++r) {
    const auto x = input.row(r);
    const float m = *std::max_element(x.begin(), x.end());
    float sum = 0.0f;
    for (float v : x) sum += std::exp(v - m);
    const float lse = std::log(sum);
    auto yr = y.row(r);
    for (size_t j = 0; j < x.size(); ++j) yr[j] = (x[j] - m) - lse;
  }
  return y;
}

Matrix logsoftmax_backward(const Matrix& output, const Matrix& grad_output) {
  require_same_shape(output, grad_output, "logsoftmax_backward");
  Matrix dx(output.rows(), output.cols());
  for (size_t r = 0; r < output.rows(); ++r) {
    const auto dy = grad_output.row(r);
    const auto y = output.row(r);
    float total = 0.0f;
    for (float v : dy) total += v;
    auto d = dx.row(r);
    for (size_t j = 0; j < d.size(); ++j) d[j] = dy[j] - std::exp(y[j]) * total;
  }
  return dx;
}

NllResult nll_loss(const Matrix& logp, std::span<const int32_t> targets) {
  if (targets.size() != logp.rows()) {
    throw ShapeError("nll_loss: " + std::to_string(targets.size()) + " targets for " +
                     logp.shape() + " log-probabilities");
  }
  if (logp.rows() == 0) throw ShapeError("nll_loss: empty batch");
  const float scale = -1.0f / static_cast<float>(logp.rows());
  NllResult res{0.0f, Matrix(logp.rows(), logp.cols())};
  float sum = 0.0f;
  for (size_t r = 0; r < logp.rows(); ++r) {
    const int32_t t = targets[r];
    if (t < 0 || static_cast<size_t>(t) >= logp.cols()) {
      throw IndexError("nll_loss: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(logp.cols()) + ")");
    }
    sum += logp(r, t);
    res.grad(r, t) = scale;
  }
  res.loss = sum * scale;
  return res;
}

void sgd_momentum_step(Matrix& param, const Matrix& grad, Matrix& velocity,
                       float learning_rate, float momentum) {
  require_same_shape(param, grad, "sgd_momentum_step");
  require_same_shape(param, velocity, "sgd_momentum_step");
  auto p = param.values();
  auto v = velocity.values();
  const auto g = grad.values();
  for (size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] = p[i] - learning_rate * v[i];
  }
}

uint64_t derive_seed(uint64_t base, uint64_t index) {
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

LayerState make_layer(const LayerSpec& spec, uint64_t seed, float learning_rate,
                      float momentum) {
  validate_chain(spec);
  LayerState state;
  state.spec = spec;
  state.optimizer.learning_rate = learning_rate;
  state.optimizer.momentum = momentum;
  std::mt19937_64 gen(seed);
  // 24 random bits -> [0, 1); spelled out so the stream does not depend on
  // the standard library's distribution implementation.
  auto uniform = [&gen](float bound) {
    const float u = static_cast<float>(gen() >> 40) * 0x1.0p-24f;
    return bound * (2.0f * u - 1.0f);
  };
  for (const auto& op : spec.ops) {
    if (op.kind != PrimitiveKind::kLinear) continue;
    const float bound = 1.0f / std::sqrt(static_cast<float>(op.in_dim));
    LinearParams p{Matrix(op.out_dim, op.in_dim), Matrix(1, op.out_dim)};
    for (float& w : p.weight.values()) w = uniform(bound);
    for (float& b : p.bias.values()) b = uniform(bound);
    state.optimizer.velocity.emplace_back(op.out_dim, op.in_dim);
    state.optimizer.velocity.emplace_back(1, op.out_dim);
    state.params.push_back(std::move(p));
  }
  return state;
}

Matrix layer_forward(LayerState& state, const Matrix& input, Mode mode,
                     std::span<const int32_t> labels) {
  const bool train = mode == Mode::kTrain;
  if (train) {
    state.cache.assign(state.spec.ops.size(), LayerCache{});
    state.cache_valid = false;
  }
  Matrix x = input;
  size_t linear_index = 0;
  for (size_t i = 0; i < state.spec.ops.size(); ++i) {
    const PrimitiveOp& op = state.spec.ops[i];
    LayerCache* cache = train ? &state.cache[i] : nullptr;
    switch (op.kind) {
      case PrimitiveKind::kLinear: {
        const LinearParams& p = state.params.at(linear_index++);
        Matrix y = linear_forward(p.weight, p.bias, x);
        if (cache) cache->input = std::move(x);
        x = std::move(y);
        break;
      }
      case PrimitiveKind::kReLU: {
        Matrix y = relu_forward(x);
        if (cache) cache->pre_activation = std::move(x);
        x = std::move(y);
        break;
      }
      case PrimitiveKind::kLogSoftmax: {
        x = logsoftmax_forward(x);
        if (cache) cache->output = x;
        break;
      }
      case PrimitiveKind::kNLLLoss: {
        if (!train) break;
        NllResult res = nll_loss(x, labels);
        cache->labels = std::vector<int32_t>(labels.begin(), labels.end());
        cache->output = std::move(res.grad);
        x = Matrix(1, 1, res.loss);
        break;
      }
      case PrimitiveKind::kIdentity:
        break;
    }
  }
  if (train) state.cache_valid = true;
  return x;
}

std::optional<Matrix> layer_backward(LayerState& state, const Matrix& grad_output,
                                     bool need_input_grad) {
  if (!state.cache_valid) {
    throw ProtocolError("backward pass without a preceding forward pass");
  }
  Matrix grad = grad_output;
  size_t linear_index = state.params.size();
  const size_t n = state.spec.ops.size();
  for (size_t step = 0; step < n; ++step) {
    const size_t i = n - 1 - step;
    const bool first = i == 0;
    const PrimitiveOp& op = state.spec.ops[i];
    LayerCache& cache = state.cache[i];
    switch (op.kind) {
      case PrimitiveKind::kLinear: {
        --linear_index;
        LinearParams& p = state.params[linear_index];
        LinearGrads g = linear_backward(cache, p.weight, grad, !first || need_input_grad);
        auto& opt = state.optimizer;
        sgd_momentum_step(p.weight, g.weight, opt.velocity[2 * linear_index], opt.learning_rate,
                          opt.momentum);
        sgd_momentum_step(p.bias, g.bias, opt.velocity[2 * linear_index + 1],
                          opt.learning_rate, opt.momentum);
        grad = std::move(g.input);
        break;
      }
      case PrimitiveKind::kReLU:
        grad = relu_backward(*cache.pre_activation, grad);
        break;
      case PrimitiveKind::kLogSoftmax:
        grad = logsoftmax_backward(*cache.output, grad);
        break;
      case PrimitiveKind::kNLLLoss: {
        if (grad.rows() != 1 || grad.cols() != 1) {
          throw ShapeError("loss gradient must be 1x1, got " + grad.shape());
        }
        const float upstream = grad(0, 0);
        grad = *cache.output;
        for (float& v : grad.values()) v *= upstream;
        break;
      }
      case PrimitiveKind::kIdentity:
        break;
    }
  }
  state.cache.clear();
  state.cache_valid = false;
  if (!need_input_grad) return std::nullopt;
  return grad;
}

std::vector<int32_t> argmax_rows(const Matrix& m) {
  std::vector<int32_t> out(m.rows(), 0);
  for (size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    size_t best = 0;
    for (size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[r] = static_cast<int32_t>(best);
  }
  return out;
}

}  // namespace mixnn
