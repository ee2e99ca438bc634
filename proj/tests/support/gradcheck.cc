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

#include "support/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "mixnn/nn.h"

namespace mixnn::testing {
namespace {

// Row-major double matrix for the reference path.
struct Ref {
  size_t rows = 0, cols = 0;
  std::vector<double> v;

  Ref() = default;
  Ref(size_t r, size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& at(size_t r, size_t c) { return v[r * cols + c]; }
  double at(size_t r, size_t c) const { return v[r * cols + c]; }
};

Ref to_ref(const Matrix& m) {
  Ref out(m.rows(), m.cols());
  for (size_t i = 0; i < m.size(); ++i) out.v[i] = m.values()[i];
  return out;
}

Ref ref_linear(const Ref& w, const Ref& b, const Ref& x) {
  Ref y(x.rows, w.rows);
  for (size_t r = 0; r < x.rows; ++r) {
    for (size_t c = 0; c < w.rows; ++c) {
      double s = b.at(0, c);
      for (size_t k = 0; k < x.cols; ++k) s += x.at(r, k) * w.at(c, k);
      y.at(r, c) = s;
    }
  }
  return y;
}

Ref ref_relu(const Ref& x) {
  Ref y = x;
  for (double& e : y.v) e = e > 0.0 ? e : 0.0;
  return y;
}

Ref ref_logsoftmax(const Ref& x) {
  Ref y(x.rows, x.cols);
  for (size_t r = 0; r < x.rows; ++r) {
    double mx = x.at(r, 0);
    for (size_t c = 1; c < x.cols; ++c) mx = std::max(mx, x.at(r, c));
    double z = 0.0;
    for (size_t c = 0; c < x.cols; ++c) z += std::exp(x.at(r, c) - mx);
    const double lz = std::log(z);
    for (size_t c = 0; c < x.cols; ++c) y.at(r, c) = x.at(r, c) - mx - lz;
  }
  return y;
}

double ref_nll(const Ref& logp, const std::vector<int32_t>& t) {
  double s = 0.0;
  for (size_t r = 0; r < logp.rows; ++r) s -= logp.at(r, static_cast<size_t>(t[r]));
  return s / static_cast<double>(logp.rows);
}

double weighted_sum(const Ref& weights, const Ref& y) {
  double s = 0.0;
  for (size_t i = 0; i < y.v.size(); ++i) s += weights.v[i] * y.v[i];
  return s;
}

class Sampler {
 public:
  explicit Sampler(uint64_t seed) : gen_(seed) {}

  size_t dim() { return std::uniform_int_distribution<size_t>(1, 8)(gen_); }
  float value(float lo = -1.0f, float hi = 1.0f) {
    return std::uniform_real_distribution<float>(lo, hi)(gen_);
  }
  Matrix matrix(size_t r, size_t c, float lo = -1.0f, float hi = 1.0f) {
    Matrix m(r, c);
    for (float& e : m.values()) e = value(lo, hi);
    return m;
  }
  // Entries bounded away from the ReLU kink by more than the FD step.
  Matrix off_kink(size_t r, size_t c) {
    Matrix m(r, c);
    for (float& e : m.values()) {
      do {
        e = value();
      } while (std::fabs(e) < 0.05f);
    }
    return m;
  }
  std::vector<int32_t> labels(size_t n, size_t classes) {
    std::vector<int32_t> out(n);
    std::uniform_int_distribution<int32_t> d(0, static_cast<int32_t>(classes) - 1);
    for (auto& l : out) l = d(gen_);
    return out;
  }

 private:
  std::mt19937_64 gen_;
};

// Compares `analytic` with central differences of `f` over every entry of
// `point` (perturbed in place, in double precision).
void compare(GradCheckResult& result, const std::string& what, Ref& point, const Matrix& analytic,
             const std::function<double()>& f) {
  for (size_t i = 0; i < point.v.size(); ++i) {
    const double saved = point.v[i];
    point.v[i] = saved + kFdStep;
    const double up = f();
    point.v[i] = saved - kFdStep;
    const double down = f();
    point.v[i] = saved;
    const double numeric = (up - down) / (2.0 * kFdStep);
    const double a = analytic.values()[i];
    const double err = relative_error(a, numeric);
    ++result.entries;
    if (err > result.max_error || result.worst.empty()) {
      result.max_error = std::max(result.max_error, err);
      std::ostringstream os;
      os << what << "[" << i << "] analytic=" << a << " numeric=" << numeric;
      result.worst = os.str();
    }
  }
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), kRelativeFloor});
  return std::fabs(analytic - numeric) / denom;
}

GradCheckResult check_linear(uint64_t seed, size_t instances) {
  GradCheckResult res;
  res.primitive = "linear";
  Sampler s(seed);
  for (size_t n = 0; n < instances; ++n) {
    const size_t batch = s.dim(), in = s.dim(), out = s.dim();
    const Matrix w = s.matrix(out, in), b = s.matrix(1, out), x = s.matrix(batch, in);
    const Matrix dy = s.matrix(batch, out);

    LayerCache cache;
    cache.input = x;
    const LinearGrads g = linear_backward(cache, w, dy, true);

    Ref rw = to_ref(w), rb = to_ref(b), rx = to_ref(x);
    const Ref rdy = to_ref(dy);
    auto f = [&] { return weighted_sum(rdy, ref_linear(rw, rb, rx)); };
    compare(res, "dW", rw, g.weight, f);
    compare(res, "db", rb, g.bias, f);
    compare(res, "dX", rx, g.input, f);
    ++res.instances;
  }
  return res;
}

GradCheckResult check_relu(uint64_t seed, size_t instances) {
  GradCheckResult res;
  res.primitive = "relu";
  Sampler s(seed);
  for (size_t n = 0; n < instances; ++n) {
    const size_t rows = s.dim(), cols = s.dim();
    const Matrix x = s.off_kink(rows, cols), dy = s.matrix(rows, cols);
    const Matrix dx = relu_backward(x, dy);
    Ref rx = to_ref(x);
    const Ref rdy = to_ref(dy);
    compare(res, "dX", rx, dx, [&] { return weighted_sum(rdy, ref_relu(rx)); });
    ++res.instances;
  }
  return res;
}

GradCheckResult check_logsoftmax(uint64_t seed, size_t instances) {
  GradCheckResult res;
  res.primitive = "logsoftmax";
  Sampler s(seed);
  for (size_t n = 0; n < instances; ++n) {
    const size_t rows = s.dim(), cols = s.dim();
    const Matrix x = s.matrix(rows, cols, -3.0f, 3.0f), dy = s.matrix(rows, cols);
    const Matrix y = logsoftmax_forward(x);
    const Matrix dx = logsoftmax_backward(y, dy);
    Ref rx = to_ref(x);
    const Ref rdy = to_ref(dy);
    compare(res, "dX", rx, dx, [&] { return weighted_sum(rdy, ref_logsoftmax(rx)); });
    ++res.instances;
  }
  return res;
}

GradCheckResult check_nll(uint64_t seed, size_t instances) {
  GradCheckResult res;
  res.primitive = "nllloss";
  Sampler s(seed);
  for (size_t n = 0; n < instances; ++n) {
    const size_t rows = s.dim(), cols = s.dim();
    const Matrix logp = s.matrix(rows, cols, -4.0f, 0.0f);
    const auto t = s.labels(rows, cols);
    const NllResult r = nll_loss(logp, t);
    Ref rl = to_ref(logp);
    compare(res, "dlogp", rl, r.grad, [&] { return ref_nll(rl, t); });
    ++res.instances;
  }
  return res;
}

GradCheckResult check_layer_chain(uint64_t seed, size_t instances) {
  GradCheckResult res;
  res.primitive = "layer chain";
  Sampler s(seed);
  size_t attempts = 0;
  while (res.instances < instances) {
    ++attempts;
    const size_t batch = s.dim(), a = s.dim(), hidden = s.dim(), k = s.dim();
    LayerSpec spec{{PrimitiveOp::linear(a, hidden), PrimitiveOp::relu(),
                    PrimitiveOp::linear(hidden, k), PrimitiveOp::log_softmax(),
                    PrimitiveOp::nll_loss()}};
    LayerState state = make_layer(spec, seed * 1000003 + attempts, 1.0f, 0.0f);
    const Matrix x = s.matrix(batch, a);
    const auto t = s.labels(batch, k);

    Ref w1 = to_ref(state.params[0].weight), b1 = to_ref(state.params[0].bias);
    Ref w2 = to_ref(state.params[1].weight), b2 = to_ref(state.params[1].bias);
    Ref rx = to_ref(x);

    // Skip draws whose hidden pre-activations sit near the kink.
    const Ref pre = ref_linear(w1, b1, rx);
    if (std::any_of(pre.v.begin(), pre.v.end(), [](double e) { return std::fabs(e) < 0.05; })) {
      continue;
    }

    const std::vector<Matrix> before = {state.params[0].weight, state.params[0].bias,
                                        state.params[1].weight, state.params[1].bias};
    layer_forward(state, x, Mode::kTrain, t);
    const Matrix dx = *layer_backward(state, Matrix{{1.0f}}, true);
    // With rate 1 and no momentum, old - new is the gradient.
    const std::vector<Matrix> after = {state.params[0].weight, state.params[0].bias,
                                       state.params[1].weight, state.params[1].bias};
    std::vector<Matrix> grads;
    for (size_t i = 0; i < before.size(); ++i) {
      Matrix g(before[i].rows(), before[i].cols());
      for (size_t j = 0; j < g.size(); ++j) {
        g.values()[j] = before[i].values()[j] - after[i].values()[j];
      }
      grads.push_back(std::move(g));
    }

    auto f = [&] {
      return ref_nll(ref_logsoftmax(ref_linear(w2, b2, ref_relu(ref_linear(w1, b1, rx)))), t);
    };
    compare(res, "dW1", w1, grads[0], f);
    compare(res, "db1", b1, grads[1], f);
    compare(res, "dW2", w2, grads[2], f);
    compare(res, "db2", b2, grads[3], f);
    compare(res, "dX", rx, dx, f);
    ++res.instances;
  }
  return res;
}

std::vector<GradCheckResult> run_gradient_suite(uint64_t seed, size_t instances) {
  return {check_linear(seed, instances), check_relu(seed + 1, instances),
          check_logsoftmax(seed + 2, instances), check_nll(seed + 3, instances),
          check_layer_chain(seed + 4, instances)};
}

}  // namespace mixnn::testing
