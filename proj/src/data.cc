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

#include "mixnn/data.h"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "mixnn/bytes.h"
#include "mixnn/errors.h"
#include "mixnn/nn.h"

namespace mixnn {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

Dataset Dataset::slice(size_t begin, size_t count) const {
  begin = std::min(begin, size());
  count = std::min(count, size() - begin);
  std::vector<size_t> rows(count);
  std::iota(rows.begin(), rows.end(), begin);
  return Dataset{gather_rows(images, rows), gather_labels(labels, rows)};
}

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path, std::optional<size_t> limit) {
  const Bytes img = read_file(images_path);
  const Bytes lab = read_file(labels_path);
  try {
    ByteReader ri(img);
    if (ri.u32() != kImageMagic) throw DecodeError(images_path.string() + ": bad image magic");
    const size_t n_img = ri.u32();
    const size_t rows = ri.u32();
    const size_t cols = ri.u32();

    ByteReader rl(lab);
    if (rl.u32() != kLabelMagic) throw DecodeError(labels_path.string() + ": bad label magic");
    const size_t n_lab = rl.u32();
    if (n_img != n_lab) {
      throw DecodeError("image count " + std::to_string(n_img) + " != label count " +
                        std::to_string(n_lab));
    }
    const size_t n = limit ? std::min(*limit, n_img) : n_img;
    const size_t features = rows * cols;
    if (n == 0 || features == 0) throw DecodeError("empty IDX data");

    auto pixels = ri.raw(n * features);
    auto raw_labels = rl.raw(n);
    std::vector<float> values(n * features);
    for (size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(pixels[i]) / 255.0f;
    Dataset d{Matrix(n, features, std::move(values)), {}};
    d.labels.reserve(n);
    for (uint8_t v : raw_labels) {
      if (v > 9) throw DecodeError("label " + std::to_string(v) + " outside 0..9");
      d.labels.push_back(v);
    }
    return d;
  } catch (const DecodeError& e) {
    throw DecodeError(std::string("MNIST: ") + e.what());
  }
}

Dataset make_synthetic(size_t examples, size_t features, size_t classes, uint64_t seed) {
  if (examples == 0 || features == 0 || classes < 2) {
    throw ConfigError("synthetic data needs examples > 0, features > 0, classes >= 2");
  }
  std::mt19937_64 rng(derive_seed(seed, 0xda7a));
  std::uniform_real_distribution<float> centre(0.2f, 0.8f);
  std::normal_distribution<float> noise(0.0f, 0.15f);
  std::vector<std::vector<float>> centres(classes, std::vector<float>(features));
  for (auto& c : centres)
    for (float& v : c) v = centre(rng);

  Dataset d{Matrix(examples, features, 0.0f), std::vector<int32_t>(examples)};
  for (size_t i = 0; i < examples; ++i) {
    const size_t k = i % classes;
    d.labels[i] = static_cast<int32_t>(k);
    for (size_t j = 0; j < features; ++j) {
      d.images(i, j) = std::clamp(centres[k][j] + noise(rng), 0.0f, 1.0f);
    }
  }
  return d;
}

Matrix gather_rows(const Matrix& m, std::span<const size_t> rows) {
  Matrix out(rows.size(), m.cols(), 0.0f);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw IndexError("row index out of range");
    auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), &out(i, 0));
  }
  return out;
}

std::vector<int32_t> gather_labels(std::span<const int32_t> labels, std::span<const size_t> rows) {
  std::vector<int32_t> out;
  out.reserve(rows.size());
  for (size_t r : rows) {
    if (r >= labels.size()) throw IndexError("label index out of range");
    out.push_back(labels[r]);
  }
  return out;
}

std::vector<size_t> epoch_order(size_t examples, uint64_t seed, size_t epoch, bool shuffle) {
  std::vector<size_t> order(examples);
  std::iota(order.begin(), order.end(), size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(derive_seed(seed, 0x5000 + epoch));
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

std::vector<std::span<const size_t>> split_batches(std::span<const size_t> order,
                                                   size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::span<const size_t>> out;
  for (size_t i = 0; i < order.size(); i += batch_size) {
    out.push_back(order.subspan(i, std::min(batch_size, order.size() - i)));
  }
  return out;
}

}  // namespace mixnn
