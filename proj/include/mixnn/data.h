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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mixnn/matrix.h"

namespace mixnn {

struct Dataset {
  Matrix images;  // N x features, values in [0, 1] for MNIST
  std::vector<int32_t> labels;

  size_t size() const { return labels.size(); }
  size_t features() const { return images.cols(); }
  // Rows [begin, begin + count), clamped to the end.
  Dataset slice(size_t begin, size_t count) const;
};

// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
// Keeps the first `limit` examples in file order; pixels become raw / 255.
// Throws DecodeError on bad magic, truncation or a count mismatch and
// IoError when a file cannot be read.
Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path,
                       std::optional<size_t> limit = std::nullopt);

// Offline stand-in for MNIST: one Gaussian blob per class around a random
// centre, clamped to [0, 1].
Dataset make_synthetic(size_t examples = 512, size_t features = 784, size_t classes = 2,
                       uint64_t seed = 7);

Matrix gather_rows(const Matrix& m, std::span<const size_t> rows);
std::vector<int32_t> gather_labels(std::span<const int32_t> labels, std::span<const size_t> rows);

// Example order for one epoch (epochs count from 1). Identity order when
// `shuffle` is false.
std::vector<size_t> epoch_order(size_t examples, uint64_t seed, size_t epoch, bool shuffle);

// Contiguous batches over `order`; the last one may be short.
std::vector<std::span<const size_t>> split_batches(std::span<const size_t> order,
                                                   size_t batch_size);

}  // namespace mixnn
