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
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mixnn {

struct EpochMetrics {
  size_t epoch = 0;  // 1-based
  double loss_mean = 0.0;
  std::optional<double> accuracy;  // absent when no evaluation set was given
  double wall_seconds = 0.0;       // informative only
};

struct CrashEvent {
  uint64_t iteration = 0;  // global, 1-based
  size_t epoch = 0;
  std::string phase;
  double at_seconds = 0.0;  // transport clock
  std::string message;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  std::vector<float> iteration_losses;
  std::vector<CrashEvent> crashes;
  double total_wall_seconds = 0.0;

  bool crashed() const { return !crashes.empty(); }
};

// CSV with the fixed header epoch,loss_mean,accuracy,wall_seconds followed
// by "# key=value" summary lines.
void write_metrics_csv(std::ostream& out, const RunMetrics& metrics);
void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics);
// Reads the epoch rows back; summary lines are skipped.
std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path);

struct ComparisonReport {
  std::vector<double> accuracy_deltas;  // |a - b| per epoch
  double max_delta = 0.0;
  double threshold = 0.001;
  bool passed = false;
};

// Throws ConfigError when the epoch counts differ or an accuracy is missing.
ComparisonReport compare_metrics(const std::vector<EpochMetrics>& a,
                                 const std::vector<EpochMetrics>& b, double threshold = 0.001);
void print_report(std::ostream& out, const ComparisonReport& report);

}  // namespace mixnn
