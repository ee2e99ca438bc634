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

#include "mixnn/metrics.h"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mixnn/errors.h"

namespace mixnn {

namespace {

constexpr const char* kHeader = "epoch,loss_mean,accuracy,wall_seconds";

double parse_double(const std::string& field, const std::string& where) {
  try {
    size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw DecodeError(where + ": '" + field + "' is not a number");
  }
}

}  // namespace

void write_metrics_csv(std::ostream& out, const RunMetrics& metrics) {
  out << kHeader << '\n';
  out << std::setprecision(9);
  for (const auto& e : metrics.epochs) {
    out << e.epoch << ',' << e.loss_mean << ',';
    if (e.accuracy) out << *e.accuracy;
    out << ',' << e.wall_seconds << '\n';
  }
  out << "# total_wall_seconds=" << metrics.total_wall_seconds << '\n';
  out << "# iterations=" << metrics.iteration_losses.size() << '\n';
  out << "# crashes=" << metrics.crashes.size() << '\n';
  for (const auto& c : metrics.crashes) {
    out << "# crash iteration=" << c.iteration << " epoch=" << c.epoch << " phase=" << c.phase
        << " at_seconds=" << c.at_seconds << '\n';
  }
}

void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_metrics_csv(out, metrics);
  if (!out) throw IoError("cannot write " + path.string());
}

std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw DecodeError(path.string() + ": expected header '" + std::string(kHeader) + "'");
  }
  std::vector<EpochMetrics> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() != 4) throw DecodeError(where + ": expected 4 fields");
    EpochMetrics e;
    e.epoch = static_cast<size_t>(parse_double(fields[0], where));
    e.loss_mean = parse_double(fields[1], where);
    if (!fields[2].empty()) e.accuracy = parse_double(fields[2], where);
    e.wall_seconds = parse_double(fields[3], where);
    rows.push_back(e);
  }
  return rows;
}

ComparisonReport compare_metrics(const std::vector<EpochMetrics>& a,
                                 const std::vector<EpochMetrics>& b, double threshold) {
  if (a.size() != b.size()) {
    throw ConfigError("epoch counts differ: " + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()));
  }
  ComparisonReport report;
  report.threshold = threshold;
  for (size_t i = 0; i < a.size(); ++i) {
    if (!a[i].accuracy || !b[i].accuracy) {
      throw ConfigError("epoch " + std::to_string(i + 1) + " has no accuracy");
    }
    const double d = std::fabs(*a[i].accuracy - *b[i].accuracy);
    report.accuracy_deltas.push_back(d);
    report.max_delta = std::max(report.max_delta, d);
  }
  report.passed = report.max_delta < threshold;
  return report;
}

void print_report(std::ostream& out, const ComparisonReport& report) {
  out << "epoch,accuracy_delta\n" << std::setprecision(6);
  for (size_t i = 0; i < report.accuracy_deltas.size(); ++i) {
    out << i + 1 << ',' << report.accuracy_deltas[i] << '\n';
  }
  out << "max_delta=" << report.max_delta << " threshold=" << report.threshold
      << (report.passed ? " PASS" : " FAIL") << '\n';
}

}  // namespace mixnn
