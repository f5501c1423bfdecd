// seqcaps/metrics.cc

// Copyright 2026  The seqcaps authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "seqcaps/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace seqcaps {

double AlignmentResult::ErrorRate() const {
  if (reference_length == 0) {
    return hypothesis_length == 0 ? 0.0
                                  : std::numeric_limits<double>::infinity();
  }
  return static_cast<double>(Edits()) / static_cast<double>(reference_length);
}

AlignmentResult& AlignmentResult::operator+=(const AlignmentResult& other) {
  substitutions += other.substitutions;
  insertions += other.insertions;
  deletions += other.deletions;
  hits += other.hits;
  reference_length += other.reference_length;
  hypothesis_length += other.hypothesis_length;
  return *this;
}

AlignmentResult TokenErrorRate(const LabelSeq& reference,
                               const LabelSeq& hypothesis) {
  const int nr = static_cast<int>(reference.size());
  const int nh = static_cast<int>(hypothesis.size());
  // dist[i][j]: edit distance between ref[0..i) and hyp[0..j).
  std::vector<int> dist((nr + 1) * (nh + 1), 0);
  // back[i][j]: 0 match, 1 substitution, 2 insertion, 3 deletion.
  std::vector<uint8_t> back((nr + 1) * (nh + 1), 0);
  auto at = [nh](int i, int j) { return i * (nh + 1) + j; };
  for (int j = 1; j <= nh; ++j) {
    dist[at(0, j)] = j;
    back[at(0, j)] = 2;
  }
  for (int i = 1; i <= nr; ++i) {
    dist[at(i, 0)] = i;
    back[at(i, 0)] = 3;
  }
  for (int i = 1; i <= nr; ++i) {
    for (int j = 1; j <= nh; ++j) {
      if (reference[i - 1] == hypothesis[j - 1]) {
        dist[at(i, j)] = dist[at(i - 1, j - 1)];
        back[at(i, j)] = 0;
        continue;
      }
      const int sub = dist[at(i - 1, j - 1)] + 1;
      const int ins = dist[at(i, j - 1)] + 1;
      const int del = dist[at(i - 1, j)] + 1;
      // tie-break: substitution, then insertion, then deletion
      int best = sub;
      uint8_t op = 1;
      if (ins < best) {
        best = ins;
        op = 2;
      }
      if (del < best) {
        best = del;
        op = 3;
      }
      dist[at(i, j)] = best;
      back[at(i, j)] = op;
    }
  }
  AlignmentResult result;
  result.reference_length = nr;
  result.hypothesis_length = nh;
  int i = nr, j = nh;
  while (i > 0 || j > 0) {
    switch (back[at(i, j)]) {
      case 0:
        ++result.hits;
        --i;
        --j;
        break;
      case 1:
        ++result.substitutions;
        --i;
        --j;
        break;
      case 2:
        ++result.insertions;
        --j;
        break;
      default:
        ++result.deletions;
        --i;
        break;
    }
  }
  return result;
}

double EosDetectionRate(const std::vector<LabelSeq>& decoded, int eos_label) {
  if (decoded.empty()) return 0.0;
  int64_t detected = 0;
  for (const auto& seq : decoded) {
    if (!seq.empty() && seq.back() == eos_label) ++detected;
  }
  return 100.0 * static_cast<double>(detected) /
         static_cast<double>(decoded.size());
}

double FramewiseSubstitutionRate(const LabelSeq& seq_a, const LabelSeq& seq_b) {
  if (seq_a.size() != seq_b.size()) {
    throw std::invalid_argument("framewise rate: sequences differ in length");
  }
  if (seq_a.empty()) return 0.0;
  int64_t mismatches = 0;
  for (size_t i = 0; i < seq_a.size(); ++i) {
    if (seq_a[i] != seq_b[i]) ++mismatches;
  }
  return 100.0 * static_cast<double>(mismatches) /
         static_cast<double>(seq_a.size());
}

namespace {

// Round-trip exact decimal formatting, locale independent.
std::string FormatValue(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void ExportCouplingHeatmap(const std::vector<double>& c, int rows, int cols,
                           const std::vector<std::string>& class_symbols,
                           const std::string& path) {
  if (rows < 1 || cols < 1 ||
      static_cast<int64_t>(c.size()) != static_cast<int64_t>(rows) * cols) {
    throw std::invalid_argument("heatmap: matrix size does not match rows x cols");
  }
  if (static_cast<int>(class_symbols.size()) != cols) {
    throw std::invalid_argument("heatmap: need one class symbol per column");
  }

  {
    std::ofstream csv(path + ".csv");
    if (!csv) throw std::runtime_error("heatmap: cannot write " + path + ".csv");
    for (int j = 0; j < cols; ++j) {
      if (j) csv << ",";
      csv << class_symbols[j];
    }
    csv << "\n";
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        if (j) csv << ",";
        csv << FormatValue(c[i * cols + j]);
      }
      csv << "\n";
    }
    if (!csv.good()) throw std::runtime_error("heatmap: write failed for " + path);
  }
  {
    std::ofstream sums(path + "_sums.csv");
    if (!sums) throw std::runtime_error("heatmap: cannot write " + path + "_sums.csv");
    for (int j = 0; j < cols; ++j) {
      if (j) sums << ",";
      sums << class_symbols[j];
    }
    sums << "\n";
    for (int j = 0; j < cols; ++j) {
      double s = 0.0;
      for (int i = 0; i < rows; ++i) s += c[i * cols + j];
      if (j) sums << ",";
      sums << FormatValue(s);
    }
    sums << "\n";
  }
  {
    std::ofstream pgm(path + ".pgm", std::ios::binary);
    if (!pgm) throw std::runtime_error("heatmap: cannot write " + path + ".pgm");
    pgm << "P5\n" << cols << " " << rows << "\n255\n";
    // display range 0.01 .. 0.05
    constexpr double kLo = 0.01, kHi = 0.05;
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        double v = (c[i * cols + j] - kLo) / (kHi - kLo);
        v = std::clamp(v, 0.0, 1.0);
        const unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0));
        pgm.write(reinterpret_cast<const char*>(&byte), 1);
      }
    }
    if (!pgm.good()) throw std::runtime_error("heatmap: write failed for " + path);
  }
}

std::vector<std::vector<double>> ReadHeatmapCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::vector<std::vector<double>> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace seqcaps
