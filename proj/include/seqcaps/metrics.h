// seqcaps/metrics.h

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

#ifndef SEQCAPS_METRICS_H_
#define SEQCAPS_METRICS_H_

#include <string>
#include <vector>

#include "seqcaps/ctc.h"

namespace seqcaps {

struct AlignmentResult {
  int64_t substitutions = 0;
  int64_t insertions = 0;
  int64_t deletions = 0;
  int64_t hits = 0;
  int64_t reference_length = 0;
  int64_t hypothesis_length = 0;

  int64_t Edits() const { return substitutions + insertions + deletions; }
  double ErrorRate() const;  // (S+I+D) / reference length

  AlignmentResult& operator+=(const AlignmentResult& other);
};

// Minimum-edit-distance alignment with unit costs. Equal-cost choices prefer
// substitution over insertion over deletion.
AlignmentResult TokenErrorRate(const LabelSeq& reference, const LabelSeq& hypothesis);

// Percent of decoded sequences that are non-empty and end with `eos_label`.
double EosDetectionRate(const std::vector<LabelSeq>& decoded, int eos_label);

// Hamming mismatch percentage between two per-frame label sequences of equal
// length.
double FramewiseSubstitutionRate(const LabelSeq& seq_a, const LabelSeq& seq_b);

// Writes `<path>.csv` (header row of class symbols, one row per lower
// capsule), `<path>_sums.csv` (per-class column sums) and `<path>.pgm`
// (binary graymap scaled so the display range 0.01..0.05 spans black to
// white). c is row-major rows x cols.
void ExportCouplingHeatmap(const std::vector<double>& c, int rows, int cols,
                           const std::vector<std::string>& class_symbols,
                           const std::string& path);

// Reads back a heatmap CSV produced above (values only, header skipped).
std::vector<std::vector<double>> ReadHeatmapCsv(const std::string& path);

}  // namespace seqcaps

#endif  // SEQCAPS_METRICS_H_
