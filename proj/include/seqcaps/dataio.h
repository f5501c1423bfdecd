// seqcaps/dataio.h

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

#ifndef SEQCAPS_DATAIO_H_
#define SEQCAPS_DATAIO_H_

#include <string>
#include <vector>

#include "seqcaps/ctc.h"

namespace seqcaps {

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct Utterance {
  std::string id;
  int frames = 0;
  int dim = 0;
  std::vector<double> features;  // frames x dim, row-major
  LabelSeq labels;
};

// Feature file: utterances concatenated, each as one header line
// `id,frames,dim` followed by `frames` lines of `dim` comma-separated
// decimals. Labels travel in a separate transcript file (`id<TAB>symbols`).
std::vector<Utterance> LoadFeatures(const std::string& path);
void SaveFeatures(const std::vector<Utterance>& utterances,
                  const std::string& path);

// Transcript lines: `id<TAB>space-separated symbols`. Attaches labels to the
// matching utterances; unknown symbols or ids are errors.
void LoadTranscripts(const std::string& path, const LabelAlphabet& alphabet,
                     std::vector<Utterance>* utterances);
void SaveTranscripts(const std::vector<Utterance>& utterances,
                     const LabelAlphabet& alphabet, const std::string& path);

// Zero mean / unit variance per feature coefficient over the utterance,
// with variances floored at 1e-8 (constant coefficients map to zero).
Utterance NormalizeUtterance(const Utterance& u);

// `speaker` mode pools statistics over utterances sharing the id prefix
// before the first '_'.
enum class NormalizeMode { kUtterance, kSpeaker };
void NormalizeInPlace(std::vector<Utterance>* utterances, NormalizeMode mode);

// Synthetic labeling task: sequences of noisy 2-D glyph renderings
// separated by silence spans; the label sequence is the glyph order.
struct SyntheticTaskConfig {
  std::vector<std::string> symbols;  // glyph names, indexed into the alphabet later
  int feature_dim = 16;
  int glyph_frames = 10;
  double noise_sigma = 0.08;
  int min_labels = 2;
  int max_labels = 4;
  int min_gap = 3;
  int max_gap = 8;
  // When >= 0, this glyph is appended to every utterance (sentence-final
  // marker).
  int eos_glyph = -1;
  uint64_t seed = 1;

  void Validate() const;
};

// Glyph templates are drawn once from the config seed; pairwise distinct by
// construction.
std::vector<std::vector<double>> MakeGlyphTemplates(const SyntheticTaskConfig& cfg);

// Deterministic under (cfg.seed, stream, count). Labels index cfg.symbols.
std::vector<Utterance> GenerateSynthetic(const SyntheticTaskConfig& cfg,
                                         int count, const std::string& stream);

}  // namespace seqcaps

#endif  // SEQCAPS_DATAIO_H_
