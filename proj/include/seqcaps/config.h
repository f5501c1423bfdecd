// seqcaps/config.h

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

#ifndef SEQCAPS_CONFIG_H_
#define SEQCAPS_CONFIG_H_

#include <optional>
#include <string>
#include <vector>

#include "seqcaps/dataio.h"
#include "seqcaps/model.h"
#include "seqcaps/trainer.h"

namespace seqcaps {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Frame-clock metadata used by the structural report and the evaluation
// real-time factor.
struct FeatureMeta {
  double hop_ms = 10.0;
  double window_ms = 25.0;
  // Extra look-ahead already baked into the feature stream (delta context).
  int delta_frames = 0;
  bool normalize = true;
  NormalizeMode normalize_mode = NormalizeMode::kUtterance;
};

struct SyntheticDataConfig {
  SyntheticTaskConfig task;
  int train_count = 500;
  int valid_count = 50;
  int test_count = 100;
};

struct FileDataConfig {
  std::string train_features, train_transcripts;
  std::string valid_features, valid_transcripts;
  std::string test_features, test_transcripts;
};

struct DataConfig {
  std::optional<SyntheticDataConfig> synthetic;
  std::optional<FileDataConfig> files;
};

// Complete declarative run description; everything a command needs.
struct RunConfig {
  int version = 1;
  uint64_t seed = 1;
  std::string output_dir = "out";
  ModelConfig model;
  TrainConfig train;
  FeatureMeta features;
  DataConfig data;

  void Validate();  // chains layer dims; throws ConfigError with field paths
};

// Parses a config file, applying `key=value` overrides (dotted paths,
// array indices allowed: e.g. train.epochs=3, model.routing.0.method=dr).
RunConfig LoadRunConfig(const std::string& path,
                        const std::vector<std::string>& overrides);
RunConfig ParseRunConfig(const std::string& json_text,
                         const std::vector<std::string>& overrides);

struct DataBundle {
  std::vector<Utterance> train, valid, test;
};

// Generates or loads all splits, maps labels into the alphabet and applies
// feature normalization.
DataBundle LoadData(const RunConfig& config);

// Structural report (layer table, matrix/parameter counts, receptive field,
// look-ahead and delay) for `info`.
std::string StructuralReport(const RunConfig& config);

}  // namespace seqcaps

#endif  // SEQCAPS_CONFIG_H_
