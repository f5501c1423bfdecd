// seqcaps/model.h

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

#ifndef SEQCAPS_MODEL_H_
#define SEQCAPS_MODEL_H_

#include <memory>
#include <string>
#include <vector>

#include "seqcaps/capsulation.h"
#include "seqcaps/ctc.h"
#include "seqcaps/routing.h"

namespace seqcaps {

struct ModelConfig {
  int feature_dim = 0;
  CapsulationConfig capsulation;
  // in_height/in_depth of each layer are derived by chaining from the
  // primary capsule shape; out_height of the last layer must equal the
  // alphabet size.
  std::vector<LayerConfig> layers;
  LabelAlphabet alphabet;
  double init_scale = 1.0;

  void ChainAndValidate();
};

struct ModelOutput {
  Tensor log_probs;      // [T,V], per-frame log distribution fed to the loss
  Tensor activations;    // [T,V], class-capsule vector lengths
  CapsuleGroup primary;  // capsulation output
};

struct RunOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;
  CouplingHook* couplings = nullptr;
};

// Capsule-only acoustic model: capsulation, L windowed capsule layers with
// per-slice layer norm between them, and a per-frame log-softmax over the
// class activation lengths.
class SrfModel {
 public:
  SrfModel(ModelConfig config, uint64_t seed);

  // features: frames x feature_dim row-major.
  ModelOutput Forward(Tape& tape, const std::vector<double>& features,
                      int frames, const RunOptions& options);

  // Log-probs only, without gradient bookkeeping kept around.
  std::vector<double> InferLogProbs(const std::vector<double>& features,
                                    int frames, CouplingHook* couplings = nullptr);

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return config_; }
  const CapsulationBlock& capsulation() const { return *capsulation_; }

  int64_t ParameterCount() const { return params_.LearnableScalars(); }
  int OutputFrames(int input_frames) const {
    return config_.capsulation.OutputFrames(input_frames);
  }

  // Tape leases created by the latest Forward(), indexed like the store.
  const std::vector<Tensor>& leased() const { return leased_; }

 private:
  ModelConfig config_;
  ParamStore params_;
  std::unique_ptr<CapsulationBlock> capsulation_;
  std::vector<CapsuleLayer> layers_;
  std::vector<int> norm_gain_, norm_bias_;  // between capsule layers
  int output_gain_ = -1;
  std::vector<Tensor> leased_;
};

}  // namespace seqcaps

#endif  // SEQCAPS_MODEL_H_
