// seqcaps/model.cc

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

#include "seqcaps/model.h"

#include <stdexcept>

namespace seqcaps {

void ModelConfig::ChainAndValidate() {
  if (feature_dim < 1) throw std::invalid_argument("model: feature dim must be >= 1");
  capsulation.Validate();
  alphabet.Validate();
  if (layers.empty()) {
    throw std::invalid_argument("model: at least one capsule layer required");
  }
  int h = capsulation.primary_height;
  int d = capsulation.primary_depth;
  for (size_t l = 0; l < layers.size(); ++l) {
    layers[l].in_height = h;
    layers[l].in_depth = d;
    if (layers[l].mask_padding && l + 1 != layers.size()) {
      throw std::invalid_argument("model: padding mask allowed on the class layer only");
    }
    layers[l].Validate();
    h = layers[l].out_height;
    d = layers[l].out_depth;
  }
  if (h != alphabet.NumClasses()) {
    throw std::invalid_argument(
        "model: class capsule height " + std::to_string(h) +
        " must equal the alphabet size " + std::to_string(alphabet.NumClasses()));
  }
}

SrfModel::SrfModel(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.ChainAndValidate();
  Rng init = Rng::Derive(seed, "init");
  capsulation_ = std::make_unique<CapsulationBlock>(
      config_.capsulation, config_.feature_dim, &params_, &init,
      config_.init_scale);
  layers_.reserve(config_.layers.size());
  for (size_t l = 0; l < config_.layers.size(); ++l) {
    if (l > 0) {
      const int h = config_.layers[l].in_height;
      const int d = config_.layers[l].in_depth;
      norm_gain_.push_back(params_.Add("norm" + std::to_string(l) + "/gain",
                                       {h, d}, std::vector<double>(h * d, 1.0)));
      norm_bias_.push_back(params_.Add("norm" + std::to_string(l) + "/bias",
                                       {h, d}, std::vector<double>(h * d, 0.0)));
    }
    layers_.emplace_back(config_.layers[l], static_cast<int>(l) + 1, &params_,
                         &init, config_.init_scale);
  }
  // Activation lengths live in [0,1); the learnable gain lets the top-level
  // softmax reach peaky distributions.
  output_gain_ = params_.Add("output/gain", {1}, {1.0});
}

ModelOutput SrfModel::Forward(Tape& tape, const std::vector<double>& features,
                              int frames, const RunOptions& options) {
  leased_.clear();
  leased_.reserve(params_.Count());
  for (int i = 0; i < params_.Count(); ++i) {
    leased_.push_back(tape.Leaf(params_.At(i).shape, params_.At(i).value));
  }
  ForwardContext ctx;
  ctx.tape = &tape;
  ctx.leased = &leased_;
  ctx.training = options.training;
  ctx.dropout_rng = options.dropout_rng;
  ctx.couplings = options.couplings;

  ModelOutput out;
  out.primary = capsulation_->Capsulate(features, frames, ctx);

  CapsuleGroup group = out.primary;
  for (size_t l = 0; l < layers_.size(); ++l) {
    if (l > 0) {
      group.vectors = LayerNormSlice(group.vectors, ctx.Param(norm_gain_[l - 1]),
                                     ctx.Param(norm_bias_[l - 1]));
    }
    group = layers_[l].Forward(group, ctx);
  }
  out.activations = group.activations;  // [T,V]
  out.log_probs =
      LogSoftmax(ScaleBy(group.activations, ctx.Param(output_gain_)), 1);
  return out;
}

std::vector<double> SrfModel::InferLogProbs(const std::vector<double>& features,
                                            int frames, CouplingHook* couplings) {
  Tape tape;
  RunOptions options;
  options.training = false;
  options.couplings = couplings;
  return Forward(tape, features, frames, options).log_probs.Value();
}

}  // namespace seqcaps
