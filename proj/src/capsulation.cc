// seqcaps/capsulation.cc

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

#include "seqcaps/capsulation.h"

#include <cmath>
#include <stdexcept>

namespace seqcaps {

namespace {

constexpr double kBnMomentum = 0.1;

int CeilDiv(int a, int b) { return (a + b - 1) / b; }

}  // namespace

void CapsulationConfig::Validate() const {
  if (conv_layers.empty()) {
    throw std::invalid_argument("capsulation: at least one conv layer required");
  }
  for (const auto& l : conv_layers) {
    if (l.kernel_t < 1 || l.kernel_f < 1 || l.channels < 1 || l.stride_t < 1 ||
        l.stride_f < 1) {
      throw std::invalid_argument("capsulation: conv layer fields must be >= 1");
    }
  }
  if (maxout_branches < 1) {
    throw std::invalid_argument("capsulation: maxout branches must be >= 1");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("capsulation: dropout rate must be in [0,1)");
  }
  if (primary_height < 1 || primary_depth < 1) {
    throw std::invalid_argument("capsulation: capsule dims must be >= 1");
  }
  if (expand_kernel_t < 1 || expand_kernel_f < 1) {
    throw std::invalid_argument("capsulation: expand kernel must be >= 1");
  }
}

int CapsulationConfig::TimeStrideProduct() const {
  int s = 1;
  for (const auto& l : conv_layers) s *= l.stride_t;
  return s;
}

int CapsulationConfig::ReceptiveFieldFrames() const {
  int rf = 1;
  int jump = 1;
  for (const auto& l : conv_layers) {
    rf += (l.kernel_t - 1) * jump;
    jump *= l.stride_t;
  }
  return rf;
}

int CapsulationConfig::RightContextFrames() const {
  int rc = 0;
  int jump = 1;
  for (const auto& l : conv_layers) {
    rc += ((l.kernel_t - 1) / 2) * jump;
    jump *= l.stride_t;
  }
  return TimeStrideProduct() + rc;
}

int CapsulationConfig::OutputFrames(int input_frames) const {
  int t = input_frames;
  for (const auto& l : conv_layers) t = CeilDiv(t, l.stride_t);
  return t;
}

CapsulationBlock::CapsulationBlock(const CapsulationConfig& config,
                                   int feature_dim, ParamStore* store,
                                   Rng* init_rng, double init_scale)
    : config_(config), feature_dim_(feature_dim), store_(store) {
  config_.Validate();
  if (feature_dim < 1) throw std::invalid_argument("capsulation: feature dim < 1");

  int cin = 1;
  int f = feature_dim;
  for (size_t l = 0; l < config_.conv_layers.size(); ++l) {
    const auto& spec = config_.conv_layers[l];
    const Shape kshape{spec.kernel_t, spec.kernel_f, cin, spec.channels};
    const int fan_in = spec.kernel_t * spec.kernel_f * cin;
    const int fan_out = spec.kernel_t * spec.kernel_f * spec.channels;
    for (int b = 0; b < config_.maxout_branches; ++b) {
      conv_kernels_.push_back(store->Add(
          "capsulation/conv" + std::to_string(l) + "/branch" + std::to_string(b) +
              "/kernel",
          kshape, InitFanAvg(kshape, fan_in, fan_out, init_scale, init_rng)));
    }
    const std::string bn = "capsulation/conv" + std::to_string(l) + "/bn_";
    bn_gain_.push_back(store->Add(bn + "gain", {spec.channels},
                                  std::vector<double>(spec.channels, 1.0)));
    bn_bias_.push_back(store->Add(bn + "bias", {spec.channels},
                                  std::vector<double>(spec.channels, 0.0)));
    bn_mean_.push_back(store->Add(bn + "running_mean", {spec.channels},
                                  std::vector<double>(spec.channels, 0.0),
                                  /*learnable=*/false));
    bn_var_.push_back(store->Add(bn + "running_var", {spec.channels},
                                 std::vector<double>(spec.channels, 1.0),
                                 /*learnable=*/false));
    cin = spec.channels;
    f = CeilDiv(f, spec.stride_f);
  }
  condensed_f_ = f;
  flattened_ = f * config_.conv_layers.back().channels;

  const Shape ushape{flattened_, config_.primary_height};
  project_u_ = store->Add(
      "capsulation/project_u/weight", ushape,
      InitFanAvg(ushape, flattened_, config_.primary_height, init_scale, init_rng));
  if (config_.activation_branch) {
    project_a_ = store->Add(
        "capsulation/project_a/weight", ushape,
        InitFanAvg(ushape, flattened_, config_.primary_height, init_scale, init_rng));
  }

  const Shape eshape{config_.expand_kernel_t, config_.expand_kernel_f, 1,
                     config_.primary_depth};
  const int efan_in = config_.expand_kernel_t * config_.expand_kernel_f;
  const int efan_out = efan_in * config_.primary_depth;
  for (int b = 0; b < config_.maxout_branches; ++b) {
    expand_kernels_.push_back(store->Add(
        "capsulation/expand/branch" + std::to_string(b) + "/kernel", eshape,
        InitFanAvg(eshape, efan_in, efan_out, init_scale, init_rng)));
  }
}

Tensor CapsulationBlock::ConvFrontend(const Tensor& x,
                                      const ForwardContext& ctx) const {
  Tensor h = x;  // [T,F,C]
  int kernel_cursor = 0;
  for (size_t l = 0; l < config_.conv_layers.size(); ++l) {
    const auto& spec = config_.conv_layers[l];
    std::vector<Tensor> branches;
    branches.reserve(config_.maxout_branches);
    for (int b = 0; b < config_.maxout_branches; ++b) {
      branches.push_back(Conv2d(h, ctx.Param(conv_kernels_[kernel_cursor + b]),
                                spec.stride_t, spec.stride_f, Padding::kSame));
    }
    kernel_cursor += config_.maxout_branches;
    Tensor activated =
        MaxoutBranch(branches, config_.dropout_rate, ctx.training, ctx.dropout_rng);

    auto& mean = store_->At(bn_mean_[l]).value;
    auto& var = store_->At(bn_var_[l]).value;
    if (ctx.training) {
      std::vector<double> bm, bv;
      activated = BatchNormTrain(activated, ctx.Param(bn_gain_[l]),
                                 ctx.Param(bn_bias_[l]), &bm, &bv);
      for (size_t c = 0; c < mean.size(); ++c) {
        mean[c] = (1.0 - kBnMomentum) * mean[c] + kBnMomentum * bm[c];
        var[c] = (1.0 - kBnMomentum) * var[c] + kBnMomentum * bv[c];
      }
    } else {
      activated = BatchNormInfer(activated, ctx.Param(bn_gain_[l]),
                                 ctx.Param(bn_bias_[l]), mean, var);
    }
    h = activated;
  }
  return h;
}

Tensor CapsulationBlock::FlattenProjectU(const Tensor& x_conv,
                                         const ForwardContext& ctx) const {
  const int t = x_conv.Dim(0);
  Tensor flat = Reshape(x_conv, {t, flattened_});
  return MatMul(flat, ctx.Param(project_u_));
}

Tensor CapsulationBlock::ProjectActivations(const Tensor& x_conv,
                                            const ForwardContext& ctx) const {
  if (project_a_ < 0) {
    throw std::logic_error("activation projection branch is disabled");
  }
  const int t = x_conv.Dim(0);
  Tensor flat = Reshape(x_conv, {t, flattened_});
  return Sigmoid(MatMul(flat, ctx.Param(project_a_)));
}

Tensor CapsulationBlock::ExpandDepth(const Tensor& u_prime,
                                     const ForwardContext& ctx) const {
  const int t = u_prime.Dim(0);
  Tensor image = Reshape(u_prime, {t, config_.primary_height, 1});
  std::vector<Tensor> branches;
  branches.reserve(config_.maxout_branches);
  for (int b = 0; b < config_.maxout_branches; ++b) {
    branches.push_back(
        Conv2d(image, ctx.Param(expand_kernels_[b]), 1, 1, Padding::kSame));
  }
  return MaxoutBranch(branches, config_.dropout_rate, ctx.training,
                      ctx.dropout_rng);
}

CapsuleGroup CapsulationBlock::Capsulate(const std::vector<double>& features,
                                         int frames,
                                         const ForwardContext& ctx) const {
  if (frames < config_.ReceptiveFieldFrames()) {
    throw ShapeError("capsulate: " + std::to_string(frames) +
                     " frames shorter than the required context of " +
                     std::to_string(config_.ReceptiveFieldFrames()));
  }
  if (static_cast<int64_t>(features.size()) !=
      static_cast<int64_t>(frames) * feature_dim_) {
    throw ShapeError("capsulate: feature buffer does not match frames x dim");
  }
  Tensor x = ctx.tape->Leaf({frames, feature_dim_, 1}, features);
  Tensor conv = ConvFrontend(x, ctx);
  Tensor u_prime = FlattenProjectU(conv, ctx);
  Tensor u = ExpandDepth(u_prime, ctx);  // [T,P_H,P_D]

  CapsuleGroup out;
  out.vectors = u;
  if (config_.activation_branch) {
    out.activations = ProjectActivations(conv, ctx);
  } else {
    // Diagnostic activations: lengths of the squashed vectors, in [0,1).
    out.activations = VectorLength(Squash(u, 2), 2);
  }
  return out;
}

}  // namespace seqcaps
