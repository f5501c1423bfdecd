// seqcaps/capsulation.h

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

#ifndef SEQCAPS_CAPSULATION_H_
#define SEQCAPS_CAPSULATION_H_

#include <string>
#include <vector>

#include "seqcaps/capsule.h"
#include "seqcaps/params.h"
#include "seqcaps/tensor.h"

namespace seqcaps {

struct ConvLayerSpec {
  int kernel_t = 3;
  int kernel_f = 3;
  int channels = 64;
  int stride_t = 2;
  int stride_f = 2;
};

// Front-end that turns a 2-D feature sequence into the primary capsule
// group: strided maxout conv layers with batch norm, a linear projection to
// the capsule height, and a maxout conv expansion to the capsule depth.
struct CapsulationConfig {
  std::vector<ConvLayerSpec> conv_layers;
  int maxout_branches = 2;    // N_C
  double dropout_rate = 0.2;  // alpha_d
  int primary_height = 8;     // P_H
  int primary_depth = 4;      // P_D
  int expand_kernel_t = 3;
  int expand_kernel_f = 3;
  // Optional nonlinear activation projection; when off, activations are the
  // squashed vector lengths.
  bool activation_branch = false;

  void Validate() const;
  int TimeStrideProduct() const;
  // Receptive extent of the conv stack in input frames; inputs shorter than
  // this are rejected.
  int ReceptiveFieldFrames() const;
  // Frames that must be buffered past a slice's first frame before the
  // front-end can emit it: one full slice plus the stack's right context.
  int RightContextFrames() const;
  int OutputFrames(int input_frames) const;  // after all time strides
};

class CapsulationBlock {
 public:
  // Registers all parameters on `store` (prefix "capsulation/"), drawing
  // initial values from `init_rng` in a fixed order.
  CapsulationBlock(const CapsulationConfig& config, int feature_dim,
                   ParamStore* store, Rng* init_rng, double init_scale);

  // x: frames x feature_dim, row-major.
  CapsuleGroup Capsulate(const std::vector<double>& features, int frames,
                         const ForwardContext& ctx) const;

  // Individual stages, exposed for verification.
  Tensor ConvFrontend(const Tensor& x, const ForwardContext& ctx) const;  // [T,F,FD]
  Tensor FlattenProjectU(const Tensor& x_conv, const ForwardContext& ctx) const;  // [T,P_H]
  Tensor ProjectActivations(const Tensor& x_conv, const ForwardContext& ctx) const;  // [T,P_H]
  Tensor ExpandDepth(const Tensor& u_prime, const ForwardContext& ctx) const;  // [T,P_H,P_D]

  const CapsulationConfig& config() const { return config_; }
  int feature_dim() const { return feature_dim_; }
  // Feature-axis extent after the conv stack (F), and F * F_D.
  int CondensedFeatureDim() const { return condensed_f_; }
  int FlattenedHeight() const { return flattened_; }

 private:
  CapsulationConfig config_;
  int feature_dim_;
  int condensed_f_;
  int flattened_;
  ParamStore* store_;
  std::vector<int> conv_kernels_;   // per layer, per branch: param indices
  std::vector<int> bn_gain_, bn_bias_, bn_mean_, bn_var_;
  int project_u_ = -1;
  int project_a_ = -1;
  std::vector<int> expand_kernels_;  // per branch
};

}  // namespace seqcaps

#endif  // SEQCAPS_CAPSULATION_H_
