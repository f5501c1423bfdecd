// seqcaps/routing.h

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

#ifndef SEQCAPS_ROUTING_H_
#define SEQCAPS_ROUTING_H_

#include <optional>
#include <vector>

#include "seqcaps/capsule.h"
#include "seqcaps/params.h"
#include "seqcaps/tensor.h"

namespace seqcaps {

// Sliding window over time slices; stride is fixed at one.
struct WindowConfig {
  int left = 0;   // slices of past context
  int right = 0;  // slices of future context
  int Size() const { return left + 1 + right; }
  void Validate() const;
};

enum class RoutingMethod { kDynamic, kSequential };

struct LayerConfig {
  int in_height = 0;   // I_H (filled by chaining when part of a stack)
  int in_depth = 0;    // I_D
  int out_height = 0;  // O_H
  int out_depth = 0;   // O_D
  WindowConfig window;
  int iterations = 1;  // routing iterations per slice
  RoutingMethod method = RoutingMethod::kSequential;
  // Class-capsule layer only: force couplings into this class to zero.
  bool mask_padding = false;
  int padding_index = -1;
  PaddingMaskMode mask_mode = PaddingMaskMode::kRenormalize;

  void Validate() const;
  // Transformation matrices in this layer's shared kernel.
  int64_t TransformMatrices() const {
    return static_cast<int64_t>(window.Size()) * in_height * out_height;
  }
};

// Carries the previous slice's output vectors between consecutive slices.
struct RoutingState {
  Tensor o_prev;  // [O_H, O_D]; all-zero at t=1
};

// Window of input slices around t (1-based), concatenated along the height
// axis; out-of-range slices are zero. u: [T,H,D] -> [w*H, D].
Tensor SliceWindow(const Tensor& u, int t, const WindowConfig& window);

// u_window: [N,Din], transform: [N,J,Din,Dout] -> predictions [N,J,Dout].
Tensor PredictionVectors(const Tensor& u_window, const Tensor& transform);

struct RoutingOutput {
  Tensor o;                       // [J, E]
  std::vector<double> couplings;  // final-iteration c, row-major N x J
};

struct MaskSpec {
  int padding_index = -1;
  PaddingMaskMode mode = PaddingMaskMode::kRenormalize;
};

// Iterative routing-by-agreement over one window. Per iteration: couplings
// from the logits, weighted sum, squash, then the agreement update.
RoutingOutput DynamicRouting(const Tensor& u_hat, int iterations,
                             const std::optional<MaskSpec>& mask = std::nullopt);

// Sequential variant: the output is seeded with the previous slice's output
// and the agreement update runs before each coupling computation, so a
// single iteration reuses the clustering carried over from slice t-1.
RoutingOutput SequentialDynamicRouting(const Tensor& o_prev, const Tensor& u_hat,
                                       int iterations,
                                       const std::optional<MaskSpec>& mask = std::nullopt);

// Softmax over classes with the padding column removed (renormalize) or
// zeroed after the fact.
Tensor MaskedCouplings(const Tensor& r_logits, int padding_index,
                       PaddingMaskMode mode);

// One windowed capsule layer with a kernel shared across all time slices.
class CapsuleLayer {
 public:
  // `layer_index` is 1-based and used for parameter naming and coupling
  // capture.
  CapsuleLayer(const LayerConfig& config, int layer_index, ParamStore* store,
               Rng* init_rng, double init_scale);

  CapsuleGroup Forward(const CapsuleGroup& input, const ForwardContext& ctx) const;

  const LayerConfig& config() const { return config_; }
  int transform_param() const { return transform_; }

 private:
  LayerConfig config_;
  int layer_index_;
  int transform_ = -1;
};

// Receptive field on the primary capsule group, in slices: w + (L-1)(w-1).
int ReceptiveFieldSlices(int num_layers, int window_size);

struct LookaheadReport {
  int frames = 0;
  double delay_ms = 0.0;
};

// Future frames needed before a slice's output can be emitted, and the
// matching delay: frames = delta + frontend right context + L * w_R *
// frames_per_slice; ms = hop * frames + win / 2.
LookaheadReport LookaheadAndDelay(int omega_right, int num_layers,
                                  int frontend_right_context_frames,
                                  int frames_per_slice, double hop_ms,
                                  double window_ms, int delta_frames);

int64_t TransformMatrixCount(const std::vector<LayerConfig>& layers);

}  // namespace seqcaps

#endif  // SEQCAPS_ROUTING_H_
