// seqcaps/routing.cc

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

#include "seqcaps/routing.h"

#include <stdexcept>
#include <string>

namespace seqcaps {

void WindowConfig::Validate() const {
  if (left < 0 || right < 0) {
    throw std::invalid_argument("window: context sizes must be >= 0");
  }
}

void LayerConfig::Validate() const {
  window.Validate();
  if (in_height < 1 || in_depth < 1 || out_height < 1 || out_depth < 1) {
    throw std::invalid_argument("capsule layer: all dims must be >= 1");
  }
  if (iterations < 1) {
    throw std::invalid_argument("capsule layer: iterations must be >= 1");
  }
  if (mask_padding && (padding_index < 0 || padding_index >= out_height)) {
    throw std::invalid_argument("capsule layer: padding index out of range");
  }
}

Tensor SliceWindow(const Tensor& u, int t, const WindowConfig& window) {
  if (u.Rank() != 3) throw ShapeError("slice_window: expected [T,H,D]");
  const int T = u.Dim(0), H = u.Dim(1), D = u.Dim(2);
  if (t < 1 || t > T) {
    throw ShapeError("slice_window: t=" + std::to_string(t) +
                     " outside [1," + std::to_string(T) + "]");
  }
  std::vector<Tensor> parts;
  parts.reserve(window.Size());
  for (int k = -window.left; k <= window.right; ++k) {
    const int idx = t + k;  // 1-based
    if (idx < 1 || idx > T) {
      parts.push_back(u.tape()->Constant({H, D}, 0.0));
    } else {
      parts.push_back(Slice0(u, idx - 1));
    }
  }
  return window.Size() == 1 ? parts[0] : Concat0(parts);
}

Tensor PredictionVectors(const Tensor& u_window, const Tensor& transform) {
  return CapsulePredict(u_window, transform);
}

Tensor MaskedCouplings(const Tensor& r_logits, int padding_index,
                       PaddingMaskMode mode) {
  return MaskPaddingClass(r_logits, padding_index, mode);
}

namespace {

Tensor Couplings(const Tensor& r, const std::optional<MaskSpec>& mask) {
  if (mask) return MaskPaddingClass(r, mask->padding_index, mask->mode);
  return Softmax(r, 1);
}

}  // namespace

RoutingOutput DynamicRouting(const Tensor& u_hat, int iterations,
                             const std::optional<MaskSpec>& mask) {
  if (u_hat.Rank() != 3) throw ShapeError("dynamic_routing: expected [N,J,E]");
  if (iterations < 1) throw std::invalid_argument("dynamic_routing: iterations < 1");
  Tape* tape = u_hat.tape();
  const int N = u_hat.Dim(0), J = u_hat.Dim(1);
  Tensor r = tape->Constant({N, J}, 0.0);
  RoutingOutput out;
  for (int it = 0; it < iterations; ++it) {
    Tensor c = Couplings(r, mask);
    Tensor s = CoupledSum(c, u_hat);
    out.o = Squash(s, 1);
    out.couplings = c.Value();
    if (it + 1 < iterations) {
      r = Add(r, Agreement(u_hat, out.o));
    }
  }
  return out;
}

RoutingOutput SequentialDynamicRouting(const Tensor& o_prev, const Tensor& u_hat,
                                       int iterations,
                                       const std::optional<MaskSpec>& mask) {
  if (u_hat.Rank() != 3) throw ShapeError("sequential_dynamic_routing: expected [N,J,E]");
  if (o_prev.Rank() != 2 || o_prev.Dim(0) != u_hat.Dim(1) ||
      o_prev.Dim(1) != u_hat.Dim(2)) {
    throw ShapeError("sequential_dynamic_routing: o_prev must be [J,E]");
  }
  if (iterations < 1) {
    throw std::invalid_argument("sequential_dynamic_routing: iterations < 1");
  }
  Tape* tape = u_hat.tape();
  const int N = u_hat.Dim(0), J = u_hat.Dim(1);
  Tensor r = tape->Constant({N, J}, 0.0);
  Tensor o = o_prev;
  RoutingOutput out;
  for (int it = 0; it < iterations; ++it) {
    r = Add(r, Agreement(u_hat, o));  // expectation first
    Tensor c = Couplings(r, mask);
    Tensor s = CoupledSum(c, u_hat);
    o = Squash(s, 1);
    out.couplings = c.Value();
  }
  out.o = o;
  return out;
}

CapsuleLayer::CapsuleLayer(const LayerConfig& config, int layer_index,
                           ParamStore* store, Rng* init_rng, double init_scale)
    : config_(config), layer_index_(layer_index) {
  config_.Validate();
  const int n = config_.window.Size() * config_.in_height;
  const Shape shape{n, config_.out_height, config_.in_depth, config_.out_depth};
  transform_ = store->Add(
      "routing" + std::to_string(layer_index) + "/transform", shape,
      InitFanAvg(shape, config_.in_depth, config_.out_depth, init_scale, init_rng));
}

CapsuleGroup CapsuleLayer::Forward(const CapsuleGroup& input,
                                   const ForwardContext& ctx) const {
  const Tensor& u = input.vectors;
  if (u.Dim(1) != config_.in_height || u.Dim(2) != config_.in_depth) {
    throw ShapeError("capsule layer " + std::to_string(layer_index_) +
                     ": input " + ShapeToString(u.shape()) + " does not match " +
                     std::to_string(config_.in_height) + "x" +
                     std::to_string(config_.in_depth));
  }
  const int T = u.Dim(0);
  const Tensor& w = ctx.Param(transform_);
  std::optional<MaskSpec> mask;
  if (config_.mask_padding) {
    mask = MaskSpec{config_.padding_index, config_.mask_mode};
  }

  std::vector<Tensor> slices;
  std::vector<Tensor> lengths;
  slices.reserve(T);
  lengths.reserve(T);
  Tensor o_prev;
  if (config_.method == RoutingMethod::kSequential) {
    o_prev = ctx.tape->Constant({config_.out_height, config_.out_depth}, 0.0);
  }
  for (int t = 1; t <= T; ++t) {
    Tensor u_win = SliceWindow(u, t, config_.window);
    Tensor u_hat = PredictionVectors(u_win, w);
    RoutingOutput routed;
    if (config_.method == RoutingMethod::kSequential) {
      routed = SequentialDynamicRouting(o_prev, u_hat, config_.iterations, mask);
      o_prev = routed.o;
    } else {
      routed = DynamicRouting(u_hat, config_.iterations, mask);
    }
    if (ctx.couplings) {
      CouplingCapture cap;
      cap.layer = layer_index_;
      cap.t = t;
      cap.rows = u_hat.Dim(0);
      cap.cols = u_hat.Dim(1);
      cap.values = routed.couplings;
      (*ctx.couplings)(cap);
    }
    slices.push_back(routed.o);
    lengths.push_back(VectorLength(routed.o, 1));
  }
  CapsuleGroup out;
  out.vectors = Stack0(slices);       // [T,O_H,O_D]
  out.activations = Stack0(lengths);  // [T,O_H]
  return out;
}

int ReceptiveFieldSlices(int num_layers, int window_size) {
  if (num_layers < 1) throw std::invalid_argument("receptive field: L must be >= 1");
  if (window_size < 1) throw std::invalid_argument("receptive field: w must be >= 1");
  return window_size + (num_layers - 1) * (window_size - 1);
}

LookaheadReport LookaheadAndDelay(int omega_right, int num_layers,
                                  int frontend_right_context_frames,
                                  int frames_per_slice, double hop_ms,
                                  double window_ms, int delta_frames) {
  if (omega_right < 0 || num_layers < 0 || frontend_right_context_frames < 0 ||
      frames_per_slice < 0 || delta_frames < 0) {
    throw std::invalid_argument("lookahead: arguments must be nonnegative");
  }
  LookaheadReport report;
  report.frames = delta_frames + frontend_right_context_frames +
                  num_layers * omega_right * frames_per_slice;
  report.delay_ms = hop_ms * report.frames + window_ms / 2.0;
  return report;
}

int64_t TransformMatrixCount(const std::vector<LayerConfig>& layers) {
  int64_t total = 0;
  for (const auto& l : layers) total += l.TransformMatrices();
  return total;
}

}  // namespace seqcaps
