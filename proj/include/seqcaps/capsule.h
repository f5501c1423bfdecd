// seqcaps/capsule.h

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

#ifndef SEQCAPS_CAPSULE_H_
#define SEQCAPS_CAPSULE_H_

#include <functional>
#include <vector>

#include "seqcaps/params.h"
#include "seqcaps/rng.h"
#include "seqcaps/tensor.h"

namespace seqcaps {

// The unit flowing between capsule levels: an activation grid paired with
// the instantiation-parameter grid.
struct CapsuleGroup {
  Tensor activations;  // [T,H], values in [0,1]
  Tensor vectors;      // [T,H,D]

  int Frames() const { return vectors.Dim(0); }
  int Height() const { return vectors.Dim(1); }
  int Depth() const { return vectors.Dim(2); }
};

// Final-iteration coupling coefficients of one (layer, slice) routing run.
struct CouplingCapture {
  int layer = 0;  // 1-based capsule-layer index
  int t = 0;      // 1-based slice index
  int rows = 0;   // lower capsules in the window
  int cols = 0;   // higher capsules
  std::vector<double> values;  // row-major rows x cols
};

using CouplingHook = std::function<void(const CouplingCapture&)>;

// Per-pass state shared by every block: the tape, parameter leases, dropout
// randomness, and the optional coupling export hook.
struct ForwardContext {
  Tape* tape = nullptr;
  std::vector<Tensor>* leased = nullptr;  // by ParamStore index
  bool training = false;
  Rng* dropout_rng = nullptr;
  CouplingHook* couplings = nullptr;

  const Tensor& Param(int index) const { return (*leased)[index]; }
};

}  // namespace seqcaps

#endif  // SEQCAPS_CAPSULE_H_
