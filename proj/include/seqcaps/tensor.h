// seqcaps/tensor.h

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

#ifndef SEQCAPS_TENSOR_H_
#define SEQCAPS_TENSOR_H_

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqcaps/rng.h"

namespace seqcaps {

// Dense n-dimensional tensors recorded on a tape for reverse-mode
// differentiation. One tape per forward/backward pass; parameters live
// outside the tape and are leased onto it as leaves each pass.

using Shape = std::vector<int>;

int64_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a forward op produces (or is handed) a non-finite value.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class Tape;

// Lightweight handle: tape pointer + node id. Value semantics, cheap copies.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int node) : tape_(tape), node_(node) {}

  bool Defined() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  const Shape& shape() const;
  int Rank() const { return static_cast<int>(shape().size()); }
  int Dim(int axis) const { return shape()[axis]; }
  int64_t Size() const { return NumElements(shape()); }
  const std::vector<double>& Value() const;
  double Scalar() const;

 private:
  Tape* tape_ = nullptr;
  int node_ = -1;
};

using BackwardFn = std::function<void(Tape&, int self)>;

struct TapeNode {
  Shape shape;
  std::vector<double> value;
  BackwardFn backward;  // empty for leaves/constants
};

// Ordered record of executed ops. Node ids are topologically ordered by
// construction (parents precede children); Backward visits each node once,
// in reverse id order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor Leaf(Shape shape, std::vector<double> values);
  Tensor Constant(Shape shape, double fill);
  Tensor ScalarValue(double v);

  // Seeds d(loss)/d(loss) = 1 and runs all adjoints. loss must be scalar.
  // A tape can be walked backward only once; Reset() starts a new pass.
  void Backward(const Tensor& loss);

  // Gradient of the last Backward() loss w.r.t. t. Zero-filled when the
  // loss does not depend on t.
  std::vector<double> Grad(const Tensor& t) const;

  void Reset();

  int NumNodes() const { return static_cast<int>(nodes_.size()); }
  bool Consumed() const { return consumed_; }

  // Op construction. `opname` labels finiteness failures.
  int AddNode(Shape shape, std::vector<double> value, BackwardFn backward,
              const char* opname);

  const TapeNode& NodeAt(int id) const { return nodes_[id]; }
  const std::vector<double>& ValueAt(int id) const { return nodes_[id].value; }
  // Adjoint accumulator for node id, allocated on first touch.
  std::vector<double>& GradBuf(int id);
  bool HasGrad(int id) const { return !grads_[id].empty(); }

 private:
  std::vector<TapeNode> nodes_;
  std::vector<std::vector<double>> grads_;
  bool consumed_ = false;
};

enum class Padding { kSame, kValid };

// Elementwise / linear algebra.
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor Scale(const Tensor& a, double s);
// a scaled by a single-element (learnable) tensor.
Tensor ScaleBy(const Tensor& a, const Tensor& scalar);
Tensor AddScalar(const Tensor& a, double s);
Tensor MatMul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor Reshape(const Tensor& a, Shape shape);
Tensor Slice0(const Tensor& a, int index);              // drops axis 0
Tensor Concat0(const std::vector<Tensor>& parts);       // along axis 0
Tensor Stack0(const std::vector<Tensor>& parts);        // new axis 0
Tensor ReduceSum(const Tensor& a);                      // scalar
Tensor ReduceSumAxis(const Tensor& a, int axis);

// Nonlinearities.
Tensor Softmax(const Tensor& a, int axis);
Tensor LogSoftmax(const Tensor& a, int axis);
Tensor Sigmoid(const Tensor& a);
// Euclidean norm along `axis` (axis is dropped from the output shape).
// Gradient at an exactly zero vector is taken as zero.
Tensor VectorLength(const Tensor& a, int axis);
// v -> (|v|^2 / (1 + |v|^2)) * v/|v| along `axis`; squash(0) = 0 with zero
// gradient there.
Tensor Squash(const Tensor& a, int axis);

// Elementwise max over >= 1 same-shaped tensors. Ties route the gradient to
// the earliest branch.
Tensor MaxElements(const std::vector<Tensor>& branches);
// Inverted dropout: kept entries are scaled by 1/keep at training time so
// inference is a pass-through. rate == 0 returns the input unchanged.
Tensor Dropout(const Tensor& a, double rate, Rng* rng);
// Element-wise maximum of independently dropped-out branches; inference mode
// skips dropout entirely.
Tensor MaxoutBranch(const std::vector<Tensor>& branches, double dropout_rate,
                    bool training, Rng* rng);

// input [T,F,C], kernel [kt,kf,C,Co]; cross-correlation semantics.
// kSame pads to ceil(in/stride) with the extra cell on the right/bottom.
Tensor Conv2d(const Tensor& input, const Tensor& kernel, int stride_t,
              int stride_f, Padding padding);

// Normalization. Variances are floored at kVarianceFloor instead of adding
// an epsilon, so unit-variance inputs pass through exactly.
inline constexpr double kVarianceFloor = 1e-8;

// x [T,H,D]; per time index, normalizes over the flattened HxD extent;
// gain/bias [H,D].
Tensor LayerNormSlice(const Tensor& x, const Tensor& gain, const Tensor& bias);
// x [T,F,C]; per-channel statistics over all TxF positions. Batch statistics
// are reported through *batch_mean / *batch_var (size C) for running-stat
// updates by the caller.
Tensor BatchNormTrain(const Tensor& x, const Tensor& gain, const Tensor& bias,
                      std::vector<double>* batch_mean,
                      std::vector<double>* batch_var);
Tensor BatchNormInfer(const Tensor& x, const Tensor& gain, const Tensor& bias,
                      const std::vector<double>& running_mean,
                      const std::vector<double>& running_var);

// Capsule-layer kernels.
// u [N,Din], w [N,J,Din,Dout] -> [N,J,Dout]: out[n,j] = u[n] * w[n,j].
Tensor CapsulePredict(const Tensor& u, const Tensor& w);
// c [N,J], u_hat [N,J,E] -> s [J,E]: s[j] = sum_n c[n,j] u_hat[n,j].
Tensor CoupledSum(const Tensor& c, const Tensor& u_hat);
// u_hat [N,J,E], o [J,E] -> [N,J]: dot products u_hat[n,j] . o[j].
Tensor Agreement(const Tensor& u_hat, const Tensor& o);

enum class PaddingMaskMode {
  kRenormalize,  // mask the logit before the softmax; rows sum to 1 over the rest
  kZeroAfter,    // literal: softmax first, then zero the masked column
};

// r [N,J] -> coupling [N,J] with column `masked_col` forced to zero.
Tensor MaskPaddingClass(const Tensor& r, int masked_col, PaddingMaskMode mode);

// Central finite differences of `eval` w.r.t. *x, step h. `eval` must not
// depend on state mutated between calls.
double CentralDifference(double* x, const std::function<double()>& eval,
                         double h);

}  // namespace seqcaps

#endif  // SEQCAPS_TENSOR_H_
