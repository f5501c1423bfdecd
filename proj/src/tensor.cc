// seqcaps/tensor.cc

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

#include "seqcaps/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace seqcaps {

namespace {

void CheckSameTape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.tape() != b.tape()) {
    throw ShapeError(std::string(op) + ": operands recorded on different tapes");
  }
}

void CheckSameShape(const Tensor& a, const Tensor& b, const char* op) {
  CheckSameTape(a, b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     ShapeToString(a.shape()) + " vs " + ShapeToString(b.shape()));
  }
}

int CheckAxis(const Tensor& a, int axis, const char* op) {
  if (axis < 0 || axis >= a.Rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " invalid for shape " + ShapeToString(a.shape()));
  }
  return axis;
}

struct AxisView {
  int64_t outer;
  int64_t n;
  int64_t inner;
};

AxisView MakeAxisView(const Shape& shape, int axis) {
  AxisView v{1, shape[axis], 1};
  for (int i = 0; i < axis; ++i) v.outer *= shape[i];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) {
    v.inner *= shape[i];
  }
  return v;
}

inline int64_t At(const AxisView& v, int64_t o, int64_t i, int64_t in) {
  return (o * v.n + i) * v.inner + in;
}

Shape DropAxis(const Shape& shape, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

int64_t NumElements(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

const Shape& Tensor::shape() const { return tape_->NodeAt(node_).shape; }

const std::vector<double>& Tensor::Value() const {
  return tape_->NodeAt(node_).value;
}

double Tensor::Scalar() const {
  const auto& v = Value();
  if (v.size() != 1) {
    throw ShapeError("Scalar() on tensor of shape " + ShapeToString(shape()));
  }
  return v[0];
}

int Tape::AddNode(Shape shape, std::vector<double> value, BackwardFn backward,
                  const char* opname) {
  if (shape.empty()) shape.push_back(1);
  for (int d : shape) {
    if (d < 1) {
      throw ShapeError(std::string(opname) + ": non-positive dimension in " +
                       ShapeToString(shape));
    }
  }
  if (NumElements(shape) != static_cast<int64_t>(value.size())) {
    throw ShapeError(std::string(opname) + ": value count " +
                     std::to_string(value.size()) + " does not match shape " +
                     ShapeToString(shape));
  }
  for (double v : value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(opname) + " produced a non-finite value");
    }
  }
  nodes_.push_back(TapeNode{std::move(shape), std::move(value), std::move(backward)});
  grads_.emplace_back();
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::Leaf(Shape shape, std::vector<double> values) {
  return Tensor(this, AddNode(std::move(shape), std::move(values), nullptr, "leaf"));
}

Tensor Tape::Constant(Shape shape, double fill) {
  std::vector<double> v(NumElements(shape), fill);
  return Tensor(this, AddNode(std::move(shape), std::move(v), nullptr, "constant"));
}

Tensor Tape::ScalarValue(double v) { return Leaf({1}, {v}); }

std::vector<double>& Tape::GradBuf(int id) {
  if (grads_[id].empty()) grads_[id].assign(nodes_[id].value.size(), 0.0);
  return grads_[id];
}

void Tape::Backward(const Tensor& loss) {
  if (loss.tape() != this) throw ShapeError("Backward: loss from another tape");
  if (consumed_) {
    throw std::logic_error("Backward: tape already consumed; Reset() first");
  }
  if (loss.Size() != 1) {
    throw ShapeError("Backward: loss must be scalar, got " +
                     ShapeToString(loss.shape()));
  }
  consumed_ = true;
  GradBuf(loss.node())[0] = 1.0;
  for (int id = loss.node(); id >= 0; --id) {
    if (grads_[id].empty()) continue;  // loss does not depend on this node
    if (nodes_[id].backward) nodes_[id].backward(*this, id);
  }
}

std::vector<double> Tape::Grad(const Tensor& t) const {
  if (t.tape() != this) throw ShapeError("Grad: tensor from another tape");
  if (!consumed_) throw std::logic_error("Grad: Backward() has not run");
  if (grads_[t.node()].empty()) {
    return std::vector<double>(t.Size(), 0.0);
  }
  return grads_[t.node()];
}

void Tape::Reset() {
  nodes_.clear();
  grads_.clear();
  consumed_ = false;
}

// ---------------------------------------------------------------------------
// Elementwise / linear algebra
// ---------------------------------------------------------------------------

Tensor Add(const Tensor& a, const Tensor& b) {
  CheckSameShape(a, b, "add");
  Tape* tape = a.tape();
  const auto& av = a.Value();
  const auto& bv = b.Value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  int pa = a.node(), pb = b.node();
  int id = tape->AddNode(a.shape(), std::move(out),
                         [pa, pb](Tape& t, int self) {
                           const auto& g = t.GradBuf(self);
                           auto& ga = t.GradBuf(pa);
                           auto& gb = t.GradBuf(pb);
                           for (size_t i = 0; i < g.size(); ++i) {
                             ga[i] += g[i];
                             gb[i] += g[i];
                           }
                         },
                         "add");
  return Tensor(tape, id);
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  CheckSameShape(a, b, "sub");
  Tape* tape = a.tape();
  const auto& av = a.Value();
  const auto& bv = b.Value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  int pa = a.node(), pb = b.node();
  int id = tape->AddNode(a.shape(), std::move(out),
                         [pa, pb](Tape& t, int self) {
                           const auto& g = t.GradBuf(self);
                           auto& ga = t.GradBuf(pa);
                           auto& gb = t.GradBuf(pb);
                           for (size_t i = 0; i < g.size(); ++i) {
                             ga[i] += g[i];
                             gb[i] -= g[i];
                           }
                         },
                         "sub");
  return Tensor(tape, id);
}

Tensor Mul(const Tensor& a, const Tensor& b) {
  CheckSameShape(a, b, "mul");
  Tape* tape = a.tape();
  const auto& av = a.Value();
  const auto& bv = b.Value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  int pa = a.node(), pb = b.node();
  int id = tape->AddNode(a.shape(), std::move(out),
                         [pa, pb](Tape& t, int self) {
                           const auto& g = t.GradBuf(self);
                           const auto& av2 = t.ValueAt(pa);
                           const auto& bv2 = t.ValueAt(pb);
                           auto& ga = t.GradBuf(pa);
                           auto& gb = t.GradBuf(pb);
                           for (size_t i = 0; i < g.size(); ++i) {
                             ga[i] += g[i] * bv2[i];
                             gb[i] += g[i] * av2[i];
                           }
                         },
                         "mul");
  return Tensor(tape, id);
}

Tensor Scale(const Tensor& a, double s) {
  Tape* tape = a.tape();
  const auto& av = a.Value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  int pa = a.node();
  int id = tape->AddNode(a.shape(), std::move(out),
                         [pa, s](Tape& t, int self) {
                           const auto& g = t.GradBuf(self);
                           auto& ga = t.GradBuf(pa);
                           for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                         },
                         "scale");
  return Tensor(tape, id);
}

Tensor ScaleBy(const Tensor& a, const Tensor& scalar) {
  CheckSameTape(a, scalar, "scale_by");
  if (scalar.Size() != 1) {
    throw ShapeError("scale_by: scale must be a single element, got " +
                     ShapeToString(scalar.shape()));
  }
  const double s = scalar.Value()[0];
  const auto& av = a.Value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  int pa = a.node(), ps = scalar.node();
  int id = a.tape()->AddNode(a.shape(), std::move(out),
                             [pa, ps, s](Tape& t, int self) {
                               const auto& g = t.GradBuf(self);
                               const auto& av2 = t.ValueAt(pa);
                               auto& ga = t.GradBuf(pa);
                               auto& gs = t.GradBuf(ps);
                               double acc = 0.0;
                               for (size_t i = 0; i < g.size(); ++i) {
                                 ga[i] += g[i] * s;
                                 acc += g[i] * av2[i];
                               }
                               gs[0] += acc;
                             },
                             "scale_by");
  return Tensor(a.tape(), id);
}

Tensor AddScalar(const Tensor& a, double s) {
  Tape* tape = a.tape();
  const auto& av = a.Value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  int pa = a.node();
  int id = tape->AddNode(a.shape(), std::move(out),
                         [pa](Tape& t, int self) {
                           const auto& g = t.GradBuf(self);
                           auto& ga = t.GradBuf(pa);
                           for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         },
                         "add_scalar");
  return Tensor(tape, id);
}

Tensor MatMul(const Tensor& a, const Tensor& b) {
  CheckSameTape(a, b, "matmul");
  if (a.Rank() != 2 || b.Rank() != 2 || a.Dim(1) != b.Dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + ShapeToString(a.shape()) +
                     " x " + ShapeToString(b.shape()));
  }
  const int m = a.Dim(0), k = a.Dim(1), n = b.Dim(1);
  const auto& av = a.Value();
  const auto& bv = b.Value();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      for (int j = 0; j < n; ++j) out[i * n + j] += aik * bv[kk * n + j];
    }
  }
  int pa = a.node(), pb = b.node();
  int id = a.tape()->AddNode(
      {m, n}, std::move(out),
      [pa, pb, m, k, n](Tape& t, int self) {
        const auto& g = t.GradBuf(self);
        const auto& av2 = t.ValueAt(pa);
        const auto& bv2 = t.ValueAt(pb);
        auto& ga = t.GradBuf(pa);
        auto& gb = t.GradBuf(pb);
        // dA = g . B^T, dB = A^T . g
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            if (gij == 0.0) continue;
            for (int kk = 0; kk < k; ++kk) {
              ga[i * k + kk] += gij * bv2[kk * n + j];
              gb[kk * n + j] += av2[i * k + kk] * gij;
            }
          }
        }
      },
      "matmul");
  return Tensor(a.tape(), id);
}

Tensor Reshape(const Tensor& a, Shape shape) {
  if (NumElements(shape) != a.Size()) {
    throw ShapeError("reshape: cannot view " + ShapeToString(a.shape()) +
                     " as " + ShapeToString(shape));
  }
  Tape* tape = a.tape();
  int pa = a.node();
  int id = tape->AddNode(std::move(shape), a.Value(),
                         [pa](Tape& t, int self) {
                           const auto& g = t.GradBuf(self);
                           auto& ga = t.GradBuf(pa);
                           for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         },
                         "reshape");
  return Tensor(tape, id);
}

Tensor Slice0(const Tensor& a, int index) {
  if (a.Rank() < 1 || index < 0 || index >= a.Dim(0)) {
    throw ShapeError("slice0: index " + std::to_string(index) +
                     " out of range for " + ShapeToString(a.shape()));
  }
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  if (out_shape.empty()) out_shape.push_back(1);
  const int64_t block = NumElements(out_shape);
  const auto& av = a.Value();
  std::vector<double> out(av.begin() + index * block,
                          av.begin() + (index + 1) * block);
  int pa = a.node();
  int id = a.tape()->AddNode(std::move(out_shape), std::move(out),
                             [pa, index, block](Tape& t, int self) {
                               const auto& g = t.GradBuf(self);
                               auto& ga = t.GradBuf(pa);
                               for (int64_t i = 0; i < block; ++i) {
                                 ga[index * block + i] += g[i];
                               }
                             },
                             "slice0");
  return Tensor(a.tape(), id);
}

Tensor Concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat0: no inputs");
  Tape* tape = parts[0].tape();
  Shape rest(parts[0].shape().begin() + 1, parts[0].shape().end());
  int total0 = 0;
  for (const Tensor& p : parts) {
    CheckSameTape(parts[0], p, "concat0");
    Shape prest(p.shape().begin() + 1, p.shape().end());
    if (prest != rest) {
      throw ShapeError("concat0: trailing dims differ: " +
                       ShapeToString(parts[0].shape()) + " vs " +
                       ShapeToString(p.shape()));
    }
    total0 += p.Dim(0);
  }
  Shape out_shape;
  out_shape.push_back(total0);
  out_shape.insert(out_shape.end(), rest.begin(), rest.end());
  std::vector<double> out;
  out.reserve(NumElements(out_shape));
  std::vector<int> ids;
  std::vector<int64_t> sizes;
  for (const Tensor& p : parts) {
    const auto& v = p.Value();
    out.insert(out.end(), v.begin(), v.end());
    ids.push_back(p.node());
    sizes.push_back(p.Size());
  }
  int id = tape->AddNode(std::move(out_shape), std::move(out),
                         [ids, sizes](Tape& t, int self) {
                           const auto& g = t.GradBuf(self);
                           int64_t off = 0;
                           for (size_t p = 0; p < ids.size(); ++p) {
                             auto& gp = t.GradBuf(ids[p]);
                             for (int64_t i = 0; i < sizes[p]; ++i) {
                               gp[i] += g[off + i];
                             }
                             off += sizes[p];
                           }
                         },
                         "concat0");
  return Tensor(tape, id);
}

Tensor Stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack0: no inputs");
  std::vector<Tensor> reshaped;
  reshaped.reserve(parts.size());
  for (const Tensor& p : parts) {
    Shape s;
    s.push_back(1);
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    reshaped.push_back(Reshape(p, std::move(s)));
  }
  return Concat0(reshaped);
}

Tensor ReduceSum(const Tensor& a) {
  const auto& av = a.Value();
  double s = 0.0;
  for (double v : av) s += v;
  int pa = a.node();
  int id = a.tape()->AddNode({1}, {s},
                             [pa](Tape& t, int self) {
                               const double g = t.GradBuf(self)[0];
                               auto& ga = t.GradBuf(pa);
                               for (double& x : ga) x += g;
                             },
                             "reduce_sum");
  return Tensor(a.tape(), id);
}

Tensor ReduceSumAxis(const Tensor& a, int axis) {
  CheckAxis(a, axis, "reduce_sum_axis");
  const AxisView v = MakeAxisView(a.shape(), axis);
  const auto& av = a.Value();
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t i = 0; i < v.n; ++i) {
      for (int64_t in = 0; in < v.inner; ++in) {
        out[o * v.inner + in] += av[At(v, o, i, in)];
      }
    }
  }
  int pa = a.node();
  int id = a.tape()->AddNode(DropAxis(a.shape(), axis), std::move(out),
                             [pa, v](Tape& t, int self) {
                               const auto& g = t.GradBuf(self);
                               auto& ga = t.GradBuf(pa);
                               for (int64_t o = 0; o < v.outer; ++o) {
                                 for (int64_t i = 0; i < v.n; ++i) {
                                   for (int64_t in = 0; in < v.inner; ++in) {
                                     ga[At(v, o, i, in)] += g[o * v.inner + in];
                                   }
                                 }
                               }
                             },
                             "reduce_sum_axis");
  return Tensor(a.tape(), id);
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

Tensor Softmax(const Tensor& a, int axis) {
  CheckAxis(a, axis, "softmax");
  const AxisView v = MakeAxisView(a.shape(), axis);
  const auto& av = a.Value();
  std::vector<double> out(av.size());
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t in = 0; in < v.inner; ++in) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t i = 0; i < v.n; ++i) mx = std::max(mx, av[At(v, o, i, in)]);
      double sum = 0.0;
      for (int64_t i = 0; i < v.n; ++i) {
        const double e = std::exp(av[At(v, o, i, in)] - mx);
        out[At(v, o, i, in)] = e;
        sum += e;
      }
      for (int64_t i = 0; i < v.n; ++i) out[At(v, o, i, in)] /= sum;
    }
  }
  int pa = a.node();
  int id = a.tape()->AddNode(
      a.shape(), std::move(out),
      [pa, v](Tape& t, int self) {
        const auto& g = t.GradBuf(self);
        const auto& y = t.ValueAt(self);
        auto& ga = t.GradBuf(pa);
        for (int64_t o = 0; o < v.outer; ++o) {
          for (int64_t in = 0; in < v.inner; ++in) {
            double dot = 0.0;
            for (int64_t i = 0; i < v.n; ++i) {
              const int64_t at = At(v, o, i, in);
              dot += g[at] * y[at];
            }
            for (int64_t i = 0; i < v.n; ++i) {
              const int64_t at = At(v, o, i, in);
              ga[at] += y[at] * (g[at] - dot);
            }
          }
        }
      },
      "softmax");
  return Tensor(a.tape(), id);
}

Tensor LogSoftmax(const Tensor& a, int axis) {
  CheckAxis(a, axis, "log_softmax");
  const AxisView v = MakeAxisView(a.shape(), axis);
  const auto& av = a.Value();
  std::vector<double> out(av.size());
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t in = 0; in < v.inner; ++in) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t i = 0; i < v.n; ++i) mx = std::max(mx, av[At(v, o, i, in)]);
      double sum = 0.0;
      for (int64_t i = 0; i < v.n; ++i) sum += std::exp(av[At(v, o, i, in)] - mx);
      const double lse = mx + std::log(sum);
      for (int64_t i = 0; i < v.n; ++i) {
        out[At(v, o, i, in)] = av[At(v, o, i, in)] - lse;
      }
    }
  }
  int pa = a.node();
  int id = a.tape()->AddNode(
      a.shape(), std::move(out),
      [pa, v](Tape& t, int self) {
        const auto& g = t.GradBuf(self);
        const auto& y = t.ValueAt(self);
        auto& ga = t.GradBuf(pa);
        for (int64_t o = 0; o < v.outer; ++o) {
          for (int64_t in = 0; in < v.inner; ++in) {
            double gsum = 0.0;
            for (int64_t i = 0; i < v.n; ++i) gsum += g[At(v, o, i, in)];
            for (int64_t i = 0; i < v.n; ++i) {
              const int64_t at = At(v, o, i, in);
              ga[at] += g[at] - std::exp(y[at]) * gsum;
            }
          }
        }
      },
      "log_softmax");
  return Tensor(a.tape(), id);
}

Tensor Sigmoid(const Tensor& a) {
  const auto& av = a.Value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  int pa = a.node();
  int id = a.tape()->AddNode(a.shape(), std::move(out),
                             [pa](Tape& t, int self) {
                               const auto& g = t.GradBuf(self);
                               const auto& y = t.ValueAt(self);
                               auto& ga = t.GradBuf(pa);
                               for (size_t i = 0; i < g.size(); ++i) {
                                 ga[i] += g[i] * y[i] * (1.0 - y[i]);
                               }
                             },
                             "sigmoid");
  return Tensor(a.tape(), id);
}

Tensor VectorLength(const Tensor& a, int axis) {
  CheckAxis(a, axis, "vector_length");
  const AxisView v = MakeAxisView(a.shape(), axis);
  const auto& av = a.Value();
  std::vector<double> out(v.outer * v.inner);
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t in = 0; in < v.inner; ++in) {
      double ss = 0.0;
      for (int64_t i = 0; i < v.n; ++i) {
        const double x = av[At(v, o, i, in)];
        ss += x * x;
      }
      out[o * v.inner + in] = std::sqrt(ss);
    }
  }
  int pa = a.node();
  int id = a.tape()->AddNode(
      DropAxis(a.shape(), axis), std::move(out),
      [pa, v](Tape& t, int self) {
        const auto& g = t.GradBuf(self);
        const auto& y = t.ValueAt(self);
        const auto& x = t.ValueAt(pa);
        auto& ga = t.GradBuf(pa);
        for (int64_t o = 0; o < v.outer; ++o) {
          for (int64_t in = 0; in < v.inner; ++in) {
            const double len = y[o * v.inner + in];
            if (len == 0.0) continue;  // zero vector: subgradient 0
            const double go = g[o * v.inner + in];
            for (int64_t i = 0; i < v.n; ++i) {
              const int64_t at = At(v, o, i, in);
              ga[at] += go * x[at] / len;
            }
          }
        }
      },
      "vector_length");
  return Tensor(a.tape(), id);
}

Tensor Squash(const Tensor& a, int axis) {
  CheckAxis(a, axis, "squash");
  const AxisView v = MakeAxisView(a.shape(), axis);
  const auto& av = a.Value();
  std::vector<double> out(av.size());
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t in = 0; in < v.inner; ++in) {
      double ss = 0.0;
      for (int64_t i = 0; i < v.n; ++i) {
        const double x = av[At(v, o, i, in)];
        ss += x * x;
      }
      const double n = std::sqrt(ss);
      // g(n) = n / (1 + n^2); squash(0) = 0
      const double gn = n == 0.0 ? 0.0 : n / (1.0 + ss);
      for (int64_t i = 0; i < v.n; ++i) {
        out[At(v, o, i, in)] = gn * av[At(v, o, i, in)];
      }
    }
  }
  int pa = a.node();
  int id = a.tape()->AddNode(
      a.shape(), std::move(out),
      [pa, v](Tape& t, int self) {
        const auto& g = t.GradBuf(self);
        const auto& x = t.ValueAt(pa);
        auto& ga = t.GradBuf(pa);
        for (int64_t o = 0; o < v.outer; ++o) {
          for (int64_t in = 0; in < v.inner; ++in) {
            double ss = 0.0, sdot = 0.0;
            for (int64_t i = 0; i < v.n; ++i) {
              const int64_t at = At(v, o, i, in);
              ss += x[at] * x[at];
              sdot += x[at] * g[at];
            }
            const double n = std::sqrt(ss);
            if (n == 0.0) continue;  // gradient defined as 0 at the origin
            const double gn = n / (1.0 + ss);
            // g'(n) = (1 - n^2) / (1 + n^2)^2
            const double gp = (1.0 - ss) / ((1.0 + ss) * (1.0 + ss));
            const double coef = gp / n * sdot;
            for (int64_t i = 0; i < v.n; ++i) {
              const int64_t at = At(v, o, i, in);
              ga[at] += gn * g[at] + coef * x[at];
            }
          }
        }
      },
      "squash");
  return Tensor(a.tape(), id);
}

// ---------------------------------------------------------------------------
// Maxout / dropout
// ---------------------------------------------------------------------------

Tensor MaxElements(const std::vector<Tensor>& branches) {
  if (branches.empty()) throw ShapeError("max: no inputs");
  for (const Tensor& b : branches) CheckSameShape(branches[0], b, "max");
  const size_t n = branches[0].Value().size();
  std::vector<double> out(n);
  std::vector<uint8_t> winner(n, 0);
  for (size_t i = 0; i < n; ++i) out[i] = branches[0].Value()[i];
  for (size_t b = 1; b < branches.size(); ++b) {
    const auto& bv = branches[b].Value();
    for (size_t i = 0; i < n; ++i) {
      if (bv[i] > out[i]) {
        out[i] = bv[i];
        winner[i] = static_cast<uint8_t>(b);
      }
    }
  }
  std::vector<int> ids;
  for (const Tensor& b : branches) ids.push_back(b.node());
  int id = branches[0].tape()->AddNode(
      branches[0].shape(), std::move(out),
      [ids, winner](Tape& t, int self) {
        const auto& g = t.GradBuf(self);
        for (size_t i = 0; i < g.size(); ++i) {
          t.GradBuf(ids[winner[i]])[i] += g[i];
        }
      },
      "max");
  return Tensor(branches[0].tape(), id);
}

Tensor Dropout(const Tensor& a, double rate, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ShapeError("dropout: rate must be in [0,1)");
  }
  if (rate == 0.0) return a;
  const double keep = 1.0 - rate;
  const auto& av = a.Value();
  std::vector<double> mask(av.size());
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) {
    mask[i] = rng->Bernoulli(keep) ? 1.0 / keep : 0.0;
    out[i] = av[i] * mask[i];
  }
  int pa = a.node();
  int id = a.tape()->AddNode(a.shape(), std::move(out),
                             [pa, mask](Tape& t, int self) {
                               const auto& g = t.GradBuf(self);
                               auto& ga = t.GradBuf(pa);
                               for (size_t i = 0; i < g.size(); ++i) {
                                 ga[i] += g[i] * mask[i];
                               }
                             },
                             "dropout");
  return Tensor(a.tape(), id);
}

Tensor MaxoutBranch(const std::vector<Tensor>& branches, double dropout_rate,
                    bool training, Rng* rng) {
  if (!training || dropout_rate == 0.0) return MaxElements(branches);
  std::vector<Tensor> dropped;
  dropped.reserve(branches.size());
  for (const Tensor& b : branches) dropped.push_back(Dropout(b, dropout_rate, rng));
  return MaxElements(dropped);
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace {

struct ConvGeom {
  int in_t, in_f, cin, kt, kf, cout;
  int st, sf;
  int out_t, out_f;
  int pad_t, pad_f;  // leading pads
};

ConvGeom MakeConvGeom(const Tensor& input, const Tensor& kernel, int st, int sf,
                      Padding padding) {
  if (input.Rank() != 3 || kernel.Rank() != 4) {
    throw ShapeError("conv2d: expected input [T,F,C] and kernel [kt,kf,C,Co]");
  }
  ConvGeom g;
  g.in_t = input.Dim(0);
  g.in_f = input.Dim(1);
  g.cin = input.Dim(2);
  g.kt = kernel.Dim(0);
  g.kf = kernel.Dim(1);
  g.cout = kernel.Dim(3);
  if (kernel.Dim(2) != g.cin) {
    throw ShapeError("conv2d: kernel channels " + std::to_string(kernel.Dim(2)) +
                     " do not match input channels " + std::to_string(g.cin));
  }
  if (st < 1 || sf < 1) throw ShapeError("conv2d: stride must be >= 1");
  g.st = st;
  g.sf = sf;
  if (padding == Padding::kSame) {
    g.out_t = (g.in_t + st - 1) / st;
    g.out_f = (g.in_f + sf - 1) / sf;
    const int tot_t = std::max(0, (g.out_t - 1) * st + g.kt - g.in_t);
    const int tot_f = std::max(0, (g.out_f - 1) * sf + g.kf - g.in_f);
    // extra cell goes to the right/bottom
    g.pad_t = tot_t / 2;
    g.pad_f = tot_f / 2;
  } else {
    if (g.kt > g.in_t || g.kf > g.in_f) {
      throw ShapeError("conv2d: kernel larger than input under valid padding");
    }
    g.out_t = (g.in_t - g.kt) / st + 1;
    g.out_f = (g.in_f - g.kf) / sf + 1;
    g.pad_t = 0;
    g.pad_f = 0;
  }
  if (g.out_t < 1 || g.out_f < 1) {
    throw ShapeError("conv2d: zero-sized output");
  }
  return g;
}

}  // namespace

Tensor Conv2d(const Tensor& input, const Tensor& kernel, int stride_t,
              int stride_f, Padding padding) {
  CheckSameTape(input, kernel, "conv2d");
  const ConvGeom g = MakeConvGeom(input, kernel, stride_t, stride_f, padding);
  const auto& x = input.Value();
  const auto& w = kernel.Value();
  std::vector<double> out(static_cast<size_t>(g.out_t) * g.out_f * g.cout, 0.0);
  for (int ot = 0; ot < g.out_t; ++ot) {
    for (int of = 0; of < g.out_f; ++of) {
      for (int kt = 0; kt < g.kt; ++kt) {
        const int it = ot * g.st - g.pad_t + kt;
        if (it < 0 || it >= g.in_t) continue;
        for (int kf = 0; kf < g.kf; ++kf) {
          const int iff = of * g.sf - g.pad_f + kf;
          if (iff < 0 || iff >= g.in_f) continue;
          const double* xp = &x[(static_cast<size_t>(it) * g.in_f + iff) * g.cin];
          const double* wp = &w[((static_cast<size_t>(kt) * g.kf + kf) * g.cin) * g.cout];
          double* op = &out[(static_cast<size_t>(ot) * g.out_f + of) * g.cout];
          for (int ci = 0; ci < g.cin; ++ci) {
            const double xv = xp[ci];
            if (xv == 0.0) continue;
            const double* wrow = wp + static_cast<size_t>(ci) * g.cout;
            for (int co = 0; co < g.cout; ++co) op[co] += xv * wrow[co];
          }
        }
      }
    }
  }
  int px = input.node(), pw = kernel.node();
  int id = input.tape()->AddNode(
      {g.out_t, g.out_f, g.cout}, std::move(out),
      [px, pw, g](Tape& t, int self) {
        const auto& go = t.GradBuf(self);
        const auto& x2 = t.ValueAt(px);
        const auto& w2 = t.ValueAt(pw);
        auto& gx = t.GradBuf(px);
        auto& gw = t.GradBuf(pw);
        for (int ot = 0; ot < g.out_t; ++ot) {
          for (int of = 0; of < g.out_f; ++of) {
            const double* gp = &go[(static_cast<size_t>(ot) * g.out_f + of) * g.cout];
            for (int kt = 0; kt < g.kt; ++kt) {
              const int it = ot * g.st - g.pad_t + kt;
              if (it < 0 || it >= g.in_t) continue;
              for (int kf = 0; kf < g.kf; ++kf) {
                const int iff = of * g.sf - g.pad_f + kf;
                if (iff < 0 || iff >= g.in_f) continue;
                const size_t xoff = (static_cast<size_t>(it) * g.in_f + iff) * g.cin;
                const size_t woff = (static_cast<size_t>(kt) * g.kf + kf) * g.cin * g.cout;
                for (int ci = 0; ci < g.cin; ++ci) {
                  const double xv = x2[xoff + ci];
                  double acc = 0.0;
                  const double* wrow = &w2[woff + static_cast<size_t>(ci) * g.cout];
                  double* gwrow = &gw[woff + static_cast<size_t>(ci) * g.cout];
                  for (int co = 0; co < g.cout; ++co) {
                    acc += gp[co] * wrow[co];
                    gwrow[co] += gp[co] * xv;
                  }
                  gx[xoff + ci] += acc;
                }
              }
            }
          }
        }
      },
      "conv2d");
  return Tensor(input.tape(), id);
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

Tensor LayerNormSlice(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.Rank() != 3) throw ShapeError("layer_norm_slice: expected [T,H,D]");
  const int T = x.Dim(0), H = x.Dim(1), D = x.Dim(2);
  if (gain.shape() != Shape{H, D} || bias.shape() != Shape{H, D}) {
    throw ShapeError("layer_norm_slice: gain/bias must be [H,D]");
  }
  const int64_t n = static_cast<int64_t>(H) * D;
  const auto& xv = x.Value();
  const auto& gv = gain.Value();
  const auto& bv = bias.Value();
  std::vector<double> out(xv.size());
  std::vector<double> mean(T), sdev(T);
  std::vector<uint8_t> floored(T, 0);
  for (int t = 0; t < T; ++t) {
    const double* xp = &xv[t * n];
    double mu = 0.0;
    for (int64_t i = 0; i < n; ++i) mu += xp[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = xp[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    if (var < kVarianceFloor) {
      var = kVarianceFloor;
      floored[t] = 1;
    }
    const double sd = std::sqrt(var);
    mean[t] = mu;
    sdev[t] = sd;
    for (int64_t i = 0; i < n; ++i) {
      out[t * n + i] = (xp[i] - mu) / sd * gv[i] + bv[i];
    }
  }
  int pxn = x.node(), pg = gain.node(), pb = bias.node();
  int id = x.tape()->AddNode(
      x.shape(), std::move(out),
      [pxn, pg, pb, T, n, mean, sdev, floored](Tape& t, int self) {
        const auto& go = t.GradBuf(self);
        const auto& xv2 = t.ValueAt(pxn);
        const auto& gv2 = t.ValueAt(pg);
        auto& gx = t.GradBuf(pxn);
        auto& gg = t.GradBuf(pg);
        auto& gb = t.GradBuf(pb);
        std::vector<double> xhat(n), dxhat(n);
        for (int ti = 0; ti < T; ++ti) {
          const double* xp = &xv2[ti * n];
          const double* gp = &go[ti * n];
          const double inv = 1.0 / sdev[ti];
          double m_dx = 0.0, m_dxx = 0.0;
          for (int64_t i = 0; i < n; ++i) {
            xhat[i] = (xp[i] - mean[ti]) * inv;
            dxhat[i] = gp[i] * gv2[i];
            gg[i] += gp[i] * xhat[i];
            gb[i] += gp[i];
            m_dx += dxhat[i];
            m_dxx += dxhat[i] * xhat[i];
          }
          m_dx /= static_cast<double>(n);
          m_dxx /= static_cast<double>(n);
          if (floored[ti]) {
            // sdev is constant w.r.t. x when the floor is active
            for (int64_t i = 0; i < n; ++i) {
              gx[ti * n + i] += (dxhat[i] - m_dx) * inv;
            }
          } else {
            for (int64_t i = 0; i < n; ++i) {
              gx[ti * n + i] += (dxhat[i] - m_dx - xhat[i] * m_dxx) * inv;
            }
          }
        }
      },
      "layer_norm_slice");
  return Tensor(x.tape(), id);
}

namespace {

void CheckBnShapes(const Tensor& x, const Tensor& gain, const Tensor& bias,
                   const char* op) {
  if (x.Rank() != 3) throw ShapeError(std::string(op) + ": expected [T,F,C]");
  const int C = x.Dim(2);
  if (gain.shape() != Shape{C} || bias.shape() != Shape{C}) {
    throw ShapeError(std::string(op) + ": gain/bias must be [C]");
  }
}

}  // namespace

Tensor BatchNormTrain(const Tensor& x, const Tensor& gain, const Tensor& bias,
                      std::vector<double>* batch_mean,
                      std::vector<double>* batch_var) {
  CheckBnShapes(x, gain, bias, "batch_norm");
  const int C = x.Dim(2);
  const int64_t rows = static_cast<int64_t>(x.Dim(0)) * x.Dim(1);
  if (rows < 1) throw ShapeError("batch_norm: empty input");
  const auto& xv = x.Value();
  const auto& gv = gain.Value();
  const auto& bv = bias.Value();
  std::vector<double> mean(C, 0.0), var(C, 0.0), sdev(C);
  std::vector<uint8_t> floored(C, 0);
  for (int64_t r = 0; r < rows; ++r) {
    for (int c = 0; c < C; ++c) mean[c] += xv[r * C + c];
  }
  for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(rows);
  for (int64_t r = 0; r < rows; ++r) {
    for (int c = 0; c < C; ++c) {
      const double d = xv[r * C + c] - mean[c];
      var[c] += d * d;
    }
  }
  for (int c = 0; c < C; ++c) {
    var[c] /= static_cast<double>(rows);
    double v = var[c];
    if (v < kVarianceFloor) {
      v = kVarianceFloor;
      floored[c] = 1;
    }
    sdev[c] = std::sqrt(v);
  }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  std::vector<double> out(xv.size());
  for (int64_t r = 0; r < rows; ++r) {
    for (int c = 0; c < C; ++c) {
      out[r * C + c] = (xv[r * C + c] - mean[c]) / sdev[c] * gv[c] + bv[c];
    }
  }
  int px = x.node(), pg = gain.node(), pb = bias.node();
  int id = x.tape()->AddNode(
      x.shape(), std::move(out),
      [px, pg, pb, rows, C, mean, sdev, floored](Tape& t, int self) {
        const auto& go = t.GradBuf(self);
        const auto& xv2 = t.ValueAt(px);
        const auto& gv2 = t.ValueAt(pg);
        auto& gx = t.GradBuf(px);
        auto& gg = t.GradBuf(pg);
        auto& gb = t.GradBuf(pb);
        for (int c = 0; c < C; ++c) {
          const double inv = 1.0 / sdev[c];
          double m_dx = 0.0, m_dxx = 0.0;
          for (int64_t r = 0; r < rows; ++r) {
            const double xhat = (xv2[r * C + c] - mean[c]) * inv;
            const double dxh = go[r * C + c] * gv2[c];
            gg[c] += go[r * C + c] * xhat;
            gb[c] += go[r * C + c];
            m_dx += dxh;
            m_dxx += dxh * xhat;
          }
          m_dx /= static_cast<double>(rows);
          m_dxx /= static_cast<double>(rows);
          for (int64_t r = 0; r < rows; ++r) {
            const double xhat = (xv2[r * C + c] - mean[c]) * inv;
            const double dxh = go[r * C + c] * gv2[c];
            if (floored[c]) {
              gx[r * C + c] += (dxh - m_dx) * inv;
            } else {
              gx[r * C + c] += (dxh - m_dx - xhat * m_dxx) * inv;
            }
          }
        }
      },
      "batch_norm");
  return Tensor(x.tape(), id);
}

Tensor BatchNormInfer(const Tensor& x, const Tensor& gain, const Tensor& bias,
                      const std::vector<double>& running_mean,
                      const std::vector<double>& running_var) {
  CheckBnShapes(x, gain, bias, "batch_norm_infer");
  const int C = x.Dim(2);
  if (static_cast<int>(running_mean.size()) != C ||
      static_cast<int>(running_var.size()) != C) {
    throw ShapeError("batch_norm_infer: running stats must have size C");
  }
  const int64_t rows = static_cast<int64_t>(x.Dim(0)) * x.Dim(1);
  std::vector<double> sdev(C);
  for (int c = 0; c < C; ++c) {
    sdev[c] = std::sqrt(std::max(running_var[c], kVarianceFloor));
  }
  const auto& xv = x.Value();
  const auto& gv = gain.Value();
  const auto& bv = bias.Value();
  std::vector<double> out(xv.size());
  for (int64_t r = 0; r < rows; ++r) {
    for (int c = 0; c < C; ++c) {
      out[r * C + c] = (xv[r * C + c] - running_mean[c]) / sdev[c] * gv[c] + bv[c];
    }
  }
  int px = x.node(), pg = gain.node(), pb = bias.node();
  std::vector<double> rm = running_mean;
  int id = x.tape()->AddNode(
      x.shape(), std::move(out),
      [px, pg, pb, rows, C, rm, sdev](Tape& t, int self) {
        const auto& go = t.GradBuf(self);
        const auto& xv2 = t.ValueAt(px);
        const auto& gv2 = t.ValueAt(pg);
        auto& gx = t.GradBuf(px);
        auto& gg = t.GradBuf(pg);
        auto& gb = t.GradBuf(pb);
        for (int64_t r = 0; r < rows; ++r) {
          for (int c = 0; c < C; ++c) {
            const double xhat = (xv2[r * C + c] - rm[c]) / sdev[c];
            gx[r * C + c] += go[r * C + c] * gv2[c] / sdev[c];
            gg[c] += go[r * C + c] * xhat;
            gb[c] += go[r * C + c];
          }
        }
      },
      "batch_norm_infer");
  return Tensor(x.tape(), id);
}

// ---------------------------------------------------------------------------
// Capsule-layer kernels
// ---------------------------------------------------------------------------

Tensor CapsulePredict(const Tensor& u, const Tensor& w) {
  CheckSameTape(u, w, "capsule_predict");
  if (u.Rank() != 2 || w.Rank() != 4 || w.Dim(0) != u.Dim(0) ||
      w.Dim(2) != u.Dim(1)) {
    throw ShapeError("capsule_predict: got u " + ShapeToString(u.shape()) +
                     ", w " + ShapeToString(w.shape()));
  }
  const int N = u.Dim(0), Din = u.Dim(1), J = w.Dim(1), Dout = w.Dim(3);
  const auto& uv = u.Value();
  const auto& wv = w.Value();
  std::vector<double> out(static_cast<size_t>(N) * J * Dout, 0.0);
  for (int n = 0; n < N; ++n) {
    for (int j = 0; j < J; ++j) {
      const size_t woff = ((static_cast<size_t>(n) * J + j) * Din) * Dout;
      double* op = &out[(static_cast<size_t>(n) * J + j) * Dout];
      for (int d = 0; d < Din; ++d) {
        const double ud = uv[n * Din + d];
        if (ud == 0.0) continue;
        const double* wrow = &wv[woff + static_cast<size_t>(d) * Dout];
        for (int e = 0; e < Dout; ++e) op[e] += ud * wrow[e];
      }
    }
  }
  int pu = u.node(), pw = w.node();
  int id = u.tape()->AddNode(
      {N, J, Dout}, std::move(out),
      [pu, pw, N, Din, J, Dout](Tape& t, int self) {
        const auto& go = t.GradBuf(self);
        const auto& uv2 = t.ValueAt(pu);
        const auto& wv2 = t.ValueAt(pw);
        auto& gu = t.GradBuf(pu);
        auto& gw = t.GradBuf(pw);
        for (int n = 0; n < N; ++n) {
          for (int j = 0; j < J; ++j) {
            const size_t woff = ((static_cast<size_t>(n) * J + j) * Din) * Dout;
            const double* gp = &go[(static_cast<size_t>(n) * J + j) * Dout];
            for (int d = 0; d < Din; ++d) {
              const double ud = uv2[n * Din + d];
              const double* wrow = &wv2[woff + static_cast<size_t>(d) * Dout];
              double* gwrow = &gw[woff + static_cast<size_t>(d) * Dout];
              double acc = 0.0;
              for (int e = 0; e < Dout; ++e) {
                acc += gp[e] * wrow[e];
                gwrow[e] += ud * gp[e];
              }
              gu[n * Din + d] += acc;
            }
          }
        }
      },
      "capsule_predict");
  return Tensor(u.tape(), id);
}

Tensor CoupledSum(const Tensor& c, const Tensor& u_hat) {
  CheckSameTape(c, u_hat, "coupled_sum");
  if (c.Rank() != 2 || u_hat.Rank() != 3 || c.Dim(0) != u_hat.Dim(0) ||
      c.Dim(1) != u_hat.Dim(1)) {
    throw ShapeError("coupled_sum: got c " + ShapeToString(c.shape()) +
                     ", u_hat " + ShapeToString(u_hat.shape()));
  }
  const int N = c.Dim(0), J = c.Dim(1), E = u_hat.Dim(2);
  const auto& cv = c.Value();
  const auto& uv = u_hat.Value();
  std::vector<double> out(static_cast<size_t>(J) * E, 0.0);
  for (int n = 0; n < N; ++n) {
    for (int j = 0; j < J; ++j) {
      const double cj = cv[n * J + j];
      if (cj == 0.0) continue;
      const double* up = &uv[(static_cast<size_t>(n) * J + j) * E];
      double* op = &out[static_cast<size_t>(j) * E];
      for (int e = 0; e < E; ++e) op[e] += cj * up[e];
    }
  }
  int pc = c.node(), pu = u_hat.node();
  int id = c.tape()->AddNode(
      {J, E}, std::move(out),
      [pc, pu, N, J, E](Tape& t, int self) {
        const auto& go = t.GradBuf(self);
        const auto& cv2 = t.ValueAt(pc);
        const auto& uv2 = t.ValueAt(pu);
        auto& gc = t.GradBuf(pc);
        auto& gu = t.GradBuf(pu);
        for (int n = 0; n < N; ++n) {
          for (int j = 0; j < J; ++j) {
            const double* gp = &go[static_cast<size_t>(j) * E];
            const double* up = &uv2[(static_cast<size_t>(n) * J + j) * E];
            double* gup = &gu[(static_cast<size_t>(n) * J + j) * E];
            const double cj = cv2[n * J + j];
            double acc = 0.0;
            for (int e = 0; e < E; ++e) {
              acc += gp[e] * up[e];
              gup[e] += cj * gp[e];
            }
            gc[n * J + j] += acc;
          }
        }
      },
      "coupled_sum");
  return Tensor(c.tape(), id);
}

Tensor Agreement(const Tensor& u_hat, const Tensor& o) {
  CheckSameTape(u_hat, o, "agreement");
  if (u_hat.Rank() != 3 || o.Rank() != 2 || u_hat.Dim(1) != o.Dim(0) ||
      u_hat.Dim(2) != o.Dim(1)) {
    throw ShapeError("agreement: got u_hat " + ShapeToString(u_hat.shape()) +
                     ", o " + ShapeToString(o.shape()));
  }
  const int N = u_hat.Dim(0), J = u_hat.Dim(1), E = u_hat.Dim(2);
  const auto& uv = u_hat.Value();
  const auto& ov = o.Value();
  std::vector<double> out(static_cast<size_t>(N) * J, 0.0);
  for (int n = 0; n < N; ++n) {
    for (int j = 0; j < J; ++j) {
      const double* up = &uv[(static_cast<size_t>(n) * J + j) * E];
      const double* op = &ov[static_cast<size_t>(j) * E];
      double acc = 0.0;
      for (int e = 0; e < E; ++e) acc += up[e] * op[e];
      out[n * J + j] = acc;
    }
  }
  int pu = u_hat.node(), po = o.node();
  int id = u_hat.tape()->AddNode(
      {N, J}, std::move(out),
      [pu, po, N, J, E](Tape& t, int self) {
        const auto& go = t.GradBuf(self);
        const auto& uv2 = t.ValueAt(pu);
        const auto& ov2 = t.ValueAt(po);
        auto& gu = t.GradBuf(pu);
        auto& goo = t.GradBuf(po);
        for (int n = 0; n < N; ++n) {
          for (int j = 0; j < J; ++j) {
            const double gnj = go[n * J + j];
            if (gnj == 0.0) continue;
            const double* up = &uv2[(static_cast<size_t>(n) * J + j) * E];
            double* gup = &gu[(static_cast<size_t>(n) * J + j) * E];
            const double* op = &ov2[static_cast<size_t>(j) * E];
            double* gop = &goo[static_cast<size_t>(j) * E];
            for (int e = 0; e < E; ++e) {
              gup[e] += gnj * op[e];
              gop[e] += gnj * up[e];
            }
          }
        }
      },
      "agreement");
  return Tensor(u_hat.tape(), id);
}

Tensor MaskPaddingClass(const Tensor& r, int masked_col, PaddingMaskMode mode) {
  if (r.Rank() != 2) throw ShapeError("mask_padding_class: expected [N,J]");
  const int N = r.Dim(0), J = r.Dim(1);
  if (masked_col < 0 || masked_col >= J) {
    throw ShapeError("mask_padding_class: column " + std::to_string(masked_col) +
                     " out of range for J=" + std::to_string(J));
  }
  const auto& rv = r.Value();
  std::vector<double> out(rv.size(), 0.0);
  if (mode == PaddingMaskMode::kRenormalize) {
    for (int n = 0; n < N; ++n) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < J; ++j) {
        if (j != masked_col) mx = std::max(mx, rv[n * J + j]);
      }
      double sum = 0.0;
      for (int j = 0; j < J; ++j) {
        if (j == masked_col) continue;
        const double e = std::exp(rv[n * J + j] - mx);
        out[n * J + j] = e;
        sum += e;
      }
      for (int j = 0; j < J; ++j) {
        if (j != masked_col) out[n * J + j] /= sum;
      }
    }
  } else {
    for (int n = 0; n < N; ++n) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < J; ++j) mx = std::max(mx, rv[n * J + j]);
      double sum = 0.0;
      for (int j = 0; j < J; ++j) {
        const double e = std::exp(rv[n * J + j] - mx);
        out[n * J + j] = e;
        sum += e;
      }
      for (int j = 0; j < J; ++j) out[n * J + j] /= sum;
      out[n * J + masked_col] = 0.0;
    }
  }
  int pr = r.node();
  int id = r.tape()->AddNode(
      {N, J}, std::move(out),
      [pr, N, J, masked_col, mode](Tape& t, int self) {
        const auto& g = t.GradBuf(self);
        const auto& rv2 = t.ValueAt(pr);
        const auto& y = t.ValueAt(self);
        auto& gr = t.GradBuf(pr);
        if (mode == PaddingMaskMode::kRenormalize) {
          for (int n = 0; n < N; ++n) {
            double dot = 0.0;
            for (int j = 0; j < J; ++j) {
              if (j != masked_col) dot += g[n * J + j] * y[n * J + j];
            }
            for (int j = 0; j < J; ++j) {
              if (j == masked_col) continue;
              gr[n * J + j] += y[n * J + j] * (g[n * J + j] - dot);
            }
          }
        } else {
          // y_masked is the plain softmax with the column zeroed afterwards;
          // recompute the softmax to chain through it.
          for (int n = 0; n < N; ++n) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < J; ++j) mx = std::max(mx, rv2[n * J + j]);
            double sum = 0.0;
            std::vector<double> p(J);
            for (int j = 0; j < J; ++j) {
              p[j] = std::exp(rv2[n * J + j] - mx);
              sum += p[j];
            }
            double dot = 0.0;
            for (int j = 0; j < J; ++j) {
              p[j] /= sum;
              if (j != masked_col) dot += g[n * J + j] * p[j];
            }
            for (int j = 0; j < J; ++j) {
              const double gj = j == masked_col ? 0.0 : g[n * J + j];
              gr[n * J + j] += p[j] * (gj - dot);
            }
          }
        }
      },
      "mask_padding_class");
  return Tensor(r.tape(), id);
}

double CentralDifference(double* x, const std::function<double()>& eval,
                         double h) {
  const double saved = *x;
  *x = saved + h;
  const double fp = eval();
  *x = saved - h;
  const double fm = eval();
  *x = saved;
  return (fp - fm) / (2.0 * h);
}

}  // namespace seqcaps
