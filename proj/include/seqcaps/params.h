// seqcaps/params.h

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

#ifndef SEQCAPS_PARAMS_H_
#define SEQCAPS_PARAMS_H_

#include <map>
#include <string>
#include <vector>

#include "seqcaps/rng.h"
#include "seqcaps/tensor.h"

namespace seqcaps {

// Named model state. Learnable tensors are updated by the optimizer;
// non-learnable ones (running statistics, counters) ride along in
// checkpoints. Registration order is stable, so a fixed seed reproduces the
// same initial values bit for bit.
struct ParamTensor {
  std::string name;
  Shape shape;
  std::vector<double> value;
  bool learnable = true;
};

class ParamStore {
 public:
  int Add(std::string name, Shape shape, std::vector<double> value,
          bool learnable = true);
  int IndexOf(const std::string& name) const;  // -1 when absent
  bool Has(const std::string& name) const { return IndexOf(name) >= 0; }

  ParamTensor& At(int index) { return items_[index]; }
  const ParamTensor& At(int index) const { return items_[index]; }
  ParamTensor& Named(const std::string& name);
  const ParamTensor& Named(const std::string& name) const;

  int Count() const { return static_cast<int>(items_.size()); }
  int64_t LearnableScalars() const;

 private:
  std::vector<ParamTensor> items_;
  std::map<std::string, int> index_;
};

// Uniform fan-avg bound: sqrt(3 * scale / n_init) with
// n_init = (fan_in + fan_out) / 2.
double FanAvgBound(int fan_in, int fan_out, double scale);

// i.i.d. uniform draws on [-bound, +bound].
std::vector<double> InitFanAvg(const Shape& shape, int fan_in, int fan_out,
                               double scale, Rng* rng);

}  // namespace seqcaps

#endif  // SEQCAPS_PARAMS_H_
