// seqcaps/params.cc

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

#include "seqcaps/params.h"

#include <cmath>
#include <stdexcept>

namespace seqcaps {

int ParamStore::Add(std::string name, Shape shape, std::vector<double> value,
                    bool learnable) {
  if (index_.count(name)) {
    throw std::logic_error("parameter registered twice: " + name);
  }
  if (NumElements(shape) != static_cast<int64_t>(value.size())) {
    throw ShapeError("parameter " + name + ": value count does not match shape");
  }
  const int id = static_cast<int>(items_.size());
  index_[name] = id;
  items_.push_back(ParamTensor{std::move(name), std::move(shape),
                               std::move(value), learnable});
  return id;
}

int ParamStore::IndexOf(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

ParamTensor& ParamStore::Named(const std::string& name) {
  const int id = IndexOf(name);
  if (id < 0) throw std::out_of_range("no parameter named " + name);
  return items_[id];
}

const ParamTensor& ParamStore::Named(const std::string& name) const {
  const int id = IndexOf(name);
  if (id < 0) throw std::out_of_range("no parameter named " + name);
  return items_[id];
}

int64_t ParamStore::LearnableScalars() const {
  int64_t n = 0;
  for (const auto& p : items_) {
    if (p.learnable) n += NumElements(p.shape);
  }
  return n;
}

double FanAvgBound(int fan_in, int fan_out, double scale) {
  if (fan_in + fan_out <= 0) {
    throw std::invalid_argument("fan-avg init: zero fan");
  }
  const double n_init = (fan_in + fan_out) / 2.0;
  return std::sqrt(3.0 * scale / n_init);
}

std::vector<double> InitFanAvg(const Shape& shape, int fan_in, int fan_out,
                               double scale, Rng* rng) {
  const double bound = FanAvgBound(fan_in, fan_out, scale);
  std::vector<double> v(NumElements(shape));
  for (double& x : v) x = rng->Uniform(-bound, bound);
  return v;
}

}  // namespace seqcaps
