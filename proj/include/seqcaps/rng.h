// seqcaps/rng.h

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

#ifndef SEQCAPS_RNG_H_
#define SEQCAPS_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>

namespace seqcaps {

// Deterministic RNG. All randomness in a run flows from one master seed;
// derived streams keep resume and replay bit-exact (uniform mapping is done
// from raw bits, not through distribution objects, so draws are identical
// across standard library implementations).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  // Stream derivation: mix(seed, fnv1a(stream), index).
  static Rng Derive(uint64_t seed, std::string_view stream, uint64_t index = 0);

  uint64_t NextU64() { return engine_(); }

  // Uniform on [0, 1) with 53 random mantissa bits.
  double Uniform() {
    return static_cast<double>(NextU64() >> 11) * 0x1.0p-53;
  }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // Inclusive bounds.
  int UniformInt(int lo, int hi) {
    return lo + static_cast<int>(NextU64() % static_cast<uint64_t>(hi - lo + 1));
  }

  bool Bernoulli(double p) { return Uniform() < p; }

  // Box-Muller.
  double Normal();

 private:
  std::mt19937_64 engine_;
};

uint64_t MixSeed(uint64_t a, uint64_t b);

}  // namespace seqcaps

#endif  // SEQCAPS_RNG_H_
