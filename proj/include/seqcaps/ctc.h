// seqcaps/ctc.h

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

#ifndef SEQCAPS_CTC_H_
#define SEQCAPS_CTC_H_

#include <optional>
#include <string>
#include <vector>

#include "seqcaps/tensor.h"

namespace seqcaps {

using LabelSeq = std::vector<int>;

class CtcError : public std::runtime_error {
 public:
  explicit CtcError(const std::string& what) : std::runtime_error(what) {}
};

// Ordered label set with the blank and the optional eos/padding symbols.
struct LabelAlphabet {
  std::vector<std::string> symbols;
  int blank_index = 0;
  std::optional<int> eos_index;
  std::optional<int> padding_index;

  int NumClasses() const { return static_cast<int>(symbols.size()); }
  int IndexOf(const std::string& symbol) const;  // -1 when absent
  void Validate() const;
};

// Collapse map: merge label runs, then drop blanks.
LabelSeq Collapse(const LabelSeq& path, int blank_index, int num_classes);

// Smallest path length that can emit `labels` (adjacent repeats force a
// separating blank). Sequences needing more frames than T are unreachable.
int MinPathLength(const LabelSeq& labels);

// Forward/backward tables in log space over the blank-interleaved label
// sequence; alpha and beta both include the emission at their own frame.
struct CtcLattice {
  int T = 0;
  int S = 0;  // 2*|labels|+1
  std::vector<double> log_alpha;  // T x S
  std::vector<double> log_beta;   // T x S
  double log_prob = 0.0;          // log p(labels | inputs)

  double Alpha(int t, int s) const { return log_alpha[t * S + s]; }
  double Beta(int t, int s) const { return log_beta[t * S + s]; }
  // Total log probability evaluated from the alpha/beta product at frame t;
  // equals log_prob for every cut.
  double TotalLogProbAtCut(int t, const std::vector<double>& log_probs,
                           const LabelSeq& labels, int blank_index) const;
};

// log_probs: row-major T x V with exp rows summing to 1.
CtcLattice BuildCtcLattice(const std::vector<double>& log_probs, int T, int V,
                           const LabelSeq& labels, int blank_index);

// Differentiable loss -log p(labels | log_probs); log_probs is a [T,V]
// tensor. Throws CtcError when the label sequence is unreachable (the loss
// would be infinite).
Tensor CtcLoss(const Tensor& log_probs, const LabelSeq& labels,
               int blank_index);

// Non-tape loss for plain arrays (same lattice as CtcLoss).
double CtcLossValue(const std::vector<double>& log_probs, int T, int V,
                    const LabelSeq& labels, int blank_index);

// Exact loss by enumerating all V^T paths. Requires V^T <= 1e7.
double BruteForceLoss(const std::vector<double>& log_probs, int T, int V,
                      const LabelSeq& labels, int blank_index);

// Per-frame argmax (lowest index on ties), then collapse.
LabelSeq GreedyDecode(const std::vector<double>& log_probs, int T, int V,
                      int blank_index);

// Label-synchronous prefix beam search without a language model. Ties in the
// beam are broken lexicographically by label index.
LabelSeq PrefixBeamDecode(const std::vector<double>& log_probs, int T, int V,
                          int blank_index, int beam_width);

// Marginal probability of `labels` given the frame posteriors (sum over all
// collapsing paths); -inf when unreachable.
double SequenceLogProb(const std::vector<double>& log_probs, int T, int V,
                       const LabelSeq& labels, int blank_index);

}  // namespace seqcaps

#endif  // SEQCAPS_CTC_H_
