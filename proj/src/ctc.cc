// seqcaps/ctc.cc

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

#include "seqcaps/ctc.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace seqcaps {

namespace {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

double LogAdd(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

// Expanded-state label: blanks at even positions, labels at odd ones.
inline int StateLabel(const LabelSeq& labels, int blank_index, int s) {
  return (s % 2 == 0) ? blank_index : labels[s / 2];
}

void CheckLabels(const LabelSeq& labels, int V, int blank_index) {
  for (int y : labels) {
    if (y < 0 || y >= V) {
      throw CtcError("label index " + std::to_string(y) +
                     " outside alphabet of size " + std::to_string(V));
    }
    if (y == blank_index) {
      throw CtcError("label sequence contains the blank symbol");
    }
  }
}

void CheckRowsNormalized(const std::vector<double>& log_probs, int T, int V) {
  for (int t = 0; t < T; ++t) {
    double sum = 0.0;
    for (int v = 0; v < V; ++v) sum += std::exp(log_probs[t * V + v]);
    if (std::abs(sum - 1.0) > 1e-3) {
      throw CtcError("frame " + std::to_string(t) +
                     " probabilities sum to " + std::to_string(sum));
    }
  }
}

}  // namespace

int LabelAlphabet::IndexOf(const std::string& symbol) const {
  for (size_t i = 0; i < symbols.size(); ++i) {
    if (symbols[i] == symbol) return static_cast<int>(i);
  }
  return -1;
}

void LabelAlphabet::Validate() const {
  if (symbols.empty()) throw CtcError("alphabet: no symbols");
  std::set<std::string> seen(symbols.begin(), symbols.end());
  if (seen.size() != symbols.size()) {
    throw CtcError("alphabet: duplicate symbols");
  }
  if (blank_index < 0 || blank_index >= NumClasses()) {
    throw CtcError("alphabet: blank index out of range");
  }
  for (const auto& opt : {eos_index, padding_index}) {
    if (opt && (*opt < 0 || *opt >= NumClasses() || *opt == blank_index)) {
      throw CtcError("alphabet: eos/padding index invalid");
    }
  }
}

LabelSeq Collapse(const LabelSeq& path, int blank_index, int num_classes) {
  LabelSeq out;
  int prev = -1;
  for (int y : path) {
    if (y < 0 || y >= num_classes) {
      throw CtcError("path symbol " + std::to_string(y) + " outside alphabet");
    }
    if (y != prev && y != blank_index) out.push_back(y);
    prev = y;
  }
  return out;
}

int MinPathLength(const LabelSeq& labels) {
  int n = static_cast<int>(labels.size());
  for (size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++n;
  }
  return n;
}

CtcLattice BuildCtcLattice(const std::vector<double>& log_probs, int T, int V,
                           const LabelSeq& labels, int blank_index) {
  CheckLabels(labels, V, blank_index);
  if (MinPathLength(labels) > T) {
    throw CtcError("label sequence unreachable: needs " +
                   std::to_string(MinPathLength(labels)) + " frames, have " +
                   std::to_string(T));
  }
  const int U = static_cast<int>(labels.size());
  const int S = 2 * U + 1;
  CtcLattice lat;
  lat.T = T;
  lat.S = S;
  lat.log_alpha.assign(static_cast<size_t>(T) * S, kLogZero);
  lat.log_beta.assign(static_cast<size_t>(T) * S, kLogZero);

  auto emit = [&](int t, int s) {
    return log_probs[t * V + StateLabel(labels, blank_index, s)];
  };
  auto skip_allowed = [&](int s) {
    // From s-2 to s: only label states with a different preceding label.
    return s % 2 == 1 && s >= 2 && labels[s / 2] != labels[s / 2 - 1];
  };

  lat.log_alpha[0] = emit(0, 0);
  if (S > 1) lat.log_alpha[1] = emit(0, 1);
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double a = lat.Alpha(t - 1, s);
      if (s >= 1) a = LogAdd(a, lat.Alpha(t - 1, s - 1));
      if (skip_allowed(s)) a = LogAdd(a, lat.Alpha(t - 1, s - 2));
      if (a != kLogZero) lat.log_alpha[t * S + s] = a + emit(t, s);
    }
  }
  double lp = lat.Alpha(T - 1, S - 1);
  if (S > 1) lp = LogAdd(lp, lat.Alpha(T - 1, S - 2));
  lat.log_prob = lp;

  lat.log_beta[(T - 1) * S + (S - 1)] = emit(T - 1, S - 1);
  if (S > 1) lat.log_beta[(T - 1) * S + (S - 2)] = emit(T - 1, S - 2);
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double b = lat.Beta(t + 1, s);
      if (s + 1 < S) b = LogAdd(b, lat.Beta(t + 1, s + 1));
      if (s + 2 < S && skip_allowed(s + 2)) b = LogAdd(b, lat.Beta(t + 1, s + 2));
      if (b != kLogZero) lat.log_beta[t * S + s] = b + emit(t, s);
    }
  }
  return lat;
}

double CtcLattice::TotalLogProbAtCut(int t, const std::vector<double>& log_probs,
                                     const LabelSeq& labels,
                                     int blank_index) const {
  const int V = static_cast<int>(log_probs.size()) / T;
  double total = kLogZero;
  for (int s = 0; s < S; ++s) {
    const double a = Alpha(t, s);
    const double b = Beta(t, s);
    if (a == kLogZero || b == kLogZero) continue;
    // Both tables include the emission at t; divide once.
    total = LogAdd(total, a + b - log_probs[t * V + StateLabel(labels, blank_index, s)]);
  }
  return total;
}

double CtcLossValue(const std::vector<double>& log_probs, int T, int V,
                    const LabelSeq& labels, int blank_index) {
  CheckRowsNormalized(log_probs, T, V);
  return -BuildCtcLattice(log_probs, T, V, labels, blank_index).log_prob;
}

Tensor CtcLoss(const Tensor& log_probs, const LabelSeq& labels,
               int blank_index) {
  if (log_probs.Rank() != 2) throw ShapeError("ctc_loss: expected [T,V]");
  const int T = log_probs.Dim(0);
  const int V = log_probs.Dim(1);
  const auto& lp = log_probs.Value();
  CheckRowsNormalized(lp, T, V);
  CtcLattice lat = BuildCtcLattice(lp, T, V, labels, blank_index);
  if (lat.log_prob == kLogZero) {
    throw CtcError("label sequence has zero probability");
  }

  // d(-log p)/d(log_probs[t,k]) =
  //   -exp( logsum_{s: label(s)=k} (alpha_t(s) + beta_t(s)) - log p - log_probs[t,k] )
  std::vector<double> grad(lp.size(), 0.0);
  for (int t = 0; t < T; ++t) {
    std::vector<double> acc(V, kLogZero);
    for (int s = 0; s < lat.S; ++s) {
      const double a = lat.Alpha(t, s);
      const double b = lat.Beta(t, s);
      if (a == kLogZero || b == kLogZero) continue;
      const int k = StateLabel(labels, blank_index, s);
      acc[k] = LogAdd(acc[k], a + b);
    }
    for (int k = 0; k < V; ++k) {
      if (acc[k] == kLogZero) continue;
      grad[t * V + k] = -std::exp(acc[k] - lat.log_prob - lp[t * V + k]);
    }
  }
  int p = log_probs.node();
  int id = log_probs.tape()->AddNode(
      {1}, {-lat.log_prob},
      [p, grad](Tape& t, int self) {
        const double g = t.GradBuf(self)[0];
        auto& gp = t.GradBuf(p);
        for (size_t i = 0; i < grad.size(); ++i) gp[i] += g * grad[i];
      },
      "ctc_loss");
  return Tensor(log_probs.tape(), id);
}

double BruteForceLoss(const std::vector<double>& log_probs, int T, int V,
                      const LabelSeq& labels, int blank_index) {
  CheckLabels(labels, V, blank_index);
  double paths = std::pow(static_cast<double>(V), T);
  if (paths > 1e7) {
    throw CtcError("brute force: V^T too large (" + std::to_string(paths) + ")");
  }
  LabelSeq path(T, 0);
  double total = 0.0;
  const int64_t count = static_cast<int64_t>(paths);
  for (int64_t code = 0; code < count; ++code) {
    int64_t c = code;
    double lp = 0.0;
    for (int t = 0; t < T; ++t) {
      path[t] = static_cast<int>(c % V);
      c /= V;
      lp += log_probs[t * V + path[t]];
    }
    if (Collapse(path, blank_index, V) == labels) total += std::exp(lp);
  }
  if (total == 0.0) {
    throw CtcError("label sequence unreachable under brute-force enumeration");
  }
  return -std::log(total);
}

LabelSeq GreedyDecode(const std::vector<double>& log_probs, int T, int V,
                      int blank_index) {
  LabelSeq path(T);
  for (int t = 0; t < T; ++t) {
    int best = 0;
    for (int v = 1; v < V; ++v) {
      if (log_probs[t * V + v] > log_probs[t * V + best]) best = v;
    }
    path[t] = best;
  }
  return Collapse(path, blank_index, V);
}

LabelSeq PrefixBeamDecode(const std::vector<double>& log_probs, int T, int V,
                          int blank_index, int beam_width) {
  if (beam_width < 1) throw CtcError("beam width must be >= 1");
  struct Mass {
    double blank = kLogZero;     // prefix prob with paths ending in blank
    double nonblank = kLogZero;  // paths ending in the prefix's last label
    double Total() const { return LogAdd(blank, nonblank); }
  };
  // std::map keeps prefixes in lexicographic order, which makes every
  // tie-break below deterministic.
  std::map<LabelSeq, Mass> beam;
  beam[{}].blank = 0.0;

  for (int t = 0; t < T; ++t) {
    std::map<LabelSeq, Mass> next;
    for (const auto& [prefix, mass] : beam) {
      const double total = mass.Total();
      // Emit blank: prefix unchanged.
      {
        Mass& m = next[prefix];
        m.blank = LogAdd(m.blank, total + log_probs[t * V + blank_index]);
      }
      for (int v = 0; v < V; ++v) {
        if (v == blank_index) continue;
        const double pv = log_probs[t * V + v];
        if (!prefix.empty() && prefix.back() == v) {
          // Repeat of the last label extends the same prefix only when the
          // previous frame ended in it; after a blank it starts a new label.
          Mass& same = next[prefix];
          same.nonblank = LogAdd(same.nonblank, mass.nonblank + pv);
          LabelSeq ext = prefix;
          ext.push_back(v);
          Mass& m = next[ext];
          m.nonblank = LogAdd(m.nonblank, mass.blank + pv);
        } else {
          LabelSeq ext = prefix;
          ext.push_back(v);
          Mass& m = next[ext];
          m.nonblank = LogAdd(m.nonblank, total + pv);
        }
      }
    }
    if (static_cast<int>(next.size()) > beam_width) {
      std::vector<std::pair<double, const LabelSeq*>> ranked;
      ranked.reserve(next.size());
      for (const auto& [prefix, mass] : next) {
        ranked.emplace_back(mass.Total(), &prefix);
      }
      // Higher probability first; equal probabilities keep map (lexicographic)
      // order because the sort is stable.
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      std::map<LabelSeq, Mass> pruned;
      for (int i = 0; i < beam_width; ++i) {
        pruned[*ranked[i].second] = next[*ranked[i].second];
      }
      next = std::move(pruned);
    }
    beam = std::move(next);
  }

  const LabelSeq* best = nullptr;
  double best_lp = kLogZero;
  for (const auto& [prefix, mass] : beam) {
    const double lp = mass.Total();
    if (best == nullptr || lp > best_lp) {  // ties keep the earlier (lexicographic) prefix
      best = &prefix;
      best_lp = lp;
    }
  }
  return best ? *best : LabelSeq{};
}

double SequenceLogProb(const std::vector<double>& log_probs, int T, int V,
                       const LabelSeq& labels, int blank_index) {
  if (MinPathLength(labels) > T) return kLogZero;
  return BuildCtcLattice(log_probs, T, V, labels, blank_index).log_prob;
}

}  // namespace seqcaps
