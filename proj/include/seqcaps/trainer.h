// seqcaps/trainer.h

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

#ifndef SEQCAPS_TRAINER_H_
#define SEQCAPS_TRAINER_H_

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seqcaps/dataio.h"
#include "seqcaps/model.h"

namespace seqcaps {

class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss or gradient during optimization.
class DivergenceError : public TrainError {
 public:
  explicit DivergenceError(const std::string& what) : TrainError(what) {}
};

struct TrainConfig {
  int warmup_steps = 400;  // n_w
  // Scale factor schedule: (first epoch, kappa), ascending by epoch; entry 0
  // applies from epoch 0.
  std::vector<std::pair<int, double>> kappa_schedule = {{0, 0.5}};
  int batch_frames = 2500;
  int epochs = 10;
  uint64_t seed = 1;
  double init_scale = 1.0;  // alpha_s (used at model construction)
  int average_last = 1;     // checkpoints entering the final average

  void Validate() const;
  double KappaAt(int epoch) const;
};

// rate = kappa * min(n_s^-0.5, n_s * n_w^-1.5); peaks exactly at n_s = n_w.
double LearningRate(int64_t step, int64_t warmup_steps, double kappa);

// Bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8) over the learnable
// tensors of a store.
class AdamState {
 public:
  explicit AdamState(const ParamStore& params);

  // grads: by param index (non-learnable entries ignored). Throws TrainError
  // on a non-finite gradient and leaves the parameters untouched.
  void Step(ParamStore* params, const std::vector<std::vector<double>>& grads,
            double rate);

  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t n) { step_count_ = n; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

 private:
  std::vector<std::vector<double>> m_, v_;
  int64_t step_count_ = 0;
};

// Greedy packing of length-sorted utterances so that every batch's padded
// frame total (max length x batch size) stays within the budget. Returns
// indices into `utterances`; every utterance appears exactly once.
std::vector<std::vector<int>> BatchByFrames(const std::vector<Utterance>& utterances,
                                            int batch_frames);

// Full trainable state: parameter snapshot (including running statistics),
// optimizer moments and counters. Little-endian binary file of named f64
// tensors.
struct Checkpoint {
  std::vector<ParamTensor> tensors;
  std::vector<std::vector<double>> adam_m, adam_v;
  int64_t step = 0;
  int epoch = 0;

  static Checkpoint Capture(const ParamStore& params, const AdamState& adam,
                            int64_t step, int epoch);
  static Checkpoint Capture(const ParamStore& params);
  void Restore(ParamStore* params, AdamState* adam) const;
};

void SaveCheckpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint LoadCheckpoint(const std::string& path);

// Element-wise mean of parameter tensors; optimizer moments and counters are
// taken from the last checkpoint.
Checkpoint AverageCheckpoints(const std::vector<Checkpoint>& checkpoints);

struct StepRecord {
  int epoch = 0;
  int64_t step = 0;
  double train_loss = 0.0;  // batch mean of per-slice losses
  std::optional<double> valid_loss;
  std::optional<double> valid_error;
};

struct TrainResult {
  std::vector<StepRecord> curve;          // one record per optimizer step
  std::vector<Checkpoint> history;        // one checkpoint per epoch
  Checkpoint final_checkpoint;            // average of the last `average_last`
  int64_t steps = 0;
};

using EpochCallback =
    std::function<void(int epoch, const Checkpoint&, const StepRecord&)>;

// Deterministic under (config.seed); per-epoch shuffling and dropout streams
// are derived from (seed, epoch) so a run resumed from an epoch checkpoint
// reproduces the uninterrupted run exactly. The validation loss/error are
// computed in inference mode after each epoch. Diverging losses (non-finite)
// raise TrainError.
TrainResult Train(SrfModel* model, const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& valid_set,
                  const TrainConfig& config,
                  const Checkpoint* resume_from = nullptr,
                  const EpochCallback& on_epoch = nullptr);

// Mean per-slice loss over a set, inference mode.
double EvaluateLoss(SrfModel* model, const std::vector<Utterance>& data);
// Corpus token error rate, inference mode. beam_width >= 1 decodes with the
// prefix beam; 0 decodes greedily.
double EvaluateErrorRate(SrfModel* model, const std::vector<Utterance>& data,
                         int beam_width = 100);

}  // namespace seqcaps

#endif  // SEQCAPS_TRAINER_H_
