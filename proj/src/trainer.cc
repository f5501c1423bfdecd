// seqcaps/trainer.cc

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

#include "seqcaps/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

#include "seqcaps/metrics.h"

namespace seqcaps {

void TrainConfig::Validate() const {
  if (warmup_steps < 1) throw TrainError("train: warmup steps must be >= 1");
  if (kappa_schedule.empty()) throw TrainError("train: empty kappa schedule");
  for (size_t i = 0; i < kappa_schedule.size(); ++i) {
    if (kappa_schedule[i].second <= 0.0) {
      throw TrainError("train: kappa values must be > 0");
    }
    if (i > 0 && kappa_schedule[i].first <= kappa_schedule[i - 1].first) {
      throw TrainError("train: kappa schedule epochs must ascend");
    }
  }
  if (batch_frames < 1) throw TrainError("train: batch frames must be >= 1");
  if (epochs < 0) throw TrainError("train: epochs must be >= 0");
  if (average_last < 1) throw TrainError("train: average_last must be >= 1");
}

double TrainConfig::KappaAt(int epoch) const {
  double kappa = kappa_schedule.front().second;
  for (const auto& [from, value] : kappa_schedule) {
    if (epoch >= from) kappa = value;
  }
  return kappa;
}

double LearningRate(int64_t step, int64_t warmup_steps, double kappa) {
  if (step < 1) throw TrainError("learning rate: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return kappa * std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

AdamState::AdamState(const ParamStore& params) {
  m_.resize(params.Count());
  v_.resize(params.Count());
  for (int i = 0; i < params.Count(); ++i) {
    if (params.At(i).learnable) {
      m_[i].assign(params.At(i).value.size(), 0.0);
      v_[i].assign(params.At(i).value.size(), 0.0);
    }
  }
}

void AdamState::Step(ParamStore* params,
                     const std::vector<std::vector<double>>& grads, double rate) {
  for (int i = 0; i < params->Count(); ++i) {
    if (!params->At(i).learnable) continue;
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        throw DivergenceError("adam: non-finite gradient for " +
                              params->At(i).name);
      }
    }
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_count_));
  for (int i = 0; i < params->Count(); ++i) {
    if (!params->At(i).learnable) continue;
    auto& value = params->At(i).value;
    const auto& g = grads[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < value.size(); ++k) {
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[k];
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      value[k] -= rate * mhat / (std::sqrt(vhat) + kEpsilon);
    }
  }
}

std::vector<std::vector<int>> BatchByFrames(const std::vector<Utterance>& utterances,
                                            int batch_frames) {
  std::vector<int> order(utterances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (utterances[a].frames != utterances[b].frames) {
      return utterances[a].frames > utterances[b].frames;
    }
    return utterances[a].id < utterances[b].id;
  });
  std::vector<std::vector<int>> batches;
  std::vector<int> current;
  int max_len = 0;
  for (int idx : order) {
    const int len = utterances[idx].frames;
    if (len > batch_frames) {
      throw TrainError("batching: utterance " + utterances[idx].id + " has " +
                       std::to_string(len) + " frames, budget is " +
                       std::to_string(batch_frames));
    }
    const int new_max = std::max(max_len, len);
    const int padded = new_max * (static_cast<int>(current.size()) + 1);
    if (!current.empty() && padded > batch_frames) {
      batches.push_back(std::move(current));
      current.clear();
      max_len = 0;
    }
    current.push_back(idx);
    max_len = std::max(max_len, len);
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

Checkpoint Checkpoint::Capture(const ParamStore& params, const AdamState& adam,
                               int64_t step, int epoch) {
  Checkpoint c = Capture(params);
  c.adam_m = adam.first_moments();
  c.adam_v = adam.second_moments();
  c.step = step;
  c.epoch = epoch;
  return c;
}

Checkpoint Checkpoint::Capture(const ParamStore& params) {
  Checkpoint c;
  c.tensors.reserve(params.Count());
  for (int i = 0; i < params.Count(); ++i) c.tensors.push_back(params.At(i));
  c.adam_m.resize(params.Count());
  c.adam_v.resize(params.Count());
  return c;
}

void Checkpoint::Restore(ParamStore* params, AdamState* adam) const {
  if (static_cast<int>(tensors.size()) != params->Count()) {
    throw TrainError("checkpoint: tensor count mismatch");
  }
  for (int i = 0; i < params->Count(); ++i) {
    auto& dst = params->At(i);
    const auto& src = tensors[i];
    if (src.name != dst.name || src.shape != dst.shape) {
      throw TrainError("checkpoint: tensor " + src.name +
                       " does not match the model architecture");
    }
    dst.value = src.value;
  }
  if (adam) {
    adam->set_step_count(step);
    for (int i = 0; i < params->Count(); ++i) {
      if (!params->At(i).learnable) continue;
      if (!adam_m[i].empty()) {
        adam->first_moments()[i] = adam_m[i];
        adam->second_moments()[i] = adam_v[i];
      }
    }
  }
}

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'Q', 'C', 'P', 'K', 'T', '0', '1'};

void WriteU32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void WriteU64(std::ofstream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t ReadU32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
uint64_t ReadU64(std::ifstream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void WriteNamedTensor(std::ofstream& out, const std::string& name,
                      const Shape& shape, const std::vector<double>& value,
                      bool learnable) {
  WriteU32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  WriteU32(out, learnable ? 1 : 0);
  WriteU32(out, static_cast<uint32_t>(shape.size()));
  for (int d : shape) WriteU64(out, static_cast<uint64_t>(d));
  out.write(reinterpret_cast<const char*>(value.data()),
            static_cast<std::streamsize>(value.size() * sizeof(double)));
}

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> value;
  bool learnable = true;
};

NamedTensor ReadNamedTensor(std::ifstream& in) {
  NamedTensor t;
  const uint32_t name_len = ReadU32(in);
  t.name.resize(name_len);
  in.read(t.name.data(), name_len);
  t.learnable = ReadU32(in) != 0;
  const uint32_t rank = ReadU32(in);
  t.shape.resize(rank);
  int64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    t.shape[i] = static_cast<int>(ReadU64(in));
    n *= t.shape[i];
  }
  t.value.resize(n);
  in.read(reinterpret_cast<char*>(t.value.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in.good()) throw TrainError("checkpoint: truncated tensor record");
  return t;
}

}  // namespace

void SaveCheckpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  WriteU32(out, 1);  // version
  uint32_t count = static_cast<uint32_t>(ckpt.tensors.size());
  for (size_t i = 0; i < ckpt.tensors.size(); ++i) {
    if (!ckpt.adam_m[i].empty()) count += 2;
  }
  WriteU32(out, count + 2);  // + step + epoch
  for (size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const auto& t = ckpt.tensors[i];
    WriteNamedTensor(out, t.name, t.shape, t.value, t.learnable);
    if (!ckpt.adam_m[i].empty()) {
      const Shape s{static_cast<int>(ckpt.adam_m[i].size())};
      WriteNamedTensor(out, "optim/m/" + t.name, s, ckpt.adam_m[i], false);
      WriteNamedTensor(out, "optim/v/" + t.name, s, ckpt.adam_v[i], false);
    }
  }
  WriteNamedTensor(out, "optim/step", {1}, {static_cast<double>(ckpt.step)}, false);
  WriteNamedTensor(out, "optim/epoch", {1}, {static_cast<double>(ckpt.epoch)}, false);
  if (!out.good()) throw TrainError("checkpoint write failed for " + path);
}

Checkpoint LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrainError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw TrainError("checkpoint " + path + ": bad magic");
  }
  const uint32_t version = ReadU32(in);
  if (version != 1) {
    throw TrainError("checkpoint " + path + ": unsupported version " +
                     std::to_string(version));
  }
  const uint32_t count = ReadU32(in);
  Checkpoint ckpt;
  std::vector<NamedTensor> moments;
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t = ReadNamedTensor(in);
    if (t.name == "optim/step") {
      ckpt.step = static_cast<int64_t>(t.value[0]);
    } else if (t.name == "optim/epoch") {
      ckpt.epoch = static_cast<int>(t.value[0]);
    } else if (t.name.rfind("optim/", 0) == 0) {
      moments.push_back(std::move(t));
    } else {
      ckpt.tensors.push_back(ParamTensor{std::move(t.name), std::move(t.shape),
                                         std::move(t.value), t.learnable});
    }
  }
  ckpt.adam_m.resize(ckpt.tensors.size());
  ckpt.adam_v.resize(ckpt.tensors.size());
  for (auto& m : moments) {
    const bool first = m.name.rfind("optim/m/", 0) == 0;
    const std::string base = m.name.substr(8);
    for (size_t i = 0; i < ckpt.tensors.size(); ++i) {
      if (ckpt.tensors[i].name == base) {
        (first ? ckpt.adam_m : ckpt.adam_v)[i] = std::move(m.value);
        break;
      }
    }
  }
  return ckpt;
}

Checkpoint AverageCheckpoints(const std::vector<Checkpoint>& checkpoints) {
  if (checkpoints.empty()) throw TrainError("average: no checkpoints");
  Checkpoint out = checkpoints.back();
  const double inv = 1.0 / static_cast<double>(checkpoints.size());
  for (size_t t = 0; t < out.tensors.size(); ++t) {
    auto& acc = out.tensors[t].value;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (const auto& c : checkpoints) {
      if (c.tensors.size() != out.tensors.size() ||
          c.tensors[t].shape != out.tensors[t].shape ||
          c.tensors[t].name != out.tensors[t].name) {
        throw TrainError("average: checkpoint architectures differ");
      }
      const auto& v = c.tensors[t].value;
      for (size_t k = 0; k < acc.size(); ++k) acc[k] += v[k] * inv;
    }
  }
  return out;
}

namespace {

// Per-slice-normalized CTC loss of one utterance on a fresh tape.
double UtteranceLoss(SrfModel* model, Tape& tape, const Utterance& u,
                     const RunOptions& options, Tensor* loss_out) {
  ModelOutput out = model->Forward(tape, u.features, u.frames, options);
  const int slices = out.log_probs.Dim(0);
  Tensor loss = Scale(
      CtcLoss(out.log_probs, u.labels, model->config().alphabet.blank_index),
      1.0 / static_cast<double>(slices));
  if (loss_out) *loss_out = loss;
  return loss.Scalar();
}

}  // namespace

double EvaluateLoss(SrfModel* model, const std::vector<Utterance>& data) {
  double total = 0.0;
  RunOptions options;
  for (const auto& u : data) {
    Tape tape;
    total += UtteranceLoss(model, tape, u, options, nullptr);
  }
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

double EvaluateErrorRate(SrfModel* model, const std::vector<Utterance>& data,
                         int beam_width) {
  AlignmentResult total;
  for (const auto& u : data) {
    const auto log_probs = model->InferLogProbs(u.features, u.frames);
    const int slices = model->OutputFrames(u.frames);
    const int v = model->config().alphabet.NumClasses();
    const int blank = model->config().alphabet.blank_index;
    const LabelSeq hyp =
        beam_width >= 1 ? PrefixBeamDecode(log_probs, slices, v, blank, beam_width)
                        : GreedyDecode(log_probs, slices, v, blank);
    total += TokenErrorRate(u.labels, hyp);
  }
  return total.ErrorRate();
}

TrainResult Train(SrfModel* model, const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& valid_set,
                  const TrainConfig& config, const Checkpoint* resume_from,
                  const EpochCallback& on_epoch) {
  config.Validate();
  for (const auto& u : train_set) {
    if (u.labels.empty()) {
      throw TrainError("training utterance " + u.id + " has no labels");
    }
  }
  AdamState adam(model->params());
  int64_t step = 0;
  int start_epoch = 0;
  if (resume_from) {
    resume_from->Restore(&model->params(), &adam);
    step = resume_from->step;
    start_epoch = resume_from->epoch;
  }

  TrainResult result;
  if (config.epochs == 0 || start_epoch >= config.epochs) {
    result.final_checkpoint = Checkpoint::Capture(model->params(), adam, step,
                                                  start_epoch);
    result.steps = step;
    return result;
  }

  const auto batches = BatchByFrames(train_set, config.batch_frames);
  std::vector<std::vector<double>> grad_acc(model->params().Count());

  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double kappa = config.KappaAt(epoch);
    Rng epoch_rng = Rng::Derive(config.seed, "epoch", static_cast<uint64_t>(epoch));
    // Deterministic shuffle of the batch order.
    std::vector<int> order(batches.size());
    std::iota(order.begin(), order.end(), 0);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      std::swap(order[i], order[epoch_rng.UniformInt(0, i)]);
    }
    Rng dropout_rng = Rng::Derive(config.seed, "dropout", static_cast<uint64_t>(epoch));

    for (int batch_pos = 0; batch_pos < static_cast<int>(order.size()); ++batch_pos) {
      const auto& batch = batches[order[batch_pos]];
      for (auto& g : grad_acc) g.clear();
      for (int i = 0; i < model->params().Count(); ++i) {
        grad_acc[i].assign(model->params().At(i).value.size(), 0.0);
      }
      double batch_loss = 0.0;
      for (int idx : batch) {
        Tape tape;
        RunOptions options;
        options.training = true;
        options.dropout_rng = &dropout_rng;
        Tensor loss;
        double value = 0.0;
        try {
          value = UtteranceLoss(model, tape, train_set[idx], options, &loss);
        } catch (const NumericError& e) {
          throw DivergenceError("diverged at step " + std::to_string(step + 1) +
                                " on utterance " + train_set[idx].id + ": " +
                                e.what());
        }
        batch_loss += value;
        tape.Backward(loss);
        const auto& leased = model->leased();
        const double scale = 1.0 / static_cast<double>(batch.size());
        for (int i = 0; i < model->params().Count(); ++i) {
          if (!model->params().At(i).learnable) continue;
          const auto g = tape.Grad(leased[i]);
          for (size_t k = 0; k < g.size(); ++k) grad_acc[i][k] += g[k] * scale;
        }
      }
      batch_loss /= static_cast<double>(batch.size());
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("diverged: non-finite loss at step " +
                              std::to_string(step + 1));
      }
      ++step;
      adam.Step(&model->params(), grad_acc, LearningRate(step, config.warmup_steps, kappa));

      StepRecord record;
      record.epoch = epoch;
      record.step = step;
      record.train_loss = batch_loss;
      result.curve.push_back(record);
    }

    StepRecord& last = result.curve.back();
    last.valid_loss = valid_set.empty() ? 0.0 : EvaluateLoss(model, valid_set);
    last.valid_error = valid_set.empty() ? 0.0 : EvaluateErrorRate(model, valid_set);
    result.history.push_back(Checkpoint::Capture(model->params(), adam, step, epoch + 1));
    if (on_epoch) on_epoch(epoch, result.history.back(), last);
  }

  const int avail = static_cast<int>(result.history.size());
  const int take = std::min(config.average_last, avail);
  std::vector<Checkpoint> tail(result.history.end() - take, result.history.end());
  result.final_checkpoint = AverageCheckpoints(tail);
  result.steps = step;
  return result;
}

}  // namespace seqcaps
