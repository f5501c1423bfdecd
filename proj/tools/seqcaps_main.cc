// tools/seqcaps_main.cc

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

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seqcaps/config.h"
#include "seqcaps/metrics.h"
#include "seqcaps/model.h"
#include "seqcaps/trainer.h"

namespace {

namespace fs = std::filesystem;
using namespace seqcaps;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void AddCommon(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--config", args->config_path, "run configuration (JSON)")
      ->required();
  cmd->add_option("--set", args->overrides,
                  "override a scalar config field, e.g. --set train.epochs=3");
}

std::string FormatPercent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * fraction);
  return buf;
}

SrfModel BuildModel(const RunConfig& config) {
  return SrfModel(config.model, config.seed);
}

void RestoreParams(SrfModel* model, const std::string& checkpoint_path) {
  const Checkpoint ckpt = LoadCheckpoint(checkpoint_path);
  ckpt.Restore(&model->params(), nullptr);
}

void WriteLossCurve(const std::vector<StepRecord>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TrainError("cannot write loss curve " + path);
  out << "epoch,step,train_loss,valid_loss,valid_error\n";
  char buf[64];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.train_loss);
    out << r.epoch << "," << r.step << "," << buf << ",";
    if (r.valid_loss) {
      std::snprintf(buf, sizeof(buf), "%.17g", *r.valid_loss);
      out << buf;
    }
    out << ",";
    if (r.valid_error) {
      std::snprintf(buf, sizeof(buf), "%.17g", *r.valid_error);
      out << buf;
    }
    out << "\n";
  }
}

int CmdTrain(const CommonArgs& args, const std::string& resume_path) {
  RunConfig config = LoadRunConfig(args.config_path, args.overrides);
  fs::create_directories(config.output_dir);
  DataBundle data = LoadData(config);
  SrfModel model = BuildModel(config);

  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = LoadCheckpoint(resume_path);
    resume_ptr = &resume;
  }

  auto on_epoch = [&](int epoch, const Checkpoint& ckpt, const StepRecord& last) {
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoint_epoch_%03d.bin", epoch + 1);
    SaveCheckpoint(ckpt, (fs::path(config.output_dir) / name).string());
    std::cout << "epoch " << (epoch + 1) << " step " << last.step
              << " train_loss " << last.train_loss << " valid_loss "
              << last.valid_loss.value_or(0.0) << " valid_error "
              << FormatPercent(last.valid_error.value_or(0.0)) << "%"
              << std::endl;
  };
  TrainResult result =
      Train(&model, data.train, data.valid, config.train, resume_ptr, on_epoch);
  WriteLossCurve(result.curve,
                 (fs::path(config.output_dir) / "loss_curve.csv").string());
  SaveCheckpoint(result.final_checkpoint,
                 (fs::path(config.output_dir) / "final.bin").string());
  std::cout << "trained " << result.steps << " steps; final checkpoint at "
            << (fs::path(config.output_dir) / "final.bin").string() << std::endl;
  return kExitOk;
}

const std::vector<Utterance>& PickSplit(const DataBundle& data,
                                        const std::string& split) {
  if (split == "train") return data.train;
  if (split == "valid") return data.valid;
  if (split == "test") return data.test;
  throw ConfigError("unknown split '" + split + "'");
}

int CmdEvaluate(const CommonArgs& args, const std::string& checkpoint,
                const std::string& split, int beam, bool greedy) {
  RunConfig config = LoadRunConfig(args.config_path, args.overrides);
  DataBundle data = LoadData(config);
  const auto& subset = PickSplit(data, split);
  if (subset.empty()) throw ConfigError("split '" + split + "' is empty");
  SrfModel model = BuildModel(config);
  RestoreParams(&model, checkpoint);

  const auto& alphabet = config.model.alphabet;
  AlignmentResult total;
  std::vector<LabelSeq> hypotheses;
  int64_t frames = 0;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& u : subset) {
    const auto log_probs = model.InferLogProbs(u.features, u.frames);
    const int slices = model.OutputFrames(u.frames);
    LabelSeq hyp =
        greedy ? GreedyDecode(log_probs, slices, alphabet.NumClasses(),
                              alphabet.blank_index)
               : PrefixBeamDecode(log_probs, slices, alphabet.NumClasses(),
                                  alphabet.blank_index, beam);
    total += TokenErrorRate(u.labels, hyp);
    hypotheses.push_back(std::move(hyp));
    frames += u.frames;
  }
  const auto stop = std::chrono::steady_clock::now();
  const double seconds = std::chrono::duration<double>(stop - start).count();
  const double audio_seconds =
      static_cast<double>(frames) * config.features.hop_ms / 1000.0;

  std::cout << "utterances: " << subset.size() << "\n";
  std::cout << "frames: " << frames << "\n";
  std::cout << "token error rate: " << FormatPercent(total.ErrorRate()) << "%"
            << " (S=" << total.substitutions << " I=" << total.insertions
            << " D=" << total.deletions << " N=" << total.reference_length
            << ")\n";
  if (alphabet.eos_index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f",
                  EosDetectionRate(hypotheses, *alphabet.eos_index));
    std::cout << "eos detection rate: " << buf << "%\n";
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", seconds);
  std::cout << "decode seconds: " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.4f",
                audio_seconds > 0 ? seconds / audio_seconds : 0.0);
  std::cout << "real-time factor: " << buf << "\n";
  return kExitOk;
}

int CmdDecode(const CommonArgs& args, const std::string& checkpoint,
              const std::string& features_path, int beam, bool greedy,
              const std::string& output) {
  RunConfig config = LoadRunConfig(args.config_path, args.overrides);
  SrfModel model = BuildModel(config);
  RestoreParams(&model, checkpoint);
  auto utterances = LoadFeatures(features_path);
  if (config.features.normalize) {
    NormalizeInPlace(&utterances, config.features.normalize_mode);
  }
  const auto& alphabet = config.model.alphabet;

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!output.empty()) {
    file.open(output);
    if (!file) throw DataError("cannot write transcript output " + output);
    out = &file;
  }
  for (const auto& u : utterances) {
    const auto log_probs = model.InferLogProbs(u.features, u.frames);
    const int slices = model.OutputFrames(u.frames);
    const LabelSeq hyp =
        greedy ? GreedyDecode(log_probs, slices, alphabet.NumClasses(),
                              alphabet.blank_index)
               : PrefixBeamDecode(log_probs, slices, alphabet.NumClasses(),
                                  alphabet.blank_index, beam);
    (*out) << u.id << "\t";
    for (size_t i = 0; i < hyp.size(); ++i) {
      if (i) (*out) << " ";
      (*out) << alphabet.symbols[hyp[i]];
    }
    (*out) << "\n";
  }
  return kExitOk;
}

int CmdInfo(const CommonArgs& args) {
  RunConfig config = LoadRunConfig(args.config_path, args.overrides);
  std::cout << StructuralReport(config);
  return kExitOk;
}

int CmdInspect(const CommonArgs& args, const std::string& checkpoint,
               const std::string& utterance_id, int layer,
               const std::string& out_dir) {
  RunConfig config = LoadRunConfig(args.config_path, args.overrides);
  DataBundle data = LoadData(config);
  SrfModel model = BuildModel(config);
  RestoreParams(&model, checkpoint);
  const int num_layers = static_cast<int>(config.model.layers.size());
  if (layer < 1 || layer > num_layers) {
    throw ConfigError("layer " + std::to_string(layer) + " out of range 1.." +
                      std::to_string(num_layers));
  }

  const Utterance* utt = nullptr;
  for (const auto* split : {&data.test, &data.valid, &data.train}) {
    for (const auto& u : *split) {
      if (u.id == utterance_id) {
        utt = &u;
        break;
      }
    }
    if (utt) break;
  }
  if (!utt) throw ConfigError("utterance '" + utterance_id + "' not found");

  fs::create_directories(out_dir);
  std::vector<CouplingCapture> class_layer;
  std::map<int, CouplingCapture> requested;  // by slice
  CouplingHook hook = [&](const CouplingCapture& cap) {
    if (cap.layer == layer) requested[cap.t] = cap;
    if (cap.layer == num_layers) class_layer.push_back(cap);
  };
  const auto log_probs = model.InferLogProbs(utt->features, utt->frames, &hook);
  const int slices = model.OutputFrames(utt->frames);
  const auto& alphabet = config.model.alphabet;

  // Column labels: class symbols at the top layer, capsule indices below.
  std::vector<std::string> columns;
  if (layer == num_layers) {
    columns = alphabet.symbols;
  } else {
    for (int j = 0; j < config.model.layers[layer - 1].out_height; ++j) {
      columns.push_back("capsule" + std::to_string(j));
    }
  }
  for (const auto& [t, cap] : requested) {
    char name[64];
    std::snprintf(name, sizeof(name), "coupling_layer%d_t%03d", layer, t);
    ExportCouplingHeatmap(cap.values, cap.rows, cap.cols, columns,
                          (fs::path(out_dir) / name).string());
  }
  std::cout << "wrote " << requested.size() << " heatmaps to " << out_dir
            << "\n";

  // Frame-wise agreement between routing and the softmax output: argmax of
  // column-summed couplings vs argmax of the per-frame distribution.
  LabelSeq from_couplings, from_softmax;
  const int v = alphabet.NumClasses();
  for (const auto& cap : class_layer) {
    int best = 0;
    std::vector<double> sums(cap.cols, 0.0);
    for (int i = 0; i < cap.rows; ++i) {
      for (int j = 0; j < cap.cols; ++j) sums[j] += cap.values[i * cap.cols + j];
    }
    for (int j = 1; j < cap.cols; ++j) {
      if (sums[j] > sums[best]) best = j;
    }
    from_couplings.push_back(best);
  }
  for (int t = 0; t < slices; ++t) {
    int best = 0;
    for (int k = 1; k < v; ++k) {
      if (log_probs[t * v + k] > log_probs[t * v + best]) best = k;
    }
    from_softmax.push_back(best);
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f",
                FramewiseSubstitutionRate(from_couplings, from_softmax));
  std::cout << "framewise substitution rate (couplings vs softmax): " << buf
            << "%\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capsule-routing sequence recognizer"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, decode_args, info_args, inspect_args;
  std::string resume_path, checkpoint, split = "test", features_path, output;
  std::string utterance_id, inspect_dir = "inspect";
  int beam = 100, inspect_layer = -1;
  bool greedy = false;

  CLI::App* train = app.add_subcommand("train", "train a model");
  AddCommon(train, &train_args);
  train->add_option("--resume", resume_path, "checkpoint to resume from");

  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint");
  AddCommon(evaluate, &eval_args);
  evaluate->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  evaluate->add_option("--split", split, "train|valid|test (default test)");
  evaluate->add_option("--beam", beam, "beam width (default 100)");
  evaluate->add_flag("--greedy", greedy, "greedy decoding instead of beam");

  CLI::App* decode = app.add_subcommand("decode", "transcribe a feature file");
  AddCommon(decode, &decode_args);
  decode->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  decode->add_option("--features", features_path, "feature CSV file")->required();
  decode->add_option("--beam", beam, "beam width (default 100)");
  decode->add_flag("--greedy", greedy, "greedy decoding instead of beam");
  decode->add_option("--output", output, "write transcripts here instead of stdout");

  CLI::App* info = app.add_subcommand("info", "print structural report");
  AddCommon(info, &info_args);

  CLI::App* inspect = app.add_subcommand("inspect", "export coupling heatmaps");
  AddCommon(inspect, &inspect_args);
  inspect->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  inspect->add_option("--utterance", utterance_id, "utterance id")->required();
  inspect->add_option("--layer", inspect_layer,
                      "capsule layer to export (default: class layer)");
  inspect->add_option("--out", inspect_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) return CmdTrain(train_args, resume_path);
    if (evaluate->parsed())
      return CmdEvaluate(eval_args, checkpoint, split, beam, greedy);
    if (decode->parsed())
      return CmdDecode(decode_args, checkpoint, features_path, beam, greedy, output);
    if (info->parsed()) return CmdInfo(info_args);
    if (inspect->parsed()) {
      RunConfig probe = LoadRunConfig(inspect_args.config_path, inspect_args.overrides);
      const int layer = inspect_layer > 0
                            ? inspect_layer
                            : static_cast<int>(probe.model.layers.size());
      return CmdInspect(inspect_args, checkpoint, utterance_id, layer, inspect_dir);
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitNumeric;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitUsage;
  }
  return kExitUsage;
}
