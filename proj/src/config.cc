// seqcaps/config.cc

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

#include "seqcaps/config.h"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace seqcaps {

namespace {

using nlohmann::json;

[[noreturn]] void Fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

const json& Require(const json& obj, const std::string& key,
                    const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) {
    Fail(path + "." + key, "missing required field");
  }
  return obj.at(key);
}

template <typename T>
T Get(const json& obj, const std::string& key, const std::string& path) {
  try {
    return Require(obj, key, path).get<T>();
  } catch (const json::exception& e) {
    Fail(path + "." + key, std::string("wrong type: ") + e.what());
  }
}

template <typename T>
T GetOr(const json& obj, const std::string& key, const std::string& path, T fallback) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    Fail(path + "." + key, std::string("wrong type: ") + e.what());
  }
}

LabelAlphabet ParseAlphabet(const json& j, const std::string& path) {
  LabelAlphabet a;
  a.symbols = Get<std::vector<std::string>>(j, "symbols", path);
  const std::string blank = GetOr<std::string>(j, "blank", path, "<blank>");
  a.blank_index = a.IndexOf(blank);
  if (a.blank_index < 0) Fail(path + ".blank", "symbol '" + blank + "' not listed");
  if (j.contains("eos")) {
    const std::string eos = Get<std::string>(j, "eos", path);
    const int idx = a.IndexOf(eos);
    if (idx < 0) Fail(path + ".eos", "symbol '" + eos + "' not listed");
    a.eos_index = idx;
  }
  if (j.contains("padding")) {
    const std::string pad = Get<std::string>(j, "padding", path);
    const int idx = a.IndexOf(pad);
    if (idx < 0) Fail(path + ".padding", "symbol '" + pad + "' not listed");
    a.padding_index = idx;
  }
  try {
    a.Validate();
  } catch (const std::exception& e) {
    Fail(path, e.what());
  }
  return a;
}

CapsulationConfig ParseCapsulation(const json& j, const std::string& path) {
  CapsulationConfig c;
  const json& convs = Require(j, "conv", path);
  if (!convs.is_array() || convs.empty()) Fail(path + ".conv", "expected a non-empty array");
  c.conv_layers.clear();
  for (size_t i = 0; i < convs.size(); ++i) {
    const std::string p = path + ".conv." + std::to_string(i);
    ConvLayerSpec spec;
    const auto kernel = Get<std::vector<int>>(convs[i], "kernel", p);
    const auto stride = GetOr<std::vector<int>>(convs[i], "stride", p, {1, 1});
    if (kernel.size() != 2) Fail(p + ".kernel", "expected [time,freq]");
    if (stride.size() != 2) Fail(p + ".stride", "expected [time,freq]");
    spec.kernel_t = kernel[0];
    spec.kernel_f = kernel[1];
    spec.stride_t = stride[0];
    spec.stride_f = stride[1];
    spec.channels = Get<int>(convs[i], "channels", p);
    c.conv_layers.push_back(spec);
  }
  c.maxout_branches = GetOr<int>(j, "maxout_branches", path, 2);
  c.dropout_rate = GetOr<double>(j, "dropout", path, 0.2);
  c.primary_height = Get<int>(j, "primary_height", path);
  c.primary_depth = Get<int>(j, "primary_depth", path);
  const auto ek = GetOr<std::vector<int>>(j, "expand_kernel", path, {3, 3});
  if (ek.size() != 2) Fail(path + ".expand_kernel", "expected [time,freq]");
  c.expand_kernel_t = ek[0];
  c.expand_kernel_f = ek[1];
  c.activation_branch = GetOr<bool>(j, "activation_branch", path, false);
  try {
    c.Validate();
  } catch (const std::exception& e) {
    Fail(path, e.what());
  }
  return c;
}

std::vector<LayerConfig> ParseLayers(const json& j, const std::string& path,
                                     const LabelAlphabet& alphabet) {
  if (!j.is_array() || j.empty()) Fail(path, "expected a non-empty array");
  std::vector<LayerConfig> layers;
  for (size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "." + std::to_string(i);
    LayerConfig l;
    const std::string method = GetOr<std::string>(j[i], "method", p, "sdr");
    if (method == "sdr") {
      l.method = RoutingMethod::kSequential;
    } else if (method == "dr") {
      l.method = RoutingMethod::kDynamic;
    } else {
      Fail(p + ".method", "expected 'dr' or 'sdr', got '" + method + "'");
    }
    l.iterations = GetOr<int>(j[i], "iterations", p, 1);
    l.window.left = GetOr<int>(j[i], "left", p, 0);
    l.window.right = GetOr<int>(j[i], "right", p, 0);
    l.out_height = Get<int>(j[i], "height", p);
    l.out_depth = Get<int>(j[i], "depth", p);
    l.mask_padding = GetOr<bool>(j[i], "mask_padding", p, false);
    if (l.mask_padding) {
      if (!alphabet.padding_index) {
        Fail(p + ".mask_padding", "alphabet declares no padding symbol");
      }
      l.padding_index = *alphabet.padding_index;
      const std::string mode = GetOr<std::string>(j[i], "mask_mode", p, "renormalize");
      if (mode == "renormalize") {
        l.mask_mode = PaddingMaskMode::kRenormalize;
      } else if (mode == "zero_after") {
        l.mask_mode = PaddingMaskMode::kZeroAfter;
      } else {
        Fail(p + ".mask_mode", "expected 'renormalize' or 'zero_after'");
      }
    }
    layers.push_back(l);
  }
  return layers;
}

TrainConfig ParseTrain(const json& j, const std::string& path, uint64_t seed) {
  TrainConfig t;
  t.seed = seed;
  t.warmup_steps = GetOr<int>(j, "warmup_steps", path, t.warmup_steps);
  t.batch_frames = GetOr<int>(j, "batch_frames", path, t.batch_frames);
  t.epochs = GetOr<int>(j, "epochs", path, t.epochs);
  t.average_last = GetOr<int>(j, "average_last", path, t.average_last);
  t.init_scale = GetOr<double>(j, "init_scale", path, 1.0);
  if (j.contains("kappa")) {
    const json& k = j.at("kappa");
    t.kappa_schedule.clear();
    if (k.is_number()) {
      t.kappa_schedule.emplace_back(0, k.get<double>());
    } else if (k.is_array()) {
      for (size_t i = 0; i < k.size(); ++i) {
        const std::string p = path + ".kappa." + std::to_string(i);
        if (!k[i].is_array() || k[i].size() != 2) Fail(p, "expected [epoch, value]");
        t.kappa_schedule.emplace_back(k[i][0].get<int>(), k[i][1].get<double>());
      }
    } else {
      Fail(path + ".kappa", "expected a number or an array of [epoch, value]");
    }
  }
  try {
    t.Validate();
  } catch (const std::exception& e) {
    Fail(path, e.what());
  }
  return t;
}

FeatureMeta ParseFeatures(const json& j, const std::string& path) {
  FeatureMeta f;
  f.hop_ms = GetOr<double>(j, "hop_ms", path, f.hop_ms);
  f.window_ms = GetOr<double>(j, "window_ms", path, f.window_ms);
  f.delta_frames = GetOr<int>(j, "delta_frames", path, f.delta_frames);
  f.normalize = GetOr<bool>(j, "normalize", path, f.normalize);
  const std::string mode = GetOr<std::string>(j, "normalize_mode", path, "utterance");
  if (mode == "utterance") {
    f.normalize_mode = NormalizeMode::kUtterance;
  } else if (mode == "speaker") {
    f.normalize_mode = NormalizeMode::kSpeaker;
  } else {
    Fail(path + ".normalize_mode", "expected 'utterance' or 'speaker'");
  }
  if (f.hop_ms <= 0 || f.window_ms <= 0 || f.delta_frames < 0) {
    Fail(path, "hop/window must be positive, delta_frames nonnegative");
  }
  return f;
}

DataConfig ParseData(const json& j, const std::string& path, int feature_dim) {
  DataConfig d;
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    const std::string p = path + ".synthetic";
    SyntheticDataConfig sd;
    sd.task.symbols = Get<std::vector<std::string>>(s, "symbols", p);
    sd.task.feature_dim = feature_dim;
    sd.task.glyph_frames = GetOr<int>(s, "glyph_frames", p, sd.task.glyph_frames);
    sd.task.noise_sigma = GetOr<double>(s, "noise_sigma", p, sd.task.noise_sigma);
    sd.task.min_labels = GetOr<int>(s, "min_labels", p, sd.task.min_labels);
    sd.task.max_labels = GetOr<int>(s, "max_labels", p, sd.task.max_labels);
    sd.task.min_gap = GetOr<int>(s, "min_gap", p, sd.task.min_gap);
    sd.task.max_gap = GetOr<int>(s, "max_gap", p, sd.task.max_gap);
    sd.task.seed = GetOr<uint64_t>(s, "seed", p, 1);
    if (s.contains("eos_symbol")) {
      const std::string eos = Get<std::string>(s, "eos_symbol", p);
      sd.task.eos_glyph = -1;
      for (size_t i = 0; i < sd.task.symbols.size(); ++i) {
        if (sd.task.symbols[i] == eos) sd.task.eos_glyph = static_cast<int>(i);
      }
      if (sd.task.eos_glyph < 0) {
        Fail(p + ".eos_symbol", "'" + eos + "' is not a synthetic symbol");
      }
    }
    sd.train_count = GetOr<int>(s, "train_count", p, sd.train_count);
    sd.valid_count = GetOr<int>(s, "valid_count", p, sd.valid_count);
    sd.test_count = GetOr<int>(s, "test_count", p, sd.test_count);
    try {
      sd.task.Validate();
    } catch (const std::exception& e) {
      Fail(p, e.what());
    }
    d.synthetic = std::move(sd);
  }
  if (j.contains("files")) {
    const json& f = j.at("files");
    const std::string p = path + ".files";
    FileDataConfig fd;
    fd.train_features = GetOr<std::string>(f, "train_features", p, "");
    fd.train_transcripts = GetOr<std::string>(f, "train_transcripts", p, "");
    fd.valid_features = GetOr<std::string>(f, "valid_features", p, "");
    fd.valid_transcripts = GetOr<std::string>(f, "valid_transcripts", p, "");
    fd.test_features = GetOr<std::string>(f, "test_features", p, "");
    fd.test_transcripts = GetOr<std::string>(f, "test_transcripts", p, "");
    d.files = std::move(fd);
  }
  return d;
}

void ApplyOverride(json* root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json* node = root;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("--set: empty key");
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (node->is_array()) {
      node = &(*node)[std::stoul(parts[i])];
    } else {
      node = &(*node)[parts[i]];
    }
  }
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // plain string
  }
  if (node->is_array()) {
    (*node)[std::stoul(parts.back())] = parsed;
  } else {
    (*node)[parts.back()] = parsed;
  }
}

}  // namespace

void RunConfig::Validate() {
  if (version != 1) {
    throw ConfigError("version: expected 1, got " + std::to_string(version));
  }
  try {
    model.ChainAndValidate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (data.synthetic) {
    for (const auto& s : data.synthetic->task.symbols) {
      if (model.alphabet.IndexOf(s) < 0) {
        throw ConfigError("data.synthetic.symbols: '" + s +
                          "' is not in the alphabet");
      }
    }
  }
}

RunConfig ParseRunConfig(const std::string& json_text,
                         const std::vector<std::string>& overrides) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  for (const auto& o : overrides) ApplyOverride(&root, o);

  RunConfig c;
  c.version = GetOr<int>(root, "version", "", 1);
  c.seed = GetOr<uint64_t>(root, "seed", "", 1);
  c.output_dir = GetOr<std::string>(root, "output_dir", "", "out");
  c.model.feature_dim = Get<int>(root, "feature_dim", "");
  c.model.alphabet = ParseAlphabet(Require(root, "alphabet", ""), "alphabet");
  c.model.capsulation = ParseCapsulation(Require(root, "capsulation", ""), "capsulation");
  c.model.layers = ParseLayers(Require(root, "routing", ""), "routing", c.model.alphabet);
  c.train = root.contains("train") ? ParseTrain(root.at("train"), "train", c.seed)
                                   : TrainConfig{};
  c.train.seed = c.seed;
  c.model.init_scale = c.train.init_scale;
  c.features = root.contains("features")
                   ? ParseFeatures(root.at("features"), "features")
                   : FeatureMeta{};
  c.data = root.contains("data")
               ? ParseData(root.at("data"), "data", c.model.feature_dim)
               : DataConfig{};
  c.Validate();
  return c;
}

RunConfig LoadRunConfig(const std::string& path,
                        const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseRunConfig(ss.str(), overrides);
}

namespace {

void RemapSyntheticLabels(const SyntheticTaskConfig& task,
                          const LabelAlphabet& alphabet,
                          std::vector<Utterance>* utterances) {
  std::vector<int> remap(task.symbols.size());
  for (size_t i = 0; i < task.symbols.size(); ++i) {
    remap[i] = alphabet.IndexOf(task.symbols[i]);
  }
  for (auto& u : *utterances) {
    for (int& y : u.labels) y = remap[y];
  }
}

std::vector<Utterance> LoadSplit(const std::string& features,
                                 const std::string& transcripts,
                                 const LabelAlphabet& alphabet) {
  if (features.empty()) return {};
  auto utts = LoadFeatures(features);
  if (!transcripts.empty()) LoadTranscripts(transcripts, alphabet, &utts);
  return utts;
}

}  // namespace

DataBundle LoadData(const RunConfig& config) {
  DataBundle bundle;
  if (config.data.synthetic) {
    const auto& s = *config.data.synthetic;
    bundle.train = GenerateSynthetic(s.task, s.train_count, "train");
    bundle.valid = GenerateSynthetic(s.task, s.valid_count, "valid");
    bundle.test = GenerateSynthetic(s.task, s.test_count, "test");
    RemapSyntheticLabels(s.task, config.model.alphabet, &bundle.train);
    RemapSyntheticLabels(s.task, config.model.alphabet, &bundle.valid);
    RemapSyntheticLabels(s.task, config.model.alphabet, &bundle.test);
  } else if (config.data.files) {
    const auto& f = *config.data.files;
    bundle.train = LoadSplit(f.train_features, f.train_transcripts, config.model.alphabet);
    bundle.valid = LoadSplit(f.valid_features, f.valid_transcripts, config.model.alphabet);
    bundle.test = LoadSplit(f.test_features, f.test_transcripts, config.model.alphabet);
  } else {
    throw ConfigError("data: neither 'synthetic' nor 'files' configured");
  }
  if (config.features.normalize) {
    NormalizeInPlace(&bundle.train, config.features.normalize_mode);
    NormalizeInPlace(&bundle.valid, config.features.normalize_mode);
    NormalizeInPlace(&bundle.test, config.features.normalize_mode);
  }
  return bundle;
}

std::string StructuralReport(const RunConfig& config) {
  // Mirror the model's parameter registration without building tensors.
  ModelConfig model = config.model;
  model.ChainAndValidate();
  const auto& caps = model.capsulation;

  std::ostringstream os;
  os << "feature dim: " << model.feature_dim << "\n";
  os << "alphabet size: " << model.alphabet.NumClasses() << "\n";
  os << "capsulation:\n";
  int64_t caps_params = 0;
  int cin = 1;
  int f = model.feature_dim;
  for (size_t l = 0; l < caps.conv_layers.size(); ++l) {
    const auto& spec = caps.conv_layers[l];
    const int64_t kernel = static_cast<int64_t>(spec.kernel_t) * spec.kernel_f *
                           cin * spec.channels * caps.maxout_branches;
    const int64_t bn = 2 * spec.channels;
    os << "  conv" << l << ": kernel " << spec.kernel_t << "x" << spec.kernel_f
       << " stride " << spec.stride_t << "x" << spec.stride_f << " channels "
       << spec.channels << " params " << kernel << " + bn " << bn << "\n";
    caps_params += kernel + bn;
    cin = spec.channels;
    f = (f + spec.stride_f - 1) / spec.stride_f;
  }
  const int flattened = f * cin;
  const int64_t proj = static_cast<int64_t>(flattened) * caps.primary_height;
  os << "  project_u: " << flattened << "x" << caps.primary_height << " params "
     << proj << "\n";
  caps_params += proj;
  if (caps.activation_branch) {
    os << "  project_a: " << flattened << "x" << caps.primary_height
       << " params " << proj << "\n";
    caps_params += proj;
  }
  const int64_t expand = static_cast<int64_t>(caps.expand_kernel_t) *
                         caps.expand_kernel_f * caps.primary_depth *
                         caps.maxout_branches;
  os << "  expand: kernel " << caps.expand_kernel_t << "x" << caps.expand_kernel_f
     << " depth " << caps.primary_depth << " params " << expand << "\n";
  caps_params += expand;

  os << "routing layers:\n";
  int64_t matrix_total = 0;
  int64_t routing_params = 0;
  int64_t norm_params = 0;
  int rf_slices = 1;
  int lookahead_slices = 0;
  for (size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    const int64_t matrices = layer.TransformMatrices();
    const int64_t params = matrices * layer.in_depth * layer.out_depth;
    matrix_total += matrices;
    routing_params += params;
    rf_slices += layer.window.Size() - 1;
    lookahead_slices += layer.window.right;
    if (l > 0) {
      norm_params += 2 * static_cast<int64_t>(layer.in_height) * layer.in_depth;
    }
    os << "  layer " << (l + 1) << ": method="
       << (layer.method == RoutingMethod::kSequential ? "sdr" : "dr")
       << " iterations=" << layer.iterations << " window=" << layer.window.left
       << "-" << layer.window.right << " (size " << layer.window.Size() << ")"
       << " in=" << layer.in_height << "x" << layer.in_depth << " out="
       << layer.out_height << "x" << layer.out_depth << " matrices=" << matrices
       << " params=" << params << "\n";
  }
  os << "totals:\n";
  os << "  transform matrices total: " << matrix_total << "\n";
  os << "  capsulation params: " << caps_params << "\n";
  os << "  layer norm params: " << norm_params << "\n";
  os << "  routing params: " << routing_params << "\n";
  os << "  output gain params: 1\n";
  os << "  parameters total: "
     << (caps_params + norm_params + routing_params + 1) << "\n";

  const int fps = caps.TimeStrideProduct();
  const int rf_frames = caps.ReceptiveFieldFrames() + (rf_slices - 1) * fps +
                        2 * config.features.delta_frames;
  os << "structure:\n";
  os << "  frames per slice: " << fps << "\n";
  os << "  receptive field slices: " << rf_slices << "\n";
  os << "  receptive field frames: " << rf_frames << "\n";
  const int lookahead_frames = config.features.delta_frames +
                               caps.RightContextFrames() +
                               lookahead_slices * fps;
  const double delay_ms =
      config.features.hop_ms * lookahead_frames + config.features.window_ms / 2.0;
  os << "  lookahead frames: " << lookahead_frames << "\n";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", delay_ms);
  os << "  delay ms: " << buf << "\n";
  return os.str();
}

}  // namespace seqcaps
