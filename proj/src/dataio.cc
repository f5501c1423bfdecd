// seqcaps/dataio.cc

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

#include "seqcaps/dataio.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "seqcaps/rng.h"
#include "seqcaps/tensor.h"  // kVarianceFloor

namespace seqcaps {

namespace {

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

std::string FormatValue(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<Utterance> LoadFeatures(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open feature file " + path);
  std::vector<Utterance> utterances;
  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto header = SplitCsvLine(line);
    if (header.size() != 3) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": malformed header, expected id,frames,dim");
    }
    Utterance u;
    u.id = header[0];
    try {
      u.frames = std::stoi(header[1]);
      u.dim = std::stoi(header[2]);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": frames/dim are not integers");
    }
    if (u.id.empty() || u.frames < 1 || u.dim < 1) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": header fields out of range");
    }
    if (!seen_ids.insert(u.id).second) {
      throw DataError(path + ": duplicate utterance id " + u.id);
    }
    u.features.reserve(static_cast<size_t>(u.frames) * u.dim);
    for (int f = 0; f < u.frames; ++f) {
      if (!std::getline(in, line)) {
        throw DataError(path + ": unexpected end of file inside " + u.id);
      }
      ++line_no;
      const auto cells = SplitCsvLine(line);
      if (static_cast<int>(cells.size()) != u.dim) {
        throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(u.dim) + " values, got " +
                        std::to_string(cells.size()));
      }
      for (const auto& c : cells) {
        try {
          u.features.push_back(std::stod(c));
        } catch (const std::exception&) {
          throw DataError(path + ":" + std::to_string(line_no) +
                          ": non-numeric value '" + c + "'");
        }
      }
    }
    utterances.push_back(std::move(u));
  }
  return utterances;
}

void SaveFeatures(const std::vector<Utterance>& utterances,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write feature file " + path);
  for (const auto& u : utterances) {
    out << u.id << "," << u.frames << "," << u.dim << "\n";
    for (int f = 0; f < u.frames; ++f) {
      for (int d = 0; d < u.dim; ++d) {
        if (d) out << ",";
        out << FormatValue(u.features[f * u.dim + d]);
      }
      out << "\n";
    }
  }
  if (!out.good()) throw DataError("write failed for " + path);
}

void LoadTranscripts(const std::string& path, const LabelAlphabet& alphabet,
                     std::vector<Utterance>* utterances) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open transcript file " + path);
  std::map<std::string, Utterance*> by_id;
  for (auto& u : *utterances) by_id[u.id] = &u;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path + ":" + std::to_string(line_no) + ": missing tab");
    }
    const std::string id = line.substr(0, tab);
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": unknown utterance id " + id);
    }
    LabelSeq labels;
    std::stringstream ss(line.substr(tab + 1));
    std::string sym;
    while (ss >> sym) {
      const int idx = alphabet.IndexOf(sym);
      if (idx < 0) {
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": symbol '" + sym + "' not in alphabet");
      }
      labels.push_back(idx);
    }
    it->second->labels = std::move(labels);
  }
}

void SaveTranscripts(const std::vector<Utterance>& utterances,
                     const LabelAlphabet& alphabet, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write transcript file " + path);
  for (const auto& u : utterances) {
    out << u.id << "\t";
    for (size_t i = 0; i < u.labels.size(); ++i) {
      if (i) out << " ";
      out << alphabet.symbols[u.labels[i]];
    }
    out << "\n";
  }
  if (!out.good()) throw DataError("write failed for " + path);
}

Utterance NormalizeUtterance(const Utterance& u) {
  if (u.frames < 2) {
    throw DataError("normalize: utterance " + u.id + " has fewer than 2 frames");
  }
  Utterance out = u;
  for (int d = 0; d < u.dim; ++d) {
    double mean = 0.0;
    for (int f = 0; f < u.frames; ++f) mean += u.features[f * u.dim + d];
    mean /= u.frames;
    double var = 0.0;
    for (int f = 0; f < u.frames; ++f) {
      const double x = u.features[f * u.dim + d] - mean;
      var += x * x;
    }
    var /= u.frames;
    const double sd = std::sqrt(std::max(var, kVarianceFloor));
    for (int f = 0; f < u.frames; ++f) {
      out.features[f * u.dim + d] = (u.features[f * u.dim + d] - mean) / sd;
    }
  }
  return out;
}

void NormalizeInPlace(std::vector<Utterance>* utterances, NormalizeMode mode) {
  if (mode == NormalizeMode::kUtterance) {
    for (auto& u : *utterances) u = NormalizeUtterance(u);
    return;
  }
  // Speaker mode: pool statistics within each id prefix.
  std::map<std::string, std::vector<Utterance*>> groups;
  for (auto& u : *utterances) {
    groups[u.id.substr(0, u.id.find('_'))].push_back(&u);
  }
  for (auto& [speaker, members] : groups) {
    const int dim = members.front()->dim;
    std::vector<double> mean(dim, 0.0), var(dim, 0.0);
    int64_t frames = 0;
    for (const auto* u : members) {
      if (u->dim != dim) throw DataError("normalize: dim mismatch for " + speaker);
      frames += u->frames;
      for (int f = 0; f < u->frames; ++f) {
        for (int d = 0; d < dim; ++d) mean[d] += u->features[f * dim + d];
      }
    }
    for (int d = 0; d < dim; ++d) mean[d] /= static_cast<double>(frames);
    for (const auto* u : members) {
      for (int f = 0; f < u->frames; ++f) {
        for (int d = 0; d < dim; ++d) {
          const double x = u->features[f * dim + d] - mean[d];
          var[d] += x * x;
        }
      }
    }
    for (int d = 0; d < dim; ++d) {
      var[d] = std::sqrt(std::max(var[d] / static_cast<double>(frames),
                                  kVarianceFloor));
    }
    for (auto* u : members) {
      for (int f = 0; f < u->frames; ++f) {
        for (int d = 0; d < dim; ++d) {
          u->features[f * dim + d] = (u->features[f * dim + d] - mean[d]) / var[d];
        }
      }
    }
  }
}

void SyntheticTaskConfig::Validate() const {
  if (symbols.size() < 2) throw DataError("synthetic: need at least 2 symbols");
  std::set<std::string> uniq(symbols.begin(), symbols.end());
  if (uniq.size() != symbols.size()) throw DataError("synthetic: duplicate symbols");
  if (feature_dim < 1 || glyph_frames < 1) {
    throw DataError("synthetic: feature_dim and glyph_frames must be >= 1");
  }
  if (noise_sigma < 0.0) throw DataError("synthetic: noise sigma must be >= 0");
  if (min_labels < 1 || max_labels < min_labels) {
    throw DataError("synthetic: label count range invalid");
  }
  if (min_gap < 1 || max_gap < min_gap) {
    throw DataError("synthetic: gap range invalid");
  }
  if (eos_glyph >= static_cast<int>(symbols.size())) {
    throw DataError("synthetic: eos glyph out of range");
  }
}

std::vector<std::vector<double>> MakeGlyphTemplates(const SyntheticTaskConfig& cfg) {
  cfg.Validate();
  Rng rng = Rng::Derive(cfg.seed, "glyphs");
  const int cells = cfg.feature_dim * cfg.glyph_frames;
  std::vector<std::vector<double>> templates(cfg.symbols.size());
  for (auto& t : templates) {
    t.resize(cells);
    for (double& v : t) v = rng.Uniform(-1.0, 1.0);
  }
  for (size_t a = 0; a < templates.size(); ++a) {
    for (size_t b = a + 1; b < templates.size(); ++b) {
      double d2 = 0.0;
      for (int i = 0; i < cells; ++i) {
        const double d = templates[a][i] - templates[b][i];
        d2 += d * d;
      }
      if (d2 == 0.0) throw DataError("synthetic: glyph templates collide");
    }
  }
  return templates;
}

std::vector<Utterance> GenerateSynthetic(const SyntheticTaskConfig& cfg,
                                         int count, const std::string& stream) {
  cfg.Validate();
  const auto templates = MakeGlyphTemplates(cfg);
  const int dim = cfg.feature_dim;
  const int num_plain = static_cast<int>(cfg.symbols.size());
  std::vector<Utterance> corpus;
  corpus.reserve(count);
  for (int n = 0; n < count; ++n) {
    Rng rng = Rng::Derive(cfg.seed, stream, static_cast<uint64_t>(n));
    Utterance u;
    u.id = stream + "_" + std::to_string(n);
    u.dim = dim;
    const int num_labels = rng.UniformInt(cfg.min_labels, cfg.max_labels);
    for (int i = 0; i < num_labels; ++i) {
      int g = rng.UniformInt(0, num_plain - 1);
      if (cfg.eos_glyph >= 0) {
        // reserve the marker for the sentence-final position
        while (g == cfg.eos_glyph) g = rng.UniformInt(0, num_plain - 1);
      }
      u.labels.push_back(g);
    }
    if (cfg.eos_glyph >= 0) u.labels.push_back(cfg.eos_glyph);

    std::vector<std::vector<double>> spans;
    auto silence = [&](int frames) {
      spans.emplace_back(static_cast<size_t>(frames) * dim, 0.0);
    };
    silence(rng.UniformInt(cfg.min_gap, cfg.max_gap));
    for (size_t i = 0; i < u.labels.size(); ++i) {
      spans.push_back(templates[u.labels[i]]);
      silence(rng.UniformInt(cfg.min_gap, cfg.max_gap));
    }
    for (const auto& span : spans) {
      u.features.insert(u.features.end(), span.begin(), span.end());
    }
    u.frames = static_cast<int>(u.features.size()) / dim;
    if (cfg.noise_sigma > 0.0) {
      for (double& v : u.features) v += cfg.noise_sigma * rng.Normal();
    }
    corpus.push_back(std::move(u));
  }
  return corpus;
}

}  // namespace seqcaps
