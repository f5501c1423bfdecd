#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "seqcaps/dataio.h"
#include "test_util.h"

using namespace seqcaps;
using testutil::RandomValues;

TEST_SUITE_BEGIN("dataio");

namespace {

std::filesystem::path TempDir() {
  auto dir = std::filesystem::temp_directory_path() / "seqcaps_dataio_test";
  std::filesystem::create_directories(dir);
  return dir;
}

Utterance MakeUtterance(const std::string& id, int frames, int dim, Rng* rng) {
  Utterance u;
  u.id = id;
  u.frames = frames;
  u.dim = dim;
  u.features = RandomValues(frames * dim, rng, -3, 3);
  return u;
}

SyntheticTaskConfig DefaultTask() {
  SyntheticTaskConfig cfg;
  cfg.symbols = {"g0", "g1", "g2", "g3"};
  cfg.feature_dim = 8;
  cfg.glyph_frames = 6;
  cfg.noise_sigma = 0.05;
  cfg.min_labels = 1;
  cfg.max_labels = 3;
  cfg.seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("feature file round trip is exact") {
  Rng rng(401);
  std::vector<Utterance> original{MakeUtterance("u1", 3, 4, &rng),
                                  MakeUtterance("u2", 5, 4, &rng)};
  const auto path = (TempDir() / "features.csv").string();
  SaveFeatures(original, path);
  const auto loaded = LoadFeatures(path);
  REQUIRE(loaded.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(loaded[i].id == original[i].id);
    CHECK(loaded[i].frames == original[i].frames);
    CHECK(loaded[i].dim == original[i].dim);
    CHECK(loaded[i].features == original[i].features);  // bit exact
  }
}

TEST_CASE("empty file loads to an empty list") {
  const auto path = (TempDir() / "empty.csv").string();
  std::ofstream(path).close();
  CHECK(LoadFeatures(path).empty());
}

TEST_CASE("hand-authored fixture parses to known values") {
  const auto path = (TempDir() / "fixture.csv").string();
  std::ofstream out(path);
  out << "fix_1,2,3\n1.5,-2.25,0.125\n0,1e-3,42\n";
  out.close();
  const auto loaded = LoadFeatures(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].id == "fix_1");
  CHECK(loaded[0].frames == 2);
  CHECK(loaded[0].dim == 3);
  CHECK(loaded[0].features ==
        std::vector<double>{1.5, -2.25, 0.125, 0.0, 0.001, 42.0});
}

TEST_CASE("malformed feature files are rejected") {
  const auto dir = TempDir();
  SUBCASE("bad header") {
    const auto path = (dir / "bad1.csv").string();
    std::ofstream(path) << "missing_fields,3\n";
    CHECK_THROWS_AS(LoadFeatures(path), DataError);
  }
  SUBCASE("dimension mismatch") {
    const auto path = (dir / "bad2.csv").string();
    std::ofstream(path) << "u,1,3\n1.0,2.0\n";
    CHECK_THROWS_AS(LoadFeatures(path), DataError);
  }
  SUBCASE("duplicate ids") {
    const auto path = (dir / "bad3.csv").string();
    std::ofstream(path) << "u,1,1\n1.0\nu,1,1\n2.0\n";
    CHECK_THROWS_AS(LoadFeatures(path), DataError);
  }
  SUBCASE("truncated body") {
    const auto path = (dir / "bad4.csv").string();
    std::ofstream(path) << "u,3,1\n1.0\n";
    CHECK_THROWS_AS(LoadFeatures(path), DataError);
  }
}

TEST_CASE("transcripts attach labels through the alphabet") {
  LabelAlphabet alphabet;
  alphabet.symbols = {"<b>", "g0", "g1"};
  alphabet.blank_index = 0;
  Rng rng(403);
  std::vector<Utterance> utts{MakeUtterance("a", 2, 2, &rng),
                              MakeUtterance("b", 2, 2, &rng)};
  const auto path = (TempDir() / "trans.tsv").string();
  std::ofstream(path) << "a\tg0 g1 g0\nb\tg1\n";
  LoadTranscripts(path, alphabet, &utts);
  CHECK(utts[0].labels == LabelSeq{1, 2, 1});
  CHECK(utts[1].labels == LabelSeq{2});

  SUBCASE("unknown symbols rejected") {
    std::ofstream(path) << "a\tg9\n";
    CHECK_THROWS_AS(LoadTranscripts(path, alphabet, &utts), DataError);
  }
  SUBCASE("unknown ids rejected") {
    std::ofstream(path) << "zz\tg0\n";
    CHECK_THROWS_AS(LoadTranscripts(path, alphabet, &utts), DataError);
  }
  SUBCASE("round trip through save") {
    SaveTranscripts(utts, alphabet, path);
    std::vector<Utterance> fresh{MakeUtterance("a", 2, 2, &rng),
                                 MakeUtterance("b", 2, 2, &rng)};
    LoadTranscripts(path, alphabet, &fresh);
    CHECK(fresh[0].labels == utts[0].labels);
    CHECK(fresh[1].labels == utts[1].labels);
  }
}

TEST_CASE("per-utterance normalization") {
  Rng rng(405);
  SUBCASE("random input becomes zero mean, unit variance") {
    Utterance u = MakeUtterance("n", 40, 3, &rng);
    const Utterance out = NormalizeUtterance(u);
    for (int d = 0; d < 3; ++d) {
      double mean = 0.0, var = 0.0;
      for (int f = 0; f < 40; ++f) mean += out.features[f * 3 + d];
      mean /= 40;
      for (int f = 0; f < 40; ++f) {
        const double x = out.features[f * 3 + d] - mean;
        var += x * x;
      }
      var /= 40;
      CHECK(std::abs(mean) < 1e-9);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("already-normalized input is unchanged") {
    Utterance u;
    u.id = "pre";
    u.frames = 4;
    u.dim = 1;
    // mean 0, variance exactly 1
    u.features = {1.0, -1.0, 1.0, -1.0};
    const Utterance out = NormalizeUtterance(u);
    for (int i = 0; i < 4; ++i) {
      CHECK(std::abs(out.features[i] - u.features[i]) < 1e-9);
    }
  }
  SUBCASE("constant coefficients map to zero through the floor") {
    Utterance u;
    u.id = "const";
    u.frames = 3;
    u.dim = 2;
    u.features = {5.0, 1.0, 5.0, 2.0, 5.0, 3.0};
    const Utterance out = NormalizeUtterance(u);
    CHECK(out.features[0] == 0.0);
    CHECK(out.features[2] == 0.0);
    CHECK(out.features[4] == 0.0);
  }
  SUBCASE("too-short utterances rejected") {
    Utterance u = MakeUtterance("short", 1, 2, &rng);
    CHECK_THROWS_AS(NormalizeUtterance(u), DataError);
  }
}

TEST_CASE("speaker-keyed normalization pools by id prefix") {
  Rng rng(407);
  std::vector<Utterance> utts{MakeUtterance("spk1_a", 10, 2, &rng),
                              MakeUtterance("spk1_b", 14, 2, &rng),
                              MakeUtterance("spk2_a", 12, 2, &rng)};
  NormalizeInPlace(&utts, NormalizeMode::kSpeaker);
  // pooled stats for spk1 across both utterances
  for (int d = 0; d < 2; ++d) {
    double mean = 0.0;
    int64_t n = 0;
    for (int ui : {0, 1}) {
      for (int f = 0; f < utts[ui].frames; ++f) {
        mean += utts[ui].features[f * 2 + d];
        ++n;
      }
    }
    CHECK(std::abs(mean / n) < 1e-9);
  }
}

TEST_CASE("synthetic corpus") {
  SyntheticTaskConfig cfg = DefaultTask();
  SUBCASE("deterministic under the seed") {
    const auto a = GenerateSynthetic(cfg, 10, "train");
    const auto b = GenerateSynthetic(cfg, 10, "train");
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].features == b[i].features);  // bit exact
      CHECK(a[i].labels == b[i].labels);
    }
    const auto c = GenerateSynthetic(cfg, 10, "test");
    CHECK(a[0].features != c[0].features);
  }
  SUBCASE("noiseless single glyph embeds the exact template") {
    SyntheticTaskConfig clean = cfg;
    clean.noise_sigma = 0.0;
    clean.min_labels = 1;
    clean.max_labels = 1;
    const auto corpus = GenerateSynthetic(clean, 5, "train");
    const auto templates = MakeGlyphTemplates(clean);
    for (const auto& u : corpus) {
      REQUIRE(u.labels.size() == 1);
      const auto& glyph = templates[u.labels[0]];
      // locate the glyph: silence spans are exactly zero
      bool found = false;
      for (int start = 0; start + clean.glyph_frames <= u.frames && !found; ++start) {
        bool match = true;
        for (int i = 0; i < clean.glyph_frames * clean.feature_dim && match; ++i) {
          match = u.features[start * clean.feature_dim + i] == glyph[i];
        }
        if (match) found = true;
      }
      CHECK(found);
    }
  }
  SUBCASE("eos glyph is appended and excluded elsewhere") {
    SyntheticTaskConfig eos = cfg;
    eos.eos_glyph = 3;
    const auto corpus = GenerateSynthetic(eos, 20, "train");
    for (const auto& u : corpus) {
      REQUIRE(!u.labels.empty());
      CHECK(u.labels.back() == 3);
      for (size_t i = 0; i + 1 < u.labels.size(); ++i) CHECK(u.labels[i] != 3);
    }
  }
  SUBCASE("labels stay reachable after front-end striding") {
    const auto corpus = GenerateSynthetic(cfg, 50, "train");
    for (const auto& u : corpus) {
      // every label contributes glyph frames plus a gap, so at stride 4 the
      // expanded sequence always fits
      const int slices = (u.frames + 3) / 4;
      CHECK(static_cast<int>(2 * u.labels.size() + 1) <= slices);
    }
  }
  SUBCASE("templates are pairwise distinct") {
    const auto templates = MakeGlyphTemplates(cfg);
    for (size_t a = 0; a < templates.size(); ++a) {
      for (size_t b = a + 1; b < templates.size(); ++b) {
        CHECK(templates[a] != templates[b]);
      }
    }
  }
  SUBCASE("config validation") {
    SyntheticTaskConfig bad = cfg;
    bad.symbols = {"only"};
    CHECK_THROWS_AS(bad.Validate(), DataError);
    bad = cfg;
    bad.noise_sigma = -1;
    CHECK_THROWS_AS(bad.Validate(), DataError);
    bad = cfg;
    bad.max_labels = 0;
    CHECK_THROWS_AS(bad.Validate(), DataError);
  }
}

TEST_SUITE_END();
