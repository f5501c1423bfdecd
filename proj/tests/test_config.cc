#include <doctest.h>

#include <string>

#include "seqcaps/config.h"

using namespace seqcaps;

TEST_SUITE_BEGIN("config");

namespace {

const char* kBaseConfig = R"json({
  "version": 1,
  "seed": 321,
  "output_dir": "out",
  "feature_dim": 8,
  "alphabet": {
    "symbols": ["<blank>", "g0", "g1", "g2", "ge", "<pad>"],
    "blank": "<blank>",
    "eos": "ge",
    "padding": "<pad>"
  },
  "capsulation": {
    "conv": [
      {"kernel": [3, 3], "channels": 4, "stride": [2, 2]},
      {"kernel": [3, 3], "channels": 4, "stride": [2, 2]}
    ],
    "dropout": 0.2,
    "primary_height": 5,
    "primary_depth": 3
  },
  "routing": [
    {"method": "sdr", "iterations": 1, "left": 1, "right": 1, "height": 4, "depth": 3},
    {"method": "sdr", "iterations": 1, "left": 1, "right": 1, "height": 6, "depth": 2,
     "mask_padding": true}
  ],
  "train": {
    "warmup_steps": 10,
    "kappa": [[0, 0.4], [5, 0.1]],
    "batch_frames": 300,
    "epochs": 2,
    "average_last": 2
  },
  "features": {"hop_ms": 10.0, "window_ms": 25.0, "delta_frames": 0},
  "data": {
    "synthetic": {
      "symbols": ["g0", "g1", "g2", "ge"],
      "glyph_frames": 8,
      "noise_sigma": 0.05,
      "min_labels": 1,
      "max_labels": 3,
      "eos_symbol": "ge",
      "seed": 12,
      "train_count": 6,
      "valid_count": 2,
      "test_count": 3
    }
  }
})json";

}  // namespace

TEST_CASE("full config parses and chains dimensions") {
  RunConfig cfg = ParseRunConfig(kBaseConfig, {});
  CHECK(cfg.seed == 321);
  CHECK(cfg.model.feature_dim == 8);
  CHECK(cfg.model.alphabet.NumClasses() == 6);
  CHECK(cfg.model.alphabet.eos_index == 4);
  CHECK(cfg.model.alphabet.padding_index == 5);
  CHECK(cfg.model.layers.size() == 2);
  CHECK(cfg.model.layers[0].in_height == 5);
  CHECK(cfg.model.layers[1].in_height == 4);
  CHECK(cfg.model.layers[1].mask_padding);
  CHECK(cfg.model.layers[1].padding_index == 5);
  CHECK(cfg.train.kappa_schedule.size() == 2);
  CHECK(cfg.train.seed == 321);
  CHECK(cfg.data.synthetic->task.eos_glyph == 3);
  CHECK(cfg.data.synthetic->task.feature_dim == 8);
}

TEST_CASE("overrides rewrite scalars and nested fields") {
  RunConfig cfg = ParseRunConfig(
      kBaseConfig, {"train.epochs=7", "seed=99", "routing.0.method=dr",
                    "capsulation.dropout=0.0"});
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.seed == 99);
  CHECK(cfg.train.seed == 99);
  CHECK(cfg.model.layers[0].method == RoutingMethod::kDynamic);
  CHECK(cfg.model.capsulation.dropout_rate == 0.0);
  CHECK_THROWS_AS(ParseRunConfig(kBaseConfig, {"no_equals_sign"}), ConfigError);
}

TEST_CASE("field-level validation errors") {
  auto expect_error = [](const std::string& override_kv, const char* fragment) {
    try {
      ParseRunConfig(kBaseConfig, {override_kv});
      FAIL_CHECK("expected ConfigError for " << override_kv);
    } catch (const ConfigError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos,
                    e.what());
    }
  };
  // class height must match the alphabet size
  expect_error("routing.1.height=9", "alphabet");
  expect_error("version=2", "version");
  expect_error("routing.0.method=bogus", "routing.0.method");
  expect_error("capsulation.dropout=1.5", "capsulation");
  expect_error("train.warmup_steps=0", "train");
  expect_error("alphabet.blank=missing", "alphabet.blank");
  expect_error("features.normalize_mode=bogus", "features.normalize_mode");
  // padding masking somewhere other than the class layer
  expect_error("routing.0.mask_padding=true", "class layer");
}

TEST_CASE("invalid json reported") {
  CHECK_THROWS_AS(ParseRunConfig("{not json", {}), ConfigError);
  CHECK_THROWS_AS(ParseRunConfig("{}", {}), ConfigError);  // missing fields
}

TEST_CASE("synthetic symbols must live in the alphabet") {
  CHECK_THROWS_AS(ParseRunConfig(kBaseConfig, {"data.synthetic.symbols.0=zz"}),
                  ConfigError);
}

TEST_CASE("data loading produces labeled, normalized splits") {
  RunConfig cfg = ParseRunConfig(kBaseConfig, {});
  const DataBundle data = LoadData(cfg);
  CHECK(data.train.size() == 6);
  CHECK(data.valid.size() == 2);
  CHECK(data.test.size() == 3);
  for (const auto& u : data.train) {
    CHECK(!u.labels.empty());
    // remapped into the alphabet: glyph g0 is symbol 1
    for (int y : u.labels) {
      CHECK(y >= 1);
      CHECK(y <= 4);
    }
    CHECK(u.labels.back() == 4);  // appended eos symbol "ge"
    // normalized: per-coefficient mean close to zero
    for (int d = 0; d < u.dim; ++d) {
      double mean = 0.0;
      for (int f = 0; f < u.frames; ++f) mean += u.features[f * u.dim + d];
      CHECK(std::abs(mean / u.frames) < 1e-9);
    }
  }
  SUBCASE("no data section rejected") {
    RunConfig none = ParseRunConfig(kBaseConfig, {});
    none.data.synthetic.reset();
    CHECK_THROWS_AS(LoadData(none), ConfigError);
  }
}

TEST_CASE("structural report carries the layer arithmetic") {
  RunConfig cfg = ParseRunConfig(kBaseConfig, {});
  const std::string report = StructuralReport(cfg);
  // window size 3 per layer, two layers: 1 + 2 + 2 = 5 slices
  CHECK(report.find("receptive field slices: 5") != std::string::npos);
  // matrices: 3*5*4 + 3*4*6 = 60 + 72 = 132
  CHECK(report.find("transform matrices total: 132") != std::string::npos);
  // lookahead: fe right context (4 + 3) + 2 slices * 4 frames = 15
  CHECK(report.find("lookahead frames: 15") != std::string::npos);
  CHECK(report.find("delay ms: 162.5") != std::string::npos);
}

TEST_SUITE_END();
