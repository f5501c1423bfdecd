#include <doctest.h>

#include <cmath>
#include <vector>

#include "seqcaps/ctc.h"
#include "seqcaps/model.h"
#include "test_util.h"

using namespace seqcaps;
using testutil::RandomValues;
using testutil::RelErr;

TEST_SUITE_BEGIN("model");

namespace {

ModelConfig TinyModel(RoutingMethod method = RoutingMethod::kSequential) {
  ModelConfig cfg;
  cfg.feature_dim = 6;
  cfg.capsulation.conv_layers = {{3, 3, 3, 2, 2}, {3, 3, 4, 2, 2}};
  cfg.capsulation.primary_height = 5;
  cfg.capsulation.primary_depth = 3;
  cfg.capsulation.dropout_rate = 0.0;
  cfg.alphabet.symbols = {"<b>", "a", "b", "c", "<pad>"};
  cfg.alphabet.blank_index = 0;
  cfg.alphabet.padding_index = 4;
  LayerConfig l1;
  l1.out_height = 4;
  l1.out_depth = 3;
  l1.window = {1, 1};
  l1.method = method;
  LayerConfig l2;
  l2.out_height = 5;
  l2.out_depth = 2;
  l2.window = {1, 1};
  l2.method = method;
  l2.mask_padding = true;
  l2.padding_index = 4;
  cfg.layers = {l1, l2};
  return cfg;
}

}  // namespace

TEST_CASE("dimension chaining and validation") {
  ModelConfig cfg = TinyModel();
  cfg.ChainAndValidate();
  CHECK(cfg.layers[0].in_height == 5);
  CHECK(cfg.layers[0].in_depth == 3);
  CHECK(cfg.layers[1].in_height == 4);
  CHECK(cfg.layers[1].in_depth == 3);

  SUBCASE("class height must match the alphabet") {
    ModelConfig bad = TinyModel();
    bad.layers[1].out_height = 7;
    CHECK_THROWS(bad.ChainAndValidate());
  }
  SUBCASE("padding mask only on the class layer") {
    ModelConfig bad = TinyModel();
    bad.layers[0].mask_padding = true;
    bad.layers[0].padding_index = 4;
    CHECK_THROWS(bad.ChainAndValidate());
  }
  SUBCASE("no layers rejected") {
    ModelConfig bad = TinyModel();
    bad.layers.clear();
    CHECK_THROWS(bad.ChainAndValidate());
  }
}

TEST_CASE("forward emits per-frame log distributions") {
  SrfModel model(TinyModel(), 71);
  Rng rng(72);
  const int frames = 30;
  const auto xv = RandomValues(frames * 6, &rng);
  Tape tape;
  ModelOutput out = model.Forward(tape, xv, frames, {});
  const int T = model.OutputFrames(frames);
  const int V = 5;
  REQUIRE(out.log_probs.shape() == Shape{T, V});
  for (int t = 0; t < T; ++t) {
    double sum = 0.0;
    for (int v = 0; v < V; ++v) sum += std::exp(out.log_probs.Value()[t * V + v]);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  // activation lengths live in [0,1); the masked padding class is silent
  for (int t = 0; t < T; ++t) {
    for (int v = 0; v < V; ++v) {
      const double a = out.activations.Value()[t * V + v];
      CHECK(a >= 0.0);
      CHECK(a < 1.0);
    }
    CHECK(out.activations.Value()[t * V + 4] == 0.0);
  }
}

TEST_CASE("masked padding class never wins a frame") {
  SrfModel model(TinyModel(), 73);
  Rng rng(74);
  const auto xv = RandomValues(25 * 6, &rng);
  const auto lp = model.InferLogProbs(xv, 25);
  const int T = model.OutputFrames(25);
  for (int t = 0; t < T; ++t) {
    int best = 0;
    for (int v = 1; v < 5; ++v) {
      if (lp[t * 5 + v] > lp[t * 5 + best]) best = v;
    }
    CHECK(best != 4);
  }
}

TEST_CASE("same seed builds identical models") {
  SrfModel a(TinyModel(), 99), b(TinyModel(), 99), c(TinyModel(), 100);
  REQUIRE(a.params().Count() == b.params().Count());
  bool all_equal = true, any_diff_seed = false;
  for (int i = 0; i < a.params().Count(); ++i) {
    all_equal &= a.params().At(i).value == b.params().At(i).value;
    any_diff_seed |= a.params().At(i).value != c.params().At(i).value;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("parameter count matches the layer formulas") {
  ModelConfig cfg = TinyModel();
  SrfModel model(cfg, 5);
  // capsulation: conv kernels + bn gain/bias + projection + expansion
  int64_t expected = 0;
  expected += 2 * (3 * 3 * 1 * 3) + 2 * 3;  // conv0 + bn
  expected += 2 * (3 * 3 * 3 * 4) + 2 * 4;  // conv1 + bn
  const int flattened = 2 * 4;              // ceil(6/2/2)=2 freq bins, 4 channels
  expected += flattened * 5;                // projection
  expected += 2 * (3 * 3 * 1 * 3);          // depth expansion
  expected += 3 * 5 * 4 * (3 * 3);          // layer 1 transforms
  expected += 2 * (4 * 3);                  // layer norm gain+bias
  expected += 3 * 4 * 5 * (3 * 2);          // layer 2 transforms
  expected += 1;                            // output gain
  CHECK(model.ParameterCount() == expected);
}

TEST_CASE("ctc loss through the model matches finite differences on sampled parameters") {
  ModelConfig cfg = TinyModel();
  SrfModel model(cfg, 7);
  Rng rng(8);
  const int frames = 18;
  const auto xv = RandomValues(frames * 6, &rng);
  const LabelSeq labels{1, 3};

  auto loss_value = [&]() {
    Tape tape;
    RunOptions options;
    options.training = true;  // exercise batch-norm batch statistics
    ModelOutput out = model.Forward(tape, xv, frames, options);
    return CtcLoss(out.log_probs, labels, 0).Scalar();
  };

  Tape tape;
  RunOptions options;
  options.training = true;
  ModelOutput out = model.Forward(tape, xv, frames, options);
  Tensor loss = CtcLoss(out.log_probs, labels, 0);
  tape.Backward(loss);

  // one tensor from each block family; snapshot the gradients before the
  // finite-difference evaluations re-lease the parameters
  const std::vector<std::string> names{
      "capsulation/conv0/branch0/kernel", "capsulation/project_u/weight",
      "routing1/transform", "routing2/transform", "norm1/gain",
      "capsulation/conv1/bn_bias"};
  std::vector<std::vector<double>> grads;
  for (const auto& name : names) {
    const int idx = model.params().IndexOf(name);
    REQUIRE(idx >= 0);
    grads.push_back(tape.Grad(model.leased()[idx]));
  }
  for (size_t n = 0; n < names.size(); ++n) {
    CAPTURE(names[n]);
    const int idx = model.params().IndexOf(names[n]);
    size_t pick = 0;
    for (size_t k = 1; k < grads[n].size(); ++k) {
      if (std::abs(grads[n][k]) > std::abs(grads[n][pick])) pick = k;
    }
    const double fd =
        CentralDifference(&model.params().At(idx).value[pick], loss_value, 1e-5);
    CHECK(RelErr(grads[n][pick], fd) < 1e-4);
  }
}

TEST_SUITE_END();
