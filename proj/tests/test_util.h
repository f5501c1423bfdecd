// Shared helpers for the unit suites.

#ifndef SEQCAPS_TESTS_TEST_UTIL_H_
#define SEQCAPS_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "seqcaps/capsule.h"
#include "seqcaps/params.h"
#include "seqcaps/rng.h"
#include "seqcaps/tensor.h"

namespace testutil {

// Leases a ParamStore onto a fresh tape and exposes the ForwardContext the
// capsule blocks expect.
struct Lease {
  seqcaps::Tape tape;
  std::vector<seqcaps::Tensor> leased;
  seqcaps::ForwardContext ctx;

  explicit Lease(const seqcaps::ParamStore& store, bool training = false,
                 seqcaps::Rng* dropout_rng = nullptr,
                 seqcaps::CouplingHook* couplings = nullptr) {
    for (int i = 0; i < store.Count(); ++i) {
      leased.push_back(tape.Leaf(store.At(i).shape, store.At(i).value));
    }
    ctx.tape = &tape;
    ctx.leased = &leased;
    ctx.training = training;
    ctx.dropout_rng = dropout_rng;
    ctx.couplings = couplings;
  }
};

inline double RelErr(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline std::vector<double> RandomValues(int n, seqcaps::Rng* rng, double lo = -1.0,
                                        double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng->Uniform(lo, hi);
  return v;
}

// Checks tape gradients of `loss(x)` against central finite differences for
// every element of x. `build` must construct the loss from a fresh leaf each
// call. Returns the worst relative error.
inline double CheckGradient(
    std::vector<double>* x,
    const std::function<seqcaps::Tensor(seqcaps::Tape&, const std::vector<double>&)>& build,
    double step = 1e-5) {
  seqcaps::Tape tape;
  seqcaps::Tensor loss = build(tape, *x);
  tape.Backward(loss);
  // The leaf is node 0 by construction in all tests using this helper.
  const auto grads = tape.Grad(seqcaps::Tensor(&tape, 0));

  double worst = 0.0;
  for (size_t i = 0; i < x->size(); ++i) {
    const double fd = seqcaps::CentralDifference(
        &(*x)[i],
        [&]() {
          seqcaps::Tape t2;
          return build(t2, *x).Scalar();
        },
        step);
    worst = std::max(worst, RelErr(grads[i], fd));
  }
  return worst;
}

}  // namespace testutil

#endif  // SEQCAPS_TESTS_TEST_UTIL_H_
