#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dcgp/params.hpp"
#include "dcgp/tape.hpp"

namespace dcgp {

// A seeded scalar objective built on a tape. `vars` holds one tape parameter
// per ParamSet tensor, in ParamSet order. Given a fixed seed the objective is
// an ordinary deterministic function of the parameters (all stochastic nodes
// use reparameterized noise drawn from the seed).
using TapeObjective =
    std::function<Var(Tape &, const std::vector<Var> &vars, std::uint64_t seed)>;

struct GradientResult {
  double value = 0.0;
  GradSet grads;
};

// Exact reverse-mode derivatives of the seeded objective. Throws
// NonFiniteGradient naming the offending tensor.
GradientResult gradient(const TapeObjective &objective, const ParamSet &params,
                        std::uint64_t seed);

// Plain evaluation at the same seed; bit-identical to GradientResult::value.
double evaluate(const TapeObjective &objective, const ParamSet &params,
                std::uint64_t seed);

struct FdTensorReport {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool flagged = false;
};

struct FdReport {
  std::vector<FdTensorReport> tensors;
  double max_rel_error = 0.0;
  bool all_passed = true;
};

// Central finite differences with the same seed on both sides of each
// perturbation. Relative error uses max(|fd|, |ad|, 1e-6) as denominator.
FdReport fd_check(const TapeObjective &objective, const ParamSet &params,
                  std::uint64_t seed, double step, double tolerance);

}  // namespace dcgp
