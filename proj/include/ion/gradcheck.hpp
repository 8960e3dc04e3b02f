#pragma once
// Finite-difference verification of the tape's backward rules (double only).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ion/tensor.hpp"

namespace ion {

using ScalarFn = std::function<Tensor<double>(Tape<double>*, std::vector<Tensor<double>>&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // Non-empty: backward contributions of this op are scaled by 1.5.
  std::string corrupt_op;
  // When > 0, an element whose error exceeds this is re-measured with eps/10
  // and keeps the smaller error. A step that straddles a leaky-ReLU or
  // max-pool kink shrinks away under refinement; a wrong backward rule does not.
  double refine_above = 0;
};

// Max over all input elements of |a - n| / max(|a|, |n|, 1e-8), where a is the
// tape gradient and n the central difference (f(x+eps) - f(x-eps)) / 2eps.
// Marks every input as requiring gradients.
double grad_check(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                  const GradCheckOptions& options = {});

struct GradCheckCase {
  std::string name;
  ScalarFn f;
  std::vector<Tensor<double>> inputs;
  double tolerance = 1e-4;
};

struct GradCheckOutcome {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed() const { return max_rel_error <= tolerance; }
};

// One case per differentiable operator, on small random inputs kept away from
// kinks of piecewise operators.
std::vector<GradCheckCase> operator_gradcheck_cases(std::uint64_t seed);

std::vector<GradCheckOutcome> run_gradcheck_cases(const std::vector<GradCheckCase>& cases,
                                                  const GradCheckOptions& options = {});

}  // namespace ion
