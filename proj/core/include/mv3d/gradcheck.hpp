#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mv3d/tape.hpp"

namespace mv3d {

using ScalarFn = std::function<Var<double>(Tape<double>&)>;

struct GradCheckResult {
  std::string name;
  double rel_error = 0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  std::size_t coordinates = 0;
};

// Compares reverse-mode gradients of f w.r.t. each tensor in `inputs` against
// central differences with step h. f must read inputs through tape.param().
// Tensors larger than max_coords are probed at max_coords random coordinates.
GradCheckResult gradcheck(const std::string& name, const ScalarFn& f, const std::vector<Tensor<double>*>& inputs,
                          double h = 1e-6, std::size_t max_coords = 0, std::uint64_t seed = 0);

// Every differentiable op, each loss term, the composite objective and both
// encoders, over `repeats` randomized instances each.
std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed, std::size_t repeats);

}  // namespace mv3d
