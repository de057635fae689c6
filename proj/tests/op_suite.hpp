#pragma once

#include <string>
#include <vector>

#include "grad_check.hpp"

namespace gausstr::testing {

struct OpCase {
  std::string name;
  FdResult fd;
};

// Finite-difference sweep over every tape op, `repeats` random draws each.
// Inputs are sampled away from kinks (relu/abs zeros, clamp edges, bilinear
// cell boundaries) so central differences see the smooth branch.
std::vector<OpCase> run_op_grad_suite(uint64_t seed, int repeats);

}  // namespace gausstr::testing
