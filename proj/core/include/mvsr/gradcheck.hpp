#pragma once

#include <string>
#include <vector>

#include <cstdint>

namespace mvsr {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0;
  int probes = 0;
  bool pass = false;
};

/// Central finite differences (double precision, step 1e-3) against tape
/// backward, one case per differentiable primitive plus the composed score
/// MLP, ConvGRU, U-Net and loss paths. The reported error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1).
std::vector<GradCheckCase> run_gradcheck(uint64_t seed, double tol = 1e-4);

bool all_pass(const std::vector<GradCheckCase>& cases);

}  // namespace mvsr
