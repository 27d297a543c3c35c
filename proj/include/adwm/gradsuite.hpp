#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adwm {

struct GradCheckResult {
  std::string name;
  double worst = 0.0;  // max relative error over all seeds
  int seeds = 0;
};

/// Central-difference checks of every differentiable op, the weighting heads,
/// IFW/CFW and the end-to-end adwm model, over seeds [seed, seed + seeds).
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, int seeds = 10);

}  // namespace adwm
