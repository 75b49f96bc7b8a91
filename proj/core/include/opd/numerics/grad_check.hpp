#pragma once

#include <functional>
#include <vector>

#include "opd/numerics/autodiff.hpp"

namespace opd {

/// Builds a scalar loss on the given tape; it must bind its inputs through
/// Tape::param so the checker can perturb them in place.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients with central differences for every
/// coordinate of `inputs`. The relative error of one coordinate is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
GradCheckReport grad_check(const LossBuilder& loss, const std::vector<Parameter*>& inputs,
                           double eps = 1e-5);

}  // namespace opd
