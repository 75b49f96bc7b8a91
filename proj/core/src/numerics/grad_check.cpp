#include "opd/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace opd {
namespace {

double evaluate(const LossBuilder& loss) {
  Tape tape;
  return loss(tape).value()[0];
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss, const std::vector<Parameter*>& inputs,
                           double eps) {
  GradientMap analytic;
  {
    Tape tape;
    const Var out = loss(tape);
    tape.backward(out, analytic);
  }

  GradCheckReport report;
  for (Parameter* p : inputs) {
    const bool tracked = analytic.contains(*p);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = evaluate(loss);
      p->value[i] = saved - eps;
      const double down = evaluate(loss);
      p->value[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double exact = tracked ? analytic.at(*p)[i] : 0.0;
      const double denom = std::max(1e-8, std::abs(exact) + std::abs(numeric));
      report.max_relative_error = std::max(report.max_relative_error, std::abs(exact - numeric) / denom);
      ++report.coordinates;
    }
  }
  return report;
}

}  // namespace opd
