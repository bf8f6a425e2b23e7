#ifndef DIVE_SIGMOID_HPP
#define DIVE_SIGMOID_HPP

#include <algorithm>
#include <cmath>

#include "dive/types.hpp"

namespace dive {

// DPS of a visit at age t: alpha * t + beta.
inline double dps(const SubjectStage& stage, double t) {
  return stage.alpha * t + stage.beta;
}

// f(s; theta) = d + a / (1 + exp(-b (s - c))).
// Total function: the exponent is clamped at +-500, so saturated inputs
// return the asymptotes instead of overflowing.
inline double sigmoid_eval(double s, const TrajectoryParams& theta) {
  const double z = std::clamp(-theta.b * (s - theta.c), -500.0, 500.0);
  return theta.d + theta.a / (1.0 + std::exp(z));
}

struct SigmoidGrad {
  double da = 0.0;
  double db = 0.0;
  double dc = 0.0;
  double dd = 0.0;
  double ds = 0.0;
};

// Analytic partials of sigmoid_eval with respect to (a, b, c, d) and s.
inline SigmoidGrad sigmoid_grad(double s, const TrajectoryParams& theta) {
  const double z = std::clamp(-theta.b * (s - theta.c), -500.0, 500.0);
  const double u = 1.0 / (1.0 + std::exp(z));  // logistic value
  const double uu = u * (1.0 - u);
  SigmoidGrad g;
  g.da = u;
  g.db = theta.a * uu * (s - theta.c);
  g.dc = -theta.a * theta.b * uu;
  g.dd = 1.0;
  g.ds = theta.a * theta.b * uu;
  return g;
}

}  // namespace dive

#endif
