#include "dive/optim.hpp"

#include <cmath>
#include <limits>

namespace dive {

BfgsResult bfgs_minimize(const ObjectiveFn& fn, const Eigen::VectorXd& x0,
                         const BfgsOptions& opts) {
  const Eigen::Index n = x0.size();
  BfgsResult res;
  res.x = x0;

  Eigen::VectorXd g(n);
  double f = fn(res.x, g);
  res.f = f;
  if (!std::isfinite(f)) return res;  // hopeless start; report no progress

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  // Scale the first step to unit length so badly scaled objectives
  // (e.g. residuals divided by a floored sigma^2) do not stall the search.
  const double g0 = g.norm();
  if (g0 > 1.0) H *= 1.0 / g0;

  constexpr double c1 = 1e-4;
  Eigen::VectorXd x_new(n), g_new(n);

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    res.iters = iter + 1;
    if (g.lpNorm<Eigen::Infinity>() <= opts.grad_tol * (1.0 + std::abs(f))) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd p = -(H * g);
    double slope = g.dot(p);
    if (!(slope < 0.0)) {  // not a descent direction; reset to steepest descent
      H = Eigen::MatrixXd::Identity(n, n) / std::max(1.0, g.norm());
      p = -(H * g);
      slope = g.dot(p);
      if (!(slope < 0.0)) break;
    }

    double step = 1.0;
    bool accepted = false;
    double f_new = f;
    for (int bt = 0; bt < opts.max_backtracks; ++bt) {
      x_new = res.x + step * p;
      f_new = fn(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // line search exhausted

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);

    const double f_old = f;
    res.x = x_new;
    f = f_new;
    g = g_new;
    res.f = f;
    res.made_progress = true;

    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) +
          rho * s * s.transpose();
    }

    if (std::abs(f_old - f) <= opts.f_tol * (1.0 + std::abs(f_old))) {
      res.converged = true;
      break;
    }
  }
  return res;
}

GoldenResult golden_section_max(const std::function<double(double)>& f, double lo, double hi,
                                double x_tol, int max_iters) {
  constexpr double invphi = 0.6180339887498949;  // (sqrt(5) - 1) / 2
  double a = lo, b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c);
  double fd = f(d);

  GoldenResult best;
  best.x = fc >= fd ? c : d;
  best.f = fc >= fd ? fc : fd;

  for (int i = 0; i < max_iters && (b - a) > x_tol; ++i) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
    if (fc > best.f) {
      best.f = fc;
      best.x = c;
    }
    if (fd > best.f) {
      best.f = fd;
      best.x = d;
    }
  }
  return best;
}

}  // namespace dive
