#ifndef DIVE_OPTIM_HPP
#define DIVE_OPTIM_HPP

#include <functional>

#include <Eigen/Core>

namespace dive {

// Objective callback: fills grad (same size as x) and returns f(x).
using ObjectiveFn = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct BfgsOptions {
  int max_iters = 200;
  double grad_tol = 1e-9;    // stop when ||g||_inf <= grad_tol * (1 + |f|)
  double f_tol = 1e-12;      // stop on relative objective stagnation
  int max_backtracks = 60;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iters = 0;
  bool converged = false;
  bool made_progress = false;  // false when every line search failed at x0
};

// Dense BFGS minimization with Armijo backtracking. Intended for the small
// problems here (2-4 variables). Deterministic: no randomness, fixed
// iteration order. Never returns a point worse than x0.
BfgsResult bfgs_minimize(const ObjectiveFn& f, const Eigen::VectorXd& x0,
                         const BfgsOptions& opts = {});

struct GoldenResult {
  double x = 0.0;
  double f = 0.0;
};

// Golden-section maximization of a unimodal f on [lo, hi]; x_tol is the
// bracket width at which the search stops.
GoldenResult golden_section_max(const std::function<double(double)>& f, double lo, double hi,
                                double x_tol, int max_iters = 200);

}  // namespace dive

#endif
