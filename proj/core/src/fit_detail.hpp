#ifndef DIVE_FIT_DETAIL_HPP
#define DIVE_FIT_DETAIL_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dive/mstep.hpp"
#include "dive/optim.hpp"
#include "dive/sigmoid.hpp"
#include "dive/types.hpp"

namespace dive::detail {

inline Eigen::Vector4d theta_to_vec(const TrajectoryParams& t) {
  return Eigen::Vector4d(t.a, t.b, t.c, t.d);
}

inline TrajectoryParams vec_to_theta(const Eigen::VectorXd& v) {
  return TrajectoryParams{v[0], v[1], v[2], v[3]};
}

inline std::pair<double, double> dps_range(const Dataset& data,
                                           const std::vector<SubjectStage>& stages) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::int64_t r = 0; r < data.row_count(); ++r) {
    const double s = dps(stages[data.row_subject[r]], data.rows[r].age);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  return {lo, hi};
}

// Deterministic multi-start recipe around the incumbent: sign flips and
// rescalings of the slope plus centre shifts across the observed DPS span.
inline std::vector<TrajectoryParams> theta_starts(const TrajectoryParams& init, double dps_lo,
                                                  double dps_hi, int count) {
  const double span = dps_hi - dps_lo;
  const double mid = 0.5 * (dps_lo + dps_hi);
  std::vector<TrajectoryParams> starts;
  starts.push_back(init);
  const TrajectoryParams variants[] = {
      {init.a, -init.b, init.c, init.d},
      {init.a, 2.0 * init.b, mid, init.d},
      {init.a, 0.5 * init.b, init.c + 0.25 * span, init.d},
      {init.a, init.b, init.c - 0.25 * span, init.d},
      {init.a, -2.0 * init.b, mid, init.d},
      {init.a, 4.0 * init.b, init.c, init.d},
      {init.a, init.b / 4.0, mid, init.d},
  };
  for (const auto& v : variants) {
    if (static_cast<int>(starts.size()) >= count) break;
    starts.push_back(v);
  }
  return starts;
}

// Stage sub-problems are optimized in centred coordinates
//   x = (log alpha, s_mid)  with  s_mid = alpha * t_mid + beta,
// which decorrelates the two directions (ages sit far from zero) and makes
// s_mid directly interpretable as the subject's DPS at its mean age.
struct StageStart {
  double log_alpha = 0.0;
  double s_mid = 0.0;
};

// Start list: the incumbent first, then alpha = 1 with s_mid spread across
// a padded trajectory-centre span. Steep trajectories leave the stage
// objective flat between transitions and collapsed centres leave it without
// spread; the padding keeps the exploration alive in both cases.
inline std::vector<StageStart> stage_starts(const SubjectStage& init, double t_mid,
                                            const std::vector<TrajectoryParams>& trajectories,
                                            int count) {
  std::vector<StageStart> starts;
  starts.push_back({std::log(init.alpha), init.alpha * t_mid + init.beta});
  if (!trajectories.empty()) {
    double c_lo = trajectories.front().c, c_hi = c_lo;
    double width = 0.0;
    for (const auto& t : trajectories) {
      c_lo = std::min(c_lo, t.c);
      c_hi = std::max(c_hi, t.c);
      // 4.4 / |b| covers the 1%..99% transition of one sigmoid
      width = std::max(width, 4.4 / std::max(std::abs(t.b), 1e-3));
    }
    const double pad = 0.5 * std::max(c_hi - c_lo, width);
    const double lo = c_lo - pad;
    const double hi = c_hi + pad;
    for (double frac : {0.5, 0.05, 0.95, 0.275, 0.725, 0.165, 0.835}) {
      if (static_cast<int>(starts.size()) >= count) break;
      starts.push_back({0.0, lo + frac * (hi - lo)});
    }
  }
  return starts;
}

// Driver for a stage objective expressed in centred coordinates. Returns
// the incumbent bit-for-bit when no start improves on it.
inline StageFitResult run_stage_fit(const ObjectiveFn& objective, const SubjectStage& init,
                                    double t_mid,
                                    const std::vector<TrajectoryParams>& trajectories,
                                    int multi_starts, int max_iters) {
  BfgsOptions opts;
  opts.max_iters = max_iters;

  Eigen::VectorXd g(2);
  const Eigen::Vector2d x_init(std::log(init.alpha), init.alpha * t_mid + init.beta);
  const double f_init = objective(x_init, g);

  double best_f = f_init;
  Eigen::VectorXd best_x = x_init;
  bool improved = false;
  for (const StageStart& st : stage_starts(init, t_mid, trajectories, multi_starts)) {
    const BfgsResult r = bfgs_minimize(objective, Eigen::Vector2d(st.log_alpha, st.s_mid), opts);
    if (std::isfinite(r.f) && r.f < best_f) {
      best_f = r.f;
      best_x = r.x;
      improved = true;
    }
  }

  StageFitResult out;
  if (improved) {
    const double alpha = std::exp(best_x[0]);
    out.stage = SubjectStage{alpha, best_x[1] - alpha * t_mid};
  } else {
    out.stage = init;
  }
  out.objective = best_f;
  out.progressed = improved;
  return out;
}

// Multi-start maximization of a theta sub-objective supplied as its negation
// (for the minimizer). Guarantees the returned theta is never worse than
// init; when nothing improves, init is returned bit-for-bit.
inline TrajectoryFitResult maximize_theta(const ObjectiveFn& negated,
                                          const std::vector<TrajectoryParams>& starts,
                                          int max_iters) {
  Eigen::VectorXd g(4);
  const double f_init = negated(theta_to_vec(starts.front()), g);

  BfgsOptions opts;
  opts.max_iters = max_iters;
  double best_f = f_init;
  Eigen::VectorXd best_x = theta_to_vec(starts.front());
  bool improved = false;
  for (const auto& s : starts) {
    const BfgsResult r = bfgs_minimize(negated, theta_to_vec(s), opts);
    if (std::isfinite(r.f) && r.f < best_f) {
      best_f = r.f;
      best_x = r.x;
      improved = true;
    }
  }

  TrajectoryFitResult out;
  out.theta = improved ? vec_to_theta(best_x) : starts.front();
  out.objective = -best_f;
  out.progressed = improved;
  out.flat = std::abs(out.theta.b) < 1e-12;
  return out;
}

}  // namespace dive::detail

#endif
