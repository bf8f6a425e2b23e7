#include "dive/fast.hpp"

#include <cmath>
#include <string>

#include "dive/optim.hpp"
#include "dive/sigmoid.hpp"
#include "fit_detail.hpp"

namespace dive {

ClusterMeans weighted_cluster_means(const Dataset& data, const Eigen::MatrixXd& posteriors) {
  const Eigen::Index K = posteriors.cols();
  ClusterMeans out;
  out.gammas.resize(K);
  const Eigen::VectorXd mass = posteriors.colwise().sum();
  for (Eigen::Index k = 0; k < K; ++k) {
    if (!(mass[k] > 0.0))
      throw Error(ErrorCode::degenerate_cluster,
                  "cluster " + std::to_string(k) + " has zero posterior mass");
    out.gammas[k] = 1.0 / mass[k];
  }
  // one matrix-vector pass per cluster; each column's result is independent
  // of the others, which keeps label permutations bit-exact
  out.means.resize(data.values.rows(), K);
  for (Eigen::Index k = 0; k < K; ++k)
    out.means.col(k) = data.values * (posteriors.col(k) * out.gammas[k]);
  return out;
}

TrajectoryFitResult fit_trajectory_fast(int k, const Dataset& data, const ClusterMeans& means,
                                        const std::vector<SubjectStage>& stages, double sigma_k,
                                        const TrajectoryPrior& prior,
                                        const TrajectoryParams& init,
                                        const TrajectoryFitOptions& opts) {
  if (!(sigma_k > 0.0))
    throw Error(ErrorCode::parameter_domain, "sigma must be > 0 for cluster " + std::to_string(k));
  const std::int64_t R = data.row_count();

  Eigen::VectorXd s(R);
  for (std::int64_t r = 0; r < R; ++r)
    s[r] = dps(stages[data.row_subject[r]], data.rows[r].age);

  // gamma^{-1}-scaled mean residuals carry the same gradient as the
  // posterior-weighted slow objective, so the prior weighting matches too.
  const double scale = 1.0 / (2.0 * sigma_k * sigma_k * means.gammas[k]);

  ObjectiveFn negated = [&, k](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    const TrajectoryParams theta = detail::vec_to_theta(x);
    double ssr = 0.0;
    Eigen::Vector4d acc = Eigen::Vector4d::Zero();
    for (std::int64_t r = 0; r < R; ++r) {
      const double f = sigmoid_eval(s[r], theta);
      const SigmoidGrad g = sigmoid_grad(s[r], theta);
      const double e = means.means(r, k) - f;
      ssr += e * e;
      acc += e * Eigen::Vector4d(g.da, g.db, g.dc, g.dd);
    }
    const auto pg = prior.grad_log_density(theta);
    grad = -2.0 * scale * acc - Eigen::Vector4d(pg[0], pg[1], pg[2], pg[3]);
    return scale * ssr - prior.log_density(theta);
  };

  const auto [lo, hi] = detail::dps_range(data, stages);
  return detail::maximize_theta(negated, detail::theta_starts(init, lo, hi, opts.multi_starts),
                                opts.max_iters);
}

StageFitResult fit_stage_fast(const Dataset& data, std::span<const std::int32_t> row_ids,
                              const ClusterMeans& means,
                              const std::vector<TrajectoryParams>& trajectories,
                              const Eigen::VectorXd& sigmas, const StagePrior& prior,
                              const SubjectStage& init, const StageFitOptions& opts) {
  if (row_ids.empty()) throw Error(ErrorCode::config, "stage fit given no observation rows");
  const int K = static_cast<int>(trajectories.size());

  Eigen::VectorXd weight(K);  // gamma_k^{-1} / (2 sigma_k^2)
  for (int k = 0; k < K; ++k) {
    if (!(sigmas[k] > 0.0))
      throw Error(ErrorCode::parameter_domain, "sigma must be > 0 for cluster " + std::to_string(k));
    weight[k] = 1.0 / (2.0 * sigmas[k] * sigmas[k] * means.gammas[k]);
  }

  double t_mid = 0.0;
  for (std::int32_t r : row_ids) t_mid += data.rows[r].age;
  t_mid /= static_cast<double>(row_ids.size());

  // Centred coordinates x = (log alpha, s_mid); beta = s_mid - alpha t_mid.
  ObjectiveFn objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    const double alpha = std::exp(x[0]);
    const double beta = x[1] - alpha * t_mid;
    double obj = 0.0;
    double g_u = 0.0, g_s = 0.0;
    for (std::int32_t r : row_ids) {
      const double dt = data.rows[r].age - t_mid;
      const double sv = alpha * dt + x[1];
      double row_obj = 0.0, dobj_ds = 0.0;
      for (int k = 0; k < K; ++k) {
        const double e = means.means(r, k) - sigmoid_eval(sv, trajectories[k]);
        const double fs = sigmoid_grad(sv, trajectories[k]).ds;
        row_obj += weight[k] * e * e;
        dobj_ds += -2.0 * weight[k] * fs * e;
      }
      obj += row_obj;
      g_u += dobj_ds * alpha * dt;
      g_s += dobj_ds;
    }
    const auto pg = prior.grad_log_density(x[0], beta);
    grad.resize(2);
    grad[0] = g_u - (pg[0] + pg[1] * (-alpha * t_mid));
    grad[1] = g_s - pg[1];
    return obj - prior.log_density(alpha, beta);
  };

  return detail::run_stage_fit(objective, init, t_mid, trajectories, opts.multi_starts,
                               opts.max_iters);
}

// ---------------------------------------------------------------------------
// Equivalence audit

namespace {

// Relative deviation of two gradient vectors measured against the magnitude
// of their summed terms, which keeps the ratio meaningful when the gradients
// themselves cancel at a stationary point.
double relative_deviation(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double scale_a,
                          double scale_b) {
  const double denom = std::max({scale_a, scale_b, 1e-300});
  return (a - b).norm() / denom;
}

}  // namespace

EquivalenceReport audit_equivalence(const Dataset& data, const ModelState& model,
                                    const ClusterMeans& means, double tol) {
  const std::int64_t R = data.row_count();
  const std::int64_t L = data.vertex_count();
  const std::int64_t N = data.subject_count();
  const int K = model.K;

  EquivalenceReport rep;
  rep.tol = tol;

  Eigen::VectorXd s(R);
  for (std::int64_t r = 0; r < R; ++r)
    s[r] = dps(model.stages[data.row_subject[r]], data.rows[r].age);

  // (a) grad_theta of the fast objective vs gamma_k * grad_theta of the slow
  // objective; both are plain sums of squared residuals (no sigma, no prior),
  // exactly the quantities whose equivalence the fast update relies on.
  rep.theta_grad_deviation.resize(K);
  for (int k = 0; k < K; ++k) {
    Eigen::Vector4d g_fast = Eigen::Vector4d::Zero();
    Eigen::Vector4d g_slow = Eigen::Vector4d::Zero();
    double scale_fast = 0.0, scale_slow = 0.0;
    for (std::int64_t r = 0; r < R; ++r) {
      const double f = sigmoid_eval(s[r], model.trajectories[k]);
      const SigmoidGrad g = sigmoid_grad(s[r], model.trajectories[k]);
      const Eigen::Vector4d df(g.da, g.db, g.dc, g.dd);

      const double e_fast = means.means(r, k) - f;
      g_fast += -2.0 * e_fast * df;
      scale_fast += 2.0 * std::abs(e_fast) * df.norm();

      double wres = 0.0, wabs = 0.0;
      for (std::int64_t l = 0; l < L; ++l) {
        const double e = data.values(r, l) - f;
        wres += model.posteriors(l, k) * e;
        wabs += model.posteriors(l, k) * std::abs(e);
      }
      g_slow += -2.0 * wres * df;
      scale_slow += 2.0 * wabs * df.norm();
    }
    const Eigen::Vector4d g_slow_scaled = means.gammas[k] * g_slow;
    rep.theta_grad_deviation[k] = relative_deviation(g_fast, g_slow_scaled, scale_fast,
                                                     means.gammas[k] * scale_slow);
  }

  // (b) fast vs slow stage gradient per subject, in (alpha, beta).
  rep.stage_grad_deviation.resize(N);
  for (std::int64_t i = 0; i < N; ++i) {
    Eigen::Vector2d g_fast = Eigen::Vector2d::Zero();
    Eigen::Vector2d g_slow = Eigen::Vector2d::Zero();
    double scale_fast = 0.0, scale_slow = 0.0;
    for (std::int32_t r : data.subject_rows[i]) {
      const double t = data.rows[r].age;
      for (int k = 0; k < K; ++k) {
        const double inv_s2 = 1.0 / (model.sigmas[k] * model.sigmas[k]);
        const double f = sigmoid_eval(s[r], model.trajectories[k]);
        const double fs = sigmoid_grad(s[r], model.trajectories[k]).ds;
        const Eigen::Vector2d dsdx(t, 1.0);

        const double e_fast = means.means(r, k) - f;
        const double w_fast = inv_s2 / means.gammas[k];
        g_fast += -w_fast * e_fast * fs * dsdx;
        scale_fast += w_fast * std::abs(e_fast * fs) * dsdx.norm();

        double wres = 0.0, wabs = 0.0;
        for (std::int64_t l = 0; l < L; ++l) {
          const double e = data.values(r, l) - f;
          wres += model.posteriors(l, k) * e;
          wabs += model.posteriors(l, k) * std::abs(e);
        }
        g_slow += -inv_s2 * wres * fs * dsdx;
        scale_slow += inv_s2 * wabs * std::abs(fs) * dsdx.norm();
      }
    }
    rep.stage_grad_deviation[i] = relative_deviation(g_fast, g_slow, scale_fast, scale_slow);
  }

  rep.max_theta_deviation = 0.0;
  for (double d : rep.theta_grad_deviation)
    rep.max_theta_deviation = std::max(rep.max_theta_deviation, d);
  rep.max_stage_deviation = 0.0;
  for (double d : rep.stage_grad_deviation)
    rep.max_stage_deviation = std::max(rep.max_stage_deviation, d);
  rep.pass = rep.max_theta_deviation <= tol && rep.max_stage_deviation <= tol;
  return rep;
}

EquivalenceReport audit_equivalence(const Dataset& data, const ModelState& model, double tol) {
  return audit_equivalence(data, model, weighted_cluster_means(data, model.posteriors), tol);
}

}  // namespace dive
