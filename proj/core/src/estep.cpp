#include "dive/estep.hpp"

#include <cmath>
#include <string>

#include "dive/parallel.hpp"
#include "dive/sigmoid.hpp"

namespace dive {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454836;
constexpr double kLogFloor = 1e-300;  // z_prev entries can underflow to 0
}  // namespace

Eigen::VectorXd normalize_log_weights(const Eigen::VectorXd& x) {
  const Eigen::Index K = x.size();
  for (Eigen::Index k = 0; k < K; ++k)
    if (!std::isfinite(x[k]))
      throw Error(ErrorCode::inference_divergence,
                  "non-finite log weight at component " + std::to_string(k));
  Eigen::VectorXd z(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    double denom = 0.0;
    for (Eigen::Index m = 0; m < K; ++m) denom += std::exp(x[m] - x[k]);
    z[k] = 1.0 / denom;
  }
  return z;
}

DataFitMatrix compute_data_fit(const Dataset& data, const ModelState& model, int threads) {
  const std::int64_t L = data.vertex_count();
  const std::int64_t R = data.row_count();
  const int K = model.K;
  for (int k = 0; k < K; ++k)
    if (!(model.sigmas[k] > 0.0))
      throw Error(ErrorCode::parameter_domain,
                  "sigma must be > 0 for cluster " + std::to_string(k));

  // Trajectory values per (row, cluster); rows share one DPS per visit.
  Eigen::MatrixXd fitted(R, K);
  for (std::int64_t r = 0; r < R; ++r) {
    const double s = dps(model.stages[data.row_subject[r]], data.rows[r].age);
    for (int k = 0; k < K; ++k) fitted(r, k) = sigmoid_eval(s, model.trajectories[k]);
  }

  DataFitMatrix out;
  out.d.resize(L, K);
  for (int k = 0; k < K; ++k) {
    const double sigma2 = model.sigmas[k] * model.sigmas[k];
    const double norm = -0.5 * static_cast<double>(R) * (kLogTwoPi + std::log(sigma2));
    const double inv2s2 = 1.0 / (2.0 * sigma2);
    parallel_for(0, L, threads, [&](std::int64_t l) {
      const double ssr = (data.values.col(l) - fitted.col(k)).squaredNorm();
      out.d(l, k) = norm - ssr * inv2s2;
    });
  }
  return out;
}

Eigen::VectorXd posterior_log_row(std::int64_t l, const DataFitMatrix& dfit,
                                  const Eigen::MatrixXd& z_prev,
                                  const std::vector<std::vector<std::int32_t>>& adjacency,
                                  double lambda) {
  const Eigen::Index K = dfit.d.cols();
  const double diff = std::exp(-lambda * lambda);
  const double coeff = std::exp(lambda) - diff;
  Eigen::VectorXd logw(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    double w = dfit.d(l, k);
    for (std::int32_t l2 : adjacency[l]) {
      const double arg = diff + z_prev(l2, k) * coeff;
      w += std::log(arg > kLogFloor ? arg : kLogFloor);
    }
    if (!std::isfinite(w))
      throw Error(ErrorCode::inference_divergence,
                  "non-finite log weight at vertex " + std::to_string(l) + ", cluster " +
                      std::to_string(k));
    logw[k] = w;
  }
  return logw;
}

Eigen::MatrixXd update_posteriors(const DataFitMatrix& dfit, const Eigen::MatrixXd& z_prev,
                                  const std::vector<std::vector<std::int32_t>>& adjacency,
                                  double lambda, int threads) {
  const std::int64_t L = dfit.d.rows();
  const Eigen::Index K = dfit.d.cols();
  if (z_prev.rows() != L || z_prev.cols() != K)
    throw Error(ErrorCode::config, "z_prev shape does not match data-fit matrix");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw Error(ErrorCode::parameter_domain, "lambda must be finite and >= 0");

  Eigen::MatrixXd z(L, K);
  parallel_for(0, L, threads, [&](std::int64_t l) {
    z.row(l) = normalize_log_weights(posterior_log_row(l, dfit, z_prev, adjacency, lambda))
                   .transpose();
  });
  return z;
}

}  // namespace dive
