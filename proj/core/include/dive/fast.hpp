#ifndef DIVE_FAST_HPP
#define DIVE_FAST_HPP

#include <span>

#include "dive/mstep.hpp"
#include "dive/types.hpp"

namespace dive {

// Per-observation weighted vertex means and their normalizers:
//   means(r, k) = sum_l z_lk gamma_k V(r, l),  gamma_k = 1 / sum_l z_lk.
struct ClusterMeans {
  Eigen::MatrixXd means;   // R x K
  Eigen::VectorXd gammas;  // K
};

// One pass over the value matrix. Throws degenerate-cluster when a cluster
// carries zero total posterior mass.
ClusterMeans weighted_cluster_means(const Dataset& data, const Eigen::MatrixXd& posteriors);

// Fast trajectory update: optimizes the weighted-mean least squares
//   -1/(2 sigma_k^2) gamma_k^{-1} sum_(i,j) (<V^ij>_k - f(dps; theta))^2 + log p(theta),
// which has the same gradient in theta as the slow objective (the
// gamma_k^{-1}-scaled mean residuals reproduce the posterior-weighted sums),
// so the two updates share their stationary points.
TrajectoryFitResult fit_trajectory_fast(int k, const Dataset& data, const ClusterMeans& means,
                                        const std::vector<SubjectStage>& stages, double sigma_k,
                                        const TrajectoryPrior& prior,
                                        const TrajectoryParams& init,
                                        const TrajectoryFitOptions& opts = {});

// Fast stage update over the given observation rows (normally the subject's
// rows; staging on a visit subset passes fewer):
//   sum_k gamma_k^{-1} / (2 sigma_k^2) sum_j (<V^ij>_k - f(alpha t + beta; theta_k))^2
//   - log p(alpha, beta).
StageFitResult fit_stage_fast(const Dataset& data, std::span<const std::int32_t> row_ids,
                              const ClusterMeans& means,
                              const std::vector<TrajectoryParams>& trajectories,
                              const Eigen::VectorXd& sigmas, const StagePrior& prior,
                              const SubjectStage& init, const StageFitOptions& opts = {});

struct EquivalenceReport {
  double tol = 1e-8;
  bool pass = false;
  std::vector<double> theta_grad_deviation;  // per cluster
  std::vector<double> stage_grad_deviation;  // per subject
  double max_theta_deviation = 0.0;
  double max_stage_deviation = 0.0;
};

// Numerically checks the fast/slow identities at the model's current
// parameters: grad_theta l_fast = gamma_k grad_theta l_slow per cluster, and
// fast stage gradient = slow stage gradient per subject. Deviations are
// measured relative to the magnitude of the summed gradient terms, so the
// check stays meaningful at stationary points where the gradients cancel.
EquivalenceReport audit_equivalence(const Dataset& data, const ModelState& model,
                                    double tol = 1e-8);

// Same audit against externally supplied means (lets tests corrupt gammas).
EquivalenceReport audit_equivalence(const Dataset& data, const ModelState& model,
                                    const ClusterMeans& means, double tol = 1e-8);

}  // namespace dive

#endif
