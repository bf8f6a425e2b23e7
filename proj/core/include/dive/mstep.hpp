#ifndef DIVE_MSTEP_HPP
#define DIVE_MSTEP_HPP

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "dive/estep.hpp"
#include "dive/types.hpp"

namespace dive {

// sigma_k is floored here to keep D_lk finite on zero-noise data.
inline constexpr double kSigmaFloor = 1e-6;

struct LambdaGrid {
  double min = 0.0;
  double max = 5.0;
  int points = 51;
};

struct FitConfig {
  int K = 2;
  int max_outer_iters = 50;
  double objective_rel_tol = 1e-6;  // relative objective change stopping rule
  int theta_multi_starts = 5;
  LambdaGrid lambda_grid;
  std::uint64_t seed = 0;
  bool use_fast_path = true;  // slow sub-updates retained for audits
  int threads = 1;
  int kmeans_restarts = 10;
  int max_inner_iters = 200;  // quasi-Newton iteration cap per sub-problem

  void validate() const;
};

struct FitMode {
  enum class Kind { full, roi_fixed, no_staging };
  Kind kind = Kind::full;
  std::vector<std::int32_t> roi_labels;  // per-vertex cluster, roi_fixed only

  static FitMode full() { return {}; }
  static FitMode roi(std::vector<std::int32_t> labels) {
    return {Kind::roi_fixed, std::move(labels)};
  }
  static FitMode no_staging() { return {Kind::no_staging, {}}; }
};

enum class SubStepKind { estep, trajectory, sigma, stage, lambda_step, renormalize };

const char* substep_name(SubStepKind kind);

struct FitReport {
  struct SubStep {
    int iter = 0;
    SubStepKind kind = SubStepKind::estep;
    int index = -1;  // cluster or subject, -1 when not applicable
    double objective = 0.0;
  };
  std::vector<double> outer_objectives;  // objective at init, then per iteration
  std::vector<SubStep> substeps;
  // Most negative objective change over the monotone sub-steps
  // (trajectory, sigma, stage); 0 when every sub-step improved.
  double worst_monotone_delta = 0.0;
  bool converged = false;
  bool diverged = false;
  int iterations = 0;
  double wall_seconds = 0.0;
  std::vector<std::pair<int, int>> empty_clusters;  // (iteration, cluster)
};

struct TrajectoryFitOptions {
  int multi_starts = 5;
  int max_iters = 200;
};

struct TrajectoryFitResult {
  TrajectoryParams theta;
  double objective = 0.0;  // maximized value of the theta sub-objective
  bool progressed = false;
  bool flat = false;  // |b| ~ 0 after fitting; degenerate trajectory
};

// Maximizes  -1/(2 sigma_k^2) sum_l z_lk sum_(i,j) (V_l^ij - f(dps; theta))^2 + log p(theta)
// by multi-start quasi-Newton with analytic gradients. Never returns a theta
// whose objective is below the init's.
TrajectoryFitResult fit_trajectory(int k, const Dataset& data, const Eigen::MatrixXd& posteriors,
                                   const std::vector<SubjectStage>& stages, double sigma_k,
                                   const TrajectoryPrior& prior, const TrajectoryParams& init,
                                   const TrajectoryFitOptions& opts = {});

// Closed-form noise update:
//   sigma_k^2 = [sum_l z_lk sum_(i,j) (V_l^ij - f)^2] / (|I| sum_l z_lk),
// the stationary point of the sigma likelihood; result floored at kSigmaFloor.
double update_sigma(int k, const Dataset& data, const Eigen::MatrixXd& posteriors,
                    const std::vector<SubjectStage>& stages, const TrajectoryParams& theta_k);

struct StageFitOptions {
  int max_iters = 200;
  // Extra deterministic starts spread over the trajectory-centre span; the
  // incumbent stage is always the first start.
  int multi_starts = 5;
};

struct StageFitResult {
  SubjectStage stage;
  double objective = 0.0;  // minimized stage sub-objective
  bool progressed = false;
};

// Minimizes  sum_l sum_k z_lk / (2 sigma_k^2) sum_{j in I_i} (V_l^ij - f(alpha t + beta))^2
//            - log p(alpha, beta)
// over (log alpha, beta), so alpha stays > 0. Never worsens the init.
StageFitResult fit_stage(int subject, const Dataset& data, const Eigen::MatrixXd& posteriors,
                         const std::vector<TrajectoryParams>& trajectories,
                         const Eigen::VectorXd& sigmas, const StagePrior& prior,
                         const SubjectStage& init, const StageFitOptions& opts = {});

// Posterior row as a function of lambda (normalized to the simplex); equals
// the update_posteriors output row for the same inputs.
Eigen::VectorXd zeta_row(std::int64_t l, double lambda, const DataFitMatrix& dfit,
                         const Eigen::MatrixXd& z_prev,
                         const std::vector<std::vector<std::int32_t>>& adjacency);

double zeta(std::int64_t l, int k, double lambda, const DataFitMatrix& dfit,
            const Eigen::MatrixXd& z_prev,
            const std::vector<std::vector<std::int32_t>>& adjacency);

// Grid search plus golden-section refinement of the lambda objective
//   sum_l sum_k zeta_lk(lambda) [D_lk + lambda sum_{l2} zeta_{l2,k}
//                                - lambda^2 sum_{l2} (1 - zeta_{l2,k})].
// Ties break toward the smallest grid point.
double fit_lambda(const DataFitMatrix& dfit, const Eigen::MatrixXd& z_prev,
                  const std::vector<std::vector<std::int32_t>>& adjacency,
                  const LambdaGrid& grid, int threads = 1);

// Seeded k-means over per-vertex observation vectors, softened to
// 0.9 / 0.1/(K-1) posteriors; stages start at alpha=1, beta=-mean age;
// trajectories from robust range statistics; sigma from update_sigma;
// lambda = 1.
ModelState initialize(const Dataset& data, const FitConfig& config);

// Generalized-EM outer loop. Per iteration: E-step, then per cluster
// trajectory + sigma updates, then per subject stage updates, then lambda,
// then DPS renormalization. roi_fixed freezes one-hot posteriors and skips
// the E-step; no_staging pins every stage at (1, 0) and skips both the
// stage updates and the renormalization.
std::pair<ModelState, FitReport> gem_fit(const Dataset& data, const FitConfig& config,
                                         const Priors& priors,
                                         const FitMode& mode = FitMode::full(),
                                         const std::optional<ModelState>& init = std::nullopt);

}  // namespace dive

#endif
