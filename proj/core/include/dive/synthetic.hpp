#ifndef DIVE_SYNTHETIC_HPP
#define DIVE_SYNTHETIC_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dive/types.hpp"

namespace dive {

enum class MeshKind { grid, random_regular };
enum class LabelKind { patches, potts };

struct ScenarioConfig {
  int K = 3;
  int L = 500;
  int n_subjects = 50;
  int visits_per_subject = 4;
  double visit_spacing_years = 1.0;

  MeshKind mesh = MeshKind::grid;
  int grid_width = 25;      // grid height is L / grid_width
  int regular_degree = 4;   // random_regular only

  LabelKind labels = LabelKind::patches;
  double potts_coupling = 1.5;
  int potts_sweeps = 30;

  double separation = 1.5;         // centre spacing, DPS units
  double trajectory_height = 2.0;  // sigmoid height a
  double noise_sigma = 0.2;        // measurement noise (absolute)

  double alpha_log_sd = 0.2;       // alpha ~ exp(N(0, sd))
  double dps_baseline_sd = 1.0;    // baseline DPS ~ N(0, sd)
  double age_mean = 70.0;
  double age_sd = 5.0;

  std::uint64_t seed = 0;

  void validate() const;
};

// easy / medium / hard: noise at 10% / 25% / 50% of the trajectory height;
// easy uses contiguous patch labels, the others Potts-sampled labels.
ScenarioConfig preset_scenario(const std::string& name, std::uint64_t seed);

// Generator-side truth for recovery scoring.
struct GroundTruth {
  std::vector<std::int32_t> labels;            // per vertex, in [0, K)
  std::vector<TrajectoryParams> trajectories;  // per cluster
  std::vector<SubjectStage> stages;            // per subject
  double noise_sigma = 0.0;
};

// Symmetric, self-loop-free, connected mesh per the config topology.
std::vector<std::vector<std::int32_t>> generate_mesh(const ScenarioConfig& config);

// Contiguous label patches grown by round-robin BFS from K random seeds.
// Shared with the comparison harness's fallback ROI atlas.
std::vector<std::int32_t> make_patch_labels(
    const std::vector<std::vector<std::int32_t>>& adjacency, int K, std::uint64_t seed);

// Draws V_l^ij = f(alpha_i t_ij + beta_i; theta_{Z_l}) + N(0, sigma) with
// spatially coherent labels; fully determined by config.seed.
std::pair<Dataset, GroundTruth> generate_dataset(const ScenarioConfig& config);

// Cluster labels are exchangeable; finds the permutation maximizing matched
// posterior mass (exact assignment, K <= 20). perm[k_true] is the matching
// estimated cluster.
std::vector<int> match_labels(const Eigen::MatrixXd& z_est,
                              const std::vector<std::int32_t>& truth_labels, int K);

// Least-squares affine map from estimated to true DPS; the DPS scale is a
// gauge freedom, so errors are measured after this alignment.
struct DpsAlignment {
  double scale = 1.0;
  double offset = 0.0;
  double apply(double s) const { return scale * s + offset; }
};

DpsAlignment align_dps(const std::vector<SubjectStage>& est, const std::vector<SubjectStage>& truth,
                       const std::vector<double>& baseline_ages);

// Baseline age per subject, in subject-index order.
std::vector<double> baseline_ages(const Dataset& data);

// SSD between aligned estimated and true baseline-visit DPS values.
double dps_error(const std::vector<SubjectStage>& est, const std::vector<SubjectStage>& truth,
                 const std::vector<double>& baseline_ages);

// SSD over sigmoid centres after label matching and DPS alignment.
double center_error(const std::vector<TrajectoryParams>& est,
                    const std::vector<TrajectoryParams>& truth, const std::vector<int>& perm,
                    const DpsAlignment& align);

// Fraction of vertices whose argmax posterior matches the true label after
// permutation matching.
double label_agreement(const Eigen::MatrixXd& z_est, const std::vector<std::int32_t>& truth_labels,
                       const std::vector<int>& perm);

}  // namespace dive

#endif
