#ifndef DIVE_TYPES_HPP
#define DIVE_TYPES_HPP

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "dive/error.hpp"

namespace dive {

// Four-parameter sigmoid trajectory: f(s) = d + a / (1 + exp(-b (s - c))).
struct TrajectoryParams {
  double a = 1.0;  // height
  double b = 1.0;  // slope factor per DPS unit
  double c = 0.0;  // inflection centre, in DPS units
  double d = 0.0;  // lower asymptote offset
};

// Per-subject progression: DPS at age t is alpha * t + beta.
struct SubjectStage {
  double alpha = 1.0;  // progression speed, > 0
  double beta = 0.0;   // time shift, DPS units
};

struct MrfPrior {
  double lambda = 0.0;  // coupling strength, >= 0
};

// Longitudinal vertex measurements plus the mesh neighbourhood structure.
//
// values(r, l) is the biomarker at vertex l for observation row r; rows are
// (subject, visit, age) triples grouped per subject by the precomputed index.
class Dataset {
public:
  struct Row {
    std::int64_t subject_id = 0;
    std::int64_t visit_id = 0;
    double age = 0.0;
  };

  Eigen::MatrixXd values;                             // R x L
  std::vector<Row> rows;                              // size R
  std::vector<std::vector<std::int32_t>> adjacency;   // neighbour lists, size L

  // Derived subject index, rebuilt by finalize().
  std::vector<std::int64_t> subject_ids;              // unique, first-appearance order
  std::vector<std::vector<std::int32_t>> subject_rows;  // I_i: row indices per subject
  std::vector<std::int32_t> row_subject;              // per row: subject index

  std::int64_t vertex_count() const { return values.cols(); }
  std::int64_t row_count() const { return values.rows(); }
  std::int64_t subject_count() const { return static_cast<std::int64_t>(subject_ids.size()); }

  // Rebuilds the subject index and checks all invariants: consistent sizes,
  // finite values/ages, symmetric self-loop-free adjacency, every subject
  // with at least one visit. Throws dive::Error on violation.
  void finalize();

  // Row index of the subject's baseline (earliest-age) visit.
  std::int32_t baseline_row(std::int32_t subject) const;

  // Dataset restricted to the given subject indices (same mesh).
  struct SubjectSubset;
  SubjectSubset restricted_to_subjects(std::span<const std::int32_t> subjects) const;
};

struct Dataset::SubjectSubset {
  Dataset data;
  std::vector<std::int32_t> original_rows;      // subset row -> source row
  std::vector<std::int32_t> original_subjects;  // subset subject -> source subject
};

// Log-prior over trajectory parameters; uniform (log p = 0) by default,
// optionally independent Gaussians per component.
struct TrajectoryPrior {
  bool is_uniform = true;
  TrajectoryParams mean{};
  std::array<double, 4> sd{1.0, 1.0, 1.0, 1.0};  // order: a, b, c, d

  double log_density(const TrajectoryParams& theta) const;
  std::array<double, 4> grad_log_density(const TrajectoryParams& theta) const;

  static TrajectoryPrior uniform() { return {}; }
  static TrajectoryPrior gaussian(const TrajectoryParams& mean, const std::array<double, 4>& sd);
};

// Log-prior over subject stages, expressed on (log alpha, beta) so that the
// alpha > 0 constraint is built in. Uniform by default.
struct StagePrior {
  bool is_uniform = true;
  double log_alpha_mean = 0.0;
  double log_alpha_sd = 1.0;
  double beta_mean = 0.0;
  double beta_sd = 1.0;

  double log_density(double alpha, double beta) const;
  // Gradient with respect to (log alpha, beta).
  std::array<double, 2> grad_log_density(double log_alpha, double beta) const;

  static StagePrior uniform() { return {}; }
  static StagePrior gaussian(double log_alpha_mean, double log_alpha_sd,
                             double beta_mean, double beta_sd);
};

struct Priors {
  TrajectoryPrior theta_prior;
  StagePrior stage_prior;
};

// Full parameter set M = (alpha, beta, theta, sigma, lambda) plus the soft
// posteriors z_lk. Value object; fitting routines return updated copies.
struct ModelState {
  int K = 1;
  std::vector<TrajectoryParams> trajectories;  // size K
  Eigen::VectorXd sigmas;                      // size K, > 0
  std::vector<SubjectStage> stages;            // size N
  MrfPrior mrf;
  Eigen::MatrixXd posteriors;                  // L x K, rows on the simplex

  // Checks dimensions against the dataset, sigma > 0, alpha > 0, finite
  // parameters, and posterior rows summing to 1 within 1e-9.
  void validate(const Dataset& data) const;
};

}  // namespace dive

#endif
