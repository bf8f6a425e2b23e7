#ifndef DIVE_COMPARE_HPP
#define DIVE_COMPARE_HPP

#include <string>
#include <vector>

#include "dive/mstep.hpp"
#include "dive/synthetic.hpp"
#include "dive/types.hpp"

namespace dive {

// Synthetic stand-in for a cognitive test score: one value per observation
// row, generated as a monotone link of the true DPS plus noise.
struct Covariate {
  std::string name;
  std::vector<double> values;  // aligned with Dataset rows
};

enum class CovariateLink { linear, logistic };

struct CovariateSpec {
  std::string name;
  CovariateLink link = CovariateLink::linear;
  double noise_frac = 0.3;  // noise sd as a fraction of the link-output sd
};

// Four stand-in scores with mixed links and noise levels.
std::vector<CovariateSpec> default_covariate_specs();

std::vector<Covariate> make_covariates(const Dataset& data, const GroundTruth& truth,
                                       const std::vector<CovariateSpec>& specs,
                                       std::uint64_t seed);

struct FoldSplit {
  std::vector<std::int32_t> train;  // subject indices
  std::vector<std::int32_t> test;
};

// Subject-level k-fold partition; folds are disjoint, cover all subjects and
// differ in size by at most one. Throws when N < folds.
std::vector<FoldSplit> kfold_split(const Dataset& data, int folds, std::uint64_t seed);

enum class VisitsUsed { all, first_two };

struct StagedSubjects {
  std::vector<SubjectStage> stages;                  // per test-data subject
  std::vector<std::vector<std::int32_t>> used_rows;  // rows that entered the fit
  std::vector<std::int32_t> excluded;                // subjects with too few visits
};

// Stages each test subject against a trained model (trajectories, sigmas and
// posteriors frozen; fast path). With VisitsUsed::first_two only the two
// earliest visits contribute; subjects with fewer visits are excluded and
// reported. staging_enabled = false (the no-staging model) pins every stage
// at (1, 0).
StagedSubjects stage_test_subjects(const ModelState& trained, const Dataset& test_data,
                                   VisitsUsed visits_used, bool staging_enabled,
                                   const StagePrior& prior = {});

struct PredictionResult {
  Eigen::MatrixXd predictions;        // one row per predicted observation
  std::vector<std::int32_t> rows;     // dataset row ids being predicted
  double rmse = 0.0;                  // per-vertex RMSE averaged over vertices
};

// Predicts later visits from first-two-visit stages:
// prediction(l) = sum_k z_lk f(alpha t + beta; theta_k).
PredictionResult predict_future(const ModelState& trained, const Dataset& test_data,
                                const std::vector<SubjectStage>& stages,
                                const std::vector<std::vector<std::int32_t>>& later_rows);

enum class CorrelationMethod { pearson, spearman };

// Correlation between baseline DPS and the baseline covariate value across
// subjects. Throws undefined-correlation on zero variance, config on < 3
// pairs.
double correlate_dps_covariate(const Dataset& data, const std::vector<SubjectStage>& stages,
                               const Covariate& covariate,
                               CorrelationMethod method = CorrelationMethod::pearson);

struct CompareConfig {
  int folds = 10;
  std::uint64_t seed = 0;
  FitConfig fit;
  std::vector<std::int32_t> roi_atlas;  // per-vertex labels for the ROI model
  CorrelationMethod method = CorrelationMethod::pearson;
  Priors priors;

  void validate(const Dataset& data) const;
};

struct ComparisonReport {
  std::vector<std::string> model_names;      // full, roi, no_staging
  std::vector<std::string> covariate_names;
  // Per-fold values; indexed [model][covariate][fold] and [model][fold].
  std::vector<std::vector<std::vector<double>>> rho;
  std::vector<std::vector<double>> rmse;
  std::vector<std::string> fold_failures;    // skipped folds, with reasons
  int folds_attempted = 0;
  // Most negative monotone sub-step objective delta over every model fit.
  double worst_monotone_delta = 0.0;

  double rho_mean(int model, int cov) const;
  double rho_sd(int model, int cov) const;
  double rmse_mean(int model) const;
  double rmse_sd(int model) const;
};

// Full cross-validated comparison of the three model variants: per fold,
// train each variant on the training subjects, stage the test subjects,
// correlate their DPS with each covariate, and score future-visit
// prediction from the first two visits. Failed folds are skipped and
// recorded.
ComparisonReport run_comparison(const Dataset& data, const std::vector<Covariate>& covariates,
                                const CompareConfig& config);

}  // namespace dive

#endif
