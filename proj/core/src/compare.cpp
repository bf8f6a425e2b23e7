#include "dive/compare.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dive/fast.hpp"
#include "dive/sigmoid.hpp"

namespace dive {

std::vector<CovariateSpec> default_covariate_specs() {
  return {
      {"cog1", CovariateLink::linear, 0.3},
      {"cog2", CovariateLink::logistic, 0.3},
      {"cog3", CovariateLink::linear, 0.6},
      {"cog4", CovariateLink::logistic, 0.6},
  };
}

std::vector<Covariate> make_covariates(const Dataset& data, const GroundTruth& truth,
                                       const std::vector<CovariateSpec>& specs,
                                       std::uint64_t seed) {
  const std::int64_t R = data.row_count();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);

  std::vector<double> true_dps(R);
  for (std::int64_t r = 0; r < R; ++r)
    true_dps[r] = dps(truth.stages[data.row_subject[r]], data.rows[r].age);

  std::vector<Covariate> out;
  out.reserve(specs.size());
  for (const auto& spec : specs) {
    Covariate cov;
    cov.name = spec.name;
    cov.values.resize(R);
    for (std::int64_t r = 0; r < R; ++r) {
      const double s = true_dps[r];
      cov.values[r] = spec.link == CovariateLink::linear ? s : 1.0 / (1.0 + std::exp(-s));
    }
    double mean = std::accumulate(cov.values.begin(), cov.values.end(), 0.0) /
                  static_cast<double>(R);
    double var = 0.0;
    for (double v : cov.values) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(R));
    const double noise = spec.noise_frac * (sd > 0.0 ? sd : 1.0);
    for (auto& v : cov.values) v += noise * std_normal(rng);
    out.push_back(std::move(cov));
  }
  return out;
}

std::vector<FoldSplit> kfold_split(const Dataset& data, int folds, std::uint64_t seed) {
  const std::int64_t N = data.subject_count();
  if (folds < 2) throw Error(ErrorCode::config, "folds must be >= 2");
  if (N < folds)
    throw Error(ErrorCode::config, "need at least " + std::to_string(folds) + " subjects, have " +
                                       std::to_string(N));
  std::vector<std::int32_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<FoldSplit> splits(folds);
  for (std::int64_t i = 0; i < N; ++i)
    splits[i % folds].test.push_back(order[i]);
  for (int f = 0; f < folds; ++f) {
    std::sort(splits[f].test.begin(), splits[f].test.end());
    for (std::int32_t s = 0; s < N; ++s)
      if (!std::binary_search(splits[f].test.begin(), splits[f].test.end(), s))
        splits[f].train.push_back(s);
  }
  return splits;
}

namespace {

// Earliest two visits by (age, visit id).
std::vector<std::int32_t> first_two_rows(const Dataset& data, std::int32_t subject) {
  std::vector<std::int32_t> rows = data.subject_rows[subject];
  std::sort(rows.begin(), rows.end(), [&](std::int32_t a, std::int32_t b) {
    if (data.rows[a].age != data.rows[b].age) return data.rows[a].age < data.rows[b].age;
    return data.rows[a].visit_id < data.rows[b].visit_id;
  });
  rows.resize(2);
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace

StagedSubjects stage_test_subjects(const ModelState& trained, const Dataset& test_data,
                                   VisitsUsed visits_used, bool staging_enabled,
                                   const StagePrior& prior) {
  const std::int64_t N = test_data.subject_count();
  StagedSubjects out;
  out.stages.assign(N, SubjectStage{1.0, 0.0});
  out.used_rows.resize(N);

  for (std::int64_t i = 0; i < N; ++i) {
    if (visits_used == VisitsUsed::first_two) {
      if (test_data.subject_rows[i].size() < 2) {
        out.excluded.push_back(static_cast<std::int32_t>(i));
        continue;
      }
      out.used_rows[i] = first_two_rows(test_data, static_cast<std::int32_t>(i));
    } else {
      out.used_rows[i] = test_data.subject_rows[i];
    }
  }
  if (!staging_enabled) return out;  // DPS is age for every subject

  const ClusterMeans means = weighted_cluster_means(test_data, trained.posteriors);

  double c_mid = 0.0;
  for (const auto& t : trained.trajectories) c_mid += t.c;
  c_mid /= static_cast<double>(trained.trajectories.size());

  for (std::int64_t i = 0; i < N; ++i) {
    if (out.used_rows[i].empty()) continue;
    const double t0 = test_data.rows[test_data.baseline_row(static_cast<std::int32_t>(i))].age;
    const SubjectStage init{1.0, c_mid - t0};  // multi-start covers the span
    out.stages[i] = fit_stage_fast(test_data, out.used_rows[i], means, trained.trajectories,
                                   trained.sigmas, prior, init)
                        .stage;
  }
  return out;
}

PredictionResult predict_future(const ModelState& trained, const Dataset& test_data,
                                const std::vector<SubjectStage>& stages,
                                const std::vector<std::vector<std::int32_t>>& later_rows) {
  const std::int64_t L = test_data.vertex_count();
  const int K = trained.K;

  PredictionResult out;
  for (std::size_t i = 0; i < later_rows.size(); ++i)
    for (std::int32_t r : later_rows[i]) out.rows.push_back(r);
  std::sort(out.rows.begin(), out.rows.end());
  const std::int64_t P = static_cast<std::int64_t>(out.rows.size());
  if (P == 0) return out;

  out.predictions.resize(P, L);
  for (std::int64_t p = 0; p < P; ++p) {
    const std::int32_t r = out.rows[p];
    const std::int32_t i = test_data.row_subject[r];
    const double s = dps(stages[i], test_data.rows[r].age);
    Eigen::VectorXd f(K);
    for (int k = 0; k < K; ++k) f[k] = sigmoid_eval(s, trained.trajectories[k]);
    out.predictions.row(p) = (trained.posteriors * f).transpose();
  }

  // Per-vertex RMSE across the predicted visits, then averaged over vertices.
  double total = 0.0;
  for (std::int64_t l = 0; l < L; ++l) {
    double sq = 0.0;
    for (std::int64_t p = 0; p < P; ++p) {
      const double e = out.predictions(p, l) - test_data.values(out.rows[p], l);
      sq += e * e;
    }
    total += std::sqrt(sq / static_cast<double>(P));
  }
  out.rmse = total / static_cast<double>(L);
  return out;
}

namespace {

std::vector<double> ranks_with_ties(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0))
    throw Error(ErrorCode::undefined_correlation, "zero variance in a correlation input");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

double correlate_dps_covariate(const Dataset& data, const std::vector<SubjectStage>& stages,
                               const Covariate& covariate, CorrelationMethod method) {
  const std::int64_t N = data.subject_count();
  if (N < 3) throw Error(ErrorCode::config, "need at least 3 subjects for a correlation");
  if (static_cast<std::int64_t>(covariate.values.size()) != data.row_count())
    throw Error(ErrorCode::config, "covariate length does not match dataset rows");

  std::vector<double> s(N), c(N);
  for (std::int64_t i = 0; i < N; ++i) {
    const std::int32_t r = data.baseline_row(static_cast<std::int32_t>(i));
    s[i] = dps(stages[i], data.rows[r].age);
    c[i] = covariate.values[r];
  }
  if (method == CorrelationMethod::spearman) {
    s = ranks_with_ties(s);
    c = ranks_with_ties(c);
  }
  return pearson(s, c);
}

void CompareConfig::validate(const Dataset& data) const {
  fit.validate();
  if (folds < 2) throw Error(ErrorCode::config, "folds must be >= 2");
  if (static_cast<std::int64_t>(roi_atlas.size()) != data.vertex_count())
    throw Error(ErrorCode::config, "ROI atlas size does not match vertex count");
  for (std::int32_t lb : roi_atlas)
    if (lb < 0 || lb >= fit.K)
      throw Error(ErrorCode::config, "ROI atlas label out of range");
}

double ComparisonReport::rho_mean(int model, int cov) const {
  const auto& v = rho[model][cov];
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double ComparisonReport::rho_sd(int model, int cov) const {
  const auto& v = rho[model][cov];
  if (v.size() < 2) return 0.0;
  const double m = rho_mean(model, cov);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double ComparisonReport::rmse_mean(int model) const {
  const auto& v = rmse[model];
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double ComparisonReport::rmse_sd(int model) const {
  const auto& v = rmse[model];
  if (v.size() < 2) return 0.0;
  const double m = rmse_mean(model);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

ComparisonReport run_comparison(const Dataset& data, const std::vector<Covariate>& covariates,
                                const CompareConfig& config) {
  config.validate(data);
  const int M = 3;  // full, roi, no_staging

  ComparisonReport report;
  report.model_names = {"full", "roi", "no_staging"};
  for (const auto& cov : covariates) report.covariate_names.push_back(cov.name);
  report.rho.assign(M, std::vector<std::vector<double>>(covariates.size()));
  report.rmse.assign(M, {});

  const auto splits = kfold_split(data, config.folds, config.seed);
  report.folds_attempted = config.folds;

  for (int f = 0; f < config.folds; ++f) {
    try {
      const auto train = data.restricted_to_subjects(splits[f].train);
      const auto test = data.restricted_to_subjects(splits[f].test);

      std::vector<Covariate> test_covs(covariates.size());
      for (std::size_t c = 0; c < covariates.size(); ++c) {
        test_covs[c].name = covariates[c].name;
        test_covs[c].values.resize(test.original_rows.size());
        for (std::size_t r = 0; r < test.original_rows.size(); ++r)
          test_covs[c].values[r] = covariates[c].values[test.original_rows[r]];
      }

      std::vector<std::vector<std::vector<double>>> fold_rho(
          M, std::vector<std::vector<double>>(covariates.size()));
      std::vector<double> fold_rmse(M);

      for (int m = 0; m < M; ++m) {
        FitMode mode = m == 0   ? FitMode::full()
                       : m == 1 ? FitMode::roi(config.roi_atlas)
                                : FitMode::no_staging();
        FitConfig fit_cfg = config.fit;
        fit_cfg.seed = config.fit.seed + static_cast<std::uint64_t>(f);
        auto [trained, fit_report] = gem_fit(train.data, fit_cfg, config.priors, mode);
        report.worst_monotone_delta =
            std::min(report.worst_monotone_delta, fit_report.worst_monotone_delta);

        const bool staging = mode.kind != FitMode::Kind::no_staging;
        const StagedSubjects staged_all =
            stage_test_subjects(trained, test.data, VisitsUsed::all, staging,
                                config.priors.stage_prior);
        for (std::size_t c = 0; c < covariates.size(); ++c)
          fold_rho[m][c].push_back(correlate_dps_covariate(test.data, staged_all.stages,
                                                           test_covs[c], config.method));

        const StagedSubjects staged_two =
            stage_test_subjects(trained, test.data, VisitsUsed::first_two, staging,
                                config.priors.stage_prior);
        std::vector<std::vector<std::int32_t>> later(test.data.subject_count());
        for (std::int64_t i = 0; i < test.data.subject_count(); ++i) {
          if (staged_two.used_rows[i].empty()) continue;  // excluded subject
          for (std::int32_t r : test.data.subject_rows[i])
            if (std::find(staged_two.used_rows[i].begin(), staged_two.used_rows[i].end(), r) ==
                staged_two.used_rows[i].end())
              later[i].push_back(r);
        }
        fold_rmse[m] = predict_future(trained, test.data, staged_two.stages, later).rmse;
      }

      // Commit the fold only after every model succeeded.
      for (int m = 0; m < M; ++m) {
        for (std::size_t c = 0; c < covariates.size(); ++c)
          report.rho[m][c].push_back(fold_rho[m][c].front());
        report.rmse[m].push_back(fold_rmse[m]);
      }
    } catch (const Error& e) {
      report.fold_failures.push_back("fold " + std::to_string(f) + ": " + e.what());
    }
  }
  return report;
}

}  // namespace dive
