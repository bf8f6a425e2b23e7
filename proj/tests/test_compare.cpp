#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dive/compare.hpp"
#include "dive/fast.hpp"
#include "dive/io.hpp"
#include "dive/mstep.hpp"
#include "test_helpers.hpp"

using namespace dive;
using namespace dive::testing;

namespace {

ScenarioConfig small_scenario(std::uint64_t seed) {
  ScenarioConfig sc;
  sc.K = 2;
  sc.L = 40;
  sc.grid_width = 8;
  sc.n_subjects = 20;
  sc.visits_per_subject = 4;
  sc.noise_sigma = 0.15;
  sc.seed = seed;
  return sc;
}

}  // namespace

TEST_SUITE("compare") {

TEST_CASE("kfold_split partitions subjects") {
  TinyInstance t = tiny_instance(4, 1, 10, 2, 0.1, 80);
  SUBCASE("N = folds gives singleton test sets") {
    const auto splits = kfold_split(t.data, 10, 81);
    for (const auto& s : splits) CHECK(s.test.size() == 1);
  }
  SUBCASE("disjoint, covering, balanced") {
    const auto splits = kfold_split(t.data, 3, 82);
    std::set<std::int32_t> seen;
    std::size_t lo = 100, hi = 0;
    for (const auto& s : splits) {
      for (auto v : s.test) CHECK(seen.insert(v).second);
      lo = std::min(lo, s.test.size());
      hi = std::max(hi, s.test.size());
      // train is the complement
      for (auto v : s.test)
        CHECK_FALSE(std::binary_search(s.train.begin(), s.train.end(), v));
      CHECK(s.train.size() + s.test.size() == 10);
    }
    CHECK(seen.size() == 10);
    CHECK(hi - lo <= 1);
  }
  SUBCASE("seeded determinism") {
    const auto a = kfold_split(t.data, 3, 83);
    const auto b = kfold_split(t.data, 3, 83);
    for (int f = 0; f < 3; ++f) CHECK(a[f].test == b[f].test);
  }
  SUBCASE("too few subjects") { CHECK_THROWS_AS(kfold_split(t.data, 11, 84), Error); }
}

TEST_CASE("stage_test_subjects recovers zero-noise test stages") {
  ScenarioConfig sc = small_scenario(85);
  sc.noise_sigma = 0.0;
  auto [data, truth] = generate_dataset(sc);

  // train on 14 subjects, stage the rest
  std::vector<std::int32_t> train_ids, test_ids;
  for (std::int32_t i = 0; i < 20; ++i) (i < 14 ? train_ids : test_ids).push_back(i);
  const auto train = data.restricted_to_subjects(train_ids);
  const auto test = data.restricted_to_subjects(test_ids);

  FitConfig cfg;
  cfg.K = 2;
  cfg.seed = 86;
  cfg.max_outer_iters = 8;
  const ModelState trained = gem_fit(train.data, cfg, Priors{}).first;

  const auto staged = stage_test_subjects(trained, test.data, VisitsUsed::all, true);
  CHECK(staged.excluded.empty());

  std::vector<SubjectStage> true_test;
  for (auto i : test.original_subjects) true_test.push_back(truth.stages[i]);
  const auto ages = baseline_ages(test.data);
  for (std::size_t i = 0; i < true_test.size(); ++i) {
    const DpsAlignment a = align_dps(staged.stages, true_test, ages);
    CHECK(std::abs(a.apply(dps(staged.stages[i], ages[i])) - dps(true_test[i], ages[i])) < 1e-3);
  }

  SUBCASE("first_two equals all visits on noiseless data") {
    const auto two = stage_test_subjects(trained, test.data, VisitsUsed::first_two, true);
    for (std::size_t i = 0; i < staged.stages.size(); ++i) {
      const double s_all = dps(staged.stages[i], ages[i]);
      const double s_two = dps(two.stages[i], ages[i]);
      CHECK(std::abs(s_all - s_two) < 1e-6);
    }
  }
  SUBCASE("staging disabled pins (1,0)") {
    const auto ns = stage_test_subjects(trained, test.data, VisitsUsed::all, false);
    for (const auto& st : ns.stages) {
      CHECK(st.alpha == 1.0);
      CHECK(st.beta == 0.0);
    }
  }
}

TEST_CASE("stage_test_subjects excludes subjects with one visit under first_two") {
  TinyInstance t = tiny_instance(4, 1, 3, 1, 0.0, 87);  // single-visit subjects
  ModelState m = model_from(t, 1, 1.0, Eigen::MatrixXd::Ones(4, 1));
  const auto staged = stage_test_subjects(m, t.data, VisitsUsed::first_two, true);
  CHECK(staged.excluded.size() == 3);
}

TEST_CASE("predict_future: zero-noise predictions are exact, noise sets the floor") {
  ScenarioConfig sc = small_scenario(88);
  sc.noise_sigma = 0.0;
  auto [data, truth] = generate_dataset(sc);

  // use the truth itself as the trained model with one-hot posteriors
  ModelState m;
  m.K = 2;
  m.trajectories = truth.trajectories;
  m.sigmas = Eigen::VectorXd::Constant(2, 0.1);
  m.stages = truth.stages;
  m.posteriors = Eigen::MatrixXd::Zero(data.vertex_count(), 2);
  for (std::int64_t l = 0; l < data.vertex_count(); ++l)
    m.posteriors(l, truth.labels[l]) = 1.0;

  std::vector<std::vector<std::int32_t>> later(data.subject_count());
  for (std::int64_t i = 0; i < data.subject_count(); ++i) {
    const auto& rows = data.subject_rows[i];
    later[i].assign(rows.begin() + 2, rows.end());
  }
  const auto pred = predict_future(m, data, truth.stages, later);
  CHECK(pred.rmse < 1e-6);

  SUBCASE("sigma-level noise gives RMSE near sigma") {
    ScenarioConfig noisy = small_scenario(89);
    noisy.noise_sigma = 0.3;
    noisy.L = 100;
    noisy.grid_width = 10;
    noisy.n_subjects = 40;
    auto [nd, nt] = generate_dataset(noisy);
    ModelState nm;
    nm.K = 2;
    nm.trajectories = nt.trajectories;
    nm.sigmas = Eigen::VectorXd::Constant(2, 0.3);
    nm.stages = nt.stages;
    nm.posteriors = Eigen::MatrixXd::Zero(nd.vertex_count(), 2);
    for (std::int64_t l = 0; l < nd.vertex_count(); ++l)
      nm.posteriors(l, nt.labels[l]) = 1.0;
    std::vector<std::vector<std::int32_t>> nl(nd.subject_count());
    for (std::int64_t i = 0; i < nd.subject_count(); ++i) {
      const auto& rows = nd.subject_rows[i];
      nl[i].assign(rows.begin() + 2, rows.end());
    }
    const auto npred = predict_future(nm, nd, nt.stages, nl);
    CHECK(std::abs(npred.rmse - 0.3) < 0.03);
  }
}

TEST_CASE("correlate_dps_covariate") {
  TinyInstance t = tiny_instance(4, 1, 10, 2, 0.0, 90);
  const auto ages = baseline_ages(t.data);

  Covariate cov;
  cov.name = "copy";
  cov.values.resize(t.data.row_count());
  for (std::int64_t r = 0; r < t.data.row_count(); ++r)
    cov.values[r] = dps(t.stages[t.data.row_subject[r]], t.data.rows[r].age);

  CHECK(correlate_dps_covariate(t.data, t.stages, cov) == doctest::Approx(1.0).epsilon(1e-12));

  Covariate neg = cov;
  for (auto& v : neg.values) v = -v;
  CHECK(correlate_dps_covariate(t.data, t.stages, neg) == doctest::Approx(-1.0).epsilon(1e-12));

  Covariate flat = cov;
  for (auto& v : flat.values) v = 3.0;
  CHECK_THROWS_AS(correlate_dps_covariate(t.data, t.stages, flat), Error);

  SUBCASE("spearman is invariant to monotone transforms") {
    Covariate cubed = cov;
    for (auto& v : cubed.values) v = v * v * v;
    CHECK(correlate_dps_covariate(t.data, t.stages, cubed, CorrelationMethod::spearman) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("run_comparison: shape, ordering and roi-vs-full closeness") {
  ScenarioConfig sc = small_scenario(91);
  sc.n_subjects = 30;
  sc.noise_sigma = 0.0;
  auto [data, truth] = generate_dataset(sc);
  const auto covariates = make_covariates(data, truth, default_covariate_specs(), 92);

  CompareConfig cfg;
  cfg.folds = 5;
  cfg.seed = 93;
  cfg.fit.K = 2;
  cfg.fit.seed = 94;
  cfg.fit.max_outer_iters = 6;
  cfg.roi_atlas = truth.labels;

  const ComparisonReport report = run_comparison(data, covariates, cfg);

  REQUIRE(report.model_names.size() == 3);
  REQUIRE(report.covariate_names.size() == covariates.size());
  CHECK(report.fold_failures.empty());
  for (int m = 0; m < 3; ++m) {
    for (std::size_t c = 0; c < covariates.size(); ++c)
      CHECK(report.rho[m][c].size() == 5);
    CHECK(report.rmse[m].size() == 5);
  }

  // full clearly beats no_staging; roi with the true atlas matches full
  CHECK(report.rho_mean(0, 0) > report.rho_mean(2, 0));
  CHECK(report.rmse_mean(2) > report.rmse_mean(0));
  CHECK(std::abs(report.rho_mean(0, 0) - report.rho_mean(1, 0)) <= 0.01);

  SUBCASE("mean and sd recomputable from stored folds") {
    const auto& v = report.rho[0][0];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    double sd = 0.0;
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / (v.size() - 1));
    CHECK(std::abs(report.rho_mean(0, 0) - mean) < 1e-12);
    CHECK(std::abs(report.rho_sd(0, 0) - sd) < 1e-12);
  }
}

TEST_CASE("no test-subject leakage: training state is untouched by staging") {
  ScenarioConfig sc = small_scenario(95);
  auto [data, truth] = generate_dataset(sc);
  std::vector<std::int32_t> train_ids, test_ids;
  for (std::int32_t i = 0; i < 20; ++i) (i < 15 ? train_ids : test_ids).push_back(i);
  const auto train = data.restricted_to_subjects(train_ids);
  const auto test = data.restricted_to_subjects(test_ids);

  FitConfig cfg;
  cfg.K = 2;
  cfg.seed = 96;
  cfg.max_outer_iters = 4;
  const ModelState trained = gem_fit(train.data, cfg, Priors{}).first;

  const Eigen::MatrixXd post_before = trained.posteriors;
  const Eigen::VectorXd sig_before = trained.sigmas;
  const auto traj_before = trained.trajectories;

  (void)stage_test_subjects(trained, test.data, VisitsUsed::first_two, true);

  CHECK((trained.posteriors - post_before).cwiseAbs().maxCoeff() == 0.0);
  CHECK((trained.sigmas - sig_before).cwiseAbs().maxCoeff() == 0.0);
  for (int k = 0; k < 2; ++k) {
    CHECK(trained.trajectories[k].a == traj_before[k].a);
    CHECK(trained.trajectories[k].c == traj_before[k].c);
  }
}

TEST_CASE("first_two staging ignores later visits") {
  ScenarioConfig sc = small_scenario(97);
  auto [data, truth] = generate_dataset(sc);
  std::vector<std::int32_t> train_ids, test_ids;
  for (std::int32_t i = 0; i < 20; ++i) (i < 15 ? train_ids : test_ids).push_back(i);
  const auto train = data.restricted_to_subjects(train_ids);
  auto test = data.restricted_to_subjects(test_ids);

  FitConfig cfg;
  cfg.K = 2;
  cfg.seed = 98;
  cfg.max_outer_iters = 4;
  const ModelState trained = gem_fit(train.data, cfg, Priors{}).first;

  const auto before = stage_test_subjects(trained, test.data, VisitsUsed::first_two, true);

  // perturb every later visit's values
  Dataset perturbed = test.data;
  for (std::int64_t i = 0; i < perturbed.subject_count(); ++i) {
    const auto& rows = perturbed.subject_rows[i];
    for (std::size_t j = 2; j < rows.size(); ++j)
      perturbed.values.row(rows[j]).array() += 10.0;
  }
  const auto after = stage_test_subjects(trained, perturbed, VisitsUsed::first_two, true);
  for (std::size_t i = 0; i < before.stages.size(); ++i) {
    CHECK(before.stages[i].alpha == after.stages[i].alpha);
    CHECK(before.stages[i].beta == after.stages[i].beta);
  }
}

}  // TEST_SUITE
