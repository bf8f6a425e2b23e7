#include <doctest.h>

#include <cmath>
#include <random>

#include "dive/fast.hpp"
#include "dive/mstep.hpp"
#include "dive/objective.hpp"
#include "dive/synthetic.hpp"
#include "test_helpers.hpp"

using namespace dive;
using namespace dive::testing;

TEST_SUITE("fast") {

TEST_CASE("weighted means: one-hot weights select that vertex") {
  TinyInstance t = tiny_instance(4, 1, 3, 2, 0.2, 50);
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(4, 1);
  z(1, 0) = 1.0;
  const ClusterMeans m = weighted_cluster_means(t.data, z);
  CHECK((m.means.col(0) - t.data.values.col(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(m.gammas[0] == 1.0);
}

TEST_CASE("weighted means: uniform weights give the arithmetic mean") {
  TinyInstance t = tiny_instance(5, 1, 3, 2, 0.2, 51);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Ones(5, 1);
  const ClusterMeans m = weighted_cluster_means(t.data, z);
  const Eigen::VectorXd mean = t.data.values.rowwise().mean();
  CHECK((m.means.col(0) - mean).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("weighted means match a naive loop and normalize to unit mass") {
  TinyInstance t = tiny_instance(6, 2, 3, 3, 0.4, 52);
  std::mt19937_64 rng(53);
  const Eigen::MatrixXd z = random_simplex_rows(6, 2, rng);
  const ClusterMeans m = weighted_cluster_means(t.data, z);
  for (std::int64_t r = 0; r < t.data.row_count(); ++r)
    for (int k = 0; k < 2; ++k) {
      double acc = 0.0;
      for (int l = 0; l < 6; ++l) acc += z(l, k) * m.gammas[k] * t.data.values(r, l);
      CHECK(std::abs(m.means(r, k) - acc) < 1e-12 * (1.0 + std::abs(acc)));
    }
  for (int k = 0; k < 2; ++k)
    CHECK(std::abs(m.gammas[k] * z.col(k).sum() - 1.0) < 1e-12);

  Eigen::MatrixXd dead = z;
  dead.col(1).setZero();
  CHECK_THROWS_AS(weighted_cluster_means(t.data, dead), Error);
}

TEST_CASE("fast and slow trajectory updates agree when vertices are identical") {
  // hard posteriors, all member vertices identical -> means equal members
  TinyInstance t = tiny_instance(4, 1, 6, 3, 0.0, 54);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Ones(4, 1);
  const ClusterMeans means = weighted_cluster_means(t.data, z);
  const TrajectoryParams init{1.5, 1.0, 0.2, -0.2};
  const auto slow =
      fit_trajectory(0, t.data, z, t.stages, 0.5, TrajectoryPrior::uniform(), init);
  const auto fast =
      fit_trajectory_fast(0, t.data, means, t.stages, 0.5, TrajectoryPrior::uniform(), init);
  CHECK(std::abs(slow.theta.a - fast.theta.a) < 1e-6);
  CHECK(std::abs(slow.theta.b - fast.theta.b) < 1e-6);
  CHECK(std::abs(slow.theta.c - fast.theta.c) < 1e-6);
  CHECK(std::abs(slow.theta.d - fast.theta.d) < 1e-6);
}

TEST_CASE("fast trajectory optimum is a stationary point of the slow objective") {
  TinyInstance t = tiny_instance(8, 2, 6, 3, 0.3, 55);
  std::mt19937_64 rng(56);
  const Eigen::MatrixXd z = random_simplex_rows(8, 2, rng);
  const ClusterMeans means = weighted_cluster_means(t.data, z);

  for (int k = 0; k < 2; ++k) {
    const auto fast = fit_trajectory_fast(k, t.data, means, t.stages, 0.5,
                                          TrajectoryPrior::uniform(), t.trajectories[k]);
    // slow-objective gradient at the fast optimum
    Eigen::Vector4d grad = Eigen::Vector4d::Zero();
    double slow_obj = 0.0;
    for (std::int64_t r = 0; r < t.data.row_count(); ++r) {
      const double s = dps(t.stages[t.data.row_subject[r]], t.data.rows[r].age);
      const double f = sigmoid_eval(s, fast.theta);
      const SigmoidGrad g = sigmoid_grad(s, fast.theta);
      double wres = 0.0;
      for (int l = 0; l < 8; ++l) {
        const double e = t.data.values(r, l) - f;
        wres += z(l, k) * e;
        slow_obj += z(l, k) * e * e;
      }
      grad += -2.0 * wres * Eigen::Vector4d(g.da, g.db, g.dc, g.dd);
    }
    CHECK(grad.norm() < 1e-5 * (1.0 + std::abs(slow_obj)));
  }
}

TEST_CASE("fast stage optimum is a stationary point of the slow stage objective") {
  TinyInstance t = tiny_instance(6, 2, 4, 4, 0.3, 57);
  std::mt19937_64 rng(58);
  const Eigen::MatrixXd z = random_simplex_rows(6, 2, rng);
  const ClusterMeans means = weighted_cluster_means(t.data, z);
  const Eigen::VectorXd sigmas = Eigen::VectorXd::Constant(2, 0.6);

  for (int i = 0; i < 4; ++i) {
    const auto fast = fit_stage_fast(t.data, t.data.subject_rows[i], means, t.trajectories,
                                     sigmas, StagePrior::uniform(), t.stages[i]);
    Eigen::Vector2d grad = Eigen::Vector2d::Zero();
    double obj = 0.0;
    for (std::int32_t r : t.data.subject_rows[i]) {
      const double age = t.data.rows[r].age;
      const double s = fast.stage.alpha * age + fast.stage.beta;
      for (int k = 0; k < 2; ++k) {
        const double inv2 = 1.0 / (sigmas[k] * sigmas[k]);
        const double f = sigmoid_eval(s, t.trajectories[k]);
        const double fs = sigmoid_grad(s, t.trajectories[k]).ds;
        double wres = 0.0;
        for (int l = 0; l < 6; ++l) {
          const double e = t.data.values(r, l) - f;
          wres += z(l, k) * e;
          obj += z(l, k) * e * e * inv2 * 0.5;
        }
        grad += -inv2 * fs * wres * Eigen::Vector2d(age, 1.0);
      }
    }
    CHECK(grad.norm() < 1e-5 * (1.0 + std::abs(obj)));
  }
}

TEST_CASE("audit: gradient identities hold on random instances") {
  std::mt19937_64 rng(59);
  for (int trial = 0; trial < 10; ++trial) {
    TinyInstance t = tiny_instance(7, 2, 4, 3, 0.5, 200 + trial);
    ModelState m = model_from(t, 2, 0.7, random_simplex_rows(7, 2, rng), 0.4);
    const EquivalenceReport rep = audit_equivalence(t.data, m);
    CHECK(rep.pass);
    CHECK(rep.max_theta_deviation < 1e-8);
    CHECK(rep.max_stage_deviation < 1e-8);
  }
}

TEST_CASE("audit: one-hot posteriors give zero deviation up to rounding") {
  TinyInstance t = tiny_instance(6, 2, 3, 2, 0.2, 60);
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(6, 2);
  for (int l = 0; l < 6; ++l) z(l, t.labels[l]) = 1.0;
  ModelState m = model_from(t, 2, 0.9, z);
  const EquivalenceReport rep = audit_equivalence(t.data, m);
  CHECK(rep.max_theta_deviation < 1e-12);
  CHECK(rep.max_stage_deviation < 1e-12);
}

TEST_CASE("audit: corrupted gammas are flagged") {
  TinyInstance t = tiny_instance(6, 2, 3, 2, 0.4, 61);
  std::mt19937_64 rng(62);
  ModelState m = model_from(t, 2, 0.8, random_simplex_rows(6, 2, rng));
  ClusterMeans means = weighted_cluster_means(t.data, m.posteriors);
  means.gammas *= 2.0;  // negative control
  const EquivalenceReport rep = audit_equivalence(t.data, m, means);
  CHECK_FALSE(rep.pass);
  CHECK(rep.max_theta_deviation > 0.1);
  CHECK(rep.max_stage_deviation > 0.1);
}

TEST_CASE("sigma always uses the slow closed form") {
  // The fast means must not enter the sigma update: a cluster whose members
  // disagree has within-cluster variance invisible to the mean trajectory.
  TinyInstance t = tiny_instance(2, 1, 2, 2, 0.0, 63);
  t.data.values.col(0).array() += 1.0;  // vertex 0 shifted up
  t.data.values.col(1).array() -= 1.0;  // vertex 1 shifted down
  const Eigen::MatrixXd z = Eigen::MatrixXd::Ones(2, 1);
  // means are unchanged, yet sigma must see the +-1 spread
  const double sigma = update_sigma(0, t.data, z, t.stages, t.trajectories[0]);
  CHECK(sigma > 0.9);
}

TEST_CASE("fast and slow gem runs land on the same model") {
  ScenarioConfig sc;
  sc.K = 2;
  sc.L = 40;
  sc.grid_width = 8;
  sc.n_subjects = 12;
  sc.noise_sigma = 0.2;
  sc.seed = 64;
  auto [data, truth] = generate_dataset(sc);
  FitConfig cfg;
  cfg.K = 2;
  cfg.seed = 65;
  cfg.max_outer_iters = 5;

  const auto fast = gem_fit(data, cfg, Priors{}).first;
  cfg.use_fast_path = false;
  const auto slow = gem_fit(data, cfg, Priors{}).first;

  double rms = 0.0;
  const auto ages = baseline_ages(data);
  for (std::int64_t i = 0; i < data.subject_count(); ++i) {
    const double diff = dps(fast.stages[i], ages[i]) - dps(slow.stages[i], ages[i]);
    rms += diff * diff;
  }
  rms = std::sqrt(rms / static_cast<double>(data.subject_count()));
  CHECK(rms < 1e-3);
}

}  // TEST_SUITE
