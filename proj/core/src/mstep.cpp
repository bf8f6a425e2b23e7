#include "dive/mstep.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "dive/fast.hpp"
#include "dive/objective.hpp"
#include "dive/optim.hpp"
#include "dive/parallel.hpp"
#include "dive/sigmoid.hpp"
#include "fit_detail.hpp"

namespace dive {

namespace {

constexpr double kEmptyClusterFraction = 1e-6;  // of L

// Sorted-copy percentile with linear interpolation.
double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= v.size()) return v.back();
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

}  // namespace

const char* substep_name(SubStepKind kind) {
  switch (kind) {
    case SubStepKind::estep: return "estep";
    case SubStepKind::trajectory: return "trajectory";
    case SubStepKind::sigma: return "sigma";
    case SubStepKind::stage: return "stage";
    case SubStepKind::lambda_step: return "lambda";
    case SubStepKind::renormalize: return "renormalize";
  }
  return "unknown";
}

void FitConfig::validate() const {
  if (K < 1) throw Error(ErrorCode::config, "K must be >= 1");
  if (max_outer_iters < 1) throw Error(ErrorCode::config, "max_outer_iters must be >= 1");
  if (!(objective_rel_tol > 0.0)) throw Error(ErrorCode::config, "tolerance must be > 0");
  if (theta_multi_starts < 1) throw Error(ErrorCode::config, "theta_multi_starts must be >= 1");
  if (lambda_grid.points < 1 || !(lambda_grid.min >= 0.0) ||
      !(lambda_grid.max >= lambda_grid.min))
    throw Error(ErrorCode::config, "lambda grid must satisfy 0 <= min <= max, points >= 1");
  if (kmeans_restarts < 1) throw Error(ErrorCode::config, "kmeans_restarts must be >= 1");
  if (max_inner_iters < 1) throw Error(ErrorCode::config, "max_inner_iters must be >= 1");
}

// ---------------------------------------------------------------------------
// Trajectory update (slow path)

TrajectoryFitResult fit_trajectory(int k, const Dataset& data, const Eigen::MatrixXd& posteriors,
                                   const std::vector<SubjectStage>& stages, double sigma_k,
                                   const TrajectoryPrior& prior, const TrajectoryParams& init,
                                   const TrajectoryFitOptions& opts) {
  if (!(sigma_k > 0.0))
    throw Error(ErrorCode::parameter_domain, "sigma must be > 0 for cluster " + std::to_string(k));
  const std::int64_t R = data.row_count();
  const std::int64_t L = data.vertex_count();

  const double mass = posteriors.col(k).sum();
  if (mass <= 0.0) {
    // Objective constant in theta; nothing to fit.
    TrajectoryFitResult res;
    res.theta = init;
    res.objective = prior.log_density(init);
    res.progressed = false;
    res.flat = std::abs(init.b) < 1e-12;
    return res;
  }

  Eigen::VectorXd s(R);
  for (std::int64_t r = 0; r < R; ++r)
    s[r] = dps(stages[data.row_subject[r]], data.rows[r].age);

  const double inv2s2 = 1.0 / (2.0 * sigma_k * sigma_k);
  const Eigen::VectorXd zk = posteriors.col(k);

  // Negated objective for the minimizer:
  //   1/(2 sigma^2) sum_l z_lk sum_r (V - f)^2 - log p(theta).
  ObjectiveFn negated = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    const TrajectoryParams theta = detail::vec_to_theta(x);
    double ssr = 0.0;
    Eigen::Vector4d acc = Eigen::Vector4d::Zero();
    for (std::int64_t r = 0; r < R; ++r) {
      const double f = sigmoid_eval(s[r], theta);
      const SigmoidGrad g = sigmoid_grad(s[r], theta);
      double wres = 0.0;  // sum_l z_lk (V - f)
      for (std::int64_t l = 0; l < L; ++l) {
        const double e = data.values(r, l) - f;
        ssr += zk[l] * e * e;
        wres += zk[l] * e;
      }
      acc += wres * Eigen::Vector4d(g.da, g.db, g.dc, g.dd);
    }
    const auto pg = prior.grad_log_density(theta);
    grad = -2.0 * inv2s2 * acc - Eigen::Vector4d(pg[0], pg[1], pg[2], pg[3]);
    return inv2s2 * ssr - prior.log_density(theta);
  };

  const auto [lo, hi] = detail::dps_range(data, stages);
  return detail::maximize_theta(negated, detail::theta_starts(init, lo, hi, opts.multi_starts),
                                opts.max_iters);
}

// ---------------------------------------------------------------------------
// Noise update

double update_sigma(int k, const Dataset& data, const Eigen::MatrixXd& posteriors,
                    const std::vector<SubjectStage>& stages, const TrajectoryParams& theta_k) {
  const std::int64_t R = data.row_count();
  const std::int64_t L = data.vertex_count();
  if (R < 1) throw Error(ErrorCode::config, "dataset has no observations");

  const double mass = posteriors.col(k).sum();
  if (!(mass > 0.0)) return kSigmaFloor;

  Eigen::VectorXd fitted(R);
  for (std::int64_t r = 0; r < R; ++r)
    fitted[r] = sigmoid_eval(dps(stages[data.row_subject[r]], data.rows[r].age), theta_k);

  double num = 0.0;
  for (std::int64_t l = 0; l < L; ++l)
    num += posteriors(l, k) * (data.values.col(l) - fitted).squaredNorm();

  const double sigma2 = num / (static_cast<double>(R) * mass);
  return std::max(std::sqrt(sigma2), kSigmaFloor);
}

// ---------------------------------------------------------------------------
// Stage update (slow path)

StageFitResult fit_stage(int subject, const Dataset& data, const Eigen::MatrixXd& posteriors,
                         const std::vector<TrajectoryParams>& trajectories,
                         const Eigen::VectorXd& sigmas, const StagePrior& prior,
                         const SubjectStage& init, const StageFitOptions& opts) {
  if (subject < 0 || subject >= data.subject_count())
    throw Error(ErrorCode::config, "subject index out of range: " + std::to_string(subject));
  const auto& rows = data.subject_rows[subject];
  if (rows.empty())
    throw Error(ErrorCode::config, "subject " + std::to_string(subject) + " has no usable visits");
  const int K = static_cast<int>(trajectories.size());
  const std::int64_t L = data.vertex_count();

  Eigen::VectorXd inv_s2(K);
  for (int k = 0; k < K; ++k) {
    if (!(sigmas[k] > 0.0))
      throw Error(ErrorCode::parameter_domain, "sigma must be > 0 for cluster " + std::to_string(k));
    inv_s2[k] = 1.0 / (sigmas[k] * sigmas[k]);
  }

  double t_mid = 0.0;
  for (std::int32_t r : rows) t_mid += data.rows[r].age;
  t_mid /= static_cast<double>(rows.size());

  // Centred coordinates x = (log alpha, s_mid); beta = s_mid - alpha t_mid.
  ObjectiveFn objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    const double alpha = std::exp(x[0]);
    const double beta = x[1] - alpha * t_mid;
    double obj = 0.0;
    double g_u = 0.0, g_s = 0.0;
    for (std::int32_t r : rows) {
      const double dt = data.rows[r].age - t_mid;
      const double sv = alpha * dt + x[1];
      double row_obj = 0.0, dobj_ds = 0.0;
      for (int k = 0; k < K; ++k) {
        const double f = sigmoid_eval(sv, trajectories[k]);
        const double fs = sigmoid_grad(sv, trajectories[k]).ds;
        double wres = 0.0, wssr = 0.0;
        for (std::int64_t l = 0; l < L; ++l) {
          const double e = data.values(r, l) - f;
          wres += posteriors(l, k) * e;
          wssr += posteriors(l, k) * e * e;
        }
        row_obj += 0.5 * inv_s2[k] * wssr;
        dobj_ds += -inv_s2[k] * fs * wres;
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
// Lambda update

Eigen::VectorXd zeta_row(std::int64_t l, double lambda, const DataFitMatrix& dfit,
                         const Eigen::MatrixXd& z_prev,
                         const std::vector<std::vector<std::int32_t>>& adjacency) {
  return normalize_log_weights(posterior_log_row(l, dfit, z_prev, adjacency, lambda));
}

double zeta(std::int64_t l, int k, double lambda, const DataFitMatrix& dfit,
            const Eigen::MatrixXd& z_prev,
            const std::vector<std::vector<std::int32_t>>& adjacency) {
  return zeta_row(l, lambda, dfit, z_prev, adjacency)[k];
}

namespace {

double lambda_objective(double lambda, const DataFitMatrix& dfit, const Eigen::MatrixXd& z_prev,
                        const std::vector<std::vector<std::int32_t>>& adjacency, int threads) {
  const std::int64_t L = dfit.d.rows();
  const Eigen::Index K = dfit.d.cols();
  const Eigen::MatrixXd zeta = update_posteriors(dfit, z_prev, adjacency, lambda, threads);
  double obj = 0.0;
  Eigen::VectorXd nbr_sum(K);
  for (std::int64_t l = 0; l < L; ++l) {
    nbr_sum.setZero();
    for (std::int32_t l2 : adjacency[l]) nbr_sum += zeta.row(l2).transpose();
    const double deg = static_cast<double>(adjacency[l].size());
    double local = 0.0;  // per-vertex cluster sum; swap-exact at K = 2
    for (Eigen::Index k = 0; k < K; ++k)
      local += zeta(l, k) *
               (dfit.d(l, k) + lambda * nbr_sum[k] - lambda * lambda * (deg - nbr_sum[k]));
    obj += local;
  }
  return obj;
}

}  // namespace

double fit_lambda(const DataFitMatrix& dfit, const Eigen::MatrixXd& z_prev,
                  const std::vector<std::vector<std::int32_t>>& adjacency,
                  const LambdaGrid& grid, int threads) {
  if (grid.points < 1 || !(grid.min >= 0.0) || !(grid.max >= grid.min))
    throw Error(ErrorCode::config, "invalid lambda grid");

  auto safe_objective = [&](double lambda) {
    try {
      const double v = lambda_objective(lambda, dfit, z_prev, adjacency, threads);
      return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  const int n = grid.points;
  const double step = n > 1 ? (grid.max - grid.min) / static_cast<double>(n - 1) : 0.0;
  int best = -1;
  double best_f = -std::numeric_limits<double>::infinity();
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = grid.min + step * static_cast<double>(i);
    const double f = safe_objective(xs[i]);
    if (f > best_f) {  // strict: ties keep the smallest lambda
      best_f = f;
      best = i;
    }
  }
  if (best < 0)
    throw Error(ErrorCode::fit_divergence, "lambda objective non-finite on the entire grid");
  if (n == 1) return xs[0];

  const double lo = xs[std::max(0, best - 1)];
  const double hi = xs[std::min(n - 1, best + 1)];
  const GoldenResult refined =
      golden_section_max(safe_objective, lo, hi, 1e-6 * (grid.max - grid.min + 1.0));
  return refined.f > best_f ? refined.x : xs[best];
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

struct KmeansResult {
  std::vector<std::int32_t> labels;
  double sse = std::numeric_limits<double>::infinity();
};

// Lloyd iterations with k-means++ seeding over vertex observation vectors
// (columns of the value matrix). Empty clusters are reseeded to the point
// farthest from its centroid.
KmeansResult kmeans_vertices(const Eigen::MatrixXd& values, int K, int restarts,
                             std::uint64_t seed) {
  const std::int64_t L = values.cols();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  KmeansResult best;
  for (int restart = 0; restart < restarts; ++restart) {
    Eigen::MatrixXd centroids(values.rows(), K);
    {
      std::uniform_int_distribution<std::int64_t> pick(0, L - 1);
      centroids.col(0) = values.col(pick(rng));
      Eigen::VectorXd d2(L);
      for (std::int64_t l = 0; l < L; ++l)
        d2[l] = (values.col(l) - centroids.col(0)).squaredNorm();
      for (int k = 1; k < K; ++k) {
        const double total = d2.sum();
        std::int64_t chosen = 0;
        if (total > 0.0) {
          const double u = unit(rng) * total;
          double acc = 0.0;
          for (std::int64_t l = 0; l < L; ++l) {
            acc += d2[l];
            if (acc >= u) {
              chosen = l;
              break;
            }
          }
        } else {
          std::uniform_int_distribution<std::int64_t> again(0, L - 1);
          chosen = again(rng);
        }
        centroids.col(k) = values.col(chosen);
        for (std::int64_t l = 0; l < L; ++l)
          d2[l] = std::min(d2[l], (values.col(l) - centroids.col(k)).squaredNorm());
      }
    }

    std::vector<std::int32_t> labels(L, 0);
    std::vector<std::int32_t> prev(L, -1);
    for (int iter = 0; iter < 100 && labels != prev; ++iter) {
      prev = labels;
      for (std::int64_t l = 0; l < L; ++l) {
        int arg = 0;
        double bestd = (values.col(l) - centroids.col(0)).squaredNorm();
        for (int k = 1; k < K; ++k) {
          const double d = (values.col(l) - centroids.col(k)).squaredNorm();
          if (d < bestd) {
            bestd = d;
            arg = k;
          }
        }
        labels[l] = arg;
      }
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(values.rows(), K);
      Eigen::VectorXd counts = Eigen::VectorXd::Zero(K);
      for (std::int64_t l = 0; l < L; ++l) {
        sums.col(labels[l]) += values.col(l);
        counts[labels[l]] += 1.0;
      }
      for (int k = 0; k < K; ++k) {
        if (counts[k] > 0.0) {
          centroids.col(k) = sums.col(k) / counts[k];
        } else {
          // farthest point from its own centroid takes over the empty slot
          std::int64_t far_l = 0;
          double far_d = -1.0;
          for (std::int64_t l = 0; l < L; ++l) {
            const double d = (values.col(l) - centroids.col(labels[l])).squaredNorm();
            if (d > far_d) {
              far_d = d;
              far_l = l;
            }
          }
          centroids.col(k) = values.col(far_l);
          labels[far_l] = k;
          prev[far_l] = -1;  // force another sweep
        }
      }
    }

    double sse = 0.0;
    for (std::int64_t l = 0; l < L; ++l)
      sse += (values.col(l) - centroids.col(labels[l])).squaredNorm();
    if (sse < best.sse) {
      best.sse = sse;
      best.labels = std::move(labels);
    }
  }
  return best;
}

// Trajectory, sigma and stage initialization shared by the k-means and
// hard-label (ROI) paths.
ModelState assemble_initial_state(const Dataset& data, const FitConfig& config,
                                  const std::vector<std::int32_t>& labels, bool soften) {
  const std::int64_t L = data.vertex_count();
  const std::int64_t R = data.row_count();
  const int K = config.K;

  ModelState model;
  model.K = K;
  model.posteriors.resize(L, K);
  if (K == 1) {
    model.posteriors.setOnes();
  } else if (soften) {
    const double off = 0.1 / static_cast<double>(K - 1);
    model.posteriors.setConstant(off);
    for (std::int64_t l = 0; l < L; ++l) model.posteriors(l, labels[l]) = 0.9;
  } else {
    model.posteriors.setZero();
    for (std::int64_t l = 0; l < L; ++l) model.posteriors(l, labels[l]) = 1.0;
  }

  double mean_age = 0.0;
  for (const auto& row : data.rows) mean_age += row.age;
  mean_age /= static_cast<double>(R);
  model.stages.assign(data.subject_count(), SubjectStage{1.0, -mean_age});

  std::vector<double> dps_values(R);
  for (std::int64_t r = 0; r < R; ++r) dps_values[r] = data.rows[r].age - mean_age;
  const double c0 = percentile(dps_values, 50.0);

  // One pooled value-age correlation decides the slope sign for every
  // cluster: the clusters share a single disease timeline, and opposing
  // initial signs would seed a self-contradictory staging problem.
  double pooled_cov = 0.0;
  {
    const double mean_v = data.values.mean();
    for (std::int64_t r = 0; r < R; ++r) {
      double row_dev = 0.0;
      for (std::int64_t l = 0; l < L; ++l) row_dev += data.values(r, l) - mean_v;
      pooled_cov += dps_values[r] * row_dev;
    }
  }
  const double b0 = pooled_cov >= 0.0 ? 1.0 : -1.0;

  model.trajectories.resize(K);
  for (int k = 0; k < K; ++k) {
    std::vector<double> member_values;
    std::vector<std::int32_t> members;
    for (std::int64_t l = 0; l < L; ++l)
      if (labels[l] == k) members.push_back(static_cast<std::int32_t>(l));
    if (members.empty())  // degenerate atlas; fall back to global statistics
      for (std::int64_t l = 0; l < L; ++l) members.push_back(static_cast<std::int32_t>(l));
    member_values.reserve(members.size() * R);
    for (std::int32_t l : members)
      for (std::int64_t r = 0; r < R; ++r) member_values.push_back(data.values(r, l));

    const double p5 = percentile(member_values, 5.0);
    const double p95 = percentile(member_values, 95.0);

    TrajectoryParams& t = model.trajectories[k];
    t.d = p5;
    t.a = std::max(p95 - p5, 1e-3);
    t.c = c0;
    t.b = b0;
  }

  model.sigmas.resize(K);
  for (int k = 0; k < K; ++k)
    model.sigmas[k] = update_sigma(k, data, model.posteriors, model.stages, model.trajectories[k]);
  model.mrf.lambda = 1.0;
  return model;
}

}  // namespace

ModelState initialize(const Dataset& data, const FitConfig& config) {
  config.validate();
  if (config.K > data.vertex_count())
    throw Error(ErrorCode::config, "K exceeds the number of vertices");
  std::vector<std::int32_t> labels;
  if (config.K == 1) {
    labels.assign(data.vertex_count(), 0);
  } else {
    labels = kmeans_vertices(data.values, config.K, config.kmeans_restarts, config.seed).labels;
  }
  return assemble_initial_state(data, config, labels, /*soften=*/true);
}

// ---------------------------------------------------------------------------
// GEM outer loop

std::pair<ModelState, FitReport> gem_fit(const Dataset& data, const FitConfig& config,
                                         const Priors& priors, const FitMode& mode,
                                         const std::optional<ModelState>& init) {
  config.validate();
  const std::int64_t L = data.vertex_count();
  const int K = config.K;
  const int threads = resolve_thread_count(config.threads);

  if (mode.kind == FitMode::Kind::roi_fixed) {
    if (static_cast<std::int64_t>(mode.roi_labels.size()) != L)
      throw Error(ErrorCode::config, "ROI atlas size does not match vertex count");
    for (std::int32_t lb : mode.roi_labels)
      if (lb < 0 || lb >= K)
        throw Error(ErrorCode::config, "ROI atlas label out of range: " + std::to_string(lb));
  }

  ModelState model;
  if (init.has_value()) {
    model = *init;
    if (mode.kind == FitMode::Kind::roi_fixed) {
      model.posteriors.setZero();
      for (std::int64_t l = 0; l < L; ++l) model.posteriors(l, mode.roi_labels[l]) = 1.0;
    }
  } else if (mode.kind == FitMode::Kind::roi_fixed) {
    model = assemble_initial_state(data, config, mode.roi_labels, /*soften=*/false);
  } else {
    model = initialize(data, config);
  }
  if (mode.kind == FitMode::Kind::no_staging) {
    // When every initial stage shares one (1, beta), shifting the centres by
    // beta keeps f(dps) pointwise identical as the stages collapse to the
    // identity staging DPS = age.
    const bool uniform = !model.stages.empty() &&
                         std::all_of(model.stages.begin(), model.stages.end(),
                                     [&](const SubjectStage& st) {
                                       return st.alpha == 1.0 &&
                                              st.beta == model.stages[0].beta;
                                     });
    if (uniform)
      for (auto& t : model.trajectories) t.c -= model.stages[0].beta;
    for (auto& st : model.stages) st = SubjectStage{1.0, 0.0};
  }
  model.validate(data);

  FitReport report;
  const auto t_start = std::chrono::steady_clock::now();
  double last_obj = penalized_objective(data, model, priors, threads);
  report.outer_objectives.push_back(last_obj);

  auto record = [&](int iter, SubStepKind kind, int index, bool monotone) {
    const double obj = penalized_objective(data, model, priors, threads);
    if (monotone)
      report.worst_monotone_delta = std::min(report.worst_monotone_delta, obj - last_obj);
    report.substeps.push_back({iter, kind, index, obj});
    last_obj = obj;
  };

  TrajectoryFitOptions topts{config.theta_multi_starts, config.max_inner_iters};
  StageFitOptions sopts{config.max_inner_iters};

  // Stage pre-pass: place subjects on the initial trajectories before the
  // first trajectory update. Fitting theta against unordered initial stages
  // can run the slope into a step function whose flat shoulders then leave
  // the stage objective without usable gradients.
  if (mode.kind != FitMode::Kind::no_staging) {
    const ClusterMeans means = weighted_cluster_means(data, model.posteriors);
    const std::int64_t N = data.subject_count();
    std::vector<StageFitResult> fits(N);
    parallel_for(0, N, threads, [&](std::int64_t i) {
      fits[i] = config.use_fast_path
                    ? fit_stage_fast(data, data.subject_rows[i], means, model.trajectories,
                                     model.sigmas, priors.stage_prior, model.stages[i], sopts)
                    : fit_stage(static_cast<int>(i), data, model.posteriors, model.trajectories,
                                model.sigmas, priors.stage_prior, model.stages[i], sopts);
    });
    for (std::int64_t i = 0; i < N; ++i) {
      model.stages[i] = fits[i].stage;
      record(0, SubStepKind::stage, static_cast<int>(i), true);
    }
  }

  for (int iter = 1; iter <= config.max_outer_iters; ++iter) {
    const ModelState snapshot = model;
    const double prev_outer = report.outer_objectives.back();
    try {
      // E-step
      if (mode.kind != FitMode::Kind::roi_fixed) {
        const DataFitMatrix dfit = compute_data_fit(data, model, threads);
        model.posteriors =
            update_posteriors(dfit, model.posteriors, data.adjacency, model.mrf.lambda, threads);
        record(iter, SubStepKind::estep, -1, false);
      }

      ClusterMeans means;
      if (config.use_fast_path) means = weighted_cluster_means(data, model.posteriors);

      // Trajectory and noise updates, cluster by cluster
      for (int k = 0; k < K; ++k) {
        if (model.posteriors.col(k).sum() < kEmptyClusterFraction * static_cast<double>(L)) {
          report.empty_clusters.emplace_back(iter, k);
          continue;
        }
        const TrajectoryFitResult tr =
            config.use_fast_path
                ? fit_trajectory_fast(k, data, means, model.stages, model.sigmas[k],
                                      priors.theta_prior, model.trajectories[k], topts)
                : fit_trajectory(k, data, model.posteriors, model.stages, model.sigmas[k],
                                 priors.theta_prior, model.trajectories[k], topts);
        model.trajectories[k] = tr.theta;
        record(iter, SubStepKind::trajectory, k, true);

        model.sigmas[k] =
            update_sigma(k, data, model.posteriors, model.stages, model.trajectories[k]);
        record(iter, SubStepKind::sigma, k, true);
      }

      // Stage updates (independent across subjects; computed from one
      // snapshot, applied one by one for the per-step objective trace)
      if (mode.kind != FitMode::Kind::no_staging) {
        const std::int64_t N = data.subject_count();
        std::vector<StageFitResult> fits(N);
        parallel_for(0, N, threads, [&](std::int64_t i) {
          fits[i] = config.use_fast_path
                        ? fit_stage_fast(data, data.subject_rows[i], means, model.trajectories,
                                         model.sigmas, priors.stage_prior, model.stages[i], sopts)
                        : fit_stage(static_cast<int>(i), data, model.posteriors,
                                    model.trajectories, model.sigmas, priors.stage_prior,
                                    model.stages[i], sopts);
        });
        for (std::int64_t i = 0; i < N; ++i) {
          model.stages[i] = fits[i].stage;
          record(iter, SubStepKind::stage, static_cast<int>(i), true);
        }
      }

      // MRF strength
      {
        const DataFitMatrix dfit = compute_data_fit(data, model, threads);
        model.mrf.lambda =
            fit_lambda(dfit, model.posteriors, data.adjacency, config.lambda_grid, threads);
        record(iter, SubStepKind::lambda_step, -1, false);
      }

      // Identifiability: pin the DPS scale
      if (mode.kind != FitMode::Kind::no_staging) {
        model = renormalize_dps(model, data);
        record(iter, SubStepKind::renormalize, -1, false);
      }
    } catch (const Error&) {
      model = snapshot;
      report.diverged = true;
      report.iterations = iter - 1;
      break;
    }

    report.outer_objectives.push_back(last_obj);
    report.iterations = iter;
    if (std::abs(last_obj - prev_outer) <= config.objective_rel_tol * (1.0 + std::abs(prev_outer))) {
      report.converged = true;
      break;
    }
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(model), std::move(report)};
}

}  // namespace dive
