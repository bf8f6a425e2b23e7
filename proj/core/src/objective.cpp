#include "dive/objective.hpp"

#include <cmath>

namespace dive {

double penalized_objective(const Dataset& data, const ModelState& model, const Priors& priors,
                           const DataFitMatrix& dfit) {
  const std::int64_t L = data.vertex_count();
  const int K = model.K;

  // Cluster sums accumulate into per-vertex locals started at zero, so a
  // two-cluster label swap reproduces the value bit for bit.
  double obj = 0.0;
  for (std::int64_t l = 0; l < L; ++l) {
    double local = 0.0;
    for (int k = 0; k < K; ++k) local += model.posteriors(l, k) * dfit.d(l, k);
    obj += local;
  }

  const double lambda = model.mrf.lambda;
  double mrf = 0.0;
  for (std::int64_t l = 0; l < L; ++l) {
    for (std::int32_t l2 : data.adjacency[l]) {
      double agree = 0.0;
      for (int k = 0; k < K; ++k) agree += model.posteriors(l, k) * model.posteriors(l2, k);
      mrf += lambda * agree - lambda * lambda * (1.0 - agree);
    }
  }
  obj += mrf;

  double theta_prior = 0.0;
  for (int k = 0; k < K; ++k) theta_prior += priors.theta_prior.log_density(model.trajectories[k]);
  obj += theta_prior;
  for (const auto& st : model.stages) obj += priors.stage_prior.log_density(st.alpha, st.beta);

  if (!std::isfinite(obj))
    throw Error(ErrorCode::fit_divergence, "penalized objective is not finite");
  return obj;
}

double penalized_objective(const Dataset& data, const ModelState& model, const Priors& priors,
                           int threads) {
  model.validate(data);
  const DataFitMatrix dfit = compute_data_fit(data, model, threads);
  return penalized_objective(data, model, priors, dfit);
}

ModelState renormalize_dps(const ModelState& model, const Dataset& data) {
  const std::int64_t N = data.subject_count();
  double mean = 0.0;
  std::vector<double> baseline(N);
  for (std::int64_t i = 0; i < N; ++i) {
    const auto& row = data.rows[data.baseline_row(static_cast<std::int32_t>(i))];
    baseline[i] = model.stages[i].alpha * row.age + model.stages[i].beta;
    mean += baseline[i];
  }
  mean /= static_cast<double>(N);
  double var = 0.0;
  for (double s : baseline) var += (s - mean) * (s - mean);
  var /= static_cast<double>(N);
  const double sd = std::sqrt(var);
  if (!(sd > 0.0))
    throw Error(ErrorCode::degenerate_staging,
                "all subjects share the same baseline DPS; scale is undefined");

  ModelState out = model;
  for (auto& st : out.stages) {
    st.alpha = st.alpha / sd;
    st.beta = (st.beta - mean) / sd;
  }
  for (auto& t : out.trajectories) {
    t.c = (t.c - mean) / sd;
    t.b = t.b * sd;
  }
  return out;
}

}  // namespace dive
