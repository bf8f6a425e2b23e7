#include "dive/types.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace dive {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return "config";
    case ErrorCode::parameter_domain: return "parameter-domain";
    case ErrorCode::fit_divergence: return "fit-divergence";
    case ErrorCode::inference_divergence: return "inference-divergence";
    case ErrorCode::degenerate_staging: return "degenerate-staging";
    case ErrorCode::degenerate_cluster: return "degenerate-cluster";
    case ErrorCode::undefined_correlation: return "undefined-correlation";
    case ErrorCode::io_format: return "io-format";
    case ErrorCode::io_version: return "io-version";
    case ErrorCode::io_corrupt: return "io-corrupt";
    case ErrorCode::fingerprint_mismatch: return "fingerprint-mismatch";
  }
  return "unknown";
}

void Dataset::finalize() {
  const std::int64_t R = values.rows();
  const std::int64_t L = values.cols();
  if (static_cast<std::int64_t>(rows.size()) != R)
    throw Error(ErrorCode::config, "row metadata count " + std::to_string(rows.size()) +
                                       " does not match value matrix rows " + std::to_string(R));
  if (static_cast<std::int64_t>(adjacency.size()) != L)
    throw Error(ErrorCode::config, "adjacency size " + std::to_string(adjacency.size()) +
                                       " does not match vertex count " + std::to_string(L));
  if (!values.allFinite())
    throw Error(ErrorCode::config, "non-finite value in the measurement matrix");

  subject_ids.clear();
  subject_rows.clear();
  row_subject.assign(R, -1);
  std::unordered_map<std::int64_t, std::int32_t> index;
  for (std::int64_t r = 0; r < R; ++r) {
    if (!std::isfinite(rows[r].age))
      throw Error(ErrorCode::config, "non-finite age at row " + std::to_string(r));
    auto [it, inserted] = index.try_emplace(rows[r].subject_id,
                                            static_cast<std::int32_t>(subject_ids.size()));
    if (inserted) {
      subject_ids.push_back(rows[r].subject_id);
      subject_rows.emplace_back();
    }
    row_subject[r] = it->second;
    subject_rows[it->second].push_back(static_cast<std::int32_t>(r));
  }

  // Symmetry and self-loop check; also sorts neighbour lists for determinism.
  std::vector<std::unordered_set<std::int32_t>> sets(L);
  for (std::int64_t l = 0; l < L; ++l) {
    auto& nbrs = adjacency[l];
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
    for (std::int32_t n : nbrs) {
      if (n < 0 || n >= L)
        throw Error(ErrorCode::config, "neighbour index " + std::to_string(n) +
                                           " out of range at vertex " + std::to_string(l));
      if (n == l)
        throw Error(ErrorCode::config, "self-loop at vertex " + std::to_string(l));
      sets[l].insert(n);
    }
  }
  for (std::int64_t l = 0; l < L; ++l)
    for (std::int32_t n : adjacency[l])
      if (!sets[n].count(static_cast<std::int32_t>(l)))
        throw Error(ErrorCode::config, "asymmetric adjacency: edge (" + std::to_string(l) +
                                           "," + std::to_string(n) + ") has no reverse");
}

std::int32_t Dataset::baseline_row(std::int32_t subject) const {
  const auto& rs = subject_rows.at(subject);
  std::int32_t best = rs.front();
  for (std::int32_t r : rs)
    if (rows[r].age < rows[best].age ||
        (rows[r].age == rows[best].age && rows[r].visit_id < rows[best].visit_id))
      best = r;
  return best;
}

Dataset::SubjectSubset Dataset::restricted_to_subjects(
    std::span<const std::int32_t> subjects) const {
  SubjectSubset out;
  for (std::int32_t s : subjects)
    for (std::int32_t r : subject_rows.at(s)) out.original_rows.push_back(r);
  std::sort(out.original_rows.begin(), out.original_rows.end());
  out.original_subjects.assign(subjects.begin(), subjects.end());

  const std::int64_t R = static_cast<std::int64_t>(out.original_rows.size());
  out.data.values.resize(R, values.cols());
  out.data.rows.resize(R);
  for (std::int64_t r = 0; r < R; ++r) {
    out.data.values.row(r) = values.row(out.original_rows[r]);
    out.data.rows[r] = rows[out.original_rows[r]];
  }
  out.data.adjacency = adjacency;
  out.data.finalize();
  return out;
}

namespace {
constexpr double kLogTwoPi = 1.8378770664093454836;

double gaussian_log_density(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLogTwoPi;
}
}  // namespace

double TrajectoryPrior::log_density(const TrajectoryParams& theta) const {
  if (is_uniform) return 0.0;
  return gaussian_log_density(theta.a, mean.a, sd[0]) +
         gaussian_log_density(theta.b, mean.b, sd[1]) +
         gaussian_log_density(theta.c, mean.c, sd[2]) +
         gaussian_log_density(theta.d, mean.d, sd[3]);
}

std::array<double, 4> TrajectoryPrior::grad_log_density(const TrajectoryParams& theta) const {
  if (is_uniform) return {0.0, 0.0, 0.0, 0.0};
  return {-(theta.a - mean.a) / (sd[0] * sd[0]), -(theta.b - mean.b) / (sd[1] * sd[1]),
          -(theta.c - mean.c) / (sd[2] * sd[2]), -(theta.d - mean.d) / (sd[3] * sd[3])};
}

TrajectoryPrior TrajectoryPrior::gaussian(const TrajectoryParams& mean,
                                          const std::array<double, 4>& sd) {
  for (double s : sd)
    if (!(s > 0.0)) throw Error(ErrorCode::parameter_domain, "prior sd must be > 0");
  TrajectoryPrior p;
  p.is_uniform = false;
  p.mean = mean;
  p.sd = sd;
  return p;
}

double StagePrior::log_density(double alpha, double beta) const {
  if (is_uniform) return 0.0;
  return gaussian_log_density(std::log(alpha), log_alpha_mean, log_alpha_sd) +
         gaussian_log_density(beta, beta_mean, beta_sd);
}

std::array<double, 2> StagePrior::grad_log_density(double log_alpha, double beta) const {
  if (is_uniform) return {0.0, 0.0};
  return {-(log_alpha - log_alpha_mean) / (log_alpha_sd * log_alpha_sd),
          -(beta - beta_mean) / (beta_sd * beta_sd)};
}

StagePrior StagePrior::gaussian(double log_alpha_mean, double log_alpha_sd, double beta_mean,
                                double beta_sd) {
  if (!(log_alpha_sd > 0.0) || !(beta_sd > 0.0))
    throw Error(ErrorCode::parameter_domain, "prior sd must be > 0");
  StagePrior p;
  p.is_uniform = false;
  p.log_alpha_mean = log_alpha_mean;
  p.log_alpha_sd = log_alpha_sd;
  p.beta_mean = beta_mean;
  p.beta_sd = beta_sd;
  return p;
}

void ModelState::validate(const Dataset& data) const {
  if (K < 1) throw Error(ErrorCode::parameter_domain, "K must be >= 1");
  if (static_cast<int>(trajectories.size()) != K || sigmas.size() != K)
    throw Error(ErrorCode::parameter_domain, "trajectory/sigma count does not match K");
  if (static_cast<std::int64_t>(stages.size()) != data.subject_count())
    throw Error(ErrorCode::parameter_domain, "stage count does not match subject count");
  if (posteriors.rows() != data.vertex_count() || posteriors.cols() != K)
    throw Error(ErrorCode::parameter_domain, "posterior matrix shape mismatch");
  if (!(mrf.lambda >= 0.0) || !std::isfinite(mrf.lambda))
    throw Error(ErrorCode::parameter_domain, "lambda must be finite and >= 0");
  for (int k = 0; k < K; ++k) {
    const auto& t = trajectories[k];
    if (!std::isfinite(t.a) || !std::isfinite(t.b) || !std::isfinite(t.c) || !std::isfinite(t.d))
      throw Error(ErrorCode::parameter_domain, "non-finite trajectory parameter, cluster " +
                                                   std::to_string(k));
    if (!(sigmas[k] > 0.0) || !std::isfinite(sigmas[k]))
      throw Error(ErrorCode::parameter_domain, "sigma must be finite and > 0, cluster " +
                                                   std::to_string(k));
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (!(stages[i].alpha > 0.0) || !std::isfinite(stages[i].alpha) ||
        !std::isfinite(stages[i].beta))
      throw Error(ErrorCode::parameter_domain, "invalid stage for subject " + std::to_string(i));
  }
  for (std::int64_t l = 0; l < posteriors.rows(); ++l) {
    double sum = 0.0;
    for (int k = 0; k < K; ++k) {
      const double z = posteriors(l, k);
      if (!(z >= 0.0) || !std::isfinite(z))
        throw Error(ErrorCode::parameter_domain,
                    "posterior entry out of range at (" + std::to_string(l) + "," +
                        std::to_string(k) + ")");
      sum += z;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw Error(ErrorCode::parameter_domain,
                  "posterior row " + std::to_string(l) + " sums to " + std::to_string(sum));
  }
}

}  // namespace dive
