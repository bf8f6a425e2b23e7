#include "dive/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <random>

#include "dive/sigmoid.hpp"

namespace dive {

void ScenarioConfig::validate() const {
  if (K < 1) throw Error(ErrorCode::config, "K must be >= 1");
  if (L < 2) throw Error(ErrorCode::config, "L must be >= 2");
  if (n_subjects < 1) throw Error(ErrorCode::config, "n_subjects must be >= 1");
  if (visits_per_subject < 1) throw Error(ErrorCode::config, "visits_per_subject must be >= 1");
  if (!(visit_spacing_years > 0.0)) throw Error(ErrorCode::config, "visit spacing must be > 0");
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::config, "noise sigma must be >= 0");
  if (!(separation > 0.0)) throw Error(ErrorCode::config, "separation must be > 0");
  if (!(trajectory_height > 0.0)) throw Error(ErrorCode::config, "height must be > 0");
  if (mesh == MeshKind::grid && (grid_width < 1 || L % grid_width != 0))
    throw Error(ErrorCode::config, "grid width must divide L");
  if (mesh == MeshKind::random_regular &&
      (regular_degree < 1 || regular_degree >= L || (static_cast<std::int64_t>(L) * regular_degree) % 2 != 0))
    throw Error(ErrorCode::config, "unsatisfiable regular-graph degree");
  if (K > L) throw Error(ErrorCode::config, "K exceeds L");
}

ScenarioConfig preset_scenario(const std::string& name, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.seed = seed;
  if (name == "easy") {
    cfg.noise_sigma = 0.10 * cfg.trajectory_height;
    cfg.labels = LabelKind::patches;
  } else if (name == "medium") {
    cfg.noise_sigma = 0.25 * cfg.trajectory_height;
    cfg.labels = LabelKind::potts;
  } else if (name == "hard") {
    cfg.noise_sigma = 0.50 * cfg.trajectory_height;
    cfg.labels = LabelKind::potts;
  } else {
    throw Error(ErrorCode::config, "unknown preset: " + name);
  }
  return cfg;
}

namespace {

std::vector<std::vector<std::int32_t>> grid_mesh(int L, int width) {
  const int height = L / width;
  std::vector<std::vector<std::int32_t>> adj(L);
  auto id = [width](int r, int c) { return r * width + c; };
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      if (c + 1 < width) {
        adj[id(r, c)].push_back(id(r, c + 1));
        adj[id(r, c + 1)].push_back(id(r, c));
      }
      if (r + 1 < height) {
        adj[id(r, c)].push_back(id(r + 1, c));
        adj[id(r + 1, c)].push_back(id(r, c));
      }
    }
  }
  return adj;
}

bool is_connected(const std::vector<std::vector<std::int32_t>>& adj) {
  if (adj.empty()) return true;
  std::vector<char> seen(adj.size(), 0);
  std::deque<std::int32_t> queue{0};
  seen[0] = 1;
  std::size_t visited = 1;
  while (!queue.empty()) {
    const std::int32_t v = queue.front();
    queue.pop_front();
    for (std::int32_t n : adj[v])
      if (!seen[n]) {
        seen[n] = 1;
        ++visited;
        queue.push_back(n);
      }
  }
  return visited == adj.size();
}

// Configuration-model sampling rejected until simple and connected.
std::vector<std::vector<std::int32_t>> regular_mesh(int L, int degree, std::mt19937_64& rng) {
  constexpr int kMaxTries = 2000;
  for (int attempt = 0; attempt < kMaxTries; ++attempt) {
    std::vector<std::int32_t> stubs;
    stubs.reserve(static_cast<std::size_t>(L) * degree);
    for (int v = 0; v < L; ++v)
      for (int d = 0; d < degree; ++d) stubs.push_back(v);
    std::shuffle(stubs.begin(), stubs.end(), rng);

    std::vector<std::vector<std::int32_t>> adj(L);
    bool ok = true;
    for (std::size_t i = 0; i + 1 < stubs.size(); i += 2) {
      const std::int32_t a = stubs[i], b = stubs[i + 1];
      if (a == b || std::find(adj[a].begin(), adj[a].end(), b) != adj[a].end()) {
        ok = false;
        break;
      }
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    if (ok && is_connected(adj)) return adj;
  }
  throw Error(ErrorCode::config, "failed to sample a connected simple regular graph");
}

}  // namespace

std::vector<std::vector<std::int32_t>> generate_mesh(const ScenarioConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  auto adj = config.mesh == MeshKind::grid ? grid_mesh(config.L, config.grid_width)
                                           : regular_mesh(config.L, config.regular_degree, rng);
  if (!is_connected(adj)) throw Error(ErrorCode::config, "generated mesh is not connected");
  return adj;
}

std::vector<std::int32_t> make_patch_labels(const std::vector<std::vector<std::int32_t>>& adjacency,
                                            int K, std::uint64_t seed) {
  const std::int64_t L = static_cast<std::int64_t>(adjacency.size());
  std::mt19937_64 rng(seed);
  std::vector<std::int32_t> labels(L, -1);
  std::vector<std::int32_t> order(L);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::deque<std::int32_t>> frontiers(K);
  for (int k = 0; k < K; ++k) {
    labels[order[k]] = k;
    frontiers[k].push_back(order[k]);
  }
  // Round-robin BFS growth keeps every patch contiguous and of similar size.
  bool grew = true;
  while (grew) {
    grew = false;
    for (int k = 0; k < K; ++k) {
      while (!frontiers[k].empty()) {
        const std::int32_t v = frontiers[k].front();
        std::int32_t next = -1;
        for (std::int32_t n : adjacency[v])
          if (labels[n] < 0) {
            next = n;
            break;
          }
        if (next >= 0) {
          labels[next] = k;
          frontiers[k].push_back(next);
          grew = true;
          break;
        }
        frontiers[k].pop_front();
      }
    }
  }
  // Disconnected leftovers (cannot happen on a connected mesh) default to 0.
  for (auto& lb : labels)
    if (lb < 0) lb = 0;
  return labels;
}

namespace {

std::vector<std::int32_t> potts_labels(const std::vector<std::vector<std::int32_t>>& adjacency,
                                       int K, double coupling, int sweeps,
                                       std::mt19937_64& rng) {
  const std::int64_t L = static_cast<std::int64_t>(adjacency.size());
  std::uniform_int_distribution<int> pick(0, K - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::int32_t> labels(L);
  for (auto& lb : labels) lb = static_cast<std::int32_t>(pick(rng));

  std::vector<double> weights(K);
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (std::int64_t l = 0; l < L; ++l) {
      double max_count = 0.0;
      std::vector<int> counts(K, 0);
      for (std::int32_t n : adjacency[l]) counts[labels[n]]++;
      for (int k = 0; k < K; ++k) max_count = std::max(max_count, static_cast<double>(counts[k]));
      double total = 0.0;
      for (int k = 0; k < K; ++k) {
        weights[k] = std::exp(coupling * (counts[k] - max_count));
        total += weights[k];
      }
      const double u = unit(rng) * total;
      double acc = 0.0;
      std::int32_t chosen = static_cast<std::int32_t>(K - 1);
      for (int k = 0; k < K; ++k) {
        acc += weights[k];
        if (acc >= u) {
          chosen = static_cast<std::int32_t>(k);
          break;
        }
      }
      labels[l] = chosen;
    }
  }
  return labels;
}

}  // namespace

std::pair<Dataset, GroundTruth> generate_dataset(const ScenarioConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);

  Dataset data;
  data.adjacency = config.mesh == MeshKind::grid
                       ? grid_mesh(config.L, config.grid_width)
                       : regular_mesh(config.L, config.regular_degree, rng);

  GroundTruth truth;
  truth.noise_sigma = config.noise_sigma;
  if (config.K == 1) {
    truth.labels.assign(config.L, 0);
  } else if (config.labels == LabelKind::patches) {
    std::uniform_int_distribution<std::uint64_t> sub(0, std::numeric_limits<std::uint64_t>::max());
    truth.labels = make_patch_labels(data.adjacency, config.K, sub(rng));
  } else {
    truth.labels = potts_labels(data.adjacency, config.K, config.potts_coupling,
                                config.potts_sweeps, rng);
  }

  std::normal_distribution<double> std_normal(0.0, 1.0);
  const int N = config.n_subjects;
  const int V = config.visits_per_subject;

  truth.stages.resize(N);
  data.rows.reserve(static_cast<std::size_t>(N) * V);
  for (int i = 0; i < N; ++i) {
    const double t0 = config.age_mean + config.age_sd * std_normal(rng);
    const double alpha = std::exp(config.alpha_log_sd * std_normal(rng));
    const double s0 = config.dps_baseline_sd * std_normal(rng);
    truth.stages[i] = SubjectStage{alpha, s0 - alpha * t0};
    for (int j = 0; j < V; ++j)
      data.rows.push_back({i, j, t0 + j * config.visit_spacing_years});
  }

  const std::int64_t R = static_cast<std::int64_t>(data.rows.size());
  std::vector<double> row_dps(R);
  double mean_dps = 0.0;
  for (std::int64_t r = 0; r < R; ++r) {
    const int i = static_cast<int>(data.rows[r].subject_id);
    row_dps[r] = dps(truth.stages[i], data.rows[r].age);
    mean_dps += row_dps[r];
  }
  mean_dps /= static_cast<double>(R);

  truth.trajectories.resize(config.K);
  for (int k = 0; k < config.K; ++k) {
    TrajectoryParams& t = truth.trajectories[k];
    t.a = config.trajectory_height;
    t.d = 0.0;
    t.c = mean_dps + config.separation * (k - 0.5 * (config.K - 1));
    t.b = 3.0 / std::max(config.separation, 0.5) * (1.0 + 0.15 * k);
  }

  data.values.resize(R, config.L);
  for (std::int64_t r = 0; r < R; ++r)
    for (int l = 0; l < config.L; ++l)
      data.values(r, l) = sigmoid_eval(row_dps[r], truth.trajectories[truth.labels[l]]) +
                          config.noise_sigma * std_normal(rng);

  data.finalize();
  return {std::move(data), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Label matching (exact assignment)

namespace {

// O(n^3) Hungarian algorithm on a square cost matrix; returns the column
// assigned to each row.
std::vector<int> hungarian_min(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = std::numeric_limits<double>::infinity();
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1) assignment[p[j] - 1] = j - 1;
  return assignment;
}

}  // namespace

std::vector<int> match_labels(const Eigen::MatrixXd& z_est,
                              const std::vector<std::int32_t>& truth_labels, int K) {
  if (K > 20) throw Error(ErrorCode::config, "label matching supports K <= 20");
  if (z_est.cols() != K)
    throw Error(ErrorCode::config, "posterior column count does not match K");
  if (static_cast<std::int64_t>(truth_labels.size()) != z_est.rows())
    throw Error(ErrorCode::config, "truth label count does not match posterior rows");

  // mass(ke, kt): posterior mass of estimated cluster ke on true cluster kt
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(K, K);
  for (std::int64_t l = 0; l < z_est.rows(); ++l) {
    const std::int32_t kt = truth_labels[l];
    if (kt < 0 || kt >= K)
      throw Error(ErrorCode::config, "truth label out of range at vertex " + std::to_string(l));
    for (int ke = 0; ke < K; ++ke) mass(ke, kt) += z_est(l, ke);
  }

  const std::vector<int> row_to_col = hungarian_min(-mass);  // maximize mass
  std::vector<int> perm(K, -1);
  for (int ke = 0; ke < K; ++ke) perm[row_to_col[ke]] = ke;  // perm[k_true] = k_est
  return perm;
}

// ---------------------------------------------------------------------------
// Error metrics

std::vector<double> baseline_ages(const Dataset& data) {
  std::vector<double> ages(data.subject_count());
  for (std::int64_t i = 0; i < data.subject_count(); ++i)
    ages[i] = data.rows[data.baseline_row(static_cast<std::int32_t>(i))].age;
  return ages;
}

DpsAlignment align_dps(const std::vector<SubjectStage>& est, const std::vector<SubjectStage>& truth,
                       const std::vector<double>& ages) {
  if (est.size() != truth.size() || est.size() != ages.size())
    throw Error(ErrorCode::config, "stage/age count mismatch in DPS alignment");
  const std::size_t n = est.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += dps(est[i], ages[i]);
    my += dps(truth[i], ages[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = dps(est[i], ages[i]) - mx;
    const double dy = dps(truth[i], ages[i]) - my;
    sxx += dx * dx;
    sxy += dx * dy;
  }
  DpsAlignment a;
  a.scale = sxx > 0.0 ? sxy / sxx : 0.0;
  a.offset = my - a.scale * mx;
  return a;
}

double dps_error(const std::vector<SubjectStage>& est, const std::vector<SubjectStage>& truth,
                 const std::vector<double>& ages) {
  const DpsAlignment a = align_dps(est, truth, ages);
  double ssd = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double diff = a.apply(dps(est[i], ages[i])) - dps(truth[i], ages[i]);
    ssd += diff * diff;
  }
  return ssd;
}

double center_error(const std::vector<TrajectoryParams>& est,
                    const std::vector<TrajectoryParams>& truth, const std::vector<int>& perm,
                    const DpsAlignment& align) {
  if (perm.size() != truth.size() || est.size() != truth.size())
    throw Error(ErrorCode::config, "permutation/trajectory size mismatch");
  double ssd = 0.0;
  for (std::size_t kt = 0; kt < truth.size(); ++kt) {
    const double diff = align.apply(est[perm[kt]].c) - truth[kt].c;
    ssd += diff * diff;
  }
  return ssd;
}

double label_agreement(const Eigen::MatrixXd& z_est, const std::vector<std::int32_t>& truth_labels,
                       const std::vector<int>& perm) {
  const std::int64_t L = z_est.rows();
  std::int64_t hits = 0;
  for (std::int64_t l = 0; l < L; ++l) {
    int arg = 0;
    for (int k = 1; k < z_est.cols(); ++k)
      if (z_est(l, k) > z_est(l, arg)) arg = k;
    if (arg == perm[truth_labels[l]]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(L);
}

}  // namespace dive
