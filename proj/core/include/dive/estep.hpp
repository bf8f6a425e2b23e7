#ifndef DIVE_ESTEP_HPP
#define DIVE_ESTEP_HPP

#include <Eigen/Core>

#include "dive/types.hpp"

namespace dive {

// Per-vertex, per-cluster Gaussian data-fit log-likelihood terms.
struct DataFitMatrix {
  Eigen::MatrixXd d;  // L x K, entry D_lk
};

// Exponentiation-and-normalisation of a log-weight vector done in one shot:
// z_k = 1 / sum_m exp(x_m - x_k). Shift invariant; never overflows to a
// wrong result (saturated terms divide out to 0). Throws on non-finite input.
Eigen::VectorXd normalize_log_weights(const Eigen::VectorXd& x);

// D_lk = -|I|/2 log(2 pi sigma_k^2) - sum_{(i,j)} (V_l^ij - f(dps; theta_k))^2 / (2 sigma_k^2).
// Independent of the posteriors and of lambda. Throws if any sigma_k <= 0.
DataFitMatrix compute_data_fit(const Dataset& data, const ModelState& model, int threads = 1);

// Unnormalized log posterior for one vertex as a function of lambda:
//   log w_lk = D_lk + sum_{l2 in N_l} log[exp(-lambda^2) + z_prev(l2,k) (exp(lambda) - exp(-lambda^2))].
// This is the exponent of zeta_lk(lambda); the E-step normalizes it per row.
Eigen::VectorXd posterior_log_row(std::int64_t l, const DataFitMatrix& dfit,
                                  const Eigen::MatrixXd& z_prev,
                                  const std::vector<std::vector<std::int32_t>>& adjacency,
                                  double lambda);

// One synchronous posterior update: for every vertex l,
//   log w_lk = D_lk + sum_{l2 in N_l} log[exp(-lambda^2) + z_prev(l2,k) (exp(lambda) - exp(-lambda^2))]
// followed by normalize_log_weights per row. All rows are computed from the
// same z_prev snapshot, so no row's output depends on another row's output.
Eigen::MatrixXd update_posteriors(const DataFitMatrix& dfit, const Eigen::MatrixXd& z_prev,
                                  const std::vector<std::vector<std::int32_t>>& adjacency,
                                  double lambda, int threads = 1);

}  // namespace dive

#endif
