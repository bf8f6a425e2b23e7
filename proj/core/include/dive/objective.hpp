#ifndef DIVE_OBJECTIVE_HPP
#define DIVE_OBJECTIVE_HPP

#include "dive/estep.hpp"
#include "dive/types.hpp"

namespace dive {

// Expected complete-data log-likelihood under the current posteriors plus
// log-priors:
//   sum_l sum_k z_lk D_lk
//   + sum_l sum_{l2 in N_l} [lambda * agree(l,l2) - lambda^2 * (1 - agree(l,l2))]
//   + sum_k log p(theta_k) + sum_i log p(alpha_i, beta_i)
// where agree(l,l2) = sum_k z_lk z_{l2,k}. Throws fit-divergence if the
// result is not finite.
double penalized_objective(const Dataset& data, const ModelState& model, const Priors& priors,
                           int threads = 1);

// Same, reusing a precomputed data-fit matrix for the model.
double penalized_objective(const Dataset& data, const ModelState& model, const Priors& priors,
                           const DataFitMatrix& dfit);

// Rescales the DPS axis so baseline-visit DPS values have mean 0 and
// standard deviation 1:
//   alpha -> alpha / v, beta -> (beta - m) / v, c -> (c - m) / v, b -> b * v.
// Posteriors, sigma and lambda are untouched; the penalized objective is
// preserved (the map is a pure reparameterization). Throws
// degenerate-staging when all baseline DPS values coincide.
ModelState renormalize_dps(const ModelState& model, const Dataset& data);

}  // namespace dive

#endif
