#pragma once

#include <Eigen/Dense>

#include "assortmax/types.hpp"

namespace assortmax {

// Choice probabilities over {no-purchase} + S.
struct ChoiceProbabilities {
  double no_purchase = 0.0;
  Eigen::VectorXd items;  // aligned with the assortment's item order
};

// MNL probabilities for one preference row: item j in S gets weight
// exp(theta[j]), the no-purchase option weight 1. Guarded against
// overflow by shifting exponents; the shift cancels in every ratio.
ChoiceProbabilities choice_probabilities(const Eigen::VectorXd& theta_row, const Assortment& s);

struct Interaction {
  int type_id = 0;
  int choice = 0;  // 0 = no purchase
  double revenue = 0.0;
};

// Inverse-CDF draw of a type id from a probability vector.
int sample_type(const Eigen::VectorXd& mu, Rng& rng);

// Draws a choice (0 or a member of s) from the MNL row.
int sample_choice(const Eigen::VectorXd& theta_row, const Assortment& s, Rng& rng);

// Draws a type from mu_star, then a choice from the type's MNL row.
Interaction sample_interaction(const Instance& instance, const Assortment& s, Rng& rng);

// Uniform random size-K subset of {1,...,n} via partial Fisher-Yates.
Assortment sample_uniform_assortment(int n, int K, Rng& rng);

// Average negative log likelihood of the log under preference matrix theta.
double nll(const Eigen::MatrixXd& theta, const ObservationLog& log);

// Gradient of nll. Only entries (i_t, j) with j in S_t are touched; the
// result is returned densely (untouched entries are exactly zero).
Eigen::MatrixXd nll_gradient(const Eigen::MatrixXd& theta, const ObservationLog& log);

}  // namespace assortmax
