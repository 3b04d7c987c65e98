#pragma once

#include <Eigen/Dense>
#include <limits>

#include "assortmax/types.hpp"

namespace assortmax {

struct AssortmentSolution {
  Assortment set;
  double value = 0.0;
  bool degenerate = false;  // all-zero revenues, empty set returned
  bool exact = false;       // plan_assortment: solved by enumeration
};

// F(S; w, theta) = sum_{j in S} p_j(S; theta) w_j. Empty S gives 0.
double expected_revenue(const Assortment& s, const Eigen::VectorXd& w,
                        const Eigen::VectorXd& theta_row);

// Exact cardinality-constrained MNL assortment optimization by bisection
// on the revenue level z: for fixed z the best candidate is the top-K
// items by score e^{theta_j}(w_j - z) restricted to positive scores, and
// the optimum is >= z iff that candidate's score sum is >= z.
AssortmentSolution optimal_assortment(const Eigen::VectorXd& w, const Eigen::VectorXd& theta_row,
                                      int K);

// Exhaustive enumeration over all subsets of size <= K. Guarded to
// n <= 20; ties broken by lexicographically smallest set.
AssortmentSolution brute_force_assortment(const Eigen::VectorXd& w,
                                          const Eigen::VectorXd& theta_row, int K);

// Revenue gap between the optimal assortment and the best suboptimal
// one; sets within 1e-12 of the optimum count as optimal. Returns +inf
// when every set is optimal. Enumeration-based, n <= 20.
double optimality_gap(const Eigen::VectorXd& w, const Eigen::VectorXd& theta_row, int K);

// Heterogeneous-population objective: mu-weighted average of the
// per-type expected revenue of the same assortment.
double population_revenue(const Assortment& s, const Eigen::MatrixXd& W,
                          const Eigen::MatrixXd& theta, const Eigen::VectorXd& mu);

// Planning heuristic over revenue-ordered prefixes plus the per-type
// optimal assortments; exact enumeration when n <= 12. `force_heuristic`
// disables the enumeration shortcut (used for cross-checks).
AssortmentSolution plan_assortment(const Eigen::MatrixXd& W, const Eigen::MatrixXd& theta,
                                   const Eigen::VectorXd& mu, int K,
                                   bool force_heuristic = false);

inline constexpr double kGapAllOptimal = std::numeric_limits<double>::infinity();

}  // namespace assortmax
