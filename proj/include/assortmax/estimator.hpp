#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>

#include "assortmax/types.hpp"

namespace assortmax {

struct FgdConfig {
  int r_tilde = 1;             // factor rank
  double lambda = 0.0;         // nuclear-norm / ridge coefficient
  double beta_dec = 0.8;       // line-search shrink factor
  double tol = 1e-10;          // relative-objective stopping tolerance
  int max_outer_iters = 500;
  int max_linesearch_iters = 60;

  void validate(int m, int n) const;
};

// Factored iterate: Theta = U V^T.
struct FactorPair {
  Eigen::MatrixXd U;  // m x r_tilde
  Eigen::MatrixXd V;  // n x r_tilde
  double objective = 0.0;
  bool degenerate_init = false;  // gamma fallback was taken
};

enum class Provenance { kFgd, kPerTypeMle, kPooledMle };

struct Estimate {
  Eigen::MatrixXd theta_hat;
  Eigen::VectorXd mu_hat;
  Provenance provenance = Provenance::kFgd;
  int iterations = 0;
  double final_objective = 0.0;
  double wall_time_s = 0.0;
  bool stationary = false;  // line search stalled before tolerance
  std::vector<int> nonconverged_rows;  // per-type MLE rows that hit the cap
  std::optional<FactorPair> factors;   // present for FGD estimates
};

// L(UV^T) + (lambda/2)(||U||_F^2 + ||V||_F^2), with L evaluated from
// per-observation inner products only.
double factored_objective(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V, double lambda,
                          const ObservationLog& log);

// Gradients of factored_objective with respect to (U, V).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> factored_gradients(const Eigen::MatrixXd& U,
                                                               const Eigen::MatrixXd& V,
                                                               double lambda,
                                                               const ObservationLog& log);

// Spectral initialization from the SVD of -grad L(0), with balanced
// sqrt-singular-value column scaling.
FactorPair fgd_initialize(const ObservationLog& log, int m, int n, double lambda, int r_tilde);

// Factored gradient descent with backtracking line search.
Estimate fgd_solve(const ObservationLog& log, int m, int n, const FgdConfig& config,
                   const std::optional<FactorPair>& warm_start = std::nullopt);

// Row-separable MLE baseline; rows with no observations stay zero.
Estimate per_type_mle(const ObservationLog& log, int m, int n, double ridge = 1e-8);

// Single shared MNL row fit to all observations pooled together.
Eigen::VectorXd pooled_mle(const ObservationLog& log, int n, double ridge = 1e-8);

// Empirical type frequencies.
Eigen::VectorXd estimate_mu(const ObservationLog& log, int m);

// (1/sqrt(mn)) ||theta - theta_star||_F.
double rmse(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& theta_star);

// Sum of singular values beyond the r-th largest.
double tail_singular_sum(const Eigen::MatrixXd& theta, int r);

// Serialization: dense estimate as `type,item,value` CSV; factored form
// as a text block `m n r_tilde lambda` header followed by U then V rows.
void write_estimate_csv(std::ostream& out, const Eigen::MatrixXd& theta);
Eigen::MatrixXd read_estimate_csv(std::istream& in, int m, int n);
void write_factors_text(std::ostream& out, const FactorPair& factors, double lambda);
std::pair<FactorPair, double> read_factors_text(std::istream& in);

}  // namespace assortmax
