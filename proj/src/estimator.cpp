#include "assortmax/estimator.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "assortmax/choice.hpp"

namespace assortmax {

namespace {

constexpr int kDenseSvdLimit = 2000;

struct Svd {
  Eigen::MatrixXd U;
  Eigen::VectorXd sigma;
  Eigen::MatrixXd V;
};

// Randomized top-k SVD with oversampling 10 and 2 power iterations;
// deterministic (fixed internal stream).
Svd randomized_svd(const Eigen::MatrixXd& A, int k) {
  const int m = static_cast<int>(A.rows());
  const int n = static_cast<int>(A.cols());
  const int p = std::min(n, k + 10);
  Rng rng(derive_seed(0x5fd4u, {static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(n)}));
  Eigen::MatrixXd omega(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) omega(i, j) = rng.next_normal();
  Eigen::MatrixXd Y = A * omega;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Y);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(m, p);
  for (int it = 0; it < 2; ++it) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr_z(A.transpose() * Q);
    Eigen::MatrixXd Z = qr_z.householderQ() * Eigen::MatrixXd::Identity(n, p);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr_y(A * Z);
    Q = qr_y.householderQ() * Eigen::MatrixXd::Identity(m, p);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> small(Q.transpose() * A,
                                          Eigen::ComputeThinU | Eigen::ComputeThinV);
  Svd out;
  out.U = (Q * small.matrixU()).leftCols(k);
  out.sigma = small.singularValues().head(k);
  out.V = small.matrixV().leftCols(k);
  return out;
}

Svd top_svd(const Eigen::MatrixXd& A, int k) {
  if (std::min(A.rows(), A.cols()) > kDenseSvdLimit) return randomized_svd(A, k);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Svd out;
  out.U = svd.matrixU().leftCols(k);
  out.sigma = svd.singularValues().head(k);
  out.V = svd.matrixV().leftCols(k);
  return out;
}

// Fixes the sign of each singular-vector pair so the largest-magnitude
// entry of the left vector is positive.
void fix_signs(Eigen::MatrixXd& U, Eigen::MatrixXd& V) {
  for (int k = 0; k < U.cols(); ++k) {
    Eigen::Index arg;
    U.col(k).cwiseAbs().maxCoeff(&arg);
    if (U(arg, k) < 0.0) {
      U.col(k) = -U.col(k);
      V.col(k) = -V.col(k);
    }
  }
}

// Objective, gradient and Hessian of one MNL row's averaged nll plus a
// ridge term. Observations must all reference the given row.
struct RowProblem {
  const std::vector<const Observation*>& obs;
  double ridge;
  int n;

  double value(const Eigen::VectorXd& theta) const {
    double total = 0.0;
    for (const Observation* o : obs) {
      double shift = 0.0;
      for (int j : o->assortment) shift = std::max(shift, theta[j - 1]);
      double denom = std::exp(-shift);
      for (int j : o->assortment) denom += std::exp(theta[j - 1] - shift);
      total += shift + std::log(denom);
      if (o->choice != 0) total -= theta[o->choice - 1];
    }
    return total / obs.size() + 0.5 * ridge * theta.squaredNorm();
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd g = ridge * theta;
    const double inv_n = 1.0 / obs.size();
    for (const Observation* o : obs) {
      ChoiceProbabilities p = choice_probabilities(theta, o->assortment);
      for (std::size_t k = 0; k < o->assortment.size(); ++k)
        g[o->assortment[k] - 1] += inv_n * p.items[static_cast<Eigen::Index>(k)];
      if (o->choice != 0) g[o->choice - 1] -= inv_n;
    }
    return g;
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& theta) const {
    Eigen::MatrixXd h = ridge * Eigen::MatrixXd::Identity(n, n);
    const double inv_n = 1.0 / obs.size();
    for (const Observation* o : obs) {
      ChoiceProbabilities p = choice_probabilities(theta, o->assortment);
      const auto& s = o->assortment;
      for (std::size_t a = 0; a < s.size(); ++a) {
        double pa = p.items[static_cast<Eigen::Index>(a)];
        h(s[a] - 1, s[a] - 1) += inv_n * pa;
        for (std::size_t b = 0; b < s.size(); ++b)
          h(s[a] - 1, s[b] - 1) -= inv_n * pa * p.items[static_cast<Eigen::Index>(b)];
      }
    }
    return h;
  }
};

// Damped Newton (gradient descent for wide rows) on one MNL row.
// Returns false if the iteration cap was hit before convergence.
bool solve_row(const RowProblem& problem, Eigen::VectorXd& theta) {
  const bool use_newton = problem.n <= 200;
  const int max_iters = use_newton ? 100 : 2000;
  double f = problem.value(theta);
  for (int iter = 0; iter < max_iters; ++iter) {
    Eigen::VectorXd g = problem.gradient(theta);
    if (g.norm() <= 1e-9 * std::max(1.0, theta.norm())) return true;
    Eigen::VectorXd direction;
    if (use_newton) {
      direction = -problem.hessian(theta).ldlt().solve(g);
      if (!direction.allFinite() || g.dot(direction) >= 0.0) direction = -g;
    } else {
      direction = -g;
    }
    double step = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      Eigen::VectorXd trial = theta + step * direction;
      double f_trial = problem.value(trial);
      if (f_trial < f) {
        theta = std::move(trial);
        f = f_trial;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) return true;  // stationary up to line-search resolution
  }
  return false;
}

}  // namespace

void FgdConfig::validate(int m, int n) const {
  if (r_tilde < 1 || r_tilde > std::min(m, n))
    throw InvalidInput("FgdConfig: need 1 <= r_tilde <= min(m, n)");
  if (lambda < 0.0) throw InvalidInput("FgdConfig: lambda must be >= 0");
  if (beta_dec <= 0.0 || beta_dec >= 1.0) throw InvalidInput("FgdConfig: beta_dec must be in (0,1)");
  if (tol <= 0.0) throw InvalidInput("FgdConfig: tol must be > 0");
  if (max_outer_iters < 1 || max_linesearch_iters < 1)
    throw InvalidInput("FgdConfig: iteration caps must be >= 1");
}

double factored_objective(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V, double lambda,
                          const ObservationLog& log) {
  if (U.cols() != V.cols()) throw InvalidInput("factored_objective: rank mismatch");
  if (log.empty()) throw InvalidInput("factored_objective: log must be nonempty");
  double total = 0.0;
  for (const Observation& obs : log.observations()) {
    if (obs.type_id > U.rows()) throw InvalidInput("factored_objective: type id out of range");
    const auto u = U.row(obs.type_id - 1);
    double shift = 0.0;
    std::vector<double> dots(obs.assortment.size());
    for (std::size_t k = 0; k < obs.assortment.size(); ++k) {
      int j = obs.assortment[k];
      if (j > V.rows()) throw InvalidInput("factored_objective: item id out of range");
      dots[k] = u.dot(V.row(j - 1));
      shift = std::max(shift, dots[k]);
    }
    double denom = std::exp(-shift);
    for (double d : dots) denom += std::exp(d - shift);
    total += shift + std::log(denom);
    if (obs.choice != 0) total -= u.dot(V.row(obs.choice - 1));
  }
  return total / log.size() + 0.5 * lambda * (U.squaredNorm() + V.squaredNorm());
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> factored_gradients(const Eigen::MatrixXd& U,
                                                               const Eigen::MatrixXd& V,
                                                               double lambda,
                                                               const ObservationLog& log) {
  if (U.cols() != V.cols()) throw InvalidInput("factored_gradients: rank mismatch");
  if (log.empty()) throw InvalidInput("factored_gradients: log must be nonempty");
  Eigen::MatrixXd gu = lambda * U;
  Eigen::MatrixXd gv = lambda * V;
  const double inv_n = 1.0 / log.size();
  for (const Observation& obs : log.observations()) {
    const int i = obs.type_id - 1;
    const auto u = U.row(i);
    // MNL probabilities from the factored inner products.
    double shift = 0.0;
    std::vector<double> dots(obs.assortment.size());
    for (std::size_t k = 0; k < obs.assortment.size(); ++k) {
      dots[k] = u.dot(V.row(obs.assortment[k] - 1));
      shift = std::max(shift, dots[k]);
    }
    double denom = std::exp(-shift);
    for (double& d : dots) {
      d = std::exp(d - shift);
      denom += d;
    }
    for (std::size_t k = 0; k < obs.assortment.size(); ++k) {
      const int j = obs.assortment[k] - 1;
      const double p = dots[k] / denom;
      gu.row(i) += inv_n * p * V.row(j);
      gv.row(j) += inv_n * p * u;
    }
    if (obs.choice != 0) {
      const int j = obs.choice - 1;
      gu.row(i) -= inv_n * V.row(j);
      gv.row(j) -= inv_n * u;
    }
  }
  return {std::move(gu), std::move(gv)};
}

FactorPair fgd_initialize(const ObservationLog& log, int m, int n, double lambda, int r_tilde) {
  if (log.empty()) throw InvalidInput("fgd_initialize: log must be nonempty");
  Eigen::MatrixXd grad_zero = nll_gradient(Eigen::MatrixXd::Zero(m, n), log);

  // gamma probes the gradient Lipschitz scale at the first coordinate.
  Eigen::MatrixXd probe = Eigen::MatrixXd::Zero(m, n);
  probe(0, 0) = 1.0;
  Eigen::MatrixXd grad_probe = nll_gradient(probe, log);
  grad_probe(0, 0) += lambda;
  double gamma = (grad_zero - grad_probe).norm();

  FactorPair init;
  if (gamma == 0.0) {
    gamma = 1.0;
    init.degenerate_init = true;
  }

  Svd svd = top_svd(-grad_zero, r_tilde);
  fix_signs(svd.U, svd.V);
  Eigen::VectorXd scale = (svd.sigma.array() / gamma).sqrt();
  init.U = svd.U * scale.asDiagonal();
  init.V = svd.V * scale.asDiagonal();
  init.objective = factored_objective(init.U, init.V, lambda, log);
  return init;
}

Estimate fgd_solve(const ObservationLog& log, int m, int n, const FgdConfig& config,
                   const std::optional<FactorPair>& warm_start) {
  config.validate(m, n);
  if (log.empty()) throw InvalidInput("fgd_solve: log must be nonempty");
  const auto t0 = std::chrono::steady_clock::now();

  FactorPair iterate = warm_start ? *warm_start : fgd_initialize(log, m, n, config.lambda,
                                                                 config.r_tilde);
  if (iterate.U.rows() != m || iterate.V.rows() != n || iterate.U.cols() != config.r_tilde)
    throw InvalidInput("fgd_solve: warm start has wrong shape");

  Estimate out;
  out.provenance = Provenance::kFgd;
  double f_next = factored_objective(iterate.U, iterate.V, config.lambda, log);
  for (int iter = 0; iter < config.max_outer_iters; ++iter) {
    const double f = f_next;
    auto [gu, gv] = factored_gradients(iterate.U, iterate.V, config.lambda, log);
    double eta = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < config.max_linesearch_iters; ++ls) {
      Eigen::MatrixXd u_trial = iterate.U - eta * gu;
      Eigen::MatrixXd v_trial = iterate.V - eta * gv;
      double f_trial = factored_objective(u_trial, v_trial, config.lambda, log);
      if (f_trial <= f) {
        iterate.U = std::move(u_trial);
        iterate.V = std::move(v_trial);
        f_next = f_trial;
        accepted = true;
        break;
      }
      eta *= config.beta_dec;
    }
    ++out.iterations;
    if (!accepted) {
      out.stationary = true;
      break;
    }
    if ((f - f_next) / f_next <= config.tol) break;
  }

  iterate.objective = f_next;
  out.theta_hat = iterate.U * iterate.V.transpose();
  out.mu_hat = estimate_mu(log, m);
  out.final_objective = f_next;
  out.factors = std::move(iterate);
  out.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

Estimate per_type_mle(const ObservationLog& log, int m, int n, double ridge) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::vector<const Observation*>> by_type(m);
  for (const Observation& obs : log.observations()) {
    validate_observation(obs, m, n);
    by_type[obs.type_id - 1].push_back(&obs);
  }

  Estimate out;
  out.provenance = Provenance::kPerTypeMle;
  out.theta_hat = Eigen::MatrixXd::Zero(m, n);
  for (int i = 0; i < m; ++i) {
    if (by_type[i].empty()) continue;
    RowProblem problem{by_type[i], ridge, n};
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
    if (!solve_row(problem, theta)) out.nonconverged_rows.push_back(i + 1);
    out.theta_hat.row(i) = theta;
    out.final_objective += problem.value(theta);
  }
  if (!log.empty()) out.mu_hat = estimate_mu(log, m);
  out.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

Eigen::VectorXd pooled_mle(const ObservationLog& log, int n, double ridge) {
  if (log.empty()) return Eigen::VectorXd::Zero(n);
  ObservationLog pooled;
  for (Observation obs : log.observations()) {
    obs.type_id = 1;
    pooled.append(std::move(obs));
  }
  return per_type_mle(pooled, 1, n, ridge).theta_hat.row(0);
}

Eigen::VectorXd estimate_mu(const ObservationLog& log, int m) {
  if (log.empty()) throw InvalidInput("estimate_mu: log must be nonempty");
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
  for (const Observation& obs : log.observations()) {
    if (obs.type_id < 1 || obs.type_id > m) throw InvalidInput("estimate_mu: type id out of range");
    mu[obs.type_id - 1] += 1.0;
  }
  return mu / log.size();
}

double rmse(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& theta_star) {
  if (theta.rows() != theta_star.rows() || theta.cols() != theta_star.cols())
    throw InvalidInput("rmse: shape mismatch");
  return (theta - theta_star).norm() / std::sqrt(static_cast<double>(theta.size()));
}

double tail_singular_sum(const Eigen::MatrixXd& theta, int r) {
  if (r < 0) throw InvalidInput("tail_singular_sum: r must be >= 0");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(theta);
  const Eigen::VectorXd& sigma = svd.singularValues();
  double total = 0.0;
  for (int k = r; k < sigma.size(); ++k) total += sigma[k];
  return total;
}

void write_estimate_csv(std::ostream& out, const Eigen::MatrixXd& theta) {
  out << "type,item,value\n";
  out.precision(17);
  for (int i = 0; i < theta.rows(); ++i)
    for (int j = 0; j < theta.cols(); ++j)
      out << (i + 1) << ',' << (j + 1) << ',' << theta(i, j) << '\n';
}

Eigen::MatrixXd read_estimate_csv(std::istream& in, int m, int n) {
  std::string line;
  if (!std::getline(in, line) || line != "type,item,value")
    throw InvalidInput("estimate CSV: bad or missing header");
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(m, n);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    int i, j;
    double v;
    char comma;
    if (!(row >> i >> comma >> j >> comma >> v)) throw InvalidInput("estimate CSV: parse error");
    if (i < 1 || i > m || j < 1 || j > n) throw InvalidInput("estimate CSV: index out of range");
    theta(i - 1, j - 1) = v;
  }
  return theta;
}

void write_factors_text(std::ostream& out, const FactorPair& factors, double lambda) {
  out.precision(17);
  out << factors.U.rows() << ' ' << factors.V.rows() << ' ' << factors.U.cols() << ' ' << lambda
      << '\n';
  for (int i = 0; i < factors.U.rows(); ++i) {
    for (int k = 0; k < factors.U.cols(); ++k) out << (k ? " " : "") << factors.U(i, k);
    out << '\n';
  }
  for (int j = 0; j < factors.V.rows(); ++j) {
    for (int k = 0; k < factors.V.cols(); ++k) out << (k ? " " : "") << factors.V(j, k);
    out << '\n';
  }
}

std::pair<FactorPair, double> read_factors_text(std::istream& in) {
  int m, n, r;
  double lambda;
  if (!(in >> m >> n >> r >> lambda)) throw InvalidInput("factors text: bad header");
  FactorPair factors;
  factors.U.resize(m, r);
  factors.V.resize(n, r);
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < r; ++k)
      if (!(in >> factors.U(i, k))) throw InvalidInput("factors text: truncated U block");
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < r; ++k)
      if (!(in >> factors.V(j, k))) throw InvalidInput("factors text: truncated V block");
  return {std::move(factors), lambda};
}

}  // namespace assortmax
