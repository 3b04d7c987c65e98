#include "assortmax/choice.hpp"

#include <algorithm>
#include <cmath>

namespace assortmax {

ChoiceProbabilities choice_probabilities(const Eigen::VectorXd& theta_row, const Assortment& s) {
  if (s.empty()) throw InvalidInput("choice_probabilities: assortment must be nonempty");
  validate_assortment(s, static_cast<int>(theta_row.size()));

  // The no-purchase weight is fixed at 1, so a plain softmax shift would
  // change the distribution. Instead subtract c = max(0, max theta) from
  // every exponent and give the outside option the weight e^{-c}.
  double shift = 0.0;
  for (int j : s) {
    double v = theta_row[j - 1];
    if (!std::isfinite(v)) throw InvalidInput("choice_probabilities: non-finite theta entry");
    shift = std::max(shift, v);
  }

  ChoiceProbabilities p;
  p.items.resize(static_cast<Eigen::Index>(s.size()));
  double denom = std::exp(-shift);
  for (std::size_t k = 0; k < s.size(); ++k) {
    double w = std::exp(theta_row[s[k] - 1] - shift);
    p.items[static_cast<Eigen::Index>(k)] = w;
    denom += w;
  }
  p.no_purchase = std::exp(-shift) / denom;
  p.items /= denom;
  return p;
}

int sample_type(const Eigen::VectorXd& mu, Rng& rng) {
  double u = rng.next_double();
  double acc = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    acc += mu[i];
    if (u < acc) return i + 1;
  }
  return static_cast<int>(mu.size());  // roundoff at the top end
}

int sample_choice(const Eigen::VectorXd& theta_row, const Assortment& s, Rng& rng) {
  ChoiceProbabilities p = choice_probabilities(theta_row, s);
  double v = rng.next_double();
  double cum = p.no_purchase;
  if (v < cum) return 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    cum += p.items[static_cast<Eigen::Index>(k)];
    if (v < cum) return s[k];
  }
  return s.back();
}

Interaction sample_interaction(const Instance& instance, const Assortment& s, Rng& rng) {
  instance.validate();
  validate_assortment(s, instance.n);
  if (s.empty()) throw InvalidInput("sample_interaction: assortment must be nonempty");

  Interaction out;
  out.type_id = sample_type(instance.mu_star, rng);
  out.choice = sample_choice(instance.theta_star.row(out.type_id - 1), s, rng);
  out.revenue = out.choice == 0 ? 0.0 : instance.W(out.type_id - 1, out.choice - 1);
  return out;
}

Assortment sample_uniform_assortment(int n, int K, Rng& rng) {
  if (K < 1 || K > n) throw InvalidInput("sample_uniform_assortment: need 1 <= K <= n");
  std::vector<int> ids(n);
  for (int j = 0; j < n; ++j) ids[j] = j + 1;
  for (int k = 0; k < K; ++k) {
    int pick = k + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n - k)));
    std::swap(ids[k], ids[pick]);
  }
  Assortment s(ids.begin(), ids.begin() + K);
  std::sort(s.begin(), s.end());
  return s;
}

double nll(const Eigen::MatrixXd& theta, const ObservationLog& log) {
  if (log.empty()) throw InvalidInput("nll: log must be nonempty");
  const int m = static_cast<int>(theta.rows());
  const int n = static_cast<int>(theta.cols());
  double total = 0.0;
  for (const Observation& obs : log.observations()) {
    validate_observation(obs, m, n);
    const auto row = theta.row(obs.type_id - 1);
    double shift = 0.0;
    for (int j : obs.assortment) shift = std::max(shift, row[j - 1]);
    double denom = std::exp(-shift);
    for (int j : obs.assortment) denom += std::exp(row[j - 1] - shift);
    total += shift + std::log(denom);
    if (obs.choice != 0) total -= row[obs.choice - 1];
  }
  return total / log.size();
}

Eigen::MatrixXd nll_gradient(const Eigen::MatrixXd& theta, const ObservationLog& log) {
  if (log.empty()) throw InvalidInput("nll_gradient: log must be nonempty");
  const int m = static_cast<int>(theta.rows());
  const int n = static_cast<int>(theta.cols());
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(m, n);
  const double inv_n = 1.0 / log.size();
  for (const Observation& obs : log.observations()) {
    validate_observation(obs, m, n);
    ChoiceProbabilities p = choice_probabilities(theta.row(obs.type_id - 1), obs.assortment);
    const int i = obs.type_id - 1;
    for (std::size_t k = 0; k < obs.assortment.size(); ++k)
      grad(i, obs.assortment[k] - 1) += inv_n * p.items[static_cast<Eigen::Index>(k)];
    if (obs.choice != 0) grad(i, obs.choice - 1) -= inv_n;
  }
  return grad;
}

}  // namespace assortmax
