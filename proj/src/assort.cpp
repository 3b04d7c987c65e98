#include "assortmax/assort.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "assortmax/choice.hpp"

namespace assortmax {

namespace {

void check_inputs(const Eigen::VectorXd& w, const Eigen::VectorXd& theta_row, int K) {
  const int n = static_cast<int>(w.size());
  if (theta_row.size() != n) throw InvalidInput("assortment: w and theta must have equal length");
  if (n == 0) throw InvalidInput("assortment: empty item universe");
  if (K < 1 || K > n) throw InvalidInput("assortment: need 1 <= K <= n");
  if (!w.allFinite() || (w.array() < 0.0).any())
    throw InvalidInput("assortment: revenues must be finite and >= 0");
  if (!theta_row.allFinite()) throw InvalidInput("assortment: theta must be finite");
}

// Top-K items by score e^{theta_j}(w_j - z) restricted to positive
// scores; equal scores prefer the lower item id.
Assortment best_set_at_level(const Eigen::VectorXd& w, const Eigen::VectorXd& theta_row, int K,
                             double z) {
  const int n = static_cast<int>(w.size());
  std::vector<std::pair<double, int>> scored;
  scored.reserve(n);
  for (int j = 0; j < n; ++j) {
    double score = std::exp(theta_row[j]) * (w[j] - z);
    if (score > 0.0) scored.emplace_back(score, j + 1);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  if (static_cast<int>(scored.size()) > K) scored.resize(K);
  Assortment s;
  s.reserve(scored.size());
  for (const auto& [score, id] : scored) s.push_back(id);
  std::sort(s.begin(), s.end());
  return s;
}

bool lex_less(const Assortment& a, const Assortment& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

// Enumerates every subset of size <= K and reports F for each.
template <typename Visitor>
void enumerate_subsets(const Eigen::VectorXd& w, const Eigen::VectorXd& theta_row, int K,
                       Visitor&& visit) {
  const int n = static_cast<int>(w.size());
  if (n > 20) throw InvalidInput("assortment enumeration: n must be <= 20");
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) > K) continue;
    Assortment s;
    for (int j = 0; j < n; ++j)
      if (mask & (1u << j)) s.push_back(j + 1);
    visit(s, expected_revenue(s, w, theta_row));
  }
}

}  // namespace

double expected_revenue(const Assortment& s, const Eigen::VectorXd& w,
                        const Eigen::VectorXd& theta_row) {
  if (s.empty()) return 0.0;
  if (w.size() != theta_row.size()) throw InvalidInput("expected_revenue: size mismatch");
  validate_assortment(s, static_cast<int>(w.size()));
  ChoiceProbabilities p = choice_probabilities(theta_row, s);
  double value = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k)
    value += p.items[static_cast<Eigen::Index>(k)] * w[s[k] - 1];
  return value;
}

AssortmentSolution optimal_assortment(const Eigen::VectorXd& w, const Eigen::VectorXd& theta_row,
                                      int K) {
  check_inputs(w, theta_row, K);
  const double w_max = w.maxCoeff();
  if (w_max == 0.0) {
    AssortmentSolution degenerate;
    degenerate.degenerate = true;
    return degenerate;
  }

  AssortmentSolution best;
  auto consider = [&](const Assortment& s) {
    double f = expected_revenue(s, w, theta_row);
    if (f > best.value || (f == best.value && !s.empty() && lex_less(s, best.set))) {
      best.set = s;
      best.value = f;
    }
  };

  double lo = 0.0, hi = w_max;
  const double tol = 1e-10 * std::max(1.0, w_max);
  consider(best_set_at_level(w, theta_row, K, 0.0));
  while (hi - lo > tol) {
    double mid = 0.5 * (lo + hi);
    Assortment s = best_set_at_level(w, theta_row, K, mid);
    double slack = 0.0;
    for (int j : s) slack += std::exp(theta_row[j - 1]) * (w[j - 1] - mid);
    if (slack >= mid) {
      consider(s);
      lo = mid;
    } else {
      hi = mid;
    }
  }
  consider(best_set_at_level(w, theta_row, K, lo));
  return best;
}

AssortmentSolution brute_force_assortment(const Eigen::VectorXd& w,
                                          const Eigen::VectorXd& theta_row, int K) {
  check_inputs(w, theta_row, K);
  AssortmentSolution best;
  bool first = true;
  enumerate_subsets(w, theta_row, K, [&](const Assortment& s, double f) {
    if (first || f > best.value || (f == best.value && lex_less(s, best.set))) {
      best.set = s;
      best.value = f;
      first = false;
    }
  });
  best.exact = true;
  return best;
}

double optimality_gap(const Eigen::VectorXd& w, const Eigen::VectorXd& theta_row, int K) {
  check_inputs(w, theta_row, K);
  std::vector<double> values;
  enumerate_subsets(w, theta_row, K,
                    [&](const Assortment&, double f) { values.push_back(f); });
  double best = *std::max_element(values.begin(), values.end());
  double runner_up = -kGapAllOptimal;
  for (double f : values)
    if (f < best - 1e-12) runner_up = std::max(runner_up, f);
  if (runner_up == -kGapAllOptimal) return kGapAllOptimal;
  return best - runner_up;
}

double population_revenue(const Assortment& s, const Eigen::MatrixXd& W,
                          const Eigen::MatrixXd& theta, const Eigen::VectorXd& mu) {
  const int m = static_cast<int>(W.rows());
  if (theta.rows() != m || theta.cols() != W.cols() || mu.size() != m)
    throw InvalidInput("population_revenue: shape mismatch");
  double total = 0.0;
  for (int i = 0; i < m; ++i)
    total += mu[i] * expected_revenue(s, W.row(i), theta.row(i));
  return total;
}

AssortmentSolution plan_assortment(const Eigen::MatrixXd& W, const Eigen::MatrixXd& theta,
                                   const Eigen::VectorXd& mu, int K, bool force_heuristic) {
  const int m = static_cast<int>(W.rows());
  const int n = static_cast<int>(W.cols());
  if (theta.rows() != m || theta.cols() != n || mu.size() != m)
    throw InvalidInput("plan_assortment: shape mismatch");
  if (K < 1 || K > n) throw InvalidInput("plan_assortment: need 1 <= K <= n");

  if (n <= 12 && !force_heuristic) {
    AssortmentSolution best;
    bool first = true;
    // Reuse the subset walk; the per-set value is the population one.
    enumerate_subsets(Eigen::VectorXd::Zero(n).eval(), Eigen::VectorXd::Zero(n).eval(), K,
                      [&](const Assortment& s, double) {
                        double f = population_revenue(s, W, theta, mu);
                        if (first || f > best.value || (f == best.value && lex_less(s, best.set))) {
                          best.set = s;
                          best.value = f;
                          first = false;
                        }
                      });
    best.exact = true;
    return best;
  }

  // Revenue-ordered heuristic: singleton population scores, descending.
  std::vector<std::pair<double, int>> scored(n);
  for (int j = 0; j < n; ++j) {
    double score = 0.0;
    for (int i = 0; i < m; ++i) {
      double a = std::exp(theta(i, j));
      score += mu[i] * a * W(i, j) / (1.0 + a);
    }
    scored[j] = {score, j + 1};
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  AssortmentSolution best;
  auto consider = [&](const Assortment& s) {
    double f = population_revenue(s, W, theta, mu);
    if (f > best.value || (f == best.value && !s.empty() && lex_less(s, best.set))) {
      best.set = s;
      best.value = f;
    }
  };
  Assortment prefix;
  for (int k = 0; k < K; ++k) {
    prefix.push_back(scored[k].second);
    Assortment sorted = prefix;
    std::sort(sorted.begin(), sorted.end());
    consider(sorted);
  }
  for (int i = 0; i < m; ++i) {
    AssortmentSolution per_type = optimal_assortment(W.row(i), theta.row(i), K);
    if (!per_type.set.empty()) consider(per_type.set);
  }
  return best;
}

}  // namespace assortmax
