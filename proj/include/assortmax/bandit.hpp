#pragma once

#include <memory>
#include <optional>
#include <string>

#include "assortmax/assort.hpp"
#include "assortmax/estimator.hpp"
#include "assortmax/types.hpp"

namespace assortmax {

enum class PolicyKind {
  kOracle,
  kNucNorm,
  kNucNormPlan,
  kStructureIgnorant,
  kContextIgnorant,
};

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& name);

enum class LambdaDimRule { kMPlusN, kMaxMN };

// lambda = (1/8) sqrt(K d log d / (m n N)) with d = m+n (or max(m,n)).
double practical_lambda(int m, int n, int K, int num_obs, LambdaDimRule rule = LambdaDimRule::kMPlusN);

// C = 4194304 K^6 rho^3 omega^2 alpha^2 exp(16 alpha) / delta^2.
double theoretical_C(int K, double rho, double omega, double alpha, double delta);

// lambda = 8 sqrt(rho K / (C r m n)), the companion rule to theoretical_C.
double theoretical_lambda(double C, double rho, int K, int r, int m, int n);

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kOracle;
  double C = 1.0;      // explore-budget constant in |O| <= C r (m+n) log t
  int r = 1;           // structural rank used in the threshold
  FgdConfig fgd;       // lambda is recomputed from |O| at every refit
  double refit_growth = 1.2;
  bool faithful = false;  // refit on every exploration round
  double baseline_explore_constant = 1.0;
  LambdaDimRule lambda_dim = LambdaDimRule::kMPlusN;
  double mle_ridge = 1e-8;

  void validate() const;
};

// A stateful policy instance for one simulated run. Single-threaded.
class Policy {
 public:
  explicit Policy(const Instance& instance) : instance_(instance) {}
  virtual ~Policy() = default;

  // Chooses S_t for round t. type_id is the arrival observed this round;
  // the plan policy must ignore it. rng is the policy's own stream.
  virtual Assortment choose(int t, int type_id, Rng& rng) = 0;

  // Feeds back the realized choice for the assortment just offered.
  virtual void record(int t, int type_id, int choice, const Assortment& s) = 0;

  bool last_explored() const { return last_explored_; }
  long explore_count() const { return explore_count_; }
  long refit_count() const { return refit_count_; }
  virtual const ObservationLog& log() const = 0;

  // Checkpoint support: full mutable state as a JSON text blob and back.
  virtual std::string save_state() const = 0;
  virtual void load_state(const std::string& state) = 0;

 protected:
  const Instance& instance_;
  bool last_explored_ = false;
  long explore_count_ = 0;
  long refit_count_ = 0;
};

std::unique_ptr<Policy> make_policy(const Instance& instance, const PolicyConfig& config);

// Per-type oracle values and actions under theta_star, cached.
class RegretOracle {
 public:
  explicit RegretOracle(const Instance& instance);
  const Assortment& action(int type_id) const;
  double optimal_value(int type_id) const;
  // Expected shortfall of offering s to type i; >= 0.
  double instantaneous_regret(int type_id, const Assortment& s) const;

 private:
  const Instance& instance_;
  std::vector<AssortmentSolution> per_type_;
};

}  // namespace assortmax
