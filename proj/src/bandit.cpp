#include "assortmax/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "assortmax/choice.hpp"

namespace assortmax {

using nlohmann::json;

namespace {

json matrix_to_json(const Eigen::MatrixXd& a) {
  json rows = json::array();
  for (int i = 0; i < a.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
  const int m = static_cast<int>(rows.size());
  const int n = m == 0 ? 0 : static_cast<int>(rows[0].size());
  Eigen::MatrixXd a(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rows[i][j].get<double>();
  return a;
}

std::string log_to_string(const ObservationLog& log) {
  std::ostringstream out;
  log.write_csv(out);
  return out.str();
}

ObservationLog log_from_string(const std::string& text) {
  std::istringstream in(text);
  return ObservationLog::read_csv(in);
}

// Exploit action for one type: the optimal assortment, or the
// highest-attraction singleton when every revenue in the row is zero
// (regret is zero there regardless).
Assortment exploit_action(const Eigen::VectorXd& w, const Eigen::VectorXd& theta_row, int K) {
  AssortmentSolution sol = optimal_assortment(w, theta_row, K);
  if (!sol.degenerate) return sol.set;
  Eigen::Index arg;
  theta_row.maxCoeff(&arg);
  return {static_cast<int>(arg) + 1};
}

// Shared explore/exploit machinery for the nuc-norm policies.
class NucNormBase : public Policy {
 public:
  NucNormBase(const Instance& instance, PolicyConfig config)
      : Policy(instance), config_(std::move(config)) {}

  void record(int t, int type_id, int choice, const Assortment& s) override {
    if (!last_explored_) return;
    Observation obs;
    obs.t = t;
    obs.type_id = type_id;
    obs.choice = choice;
    obs.assortment = s;
    log_.append(std::move(obs));
    if (config_.faithful ||
        log_.size() >= config_.refit_growth * std::max(1, last_refit_size_))
      refit();
  }

  const ObservationLog& log() const override { return log_; }

  std::string save_state() const override {
    json state;
    state["log"] = log_to_string(log_);
    state["last_refit_size"] = last_refit_size_;
    state["explore_count"] = explore_count_;
    state["refit_count"] = refit_count_;
    if (factors_) {
      state["U"] = matrix_to_json(factors_->U);
      state["V"] = matrix_to_json(factors_->V);
    }
    return state.dump();
  }

  void load_state(const std::string& text) override {
    json state = json::parse(text);
    log_ = log_from_string(state.at("log").get<std::string>());
    last_refit_size_ = state.at("last_refit_size").get<int>();
    explore_count_ = state.at("explore_count").get<long>();
    refit_count_ = state.at("refit_count").get<long>();
    factors_.reset();
    theta_hat_.resize(0, 0);
    if (state.contains("U")) {
      FactorPair factors;
      factors.U = matrix_from_json(state.at("U"));
      factors.V = matrix_from_json(state.at("V"));
      theta_hat_ = factors.U * factors.V.transpose();
      factors_ = std::move(factors);
    }
    on_estimate_changed();
  }

 protected:
  bool should_explore(int t) const {
    return log_.size() <= config_.C * config_.r * (instance_.m + instance_.n) * std::log(t);
  }

  bool has_estimate() const { return theta_hat_.size() > 0; }

  void ensure_fresh_estimate() {
    if (log_.size() > last_refit_size_) refit();
  }

  void refit() {
    FgdConfig fgd = config_.fgd;
    fgd.lambda =
        practical_lambda(instance_.m, instance_.n, instance_.K, log_.size(), config_.lambda_dim);
    std::optional<FactorPair> warm;
    if (factors_ && factors_->U.cols() == fgd.r_tilde) warm = factors_;
    Estimate est = fgd_solve(log_, instance_.m, instance_.n, fgd, warm);
    theta_hat_ = std::move(est.theta_hat);
    factors_ = std::move(est.factors);
    last_refit_size_ = log_.size();
    ++refit_count_;
    on_estimate_changed();
  }

  virtual void on_estimate_changed() = 0;

  PolicyConfig config_;
  ObservationLog log_;
  Eigen::MatrixXd theta_hat_;
  std::optional<FactorPair> factors_;
  int last_refit_size_ = 0;
};

class NucNormPolicy final : public NucNormBase {
 public:
  using NucNormBase::NucNormBase;

  Assortment choose(int t, int type_id, Rng& rng) override {
    if (should_explore(t)) {
      last_explored_ = true;
      ++explore_count_;
      return sample_uniform_assortment(instance_.n, instance_.K, rng);
    }
    ensure_fresh_estimate();
    // Defensive fallback: no data at all (cannot occur, t = 1 explores).
    if (!has_estimate()) {
      last_explored_ = true;
      ++explore_count_;
      return sample_uniform_assortment(instance_.n, instance_.K, rng);
    }
    last_explored_ = false;
    auto& cached = cache_[type_id - 1];
    if (!cached)
      cached = exploit_action(instance_.W.row(type_id - 1), theta_hat_.row(type_id - 1),
                              instance_.K);
    return *cached;
  }

 private:
  void on_estimate_changed() override {
    cache_.assign(static_cast<std::size_t>(instance_.m), std::nullopt);
  }

  std::vector<std::optional<Assortment>> cache_;
};

class NucNormPlanPolicy final : public NucNormBase {
 public:
  using NucNormBase::NucNormBase;

  Assortment choose(int t, int /*type_id*/, Rng& rng) override {
    if (should_explore(t)) {
      last_explored_ = true;
      ++explore_count_;
      return sample_uniform_assortment(instance_.n, instance_.K, rng);
    }
    ensure_fresh_estimate();
    if (!has_estimate()) {
      last_explored_ = true;
      ++explore_count_;
      return sample_uniform_assortment(instance_.n, instance_.K, rng);
    }
    last_explored_ = false;
    if (!plan_) {
      AssortmentSolution sol =
          plan_assortment(instance_.W, theta_hat_, estimate_mu(log_, instance_.m), instance_.K);
      if (sol.set.empty()) {
        // All revenues zero under the estimate; any singleton is optimal.
        sol.set = {1};
      }
      plan_ = std::move(sol.set);
    }
    return *plan_;
  }

 private:
  void on_estimate_changed() override { plan_.reset(); }

  std::optional<Assortment> plan_;
};

class StructureIgnorantPolicy final : public Policy {
 public:
  StructureIgnorantPolicy(const Instance& instance, PolicyConfig config)
      : Policy(instance), config_(std::move(config)) {
    arrivals_.assign(instance.m, 0);
    own_.resize(instance.m);
    theta_rows_.assign(instance.m, Eigen::VectorXd::Zero(instance.n));
    fitted_size_.assign(instance.m, -1);
    cache_.assign(instance.m, std::nullopt);
  }

  Assortment choose(int /*t*/, int type_id, Rng& rng) override {
    const int i = type_id - 1;
    ++arrivals_[i];
    const double threshold =
        config_.baseline_explore_constant * instance_.n * std::log(arrivals_[i]);
    if (own_[i].size() <= threshold) {
      last_explored_ = true;
      ++explore_count_;
      return sample_uniform_assortment(instance_.n, instance_.K, rng);
    }
    last_explored_ = false;
    if (fitted_size_[i] != own_[i].size()) {
      theta_rows_[i] = pooled_mle(own_[i], instance_.n, config_.mle_ridge);
      fitted_size_[i] = own_[i].size();
      cache_[i].reset();
      ++refit_count_;
    }
    if (!cache_[i])
      cache_[i] = exploit_action(instance_.W.row(i), theta_rows_[i], instance_.K);
    return *cache_[i];
  }

  void record(int t, int type_id, int choice, const Assortment& s) override {
    if (!last_explored_) return;
    Observation obs;
    obs.t = t;
    obs.type_id = type_id;
    obs.choice = choice;
    obs.assortment = s;
    all_.append(obs);
    own_[type_id - 1].append(std::move(obs));
  }

  const ObservationLog& log() const override { return all_; }

  std::string save_state() const override {
    json state;
    state["log"] = log_to_string(all_);
    state["arrivals"] = arrivals_;
    state["explore_count"] = explore_count_;
    state["refit_count"] = refit_count_;
    return state.dump();
  }

  void load_state(const std::string& text) override {
    json state = json::parse(text);
    all_ = ObservationLog();
    own_.assign(instance_.m, ObservationLog());
    ObservationLog loaded = log_from_string(state.at("log").get<std::string>());
    for (const Observation& obs : loaded.observations()) {
      all_.append(obs);
      own_[obs.type_id - 1].append(obs);
    }
    arrivals_ = state.at("arrivals").get<std::vector<long>>();
    explore_count_ = state.at("explore_count").get<long>();
    refit_count_ = state.at("refit_count").get<long>();
    fitted_size_.assign(instance_.m, -1);
    cache_.assign(instance_.m, std::nullopt);
  }

 private:
  PolicyConfig config_;
  std::vector<long> arrivals_;
  std::vector<ObservationLog> own_;
  ObservationLog all_;
  std::vector<Eigen::VectorXd> theta_rows_;
  std::vector<int> fitted_size_;
  std::vector<std::optional<Assortment>> cache_;
};

class ContextIgnorantPolicy final : public Policy {
 public:
  ContextIgnorantPolicy(const Instance& instance, PolicyConfig config)
      : Policy(instance), config_(std::move(config)) {
    cache_.assign(instance.m, std::nullopt);
  }

  Assortment choose(int t, int type_id, Rng& rng) override {
    if (log_.size() <= config_.baseline_explore_constant * instance_.n * std::log(t)) {
      last_explored_ = true;
      ++explore_count_;
      return sample_uniform_assortment(instance_.n, instance_.K, rng);
    }
    last_explored_ = false;
    if (fitted_size_ != log_.size()) {
      theta_ = pooled_mle(log_, instance_.n, config_.mle_ridge);
      fitted_size_ = log_.size();
      cache_.assign(static_cast<std::size_t>(instance_.m), std::nullopt);
      ++refit_count_;
    }
    const int i = type_id - 1;
    if (!cache_[i]) cache_[i] = exploit_action(instance_.W.row(i), theta_, instance_.K);
    return *cache_[i];
  }

  void record(int t, int type_id, int choice, const Assortment& s) override {
    if (!last_explored_) return;
    Observation obs;
    obs.t = t;
    obs.type_id = type_id;
    obs.choice = choice;
    obs.assortment = s;
    log_.append(std::move(obs));
  }

  const ObservationLog& log() const override { return log_; }

  std::string save_state() const override {
    json state;
    state["log"] = log_to_string(log_);
    state["explore_count"] = explore_count_;
    state["refit_count"] = refit_count_;
    return state.dump();
  }

  void load_state(const std::string& text) override {
    json state = json::parse(text);
    log_ = log_from_string(state.at("log").get<std::string>());
    explore_count_ = state.at("explore_count").get<long>();
    refit_count_ = state.at("refit_count").get<long>();
    fitted_size_ = -1;
    cache_.assign(static_cast<std::size_t>(instance_.m), std::nullopt);
  }

 private:
  PolicyConfig config_;
  ObservationLog log_;
  Eigen::VectorXd theta_;
  int fitted_size_ = -1;
  std::vector<std::optional<Assortment>> cache_;
};

class OraclePolicy final : public Policy {
 public:
  explicit OraclePolicy(const Instance& instance) : Policy(instance), oracle_(instance) {}

  Assortment choose(int /*t*/, int type_id, Rng& /*rng*/) override {
    last_explored_ = false;
    return oracle_.action(type_id);
  }

  void record(int, int, int, const Assortment&) override {}

  const ObservationLog& log() const override { return empty_; }

  std::string save_state() const override { return json::object().dump(); }
  void load_state(const std::string&) override {}

 private:
  RegretOracle oracle_;
  ObservationLog empty_;
};

}  // namespace

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kOracle: return "oracle";
    case PolicyKind::kNucNorm: return "nuc-norm";
    case PolicyKind::kNucNormPlan: return "nuc-norm-plan";
    case PolicyKind::kStructureIgnorant: return "structure-ignorant";
    case PolicyKind::kContextIgnorant: return "context-ignorant";
  }
  throw InvalidInput("unknown policy kind");
}

PolicyKind policy_kind_from_string(const std::string& name) {
  if (name == "oracle") return PolicyKind::kOracle;
  if (name == "nuc-norm") return PolicyKind::kNucNorm;
  if (name == "nuc-norm-plan") return PolicyKind::kNucNormPlan;
  if (name == "structure-ignorant") return PolicyKind::kStructureIgnorant;
  if (name == "context-ignorant") return PolicyKind::kContextIgnorant;
  throw InvalidInput("unknown policy kind: " + name);
}

double practical_lambda(int m, int n, int K, int num_obs, LambdaDimRule rule) {
  if (num_obs < 1) throw InvalidInput("practical_lambda: need at least one observation");
  const double d = rule == LambdaDimRule::kMPlusN ? m + n : std::max(m, n);
  return 0.125 * std::sqrt(K * d * std::log(d) /
                           (static_cast<double>(m) * n * num_obs));
}

double theoretical_C(int K, double rho, double omega, double alpha, double delta) {
  if (K < 1 || rho <= 0.0 || omega <= 0.0 || alpha <= 0.0 || delta <= 0.0)
    throw InvalidInput("theoretical_C: all inputs must be positive");
  return 4194304.0 * std::pow(K, 6) * std::pow(rho, 3) * omega * omega * alpha * alpha *
         std::exp(16.0 * alpha) / (delta * delta);
}

double theoretical_lambda(double C, double rho, int K, int r, int m, int n) {
  if (C <= 0.0 || rho <= 0.0 || K < 1 || r < 1 || m < 1 || n < 1)
    throw InvalidInput("theoretical_lambda: all inputs must be positive");
  return 8.0 * std::sqrt(rho * K / (C * r * static_cast<double>(m) * n));
}

void PolicyConfig::validate() const {
  if (C <= 0.0) throw InvalidInput("PolicyConfig: C must be > 0");
  if (r < 1) throw InvalidInput("PolicyConfig: r must be >= 1");
  if (refit_growth <= 1.0) throw InvalidInput("PolicyConfig: refit_growth must be > 1");
  if (baseline_explore_constant <= 0.0)
    throw InvalidInput("PolicyConfig: baseline_explore_constant must be > 0");
}

std::unique_ptr<Policy> make_policy(const Instance& instance, const PolicyConfig& config) {
  config.validate();
  switch (config.kind) {
    case PolicyKind::kOracle: return std::make_unique<OraclePolicy>(instance);
    case PolicyKind::kNucNorm: return std::make_unique<NucNormPolicy>(instance, config);
    case PolicyKind::kNucNormPlan: return std::make_unique<NucNormPlanPolicy>(instance, config);
    case PolicyKind::kStructureIgnorant:
      return std::make_unique<StructureIgnorantPolicy>(instance, config);
    case PolicyKind::kContextIgnorant:
      return std::make_unique<ContextIgnorantPolicy>(instance, config);
  }
  throw InvalidInput("unknown policy kind");
}

RegretOracle::RegretOracle(const Instance& instance) : instance_(instance) {
  per_type_.reserve(instance.m);
  for (int i = 0; i < instance.m; ++i) {
    AssortmentSolution sol =
        optimal_assortment(instance.W.row(i), instance.theta_star.row(i), instance.K);
    if (sol.degenerate) {
      Eigen::Index arg;
      instance.theta_star.row(i).maxCoeff(&arg);
      sol.set = {static_cast<int>(arg) + 1};
      sol.value = 0.0;
    }
    per_type_.push_back(std::move(sol));
  }
}

const Assortment& RegretOracle::action(int type_id) const {
  return per_type_.at(type_id - 1).set;
}

double RegretOracle::optimal_value(int type_id) const {
  return per_type_.at(type_id - 1).value;
}

double RegretOracle::instantaneous_regret(int type_id, const Assortment& s) const {
  const int i = type_id - 1;
  double f = expected_revenue(s, instance_.W.row(i), instance_.theta_star.row(i));
  return std::max(0.0, per_type_.at(i).value - f);
}

}  // namespace assortmax
