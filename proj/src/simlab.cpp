#include "assortmax/simlab.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "assortmax/choice.hpp"

namespace assortmax {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

// Runs fn(0..count-1) on a small worker pool; rethrows the first failure.
void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

Eigen::VectorXd uniform_mu(int m) {
  return Eigen::VectorXd::Constant(m, 1.0 / m);
}

// Samples a static observation log per the uniform-type, uniform-set
// protocol.
ObservationLog sample_static_log(const Instance& instance, int N, Rng& rng) {
  ObservationLog log;
  for (int t = 1; t <= N; ++t) {
    Observation obs;
    obs.t = t;
    obs.type_id = sample_type(instance.mu_star, rng);
    obs.assortment = sample_uniform_assortment(instance.n, instance.K, rng);
    obs.choice = sample_choice(instance.theta_star.row(obs.type_id - 1), obs.assortment, rng);
    log.append(std::move(obs));
  }
  return log;
}

FgdConfig fgd_config_for(const ExperimentSpec& spec, const GridPoint& cell, int num_obs) {
  FgdConfig fgd;
  fgd.r_tilde = std::min({spec.r_tilde_factor * cell.r, cell.m, cell.n});
  fgd.lambda = practical_lambda(cell.m, cell.n, cell.K, num_obs, spec.lambda_dim);
  fgd.beta_dec = spec.beta_dec;
  fgd.tol = spec.tol;
  fgd.max_outer_iters = spec.max_outer_iters;
  fgd.max_linesearch_iters = spec.max_linesearch_iters;
  return fgd;
}

struct CellOutput {
  std::vector<ResultRow> rows;
  std::vector<TraceRow> trace;
};

ResultTable collect(const ExperimentSpec& spec, int tasks,
                    const std::function<CellOutput(int)>& run_task) {
  std::vector<CellOutput> outputs(tasks);
  parallel_for(tasks, spec.threads, [&](int i) { outputs[i] = run_task(i); });
  ResultTable table;
  for (CellOutput& out : outputs) {
    table.rows.insert(table.rows.end(), out.rows.begin(), out.rows.end());
    table.trace.insert(table.trace.end(), out.trace.begin(), out.trace.end());
  }
  return table;
}

// Wall times vary run to run, so deterministic mode zeroes them to keep
// output bytes reproducible.
ResultRow make_row(const ExperimentSpec& spec, const GridPoint& cell, int rep,
                   const std::string& metric, double value, double wall = 0.0) {
  return ResultRow{spec.experiment_id, cell, rep, metric, value,
                   spec.deterministic ? 0.0 : wall};
}

}  // namespace

std::string RevenueRule::to_string() const {
  switch (kind) {
    case Kind::kUniform01: return "uniform01";
    case Kind::kConstant1: return "constant1";
    case Kind::kLognormal: return "lognormal(" + fmt(sigma) + ")";
  }
  throw InvalidInput("unknown revenue rule");
}

RevenueRule RevenueRule::parse(const std::string& text) {
  RevenueRule rule;
  if (text == "uniform01") {
    rule.kind = Kind::kUniform01;
  } else if (text == "constant1") {
    rule.kind = Kind::kConstant1;
  } else if (text.rfind("lognormal(", 0) == 0 && text.back() == ')') {
    rule.kind = Kind::kLognormal;
    rule.sigma = std::stod(text.substr(10, text.size() - 11));
    if (rule.sigma <= 0.0) throw InvalidInput("revenue rule: lognormal sigma must be > 0");
  } else {
    throw InvalidInput("revenue rule: expected uniform01 | constant1 | lognormal(sigma), got " +
                       text);
  }
  return rule;
}

double entry_rms(const Eigen::MatrixXd& a) {
  return a.norm() / std::sqrt(static_cast<double>(a.size()));
}

Instance generate_instance(int m, int n, int r, int K, const RevenueRule& revenue_rule, Rng& rng) {
  if (m < 1 || n < 1) throw InvalidInput("generate_instance: m and n must be positive");
  if (r < 1 || r > std::min(m, n)) throw InvalidInput("generate_instance: need 1 <= r <= min(m,n)");
  if (K < 1 || K > n) throw InvalidInput("generate_instance: need 1 <= K <= n");

  Eigen::MatrixXd theta0(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) theta0(i, j) = rng.next_normal();

  Eigen::MatrixXd theta1;
  if (r == std::min(m, n)) {
    theta1 = std::move(theta0);
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(theta0, Eigen::ComputeThinU | Eigen::ComputeThinV);
    theta1 = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal() *
             svd.matrixV().leftCols(r).transpose();
  }

  Instance instance;
  instance.m = m;
  instance.n = n;
  instance.K = K;
  instance.theta_star = theta1 / entry_rms(theta1);
  instance.mu_star = uniform_mu(m);
  instance.W.resize(m, n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      switch (revenue_rule.kind) {
        case RevenueRule::Kind::kUniform01: instance.W(i, j) = rng.next_double(); break;
        case RevenueRule::Kind::kConstant1: instance.W(i, j) = 1.0; break;
        case RevenueRule::Kind::kLognormal:
          instance.W(i, j) = std::exp(revenue_rule.sigma * rng.next_normal());
          break;
      }
    }
  }
  instance.validate();
  return instance;
}

void ExperimentSpec::validate() const {
  if (grid.empty()) throw InvalidInput("spec: grid must be nonempty");
  for (const GridPoint& cell : grid) {
    if (cell.m < 1 || cell.n < 1 || cell.r < 1 || cell.K < 1)
      throw InvalidInput("spec: grid values must be positive");
    if (cell.K > cell.n) throw InvalidInput("spec: K must be <= n");
    if (cell.r > std::min(cell.m, cell.n)) throw InvalidInput("spec: r must be <= min(m,n)");
    if (kind == ExperimentKind::kDynamicRegret) {
      if (cell.T < 1) throw InvalidInput("spec: dynamic grid points need T >= 1");
    } else {
      if (cell.N < 1) throw InvalidInput("spec: static grid points need N >= 1");
    }
    if (kind == ExperimentKind::kRmseVsPerRow && cell.m != cell.n)
      throw InvalidInput("spec: rmse-vs-per-row requires square grid points (m == n)");
  }
  if (replicates < 1) throw InvalidInput("spec: replicates must be >= 1");
  if (kind == ExperimentKind::kDynamicRegret && policies.empty())
    throw InvalidInput("spec: dynamic runs need at least one policy");
  if (C <= 0.0) throw InvalidInput("spec: C must be > 0");
  if (refit_growth <= 1.0) throw InvalidInput("spec: refit_growth must be > 1");
  if (baseline_explore_constant <= 0.0)
    throw InvalidInput("spec: baseline_explore_constant must be > 0");
  if (r_tilde_factor < 1) throw InvalidInput("spec: r_tilde_factor must be >= 1");
  if (beta_dec <= 0.0 || beta_dec >= 1.0) throw InvalidInput("spec: beta_dec must be in (0,1)");
  if (tol <= 0.0) throw InvalidInput("spec: tol must be > 0");
  if (threads < 1) throw InvalidInput("spec: threads must be >= 1");
  if (trace_stride < 0) throw InvalidInput("spec: trace_stride must be >= 0");
}

ExperimentSpec ExperimentSpec::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("spec: JSON parse error: ") + e.what());
  }
  if (!doc.is_object()) throw InvalidInput("spec: top level must be an object");

  ExperimentSpec spec;
  for (const auto& [key, value] : doc.items()) {
    if (key == "kind") {
      std::string k = value.get<std::string>();
      if (k == "static-rmse") spec.kind = ExperimentKind::kStaticRmse;
      else if (k == "rmse-vs-per-row") spec.kind = ExperimentKind::kRmseVsPerRow;
      else if (k == "dynamic-regret") spec.kind = ExperimentKind::kDynamicRegret;
      else throw InvalidInput("spec: unknown kind " + k);
    } else if (key == "experiment_id") {
      spec.experiment_id = value.get<std::string>();
    } else if (key == "grid") {
      for (const json& entry : value) {
        GridPoint cell;
        for (const auto& [gkey, gvalue] : entry.items()) {
          if (gkey == "m") cell.m = gvalue.get<int>();
          else if (gkey == "n") cell.n = gvalue.get<int>();
          else if (gkey == "r") cell.r = gvalue.get<int>();
          else if (gkey == "K") cell.K = gvalue.get<int>();
          else if (gkey == "N") cell.N = gvalue.get<int>();
          else if (gkey == "T") cell.T = gvalue.get<int>();
          else throw InvalidInput("spec: unknown grid key " + gkey);
        }
        spec.grid.push_back(cell);
      }
    } else if (key == "policies") {
      for (const json& name : value)
        spec.policies.push_back(policy_kind_from_string(name.get<std::string>()));
    } else if (key == "replicates") {
      spec.replicates = value.get<int>();
    } else if (key == "seed") {
      spec.seed = value.get<std::uint64_t>();
    } else if (key == "revenue_rule") {
      spec.revenue_rule = RevenueRule::parse(value.get<std::string>());
    } else if (key == "r_tilde_factor") {
      spec.r_tilde_factor = value.get<int>();
    } else if (key == "beta_dec") {
      spec.beta_dec = value.get<double>();
    } else if (key == "tol") {
      spec.tol = value.get<double>();
    } else if (key == "max_outer_iters") {
      spec.max_outer_iters = value.get<int>();
    } else if (key == "max_linesearch_iters") {
      spec.max_linesearch_iters = value.get<int>();
    } else if (key == "lambda_dim") {
      std::string rule = value.get<std::string>();
      if (rule == "m+n") spec.lambda_dim = LambdaDimRule::kMPlusN;
      else if (rule == "max(m,n)") spec.lambda_dim = LambdaDimRule::kMaxMN;
      else throw InvalidInput("spec: lambda_dim must be \"m+n\" or \"max(m,n)\"");
    } else if (key == "C") {
      spec.C = value.get<double>();
    } else if (key == "baseline_explore_constant") {
      spec.baseline_explore_constant = value.get<double>();
    } else if (key == "refit_growth") {
      spec.refit_growth = value.get<double>();
    } else if (key == "faithful") {
      spec.faithful = value.get<bool>();
    } else if (key == "trace_stride") {
      spec.trace_stride = value.get<int>();
    } else if (key == "threads") {
      spec.threads = value.get<int>();
    } else if (key == "deterministic") {
      spec.deterministic = value.get<bool>();
    } else if (key == "output_dir") {
      spec.output_dir = value.get<std::string>();
    } else {
      throw InvalidInput("spec: unknown key " + key);
    }
  }
  spec.validate();
  return spec;
}

std::string ExperimentSpec::to_json_text() const {
  json doc;
  switch (kind) {
    case ExperimentKind::kStaticRmse: doc["kind"] = "static-rmse"; break;
    case ExperimentKind::kRmseVsPerRow: doc["kind"] = "rmse-vs-per-row"; break;
    case ExperimentKind::kDynamicRegret: doc["kind"] = "dynamic-regret"; break;
  }
  doc["experiment_id"] = experiment_id;
  doc["grid"] = json::array();
  for (const GridPoint& cell : grid) {
    json entry{{"m", cell.m}, {"n", cell.n}, {"r", cell.r}, {"K", cell.K}};
    if (cell.N > 0) entry["N"] = cell.N;
    if (cell.T > 0) entry["T"] = cell.T;
    doc["grid"].push_back(std::move(entry));
  }
  doc["policies"] = json::array();
  for (PolicyKind kind_value : policies) doc["policies"].push_back(to_string(kind_value));
  doc["replicates"] = replicates;
  doc["seed"] = seed;
  doc["revenue_rule"] = revenue_rule.to_string();
  doc["r_tilde_factor"] = r_tilde_factor;
  doc["beta_dec"] = beta_dec;
  doc["tol"] = tol;
  doc["max_outer_iters"] = max_outer_iters;
  doc["max_linesearch_iters"] = max_linesearch_iters;
  doc["lambda_dim"] = lambda_dim == LambdaDimRule::kMPlusN ? "m+n" : "max(m,n)";
  doc["C"] = C;
  doc["baseline_explore_constant"] = baseline_explore_constant;
  doc["refit_growth"] = refit_growth;
  doc["faithful"] = faithful;
  doc["trace_stride"] = trace_stride;
  doc["threads"] = threads;
  doc["deterministic"] = deterministic;
  doc["output_dir"] = output_dir;
  return doc.dump(2);
}

void ResultTable::write_results_csv(std::ostream& out) const {
  out << "experiment,m,n,r,K,N,T,replicate,metric,value,wall_time_s\n";
  for (const ResultRow& row : rows) {
    out << row.experiment << ',' << row.grid.m << ',' << row.grid.n << ',' << row.grid.r << ','
        << row.grid.K << ',' << row.grid.N << ',' << row.grid.T << ',' << row.replicate << ','
        << row.metric << ',' << fmt(row.value) << ',' << fmt(row.wall_time_s) << '\n';
  }
}

void ResultTable::write_trace_csv(std::ostream& out) const {
  out << "policy,replicate,t,regret_step,regret_cum\n";
  for (const TraceRow& row : trace) {
    out << row.policy << ',' << row.replicate << ',' << row.t << ',' << fmt(row.regret_step)
        << ',' << fmt(row.regret_cum) << '\n';
  }
}

std::vector<ResultRow> ResultTable::read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "experiment,m,n,r,K,N,T,replicate,metric,value,wall_time_s")
    throw InvalidInput("results CSV: bad or missing header");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row_in(line);
    ResultRow row;
    std::string field;
    std::getline(row_in, row.experiment, ',');
    auto next_field = [&] {
      if (!std::getline(row_in, field, ',')) throw InvalidInput("results CSV: truncated row");
      return field;
    };
    row.grid.m = std::stoi(next_field());
    row.grid.n = std::stoi(next_field());
    row.grid.r = std::stoi(next_field());
    row.grid.K = std::stoi(next_field());
    row.grid.N = std::stoi(next_field());
    row.grid.T = std::stoi(next_field());
    row.replicate = std::stoi(next_field());
    row.metric = next_field();
    row.value = std::stod(next_field());
    row.wall_time_s = std::stod(next_field());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<TraceRow> ResultTable::read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "policy,replicate,t,regret_step,regret_cum")
    throw InvalidInput("trace CSV: bad or missing header");
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row_in(line);
    TraceRow row;
    std::string field;
    std::getline(row_in, row.policy, ',');
    auto next_field = [&] {
      if (!std::getline(row_in, field, ',')) throw InvalidInput("trace CSV: truncated row");
      return field;
    };
    row.replicate = std::stoi(next_field());
    row.t = std::stol(next_field());
    row.regret_step = std::stod(next_field());
    row.regret_cum = std::stod(next_field());
    rows.push_back(std::move(row));
  }
  return rows;
}

ResultTable run_static(const ExperimentSpec& spec) {
  spec.validate();
  const int cells = static_cast<int>(spec.grid.size());
  const int tasks = cells * spec.replicates;
  return collect(spec, tasks, [&](int task) {
    const int cell_idx = task / spec.replicates;
    const int rep = task % spec.replicates;
    const GridPoint& cell = spec.grid[cell_idx];
    CellOutput out;
    try {
      Rng inst_rng(derive_seed(spec.seed, {0x11, static_cast<std::uint64_t>(cell_idx),
                                           static_cast<std::uint64_t>(rep)}));
      Rng obs_rng(derive_seed(spec.seed, {0x12, static_cast<std::uint64_t>(cell_idx),
                                          static_cast<std::uint64_t>(rep)}));
      Instance instance =
          generate_instance(cell.m, cell.n, cell.r, cell.K, spec.revenue_rule, inst_rng);
      ObservationLog log = sample_static_log(instance, cell.N, obs_rng);

      Estimate fgd = fgd_solve(log, cell.m, cell.n, fgd_config_for(spec, cell, cell.N));
      out.rows.push_back(make_row(spec, cell, rep, "rmse_fgd",
                                  rmse(fgd.theta_hat, instance.theta_star), fgd.wall_time_s));
      if (spec.kind == ExperimentKind::kStaticRmse) {
        Estimate mle = per_type_mle(log, cell.m, cell.n);
        out.rows.push_back(make_row(spec, cell, rep, "rmse_mle",
                                    rmse(mle.theta_hat, instance.theta_star), mle.wall_time_s));
        out.rows.push_back(make_row(
            spec, cell, rep, "rmse_zero",
            rmse(Eigen::MatrixXd::Zero(cell.m, cell.n), instance.theta_star)));
      }
    } catch (const std::exception& e) {
      // Per-cell failures are recorded; the run continues.
      out.rows.push_back(make_row(spec, cell, rep, "failed", 1.0));
    }
    return out;
  });
}

ResultTable run_rmse_per_row(const ExperimentSpec& spec) {
  if (spec.kind != ExperimentKind::kRmseVsPerRow)
    throw InvalidInput("run_rmse_per_row: spec kind must be rmse-vs-per-row");
  return run_static(spec);
}

namespace {

std::string checkpoint_key(const ExperimentSpec& spec, int cell_idx, int rep) {
  std::size_t h = std::hash<std::string>{}(spec.to_json_text());
  std::ostringstream key;
  key << std::hex << h << std::dec << "_c" << cell_idx << "_r" << rep;
  return key.str();
}

struct DynamicCellState {
  long t_done = 0;
  std::vector<double> cum;                    // per policy
  std::vector<long> exploit_rounds_tail;      // per policy, rounds in the tail window
  std::vector<long> exploit_matches_tail;     // per policy
  std::vector<std::vector<TraceRow>> trace;   // per policy
  std::vector<Rng::State> policy_rng;
  Rng::State arrival_rng;
};

}  // namespace

ResultTable run_dynamic(const ExperimentSpec& spec, const std::atomic<bool>* stop_flag) {
  spec.validate();
  if (spec.kind != ExperimentKind::kDynamicRegret)
    throw InvalidInput("run_dynamic: spec kind must be dynamic-regret");
  const int cells = static_cast<int>(spec.grid.size());
  const int num_policies = static_cast<int>(spec.policies.size());
  const int tasks = cells * spec.replicates;
  const std::filesystem::path ckpt_dir =
      std::filesystem::path(spec.output_dir) / "checkpoints";

  return collect(spec, tasks, [&](int task) {
    const int cell_idx = task / spec.replicates;
    const int rep = task % spec.replicates;
    const GridPoint& cell = spec.grid[cell_idx];
    const long T = cell.T;
    const int stride = spec.trace_stride > 0
                           ? spec.trace_stride
                           : std::max<long>(1, T / 2000);
    const long tail_start = T - std::min<long>(1000, T);  // exclusive lower bound

    Rng inst_rng(derive_seed(spec.seed, {0x21, static_cast<std::uint64_t>(cell_idx),
                                         static_cast<std::uint64_t>(rep)}));
    Instance instance =
        generate_instance(cell.m, cell.n, cell.r, cell.K, spec.revenue_rule, inst_rng);
    RegretOracle oracle(instance);

    PolicyConfig base;
    base.C = spec.C;
    base.r = cell.r;
    base.fgd.r_tilde = std::min({spec.r_tilde_factor * cell.r, cell.m, cell.n});
    base.fgd.beta_dec = spec.beta_dec;
    base.fgd.tol = spec.tol;
    base.fgd.max_outer_iters = spec.max_outer_iters;
    base.fgd.max_linesearch_iters = spec.max_linesearch_iters;
    base.fgd.lambda = 1.0;  // replaced at every refit
    base.refit_growth = spec.refit_growth;
    base.faithful = spec.faithful;
    base.baseline_explore_constant = spec.baseline_explore_constant;
    base.lambda_dim = spec.lambda_dim;

    std::vector<std::unique_ptr<Policy>> policies;
    std::vector<Rng> policy_rng;
    for (int p = 0; p < num_policies; ++p) {
      PolicyConfig config = base;
      config.kind = spec.policies[p];
      policies.push_back(make_policy(instance, config));
      policy_rng.emplace_back(derive_seed(
          spec.seed, {0x23, static_cast<std::uint64_t>(cell_idx), static_cast<std::uint64_t>(rep),
                      static_cast<std::uint64_t>(p)}));
    }
    Rng arrival_rng(derive_seed(spec.seed, {0x22, static_cast<std::uint64_t>(cell_idx),
                                            static_cast<std::uint64_t>(rep)}));

    DynamicCellState state;
    state.cum.assign(num_policies, 0.0);
    state.exploit_rounds_tail.assign(num_policies, 0);
    state.exploit_matches_tail.assign(num_policies, 0);
    state.trace.resize(num_policies);

    const std::filesystem::path ckpt_path =
        ckpt_dir / (checkpoint_key(spec, cell_idx, rep) + ".json");
    if (std::filesystem::exists(ckpt_path)) {
      std::ifstream in(ckpt_path);
      json doc = json::parse(in);
      state.t_done = doc.at("t").get<long>();
      state.cum = doc.at("cum").get<std::vector<double>>();
      state.exploit_rounds_tail = doc.at("exploit_rounds_tail").get<std::vector<long>>();
      state.exploit_matches_tail = doc.at("exploit_matches_tail").get<std::vector<long>>();
      auto restore_rng = [](Rng& rng, const json& j) {
        Rng::State s;
        s.key = j.at("key").get<std::uint64_t>();
        s.ctr = j.at("ctr").get<std::uint64_t>();
        s.have_cached = j.at("have_cached").get<bool>();
        s.cached = j.at("cached").get<double>();
        rng.restore(s);
      };
      restore_rng(arrival_rng, doc.at("arrival_rng"));
      for (int p = 0; p < num_policies; ++p) {
        restore_rng(policy_rng[p], doc.at("policy_rng")[p]);
        policies[p]->load_state(doc.at("policy_state")[p].get<std::string>());
        for (const json& row : doc.at("trace")[p])
          state.trace[p].push_back(TraceRow{to_string(spec.policies[p]), rep,
                                            row.at("t").get<long>(),
                                            row.at("step").get<double>(),
                                            row.at("cum").get<double>()});
      }
    }

    const auto wall_start = std::chrono::steady_clock::now();
    for (long t = state.t_done + 1; t <= T; ++t) {
      if (stop_flag && stop_flag->load()) {
        // Dump a resumable checkpoint and bail out of this cell.
        std::filesystem::create_directories(ckpt_dir);
        json doc;
        doc["t"] = t - 1;
        doc["cum"] = state.cum;
        doc["exploit_rounds_tail"] = state.exploit_rounds_tail;
        doc["exploit_matches_tail"] = state.exploit_matches_tail;
        auto rng_json = [](const Rng& rng) {
          Rng::State s = rng.state();
          return json{{"key", s.key}, {"ctr", s.ctr}, {"have_cached", s.have_cached},
                      {"cached", s.cached}};
        };
        doc["arrival_rng"] = rng_json(arrival_rng);
        doc["policy_rng"] = json::array();
        doc["policy_state"] = json::array();
        doc["trace"] = json::array();
        for (int p = 0; p < num_policies; ++p) {
          doc["policy_rng"].push_back(rng_json(policy_rng[p]));
          doc["policy_state"].push_back(policies[p]->save_state());
          json rows = json::array();
          for (const TraceRow& row : state.trace[p])
            rows.push_back(json{{"t", row.t}, {"step", row.regret_step}, {"cum", row.regret_cum}});
          doc["trace"].push_back(std::move(rows));
        }
        std::ofstream out(ckpt_path);
        out << doc.dump();
        return CellOutput{};
      }

      const int type_id = sample_type(instance.mu_star, arrival_rng);
      for (int p = 0; p < num_policies; ++p) {
        Assortment s = policies[p]->choose(static_cast<int>(t), type_id, policy_rng[p]);
        int choice = sample_choice(instance.theta_star.row(type_id - 1), s, policy_rng[p]);
        policies[p]->record(static_cast<int>(t), type_id, choice, s);
        double regret = oracle.instantaneous_regret(type_id, s);
        state.cum[p] += regret;
        if (t > tail_start && !policies[p]->last_explored()) {
          ++state.exploit_rounds_tail[p];
          if (s == oracle.action(type_id)) ++state.exploit_matches_tail[p];
        }
        if (t % stride == 0 || t == T)
          state.trace[p].push_back(
              TraceRow{to_string(spec.policies[p]), rep, t, regret, state.cum[p]});
      }
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    std::error_code ec;
    std::filesystem::remove(ckpt_path, ec);

    CellOutput out;
    int nucnorm_idx = -1, structure_idx = -1;
    for (int p = 0; p < num_policies; ++p) {
      const std::string name = to_string(spec.policies[p]);
      if (spec.policies[p] == PolicyKind::kNucNorm) nucnorm_idx = p;
      if (spec.policies[p] == PolicyKind::kStructureIgnorant) structure_idx = p;
      out.trace.insert(out.trace.end(), state.trace[p].begin(), state.trace[p].end());
      out.rows.push_back(make_row(spec, cell, rep, "regret_cum:" + name, state.cum[p], wall));
      out.rows.push_back(
          make_row(spec, cell, rep, "explore_count:" + name, policies[p]->explore_count()));
      out.rows.push_back(
          make_row(spec, cell, rep, "refit_count:" + name, policies[p]->refit_count()));
      double match_rate =
          state.exploit_rounds_tail[p] == 0
              ? 0.0
              : static_cast<double>(state.exploit_matches_tail[p]) / state.exploit_rounds_tail[p];
      out.rows.push_back(make_row(spec, cell, rep, "exploit_match_rate:" + name, match_rate));
    }
    if (nucnorm_idx >= 0 && structure_idx >= 0) {
      // Regret of the structure-ignorant baseline relative to ours.
      for (std::size_t k = 0; k < state.trace[nucnorm_idx].size(); ++k) {
        const TraceRow& ours = state.trace[nucnorm_idx][k];
        const TraceRow& theirs = state.trace[structure_idx][k];
        out.trace.push_back(TraceRow{"revenue-impact", rep, ours.t,
                                     theirs.regret_step - ours.regret_step,
                                     theirs.regret_cum - ours.regret_cum});
      }
    }
    return out;
  });
}

std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label, const std::vector<ChartSeries>& series,
                              bool log_x) {
  const double width = 860, height = 540;
  const double left = 70, right = 180, top = 40, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;

  double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
  for (const ChartSeries& s : series) {
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      double x = log_x ? std::log10(std::max(1e-12, s.x[k])) : s.x[k];
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, s.y[k]);
      y_max = std::max(y_max, s.y[k]);
    }
  }
  if (x_min > x_max) {
    x_min = 0;
    x_max = 1;
  }
  if (y_min > y_max) {
    y_min = 0;
    y_max = 1;
  }
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;

  auto px = [&](double x) {
    double v = log_x ? std::log10(std::max(1e-12, x)) : x;
    return left + (v - x_min) / (x_max - x_min) * plot_w;
  };
  auto py = [&](double y) { return top + plot_h - (y - y_min) / (y_max - y_min) * plot_h; };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

  std::ostringstream svg;
  svg.precision(6);
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << left + plot_w / 2 << "\" y=\"20\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";

  // Axes.
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
      << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  const int ticks = 5;
  for (int k = 0; k <= ticks; ++k) {
    double fx = x_min + (x_max - x_min) * k / ticks;
    double value = log_x ? std::pow(10.0, fx) : fx;
    double x = left + plot_w * k / ticks;
    svg << "<line x1=\"" << x << "\" y1=\"" << top + plot_h << "\" x2=\"" << x << "\" y2=\""
        << top + plot_h + 5 << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << x << "\" y=\"" << top + plot_h + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << value
        << "</text>\n";
    double fy = y_min + (y_max - y_min) * k / ticks;
    double y = top + plot_h - plot_h * k / ticks;
    svg << "<line x1=\"" << left - 5 << "\" y1=\"" << y << "\" x2=\"" << left << "\" y2=\"" << y
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fy
        << "</text>\n";
  }
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
      << "</text>\n"
      << "<text x=\"18\" y=\"" << top + plot_h / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
      << "transform=\"rotate(-90 18 " << top + plot_h / 2 << ")\">" << y_label << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const ChartSeries& s = series[si];
    const char* color = palette[si % (sizeof(palette) / sizeof(palette[0]))];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k)
      svg << px(s.x[k]) << ',' << py(s.y[k]) << ' ';
    svg << "\"/>\n";
    double ly = top + 16.0 * (static_cast<double>(si) + 1.0);
    svg << "<line x1=\"" << left + plot_w + 10 << "\" y1=\"" << ly << "\" x2=\""
        << left + plot_w + 30 << "\" y2=\"" << ly << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << left + plot_w + 35 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::filesystem::path> emit_report(const ResultTable& table,
                                               const ExperimentSpec& spec, ReportFormat format,
                                               const std::filesystem::path& dir) {
  if (table.rows.empty() && table.trace.empty())
    throw InvalidInput("emit_report: table must be nonempty");
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;

  {
    std::filesystem::path path = dir / "results.csv";
    std::ofstream out(path);
    if (!out) throw InvalidInput("emit_report: cannot write " + path.string());
    table.write_results_csv(out);
    written.push_back(path);
  }
  if (!table.trace.empty()) {
    std::filesystem::path path = dir / "trace.csv";
    std::ofstream out(path);
    if (!out) throw InvalidInput("emit_report: cannot write " + path.string());
    table.write_trace_csv(out);
    written.push_back(path);
  }
  if (format != ReportFormat::kSvg) return written;

  if (!table.trace.empty()) {
    // One series per policy: mean cumulative regret over replicates.
    std::map<std::string, std::map<long, std::pair<double, int>>> acc;
    for (const TraceRow& row : table.trace) {
      auto& slot = acc[row.policy][row.t];
      slot.first += row.regret_cum;
      ++slot.second;
    }
    std::vector<ChartSeries> series;
    for (const auto& [policy, points] : acc) {
      ChartSeries s;
      s.label = policy;
      for (const auto& [t, sum_count] : points) {
        s.x.push_back(static_cast<double>(t));
        s.y.push_back(sum_count.first / sum_count.second);
      }
      series.push_back(std::move(s));
    }
    std::filesystem::path path = dir / "regret.svg";
    std::ofstream out(path);
    out << render_line_chart(spec.experiment_id + ": cumulative regret", "t (log scale)",
                             "cumulative regret", series, /*log_x=*/true);
    written.push_back(path);
  } else {
    // RMSE vs N (or N per row): one series per metric, median over
    // replicates at each grid point.
    std::map<std::string, std::map<double, std::vector<double>>> acc;
    const bool per_row = spec.kind == ExperimentKind::kRmseVsPerRow;
    for (const ResultRow& row : table.rows) {
      if (row.metric.rfind("rmse", 0) != 0) continue;
      double x = per_row ? static_cast<double>(row.grid.N) / row.grid.n
                         : static_cast<double>(row.grid.N);
      acc[row.metric][x].push_back(row.value);
    }
    std::vector<ChartSeries> series;
    for (auto& [metric, points] : acc) {
      ChartSeries s;
      s.label = metric;
      for (auto& [x, values] : points) {
        std::sort(values.begin(), values.end());
        s.x.push_back(x);
        s.y.push_back(values[values.size() / 2]);
      }
      series.push_back(std::move(s));
    }
    std::filesystem::path path = dir / "rmse.svg";
    std::ofstream out(path);
    out << render_line_chart(spec.experiment_id + ": recovery error",
                             per_row ? "observations per row" : "observations", "RMSE", series,
                             /*log_x=*/false);
    written.push_back(path);
  }
  return written;
}

void write_instance_json(std::ostream& out, const Instance& instance) {
  json doc;
  doc["m"] = instance.m;
  doc["n"] = instance.n;
  doc["K"] = instance.K;
  auto matrix = [](const Eigen::MatrixXd& a) {
    json rows = json::array();
    for (int i = 0; i < a.rows(); ++i) {
      json row = json::array();
      for (int j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  doc["W"] = matrix(instance.W);
  doc["theta_star"] = matrix(instance.theta_star);
  doc["mu_star"] = json::array();
  for (int i = 0; i < instance.m; ++i) doc["mu_star"].push_back(instance.mu_star[i]);
  out << doc.dump(2) << '\n';
}

Instance read_instance_json(std::istream& in) {
  json doc = json::parse(in);
  Instance instance;
  instance.m = doc.at("m").get<int>();
  instance.n = doc.at("n").get<int>();
  instance.K = doc.at("K").get<int>();
  auto matrix = [&](const json& rows, int m, int n) {
    Eigen::MatrixXd a(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = rows.at(i).at(j).get<double>();
    return a;
  };
  instance.W = matrix(doc.at("W"), instance.m, instance.n);
  instance.theta_star = matrix(doc.at("theta_star"), instance.m, instance.n);
  instance.mu_star.resize(instance.m);
  for (int i = 0; i < instance.m; ++i) instance.mu_star[i] = doc.at("mu_star").at(i).get<double>();
  instance.validate();
  return instance;
}

}  // namespace assortmax
