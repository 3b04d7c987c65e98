#include <CLI11.hpp>
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "assortmax/assort.hpp"
#include "assortmax/simlab.hpp"

namespace {

using namespace assortmax;

std::atomic<bool> g_stop{false};

void handle_interrupt(int) { g_stop.store(true); }

std::uint64_t default_seed() {
  if (const char* env = std::getenv("ASSORTMAX_SEED")) return std::stoull(env);
  return 0;
}

ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open spec file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return ExperimentSpec::from_json_text(buffer.str());
}

void apply_overrides(ExperimentSpec& spec, const std::optional<std::uint64_t>& seed,
                     const std::optional<int>& threads, const std::optional<bool>& deterministic,
                     const std::optional<std::string>& output) {
  if (seed) spec.seed = *seed;
  if (threads) spec.threads = *threads;
  if (deterministic) spec.deterministic = *deterministic;
  if (output) spec.output_dir = *output;
}

void emit_or_print(const ResultTable& table, const ExperimentSpec& spec, bool svg) {
  if (spec.output_dir == "-") {
    table.write_results_csv(std::cout);
    return;
  }
  auto files = emit_report(table, spec, svg ? ReportFormat::kSvg : ReportFormat::kCsv,
                           spec.output_dir);
  for (const auto& path : files) std::cerr << "wrote " << path.string() << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"low-rank conditional MNL personalization toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic instance");
  int gen_m = 20, gen_n = 20, gen_r = 2, gen_K = 5;
  std::uint64_t gen_seed = default_seed();
  std::string gen_revenue = "uniform01", gen_out = "-";
  gen->add_option("--m", gen_m, "number of types");
  gen->add_option("--n", gen_n, "number of items");
  gen->add_option("--r", gen_r, "rank of the preference matrix");
  gen->add_option("--K", gen_K, "assortment size cap");
  gen->add_option("--seed", gen_seed, "random seed");
  gen->add_option("--revenue-rule", gen_revenue, "uniform01 | constant1 | lognormal(sigma)");
  gen->add_option("-o,--output", gen_out, "output file (- for stdout)");

  // estimate
  auto* estimate = app.add_subcommand("estimate", "run a static recovery experiment");
  std::string est_spec_path;
  std::optional<std::uint64_t> est_seed;
  std::optional<int> est_threads;
  std::optional<bool> est_deterministic;
  std::optional<std::string> est_out;
  bool est_svg = false;
  estimate->add_option("--spec", est_spec_path, "experiment spec (JSON)")->required();
  estimate->add_option("--seed", est_seed, "override the spec's master seed");
  estimate->add_option("--threads", est_threads, "override the spec's worker count");
  estimate->add_flag("--deterministic,!--no-deterministic", est_deterministic,
                     "canonical output ordering");
  estimate->add_option("-o,--output", est_out, "output directory (- for stdout CSV)");
  estimate->add_flag("--svg", est_svg, "also render SVG charts");

  // bandit
  auto* bandit = app.add_subcommand("bandit", "run a dynamic regret experiment");
  std::string ban_spec_path;
  std::optional<std::uint64_t> ban_seed;
  std::optional<int> ban_threads;
  std::optional<bool> ban_deterministic;
  std::optional<std::string> ban_out;
  bool ban_svg = false;
  bandit->add_option("--spec", ban_spec_path, "experiment spec (JSON)")->required();
  bandit->add_option("--seed", ban_seed, "override the spec's master seed");
  bandit->add_option("--threads", ban_threads, "override the spec's worker count");
  bandit->add_flag("--deterministic,!--no-deterministic", ban_deterministic,
                   "canonical output ordering");
  bandit->add_option("-o,--output", ban_out, "output directory (- for stdout CSV)");
  bandit->add_flag("--svg", ban_svg, "also render SVG charts");

  // plan
  auto* plan = app.add_subcommand("plan", "population-level assortment planning");
  std::string plan_instance_path;
  plan->add_option("--instance", plan_instance_path, "instance file (JSON)")->required();

  // oracle-check
  auto* oracle_check =
      app.add_subcommand("oracle-check", "cross-check the assortment optimizer against brute force");
  int oc_n = 10, oc_K = 3, oc_trials = 200;
  std::uint64_t oc_seed = default_seed();
  oracle_check->add_option("--n", oc_n, "number of items (<= 20)");
  oracle_check->add_option("--K", oc_K, "assortment size cap");
  oracle_check->add_option("--trials", oc_trials, "number of random trials");
  oracle_check->add_option("--seed", oc_seed, "random seed");

  // report
  auto* report = app.add_subcommand("report", "render charts from result CSVs");
  std::string rep_results, rep_trace, rep_out = ".";
  report->add_option("--results", rep_results, "results CSV")->required();
  report->add_option("--trace", rep_trace, "trace CSV (dynamic runs)");
  report->add_option("-o,--output", rep_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (*gen) {
    Rng rng(gen_seed);
    Instance instance =
        generate_instance(gen_m, gen_n, gen_r, gen_K, RevenueRule::parse(gen_revenue), rng);
    if (gen_out == "-") {
      write_instance_json(std::cout, instance);
    } else {
      std::ofstream out(gen_out);
      if (!out) throw InvalidInput("cannot write " + gen_out);
      write_instance_json(out, instance);
      std::cerr << "wrote " << gen_out << '\n';
    }
    return 0;
  }

  if (*estimate) {
    ExperimentSpec spec = load_spec(est_spec_path);
    if (spec.kind == ExperimentKind::kDynamicRegret)
      throw InvalidInput("estimate: spec kind must be static-rmse or rmse-vs-per-row");
    apply_overrides(spec, est_seed, est_threads, est_deterministic, est_out);
    ResultTable table = spec.kind == ExperimentKind::kRmseVsPerRow ? run_rmse_per_row(spec)
                                                                   : run_static(spec);
    emit_or_print(table, spec, est_svg);
    return 0;
  }

  if (*bandit) {
    ExperimentSpec spec = load_spec(ban_spec_path);
    apply_overrides(spec, ban_seed, ban_threads, ban_deterministic, ban_out);
    std::signal(SIGINT, handle_interrupt);
    ResultTable table = run_dynamic(spec, &g_stop);
    if (g_stop.load()) {
      std::cerr << "interrupted; checkpoints written under " << spec.output_dir
                << "/checkpoints\n";
      return 2;
    }
    emit_or_print(table, spec, ban_svg);
    return 0;
  }

  if (*plan) {
    std::ifstream in(plan_instance_path);
    if (!in) throw InvalidInput("cannot open instance file: " + plan_instance_path);
    Instance instance = read_instance_json(in);
    AssortmentSolution sol =
        plan_assortment(instance.W, instance.theta_star, instance.mu_star, instance.K);
    std::cout << "assortment:";
    for (int j : sol.set) std::cout << ' ' << j;
    std::cout << "\nvalue: " << sol.value << "\nexact: " << (sol.exact ? "yes" : "no") << '\n';
    return 0;
  }

  if (*oracle_check) {
    Rng rng(oc_seed);
    for (int trial = 0; trial < oc_trials; ++trial) {
      Eigen::VectorXd w(oc_n), theta(oc_n);
      for (int j = 0; j < oc_n; ++j) {
        w[j] = rng.next_double();
        theta[j] = 2.0 * rng.next_normal();
      }
      AssortmentSolution fast = optimal_assortment(w, theta, oc_K);
      AssortmentSolution exact = brute_force_assortment(w, theta, oc_K);
      if (std::abs(fast.value - exact.value) > 1e-9) {
        std::cerr << "mismatch on trial " << trial << ": fast=" << fast.value
                  << " brute=" << exact.value << '\n';
        return 2;
      }
    }
    std::cerr << oc_trials << " trials matched\n";
    return 0;
  }

  if (*report) {
    ResultTable table;
    {
      std::ifstream in(rep_results);
      if (!in) throw InvalidInput("cannot open results CSV: " + rep_results);
      table.rows = ResultTable::read_results_csv(in);
    }
    ExperimentSpec spec;
    spec.grid.push_back(GridPoint{1, 1, 1, 1, 1, 0});
    if (!table.rows.empty()) spec.experiment_id = table.rows.front().experiment;
    if (!rep_trace.empty()) {
      std::ifstream in(rep_trace);
      if (!in) throw InvalidInput("cannot open trace CSV: " + rep_trace);
      table.trace = ResultTable::read_trace_csv(in);
      spec.kind = ExperimentKind::kDynamicRegret;
    }
    auto files = emit_report(table, spec, ReportFormat::kSvg, rep_out);
    for (const auto& path : files) std::cerr << "wrote " << path.string() << '\n';
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
}
