#pragma once

#include <atomic>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "assortmax/bandit.hpp"
#include "assortmax/types.hpp"

namespace assortmax {

struct RevenueRule {
  enum class Kind { kUniform01, kConstant1, kLognormal } kind = Kind::kUniform01;
  double sigma = 0.5;  // lognormal only

  std::string to_string() const;
  static RevenueRule parse(const std::string& text);
};

// Synthetic instance: Theta* is a rank-r truncation of an iid standard
// normal draw, rescaled to unit root-mean-square entry; mu* is uniform.
Instance generate_instance(int m, int n, int r, int K, const RevenueRule& revenue_rule, Rng& rng);

// Uncentered RMS of the entries; the normalization used above.
double entry_rms(const Eigen::MatrixXd& a);

struct GridPoint {
  int m = 0, n = 0, r = 1, K = 1;
  int N = 0;  // static experiments
  int T = 0;  // dynamic experiments
};

enum class ExperimentKind { kStaticRmse, kRmseVsPerRow, kDynamicRegret };

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::kStaticRmse;
  std::string experiment_id = "experiment";
  std::vector<GridPoint> grid;
  std::vector<PolicyKind> policies;  // dynamic only
  int replicates = 1;
  std::uint64_t seed = 0;
  RevenueRule revenue_rule;

  // Estimator settings (static runs and nuc-norm policies).
  int r_tilde_factor = 2;  // r_tilde = r_tilde_factor * r
  double beta_dec = 0.8;
  double tol = 1e-10;
  int max_outer_iters = 500;
  int max_linesearch_iters = 60;
  LambdaDimRule lambda_dim = LambdaDimRule::kMPlusN;

  // Policy settings (dynamic runs).
  double C = 1.0;
  double baseline_explore_constant = 1.0;
  double refit_growth = 1.2;
  bool faithful = false;
  int trace_stride = 0;  // 0 = auto: about 2000 trace rows per run

  int threads = 1;
  bool deterministic = true;
  std::string output_dir = ".";

  void validate() const;
  // Strict JSON parse; unknown keys are rejected with the key name.
  static ExperimentSpec from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct ResultRow {
  std::string experiment;
  GridPoint grid;
  int replicate = 0;
  std::string metric;
  double value = 0.0;
  double wall_time_s = 0.0;
};

struct TraceRow {
  std::string policy;
  int replicate = 0;
  long t = 0;
  double regret_step = 0.0;
  double regret_cum = 0.0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<TraceRow> trace;  // dynamic runs only

  void write_results_csv(std::ostream& out) const;
  void write_trace_csv(std::ostream& out) const;
  static std::vector<ResultRow> read_results_csv(std::istream& in);
  static std::vector<TraceRow> read_trace_csv(std::istream& in);
};

// Static recovery experiment: FGD vs per-type MLE RMSE per grid point
// and replicate.
ResultTable run_static(const ExperimentSpec& spec);

// RMSE indexed by observations per row for square problems.
ResultTable run_rmse_per_row(const ExperimentSpec& spec);

// Dynamic regret experiment across policies with a shared arrival
// stream per replicate. stop_flag, when set, checkpoints unfinished
// cells under <output_dir>/checkpoints and returns early.
ResultTable run_dynamic(const ExperimentSpec& spec,
                        const std::atomic<bool>* stop_flag = nullptr);

// CSV always; optionally an SVG line chart per metric family.
enum class ReportFormat { kCsv, kSvg };
std::vector<std::filesystem::path> emit_report(const ResultTable& table,
                                               const ExperimentSpec& spec,
                                               ReportFormat format,
                                               const std::filesystem::path& dir);

// Minimal SVG line chart. One polyline per series; optional log-scaled x.
struct ChartSeries {
  std::string label;
  std::vector<double> x, y;
};
std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label, const std::vector<ChartSeries>& series,
                              bool log_x);

// Instance file round-trip (JSON).
void write_instance_json(std::ostream& out, const Instance& instance);
Instance read_instance_json(std::istream& in);

}  // namespace assortmax
