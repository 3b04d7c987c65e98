#include <doctest.h>

#include <Eigen/SVD>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "assortmax/estimator.hpp"
#include "assortmax/simlab.hpp"

using namespace assortmax;

namespace {

// Minimal XML well-formedness scan: matching open/close tags, quoted
// attributes, single root.
bool xml_well_formed(const std::string& text) {
  std::vector<std::string> stack;
  std::size_t pos = text.find('<');
  int roots = 0;
  while (pos != std::string::npos) {
    std::size_t end = text.find('>', pos);
    if (end == std::string::npos) return false;
    std::string tag = text.substr(pos + 1, end - pos - 1);
    if (!tag.empty() && tag.front() == '?') {
      // declaration
    } else if (!tag.empty() && tag.front() == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
    } else if (!tag.empty() && tag.back() == '/') {
      if (stack.empty()) ++roots;
    } else if (!tag.empty()) {
      std::string name = tag.substr(0, tag.find_first_of(" \t\n"));
      if (stack.empty()) ++roots;
      stack.push_back(name);
    }
    pos = text.find('<', end);
  }
  return stack.empty() && roots >= 1;
}

std::string results_csv(const ResultTable& table) {
  std::ostringstream out;
  table.write_results_csv(out);
  return out.str();
}

std::string trace_csv(const ResultTable& table) {
  std::ostringstream out;
  table.write_trace_csv(out);
  return out.str();
}

ExperimentSpec tiny_dynamic_spec() {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::kDynamicRegret;
  spec.experiment_id = "tiny-dynamic";
  spec.grid.push_back(GridPoint{3, 6, 1, 2, 0, 500});
  spec.policies = {PolicyKind::kOracle, PolicyKind::kNucNorm, PolicyKind::kStructureIgnorant};
  spec.replicates = 2;
  spec.seed = 7;
  spec.C = 0.3;
  spec.output_dir = "/tmp/assortmax_test_dynamic";
  return spec;
}

}  // namespace

TEST_CASE("revenue rule parsing round-trips") {
  for (const std::string& text : {"uniform01", "constant1", "lognormal(0.25)"}) {
    RevenueRule rule = RevenueRule::parse(text);
    CHECK(RevenueRule::parse(rule.to_string()).kind == rule.kind);
  }
  CHECK_THROWS_AS(RevenueRule::parse("pareto"), InvalidInput);
  CHECK_THROWS_AS(RevenueRule::parse("lognormal(-1)"), InvalidInput);
}

TEST_CASE("generated instances satisfy the construction invariants") {
  Rng rng(301);
  for (int trial = 0; trial < 10; ++trial) {
    int m = 5 + static_cast<int>(rng.next_below(20));
    int n = 5 + static_cast<int>(rng.next_below(20));
    int r = 1 + static_cast<int>(rng.next_below(3));
    Instance instance = generate_instance(m, n, r, 3, RevenueRule{}, rng);
    CHECK(entry_rms(instance.theta_star) == doctest::Approx(1.0).epsilon(1e-9));
    Eigen::VectorXd sv = Eigen::BDCSVD<Eigen::MatrixXd>(instance.theta_star).singularValues();
    CHECK(tail_singular_sum(instance.theta_star, r) <= 1e-9 * sv[0]);
    CHECK((instance.mu_star.array() == 1.0 / m).all());
    CHECK(instance.W.minCoeff() >= 0.0);
    CHECK(instance.W.maxCoeff() <= 1.0);
  }
  SUBCASE("full rank keeps the whole draw") {
    Rng a(11), b(11);
    Instance full = generate_instance(6, 6, 6, 2, RevenueRule{}, a);
    // same stream, manual reconstruction
    Eigen::MatrixXd theta0(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) theta0(i, j) = b.next_normal();
    theta0 /= entry_rms(theta0);
    CHECK((full.theta_star - theta0).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("invalid ranks are rejected") {
    Rng a(13);
    CHECK_THROWS_AS(generate_instance(4, 6, 5, 2, RevenueRule{}, a), InvalidInput);
    CHECK_THROWS_AS(generate_instance(4, 6, 0, 2, RevenueRule{}, a), InvalidInput);
  }
}

TEST_CASE("spec JSON is strict and round-trips") {
  ExperimentSpec spec = tiny_dynamic_spec();
  std::string text = spec.to_json_text();
  ExperimentSpec back = ExperimentSpec::from_json_text(text);
  CHECK(back.kind == spec.kind);
  CHECK(back.experiment_id == spec.experiment_id);
  REQUIRE(back.grid.size() == 1);
  CHECK(back.grid[0].m == 3);
  CHECK(back.grid[0].T == 500);
  CHECK(back.policies == spec.policies);
  CHECK(back.replicates == 2);
  CHECK(back.seed == 7);
  CHECK(back.C == spec.C);
  CHECK(back.to_json_text() == text);

  CHECK_THROWS_WITH_AS(ExperimentSpec::from_json_text("{\"kind\":\"static-rmse\",\"gird\":[]}"),
                       doctest::Contains("unknown key"), InvalidInput);
  CHECK_THROWS_AS(ExperimentSpec::from_json_text("not json"), InvalidInput);
  // N = 0 static grid point rejected
  CHECK_THROWS_AS(ExperimentSpec::from_json_text(
                      "{\"kind\":\"static-rmse\",\"grid\":[{\"m\":4,\"n\":4,\"r\":1,\"K\":2}]}"),
                  InvalidInput);
}

TEST_CASE("spec validation catches structural mistakes") {
  ExperimentSpec spec = tiny_dynamic_spec();
  spec.policies.clear();
  CHECK_THROWS_AS(spec.validate(), InvalidInput);

  ExperimentSpec square;
  square.kind = ExperimentKind::kRmseVsPerRow;
  square.grid.push_back(GridPoint{4, 6, 1, 2, 100, 0});
  CHECK_THROWS_AS(square.validate(), InvalidInput);
}

TEST_CASE("result and trace CSV round-trips") {
  ResultTable table;
  table.rows.push_back(ResultRow{"exp", GridPoint{3, 6, 1, 2, 0, 500}, 0, "rmse_fgd",
                                 0.12345678901234567, 1.5});
  table.rows.push_back(ResultRow{"exp", GridPoint{3, 6, 1, 2, 0, 500}, 1,
                                 "regret_cum:nuc-norm", 42.25, 0.75});
  table.trace.push_back(TraceRow{"nuc-norm", 0, 100, 0.5, 12.5});
  table.trace.push_back(TraceRow{"oracle", 1, 200, 0.0, 0.0});

  std::istringstream rin(results_csv(table));
  auto rows = ResultTable::read_results_csv(rin);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].metric == "rmse_fgd");
  CHECK(rows[0].value == table.rows[0].value);
  CHECK(rows[0].grid.T == 500);
  CHECK(rows[1].replicate == 1);

  std::istringstream tin(trace_csv(table));
  auto trace = ResultTable::read_trace_csv(tin);
  REQUIRE(trace.size() == 2);
  CHECK(trace[0].policy == "nuc-norm");
  CHECK(trace[0].regret_cum == 12.5);
  CHECK(trace[1].t == 200);

  std::istringstream bad("wrong,header\n");
  CHECK_THROWS_AS(ResultTable::read_results_csv(bad), InvalidInput);
}

TEST_CASE("static runs report the expected metrics") {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::kStaticRmse;
  spec.experiment_id = "tiny-static";
  spec.grid.push_back(GridPoint{6, 6, 1, 2, 400, 0});
  spec.replicates = 2;
  spec.seed = 21;
  ResultTable table = run_static(spec);
  REQUIRE(table.rows.size() == 6);
  int zero_rows = 0;
  for (const ResultRow& row : table.rows) {
    CHECK(std::isfinite(row.value));
    CHECK(row.value >= 0.0);
    if (row.metric == "rmse_zero") {
      ++zero_rows;
      // unit entry normalization makes the zero baseline exactly 1
      CHECK(row.value == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  CHECK(zero_rows == 2);
}

TEST_CASE("per-row runs require the matching kind") {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::kStaticRmse;
  spec.grid.push_back(GridPoint{4, 4, 1, 2, 100, 0});
  CHECK_THROWS_AS(run_rmse_per_row(spec), InvalidInput);
  spec.kind = ExperimentKind::kRmseVsPerRow;
  ResultTable table = run_rmse_per_row(spec);
  REQUIRE(table.rows.size() == 1);
  CHECK(table.rows[0].metric == "rmse_fgd");
}

TEST_CASE("per-row error is nonincreasing in observations per row") {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::kRmseVsPerRow;
  spec.grid.push_back(GridPoint{12, 12, 1, 3, 120, 0});
  spec.grid.push_back(GridPoint{12, 12, 1, 3, 480, 0});
  spec.grid.push_back(GridPoint{12, 12, 1, 3, 1920, 0});
  spec.replicates = 3;
  spec.seed = 77;
  spec.threads = 3;
  ResultTable table = run_rmse_per_row(spec);
  std::map<int, std::vector<double>> by_n;
  for (const ResultRow& row : table.rows)
    if (row.metric == "rmse_fgd") by_n[row.grid.N].push_back(row.value);
  auto med = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  REQUIRE(by_n.size() == 3);
  CHECK(med(by_n[120]) >= med(by_n[480]));
  CHECK(med(by_n[480]) >= med(by_n[1920]));
}

TEST_CASE("dynamic runs: oracle flat, metrics per policy, determinism") {
  ExperimentSpec spec = tiny_dynamic_spec();
  ResultTable table = run_dynamic(spec);

  SUBCASE("oracle trace is identically zero and regret rows nonnegative") {
    int oracle_points = 0;
    for (const TraceRow& row : table.trace) {
      if (row.policy == "oracle") {
        ++oracle_points;
        CHECK(row.regret_step == 0.0);
        CHECK(row.regret_cum == 0.0);
      }
      if (row.policy != "revenue-impact") CHECK(row.regret_step >= -1e-12);
    }
    CHECK(oracle_points > 0);
  }
  SUBCASE("cumulative regret is nondecreasing per policy and replicate") {
    std::map<std::pair<std::string, int>, double> last;
    for (const TraceRow& row : table.trace) {
      if (row.policy == "revenue-impact") continue;
      auto key = std::make_pair(row.policy, row.replicate);
      auto it = last.find(key);
      if (it != last.end()) CHECK(row.regret_cum >= it->second - 1e-12);
      last[key] = row.regret_cum;
    }
  }
  SUBCASE("per-policy metric rows present for each replicate") {
    std::set<std::string> metrics;
    for (const ResultRow& row : table.rows) metrics.insert(row.metric);
    for (const std::string& name : {"oracle", "nuc-norm", "structure-ignorant"}) {
      CHECK(metrics.count("regret_cum:" + name) == 1);
      CHECK(metrics.count("explore_count:" + name) == 1);
      CHECK(metrics.count("refit_count:" + name) == 1);
      CHECK(metrics.count("exploit_match_rate:" + name) == 1);
    }
  }
  SUBCASE("repeat run is byte-identical") {
    ResultTable again = run_dynamic(spec);
    CHECK(results_csv(again) == results_csv(table));
    CHECK(trace_csv(again) == trace_csv(table));
  }
  SUBCASE("thread count does not change the bytes") {
    ExperimentSpec threaded = spec;
    threaded.threads = 4;
    ResultTable par = run_dynamic(threaded);
    CHECK(results_csv(par) == results_csv(table));
    CHECK(trace_csv(par) == trace_csv(table));
  }
}

TEST_CASE("dynamic runs emit the paired revenue-impact series") {
  ExperimentSpec spec = tiny_dynamic_spec();
  ResultTable table = run_dynamic(spec);
  int impact_points = 0;
  for (const TraceRow& row : table.trace)
    if (row.policy == "revenue-impact") ++impact_points;
  CHECK(impact_points > 0);
}

TEST_CASE("line charts are well-formed with one polyline per series") {
  std::vector<ChartSeries> series(3);
  for (int s = 0; s < 3; ++s) {
    series[s].label = "series-" + std::to_string(s);
    for (int k = 1; k <= 50; ++k) {
      series[s].x.push_back(k);
      series[s].y.push_back(std::sqrt(static_cast<double>(k)) * (s + 1));
    }
  }
  std::string svg = render_line_chart("demo", "t", "value", series, true);
  CHECK(xml_well_formed(svg));
  std::size_t count = 0, pos = 0;
  while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
    ++count;
    pos += 9;
  }
  CHECK(count == 3);
}

TEST_CASE("emit_report writes CSVs and charts that round-trip") {
  ExperimentSpec spec = tiny_dynamic_spec();
  spec.replicates = 1;
  ResultTable table = run_dynamic(spec);
  auto files = emit_report(table, spec, ReportFormat::kSvg, "/tmp/assortmax_test_report");
  REQUIRE(files.size() == 3);

  std::ifstream rin(files[0]);
  auto rows = ResultTable::read_results_csv(rin);
  CHECK(rows.size() == table.rows.size());
  std::ifstream tin(files[1]);
  auto trace = ResultTable::read_trace_csv(tin);
  CHECK(trace.size() == table.trace.size());

  std::ifstream svg_in(files[2]);
  std::stringstream svg;
  svg << svg_in.rdbuf();
  CHECK(xml_well_formed(svg.str()));
  // one polyline per distinct policy in the trace (incl. revenue-impact)
  std::set<std::string> policies;
  for (const TraceRow& row : table.trace) policies.insert(row.policy);
  std::size_t count = 0, pos = 0;
  while ((pos = svg.str().find("<polyline", pos)) != std::string::npos) {
    ++count;
    pos += 9;
  }
  CHECK(count == policies.size());

  CHECK_THROWS_AS(emit_report(ResultTable{}, spec, ReportFormat::kCsv, "/tmp/assortmax_empty"),
                  InvalidInput);
}

TEST_CASE("instance JSON round-trips") {
  Rng rng(307);
  Instance instance = generate_instance(4, 7, 2, 3, RevenueRule::parse("lognormal(0.4)"), rng);
  std::stringstream buffer;
  write_instance_json(buffer, instance);
  Instance back = read_instance_json(buffer);
  CHECK(back.m == 4);
  CHECK(back.n == 7);
  CHECK(back.K == 3);
  CHECK((back.W - instance.W).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.theta_star - instance.theta_star).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.mu_star - instance.mu_star).cwiseAbs().maxCoeff() == 0.0);
}
