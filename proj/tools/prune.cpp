// SPDX-License-Identifier: Apache-2.0
// prune: command-line front end for runs, comparisons, benchmarks, the
// scalar-theorem sweeps and gradient checks.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include "increg/bench.hpp"
#include "increg/config.hpp"
#include "increg/experiment.hpp"
#include "increg/gradcheck.hpp"
#include "increg/theorem.hpp"

namespace {

using namespace increg;

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

int cmd_run(const std::string& config_path, const std::string& out_override) {
  const ExperimentConfig cfg = load_config(config_path);
  const RunRecord rec = run_experiment(cfg);
  const std::filesystem::path dir = out_override.empty() ? cfg.output_dir : std::filesystem::path(out_override);
  write_run_outputs(rec, dir);
  std::printf("run %s: %s, %s groups, %lld prune iterations\n",
              rec.complete ? "complete" : "incomplete", std::string(to_string(rec.scheduler)).c_str(),
              std::string(to_string(rec.group_type)).c_str(),
              static_cast<long long>(rec.prune_iterations));
  for (const auto& l : rec.layers) {
    std::printf("  %-8s pruned %zu/%zu (target %zu)%s\n", l.name.c_str(), l.pruned, l.groups,
                l.target, l.reached ? "" : "  NOT REACHED");
  }
  std::printf("accuracy: pretrained %.4f, pruned %.4f, retrained %.4f\n", rec.accuracy_pretrained,
              rec.accuracy_pruned, rec.accuracy_retrained);
  std::printf("outputs in %s\n", dir.string().c_str());
  return rec.complete ? 0 : 3;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& csv_path) {
  std::vector<nlohmann::ordered_json> summaries;
  std::vector<std::string> labels;
  for (const auto& d : dirs) {
    const auto path = std::filesystem::path(d) / "summary.json";
    std::ifstream in(path);
    if (!in) throw ComparisonError("compare: cannot open " + path.string());
    try {
      summaries.push_back(nlohmann::ordered_json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw ComparisonError("compare: " + path.string() + ": " + e.what());
    }
    labels.push_back(std::filesystem::path(d).filename().string());
  }
  const std::string csv = comparison_csv(compare_runs(summaries, labels));
  if (!csv_path.empty()) write_text(csv_path, csv);
  std::cout << csv;
  return 0;
}

int cmd_bench(const std::string& config_path, const std::string& mode_arg,
              const std::string& csv_override) {
  const ExperimentConfig cfg = load_config(config_path);
  std::vector<BenchShape> shapes = cfg.bench_shapes;
  if (shapes.empty()) shapes.push_back(BenchShape{256, 2304, 3136});
  std::vector<GroupType> modes;
  if (mode_arg == "both") {
    modes = {GroupType::kRow, GroupType::kColumn};
  } else if (mode_arg.empty()) {
    modes = {cfg.group_type};
  } else {
    modes = {parse_group_type(mode_arg)};
  }
  BenchOptions opts;
  opts.reps = cfg.bench_reps;
  opts.batch = cfg.bench_batch;
  opts.seed = cfg.seed;
  std::vector<BenchRow> rows;
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    const std::string id = std::to_string(shapes[s].rows) + "x" + std::to_string(shapes[s].cols) +
                           "x" + std::to_string(shapes[s].positions);
    for (GroupType mode : modes) {
      for (double sp : cfg.bench_sparsities) {
        rows.push_back(bench_layer(shapes[s], sp, mode, opts, id));
        const auto& r = rows.back();
        std::printf("%s %-6s sparsity %.2f  dense %.3f ms  compact %.3f ms  speedup %.3fx\n",
                    id.c_str(), std::string(to_string(mode)).c_str(), sp, r.dense_ms,
                    r.compact_ms, r.speedup);
        std::fflush(stdout);
      }
    }
  }
  const std::filesystem::path csv =
      csv_override.empty() ? cfg.output_dir / "bench.csv" : std::filesystem::path(csv_override);
  write_text(csv, bench_csv(rows));
  std::printf("environment: %s\nwrote %s\n", environment_note().c_str(), csv.string().c_str());
  return 0;
}

int cmd_theorem(const std::string& family, const std::string& csv_path) {
  std::vector<MinimumTrace> traces;
  bool all_ok = true;
  for (const SweepCase& c : theorem_suite()) {
    if (!family.empty() && c.loss.name.rfind(family, 0) != 0) continue;
    MinimumTrace t = sweep_lambda(c.loss, c.lambda_start, c.lambda_end, c.steps, c.bracket);
    const TraceCheck chk = check_trace(t);
    const bool ok = chk.strictly_decreasing && chk.sign_law && chk.max_identity_gap < 1e-8 &&
                    !t.truncated;
    all_ok = all_ok && ok;
    std::printf("%-20s points %3zu  |w| decreasing %-3s  identity gap %.3g  %s%s\n",
                t.family.c_str(), t.points.size(), chk.strictly_decreasing ? "yes" : "no",
                chk.max_identity_gap, ok ? "ok" : "FAIL",
                t.truncated ? ("  (" + t.diagnostic + ")").c_str() : "");
    traces.push_back(std::move(t));
  }
  if (traces.empty()) throw ConfigError("theorem: no loss family matches \"" + family + "\"");
  if (!csv_path.empty()) write_text(csv_path, trace_csv(traces));
  return all_ok ? 0 : 1;
}

int cmd_gradcheck(const std::string& config_path) {
  const ExperimentConfig cfg = load_config(config_path);
  const CifarSplit split = load_datasets(cfg);
  Network<double> net(cfg.network, cfg.seed);
  const std::size_t n = std::min(cfg.gradcheck_batch, split.train.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Tensor<double> images;
  std::vector<int> labels;
  gather_batch(split.train, idx, images, labels);
  GradCheckOptions opts;
  opts.step = cfg.gradcheck_step;
  opts.tolerance = cfg.gradcheck_tolerance;
  const GradCheckReport rep = grad_check(net, images, labels, opts);
  for (const auto& l : rep.layers) {
    std::printf("%-8s checked %6zu  kinks skipped %4zu  max rel %.3e  max abs %.3e%s\n",
                l.layer.c_str(), l.checked, l.skipped_kinks, l.max_rel_error, l.max_abs_error,
                l.flagged ? "  FLAGGED" : "");
  }
  std::printf("parameters %zu, max relative error %.3e (tolerance %.1e): %s\n",
              net.parameter_count(), rep.max_rel_error, opts.tolerance,
              rep.passed() ? "pass" : "FAIL");
  return rep.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental-regularization structured pruning"};
  app.require_subcommand(1);

  std::string config, out_dir, csv, mode, family;
  std::vector<std::string> run_dirs;

  auto* run = app.add_subcommand("run", "Pretrain, prune and retrain one configuration");
  run->add_option("config", config, "JSON config")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Override output_dir");

  auto* compare = app.add_subcommand("compare", "Tabulate finished runs");
  compare->add_option("run_dirs", run_dirs, "Run output directories")->required();
  compare->add_option("--csv", csv, "Also write the table here");

  auto* bench = app.add_subcommand("bench", "Dense vs. compacted conv GEMM timing");
  bench->add_option("config", config, "JSON config")->required()->check(CLI::ExistingFile);
  bench->add_option("--mode", mode, "row, column or both (default: config group_type)")
      ->check(CLI::IsMember({"row", "column", "both"}));
  bench->add_option("--csv", csv, "Output CSV (default: <output_dir>/bench.csv)");

  auto* theorem = app.add_subcommand("theorem", "Sweep λ on the scalar loss suite");
  theorem->add_option("--family", family, "Loss family name prefix");
  theorem->add_option("--csv", csv, "Write traces here");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of backprop");
  gradcheck->add_option("config", config, "JSON config")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, out_dir);
    if (*compare) return cmd_compare(run_dirs, csv);
    if (*bench) return cmd_bench(config, mode, csv);
    if (*theorem) return cmd_theorem(family, csv);
    if (*gradcheck) return cmd_gradcheck(config);
  } catch (const increg::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
