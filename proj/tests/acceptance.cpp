// SPDX-License-Identifier: Apache-2.0
// Acceptance checks. Prints one PASS/FAIL line per criterion; with no
// --criterion flag every criterion runs in order. Criteria 6 and 8 reuse the
// runs criterion 4 leaves in the runs directory and redo them when absent.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include "increg/bench.hpp"
#include "increg/compaction.hpp"
#include "increg/config.hpp"
#include "increg/dataset.hpp"
#include "increg/experiment.hpp"
#include "increg/gradcheck.hpp"
#include "increg/scheduler.hpp"
#include "increg/theorem.hpp"

namespace {

using namespace increg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

const fs::path kConfigs = INCREG_CONFIG_DIR;
const fs::path kFixtures = INCREG_FIXTURE_DIR;
fs::path g_runs = INCREG_RUNS_DIR;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------

Verdict punishment_suite() {
  const auto t0 = Clock::now();
  bool ok = true;
  ok &= delta_lambda(0.0, 0.5, 10, 0.001) == 0.001;
  ok &= delta_lambda(5.0, 0.5, 10, 0.001) == 0.0;
  ok &= delta_lambda(9.0, 0.5, 10, 0.001) == -0.001;
  double worst_gap = 0.0;
  bool monotone = true;
  for (std::size_t g : {4u, 10u, 33u, 256u})
    for (double r : {0.2, 0.5, 0.75}) {
      const double a = 0.05, pivot = r * static_cast<double>(g);
      ok &= delta_lambda(0.0, r, g, a) == a;
      if (static_cast<double>(g) * (1.0 - r) - 1.0 > 0.0) ok &= delta_lambda(g - 1.0, r, g, a) == -a;
      const double eps = 1e-12;
      if (pivot + eps <= g - 1.0) {
        worst_gap = std::max(worst_gap, std::abs(delta_lambda(pivot - eps, r, g, a) -
                                                 delta_lambda(pivot + eps, r, g, a)));
      }
      double prev = INFINITY;
      for (int k = 0; k < 1000; ++k) {
        const double d = delta_lambda((g - 1.0) * k / 999.0, r, g, a);
        monotone &= d <= prev;
        prev = d;
      }
    }
  const double secs = seconds_since(t0);
  const bool pass = ok && monotone && worst_gap < 1e-12 && secs < 1.0;
  return {pass, fmt("endpoints %s, continuity gap %.2e, monotone %s, %.3f s", ok ? "exact" : "WRONG",
                    worst_gap, monotone ? "yes" : "no", secs)};
}

Verdict theorem_reproduction() {
  const auto t0 = Clock::now();
  std::map<std::string, int> signs;  // family -> bit set of signs covered
  bool all_ok = true;
  double worst_gap = 0.0, worst_closed = 0.0;
  for (const SweepCase& c : theorem_suite()) {
    const MinimumTrace t = sweep_lambda(c.loss, c.lambda_start, c.lambda_end, c.steps, c.bracket);
    const TraceCheck chk = check_trace(t);
    const bool ok = !t.truncated && chk.strictly_decreasing && chk.max_abs_y1 < 1e-10 &&
                    chk.min_y2 > 0.0 && t.points.size() == c.steps;
    all_ok &= ok;
    worst_gap = std::max(worst_gap, chk.max_identity_gap);
    if (c.loss.name.rfind("quadratic", 0) == 0) {
      for (const auto& p : t.points)
        worst_closed = std::max(worst_closed, std::abs(p.omega - c.sign / (1.0 + p.lambda)));
    }
    std::string family = c.loss.name.substr(0, c.loss.name.size() - 1);
    if (ok) signs[family] |= c.sign > 0 ? 1 : 2;
  }
  int families = 0;
  for (const auto& [name, bits] : signs) families += bits == 3;
  const double secs = seconds_since(t0);
  const bool pass = all_ok && families >= 5 && worst_gap < 1e-8 && worst_closed < 1e-10 && secs < 10.0;
  return {pass, fmt("%d families with both signs, identity gap %.2e, quadratic closed-form error %.2e, %.2f s",
                    families, worst_gap, worst_closed, secs)};
}

Verdict gradient_check() {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_config(kConfigs / "toy_row.json");
  const CifarSplit split = load_datasets(cfg);
  Network<double> net(cfg.network, cfg.seed);
  std::vector<std::size_t> idx(cfg.gradcheck_batch);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Tensor<double> images;
  std::vector<int> labels;
  gather_batch(split.train, idx, images, labels);
  GradCheckOptions opts;
  opts.step = cfg.gradcheck_step;
  const GradCheckReport rep = grad_check(net, images, labels, opts);
  std::size_t checked = 0;
  for (const auto& l : rep.layers) checked += l.checked;
  const double secs = seconds_since(t0);
  const bool pass = rep.max_rel_error < 1e-6 && net.parameter_count() <= 10000 &&
                    net.spec().conv_layers().size() == 2 && secs < 60.0;
  return {pass, fmt("%zu parameters (%zu probed), max relative error %.2e, %.1f s",
                    net.parameter_count(), checked, rep.max_rel_error, secs)};
}

// ---------------------------------------------------------------------------
// Criterion-4 runs and their on-disk cache.

void save_masks(const MaskSet& masks, const fs::path& path) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& m : masks) {
    const Shape4& s = m.partition.weight_shape();
    std::vector<std::size_t> pruned;
    for (std::size_t g = 0; g < m.mask.group_count(); ++g)
      if (m.mask.pruned(g)) pruned.push_back(g);
    j.push_back({{"layer", m.partition.layer_id()},
                 {"type", std::string(to_string(m.partition.type()))},
                 {"shape", {s.n, s.c, s.h, s.w}},
                 {"pruned", pruned}});
  }
  std::ofstream(path) << j.dump() << '\n';
}

MaskSet load_masks(const fs::path& path) {
  const auto j = nlohmann::json::parse(slurp(path));
  MaskSet out;
  for (const auto& e : j) {
    const auto sh = e["shape"].get<std::vector<std::size_t>>();
    GroupPartition p = partition(e["layer"].get<std::size_t>(), Shape4{sh[0], sh[1], sh[2], sh[3]},
                                 parse_group_type(e["type"].get<std::string>()));
    GroupMask m(p.group_count());
    for (std::size_t g : e["pruned"].get<std::vector<std::size_t>>()) m.prune(g);
    out.push_back(LayerMask{p, m});
  }
  return out;
}

struct CachedRun {
  Network<float> masked;
  MaskSet masks;
};

// Runs `config` into `dir`: the usual run outputs plus the masked dense
// model and its masks for later criteria.
RunRecord fresh_run(const std::string& config, const fs::path& dir) {
  ExperimentConfig cfg = load_config(kConfigs / (config + ".json"));
  cfg.output_dir = dir;
  RunRecord rec = run_experiment(cfg);
  fs::remove_all(dir);
  write_run_outputs(rec, dir);
  write_compact_model(*rec.model, dir / "masked_model.bin");
  save_masks(rec.masks, dir / "masks.json");
  return rec;
}

CachedRun cached_run(const std::string& config) {
  const fs::path dir = g_runs / config;
  if (!fs::exists(dir / "masked_model.bin") || !fs::exists(dir / "masks.json")) {
    std::printf("  (no cached %s run, running it)\n", config.c_str());
    std::fflush(stdout);
    fresh_run(config, dir);
  }
  return {read_compact_model(dir / "masked_model.bin"), load_masks(dir / "masks.json")};
}

Verdict scheduler_completion() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::string detail;
  for (const std::string config : {"toy_row", "toy_column"}) {
    const RunRecord rec = fresh_run(config, g_runs / config);
    bool reached = rec.complete;
    std::string counts;
    for (const auto& l : rec.layers) {
      reached &= l.reached && l.pruned >= l.target;
      counts += fmt(" %s %zu/%zu>=%zu", l.name.c_str(), l.pruned, l.groups, l.target);
    }
    bool lambda_ok = true, monotone = true;
    std::vector<double> prev(rec.layer_names.size(), 0.0);
    for (const IterationRow& r : rec.rows) {
      for (std::size_t l = 0; l < prev.size(); ++l) {
        lambda_ok &= r.lambda_min[l] >= 0.0;
        monotone &= r.sparsity[l] >= prev[l];
        prev[l] = r.sparsity[l];
      }
    }
    pass &= reached && lambda_ok && monotone;
    detail += fmt("%s%s: %lld iters,%s, lambda>=0 %s, monotone %s", detail.empty() ? "" : "; ",
                  config.c_str(), static_cast<long long>(rec.prune_iterations), counts.c_str(),
                  lambda_ok ? "yes" : "no", monotone ? "yes" : "no");
  }
  const double secs = seconds_since(t0);
  pass &= secs < 300.0;
  return {pass, detail + fmt("; %.0f s", secs)};
}

Verdict incremental_vs_constant() {
  const auto t0 = Clock::now();
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto run = [&](const std::string& config) {
      ExperimentConfig cfg = load_config(kConfigs / (config + ".json"));
      cfg.seed = seed;
      cfg.data_seed = seed;
      return run_experiment(cfg);
    };
    const RunRecord inc = run("toy_row_75");
    const RunRecord con = run("toy_row_75_constant");
    const bool win = inc.accuracy_retrained >= con.accuracy_retrained;
    wins += win;
    auto sp = [](const RunRecord& r) {
      const auto a = r.achieved_sparsity();
      return std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    };
    detail += fmt("%sseed %llu %.3f%s vs %.3f%s", detail.empty() ? "" : ", ",
                  static_cast<unsigned long long>(seed), inc.accuracy_retrained,
                  inc.complete ? "" : "(incomplete)", con.accuracy_retrained,
                  con.complete ? "" : "(incomplete)");
    std::printf("  seed %llu: increg %.4f (sparsity %.3f, %lld iters) constant %.4f (sparsity %.3f, %lld iters)\n",
                static_cast<unsigned long long>(seed), inc.accuracy_retrained, sp(inc),
                static_cast<long long>(inc.prune_iterations), con.accuracy_retrained, sp(con),
                static_cast<long long>(con.prune_iterations));
    std::fflush(stdout);
  }
  const double secs = seconds_since(t0);
  return {wins >= 4 && secs < 1800.0,
          fmt("increg >= constant in %d/5 seeds (", wins) + detail + fmt("), %.0f s", secs)};
}

Verdict compaction_equivalence() {
  bool pass = true;
  std::string detail;
  double check_secs = 0.0;
  for (const std::string config : {"toy_row", "toy_column"}) {
    CachedRun run = cached_run(config);
    const auto t0 = Clock::now();
    CompactModel<float> compact = build_compact(run.masked, run.masks);
    const EquivalenceReport rep = equivalence_check(run.masked, compact.model, 100, 1e-5, 2024);
    check_secs += seconds_since(t0);
    pass &= rep.passed && rep.inputs == 100;
    detail += fmt("%s%s max |diff| %.2e (%zu -> %zu params)", detail.empty() ? "" : "; ",
                  config.c_str(), rep.max_abs_diff, run.masked.parameter_count(),
                  compact.model.parameter_count());
  }
  pass &= check_secs < 60.0;
  return {pass, detail + fmt("; %.2f s", check_secs)};
}

Verdict speedup_structure() {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_config(kConfigs / "bench.json");
  const BenchShape shape = cfg.bench_shapes.empty() ? BenchShape{256, 2304, 3136} : cfg.bench_shapes[0];
  BenchOptions opts;
  opts.reps = cfg.bench_reps;
  opts.batch = cfg.bench_batch;
  opts.seed = cfg.seed;
  const std::vector<double> sparsities{0.0, 0.25, 0.5, 0.75};
  std::vector<BenchRow> rows;
  for (double s : sparsities) {
    rows.push_back(bench_layer(shape, s, GroupType::kRow, opts, fmt("%zux%zux%zu", shape.rows, shape.cols, shape.positions)));
    std::printf("  sparsity %.2f: dense %.3f ms, compact %.3f ms, %.2fx\n", s, rows.back().dense_ms,
                rows.back().compact_ms, rows.back().speedup);
    std::fflush(stdout);
  }
  fs::create_directories(g_runs / "bench");
  std::ofstream(g_runs / "bench" / "bench.csv") << bench_csv(rows);
  bool monotone = true;
  for (std::size_t i = 1; i < rows.size(); ++i) monotone &= rows[i].speedup >= 0.95 * rows[i - 1].speedup;
  const double secs = seconds_since(t0);
  const bool pass = rows[2].speedup >= 1.2 && monotone && secs < 300.0;
  std::string curve;
  for (const auto& r : rows) curve += fmt("%s%.2f", curve.empty() ? "" : "/", r.speedup);
  return {pass, fmt("row speedups %s at sparsity 0/0.25/0.5/0.75, monotone within 5%% %s, %.0f s",
                    curve.c_str(), monotone ? "yes" : "no", secs)};
}

Verdict determinism() {
  const auto t0 = Clock::now();
  const fs::path first = g_runs / "toy_row";
  if (!fs::exists(first / "run_record.csv")) fresh_run("toy_row", first);
  const fs::path second = g_runs / "toy_row_repeat";
  fresh_run("toy_row", second);
  const bool csv_same = slurp(first / "run_record.csv") == slurp(second / "run_record.csv");
  const bool events_same = slurp(first / "events.jsonl") == slurp(second / "events.jsonl");
  const auto bytes = fs::file_size(first / "run_record.csv");
  return {csv_same && events_same,
          fmt("toy_row twice: run_record.csv %s (%ju bytes), events.jsonl %s, %.0f s",
              csv_same ? "identical" : "DIFFERS", static_cast<std::uintmax_t>(bytes),
              events_same ? "identical" : "DIFFERS", seconds_since(t0))};
}

Verdict cifar_ingestion() {
  const auto t0 = Clock::now();
  const fs::path path = kFixtures / "cifar_fixture.bin";
  const std::string raw = slurp(path);
  const std::vector<std::uint8_t> bytes(raw.begin(), raw.end());
  const Dataset d = load_cifar10_file(path);
  std::vector<std::uint8_t> back;
  for (std::size_t i = 0; i < d.size(); ++i) {
    back.push_back(static_cast<std::uint8_t>(d.labels[i]));
    for (float p : d.sample(i)) back.push_back(static_cast<std::uint8_t>(std::lround(p * 255.0f)));
  }
  bool known = true;
  for (std::size_t i = 0; i < d.size(); ++i) {
    known &= d.labels[i] == static_cast<int>((3 * i + 1) % 10);
    for (std::size_t j = 0; j < 3072; ++j)
      known &= d.sample(i)[j] == static_cast<float>((7 * i + 13 * j) % 256) / 255.0f;
  }
  auto rejects = [&](std::size_t n) {
    try {
      parse_cifar10(std::span<const std::uint8_t>(bytes.data(), n));
    } catch (const FormatError&) {
      return true;
    }
    return false;
  };
  const bool malformed = rejects(kCifarRecordBytes + 7) && rejects(3 * kCifarRecordBytes - 1) && rejects(0);
  const double secs = seconds_since(t0);
  return {back == bytes && known && malformed && secs < 1.0,
          fmt("%zu records, round trip %s, known bytes %s, malformed sizes rejected %s, %.3f s", d.size(),
              back == bytes ? "bit-exact" : "DIFFERS", known ? "match" : "MISMATCH",
              malformed ? "yes" : "no", secs)};
}

const std::vector<std::pair<const char*, std::function<Verdict()>>> kCriteria{
    {"punishment function", punishment_suite},
    {"scalar theorem sweeps", theorem_reproduction},
    {"gradient check", gradient_check},
    {"scheduler completion", scheduler_completion},
    {"increg vs constant at 0.75", incremental_vs_constant},
    {"compaction equivalence", compaction_equivalence},
    {"speedup structure", speedup_structure},
    {"determinism", determinism},
    {"cifar ingestion", cifar_ingestion},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int only = 0;
  std::string runs;
  app.add_option("--criterion", only, "Run a single criterion (1-9)")->check(CLI::Range(1, 9));
  app.add_option("--runs", runs, "Directory for run outputs");
  CLI11_PARSE(app, argc, argv);
  if (!runs.empty()) g_runs = runs;
  fs::create_directories(g_runs);

  int failures = 0;
  for (std::size_t i = 0; i < kCriteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i + 1) != only) continue;
    Verdict v;
    try {
      v = kCriteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("criterion %zu %s: %s  %s\n", i + 1, v.pass ? "PASS" : "FAIL", kCriteria[i].first,
                v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
