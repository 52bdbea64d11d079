// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "increg/config.hpp"
#include "increg/experiment.hpp"

using namespace increg;
using nlohmann::json;

namespace {

json small_config() {
  return json{{"dataset", "synthetic"},
              {"synthetic_samples_per_class", 40},
              {"synthetic_noise", 0.35},
              {"layers", {"conv 4 3 1 1", "relu", "pool 2", "conv 6 3 1 1", "relu", "pool 2", "fc 4"}},
              {"group_type", "row"},
              {"prune_ratio", 0.5},
              {"weight_decay", 0.0005},
              {"max_increment", 0.05},
              {"pretrain_learning_rate", 0.05},
              {"learning_rate", 0.01},
              {"batch_size", 16},
              {"seed", 3},
              {"pretrain_iters", 100},
              {"prune_iter_cap", 600},
              {"retrain_iters", 30}};
}

std::vector<double> column(const std::string& csv, const std::string& name) {
  std::istringstream in(csv);
  std::string line, cell;
  std::getline(in, line);
  std::istringstream head(line);
  std::size_t idx = 0, want = SIZE_MAX;
  for (; std::getline(head, cell, ','); ++idx)
    if (cell == name) want = idx;
  REQUIRE(want != SIZE_MAX);
  std::vector<double> out;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    for (std::size_t i = 0; std::getline(row, cell, ','); ++i)
      if (i == want) out.push_back(std::stod(cell));
  }
  return out;
}

std::filesystem::path fixture(const char* name) { return std::filesystem::path(INCREG_FIXTURE_DIR) / name; }

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("experiment-cli") {

TEST_CASE("config defaults and validation") {
  json j = small_config();
  j.erase("max_increment");
  CHECK(parse_config(j).scheduler.max_increment == doctest::Approx(0.00025));
  CHECK(parse_config(j).scheduler.threshold == 1e-6);

  j = small_config();
  j["prune_ratio"] = 1.0;
  CHECK_THROWS_WITH_AS(parse_config(j), doctest::Contains("prune_ratio"), ConfigError);
  j = small_config();
  j["learning_rat"] = 0.1;
  CHECK_THROWS_WITH_AS(parse_config(j), doctest::Contains("learning_rat"), ConfigError);
  j = small_config();
  j.erase("seed");
  CHECK_THROWS_WITH_AS(parse_config(j), doctest::Contains("seed"), ConfigError);
  j = small_config();
  j["layers"] = {"conv 4 3", "fc 4", "relu"};
  CHECK_THROWS_AS(parse_config(j), ConfigError);
  j = small_config();
  j["scheduler"] = "constant";
  CHECK_THROWS_WITH_AS(parse_config(j), doctest::Contains("constant_lambda"), ConfigError);
}

TEST_CASE("ratio rule allocates per-layer ratios from FLOP shares") {
  // Equal FLOPs: keeps s, 1.5s, 2s with 4.5s = 3/2, so s = 1/3.
  const auto r = allocate_ratios("1:1.5:2", {0, 1, 2}, {1.0, 1.0, 1.0}, 2.0);
  CHECK(r[0] == doctest::Approx(2.0 / 3.0));
  CHECK(r[1] == doctest::Approx(0.5));
  CHECK(r[2] == doctest::Approx(1.0 / 3.0));
  // Unequal FLOPs: the kept FLOP fraction is still 1/speedup.
  const std::vector<double> flops{4.0, 2.0, 1.0};
  const auto q = allocate_ratios("1:2", {0, 1, 1}, flops, 1.5);
  double kept = 0.0;
  for (std::size_t l = 0; l < 3; ++l) kept += flops[l] * (1.0 - q[l]);
  CHECK(kept == doctest::Approx(7.0 / 1.5));
  CHECK_THROWS_AS(allocate_ratios("1:x", {0}, {1.0}, 2.0), ConfigError);
  CHECK_THROWS_AS(allocate_ratios("1:10", {0, 1}, {1.0, 1.0}, 1.2), ConfigError);
}

TEST_CASE("CIFAR fixture loads with the known bytes and round-trips") {
  const auto bytes = read_bytes(fixture("cifar_fixture.bin"));
  REQUIRE(bytes.size() == 4 * kCifarRecordBytes);
  const Dataset d = load_cifar10_file(fixture("cifar_fixture.bin"));
  REQUIRE(d.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(d.labels[i] == static_cast<int>((3 * i + 1) % 10));
    for (std::size_t j = 0; j < 3072; j += 97)
      CHECK(d.sample(i)[j] == static_cast<float>((7 * i + 13 * j) % 256) / 255.0f);
  }
  std::vector<std::uint8_t> back;
  for (std::size_t i = 0; i < d.size(); ++i) {
    back.push_back(static_cast<std::uint8_t>(d.labels[i]));
    for (float p : d.sample(i)) back.push_back(static_cast<std::uint8_t>(std::lround(p * 255.0f)));
  }
  CHECK(back == bytes);
}

TEST_CASE("malformed CIFAR batches are rejected") {
  auto bytes = read_bytes(fixture("cifar_fixture.bin"));
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + kCifarRecordBytes + 7);
  CHECK_THROWS_AS(parse_cifar10(truncated), FormatError);
  CHECK_THROWS_AS(parse_cifar10(std::vector<std::uint8_t>{}), FormatError);
  bytes[kCifarRecordBytes] = 10;
  CHECK_THROWS_AS(parse_cifar10(bytes), FormatError);
  CHECK_THROWS_AS(load_cifar10_file(fixture("missing.bin")), FormatError);
}

TEST_CASE("synthetic data is a function of the seed") {
  SyntheticSpec s;
  s.samples_per_class = 10;
  const Dataset a = make_synthetic(s, 4), b = make_synthetic(s, 4), c = make_synthetic(s, 5);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  CHECK(a.pixels != c.pixels);
  CHECK(a.size() == 40);
}

TEST_CASE("a small run satisfies the logging invariants and is deterministic") {
  const ExperimentConfig cfg = parse_config(small_config());
  const RunRecord a = run_experiment(cfg);
  const RunRecord b = run_experiment(cfg);
  CHECK(run_record_csv(a) == run_record_csv(b));
  CHECK(events_jsonl(a) == events_jsonl(b));

  for (std::size_t i = 1; i < a.rows.size(); ++i) CHECK(a.rows[i].iteration > a.rows[i - 1].iteration);
  std::vector<double> prev(a.layer_names.size(), 0.0);
  for (const IterationRow& r : a.rows) {
    CHECK(r.objective >= r.loss);
    for (std::size_t l = 0; l < prev.size(); ++l) {
      CHECK(r.sparsity[l] >= prev[l]);
      CHECK(r.lambda_min[l] >= 0.0);
      CHECK(r.lambda_min[l] <= r.lambda_mean[l]);
      CHECK(r.lambda_mean[l] <= r.lambda_max[l]);
      prev[l] = r.sparsity[l];
    }
  }
  const std::string csv = run_record_csv(a);
  CHECK(csv.rfind("iteration,phase,loss,objective,conv1_sparsity,", 0) == 0);
  CHECK(column(csv, "iteration").size() == a.rows.size());
  // Pruned groups stay exactly zero in the final model.
  REQUIRE(a.model.has_value());
  for (const LayerMask& m : a.masks) {
    const auto& w = a.model->params(m.partition.layer_id()).weight.storage();
    for (std::size_t i = 0; i < w.size(); ++i)
      if (m.mask.pruned(m.partition.group_of(i))) CHECK(w[i] == 0.0f);
  }
}

TEST_CASE("constant lambda of zero never prunes") {
  json j = small_config();
  j["scheduler"] = "constant";
  j["constant_lambda"] = 0.0;
  j["prune_iter_cap"] = 50;
  const RunRecord r = run_experiment(parse_config(j));
  CHECK_FALSE(r.complete);
  for (double s : r.achieved_sparsity()) CHECK(s == 0.0);
  CHECK(r.prune_iterations == 50);
}

TEST_CASE("one-shot magnitude pruning hits the target immediately") {
  json j = small_config();
  j["scheduler"] = "oneshot-magnitude";
  const RunRecord r = run_experiment(parse_config(j));
  CHECK(r.complete);
  CHECK(r.achieved_sparsity() == r.target_sparsity());
  CHECK(r.prune_iterations == 1);
}

TEST_CASE("comparison requires matching runs") {
  json j = small_config();
  j["scheduler"] = "oneshot-magnitude";
  const RunRecord a = run_experiment(parse_config(j));
  j["prune_ratio"] = 0.25;
  const RunRecord b = run_experiment(parse_config(j));
  const auto sa = run_summary(a), sb = run_summary(b);
  const auto rows = compare_runs({sa, sa}, {"x", "y"});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].label == "x");
  CHECK(comparison_csv(rows).find("x,oneshot-magnitude,row,") != std::string::npos);
  CHECK_THROWS_AS(compare_runs({sa, sb}), ComparisonError);
  auto broken = sa;
  broken.erase("network");
  CHECK_THROWS_AS(compare_runs({sa, broken}), ComparisonError);
}

TEST_CASE("run outputs land on disk") {
  json j = small_config();
  j["scheduler"] = "oneshot-magnitude";
  const RunRecord r = run_experiment(parse_config(j));
  const auto dir = std::filesystem::temp_directory_path() / "increg_run_outputs";
  std::filesystem::remove_all(dir);
  write_run_outputs(r, dir);
  for (const char* f : {"run_record.csv", "events.jsonl", "summary.json", "compact_model.bin"})
    CHECK(std::filesystem::exists(dir / f));
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
