// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "increg/config.hpp"
#include "increg/network.hpp"
#include "increg/scheduler.hpp"

namespace increg {

class ComparisonError : public Error {
 public:
  using Error::Error;
};

enum class RunPhase { kPretrain, kPrune, kRetrain };
std::string_view to_string(RunPhase p);

/// One logged training iteration.
struct IterationRow {
  std::int64_t iteration = 0;
  RunPhase phase = RunPhase::kPrune;
  double loss = 0.0;       // L
  double objective = 0.0;  // E = L + λ/2·Σw² + Σ λ_g/2·‖W_g‖²
  std::vector<double> sparsity;    // per scheduled layer
  std::vector<double> lambda_min;  // per scheduled layer, effective λ_g
  std::vector<double> lambda_mean;
  std::vector<double> lambda_max;
};

struct LayerOutcome {
  std::string name;
  std::size_t groups = 0;
  std::size_t target = 0;
  std::size_t pruned = 0;
  bool reached = false;
};

struct RunRecord {
  SchedulerKind scheduler = SchedulerKind::kIncReg;
  GroupType group_type = GroupType::kRow;
  std::string network_fingerprint;
  std::string dataset_fingerprint;
  std::vector<std::string> layer_names;
  std::vector<IterationRow> rows;
  std::vector<SchedulerEvent> events;
  std::vector<LayerOutcome> layers;
  /// True when every scheduled layer reached its target within the cap.
  bool complete = false;
  std::int64_t prune_iterations = 0;
  double accuracy_pretrained = 0.0;
  double accuracy_pruned = 0.0;
  double accuracy_retrained = 0.0;
  double train_accuracy_pretrained = 0.0;

  /// Final weights (pruned groups exactly zero) and the masks behind them.
  std::optional<Network<float>> model;
  MaskSet masks;

  std::vector<double> target_sparsity() const;
  std::vector<double> achieved_sparsity() const;
};

/// Pretrain → prune (scheduler ticks until every layer reaches its target
/// or the cap) → finalize → retrain with frozen masks. A run that hits the
/// cap is returned with complete == false and still retrained.
RunRecord run_experiment(const ExperimentConfig& cfg);

/// Writes run_record.csv, events.jsonl, summary.json and (when the masks
/// allow it) compact_model.bin into `dir`.
void write_run_outputs(const RunRecord& record, const std::filesystem::path& dir);

std::string run_record_csv(const RunRecord& record);
std::string events_jsonl(const RunRecord& record);
nlohmann::ordered_json run_summary(const RunRecord& record);

/// Top-1 accuracy of `net` on `data`.
double evaluate_accuracy(Network<float>& net, const Dataset& data);

/// One row of a scheduler comparison.
struct ComparisonRow {
  std::string label;
  std::string scheduler;
  std::string group_type;
  double target_sparsity = 0.0;
  double achieved_sparsity = 0.0;
  bool complete = false;
  double accuracy_pruned = 0.0;
  double accuracy_retrained = 0.0;
};

/// Compares run summaries (as written to summary.json). Throws
/// ComparisonError unless all share network, dataset and target sparsity.
std::vector<ComparisonRow> compare_runs(const std::vector<nlohmann::ordered_json>& summaries,
                                        const std::vector<std::string>& labels = {});
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

}  // namespace increg
