// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "increg/groups.hpp"

namespace increg {

/// Regularization increment for a group with averaged rank `r` in a layer
/// of `groups` groups with pruning ratio `ratio` and maximum increment `a`.
///
/// Piecewise linear: from +a at r = 0 down to 0 at r = ratio·G (penalty),
/// then down to -a at r = G-1 (reward). Clamped to [-a, a]; when the reward
/// slope's denominator G(1-R)-1 is not positive the reward branch is -a.
/// Throws ContractError unless G >= 2, 0 < ratio < 1 and a > 0.
double delta_lambda(double r, double ratio, std::size_t groups, double a);

/// Scheduler bookkeeping for one weight group.
struct GroupState {
  double lambda = 0.0;
  double rank_sum = 0.0;
  std::uint64_t observations = 0;
  bool pruned = false;
  std::optional<std::int64_t> pruned_at;

  /// (1/N)·Σ r_n, or 0 before the first observation.
  double averaged_rank() const;
};

/// λ' = max(λ + delta, 0). No change when the group is pruned or its layer
/// has stopped regularizing.
GroupState update_lambda(GroupState state, double delta, bool layer_reached = false);

/// Adds this iteration's ranks to every group's running sum (pruned groups
/// included). Throws ContractError unless `ranks` is a permutation of
/// 0..G-1 of matching length.
void observe_ranking(std::span<GroupState> states, std::span<const std::size_t> ranks);

enum class Phase { kActive, kReached };
enum class SchedulerKind { kIncReg, kConstant, kOneShotMagnitude };

std::string_view to_string(SchedulerKind k);
/// Parses "increg" / "constant" / "oneshot-magnitude"; throws ConfigError.
SchedulerKind parse_scheduler_kind(std::string_view s);

struct SchedulerEvent {
  enum class Kind { kGroupPruned, kLayerReached, kAllReached };

  std::int64_t iteration = 0;
  /// Network layer index; unset for kAllReached.
  std::optional<std::size_t> layer_id;
  std::string layer_name;
  Kind kind = Kind::kGroupPruned;
  std::optional<std::size_t> group;
  /// FNV-1a hash of the layer's λ vector after the tick.
  std::uint64_t lambda_hash = 0;
};

std::string_view to_string(SchedulerEvent::Kind k);
/// One JSON object per event, no trailing newline.
std::string to_json_line(const SchedulerEvent& e);

/// FNV-1a over the IEEE bit patterns of `values`.
std::uint64_t hash_lambdas(std::span<const double> values);

struct LayerPruneSettings {
  /// R: fraction of groups to remove.
  double prune_ratio = 0.5;
  /// A: largest per-iteration λ increment.
  double max_increment = 0.0;
  /// Groups whose mean absolute weight falls below this are removed.
  double threshold = 1e-6;
  /// Ranking/λ updates happen on iterations divisible by this.
  std::size_t update_interval = 1;
};

struct TickResult {
  /// λ_g to apply in this iteration's SGD step, in group order. Zero for
  /// pruned groups and for layers that have reached their target.
  std::vector<double> lambdas;
  std::vector<SchedulerEvent> events;
};

/// Pruning state machine of one conv layer.
class LayerPruneState {
 public:
  LayerPruneState(GroupPartition partition, LayerPruneSettings settings, std::string name);

  const GroupPartition& partition() const { return partition_; }
  const LayerPruneSettings& settings() const { return settings_; }
  const std::string& name() const { return name_; }
  std::size_t layer_id() const { return partition_.layer_id(); }
  std::size_t group_count() const { return partition_.group_count(); }
  /// round(R·G), ties rounded up.
  std::size_t target_count() const { return target_; }
  Phase phase() const { return phase_; }
  std::span<const GroupState> groups() const { return groups_; }
  const GroupMask& mask() const { return mask_; }
  std::size_t pruned_count() const { return mask_.pruned_count(); }

  /// Stored λ_g of every group.
  std::vector<double> lambdas() const;
  /// λ_g as applied to weights: stored λ for unpruned groups of an active
  /// layer, zero otherwise.
  std::vector<double> effective_lambdas() const;

  /// One incremental-regularization iteration: L1 norms, ranking, averaged
  /// rank update, λ update, threshold pruning, stop check. Pruned groups are
  /// zeroed in `weights`.
  template <typename T>
  TickResult tick(std::span<T> weights, std::int64_t iteration);

  /// Constant-factor baseline: every unpruned group of an active layer gets
  /// `lambda_const`; pruning and stop logic as in tick().
  template <typename T>
  TickResult constant_tick(std::span<T> weights, double lambda_const, std::int64_t iteration);

  /// Removes the target_count() smallest-L1 groups at once.
  template <typename T>
  TickResult prune_smallest(std::span<T> weights, std::int64_t iteration);

  /// Drops every λ_g to zero.
  void clear_lambdas();

 private:
  template <typename T>
  void prune_below_threshold(std::span<T> weights, std::span<const double> norms,
                             std::int64_t iteration, std::vector<SchedulerEvent>& events);
  template <typename T>
  void prune_group(std::span<T> weights, std::size_t g, std::int64_t iteration,
                   std::vector<SchedulerEvent>& events);
  void check_reached(std::int64_t iteration, std::vector<SchedulerEvent>& events);
  SchedulerEvent make_event(std::int64_t iteration, SchedulerEvent::Kind kind,
                            std::optional<std::size_t> group) const;

  GroupPartition partition_;
  LayerPruneSettings settings_;
  std::string name_;
  std::size_t target_ = 0;
  Phase phase_ = Phase::kActive;
  std::vector<GroupState> groups_;
  GroupMask mask_;
};

/// Frozen mask of one layer, handed to retraining and compaction.
struct LayerMask {
  GroupPartition partition;
  GroupMask mask;
};
using MaskSet = std::vector<LayerMask>;

struct SchedulerSettings {
  SchedulerKind kind = SchedulerKind::kIncReg;
  double max_increment = 0.0;
  double threshold = 1e-6;
  std::size_t update_interval = 1;
  double constant_lambda = 0.0;
};

/// Runs one LayerPruneState per scheduled conv layer and tracks the global
/// AllReached condition.
class PruneScheduler {
 public:
  /// `layers` are the scheduled conv layers in network order.
  PruneScheduler(std::vector<LayerPruneState> layers, SchedulerSettings settings);

  struct Output {
    /// Per scheduled layer, λ_g vector in group order.
    std::vector<std::vector<double>> lambdas;
    /// Ordered by (iteration, layer).
    std::vector<SchedulerEvent> events;
  };

  /// `weights[i]` is the weight buffer of layers()[i].
  template <typename T>
  Output tick(std::span<const std::span<T>> weights, std::int64_t iteration);

  bool all_reached() const;
  std::span<const LayerPruneState> layers() const { return layers_; }
  const SchedulerSettings& settings() const { return settings_; }

  /// Zeroes every λ_g and returns the frozen masks. Throws StateError unless
  /// every layer has reached its target.
  MaskSet finalize_for_retraining();
  /// Masks as they stand, regardless of phase.
  MaskSet current_masks() const;

 private:
  std::vector<LayerPruneState> layers_;
  SchedulerSettings settings_;
  bool all_reached_emitted_ = false;
  bool finalized_ = false;
};

}  // namespace increg
