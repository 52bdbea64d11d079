// SPDX-License-Identifier: Apache-2.0
#include "increg/scheduler.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace increg {

double delta_lambda(double r, double ratio, std::size_t groups, double a) {
  if (groups < 2) throw ContractError("delta_lambda: need G >= 2, got " + std::to_string(groups));
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ContractError("delta_lambda: ratio must be in (0, 1), got " + std::to_string(ratio));
  }
  if (!(a > 0.0)) throw ContractError("delta_lambda: A must be > 0, got " + std::to_string(a));
  const double g = static_cast<double>(groups);
  if (!(r >= 0.0 && r <= g - 1.0)) {
    throw ContractError("delta_lambda: rank " + std::to_string(r) + " outside [0, G-1]");
  }
  const double pivot = ratio * g;
  double delta;
  if (r <= pivot) {
    delta = a * (1.0 - r / pivot);
  } else {
    // G(1-R) - 1 written as (G-1) - RG so that r = G-1 yields exactly -A.
    const double span = (g - 1.0) - pivot;
    delta = span > 0.0 ? -a * ((r - pivot) / span) : -a;
  }
  return std::clamp(delta, -a, a);
}

double GroupState::averaged_rank() const {
  return observations == 0 ? 0.0 : rank_sum / static_cast<double>(observations);
}

GroupState update_lambda(GroupState state, double delta, bool layer_reached) {
  if (state.pruned || layer_reached) return state;
  state.lambda = std::max(state.lambda + delta, 0.0);
  return state;
}

void observe_ranking(std::span<GroupState> states, std::span<const std::size_t> ranks) {
  if (ranks.size() != states.size()) {
    throw ContractError("observe_ranking: " + std::to_string(ranks.size()) + " ranks for " +
                        std::to_string(states.size()) + " groups");
  }
  std::vector<std::uint8_t> seen(ranks.size(), 0);
  for (std::size_t r : ranks) {
    if (r >= ranks.size() || seen[r]) {
      throw ContractError("observe_ranking: ranks are not a permutation of 0..G-1");
    }
    seen[r] = 1;
  }
  for (std::size_t g = 0; g < states.size(); ++g) {
    states[g].rank_sum += static_cast<double>(ranks[g]);
    ++states[g].observations;
  }
}

std::string_view to_string(SchedulerKind k) {
  switch (k) {
    case SchedulerKind::kIncReg:
      return "increg";
    case SchedulerKind::kConstant:
      return "constant";
    case SchedulerKind::kOneShotMagnitude:
      return "oneshot-magnitude";
  }
  return "unknown";
}

SchedulerKind parse_scheduler_kind(std::string_view s) {
  if (s == "increg") return SchedulerKind::kIncReg;
  if (s == "constant") return SchedulerKind::kConstant;
  if (s == "oneshot-magnitude") return SchedulerKind::kOneShotMagnitude;
  throw ConfigError("scheduler: unknown kind \"" + std::string(s) +
                    "\" (expected increg, constant or oneshot-magnitude)");
}

std::string_view to_string(SchedulerEvent::Kind k) {
  switch (k) {
    case SchedulerEvent::Kind::kGroupPruned:
      return "GroupPruned";
    case SchedulerEvent::Kind::kLayerReached:
      return "LayerReached";
    case SchedulerEvent::Kind::kAllReached:
      return "AllReached";
  }
  return "Unknown";
}

std::uint64_t hash_lambdas(std::span<const double> values) {
  std::uint64_t h = 1469598103934665603ull;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string to_json_line(const SchedulerEvent& e) {
  nlohmann::ordered_json j;
  j["iteration"] = e.iteration;
  j["layer"] = e.layer_id ? nlohmann::ordered_json(e.layer_name) : nlohmann::ordered_json();
  j["kind"] = std::string(to_string(e.kind));
  j["group"] = e.group ? nlohmann::ordered_json(*e.group) : nlohmann::ordered_json();
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(e.lambda_hash));
  j["lambda_hash"] = hash;
  return j.dump();
}

LayerPruneState::LayerPruneState(GroupPartition partition, LayerPruneSettings settings,
                                 std::string name)
    : partition_(std::move(partition)), settings_(settings), name_(std::move(name)) {
  if (!(settings_.prune_ratio > 0.0 && settings_.prune_ratio < 1.0)) {
    throw ConfigError(name_ + ".prune_ratio: must be in (0, 1), got " +
                      std::to_string(settings_.prune_ratio));
  }
  if (!(settings_.threshold >= 0.0)) throw ConfigError(name_ + ".threshold: must be >= 0");
  if (settings_.update_interval == 0) throw ConfigError(name_ + ".update_interval: must be >= 1");
  const std::size_t g = partition_.group_count();
  target_ = static_cast<std::size_t>(std::floor(settings_.prune_ratio * static_cast<double>(g) + 0.5));
  groups_.assign(g, GroupState{});
  mask_ = GroupMask(g);
}

std::vector<double> LayerPruneState::lambdas() const {
  std::vector<double> out(groups_.size());
  for (std::size_t g = 0; g < groups_.size(); ++g) out[g] = groups_[g].lambda;
  return out;
}

std::vector<double> LayerPruneState::effective_lambdas() const {
  std::vector<double> out(groups_.size(), 0.0);
  if (phase_ == Phase::kReached) return out;
  for (std::size_t g = 0; g < groups_.size(); ++g)
    if (!groups_[g].pruned) out[g] = groups_[g].lambda;
  return out;
}

SchedulerEvent LayerPruneState::make_event(std::int64_t iteration, SchedulerEvent::Kind kind,
                                           std::optional<std::size_t> group) const {
  SchedulerEvent e;
  e.iteration = iteration;
  e.layer_id = layer_id();
  e.layer_name = name_;
  e.kind = kind;
  e.group = group;
  const auto lam = lambdas();
  e.lambda_hash = hash_lambdas(lam);
  return e;
}

template <typename T>
void LayerPruneState::prune_group(std::span<T> weights, std::size_t g, std::int64_t iteration,
                                  std::vector<SchedulerEvent>& events) {
  groups_[g].pruned = true;
  groups_[g].pruned_at = iteration;
  mask_.prune(g);
  for (std::size_t i : partition_.members(g)) weights[i] = T(0);
  events.push_back(make_event(iteration, SchedulerEvent::Kind::kGroupPruned, g));
}

template <typename T>
void LayerPruneState::prune_below_threshold(std::span<T> weights, std::span<const double> norms,
                                            std::int64_t iteration,
                                            std::vector<SchedulerEvent>& events) {
  const double size = static_cast<double>(partition_.group_size());
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    if (groups_[g].pruned) continue;
    if (norms[g] / size < settings_.threshold) prune_group(weights, g, iteration, events);
  }
}

void LayerPruneState::check_reached(std::int64_t iteration, std::vector<SchedulerEvent>& events) {
  if (phase_ == Phase::kActive && pruned_count() >= target_) {
    phase_ = Phase::kReached;
    events.push_back(make_event(iteration, SchedulerEvent::Kind::kLayerReached, std::nullopt));
  }
}

template <typename T>
TickResult LayerPruneState::tick(std::span<T> weights, std::int64_t iteration) {
  TickResult out;
  if (phase_ == Phase::kReached) {
    out.lambdas = effective_lambdas();
    return out;
  }
  const std::vector<double> norms = group_l1_norms<T>(weights, partition_);
  if (iteration % static_cast<std::int64_t>(settings_.update_interval) == 0) {
    const std::vector<std::size_t> ranks = rank_ascending(norms);
    observe_ranking(groups_, ranks);
    const std::size_t g_count = groups_.size();
    for (auto& state : groups_) {
      if (state.pruned) continue;
      const double delta = delta_lambda(state.averaged_rank(), settings_.prune_ratio, g_count,
                                        settings_.max_increment);
      state = update_lambda(state, delta);
    }
  }
  prune_below_threshold(weights, norms, iteration, out.events);
  check_reached(iteration, out.events);
  out.lambdas = effective_lambdas();
  return out;
}

template <typename T>
TickResult LayerPruneState::constant_tick(std::span<T> weights, double lambda_const,
                                          std::int64_t iteration) {
  if (!(lambda_const >= 0.0)) throw ContractError("constant_tick: lambda must be >= 0");
  TickResult out;
  if (phase_ == Phase::kReached) {
    out.lambdas = effective_lambdas();
    return out;
  }
  const std::vector<double> norms = group_l1_norms<T>(weights, partition_);
  for (auto& state : groups_)
    if (!state.pruned) state.lambda = lambda_const;
  prune_below_threshold(weights, norms, iteration, out.events);
  check_reached(iteration, out.events);
  out.lambdas = effective_lambdas();
  return out;
}

template <typename T>
TickResult LayerPruneState::prune_smallest(std::span<T> weights, std::int64_t iteration) {
  TickResult out;
  if (phase_ == Phase::kActive) {
    const std::vector<double> norms = group_l1_norms<T>(weights, partition_);
    const std::vector<std::size_t> ranks = rank_ascending(norms);
    for (std::size_t g = 0; g < ranks.size(); ++g) {
      if (ranks[g] < target_ && !groups_[g].pruned) prune_group(weights, g, iteration, out.events);
    }
    check_reached(iteration, out.events);
  }
  out.lambdas = effective_lambdas();
  return out;
}

void LayerPruneState::clear_lambdas() {
  for (auto& s : groups_) s.lambda = 0.0;
}

PruneScheduler::PruneScheduler(std::vector<LayerPruneState> layers, SchedulerSettings settings)
    : layers_(std::move(layers)), settings_(settings) {
  for (const auto& l : layers_) {
    if (settings_.kind == SchedulerKind::kIncReg) {
      if (l.group_count() < 2) {
        throw ConfigError(l.name() + ": incremental regularization needs at least 2 groups");
      }
      if (!(l.settings().max_increment > 0.0)) {
        throw ConfigError(l.name() + ".max_increment: A must be > 0");
      }
    }
  }
  if (settings_.kind == SchedulerKind::kConstant && !(settings_.constant_lambda >= 0.0)) {
    throw ConfigError("constant_lambda: must be >= 0");
  }
}

bool PruneScheduler::all_reached() const {
  return std::all_of(layers_.begin(), layers_.end(),
                     [](const auto& l) { return l.phase() == Phase::kReached; });
}

template <typename T>
PruneScheduler::Output PruneScheduler::tick(std::span<const std::span<T>> weights,
                                            std::int64_t iteration) {
  if (weights.size() != layers_.size()) {
    throw ContractError("scheduler tick: " + std::to_string(weights.size()) +
                        " weight buffers for " + std::to_string(layers_.size()) + " layers");
  }
  if (finalized_) throw StateError("scheduler tick after finalize_for_retraining");
  Output out;
  out.lambdas.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    TickResult r;
    switch (settings_.kind) {
      case SchedulerKind::kIncReg:
        r = layers_[i].tick(weights[i], iteration);
        break;
      case SchedulerKind::kConstant:
        r = layers_[i].constant_tick(weights[i], settings_.constant_lambda, iteration);
        break;
      case SchedulerKind::kOneShotMagnitude:
        r = layers_[i].prune_smallest(weights[i], iteration);
        break;
    }
    out.lambdas.push_back(std::move(r.lambdas));
    for (auto& e : r.events) out.events.push_back(std::move(e));
  }
  if (!all_reached_emitted_ && all_reached()) {
    all_reached_emitted_ = true;
    SchedulerEvent e;
    e.iteration = iteration;
    e.kind = SchedulerEvent::Kind::kAllReached;
    std::vector<double> all;
    for (const auto& l : layers_) {
      const auto lam = l.lambdas();
      all.insert(all.end(), lam.begin(), lam.end());
    }
    e.lambda_hash = hash_lambdas(all);
    out.events.push_back(std::move(e));
  }
  return out;
}

MaskSet PruneScheduler::current_masks() const {
  MaskSet masks;
  for (const auto& l : layers_) masks.push_back(LayerMask{l.partition(), l.mask()});
  return masks;
}

MaskSet PruneScheduler::finalize_for_retraining() {
  if (!all_reached()) {
    std::string pending;
    for (const auto& l : layers_)
      if (l.phase() != Phase::kReached) pending += (pending.empty() ? "" : ", ") + l.name();
    throw StateError("finalize_for_retraining: layers still pruning: " + pending);
  }
  for (auto& l : layers_) l.clear_lambdas();
  finalized_ = true;
  return current_masks();
}

#define INCREG_INSTANTIATE(T)                                                                \
  template TickResult LayerPruneState::tick<T>(std::span<T>, std::int64_t);                  \
  template TickResult LayerPruneState::constant_tick<T>(std::span<T>, double, std::int64_t); \
  template TickResult LayerPruneState::prune_smallest<T>(std::span<T>, std::int64_t);        \
  template PruneScheduler::Output PruneScheduler::tick<T>(std::span<const std::span<T>>,     \
                                                          std::int64_t);
INCREG_INSTANTIATE(float)
INCREG_INSTANTIATE(double)
#undef INCREG_INSTANTIATE

}  // namespace increg
