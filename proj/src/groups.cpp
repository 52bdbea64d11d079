// SPDX-License-Identifier: Apache-2.0
#include "increg/groups.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace increg {

std::string_view to_string(GroupType t) { return t == GroupType::kRow ? "row" : "column"; }

GroupType parse_group_type(std::string_view s) {
  if (s == "row") return GroupType::kRow;
  if (s == "column") return GroupType::kColumn;
  throw ConfigError("group_type: expected \"row\" or \"column\", got \"" + std::string(s) + "\"");
}

GroupPartition::GroupPartition(std::size_t layer_id, GroupType type, Shape4 weight_shape)
    : layer_id_(layer_id), type_(type), shape_(weight_shape) {
  if (shape_.count() == 0) throw ShapeError("cannot partition an empty weight tensor");
}

std::size_t GroupPartition::group_count() const {
  return type_ == GroupType::kRow ? shape_.n : shape_.inner();
}

std::size_t GroupPartition::group_size() const {
  return type_ == GroupType::kRow ? shape_.inner() : shape_.n;
}

std::vector<std::size_t> GroupPartition::members(std::size_t g) const {
  const std::size_t cols = shape_.inner();
  std::vector<std::size_t> idx(group_size());
  if (type_ == GroupType::kRow) {
    std::iota(idx.begin(), idx.end(), g * cols);
  } else {
    for (std::size_t i = 0; i < shape_.n; ++i) idx[i] = i * cols + g;
  }
  return idx;
}

std::size_t GroupPartition::group_of(std::size_t i) const {
  const std::size_t cols = shape_.inner();
  return type_ == GroupType::kRow ? i / cols : i % cols;
}

GroupPartition partition(std::size_t layer_id, const Shape4& weight_shape, GroupType type) {
  return GroupPartition(layer_id, type, weight_shape);
}

std::size_t GroupMask::pruned_count() const {
  return static_cast<std::size_t>(std::count(pruned_.begin(), pruned_.end(), 1));
}

std::vector<std::uint8_t> GroupMask::weight_mask(const GroupPartition& partition) const {
  if (partition.group_count() != pruned_.size()) {
    throw ShapeError("mask has " + std::to_string(pruned_.size()) + " groups, partition has " +
                     std::to_string(partition.group_count()));
  }
  std::vector<std::uint8_t> out(partition.weight_count(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pruned_[partition.group_of(i)];
  return out;
}

template <typename T>
std::vector<double> group_l1_norms(std::span<const T> weights, const GroupPartition& partition) {
  if (weights.size() != partition.weight_count()) {
    throw ShapeError("group_l1_norms: " + std::to_string(weights.size()) +
                     " weights for a partition of " + std::to_string(partition.weight_count()));
  }
  std::vector<double> norms(partition.group_count(), 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    norms[partition.group_of(i)] += std::abs(static_cast<double>(weights[i]));
  }
  return norms;
}

std::vector<std::size_t> rank_ascending(std::span<const double> norms) {
  std::vector<std::size_t> order(norms.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });
  std::vector<std::size_t> ranks(norms.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = r;
  return ranks;
}

template <typename T>
void apply_mask(std::span<T> weights, const GroupPartition& partition, const GroupMask& mask) {
  if (weights.size() != partition.weight_count() ||
      mask.group_count() != partition.group_count()) {
    throw ShapeError("apply_mask: mask/partition/weights disagree");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (mask.pruned(partition.group_of(i))) weights[i] = T(0);
  }
}

double layer_sparsity(const GroupMask& mask) {
  if (mask.group_count() == 0) return 0.0;
  return static_cast<double>(mask.pruned_count()) / static_cast<double>(mask.group_count());
}

std::vector<double> expand_to_weights(const GroupPartition& partition,
                                      std::span<const double> group_values) {
  if (group_values.size() != partition.group_count()) {
    throw ShapeError("expand_to_weights: group count mismatch");
  }
  std::vector<double> out(partition.weight_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = group_values[partition.group_of(i)];
  return out;
}

template std::vector<double> group_l1_norms<float>(std::span<const float>,
                                                   const GroupPartition&);
template std::vector<double> group_l1_norms<double>(std::span<const double>,
                                                    const GroupPartition&);
template void apply_mask<float>(std::span<float>, const GroupPartition&, const GroupMask&);
template void apply_mask<double>(std::span<double>, const GroupPartition&, const GroupMask&);

}  // namespace increg
