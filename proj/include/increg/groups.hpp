// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "increg/tensor.hpp"

namespace increg {

/// Row groups are filters (rows of the im2col weight matrix); column groups
/// are shape positions (columns of that matrix).
enum class GroupType { kRow, kColumn };

std::string_view to_string(GroupType t);
/// Parses "row" / "column"; throws ConfigError otherwise.
GroupType parse_group_type(std::string_view s);

/// Disjoint, exhaustive decomposition of one layer's weights into groups.
/// Row group i holds filter i; column group j holds im2col column j.
class GroupPartition {
 public:
  GroupPartition(std::size_t layer_id, GroupType type, Shape4 weight_shape);

  std::size_t layer_id() const { return layer_id_; }
  GroupType type() const { return type_; }
  const Shape4& weight_shape() const { return shape_; }
  /// G: number of groups.
  std::size_t group_count() const;
  /// Weights per group.
  std::size_t group_size() const;
  std::size_t weight_count() const { return shape_.count(); }
  /// Flat (row-major N,C,H,W) indices of group g's weights.
  std::vector<std::size_t> members(std::size_t g) const;
  /// Group owning flat weight index i.
  std::size_t group_of(std::size_t i) const;

 private:
  std::size_t layer_id_;
  GroupType type_;
  Shape4 shape_;
};

/// Per-group pruned flags for one layer.
class GroupMask {
 public:
  GroupMask() = default;
  explicit GroupMask(std::size_t groups) : pruned_(groups, 0) {}

  std::size_t group_count() const { return pruned_.size(); }
  bool pruned(std::size_t g) const { return pruned_.at(g) != 0; }
  void prune(std::size_t g) { pruned_.at(g) = 1; }
  std::size_t pruned_count() const;
  std::span<const std::uint8_t> flags() const { return pruned_; }

  /// Per-weight mask (1 = pruned) in flat weight order.
  std::vector<std::uint8_t> weight_mask(const GroupPartition& partition) const;

 private:
  std::vector<std::uint8_t> pruned_;
};

/// Builds the partition for a weight tensor.
GroupPartition partition(std::size_t layer_id, const Shape4& weight_shape, GroupType type);

/// norm_g = Σ_{w∈g} |w|, accumulated in double.
template <typename T>
std::vector<double> group_l1_norms(std::span<const T> weights, const GroupPartition& partition);

/// Ascending ranks: smallest norm gets rank 0, ties go to the lower group
/// index. The result is a permutation of 0..G-1.
std::vector<std::size_t> rank_ascending(std::span<const double> norms);

/// Zeroes every weight of every pruned group.
template <typename T>
void apply_mask(std::span<T> weights, const GroupPartition& partition, const GroupMask& mask);

/// pruned_count / G (0 for an empty mask).
double layer_sparsity(const GroupMask& mask);

/// Expands per-group values to per-weight values.
std::vector<double> expand_to_weights(const GroupPartition& partition,
                                      std::span<const double> group_values);

}  // namespace increg
