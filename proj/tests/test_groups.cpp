// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>

#include "increg/groups.hpp"
#include "oracles.hpp"

using namespace increg;

TEST_SUITE("group-sparsity") {

TEST_CASE("partitions are disjoint and cover every weight") {
  const Shape4 shape{6, 4, 3, 3};
  for (GroupType t : {GroupType::kRow, GroupType::kColumn}) {
    const GroupPartition p = partition(2, shape, t);
    std::vector<int> seen(shape.count(), 0);
    for (std::size_t g = 0; g < p.group_count(); ++g) {
      const auto m = p.members(g);
      CHECK(m.size() == p.group_size());
      for (std::size_t i : m) {
        ++seen[i];
        CHECK(p.group_of(i) == g);
      }
    }
    for (int s : seen) CHECK(s == 1);
    CHECK(p.group_count() * p.group_size() == shape.count());
  }
}

TEST_CASE("row groups are filters, column groups are im2col columns") {
  const Shape4 shape{5, 2, 3, 3};
  const std::size_t k = shape.inner();
  const GroupPartition rows = partition(0, shape, GroupType::kRow);
  const GroupPartition cols = partition(0, shape, GroupType::kColumn);
  CHECK(rows.group_count() == 5);
  CHECK(cols.group_count() == k);
  for (std::size_t g = 0; g < 5; ++g) {
    const auto m = rows.members(g);
    for (std::size_t j = 0; j < k; ++j) CHECK(m[j] == g * k + j);
  }
  for (std::size_t j = 0; j < k; ++j) {
    const auto m = cols.members(j);
    for (std::size_t i = 0; i < 5; ++i) CHECK(m[i] == i * k + j);
  }
}

TEST_CASE("L1 norms match a brute-force sum") {
  const Shape4 shape{4, 3, 3, 3};
  const auto w = oracle::random_values<float>(shape.count(), 17);
  for (GroupType t : {GroupType::kRow, GroupType::kColumn}) {
    const GroupPartition p = partition(0, shape, t);
    const auto norms = group_l1_norms<float>(w, p);
    for (std::size_t g = 0; g < p.group_count(); ++g) {
      double ref = 0.0;
      for (std::size_t i = 0; i < shape.count(); ++i)
        if (p.group_of(i) == g) ref += std::abs(static_cast<double>(w[i]));
      CHECK(norms[g] == doctest::Approx(ref).epsilon(1e-12));
    }
  }
}

TEST_CASE("ranks are a permutation ordered by norm, ties to the lower index") {
  const std::vector<double> tied{0.5, 0.1, 0.5, 0.1, 0.0, 2.0};
  CHECK(rank_ascending(tied) == oracle::brute_force_ranks(tied));
  CHECK(rank_ascending(tied) == std::vector<std::size_t>{3, 1, 4, 2, 0, 5});
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    auto v = oracle::random_values<double>(12, seed, 0.0, 1.0);
    // Coarse rounding forces plenty of ties.
    for (double& x : v) x = std::round(x * 4.0) / 4.0;
    const auto r = rank_ascending(v);
    CHECK(r == oracle::brute_force_ranks(v));
    CHECK(std::set<std::size_t>(r.begin(), r.end()).size() == v.size());
  }
}

TEST_CASE("apply_mask zeroes exactly the pruned groups") {
  const Shape4 shape{4, 2, 3, 3};
  for (GroupType t : {GroupType::kRow, GroupType::kColumn}) {
    const GroupPartition p = partition(0, shape, t);
    auto w = oracle::random_values<double>(shape.count(), 3, 0.5, 1.0);
    const auto before = w;
    GroupMask mask(p.group_count());
    mask.prune(1);
    mask.prune(p.group_count() - 1);
    apply_mask<double>(w, p, mask);
    const auto wm = mask.weight_mask(p);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const bool off = mask.pruned(p.group_of(i));
      CHECK(static_cast<bool>(wm[i]) == off);
      CHECK(w[i] == (off ? 0.0 : before[i]));
    }
    CHECK(mask.pruned_count() == 2);
    CHECK(layer_sparsity(mask) == doctest::Approx(2.0 / static_cast<double>(p.group_count())));
  }
}

TEST_CASE("group values expand to their members") {
  const GroupPartition p = partition(0, Shape4{3, 1, 2, 2}, GroupType::kRow);
  const auto per = expand_to_weights(p, std::vector<double>{1.0, 2.0, 3.0});
  for (std::size_t i = 0; i < per.size(); ++i) CHECK(per[i] == static_cast<double>(p.group_of(i) + 1));
  CHECK_THROWS(parse_group_type("diagonal"));
}

}  // TEST_SUITE
