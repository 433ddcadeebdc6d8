// Copyright 2026 The bfill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace bfill {

// Number of pairs i < j with values[i] > values[j]; O(n log n) merge sort.
std::uint64_t count_inversions(std::span<const std::uint32_t> values);

// Kendall's tau between two total orders over the same ids:
// (concordant - discordant) / C(n, 2). Throws Error if the orders are not
// permutations of one id set or hold fewer than two items.
double kendall_tau(std::span<const std::uint64_t> order_a, std::span<const std::uint64_t> order_b);

// Rank of each id in both orders, listed in the order of `order_a`.
struct RankPair {
  std::uint64_t id;
  std::size_t rank_a;
  std::size_t rank_b;
};
std::vector<RankPair> rank_pairs(std::span<const std::uint64_t> order_a, std::span<const std::uint64_t> order_b);

}  // namespace bfill
