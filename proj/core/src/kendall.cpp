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

#include "bfill/kendall.hpp"

#include <string>
#include <unordered_map>

#include "bfill/error.hpp"

namespace bfill {
namespace {

std::uint64_t merge_count(std::vector<std::uint32_t>& v, std::vector<std::uint32_t>& scratch, std::size_t lo,
                          std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t inv = merge_count(v, scratch, lo, mid) + merge_count(v, scratch, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += mid - i;
      scratch[k++] = v[j++];
    } else {
      scratch[k++] = v[i++];
    }
  }
  while (i < mid) scratch[k++] = v[i++];
  while (j < hi) scratch[k++] = v[j++];
  for (std::size_t t = lo; t < hi; ++t) v[t] = scratch[t];
  return inv;
}

// Rank in order_b of each element of order_a, validating the id universe.
std::vector<std::uint32_t> ranks_in_b(std::span<const std::uint64_t> order_a, std::span<const std::uint64_t> order_b) {
  if (order_a.size() != order_b.size()) {
    throw Error("orders differ in length: " + std::to_string(order_a.size()) + " vs " + std::to_string(order_b.size()));
  }
  std::unordered_map<std::uint64_t, std::uint32_t> pos;
  pos.reserve(order_b.size());
  for (std::size_t i = 0; i < order_b.size(); ++i) {
    if (!pos.emplace(order_b[i], static_cast<std::uint32_t>(i)).second) {
      throw Error("id " + std::to_string(order_b[i]) + " repeated in ordering");
    }
  }
  std::vector<std::uint32_t> out;
  out.reserve(order_a.size());
  std::vector<char> used(order_b.size(), 0);
  for (auto id : order_a) {
    const auto it = pos.find(id);
    if (it == pos.end()) throw Error("id " + std::to_string(id) + " missing from second ordering");
    if (used[it->second]) throw Error("id " + std::to_string(id) + " repeated in ordering");
    used[it->second] = 1;
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

std::uint64_t count_inversions(std::span<const std::uint32_t> values) {
  std::vector<std::uint32_t> v(values.begin(), values.end());
  std::vector<std::uint32_t> scratch(v.size());
  return merge_count(v, scratch, 0, v.size());
}

double kendall_tau(std::span<const std::uint64_t> order_a, std::span<const std::uint64_t> order_b) {
  const auto seq = ranks_in_b(order_a, order_b);
  const std::uint64_t n = seq.size();
  if (n < 2) throw Error("Kendall tau needs at least two items");
  const std::uint64_t pairs = n * (n - 1) / 2;
  const std::uint64_t discordant = count_inversions(seq);
  const auto concordant = static_cast<std::int64_t>(pairs - discordant);
  return static_cast<double>(concordant - static_cast<std::int64_t>(discordant)) / static_cast<double>(pairs);
}

std::vector<RankPair> rank_pairs(std::span<const std::uint64_t> order_a, std::span<const std::uint64_t> order_b) {
  const auto seq = ranks_in_b(order_a, order_b);
  std::vector<RankPair> out;
  out.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) out.push_back({order_a[i], i, seq[i]});
  return out;
}

}  // namespace bfill
