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
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "bfill/feature_set.hpp"

namespace bfill {

enum class DistanceKind { l2, cosine };

std::string_view to_string(DistanceKind kind);
DistanceKind parse_distance(std::string_view name);

struct RankOptions {
  DistanceKind distance = DistanceKind::l2;
  // Drop gallery records whose id equals the query's id.
  bool exclude_same_id = true;
  // Neighbors kept per query; unset keeps the full ranking.
  std::optional<std::size_t> depth;
  unsigned workers = 1;
  bool keep_distances = false;
};

// Per-query gallery indices in ascending distance, ties by ascending gallery
// index. Row q holds min(depth, eligible(q)) entries.
struct RetrievalResult {
  std::size_t num_queries = 0;
  std::size_t gallery_size = 0;
  std::size_t depth = 0;
  std::vector<std::uint32_t> indices;      // num_queries x depth
  std::vector<double> distances;           // same layout, when kept
  std::vector<std::uint32_t> row_length;   // stored entries per query
  std::vector<std::uint32_t> eligible;     // gallery items ranked per query

  std::span<const std::uint32_t> row(std::size_t q) const {
    return {indices.data() + q * depth, row_length[q]};
  }
  std::span<const double> row_distances(std::size_t q) const {
    return {distances.data() + q * depth, row_length[q]};
  }
  bool full_depth() const;
};

// Exact brute-force ranking. Throws DimensionError on width mismatch and
// Error when depth exceeds the gallery size or cosine meets a zero vector.
RetrievalResult rank(const FeatureSet& gallery, const FeatureSet& query, const RankOptions& options = {});

// 1 where the query has a same-label item within its first k neighbors.
std::vector<std::uint8_t> hits_at_k(const RetrievalResult& result, std::span<const std::int32_t> gallery_labels,
                                    std::span<const std::int32_t> query_labels, std::size_t k);

// Fraction of queries with a same-label item in the top k; 1 <= k <= depth.
double cmc_top_k(const RetrievalResult& result, std::span<const std::int32_t> gallery_labels,
                 std::span<const std::int32_t> query_labels, std::size_t k);

// Average precision per query (mean of precision at each relevant rank);
// empty for queries with no relevant gallery item. Requires a full-depth
// result.
std::vector<std::optional<double>> average_precisions(const RetrievalResult& result,
                                                      std::span<const std::int32_t> gallery_labels,
                                                      std::span<const std::int32_t> query_labels);

struct MapSummary {
  double value = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // queries without any relevant gallery item
};

MapSummary mean_average_precision(const RetrievalResult& result, std::span<const std::int32_t> gallery_labels,
                                  std::span<const std::int32_t> query_labels);

}  // namespace bfill
