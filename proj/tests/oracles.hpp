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

// Brute-force reference implementations used only by the tests. Each one is
// written from the metric definitions, without sharing code or loop structure
// with the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "bfill/feature_set.hpp"
#include "bfill/rng.hpp"

namespace oracle {

inline double sq_dist(const bfill::FeatureSet& a, std::size_t i, const bfill::FeatureSet& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.dim(); ++k) {
    const double diff = static_cast<double>(a.row(i)[k]) - static_cast<double>(b.row(j)[k]);
    s += diff * diff;
  }
  return s;
}

inline double cos_dist(const bfill::FeatureSet& a, std::size_t i, const bfill::FeatureSet& b, std::size_t j) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.dim(); ++k) {
    const double x = a.row(i)[k], y = b.row(j)[k];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

// Full ranking of the gallery for every query: all pairs, then a stable
// sort by distance so equal distances stay in index order.
inline std::vector<std::vector<std::uint32_t>> rank(const bfill::FeatureSet& gallery, const bfill::FeatureSet& query,
                                                    bool cosine, bool exclude_same_id) {
  std::vector<std::vector<std::uint32_t>> out;
  for (std::size_t q = 0; q < query.size(); ++q) {
    std::vector<std::pair<double, std::uint32_t>> row;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (exclude_same_id && gallery.id(g) == query.id(q)) continue;
      row.emplace_back(cosine ? cos_dist(query, q, gallery, g) : sq_dist(query, q, gallery, g),
                       static_cast<std::uint32_t>(g));
    }
    std::stable_sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::uint32_t> idx;
    for (const auto& [d, g] : row) idx.push_back(g);
    out.push_back(idx);
  }
  return out;
}

inline double cmc(const std::vector<std::vector<std::uint32_t>>& ranking, const bfill::FeatureSet& gallery,
                  const bfill::FeatureSet& query, std::size_t k) {
  if (ranking.empty()) return 0.0;
  double hits = 0.0;
  for (std::size_t q = 0; q < ranking.size(); ++q) {
    bool hit = false;
    for (std::size_t r = 0; r < k && r < ranking[q].size(); ++r) hit = hit || gallery.label(ranking[q][r]) == query.label(q);
    hits += hit ? 1.0 : 0.0;
  }
  return hits / static_cast<double>(ranking.size());
}

// AP as the mean, over relevant positions r, of |relevant in 1..r| / r.
inline std::optional<double> average_precision(const std::vector<std::uint32_t>& row, const bfill::FeatureSet& gallery,
                                               std::int32_t label) {
  std::vector<double> precisions;
  for (std::size_t r = 0; r < row.size(); ++r) {
    if (gallery.label(row[r]) != label) continue;
    std::size_t rel = 0;
    for (std::size_t s = 0; s <= r; ++s) rel += gallery.label(row[s]) == label;
    precisions.push_back(static_cast<double>(rel) / static_cast<double>(r + 1));
  }
  if (precisions.empty()) return std::nullopt;
  return std::accumulate(precisions.begin(), precisions.end(), 0.0) / static_cast<double>(precisions.size());
}

inline double map(const std::vector<std::vector<std::uint32_t>>& ranking, const bfill::FeatureSet& gallery,
                  const bfill::FeatureSet& query) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t q = 0; q < ranking.size(); ++q) {
    if (auto ap = average_precision(ranking[q], gallery, query.label(q))) {
      sum += *ap;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// Concordant minus discordant pairs over all C(n, 2) pairs.
inline double kendall(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  std::map<std::uint64_t, std::size_t> pos_a, pos_b;
  for (std::size_t i = 0; i < a.size(); ++i) pos_a[a[i]] = i;
  for (std::size_t i = 0; i < b.size(); ++i) pos_b[b[i]] = i;
  long long conc = 0, disc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const auto x = a[i], y = a[j];
      const bool same = (pos_a[x] < pos_a[y]) == (pos_b[x] < pos_b[y]);
      (same ? conc : disc) += 1;
    }
  }
  const double pairs = static_cast<double>(a.size()) * static_cast<double>(a.size() - 1) / 2.0;
  return static_cast<double>(conc - disc) / pairs;
}

// Random feature set with a few exact duplicate rows so that tie-breaking is
// exercised.
inline bfill::FeatureSet random_set(bfill::Rng& rng, std::size_t n, std::size_t dim, std::int32_t classes,
                                    std::uint64_t first_id) {
  bfill::FeatureSet set(dim);
  std::vector<std::vector<float>> rows;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(dim);
    if (!rows.empty() && rng.uniform() < 0.15) {
      v = rows[rng.below(rows.size())];
    } else {
      for (auto& x : v) x = static_cast<float>(rng.normal());
    }
    rows.push_back(v);
    set.append(first_id + i, static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(classes))), v);
  }
  return set;
}

}  // namespace oracle
