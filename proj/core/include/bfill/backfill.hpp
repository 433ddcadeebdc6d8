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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bfill/alignment.hpp"
#include "bfill/feature_set.hpp"
#include "bfill/losses.hpp"
#include "bfill/retrieval.hpp"

namespace bfill {

// Rule deciding which gallery items get recomputed with the new model first.
struct OrderingPolicy {
  enum class Kind {
    random,           // seeded shuffle
    sigma_desc,       // highest predicted sigma^2 first
    cheat_loss_desc,  // highest true alignment loss first; needs new features
    entropy_desc,     // highest softmax entropy of head(h(old)) first
    margin_conf_asc,  // smallest top-1 minus top-2 probability first
    least_conf_asc,   // smallest top-1 probability first
    file,             // explicit id list, one per line
  };

  Kind kind = Kind::random;
  std::optional<std::uint64_t> seed;  // random; unset lets the caller pick one
  std::filesystem::path path;

  // "random", "random:<seed>", "sigma_desc", ..., "file:<path>".
  static OrderingPolicy parse(std::string_view text);
  // Name without the seed; stable across seeds, used in reports.
  std::string name() const;

  friend bool operator==(const OrderingPolicy&, const OrderingPolicy&) = default;
};

struct OrderingInputs {
  const FeatureSet* gallery_old = nullptr;
  const AlignNet* net = nullptr;
  const ClassifierHead* head = nullptr;
  const FeatureSet* gallery_new = nullptr;  // cheat_loss_desc only
  LossConfig loss;
};

// Ids sorted by score (descending or ascending); ties by ascending id.
std::vector<std::uint64_t> order_by_score(std::span<const std::uint64_t> ids, std::span<const double> scores,
                                          bool descending);

// A permutation of gallery ids. Throws Error naming the missing input when
// the policy's requirements are not met.
std::vector<std::uint64_t> make_ordering(const OrderingPolicy& policy, const OrderingInputs& in);

struct BackfillPlan {
  std::vector<std::uint64_t> ordering;
  std::vector<double> alpha_grid;

  // i / (points - 1) for i = 0..points-1; points >= 2.
  static std::vector<double> uniform_grid(std::size_t points);
  void validate() const;
};

// floor(alpha * n), treating products within 1e-9 of an integer as that
// integer so decimal grids like 0.15 * 20 land where intended.
std::size_t backfill_count(double alpha, std::size_t n);

// First backfill_count(alpha, n) items of the ordering take their new
// features; the rest keep transformed old ones. Record order, ids and labels
// follow `transformed_old`.
FeatureSet partial_gallery(const BackfillPlan& plan, double alpha, const FeatureSet& transformed_old,
                           const FeatureSet& new_gallery);

enum class Metric { cmc_top1, cmc_top5, map };
std::string_view to_string(Metric m);
Metric parse_metric(std::string_view name);

struct FlipCounts {
  std::size_t positive = 0;  // wrong at alpha = 0, right now
  std::size_t negative = 0;  // right at alpha = 0, wrong now

  friend bool operator==(const FlipCounts&, const FlipCounts&) = default;
};

FlipCounts count_flips(std::span<const std::uint8_t> baseline_correct, std::span<const std::uint8_t> current_correct);

// Metric values and per-query outcomes of one retrieval run.
struct Evaluation {
  std::vector<double> values;  // one per requested metric
  std::vector<std::uint8_t> top1;
  std::vector<std::uint8_t> top5;
  std::vector<std::optional<double>> ap;
  std::size_t map_skipped = 0;
};

Evaluation evaluate(const FeatureSet& gallery, const FeatureSet& query, std::span<const Metric> metrics,
                    DistanceKind distance, unsigned workers = 1);

struct SubgroupPoint {
  std::int32_t tag = 0;
  std::size_t queries = 0;
  std::size_t gallery_items = 0;
  std::size_t backfilled = 0;
  std::vector<double> values;
  std::size_t top1_hits = 0;
  FlipCounts flips;
};

struct CurvePoint {
  double alpha = 0.0;
  std::size_t backfilled = 0;
  std::vector<double> values;
  std::size_t top1_hits = 0;
  FlipCounts flips;  // top-1 based, relative to alpha = 0
  std::vector<SubgroupPoint> subgroups;
};

struct BackfillReport {
  std::vector<Metric> metrics;
  std::size_t num_queries = 0;
  std::vector<CurvePoint> points;
  std::vector<double> area;  // mean over the grid, one per metric

  std::size_t metric_index(Metric m) const;
};

// Evaluates every grid point against new-model queries with same-id
// exclusion. Per-subgroup breakdowns are filled when queries and gallery
// carry subgroup tags. The first grid point must be alpha = 0.
BackfillReport backfill_curve(const BackfillPlan& plan, const FeatureSet& transformed_old,
                              const FeatureSet& new_gallery, const FeatureSet& new_query,
                              std::span<const Metric> metrics, DistanceKind distance, unsigned workers = 1);

struct GapPoint {
  double alpha = 0.0;
  double minority_value = 0.0;
  double majority_value = 0.0;
  double gap = 0.0;  // majority - minority
  double minority_backfilled_fraction = 0.0;
  double majority_backfilled_fraction = 0.0;
  double minority_share_of_backfilled = 0.0;
};

struct GapCurve {
  Metric metric = Metric::cmc_top1;
  std::int32_t minority_tag = 0;
  std::int32_t majority_tag = 0;
  double minority_population_share = 0.0;  // of the gallery
  std::vector<GapPoint> points;
};

// Minority = subgroup with the fewest gallery items (ties: lower tag),
// majority = the most. Throws Error when the report has no subgroup data.
GapCurve subgroup_gap_curve(const BackfillReport& report, Metric metric);

}  // namespace bfill
