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

#include "bfill/backfill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>

#include "bfill/error.hpp"
#include "bfill/parallel.hpp"
#include "bfill/rng.hpp"

namespace bfill {
namespace {

struct PolicyName {
  OrderingPolicy::Kind kind;
  std::string_view name;
};

constexpr PolicyName kPolicyNames[] = {
    {OrderingPolicy::Kind::random, "random"},
    {OrderingPolicy::Kind::sigma_desc, "sigma_desc"},
    {OrderingPolicy::Kind::cheat_loss_desc, "cheat_loss_desc"},
    {OrderingPolicy::Kind::entropy_desc, "entropy_desc"},
    {OrderingPolicy::Kind::margin_conf_asc, "margin_conf_asc"},
    {OrderingPolicy::Kind::least_conf_asc, "least_conf_asc"},
    {OrderingPolicy::Kind::file, "file"},
};

std::vector<std::uint64_t> sorted_ids(const FeatureSet& set) {
  std::vector<std::uint64_t> ids(set.ids().begin(), set.ids().end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Softmax probabilities of head(h(old)) per gallery row.
Matrix gallery_probabilities(const OrderingInputs& in) {
  const Matrix h = predict(in.net->backbone, to_matrix(*in.gallery_old));
  Matrix z = in.head->logits(h);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double peak = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - peak).exp().matrix();
    z.row(i) /= z.row(i).sum();
  }
  return z;
}

void require(bool present, const OrderingPolicy& policy, std::string_view what) {
  if (!present) throw Error("ordering policy " + policy.name() + " requires " + std::string(what));
}

std::vector<std::uint64_t> read_ordering_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ordering file " + path.string());
  std::vector<std::uint64_t> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    try {
      std::size_t used = 0;
      ids.push_back(std::stoull(line, &used));
      if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(line);
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": not an id: \"" + line + "\"");
    }
  }
  return ids;
}

void check_permutation(std::span<const std::uint64_t> ordering, const FeatureSet& gallery) {
  if (ordering.size() != gallery.size()) {
    throw Error("ordering has " + std::to_string(ordering.size()) + " ids, gallery has " +
                std::to_string(gallery.size()));
  }
  std::vector<std::uint64_t> a(ordering.begin(), ordering.end());
  std::sort(a.begin(), a.end());
  if (a != sorted_ids(gallery)) throw Error("ordering is not a permutation of the gallery ids");
}

void check_aligned(const FeatureSet& a, const FeatureSet& b) {
  if (a.size() != b.size() || a.dim() != b.dim()) throw Error("transformed-old and new galleries are misaligned");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.id(i) != b.id(i) || a.label(i) != b.label(i)) {
      throw Error("transformed-old and new galleries disagree at row " + std::to_string(i));
    }
  }
}

double mean_over(std::span<const std::uint8_t> hits, std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  std::size_t total = 0;
  for (auto r : rows) total += hits[r];
  return static_cast<double>(total) / static_cast<double>(rows.size());
}

double map_over(std::span<const std::optional<double>> ap, std::span<const std::size_t> rows) {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto r : rows) {
    if (ap[r]) {
      sum += *ap[r];
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

OrderingPolicy OrderingPolicy::parse(std::string_view text) {
  const auto colon = text.find(':');
  const auto head = text.substr(0, colon);
  const auto arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  for (const auto& p : kPolicyNames) {
    if (p.name != head) continue;
    OrderingPolicy out;
    out.kind = p.kind;
    if (p.kind == Kind::file) {
      if (arg.empty()) throw ConfigError("policies", "file policy needs a path: file:<path>");
      out.path = std::string(arg);
    } else if (p.kind == Kind::random && !arg.empty()) {
      try {
        out.seed = std::stoull(std::string(arg));
      } catch (const std::exception&) {
        throw ConfigError("policies", "bad random seed \"" + std::string(arg) + "\"");
      }
    } else if (!arg.empty()) {
      throw ConfigError("policies", std::string(head) + " takes no argument");
    }
    return out;
  }
  throw ConfigError("policies", "unknown ordering policy \"" + std::string(text) + "\"");
}

std::string OrderingPolicy::name() const {
  for (const auto& p : kPolicyNames) {
    if (p.kind == kind) return std::string(p.name);
  }
  return "unknown";
}

std::vector<std::uint64_t> order_by_score(std::span<const std::uint64_t> ids, std::span<const double> scores,
                                          bool descending) {
  if (ids.size() != scores.size()) throw DimensionError("ids and scores differ in length");
  std::vector<std::size_t> idx(ids.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return descending ? scores[a] > scores[b] : scores[a] < scores[b];
    return ids[a] < ids[b];
  });
  std::vector<std::uint64_t> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(ids[i]);
  return out;
}

std::vector<std::uint64_t> make_ordering(const OrderingPolicy& policy, const OrderingInputs& in) {
  require(in.gallery_old != nullptr, policy, "the old gallery features");
  const FeatureSet& gallery = *in.gallery_old;
  const auto ids = gallery.ids();
  using Kind = OrderingPolicy::Kind;
  switch (policy.kind) {
    case Kind::random: {
      auto out = sorted_ids(gallery);
      Rng rng(policy.seed.value_or(0));
      rng.shuffle(std::span(out));
      return out;
    }
    case Kind::sigma_desc: {
      require(in.net != nullptr, policy, "an alignment net");
      const auto sigma = predict_sigma(*in.net, gallery);
      return order_by_score(ids, sigma, true);
    }
    case Kind::cheat_loss_desc: {
      require(in.net != nullptr, policy, "an alignment net");
      require(in.head != nullptr, policy, "a classifier head");
      require(in.gallery_new != nullptr, policy, "new gallery features");
      PairedFeatureSet pairs{gallery, *in.gallery_new};
      const auto losses = item_losses(*in.net, *in.head, pairs, in.loss);
      return order_by_score(ids, losses.combined, true);
    }
    case Kind::entropy_desc:
    case Kind::margin_conf_asc:
    case Kind::least_conf_asc: {
      require(in.net != nullptr, policy, "an alignment net");
      require(in.head != nullptr, policy, "a classifier head");
      const Matrix p = gallery_probabilities(in);
      std::vector<double> score(gallery.size());
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        auto& s = score[static_cast<std::size_t>(i)];
        if (policy.kind == Kind::entropy_desc) {
          s = 0.0;
          for (Eigen::Index j = 0; j < p.cols(); ++j) {
            const double v = p(i, j);
            if (v > 0.0) s -= v * std::log(v);
          }
        } else {
          double first = 0.0, second = 0.0;
          for (Eigen::Index j = 0; j < p.cols(); ++j) {
            const double v = p(i, j);
            if (v > first) {
              second = first;
              first = v;
            } else if (v > second) {
              second = v;
            }
          }
          s = policy.kind == Kind::margin_conf_asc ? first - second : first;
        }
      }
      return order_by_score(ids, score, policy.kind == Kind::entropy_desc);
    }
    case Kind::file: {
      auto out = read_ordering_file(policy.path);
      check_permutation(out, gallery);
      return out;
    }
  }
  throw Error("unhandled ordering policy");
}

std::vector<double> BackfillPlan::uniform_grid(std::size_t points) {
  if (points < 2) throw ConfigError("alpha_grid_size", "needs at least 2 points");
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) grid[i] = static_cast<double>(i) / static_cast<double>(points - 1);
  return grid;
}

void BackfillPlan::validate() const {
  if (alpha_grid.size() < 2 || alpha_grid.front() != 0.0 || alpha_grid.back() != 1.0) {
    throw Error("alpha grid must include 0 and 1 as endpoints");
  }
  for (std::size_t i = 1; i < alpha_grid.size(); ++i) {
    if (!(alpha_grid[i] > alpha_grid[i - 1])) throw Error("alpha grid must be strictly increasing");
  }
  std::vector<std::uint64_t> ids(ordering);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw Error("ordering repeats an id");
}

std::size_t backfill_count(double alpha, std::size_t n) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha must lie in [0, 1]");
  const double x = alpha * static_cast<double>(n);
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, x)) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::floor(x));
}

FeatureSet partial_gallery(const BackfillPlan& plan, double alpha, const FeatureSet& transformed_old,
                           const FeatureSet& new_gallery) {
  check_aligned(transformed_old, new_gallery);
  check_permutation(plan.ordering, transformed_old);
  const std::size_t n = transformed_old.size();
  const std::size_t count = backfill_count(alpha, n);
  std::unordered_map<std::uint64_t, std::size_t> row_of;
  row_of.reserve(n);
  for (std::size_t i = 0; i < n; ++i) row_of.emplace(transformed_old.id(i), i);
  std::vector<char> fresh(n, 0);
  for (std::size_t r = 0; r < count; ++r) fresh[row_of.at(plan.ordering[r])] = 1;

  FeatureSet out(transformed_old.dim(), transformed_old.role());
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<std::int32_t> sg;
    if (transformed_old.has_subgroups()) sg = transformed_old.subgroup(i);
    out.append(transformed_old.id(i), transformed_old.label(i), fresh[i] ? new_gallery.row(i) : transformed_old.row(i),
               sg);
  }
  return out;
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::cmc_top1: return "cmc_top1";
    case Metric::cmc_top5: return "cmc_top5";
    case Metric::map: return "map";
  }
  return "unknown";
}

Metric parse_metric(std::string_view name) {
  if (name == "cmc_top1") return Metric::cmc_top1;
  if (name == "cmc_top5") return Metric::cmc_top5;
  if (name == "map") return Metric::map;
  throw ConfigError("metrics", "unknown metric \"" + std::string(name) + "\"");
}

FlipCounts count_flips(std::span<const std::uint8_t> baseline_correct, std::span<const std::uint8_t> current_correct) {
  if (baseline_correct.size() != current_correct.size()) {
    throw DimensionError("flip inputs cover different query sets");
  }
  FlipCounts f;
  for (std::size_t i = 0; i < baseline_correct.size(); ++i) {
    if (!baseline_correct[i] && current_correct[i]) ++f.positive;
    if (baseline_correct[i] && !current_correct[i]) ++f.negative;
  }
  return f;
}

Evaluation evaluate(const FeatureSet& gallery, const FeatureSet& query, std::span<const Metric> metrics,
                    DistanceKind distance, unsigned workers) {
  RankOptions opts;
  opts.distance = distance;
  opts.exclude_same_id = true;
  opts.workers = workers;
  const auto res = rank(gallery, query, opts);
  const auto gl = gallery.labels();
  const auto ql = query.labels();
  Evaluation ev;
  ev.top1 = hits_at_k(res, gl, ql, 1);
  ev.top5 = hits_at_k(res, gl, ql, std::min<std::size_t>(5, res.depth));
  const bool want_map = std::find(metrics.begin(), metrics.end(), Metric::map) != metrics.end();
  if (want_map) ev.ap = average_precisions(res, gl, ql);
  for (auto m : metrics) {
    switch (m) {
      case Metric::cmc_top1: ev.values.push_back(cmc_top_k(res, gl, ql, 1)); break;
      case Metric::cmc_top5: ev.values.push_back(cmc_top_k(res, gl, ql, std::min<std::size_t>(5, res.depth))); break;
      case Metric::map: {
        const auto s = mean_average_precision(res, gl, ql);
        ev.values.push_back(s.value);
        ev.map_skipped = s.skipped;
        break;
      }
    }
  }
  return ev;
}

std::size_t BackfillReport::metric_index(Metric m) const {
  const auto it = std::find(metrics.begin(), metrics.end(), m);
  if (it == metrics.end()) throw Error("metric " + std::string(to_string(m)) + " not in report");
  return static_cast<std::size_t>(it - metrics.begin());
}

BackfillReport backfill_curve(const BackfillPlan& plan, const FeatureSet& transformed_old,
                              const FeatureSet& new_gallery, const FeatureSet& new_query,
                              std::span<const Metric> metrics, DistanceKind distance, unsigned workers) {
  plan.validate();
  check_aligned(transformed_old, new_gallery);
  check_permutation(plan.ordering, transformed_old);
  if (metrics.empty()) throw Error("no metrics requested");

  const std::size_t n = transformed_old.size();
  const std::size_t points = plan.alpha_grid.size();
  std::vector<Evaluation> evals(points);
  std::vector<std::size_t> counts(points);
  parallel_for(points, workers, [&](std::size_t i) {
    counts[i] = backfill_count(plan.alpha_grid[i], n);
    const auto gallery = partial_gallery(plan, plan.alpha_grid[i], transformed_old, new_gallery);
    evals[i] = evaluate(gallery, new_query, metrics, distance);
  });

  // Subgroup bookkeeping: query rows and gallery membership per tag.
  const bool grouped = new_query.has_subgroups() && transformed_old.has_subgroups();
  std::map<std::int32_t, std::vector<std::size_t>> query_rows;
  std::map<std::int32_t, std::size_t> gallery_count;
  std::unordered_map<std::uint64_t, std::int32_t> tag_of;
  if (grouped) {
    for (std::size_t q = 0; q < new_query.size(); ++q) query_rows[new_query.subgroup(q)].push_back(q);
    for (std::size_t i = 0; i < n; ++i) {
      ++gallery_count[transformed_old.subgroup(i)];
      tag_of.emplace(transformed_old.id(i), transformed_old.subgroup(i));
      query_rows.try_emplace(transformed_old.subgroup(i));
    }
  }

  BackfillReport report;
  report.metrics.assign(metrics.begin(), metrics.end());
  report.num_queries = new_query.size();
  report.area.assign(metrics.size(), 0.0);
  std::map<std::int32_t, std::size_t> backfilled_by_tag;
  std::size_t consumed = 0;
  for (std::size_t i = 0; i < points; ++i) {
    const auto& ev = evals[i];
    CurvePoint p;
    p.alpha = plan.alpha_grid[i];
    p.backfilled = counts[i];
    p.values = ev.values;
    p.top1_hits = static_cast<std::size_t>(std::accumulate(ev.top1.begin(), ev.top1.end(), std::size_t{0}));
    p.flips = count_flips(evals.front().top1, ev.top1);
    if (grouped) {
      for (; consumed < counts[i]; ++consumed) ++backfilled_by_tag[tag_of.at(plan.ordering[consumed])];
      for (const auto& [tag, rows] : query_rows) {
        SubgroupPoint s;
        s.tag = tag;
        s.queries = rows.size();
        s.gallery_items = gallery_count.count(tag) ? gallery_count.at(tag) : 0;
        s.backfilled = backfilled_by_tag.count(tag) ? backfilled_by_tag.at(tag) : 0;
        for (auto m : metrics) {
          s.values.push_back(m == Metric::cmc_top1   ? mean_over(ev.top1, rows)
                             : m == Metric::cmc_top5 ? mean_over(ev.top5, rows)
                                                     : map_over(ev.ap, rows));
        }
        std::vector<std::uint8_t> base, cur;
        for (auto r : rows) {
          base.push_back(evals.front().top1[r]);
          cur.push_back(ev.top1[r]);
          s.top1_hits += ev.top1[r];
        }
        s.flips = count_flips(base, cur);
        p.subgroups.push_back(std::move(s));
      }
    }
    for (std::size_t m = 0; m < metrics.size(); ++m) report.area[m] += p.values[m];
    report.points.push_back(std::move(p));
  }
  for (auto& a : report.area) a /= static_cast<double>(points);
  return report;
}

GapCurve subgroup_gap_curve(const BackfillReport& report, Metric metric) {
  if (report.points.empty() || report.points.front().subgroups.size() < 2) {
    throw Error("subgroup gap needs subgroup tags on gallery and queries (at least two subgroups)");
  }
  const auto mi = report.metric_index(metric);
  const auto& groups = report.points.front().subgroups;
  std::size_t minority = 0, majority = 0, total = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    total += groups[g].gallery_items;
    if (groups[g].gallery_items < groups[minority].gallery_items) minority = g;
    if (groups[g].gallery_items > groups[majority].gallery_items) majority = g;
  }
  GapCurve out;
  out.metric = metric;
  out.minority_tag = groups[minority].tag;
  out.majority_tag = groups[majority].tag;
  out.minority_population_share =
      total == 0 ? 0.0 : static_cast<double>(groups[minority].gallery_items) / static_cast<double>(total);
  for (const auto& p : report.points) {
    const auto& lo = p.subgroups[minority];
    const auto& hi = p.subgroups[majority];
    GapPoint g;
    g.alpha = p.alpha;
    g.minority_value = lo.values[mi];
    g.majority_value = hi.values[mi];
    g.gap = g.majority_value - g.minority_value;
    auto frac = [](const SubgroupPoint& s) {
      return s.gallery_items == 0 ? 0.0 : static_cast<double>(s.backfilled) / static_cast<double>(s.gallery_items);
    };
    g.minority_backfilled_fraction = frac(lo);
    g.majority_backfilled_fraction = frac(hi);
    g.minority_share_of_backfilled =
        p.backfilled == 0 ? 0.0 : static_cast<double>(lo.backfilled) / static_cast<double>(p.backfilled);
    out.points.push_back(g);
  }
  return out;
}

}  // namespace bfill
