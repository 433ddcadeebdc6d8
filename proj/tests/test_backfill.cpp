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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "bfill/alignment.hpp"
#include "bfill/backfill.hpp"
#include "bfill/error.hpp"
#include "bfill/kendall.hpp"
#include "bfill/world.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bfill;

namespace {

std::vector<std::uint64_t> iota_ids(std::size_t n) {
  std::vector<std::uint64_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

struct Trained {
  World world;
  ClassifierHead head;
  AlignNet net;
};

Trained trained_world(SyntheticWorldConfig wc, int epochs = 15) {
  Trained t;
  t.world = generate_world(wc);
  t.head = train_head(t.world.train.new_features,
                      TrainConfig{.epochs = 30, .batch_size = 128, .base_lr = 1e-2, .warmup_epochs = 1, .seed = wc.seed, .loss = {}});
  t.net = train_alignment(t.world.train, t.head,
                          TrainConfig{.epochs = epochs, .batch_size = 128, .base_lr = 2e-3, .warmup_epochs = 1, .seed = wc.seed, .loss = {}});
  return t;
}

SyntheticWorldConfig small_world(std::uint64_t seed) {
  SyntheticWorldConfig wc;
  wc.num_classes = 20;
  wc.dim = 16;
  wc.latent_dim = 8;
  wc.train_per_class = 50;
  wc.gallery_per_class = 20;
  wc.query_per_class = 5;
  wc.seed = seed;
  return wc;
}

OrderingInputs inputs_for(const Trained& t) {
  OrderingInputs in;
  in.gallery_old = &t.world.gallery.old_features;
  in.gallery_new = &t.world.gallery.new_features;
  in.net = &t.net;
  in.head = &t.head;
  return in;
}

const std::vector<Metric> kAllMetrics{Metric::cmc_top1, Metric::cmc_top5, Metric::map};

}  // namespace

TEST_CASE("kendall tau") {
  const auto a = iota_ids(6);
  auto rev = a;
  std::reverse(rev.begin(), rev.end());
  CHECK(kendall_tau(a, a) == 1.0);
  CHECK(kendall_tau(a, rev) == -1.0);
  const std::vector<std::uint64_t> other{0, 1, 2, 3, 4, 99};
  CHECK_THROWS(kendall_tau(a, other));
  const std::vector<std::uint64_t> one{3};
  CHECK_THROWS(kendall_tau(one, one));
  const std::uint32_t inv[] = {3, 1, 2, 0};
  CHECK(count_inversions(inv) == 5);

  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    auto x = iota_ids(n), y = iota_ids(n);
    for (auto& id : x) id = id * 7 + 3;
    y = x;
    rng.shuffle(std::span(x));
    rng.shuffle(std::span(y));
    const double tau = kendall_tau(x, y);
    CHECK(tau == oracle::kendall(x, y));
    auto y_rev = y;
    std::reverse(y_rev.begin(), y_rev.end());
    CHECK(kendall_tau(x, y_rev) == -tau);
  }
  const auto pairs = rank_pairs(std::vector<std::uint64_t>{5, 6, 7}, std::vector<std::uint64_t>{7, 5, 6});
  CHECK(pairs[0].id == 5);
  CHECK(pairs[0].rank_b == 1);
  CHECK(pairs[2].rank_a == 2);
  CHECK(pairs[2].rank_b == 0);
}

TEST_CASE("backfill counts") {
  CHECK(backfill_count(0.25, 10) == 2);
  CHECK(backfill_count(0.0, 10) == 0);
  CHECK(backfill_count(1.0, 10) == 10);
  CHECK(backfill_count(0.15, 20) == 3);
  CHECK(backfill_count(0.7, 10) == 7);
  const auto grid = BackfillPlan::uniform_grid(21);
  CHECK(grid.size() == 21);
  CHECK(grid.front() == 0.0);
  CHECK(grid.back() == 1.0);
  for (std::size_t i = 0; i < 21; ++i) CHECK(backfill_count(grid[i], 2000) == 100 * i);
}

TEST_CASE("flip counting") {
  const std::vector<std::uint8_t> base{1, 0, 1, 0}, same = base, cur{0, 1, 1, 1};
  CHECK(count_flips(base, same) == FlipCounts{0, 0});
  CHECK(count_flips(std::vector<std::uint8_t>{1, 0}, std::vector<std::uint8_t>{0, 1}) == FlipCounts{1, 1});
  CHECK(count_flips(base, cur) == FlipCounts{2, 1});
  CHECK_THROWS(count_flips(base, std::vector<std::uint8_t>{1}));
}

TEST_CASE("ordering by score") {
  const std::vector<std::uint64_t> ids{10, 11};
  CHECK(order_by_score(ids, std::vector<double>{1.0, 5.0}, true) == std::vector<std::uint64_t>{11, 10});
  CHECK(order_by_score(ids, std::vector<double>{5.0, 1.0}, true) == std::vector<std::uint64_t>{10, 11});
  const std::vector<std::uint64_t> shuffled{9, 2, 7, 4};
  CHECK(order_by_score(shuffled, std::vector<double>(4, 0.3), false) == std::vector<std::uint64_t>{2, 4, 7, 9});
}

TEST_CASE("policy parsing") {
  CHECK(OrderingPolicy::parse("random:7").seed == 7u);
  CHECK_FALSE(OrderingPolicy::parse("random").seed.has_value());
  CHECK(OrderingPolicy::parse("sigma_desc").kind == OrderingPolicy::Kind::sigma_desc);
  CHECK(OrderingPolicy::parse("file:ids.txt").path == "ids.txt");
  CHECK(OrderingPolicy::parse("margin_conf_asc").name() == "margin_conf_asc");
  CHECK_THROWS_AS(OrderingPolicy::parse("fastest"), ConfigError);
  CHECK_THROWS_AS(OrderingPolicy::parse("random:x"), ConfigError);
}

TEST_CASE("orderings from hand-built models") {
  // Identity map; sigma head reads the first coordinate.
  AlignNet net;
  net.backbone = DenseNet({DenseLayer{Matrix::Identity(2, 2), Vector::Zero(2), Activation::identity}});
  net.sigma_head = DenseLayer{Matrix{{1.0, 0.0}}, Vector::Zero(1), Activation::identity};
  ClassifierHead flat{Matrix::Zero(3, 2), Vector::Zero(3)};
  FeatureSet gallery(2);
  const float a[] = {std::log(1.0f), 0.0f}, b[] = {std::log(5.0f), 0.0f}, c[] = {0.2f, 0.0f};
  gallery.append(30, 0, a);
  gallery.append(31, 1, b);
  gallery.append(32, 2, c);
  OrderingInputs in;
  in.gallery_old = &gallery;
  in.net = &net;
  in.head = &flat;
  CHECK(make_ordering(OrderingPolicy::parse("sigma_desc"), in) == std::vector<std::uint64_t>{31, 32, 30});
  // Uniform softmax everywhere: every confidence policy reduces to the id tie-break.
  for (const char* p : {"entropy_desc", "margin_conf_asc", "least_conf_asc"}) {
    CHECK(make_ordering(OrderingPolicy::parse(p), in) == std::vector<std::uint64_t>{30, 31, 32});
  }
  CHECK_THROWS(make_ordering(OrderingPolicy::parse("cheat_loss_desc"), in));
  OrderingInputs bare;
  bare.gallery_old = &gallery;
  CHECK_THROWS(make_ordering(OrderingPolicy::parse("sigma_desc"), bare));
  const auto r1 = make_ordering(OrderingPolicy::parse("random:3"), bare);
  CHECK(r1 == make_ordering(OrderingPolicy::parse("random:3"), bare));
  auto sorted = r1;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<std::uint64_t>{30, 31, 32});

  const auto dir = std::filesystem::path(BFILL_SCRATCH_DIR);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "order.txt") << "32\n30\n31\n";
  CHECK(make_ordering(OrderingPolicy::parse("file:" + (dir / "order.txt").string()), bare) ==
        std::vector<std::uint64_t>{32, 30, 31});
  std::ofstream(dir / "short.txt") << "32\n30\n";
  CHECK_THROWS(make_ordering(OrderingPolicy::parse("file:" + (dir / "short.txt").string()), bare));
}

TEST_CASE("partial galleries") {
  Rng rng(2);
  const auto old_t = oracle::random_set(rng, 10, 3, 2, 0);
  FeatureSet fresh(3);
  for (std::size_t i = 0; i < 10; ++i) {
    const std::vector<float> v{static_cast<float>(i), 100.0f, -1.0f};
    fresh.append(old_t.id(i), old_t.label(i), v);
  }
  std::vector<std::uint64_t> order{7, 2, 9, 0, 1, 3, 4, 5, 6, 8};
  const BackfillPlan plan{order, BackfillPlan::uniform_grid(5)};
  CHECK(partial_gallery(plan, 0.0, old_t, fresh) == old_t);
  CHECK(partial_gallery(plan, 1.0, old_t, fresh) == fresh);
  const auto quarter = partial_gallery(plan, 0.25, old_t, fresh);
  std::size_t replaced = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const bool is_new = quarter.row(i)[1] == 100.0f;
    replaced += is_new;
    CHECK(is_new == (old_t.id(i) == 7 || old_t.id(i) == 2));
    CHECK(quarter.id(i) == old_t.id(i));
  }
  CHECK(replaced == 2);
  order[0] = 2;  // duplicate id: not a permutation
  CHECK_THROWS(partial_gallery(BackfillPlan{order, BackfillPlan::uniform_grid(5)}, 0.5, old_t, fresh));
}

TEST_CASE("identical old and new features give a flat curve") {
  Rng rng(3);
  const auto gallery = oracle::random_set(rng, 80, 4, 5, 0);
  const auto query = oracle::random_set(rng, 20, 4, 5, 500);
  const BackfillPlan plan{iota_ids(80), BackfillPlan::uniform_grid(11)};
  const auto rep = backfill_curve(plan, gallery, gallery, query, kAllMetrics, DistanceKind::l2);
  const auto single = evaluate(gallery, query, kAllMetrics, DistanceKind::l2);
  for (const auto& p : rep.points) {
    CHECK(p.values == single.values);
    CHECK(p.flips == FlipCounts{0, 0});
  }
  for (std::size_t m = 0; m < kAllMetrics.size(); ++m) CHECK(rep.area[m] == doctest::Approx(single.values[m]).epsilon(1e-14));
}

TEST_CASE("curves on a trained world") {
  const Trained t = trained_world(small_world(21));
  const auto in = inputs_for(t);
  const FeatureSet transformed = transform(t.net, t.world.gallery.old_features);
  const auto& query = t.world.query.new_features;
  const auto cross = evaluate(transformed, query, kAllMetrics, DistanceKind::l2);
  const auto single = evaluate(t.world.gallery.new_features, query, kAllMetrics, DistanceKind::l2);
  std::vector<double> last_values;
  for (const char* name : {"random:1", "sigma_desc", "cheat_loss_desc", "entropy_desc", "margin_conf_asc", "least_conf_asc"}) {
    const BackfillPlan plan{make_ordering(OrderingPolicy::parse(name), in), BackfillPlan::uniform_grid(21)};
    const auto rep = backfill_curve(plan, transformed, t.world.gallery.new_features, query, kAllMetrics, DistanceKind::l2, 2);
    CHECK(rep.points.front().values == cross.values);
    CHECK(rep.points.back().values == single.values);
    if (!last_values.empty()) CHECK(rep.points.back().values == last_values);
    last_values = rep.points.back().values;
    const auto top1 = rep.metric_index(Metric::cmc_top1);
    const double nq = static_cast<double>(rep.num_queries);
    double mean = 0.0;
    for (const auto& p : rep.points) {
      CHECK(static_cast<long>(p.top1_hits) - static_cast<long>(rep.points.front().top1_hits) ==
            static_cast<long>(p.flips.positive) - static_cast<long>(p.flips.negative));
      CHECK(std::abs((p.values[top1] - rep.points.front().values[top1]) -
                     (static_cast<double>(p.flips.positive) - static_cast<double>(p.flips.negative)) / nq) < 1e-12);
      mean += p.values[rep.metric_index(Metric::map)];
    }
    CHECK(rep.area[rep.metric_index(Metric::map)] == doctest::Approx(mean / 21.0).epsilon(1e-14));
  }
  // The true-loss ordering and the predicted-sigma ordering agree overall.
  const auto sigma = make_ordering(OrderingPolicy::parse("sigma_desc"), in);
  const auto cheat = make_ordering(OrderingPolicy::parse("cheat_loss_desc"), in);
  CHECK(kendall_tau(sigma, cheat) > 0.0);
}

TEST_CASE("area respects pointwise dominance") {
  Rng rng(4);
  const auto fresh = oracle::random_set(rng, 60, 3, 3, 0);
  FeatureSet noisy(3);
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    std::vector<float> v(fresh.row(i).begin(), fresh.row(i).end());
    for (auto& x : v) x += static_cast<float>(3.0 * rng.normal());
    noisy.append(fresh.id(i), fresh.label(i), v);
  }
  const auto query = oracle::random_set(rng, 30, 3, 3, 100);
  const BackfillPlan plan{iota_ids(60), BackfillPlan::uniform_grid(6)};
  const auto low = backfill_curve(plan, noisy, fresh, query, kAllMetrics, DistanceKind::l2);
  const auto high = backfill_curve(plan, fresh, fresh, query, kAllMetrics, DistanceKind::l2);
  for (std::size_t m = 0; m < kAllMetrics.size(); ++m) {
    bool dominates = true;
    for (std::size_t i = 0; i < low.points.size(); ++i) dominates = dominates && high.points[i].values[m] >= low.points[i].values[m];
    if (dominates) CHECK(high.area[m] >= low.area[m]);
  }
}

TEST_CASE("subgroup gaps") {
  SUBCASE("symmetric world has small gaps") {
    auto wc = small_world(5);
    wc.subgroups = SubgroupSpec{std::vector<std::int32_t>(20, 0), {1.0, 1.0}};
    for (int c = 10; c < 20; ++c) wc.subgroups->class_subgroup[static_cast<std::size_t>(c)] = 1;
    wc.old_class_fraction = 1.0;
    const Trained t = trained_world(wc, 8);
    const FeatureSet transformed = transform(t.net, t.world.gallery.old_features);
    const BackfillPlan plan{make_ordering(OrderingPolicy::parse("random:2"), inputs_for(t)), BackfillPlan::uniform_grid(11)};
    const auto rep = backfill_curve(plan, transformed, t.world.gallery.new_features, t.world.query.new_features,
                                    kAllMetrics, DistanceKind::l2);
    const auto gap = subgroup_gap_curve(rep, Metric::cmc_top1);
    CHECK(gap.minority_population_share == doctest::Approx(0.5));
    for (const auto& p : gap.points) CHECK(std::abs(p.gap) <= 0.1);
  }
  SUBCASE("sigma ordering backfills a noisier minority first") {
    // Small worlds are noisy; ask for a majority of seeds at a quarter backfill.
    int ahead = 0;
    for (std::uint64_t seed = 6; seed < 10; ++seed) {
      auto wc = small_world(seed);
      wc.num_classes = 22;
      wc.old_noise_sigma = 0.6;
      wc.old_class_fraction = 1.0;
      wc.subgroups = SubgroupSpec{std::vector<std::int32_t>(22, 1), {2.0, 1.0}};
      wc.subgroups->class_subgroup[0] = wc.subgroups->class_subgroup[1] = 0;
      const Trained t = trained_world(wc, 40);
      const FeatureSet transformed = transform(t.net, t.world.gallery.old_features);
      const BackfillPlan plan{make_ordering(OrderingPolicy::parse("sigma_desc"), inputs_for(t)), BackfillPlan::uniform_grid(5)};
      const auto rep = backfill_curve(plan, transformed, t.world.gallery.new_features, t.world.query.new_features,
                                      kAllMetrics, DistanceKind::l2);
      const auto gap = subgroup_gap_curve(rep, Metric::cmc_top1);
      CHECK(gap.minority_tag == 0);
      const auto& quarter = gap.points[1];
      REQUIRE(quarter.alpha == 0.25);
      ahead += quarter.minority_backfilled_fraction > quarter.majority_backfilled_fraction;
    }
    CHECK(ahead >= 3);
  }
  SUBCASE("untagged reports are rejected") {
    Rng rng(7);
    const auto g = oracle::random_set(rng, 20, 2, 2, 0);
    const auto q = oracle::random_set(rng, 5, 2, 2, 100);
    const auto rep = backfill_curve(BackfillPlan{iota_ids(20), BackfillPlan::uniform_grid(3)}, g, g, q, kAllMetrics, DistanceKind::l2);
    CHECK_THROWS(subgroup_gap_curve(rep, Metric::cmc_top1));
  }
}
