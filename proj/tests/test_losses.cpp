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

#include <cmath>
#include <vector>

#include "bfill/error.hpp"
#include "bfill/losses.hpp"
#include "bfill/rng.hpp"
#include "doctest.h"

using namespace bfill;

namespace {

std::vector<double> randn(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

// Central differences of f at x, coordinate by coordinate.
template <typename F>
std::vector<double> numeric_grad(F f, std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double max_abs_diff(const std::vector<double>& a, const Eigen::VectorXd& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b(static_cast<Eigen::Index>(i))));
  return m;
}

// Smoothed cross entropy written directly from its definition.
double reference_disc(const std::vector<double>& logits, int label, double eps) {
  const double k = static_cast<double>(logits.size());
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  double loss = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double target = (static_cast<int>(j) == label ? 1.0 - eps : 0.0) + eps / k;
    loss -= target * (logits[j] - std::log(z));
  }
  return loss;
}

}  // namespace

TEST_CASE("l2 loss") {
  const std::vector<double> h{0.0, 0.0}, t{3.0, 4.0};
  const auto r = loss_l2(h, t);
  CHECK(r.value == 25.0);
  CHECK(r.grad(0) == -6.0);
  CHECK(r.grad(1) == -8.0);
  const auto same = loss_l2(t, t);
  CHECK(same.value == 0.0);
  CHECK(same.grad.isZero(0.0));
  const std::vector<double> three{1, 2, 3};
  CHECK_THROWS_AS(loss_l2(three, t), DimensionError);

  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = randn(rng, 6), b = randn(rng, 6);
    const auto g = numeric_grad([&](const std::vector<double>& x) { return loss_l2(x, b).value; }, a);
    CHECK(max_abs_diff(g, loss_l2(a, b).grad) < 1e-8);
    CHECK(loss_l2(a, b).value > 0.0);
  }
}

TEST_CASE("discriminative loss") {
  for (int k : {2, 5, 50}) {
    const std::vector<double> uniform(static_cast<std::size_t>(k), 0.7);
    for (double eps : {0.0, 0.1, 0.5}) CHECK(loss_disc(uniform, 1, eps).value == doctest::Approx(std::log(k)).epsilon(1e-14));
  }
  const std::vector<double> sharp{10.0, -10.0};
  const double softplus = std::log1p(std::exp(-20.0));
  CHECK(loss_disc(sharp, 0, 0.0).value == doctest::Approx(softplus).epsilon(1e-9));
  CHECK(loss_disc(sharp, 0, 0.0).value == doctest::Approx(2.06e-9).epsilon(1e-2));
  CHECK_THROWS(loss_disc(sharp, 2, 0.0));
  CHECK_THROWS(loss_disc(sharp, -1, 0.0));

  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto logits = randn(rng, 7, 2.0);
    const int label = static_cast<int>(rng.below(7));
    const double eps = rng.uniform(0.0, 0.9);
    const auto r = loss_disc(logits, label, eps);
    CHECK(r.value == doctest::Approx(reference_disc(logits, label, eps)).epsilon(1e-12));
    const auto g = numeric_grad([&](const std::vector<double>& x) { return loss_disc(x, label, eps).value; }, logits);
    CHECK(max_abs_diff(g, r.grad) < 1e-8);
  }
}

TEST_CASE("discriminative loss is stable for huge logits") {
  const std::vector<double> big{1e4, -1e4, 5e3};
  const auto r = loss_disc(big, 1, 0.1);
  CHECK(std::isfinite(r.value));
  CHECK(r.grad.allFinite());
  const auto ok = loss_disc(big, 0, 0.0);
  CHECK(ok.value == doctest::Approx(0.0));
}

TEST_CASE("combined loss") {
  LossConfig cfg;
  const std::vector<double> h{0.5, -1.0, 2.0}, logits(4, 0.0);
  const auto perfect = loss_combined(h, h, logits, 2, cfg);
  CHECK(perfect.value == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = randn(rng, 5), b = randn(rng, 5), z = randn(rng, 6);
    const int label = static_cast<int>(rng.below(6));
    cfg.label_smoothing_eps = rng.uniform(0.0, 0.5);
    cfg.kind = LossKind::l2_plus_disc;
    const auto c = loss_combined(a, b, z, label, cfg);
    const auto l2 = loss_l2(a, b);
    const auto disc = loss_disc(z, label, cfg.label_smoothing_eps);
    CHECK(std::abs(c.value - (l2.value + disc.value)) < 1e-12);
    CHECK((c.grad_h - l2.grad).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((c.grad_logits - disc.grad).cwiseAbs().maxCoeff() < 1e-12);

    cfg.kind = LossKind::l2;
    const auto only = loss_combined(a, b, z, label, cfg);
    CHECK(only.value == l2.value);
    CHECK(only.grad_h == l2.grad);
    CHECK(only.grad_logits.isZero(0.0));

    cfg.kind = LossKind::disc;
    const auto d = loss_combined(a, b, z, label, cfg);
    CHECK(d.value == disc.value);
    CHECK(d.grad_h.isZero(0.0));
  }
}

TEST_CASE("uncertainty weighting") {
  const auto at_zero = loss_uncertain(3.0, 0.0, 0.25);
  CHECK(at_zero.value == 3.0);
  CHECK(at_zero.d_log_var == doctest::Approx(4.0 - 3.0));
  CHECK(at_zero.d_base == 1.0);

  // Stationary where sigma^2 = lambda * base.
  const double base = 2.5, lambda = 0.2;
  const double s_star = std::log(lambda * base);
  CHECK(std::abs(loss_uncertain(base, s_star, lambda).d_log_var) < 1e-14);
  CHECK(loss_uncertain(base, s_star - 0.5, lambda).d_log_var < 0.0);
  CHECK(loss_uncertain(base, s_star + 0.5, lambda).d_log_var > 0.0);

  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const double b = rng.uniform(0.0, 10.0), s = rng.uniform(-3.0, 3.0), lam = rng.uniform(0.01, 2.0);
    const auto u = loss_uncertain(b, s, lam);
    const double h = 1e-5;
    const double db = (loss_uncertain(b + h, s, lam).value - loss_uncertain(b - h, s, lam).value) / (2 * h);
    const double ds = (loss_uncertain(b, s + h, lam).value - loss_uncertain(b, s - h, lam).value) / (2 * h);
    CHECK(std::abs(db - u.d_base) < 1e-8);
    CHECK(std::abs(ds - u.d_log_var) < 1e-8);
  }
}

TEST_CASE("loss config") {
  LossConfig cfg;
  CHECK(cfg.lambda_for(32) == doctest::Approx(1.0 / 32));
  cfg.lambda = 0.5;
  CHECK(cfg.lambda_for(32) == 0.5);
  cfg.lambda = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = LossConfig{};
  cfg.label_smoothing_eps = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_loss_kind("l2_plus_disc") == LossKind::l2_plus_disc);
  CHECK(to_string(LossKind::disc) == "disc");
  CHECK_THROWS_AS(parse_loss_kind("huber"), ConfigError);
}
